//! Cross-modal fusion of trajectory, instruction, and observation tokens.
//!
//! Each fusion layer first cross-attends the trajectory tokens over the
//! instruction, then self-attends over the concatenation of observation and
//! trajectory tokens (observation rows first). The state embedding S_t is
//! the final representation of the most recent trajectory token.

use rand::Rng;

use crate::encoder::blocks::{
    apply_layer_norm, init_attention, init_layer_norm, multi_head_attention, EncoderConfig,
};
use crate::encoder::embed::{type_row, TYPE_OBSERVATION};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamSet};

/// Inserts the cross-modal fusion layers under `enc.cross.`.
pub fn init_cross_params(
    params: &mut ParamSet,
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    for layer in 0..cfg.layers {
        let prefix = format!("enc.cross.l{layer}");
        init_layer_norm(params, &format!("{prefix}.ln_c"), cfg.d_model)?;
        init_attention(params, &format!("{prefix}.cross"), cfg.d_model, rng)?;
        init_layer_norm(params, &format!("{prefix}.ln_s"), cfg.d_model)?;
        init_attention(params, &format!("{prefix}.self"), cfg.d_model, rng)?;
    }
    Ok(())
}

/// Fuses the three token streams and returns S_t as a `[1, d_model]` row.
///
/// `instr_mask`, when given, holds one keep-flag per instruction token;
/// masking every token leaves the cross-attention rows degenerate and is
/// rejected. The observation type row is added here so callers pass the raw
/// panorama encoding.
pub fn cross_modal(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    trajectory: NodeId,
    instruction: NodeId,
    observations: NodeId,
    instr_mask: Option<&[bool]>,
) -> Result<NodeId> {
    let n_traj = g.shape(trajectory)[0];
    let n_instr = g.shape(instruction)[0];
    let n_obs = g.shape(observations)[0];
    if let Some(mask) = instr_mask {
        if mask.len() != n_instr {
            return Err(Error::Parameter(format!(
                "instruction mask covers {} tokens but the instruction has {}",
                mask.len(),
                n_instr
            )));
        }
    }
    let expanded: Option<Vec<bool>> =
        instr_mask.map(|mask| mask.iter().cycle().take(n_traj * n_instr).copied().collect());
    let ty = type_row(g, params, TYPE_OBSERVATION)?;
    let mut obs = g.add_row(observations, ty)?;
    let mut traj = trajectory;
    for layer in 0..cfg.layers {
        let prefix = format!("enc.cross.l{layer}");
        let q = apply_layer_norm(g, params, &format!("{prefix}.ln_c"), traj)?;
        let attn = multi_head_attention(
            g,
            params,
            &format!("{prefix}.cross"),
            cfg.heads,
            q,
            instruction,
            expanded.as_deref(),
        )?;
        traj = g.add(traj, attn)?;
        let cat = g.concat_rows(&[obs, traj])?;
        let normed = apply_layer_norm(g, params, &format!("{prefix}.ln_s"), cat)?;
        let attn = multi_head_attention(
            g,
            params,
            &format!("{prefix}.self"),
            cfg.heads,
            normed,
            normed,
            None,
        )?;
        let cat = g.add(cat, attn)?;
        obs = g.slice_rows(cat, 0, n_obs)?;
        traj = g.slice_rows(cat, n_obs, n_obs + n_traj)?;
    }
    g.slice_rows(traj, n_traj - 1, n_traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::blocks::reference::*;
    use crate::encoder::embed::init_embedding_params;
    use crate::rng::stream;

    fn small_cfg(layers: usize) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            heads: 1,
            layers,
            ffn_hidden: 16,
            vocab_size: 12,
            max_tokens: 6,
            max_steps: 8,
            history: 3,
        }
    }

    fn test_params(cfg: &EncoderConfig, seed: u64) -> ParamSet {
        let mut params = ParamSet::new();
        let mut rng = stream(seed, "cross-test", 0);
        init_embedding_params(&mut params, cfg, &mut rng).unwrap();
        init_cross_params(&mut params, cfg, &mut rng).unwrap();
        params
    }

    fn random_input(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> NodeId {
        let mut rng = stream(seed, "cross-input", 0);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
            .collect();
        g.input(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn zero_value_projections_leave_the_trajectory_stream_untouched() {
        let cfg = small_cfg(2);
        let mut params = test_params(&cfg, 1);
        for layer in 0..cfg.layers {
            for side in ["cross", "self"] {
                let name = format!("enc.cross.l{layer}.{side}.wv");
                params.get_mut(&name).unwrap().data_mut().fill(0.0);
            }
        }
        let mut g = Graph::new();
        let traj = random_input(&mut g, cfg.history, cfg.d_model, 2);
        let instr = random_input(&mut g, 4, cfg.d_model, 3);
        let obs = random_input(&mut g, 12, cfg.d_model, 4);
        let s_t = cross_modal(&mut g, &params, &cfg, traj, instr, obs, None).unwrap();
        assert_eq!(g.shape(s_t), &[1, cfg.d_model]);
        let last_row = &g.value(traj)[(cfg.history - 1) * cfg.d_model..];
        assert_eq!(g.value(s_t), last_row);
    }

    #[test]
    fn masking_every_instruction_token_is_rejected() {
        let cfg = small_cfg(1);
        let params = test_params(&cfg, 5);
        let mut g = Graph::new();
        let traj = random_input(&mut g, cfg.history, cfg.d_model, 6);
        let instr = random_input(&mut g, 3, cfg.d_model, 7);
        let obs = random_input(&mut g, 12, cfg.d_model, 8);
        let err =
            cross_modal(&mut g, &params, &cfg, traj, instr, obs, Some(&[false; 3])).unwrap_err();
        assert!(matches!(err, Error::DegenerateMask(_)));
    }

    #[test]
    fn mask_length_must_match_the_instruction() {
        let cfg = small_cfg(1);
        let params = test_params(&cfg, 9);
        let mut g = Graph::new();
        let traj = random_input(&mut g, cfg.history, cfg.d_model, 10);
        let instr = random_input(&mut g, 3, cfg.d_model, 11);
        let obs = random_input(&mut g, 12, cfg.d_model, 12);
        let err = cross_modal(&mut g, &params, &cfg, traj, instr, obs, Some(&[true; 4]))
            .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn masking_part_of_the_instruction_changes_the_state() {
        let cfg = small_cfg(1);
        let params = test_params(&cfg, 13);
        let mut g = Graph::new();
        let traj = random_input(&mut g, cfg.history, cfg.d_model, 14);
        let instr = random_input(&mut g, 3, cfg.d_model, 15);
        let obs = random_input(&mut g, 12, cfg.d_model, 16);
        let open = cross_modal(&mut g, &params, &cfg, traj, instr, obs, None).unwrap();
        let masked =
            cross_modal(&mut g, &params, &cfg, traj, instr, obs, Some(&[true, false, false]))
                .unwrap();
        assert_ne!(g.value(open), g.value(masked));
    }

    #[test]
    fn single_layer_fusion_matches_the_composed_attention_oracle() {
        let cfg = small_cfg(1);
        let params = test_params(&cfg, 17);
        let d = cfg.d_model;
        let h = cfg.history;
        let l = 4usize;
        let mut g = Graph::new();
        let traj = random_input(&mut g, h, d, 18);
        let instr = random_input(&mut g, l, d, 19);
        let obs = random_input(&mut g, 12, d, 20);
        let s_t = cross_modal(&mut g, &params, &cfg, traj, instr, obs, None).unwrap();
        let got = g.value(s_t).to_vec();

        let get = |name: &str| params.get(name).unwrap().data();
        let p = |suffix: &str| get(&format!("enc.cross.l0.{suffix}"));
        let cross_w = AttnWeights::from_params(&params, "enc.cross.l0.cross");
        let self_w = AttnWeights::from_params(&params, "enc.cross.l0.self");
        let ty = get("enc.type");
        let mut obs_ref = g.value(obs).to_vec();
        add_row_ref(&mut obs_ref, &ty[TYPE_OBSERVATION * d..(TYPE_OBSERVATION + 1) * d]);
        let traj_ref = g.value(traj).to_vec();
        let instr_ref = g.value(instr).to_vec();

        let q = layer_norm_ref(&traj_ref, p("ln_c.gain"), p("ln_c.bias"), d);
        let cross = attention_ref(&q, &instr_ref, h, l, d, &cross_w);
        let mut traj_stream = traj_ref;
        for (t, c) in traj_stream.iter_mut().zip(&cross) {
            *t += c;
        }
        let mut cat = obs_ref;
        cat.extend_from_slice(&traj_stream);
        let n = 12 + h;
        let normed = layer_norm_ref(&cat, p("ln_s.gain"), p("ln_s.bias"), d);
        let self_attn = attention_ref(&normed, &normed, n, n, d, &self_w);
        for (c, a) in cat.iter_mut().zip(&self_attn) {
            *c += a;
        }
        let want = &cat[(n - 1) * d..];
        for (j, (a, b)) in got.iter().zip(want).enumerate() {
            assert!((a - b).abs() < 1e-10, "column {j}: {a} vs {b}");
        }
    }
}
