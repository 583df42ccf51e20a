//! Geodesic distances over the free-cell graph.
//!
//! Moves are 8-connected with diagonal cost √2 · cell_size; a diagonal move
//! additionally requires both orthogonal neighbors free, so any returned
//! path is traversable by the low-level controller without clipping a
//! corner. Costs are recomputed from integer (straight, diagonal) step
//! counts rather than accumulated, which makes distances exactly symmetric
//! and independent of traversal order.

use crate::error::{Error, Result};
use crate::navsim::grid::GridWorld;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

/// (dx, dy, is_diagonal) in a fixed order for deterministic tie-breaking.
const NEIGHBORS: [(i64, i64, bool); 8] = [
    (1, 0, false),
    (-1, 0, false),
    (0, 1, false),
    (0, -1, false),
    (1, 1, true),
    (1, -1, true),
    (-1, 1, true),
    (-1, -1, true),
];

#[derive(Debug, Clone, Copy, PartialEq)]
struct Steps {
    straight: u32,
    diagonal: u32,
}

impl Steps {
    const ZERO: Steps = Steps {
        straight: 0,
        diagonal: 0,
    };

    fn cost(self, cell_size: f64) -> f64 {
        (self.straight as f64 + SQRT_2 * self.diagonal as f64) * cell_size
    }
}

struct HeapEntry {
    cost: f64,
    cell: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for smallest-cost-first, breaking
        // ties by cell index so the pop order is fully deterministic.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

struct CellSearch {
    steps: Vec<Option<Steps>>,
    prev: Vec<usize>,
}

fn dijkstra(grid: &GridWorld, source: usize) -> CellSearch {
    let n = grid.cell_count();
    let w = grid.width() as i64;
    let h = grid.height() as i64;
    let cell_size = grid.cell_size();
    let mut steps: Vec<Option<Steps>> = vec![None; n];
    let mut done = vec![false; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    steps[source] = Some(Steps::ZERO);
    heap.push(HeapEntry {
        cost: 0.0,
        cell: source,
    });

    while let Some(HeapEntry { cell, .. }) = heap.pop() {
        if done[cell] {
            continue;
        }
        done[cell] = true;
        let here = steps[cell].unwrap();
        let cx = (cell % grid.width()) as i64;
        let cy = (cell / grid.width()) as i64;
        for &(dx, dy, diagonal) in &NEIGHBORS {
            let nx = cx + dx;
            let ny = cy + dy;
            if nx < 0 || ny < 0 || nx >= w || ny >= h || grid.is_occupied(nx, ny) {
                continue;
            }
            if diagonal && (grid.is_occupied(cx + dx, cy) || grid.is_occupied(cx, cy + dy)) {
                continue;
            }
            let candidate = Steps {
                straight: here.straight + u32::from(!diagonal),
                diagonal: here.diagonal + u32::from(diagonal),
            };
            let idx = (ny * w + nx) as usize;
            let better = match steps[idx] {
                None => true,
                Some(existing) => candidate.cost(cell_size) < existing.cost(cell_size),
            };
            if better {
                steps[idx] = Some(candidate);
                prev[idx] = cell;
                heap.push(HeapEntry {
                    cost: candidate.cost(cell_size),
                    cell: idx,
                });
            }
        }
    }
    CellSearch { steps, prev }
}

fn endpoint_cell(grid: &GridWorld, x: f64, y: f64) -> Result<(usize, usize)> {
    match grid.cell_of(x, y) {
        Some((cx, cy)) if !grid.is_occupied(cx as i64, cy as i64) => Ok((cx, cy)),
        _ => Err(Error::InvalidEndpoint(x, y)),
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Geodesic distance in meters, or `None` when the endpoints are mutually
/// unreachable. Both endpoints must lie in free cells.
pub fn geodesic_distance(grid: &GridWorld, p: (f64, f64), q: (f64, f64)) -> Result<Option<f64>> {
    let pc = endpoint_cell(grid, p.0, p.1)?;
    let qc = endpoint_cell(grid, q.0, q.1)?;
    if pc == qc {
        return Ok(Some(euclid(p, q)));
    }
    let search = dijkstra(grid, grid.cell_index(pc.0, pc.1));
    let Some(steps) = search.steps[grid.cell_index(qc.0, qc.1)] else {
        return Ok(None);
    };
    let through = steps.cost(grid.cell_size());
    let p_rem = euclid(p, grid.cell_center(pc.0, pc.1));
    let q_rem = euclid(q, grid.cell_center(qc.0, qc.1));
    Ok(Some(p_rem + through + q_rem))
}

/// Cell-center chain realizing the geodesic distance, endpoints' cells
/// included. `p == q` yields the single position itself.
pub fn shortest_path(grid: &GridWorld, p: (f64, f64), q: (f64, f64)) -> Result<Option<Vec<(f64, f64)>>> {
    let pc = endpoint_cell(grid, p.0, p.1)?;
    let qc = endpoint_cell(grid, q.0, q.1)?;
    if p == q {
        return Ok(Some(vec![p]));
    }
    if pc == qc {
        return Ok(Some(vec![p, q]));
    }
    let search = dijkstra(grid, grid.cell_index(pc.0, pc.1));
    if search.steps[grid.cell_index(qc.0, qc.1)].is_none() {
        return Ok(None);
    }
    let mut cells = vec![grid.cell_index(qc.0, qc.1)];
    while *cells.last().unwrap() != grid.cell_index(pc.0, pc.1) {
        cells.push(search.prev[*cells.last().unwrap()]);
    }
    cells.reverse();
    Ok(Some(
        cells
            .into_iter()
            .map(|i| grid.cell_center(i % grid.width(), i / grid.width()))
            .collect(),
    ))
}

/// All-cells geodesic distance to a fixed goal position, for repeated
/// queries during expert rollouts.
#[derive(Debug)]
pub struct DistanceField {
    cell_size: f64,
    width: usize,
    goal: (f64, f64),
    goal_cell: (usize, usize),
    goal_rem: f64,
    cell_steps: Vec<Option<Steps>>,
}

impl DistanceField {
    pub fn new(grid: &GridWorld, goal: (f64, f64)) -> Result<Self> {
        let goal_cell = endpoint_cell(grid, goal.0, goal.1)?;
        let search = dijkstra(grid, grid.cell_index(goal_cell.0, goal_cell.1));
        Ok(DistanceField {
            cell_size: grid.cell_size(),
            width: grid.width(),
            goal,
            goal_cell,
            goal_rem: euclid(goal, grid.cell_center(goal_cell.0, goal_cell.1)),
            cell_steps: search.steps,
        })
    }

    pub fn goal(&self) -> (f64, f64) {
        self.goal
    }

    /// Distance from a free position to the goal; `None` if the position is
    /// occupied, outside, or disconnected from the goal.
    pub fn distance(&self, x: f64, y: f64) -> Option<f64> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as usize;
        let cy = (y / self.cell_size).floor() as usize;
        if cx >= self.width || cy * self.width + cx >= self.cell_steps.len() {
            return None;
        }
        if (cx, cy) == self.goal_cell {
            return Some(euclid((x, y), self.goal));
        }
        let steps = self.cell_steps[cy * self.width + cx]?;
        let center = (
            (cx as f64 + 0.5) * self.cell_size,
            (cy as f64 + 0.5) * self.cell_size,
        );
        Some(euclid((x, y), center) + steps.cost(self.cell_size) + self.goal_rem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navsim::grid::{grid_from_rows, SceneCategory};
    use approx::assert_relative_eq;

    fn corridor() -> GridWorld {
        grid_from_rows(&["#######", "#.....#", "#######"], SceneCategory::NarrowSpace).unwrap()
    }

    #[test]
    fn straight_corridor_four_cells_is_one_meter() {
        let grid = corridor();
        let p = grid.cell_center(1, 1);
        let q = grid.cell_center(5, 1);
        let d = geodesic_distance(&grid, p, q).unwrap().unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn same_point_has_zero_distance() {
        let grid = corridor();
        let p = (0.4, 0.3);
        assert_eq!(geodesic_distance(&grid, p, p).unwrap(), Some(0.0));
        assert_eq!(shortest_path(&grid, p, p).unwrap().unwrap(), vec![p]);
    }

    #[test]
    fn occupied_endpoint_is_invalid() {
        let grid = corridor();
        let p = grid.cell_center(1, 1);
        match geodesic_distance(&grid, p, (0.1, 0.1)) {
            Err(Error::InvalidEndpoint(_, _)) => {}
            other => panic!("expected invalid endpoint, got {other:?}"),
        }
        assert!(geodesic_distance(&grid, (-0.5, 0.3), p).is_err());
    }

    #[test]
    fn disconnected_regions_are_unreachable() {
        let grid = grid_from_rows(
            &["#######", "#..#..#", "#..#..#", "#######"],
            SceneCategory::NarrowSpace,
        )
        .unwrap();
        let p = grid.cell_center(1, 1);
        let q = grid.cell_center(5, 1);
        assert_eq!(geodesic_distance(&grid, p, q).unwrap(), None);
        assert_eq!(shortest_path(&grid, p, q).unwrap(), None);
    }

    #[test]
    fn straight_corridor_path_is_collinear_centers() {
        let grid = corridor();
        let p = grid.cell_center(1, 1);
        let q = grid.cell_center(4, 1);
        let path = shortest_path(&grid, p, q).unwrap().unwrap();
        assert_eq!(path.len(), 4);
        for (i, pos) in path.iter().enumerate() {
            assert_relative_eq!(pos.0, grid.cell_center(1 + i, 1).0, epsilon = 1e-12);
            assert_relative_eq!(pos.1, p.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn path_steps_are_adjacent_and_distance_matches_path() {
        let grid = grid_from_rows(
            &[
                "##########",
                "#....#...#",
                "#....#.#.#",
                "#.##...#.#",
                "#.#####..#",
                "#........#",
                "##########",
            ],
            SceneCategory::Maze,
        )
        .unwrap();
        let p = grid.cell_center(1, 1);
        let q = grid.cell_center(8, 1);
        let d = geodesic_distance(&grid, p, q).unwrap().unwrap();
        let path = shortest_path(&grid, p, q).unwrap().unwrap();
        let mut total = 0.0;
        for pair in path.windows(2) {
            let step = euclid(pair[0], pair[1]);
            assert!(step <= SQRT_2 * grid.cell_size() + 1e-9);
            total += step;
        }
        assert_relative_eq!(d, total, epsilon = 1e-9);
    }

    /// Brute-force Dijkstra over an adjacency list with linear minimum
    /// scanning; shares no code with the production search.
    fn oracle_distance(grid: &GridWorld, p: (usize, usize), q: (usize, usize)) -> Option<f64> {
        let n = grid.cell_count();
        let w = grid.width() as i64;
        let mut dist: Vec<Option<(u32, u32)>> = vec![None; n];
        let mut visited = vec![false; n];
        dist[grid.cell_index(p.0, p.1)] = Some((0, 0));
        let value = |sd: (u32, u32)| (sd.0 as f64 + SQRT_2 * sd.1 as f64) * grid.cell_size();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if visited[i] || dist[i].is_none() {
                    continue;
                }
                if best.is_none_or(|b| value(dist[i].unwrap()) < value(dist[b].unwrap())) {
                    best = Some(i);
                }
            }
            let Some(u) = best else { break };
            visited[u] = true;
            let (ux, uy) = ((u % grid.width()) as i64, (u / grid.width()) as i64);
            let (s, d) = dist[u].unwrap();
            for (dx, dy) in [
                (1i64, 0i64),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ] {
                let (vx, vy) = (ux + dx, uy + dy);
                if grid.is_occupied(vx, vy) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && (grid.is_occupied(ux + dx, uy) || grid.is_occupied(ux, uy + dy)) {
                    continue;
                }
                let cand = (s + u32::from(!diagonal), d + u32::from(diagonal));
                let vi = (vy * w + vx) as usize;
                if dist[vi].is_none_or(|old| value(cand) < value(old)) {
                    dist[vi] = Some(cand);
                }
            }
        }
        dist[grid.cell_index(q.0, q.1)].map(value)
    }

    #[test]
    fn matches_independent_dijkstra_exactly() {
        let grid = grid_from_rows(
            &[
                "############",
                "#....#.....#",
                "#....#.###.#",
                "#.##.#...#.#",
                "#.#..###.#.#",
                "#.#......#.#",
                "#.########.#",
                "#..........#",
                "############",
            ],
            SceneCategory::Maze,
        )
        .unwrap();
        let free: Vec<(usize, usize)> = grid.free_cells().collect();
        let mut rng = crate::rng::stream(3, "dijkstra-oracle", 0);
        use rand::seq::SliceRandom;
        for _ in 0..25 {
            let &a = free.choose(&mut rng).unwrap();
            let &b = free.choose(&mut rng).unwrap();
            if a == b {
                continue;
            }
            let pa = grid.cell_center(a.0, a.1);
            let pb = grid.cell_center(b.0, b.1);
            let got = geodesic_distance(&grid, pa, pb).unwrap();
            let expect = oracle_distance(&grid, a, b);
            match (got, expect) {
                (Some(g), Some(e)) => assert_eq!(g.to_bits(), e.to_bits(), "{a:?}->{b:?}"),
                (None, None) => {}
                other => panic!("reachability disagrees for {a:?}->{b:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn distance_is_exactly_symmetric() {
        let grid = grid_from_rows(
            &[
                "##########",
                "#....#...#",
                "#.##.#.#.#",
                "#..#...#.#",
                "##.#####.#",
                "#........#",
                "##########",
            ],
            SceneCategory::Maze,
        )
        .unwrap();
        let mut rng = crate::rng::stream(4, "symmetry", 0);
        use rand::Rng;
        let free: Vec<(usize, usize)> = grid.free_cells().collect();
        for _ in 0..30 {
            let a = free[rng.gen_range(0..free.len())];
            let b = free[rng.gen_range(0..free.len())];
            let pa = (
                grid.cell_center(a.0, a.1).0 + rng.gen_range(-0.1..0.1),
                grid.cell_center(a.0, a.1).1 + rng.gen_range(-0.1..0.1),
            );
            let pb = (
                grid.cell_center(b.0, b.1).0 + rng.gen_range(-0.1..0.1),
                grid.cell_center(b.0, b.1).1 + rng.gen_range(-0.1..0.1),
            );
            let ab = geodesic_distance(&grid, pa, pb).unwrap();
            let ba = geodesic_distance(&grid, pb, pa).unwrap();
            match (ab, ba) {
                (Some(x), Some(y)) => assert_eq!(x.to_bits(), y.to_bits()),
                (None, None) => {}
                other => panic!("asymmetric reachability: {other:?}"),
            }
        }
    }

    #[test]
    fn triangle_inequality_holds_on_sampled_triples() {
        let grid = grid_from_rows(
            &[
                "##########",
                "#........#",
                "#.##.###.#",
                "#........#",
                "#.####.#.#",
                "#........#",
                "##########",
            ],
            SceneCategory::Maze,
        )
        .unwrap();
        let free: Vec<(usize, usize)> = grid.free_cells().collect();
        let mut rng = crate::rng::stream(6, "triangle", 0);
        use rand::Rng;
        let sample = |rng: &mut rand_chacha::ChaCha8Rng, free: &[(usize, usize)]| {
            let c = free[rng.gen_range(0..free.len())];
            (
                (c.0 as f64 + rng.gen_range(0.15..0.85)) * 0.25,
                (c.1 as f64 + rng.gen_range(0.15..0.85)) * 0.25,
            )
        };
        for _ in 0..60 {
            let p = sample(&mut rng, &free);
            let q = sample(&mut rng, &free);
            let r = sample(&mut rng, &free);
            let pq = geodesic_distance(&grid, p, q).unwrap().unwrap();
            let qr = geodesic_distance(&grid, q, r).unwrap().unwrap();
            let pr = geodesic_distance(&grid, p, r).unwrap().unwrap();
            assert!(pr <= pq + qr + 1e-9, "triangle violated: {pr} > {pq} + {qr}");
        }
    }

    #[test]
    fn distance_field_agrees_with_pairwise_queries() {
        let grid = grid_from_rows(
            &[
                "#########",
                "#...#...#",
                "#.#...#.#",
                "#...#...#",
                "#########",
            ],
            SceneCategory::Maze,
        )
        .unwrap();
        let goal = (1.9, 0.4);
        let field = DistanceField::new(&grid, goal).unwrap();
        for (cx, cy) in grid.free_cells() {
            let p = grid.cell_center(cx, cy);
            let direct = geodesic_distance(&grid, p, goal).unwrap();
            let via_field = field.distance(p.0, p.1);
            match (direct, via_field) {
                (Some(a), Some(b)) => assert_relative_eq!(a, b, epsilon = 1e-12),
                (None, None) => {}
                other => panic!("field mismatch at ({cx}, {cy}): {other:?}"),
            }
        }
        assert_eq!(field.distance(0.1, 0.1), None);
    }
}
