//! Fixed instruction vocabulary with a bidirectional token/id mapping.
//!
//! The vocabulary is a plain text file, one token per line, checked into the
//! repository at `data/vocab.txt`. A token's id is its zero-based line number,
//! so the file is the single source of truth for both directions of the
//! mapping. [`Vocab::builtin`] embeds that file at compile time; [`Vocab::load`]
//! reads the same format from disk so external tools can swap vocabularies.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Embedded copy of the repository vocabulary file.
const BUILTIN_VOCAB: &str = include_str!("../../data/vocab.txt");

/// An immutable token table mapping token strings to contiguous ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds the vocabulary shipped with this crate.
    pub fn builtin() -> Self {
        Self::from_text(BUILTIN_VOCAB, "builtin vocabulary")
            .expect("embedded vocabulary is well formed")
    }

    /// Loads a vocabulary from a one-token-per-line text file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Writes the vocabulary in the one-token-per-line format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let token = line.trim();
            if token.is_empty() {
                return Err(Error::malformed(
                    source,
                    format!("line {}: empty token", line_no + 1),
                ));
            }
            if token.chars().any(char::is_whitespace) {
                return Err(Error::malformed(
                    source,
                    format!("line {}: token {token:?} contains whitespace", line_no + 1),
                ));
            }
            if index.insert(token.to_string(), tokens.len()).is_some() {
                return Err(Error::malformed(
                    source,
                    format!("line {}: duplicate token {token:?}", line_no + 1),
                ));
            }
            tokens.push(token.to_string());
        }
        if tokens.is_empty() {
            return Err(Error::malformed(source, "vocabulary has no tokens"));
        }
        Ok(Self { tokens, index })
    }

    /// Number of tokens in the vocabulary.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when the vocabulary holds no tokens. Construction forbids this,
    /// so the method exists for API completeness.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a token string, if present.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token string for an id.
    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::UnknownToken(id, self.tokens.len()))
    }

    /// Encodes token strings to ids, rejecting tokens outside the vocabulary.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::Parameter(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Decodes ids back to token strings.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.token(id).map(String::from)).collect()
    }

    /// Token string naming a landmark id (`0 -> "a"`, `1 -> "b"`, ...).
    pub fn landmark_token(landmark: u8) -> String {
        char::from(b'a' + landmark % 26).to_string()
    }

    /// Token string for the `i`-th ordinal, counting from zero and saturating
    /// at the largest ordinal in the vocabulary.
    pub fn ordinal_token(i: usize) -> &'static str {
        const ORDINALS: [&str; 5] = ["first", "second", "third", "fourth", "fifth"];
        ORDINALS[i.min(ORDINALS.len() - 1)]
    }
}
