use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::tokenize::{CLS, PAD, SEP, UNK};
use crate::error::{Error, Result};

pub const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Token-to-id map. Reserved tokens take ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens first, then the distinct `words` in sorted order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = words.into_iter().filter(|w| !RESERVED.contains(w)).collect();
        Self::from_tokens(RESERVED.iter().copied().chain(set).map(str::to_string).collect())
            .expect("reserved tokens present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Config(format!("vocabulary must start with {RESERVED:?}")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> usize {
        self.ids.get(tok).copied().unwrap_or(1)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.ids.contains_key(tok)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, toks: &[String]) -> Vec<usize> {
        toks.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_first_and_unknown_maps_to_unk() {
        let v = Vocab::build(["b", "a", "a", "[CLS]"]);
        assert_eq!(v.tokens(), ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"]);
        assert_eq!(v.id("zzz"), 1);
        assert_eq!(v.id("b"), 5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocab::build(["x", "y"]);
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        fs::write(&p, "x\ny\n").unwrap();
        assert!(matches!(Vocab::load(&p), Err(Error::Config(_))));
    }
}
