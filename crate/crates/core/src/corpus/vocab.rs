use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token inventory with `<pad>` = 0 and `<unk>` = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    /// Keeps tokens whose corpus frequency is at least `min_frequency`,
    /// ordered by descending frequency with lexicographic tie-breaks.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_frequency: usize) -> Result<Self> {
        if min_frequency < 1 {
            return Err(Error::Config("min_frequency must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_frequency && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = kept.into_iter().map(|(t, _)| t.to_string());
        let mut vocab = Self::from_tokens(tokens)?;
        vocab.min_frequency = min_frequency;
        Ok(vocab)
    }

    /// Builds from non-special tokens in id order (ids start at 2).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token = vec![PAD.to_string(), UNK.to_string()];
        let mut token_to_id: HashMap<String, usize> = [(PAD.to_string(), PAD_ID), (UNK.to_string(), UNK_ID)]
            .into_iter()
            .collect();
        for tok in tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {tok:?}")));
            }
            if token_to_id.insert(tok.clone(), id_to_token.len()).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
            id_to_token.push(tok);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            min_frequency: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for tok in &self.id_to_token {
            writeln!(f, "{tok}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(PAD) || lines.next() != Some(UNK) {
            return Err(Error::Format(format!(
                "{}: vocabulary must start with {PAD} and {UNK}",
                path.display()
            )));
        }
        Self::from_tokens(lines.map(str::to_string))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(d: &[&[&str]]) -> Vec<Vec<String>> {
        d.iter().map(|x| x.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn frequency_cutoff() {
        let v = Vocabulary::build(&docs(&[&["a", "a", "b"], &["a", "c"]]), 2).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "a"]);
        let v = Vocabulary::build(&docs(&[&["x"]]), 1).unwrap();
        assert_eq!(v.id("x"), Some(2));
        let v = Vocabulary::build(&docs(&[&["x"]]), 2).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = Vocabulary::build(&docs(&[&["b", "c", "a", "c", "b", "d"]]), 1).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "b", "c", "a", "d"]);
    }

    #[test]
    fn rejects_zero_cutoff_and_empty_corpus() {
        assert!(matches!(Vocabulary::build(&docs(&[&["a"]]), 0), Err(Error::Config(_))));
        assert!(Vocabulary::build::<String>(&[], 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::build(&docs(&[&["z", "y", "y"]]), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "<pad>\n<unk>\ny\nz\n");
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back.tokens(), v.tokens());
    }
}
