use std::io::BufRead;
use std::path::Path;

use super::vocab::{Vocabulary, PAD_ID, UNK_ID};
use crate::diffcore::{RngStream, Tensor};
use crate::error::{Error, Result};

/// Embedding width of the pretrained vectors.
pub const PRETRAINED_DIM: usize = 300;
/// Half-width of the uniform initializer for rows without a pretrained vector.
pub const FALLBACK_SCALE: f64 = 0.05;

/// `V × d` initial embedding matrix.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Fraction of non-special vocabulary tokens found in the pretrained file.
    pub coverage: f64,
}

impl EmbeddingTable {
    /// Every row drawn uniformly from `[−0.05, 0.05]`.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut RngStream) -> Self {
        let data = (0..vocab_size * dim)
            .map(|_| rng.uniform_range(-FALLBACK_SCALE, FALLBACK_SCALE))
            .collect();
        EmbeddingTable {
            matrix: Tensor::new(vocab_size, dim, data).expect("non-empty table"),
            coverage: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Loads whitespace-separated `token v1 … vd` lines, copying the vectors of
/// vocabulary tokens and leaving every other row at the fallback initializer.
///
/// An optional first line `count dim` (word2vec text header) is honoured and
/// its `dim` must equal `dim`.
pub fn load_pretrained_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut RngStream,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab.len(), dim, rng);
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut found = vec![false; vocab.len()];
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(file_dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                if file_dim != dim {
                    return Err(Error::Format(format!(
                        "{}: header declares {file_dim}-d vectors, expected {dim}",
                        path.display()
                    )));
                }
                continue;
            }
        }
        if rest.len() != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} values after token, found {}", rest.len()),
            ));
        }
        let Some(id) = vocab.id(token) else { continue };
        let values = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(line_no, format!("non-numeric value: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite value".into()));
        }
        table.matrix.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        found[id] = true;
    }
    let regular = vocab.len().saturating_sub(2);
    let hits = found
        .iter()
        .enumerate()
        .filter(|&(id, &f)| f && id != PAD_ID && id != UNK_ID)
        .count();
    table.coverage = if regular == 0 {
        0.0
    } else {
        hits as f64 / regular as f64
    };
    Ok(table)
}
