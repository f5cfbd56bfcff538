use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};

/// Urgency scores above this value are labelled urgent.
pub const URGENCY_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub text: String,
    pub urgency: f64,
    #[serde(default)]
    pub course_id: String,
}

impl RawPost {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Data("post text is empty".into()));
        }
        binarize_urgency(self.urgency).map(|_| ())
    }

    pub fn label(&self) -> Result<u8> {
        binarize_urgency(self.urgency)
    }
}

/// 1 when `score > 4`, else 0. Scores outside [1, 7] are rejected.
pub fn binarize_urgency(score: f64) -> Result<u8> {
    if !(1.0..=7.0).contains(&score) {
        return Err(Error::Domain(format!("urgency score {score} outside [1, 7]")));
    }
    Ok(u8::from(score > URGENCY_THRESHOLD))
}

/// Posts read from a dataset file plus the rows that failed validation.
#[derive(Debug, Clone)]
pub struct LoadedPosts {
    pub posts: Vec<RawPost>,
    pub skipped: Vec<(usize, String)>,
}

/// Reads a headed delimited file with columns `text`, `urgency`, `course_id`.
///
/// Rows whose text is blank or whose urgency is missing or outside [1, 7] are
/// skipped and reported; structural CSV errors abort the load.
pub fn load_posts(path: &Path) -> Result<LoadedPosts> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    for required in ["text", "urgency"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Format(format!(
                "{}: missing column {required:?} (found {:?})",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut posts = Vec::new();
    let mut skipped = Vec::new();
    for (i, row) in reader.deserialize::<RawPostRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), csv::ErrorKind::Deserialize { .. }) => {
                skipped.push((line, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let post = RawPost {
            text: row.text,
            urgency: row.urgency.unwrap_or(f64::NAN),
            course_id: row.course_id.unwrap_or_default(),
        };
        match post.validate() {
            Ok(()) => posts.push(post),
            Err(e) => skipped.push((line, e.to_string())),
        }
    }
    if posts.is_empty() {
        return Err(Error::Data(format!("{}: no valid posts", path.display())));
    }
    Ok(LoadedPosts { posts, skipped })
}

#[derive(Deserialize)]
struct RawPostRow {
    text: String,
    urgency: Option<f64>,
    course_id: Option<String>,
}

pub fn write_posts(path: &Path, posts: &[RawPost]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in posts {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A padded token-id sequence with its binary urgency label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub token_ids: Vec<usize>,
    pub true_length: usize,
    pub label: u8,
}

impl LabeledExample {
    /// The unpadded prefix.
    pub fn tokens(&self) -> &[usize] {
        &self.token_ids[..self.true_length]
    }
}

/// Maps tokens to ids (OOV → `<unk>`), truncating the tail beyond `max_len`
/// and right-padding with `<pad>`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Result<(Vec<usize>, usize)> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let true_length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..true_length]
        .iter()
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD_ID);
    Ok((ids, true_length))
}

/// Writes examples as `label<TAB>true_length<TAB>space-separated ids`.
pub fn save_examples(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ex in examples {
        let ids: Vec<String> = ex.token_ids.iter().map(usize::to_string).collect();
        writeln!(f, "{}\t{}\t{}", ex.label, ex.true_length, ids.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let label: u8 = fields[0]
            .parse()
            .ok()
            .filter(|l| *l <= 1)
            .ok_or_else(|| parse_err(line_no, format!("bad label {:?}", fields[0])))?;
        let true_length: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad length {:?}", fields[1])))?;
        let token_ids = fields[2]
            .split(' ')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(line_no, format!("bad token id: {e}")))?;
        if true_length > token_ids.len() {
            return Err(parse_err(line_no, "true_length exceeds sequence length".into()));
        }
        out.push(LabeledExample {
            token_ids,
            true_length,
            label,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no examples", path.display())));
    }
    Ok(out)
}
