//! Generated forum-post corpora for tests, examples and desk-scale runs.

use crate::corpus::{encode_post, tokenize, LabeledExample, RawPost, Vocabulary};
use crate::diffcore::RngStream;
use crate::error::Result;

const FILLER: [&str; 24] = [
    "the",
    "lecture",
    "video",
    "week",
    "quiz",
    "module",
    "answer",
    "question",
    "course",
    "reading",
    "notes",
    "slides",
    "problem",
    "exercise",
    "today",
    "about",
    "really",
    "think",
    "section",
    "topic",
    "example",
    "chapter",
    "discussion",
    "material",
];
const URGENT_CUES: [&str; 6] = ["deadline", "error", "stuck", "broken", "cannot", "help"];
const CALM_CUES: [&str; 6] = ["thanks", "enjoyed", "great", "interesting", "agree", "nice"];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub posts: Vec<RawPost>,
    pub vocab: Vocabulary,
    pub examples: Vec<LabeledExample>,
    pub vocab_size: usize,
}

impl SyntheticCorpus {
    fn from_posts(posts: Vec<RawPost>, max_len: usize) -> Result<Self> {
        let tokens: Vec<Vec<String>> = posts.iter().map(|p| tokenize(&p.text)).collect();
        let vocab = Vocabulary::build(&tokens, 1)?;
        let examples = posts
            .iter()
            .map(|p| encode_post(p, &vocab, max_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticCorpus {
            vocab_size: vocab.len(),
            posts,
            vocab,
            examples,
        })
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }
}

fn pick<'a>(rng: &mut RngStream, words: &[&'a str]) -> &'a str {
    words[(rng.uniform() * words.len() as f64) as usize % words.len()]
}

fn score(rng: &mut RngStream, urgent: bool) -> f64 {
    // urgent scores in {5, 6, 7}, others in {1, .., 4}
    if urgent {
        5.0 + (rng.uniform() * 3.0).floor()
    } else {
        1.0 + (rng.uniform() * 4.0).floor()
    }
}

fn filler_post(rng: &mut RngStream, len: usize) -> Vec<&'static str> {
    (0..len).map(|_| pick(rng, &FILLER)).collect()
}

/// `n` posts, half of them urgent. Every urgent post contains the token
/// "urgent" and every other post the token "fine", at a random position among
/// filler words, so a model that reads the sequence can separate them exactly.
pub fn separable_corpus(n: usize, max_len: usize, seed: u64) -> SyntheticCorpus {
    let root = RngStream::new(seed, 0x5E9A);
    let posts = (0..n)
        .map(|i| {
            let mut rng = root.derive(i as u64);
            let urgent = i % 2 == 1;
            let len = 2 + (rng.uniform() * (max_len.max(3) - 2) as f64) as usize;
            let mut words = filler_post(&mut rng, len - 1);
            let at = (rng.uniform() * len as f64) as usize % len;
            words.insert(at, if urgent { "urgent" } else { "fine" });
            RawPost {
                text: words.join(" "),
                urgency: score(&mut rng, urgent),
                course_id: "synthetic".into(),
            }
        })
        .collect();
    SyntheticCorpus::from_posts(posts, max_len).expect("generated posts are valid")
}

/// `n` posts of which `round(positive_fraction · n)` are urgent. Cue words
/// are informative but noisy: each urgent post carries an urgent cue with
/// probability 0.7 and a calm cue with probability 0.2, and the reverse for
/// the other posts.
pub fn imbalanced_corpus(n: usize, positive_fraction: f64, max_len: usize, seed: u64) -> SyntheticCorpus {
    let root = RngStream::new(seed, 0x1B4C);
    let positives = (positive_fraction * n as f64).round() as usize;
    let posts = (0..n)
        .map(|i| {
            let mut rng = root.derive(i as u64);
            // spread positives evenly through the file
            let urgent = (i + 1) * positives / n.max(1) > i * positives / n.max(1);
            let len = 3 + (rng.uniform() * (max_len.max(5) - 4) as f64) as usize;
            let mut words = filler_post(&mut rng, len);
            let (own, other) = if urgent {
                (&URGENT_CUES, &CALM_CUES)
            } else {
                (&CALM_CUES, &URGENT_CUES)
            };
            for (cues, p) in [(own, 0.7), (other, 0.2)] {
                if rng.uniform() < p {
                    let at = (rng.uniform() * words.len() as f64) as usize % words.len();
                    words[at] = pick(&mut rng, cues);
                }
            }
            RawPost {
                text: words.join(" "),
                urgency: score(&mut rng, urgent),
                course_id: format!("course{}", i % 5),
            }
        })
        .collect();
    SyntheticCorpus::from_posts(posts, max_len).expect("generated posts are valid")
}
