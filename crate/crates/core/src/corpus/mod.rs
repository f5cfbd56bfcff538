//! Forum-post ingestion: urgency binarization, tokenization, vocabulary,
//! sequence encoding, pretrained embeddings and stratified splits.

mod dataset;
mod embeddings;
mod split;
mod tokenize;
mod vocab;

pub use dataset::{
    binarize_urgency, encode, load_examples, load_posts, save_examples, write_posts, LabeledExample, LoadedPosts,
    RawPost, URGENCY_THRESHOLD,
};
pub use embeddings::{load_pretrained_embeddings, EmbeddingTable, FALLBACK_SCALE, PRETRAINED_DIM};
pub use split::{stratified_split, stratified_split_indices, train_count};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD, PAD_ID, UNK, UNK_ID};

/// Tokenizes and encodes a post against `vocab`.
pub fn encode_post(post: &RawPost, vocab: &Vocabulary, max_len: usize) -> crate::Result<LabeledExample> {
    let (token_ids, true_length) = encode(&tokenize(&post.text), vocab, max_len)?;
    Ok(LabeledExample {
        token_ids,
        true_length,
        label: post.label()?,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn binarization_is_monotone(a in 1.0..=7.0f64, b in 1.0..=7.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(binarize_urgency(lo).unwrap() <= binarize_urgency(hi).unwrap());
        }

        #[test]
        fn encoding_is_total(words in proptest::collection::vec("[a-e]{1,2}", 0..30), max_len in 1usize..20) {
            let docs = vec![words.clone()];
            let vocab = Vocabulary::build(&docs, 2).unwrap_or_else(|_| Vocabulary::from_tokens(Vec::new()).unwrap());
            let (ids, len) = encode(&words, &vocab, max_len).unwrap();
            prop_assert_eq!(ids.len(), max_len);
            prop_assert_eq!(len, words.len().min(max_len));
            prop_assert!(ids.iter().all(|&i| i < vocab.len()));
            prop_assert!(ids[len..].iter().all(|&i| i == PAD_ID));
            for t in vocab.tokens() {
                prop_assert_eq!(vocab.token(vocab.id(t).unwrap()), Some(t.as_str()));
            }
        }
    }
}
