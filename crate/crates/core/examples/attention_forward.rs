//! A deterministic forward pass through the two-layer encoder, showing the
//! attention weights under both normalizations and the resulting prediction.

use urgency::corpus::{encode, tokenize, Vocabulary};
use urgency::diffcore::{RngStream, Tape};
use urgency::encoder::{AttentionMode, HyperParams};
use urgency::model::{Model, ModelKind, ModelSpec};

fn main() -> urgency::Result<()> {
    let text = "the quiz is broken and the deadline is tonight";
    let tokens = tokenize(text);
    let vocab = Vocabulary::build(std::slice::from_ref(&tokens), 1)?;
    let (ids, len) = encode(&tokens, &vocab, 12)?;

    for attention in [AttentionMode::Softmax, AttentionMode::Ratio] {
        let spec = ModelSpec {
            hp: HyperParams {
                max_len: 12,
                embed_dim: 16,
                hidden: 16,
                z_dim: 4,
                attention,
            },
            ..ModelSpec::new(ModelKind::Base)
        };
        let model = Model::new(spec, vocab.len(), None, 3)?;
        let mut tape = Tape::new(&model.store);
        let state = model.encoder.encode(&mut tape, &ids[..len], None)?;
        let alpha = state.padded_alpha(&tape, 12);
        println!("{attention} attention (sum {:.6}):", alpha.iter().sum::<f64>());
        for (tok, a) in tokens.iter().zip(&alpha) {
            println!("  {tok:<10} {a:+.4}");
        }
        let pred = model.predict(&ids[..len], &RngStream::new(0, 0))?;
        println!(
            "  p(urgent) {:.4}  entropy {:.4}  label {}\n",
            pred.mean_probs[1], pred.entropy, pred.predicted_label
        );
    }
    Ok(())
}
