//! Trains each model kind on a generated imbalanced corpus, evaluates on a
//! held-out stratified split, and round-trips the checkpoint.

use urgency::corpus::stratified_split;
use urgency::diffcore::RngStream;
use urgency::encoder::HyperParams;
use urgency::model::{Model, ModelKind, ModelSpec};
use urgency::synthetic::imbalanced_corpus;
use urgency::train_eval::{evaluate, from_bytes, to_bytes, train, TrainConfig};

fn main() -> urgency::Result<()> {
    let corpus = imbalanced_corpus(600, 0.25, 12, 1);
    let (train_set, test_set) = stratified_split(&corpus.examples, 0.8, 1)?;
    let hp = HyperParams {
        max_len: 12,
        embed_dim: 24,
        hidden: 24,
        z_dim: 8,
        ..HyperParams::default()
    };
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };

    for kind in ModelKind::ALL {
        let spec = ModelSpec {
            hp: hp.clone(),
            ..ModelSpec::new(kind)
        };
        let mut model = Model::new(spec, corpus.vocab_size, None, 9)?;
        let trace = train(&mut model, &train_set, &cfg)?;
        let last = trace.epochs.last().expect("at least one epoch");
        let report = evaluate(&model, &test_set, RngStream::new(9, 1))?;
        println!(
            "{kind:<4} loss {:.4}  train acc {:.3}  test acc {:.3}  urgent f1 {:.3}  entropy {:.3}",
            last.loss,
            last.train_accuracy.unwrap_or(f64::NAN),
            report.accuracy,
            report.urgent.f1,
            report.mean_entropy
        );

        let bytes = to_bytes(&model);
        let restored = from_bytes(&bytes)?;
        let again = evaluate(&restored, &test_set, RngStream::new(9, 1))?;
        println!(
            "     checkpoint {} bytes, identical metrics after reload: {}",
            bytes.len(),
            again == report
        );
    }
    Ok(())
}
