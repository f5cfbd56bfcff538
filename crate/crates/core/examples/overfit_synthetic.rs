//! Fits each model kind to a small separable corpus at default hyperparameters
//! and prints the epoch at which training accuracy first reaches 100%.
//!
//! cargo run --release --example overfit_synthetic -- [batch_size]

use std::time::Instant;

use urgency::model::{Model, ModelKind, ModelSpec};
use urgency::synthetic::separable_corpus;
use urgency::train_eval::{train, TrainConfig};

fn main() -> urgency::Result<()> {
    let batch_size = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let data = separable_corpus(64, 12, 7);
    for kind in ModelKind::ALL {
        let start = Instant::now();
        let mut model = Model::new(ModelSpec::new(kind), data.vocab_size, None, 1)?;
        let cfg = TrainConfig {
            epochs: 200,
            batch_size,
            stop_at_perfect_train_accuracy: true,
            ..TrainConfig::default()
        };
        let trace = train(&mut model, &data.examples, &cfg)?;
        let last = trace.epochs.last().unwrap();
        println!(
            "{kind}: {} epochs, train accuracy {:.3}, loss {:.4}, kl {:?}, {:.1}s",
            trace.epochs.len(),
            last.train_accuracy.unwrap(),
            last.loss,
            last.kl,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
