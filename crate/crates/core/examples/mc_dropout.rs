//! Monte Carlo Dropout: predictive entropy and its spread as the number of
//! stochastic passes grows, on a briefly trained model. With rate 0 every pass
//! equals the deterministic one.

use urgency::diffcore::RngStream;
use urgency::encoder::HyperParams;
use urgency::mcd::{base_logits, mcd_predict, McdConfig};
use urgency::model::{Head, Model, ModelKind, ModelSpec};
use urgency::synthetic::imbalanced_corpus;
use urgency::train_eval::{train, TrainConfig};

fn main() -> urgency::Result<()> {
    let spec = ModelSpec {
        hp: HyperParams {
            max_len: 10,
            embed_dim: 12,
            hidden: 12,
            z_dim: 4,
            ..HyperParams::default()
        },
        ..ModelSpec::new(ModelKind::Mcd)
    };
    let corpus = imbalanced_corpus(300, 0.3, 10, 4);
    let mut model = Model::new(spec, corpus.vocab_size, None, 5)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut model, &corpus.examples, &cfg)?;
    let Head::Classifier(head) = &model.head else {
        unreachable!()
    };
    let tokens = corpus.examples[1].tokens().to_vec();

    let base = base_logits(&model.store, &model.encoder, head, &tokens)?;
    println!(
        "deterministic p(urgent) {:.4}",
        urgency::mcd::PredictiveDistribution::from_samples(vec![base])?.mean_probs[1]
    );
    let off = McdConfig {
        dropout_rate: 0.0,
        num_samples: 5,
    };
    let pred = mcd_predict(&model.store, &model.encoder, head, &tokens, &off, &RngStream::new(1, 0))?;
    println!(
        "rate 0: every pass equals the deterministic logits: {}",
        pred.per_sample_logits.iter().all(|l| *l == base)
    );

    println!("{:>6} {:>12} {:>14}", "passes", "mean H", "var H (200x)");
    for m in [1, 5, 10, 50, 100] {
        let cfg = McdConfig {
            dropout_rate: 0.3,
            num_samples: m,
        };
        let h: Vec<f64> = (0..200)
            .map(|r| {
                mcd_predict(&model.store, &model.encoder, head, &tokens, &cfg, &RngStream::new(r, 0)).map(|p| p.entropy)
            })
            .collect::<urgency::Result<_>>()?;
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h.len() as f64;
        println!("{m:>6} {mean:>12.6} {var:>14.3e}");
    }
    Ok(())
}
