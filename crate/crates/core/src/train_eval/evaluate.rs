use rayon::prelude::*;

use super::metrics::MetricsReport;
use crate::corpus::LabeledExample;
use crate::diffcore::RngStream;
use crate::error::{Error, Result};
use crate::mcd::PredictiveDistribution;
use crate::model::Model;

/// Predictive distributions for every example. Example `i` draws its noise
/// from `rng.derive(i)`, so results do not depend on thread scheduling.
pub fn predict_all(model: &Model, examples: &[LabeledExample], rng: &RngStream) -> Result<Vec<PredictiveDistribution>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| model.predict(ex.tokens(), &rng.derive(i as u64)))
        .collect()
}

/// Test-set metrics using the model kind's own prediction path.
pub fn evaluate(model: &Model, examples: &[LabeledExample], rng: RngStream) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Usage("test split is empty".into()));
    }
    let dists = predict_all(model, examples, &rng)?;
    let triples: Vec<(u8, u8, f64)> = examples
        .iter()
        .zip(&dists)
        .map(|(ex, d)| (ex.label, d.predicted_label, d.entropy))
        .collect();
    MetricsReport::from_predictions(&triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AttentionMode, HyperParams};
    use crate::model::{ModelKind, ModelSpec};
    use crate::synthetic::separable_corpus;

    #[test]
    fn evaluation_is_deterministic_and_bounded() {
        let data = separable_corpus(24, 8, 5);
        for kind in ModelKind::ALL {
            let spec = ModelSpec {
                hp: HyperParams {
                    max_len: 8,
                    embed_dim: 6,
                    hidden: 6,
                    z_dim: 3,
                    attention: AttentionMode::Softmax,
                },
                ..ModelSpec::new(kind)
            };
            let m = Model::new(spec, data.vocab_size, None, 3).unwrap();
            let a = evaluate(&m, &data.examples, RngStream::new(1, 2)).unwrap();
            let b = evaluate(&m, &data.examples, RngStream::new(1, 2)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.n_test, 24);
            assert!((0.0..=2f64.ln()).contains(&a.mean_entropy));
        }
    }

    #[test]
    fn empty_split_is_a_usage_error() {
        let data = separable_corpus(4, 8, 5);
        let m = Model::new(ModelSpec::new(ModelKind::Base), data.vocab_size, None, 3).unwrap();
        assert!(matches!(evaluate(&m, &[], RngStream::new(0, 0)), Err(Error::Usage(_))));
    }
}
