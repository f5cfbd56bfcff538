//! The 40/60 protocol at desk scale: a generated corpus with 19% urgent
//! posts, ten runs per model kind, mean and population variance per metric.
//!
//! cargo run --release --example protocol_40_60 -- [runs] [epochs]

use std::time::Instant;

use urgency::encoder::HyperParams;
use urgency::synthetic::imbalanced_corpus;
use urgency::train_eval::{run_experiment, ExperimentConfig, ExperimentData, Protocol};

fn main() -> urgency::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let runs = args.next().flatten().unwrap_or(10);
    let epochs = args.next().flatten().unwrap_or(15);

    let corpus = imbalanced_corpus(2000, 0.19, 16, 0);
    let data = ExperimentData {
        examples: corpus.examples,
        vocab_size: corpus.vocab_size,
        embeddings: None,
    };
    let mut cfg = ExperimentConfig::new(Protocol::Split40_60);
    cfg.runs = runs;
    cfg.hp = HyperParams {
        max_len: 16,
        embed_dim: 32,
        hidden: 32,
        z_dim: 8,
        ..HyperParams::default()
    };
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 3e-3;

    let start = Instant::now();
    let summary = run_experiment(&data, &cfg)?;
    println!("{} runs in {:.1}s", runs, start.elapsed().as_secs_f64());
    println!(
        "{:<5} {:>18} {:>18} {:>18} {:>18}",
        "model", "accuracy", "entropy", "urgent recall", "urgent f1"
    );
    for m in &summary.models {
        let cell = |s: urgency::train_eval::MetricStat| format!("{:.4} ± {:.5}", s.mean, s.variance);
        println!(
            "{:<5} {:>18} {:>18} {:>18} {:>18}",
            m.model_kind,
            cell(m.accuracy),
            cell(m.mean_entropy),
            cell(m.urgent_recall),
            cell(m.urgent_f1)
        );
    }
    for c in &summary.comparisons {
        match c.p_two_sided {
            Some(p) => println!("{} vs base on {}: two-sided p = {p:.4}", c.model_kind, c.metric),
            None => println!(
                "{} vs base on {}: {}",
                c.model_kind,
                c.metric,
                c.note.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(())
}
