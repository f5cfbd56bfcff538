//! Closed-form KL between diagonal Gaussians next to a Monte Carlo estimate,
//! and the KL warm-up schedule.

use urgency::diffcore::RngStream;
use urgency::vi::{kl_diag_gaussians, GaussianDiag, ViConfig};

fn monte_carlo_kl(q: &GaussianDiag, p: &GaussianDiag, n: usize, rng: &mut RngStream) -> f64 {
    (0..n)
        .map(|_| {
            let eps: Vec<f64> = (0..q.dim()).map(|_| rng.standard_normal()).collect();
            let z = q.reparameterize(&eps);
            q.log_density(&z) - p.log_density(&z)
        })
        .sum::<f64>()
        / n as f64
}

fn main() -> urgency::Result<()> {
    let mut rng = RngStream::new(2024, 0);
    let cases = [
        (GaussianDiag::new(vec![1.0], vec![0.0])?, GaussianDiag::standard(1)),
        (GaussianDiag::new(vec![0.0], vec![1.0])?, GaussianDiag::standard(1)),
        (
            GaussianDiag::new(vec![0.3, -1.2, 0.5], vec![-0.5, 0.2, 0.0])?,
            GaussianDiag::new(vec![0.0, -1.0, 1.0], vec![0.1, 0.0, -0.3])?,
        ),
    ];
    for (q, p) in &cases {
        let exact = kl_diag_gaussians(q, p)?;
        let mc = monte_carlo_kl(q, p, 100_000, &mut rng);
        println!("closed form {exact:.6}   monte carlo {mc:.6}");
    }

    let cfg = ViConfig {
        kl_warmup_epochs: 4,
        ..ViConfig::default()
    };
    let schedule: Vec<String> = (0..6).map(|e| format!("{:.2}", cfg.kl_weight_at(e))).collect();
    println!("KL weight per epoch with a 4-epoch warm-up: {}", schedule.join(" "));
    Ok(())
}
