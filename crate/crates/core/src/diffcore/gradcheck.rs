//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::params::ParamStore;
use super::rng::RngStream;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Overwrites every parameter with `U(−half_width, half_width)` draws.
///
/// Check fixtures use this instead of the training initialization: the small
/// training-time scales leave some deep coordinates with gradients near the
/// finite-difference noise floor.
pub fn randomize_uniform(store: &mut ParamStore, half_width: f64, rng: &mut RngStream) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.uniform_range(-half_width, half_width);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub failures: Vec<CoordinateFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the reverse-pass gradient of `loss` with central differences
/// `(f(w+ε) − f(w−ε)) / 2ε` over every coordinate of every parameter in
/// `store`. `loss` must be deterministic: any randomness has to come from
/// streams it re-derives on each call.
pub fn grad_check<F>(name: &str, store: &ParamStore, loss: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = loss(&mut tape)?;
        tape.backward(out)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = loss(&mut tape)?;
        Ok(tape.scalar(out))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        name: name.to_string(),
        coordinates: 0,
        max_relative_error: 0.0,
        failures: Vec::new(),
    };
    for (id, p) in store.iter() {
        let dense = analytic.dense(id, p.value.shape());
        for i in 0..p.value.len() {
            let original = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = original + cfg.epsilon;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = original - cfg.epsilon;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = dense.data()[i];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            report.max_relative_error = report.max_relative_error.max(err);
            if err > cfg.tolerance {
                report.failures.push(CoordinateFailure {
                    param: p.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    relative_error: err,
                });
            }
        }
    }
    Ok(report)
}
