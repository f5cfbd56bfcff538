use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of nonzero differences handled with the exact distribution.
pub const EXACT_MAX_N: usize = 25;
/// Fewest nonzero differences accepted.
pub const MIN_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two_sided",
            Alternative::Less => "less",
            Alternative::Greater => "greater",
        })
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_sided" | "two-sided" => Ok(Alternative::TwoSided),
            "less" => Ok(Alternative::Less),
            "greater" => Ok(Alternative::Greater),
            other => Err(Error::Config(format!("unknown alternative {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Nonzero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    pub p_less: f64,
    pub p_greater: f64,
    pub exact: bool,
}

impl WilcoxonResult {
    pub fn p_value(&self, alternative: Alternative) -> f64 {
        match alternative {
            Alternative::TwoSided => self.p_two_sided,
            Alternative::Less => self.p_less,
            Alternative::Greater => self.p_greater,
        }
    }
}

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0; abs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && abs[order[end]] == abs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share the average rank (start+1+end)/2
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

/// Null distribution of `2·W⁺` for the given doubled ranks: entry `s` is the
/// probability that the ranks with positive sign sum to `s`.
pub fn signed_rank_distribution(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let scale = 0.5f64.powi(doubled_ranks.len() as i32);
    counts.iter().map(|c| c * scale).collect()
}

/// Null distribution of `W⁺` without ties for `n` differences.
pub fn exact_distribution(n: usize) -> Vec<f64> {
    let ranks: Vec<u64> = (1..=n as u64).map(|r| 2 * r).collect();
    signed_rank_distribution(&ranks).into_iter().step_by(2).collect()
}

/// Wilcoxon signed-rank test on paired samples `a`, `b` (differences `a − b`).
///
/// Zero differences are dropped and tied magnitudes receive average ranks.
/// With at most 25 remaining differences the exact null distribution is
/// used, otherwise the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "wilcoxon",
            format!("{} vs {} observations", a.len(), b.len()),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("non-finite paired difference".into()));
    }
    let n = diffs.len();
    if n < MIN_N {
        return Err(Error::InsufficientData(format!(
            "{n} nonzero paired differences; need at least {MIN_N}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let plus2: u64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = plus2 as f64 / 2.0;
    let w_minus = (total2 - plus2) as f64 / 2.0;

    let (p_less, p_greater, exact) = if n <= EXACT_MAX_N {
        let dist = signed_rank_distribution(&ranks);
        let s = plus2 as usize;
        let p_less: f64 = dist[..=s].iter().sum();
        let p_greater: f64 = dist[s..].iter().sum();
        (p_less.min(1.0), p_greater.min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let sd = var.sqrt();
        let z_less = (w_plus - mean + 0.5) / sd;
        let z_greater = (w_plus - mean - 0.5) / sd;
        (normal.cdf(z_less), normal.sf(z_greater), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_two_sided: (2.0 * p_less.min(p_greater)).min(1.0),
        p_less,
        p_greater,
        exact,
    })
}

pub fn wilcoxon_p(a: &[f64], b: &[f64], alternative: Alternative) -> Result<f64> {
    Ok(wilcoxon_signed_rank(a, b)?.p_value(alternative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force over all 2^n sign assignments of the doubled ranks.
    fn enumerate(ranks: &[u64], observed2: u64) -> (f64, f64) {
        let n = ranks.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            le += u64::from(s <= observed2);
            ge += u64::from(s >= observed2);
        }
        let total = (1u64 << n) as f64;
        (le as f64 / total, ge as f64 / total)
    }

    #[test]
    fn all_positive_five() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 5]).unwrap();
        assert_eq!(r.p_greater, 0.03125);
        assert_eq!(r.p_less, 1.0);
        assert_eq!(r.p_two_sided, 0.0625);
        assert_eq!(r.w_plus, 15.0);
        assert!(r.exact);
    }

    #[test]
    fn equal_samples_are_insufficient() {
        let a = [0.3, 0.1, 0.2, 0.5, 0.9, 0.4];
        assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::InsufficientData(_))));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn distribution_sums_to_one() {
        for n in 1..=12 {
            let d = exact_distribution(n);
            assert_eq!(d.len(), n * (n + 1) / 2 + 1);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(doubled_ranks(&[1.0, 3.0, 1.0, 2.0]), vec![3, 8, 3, 6]);
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_the_boundary() {
        let d: Vec<f64> = (1..=25)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let exact = wilcoxon_signed_rank(&d, &[0.0; 25]).unwrap();
        let mut d26 = d.clone();
        d26.push(0.5);
        let approx = wilcoxon_signed_rank(&d26, &[0.0; 26]).unwrap();
        assert!(!approx.exact);
        assert!((exact.p_greater - approx.p_greater).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn matches_enumeration(d in proptest::collection::vec(prop_oneof![(-6i32..=6).prop_map(f64::from), -5.0f64..5.0], 5..12)) {
            let nonzero: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
            prop_assume!(nonzero.len() >= MIN_N);
            let r = wilcoxon_signed_rank(&d, &vec![0.0; d.len()]).unwrap();
            let abs: Vec<f64> = nonzero.iter().map(|x| x.abs()).collect();
            let ranks = doubled_ranks(&abs);
            let (le, ge) = enumerate(&ranks, (2.0 * r.w_plus) as u64);
            prop_assert!((r.p_less - le).abs() < 1e-12);
            prop_assert!((r.p_greater - ge).abs() < 1e-12);
        }

        #[test]
        fn negation_swaps_tails(d in proptest::collection::vec(-5.0f64..5.0, 5..30)) {
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let zeros = vec![0.0; d.len()];
            let r = wilcoxon_signed_rank(&d, &zeros).unwrap();
            let s = wilcoxon_signed_rank(&neg, &zeros).unwrap();
            prop_assert!((r.p_greater - s.p_less).abs() < 1e-12);
            prop_assert!((r.p_less - s.p_greater).abs() < 1e-12);
        }
    }
}
