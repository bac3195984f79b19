use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest series length for which the exact null distribution is used.
const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KendallTau {
    /// Kendall's tau-b.
    pub tau: f64,
    /// Two-sided p-value for the null of no association.
    pub p_value: f64,
    /// Whether `p_value` came from the exact permutation distribution.
    pub exact: bool,
}

/// Rank correlation between two annual series (e.g. countabilities of two areas).
///
/// Exact p-values are used for untied series up to length 12; otherwise the
/// tie-corrected normal approximation.
pub fn cross_series_correlation(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::InvalidArgument(format!("series lengths differ ({n} vs {})", y.len())));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("need at least three paired values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series must be finite".into()));
    }

    let (mut concordant, mut discordant) = (0u64, 0u64);
    let (mut tied_x, mut tied_y) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    if tied_x == pairs || tied_y == pairs {
        return Err(Error::InvalidArgument("a series is constant; tau is undefined".into()));
    }
    let s = concordant as f64 - discordant as f64;
    let tau = s / (((pairs - tied_x) as f64) * ((pairs - tied_y) as f64)).sqrt();

    if tied_x == 0 && tied_y == 0 && n <= EXACT_MAX_N {
        let counts = inversion_counts(n);
        let total: f64 = counts.iter().sum();
        let d = discordant as usize;
        let lower: f64 = counts[..=d].iter().sum::<f64>() / total;
        let upper: f64 = counts[d..].iter().sum::<f64>() / total;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(KendallTau { tau, p_value: p, exact: true });
    }

    let nf = n as f64;
    let tx = tie_groups(x);
    let ty = tie_groups(y);
    let sum = |g: &[f64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&tx, &|t| t * (t - 1.0)) * sum(&ty, &|t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = sum(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&ty, &|t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let z = s / var.sqrt();
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(KendallTau { tau, p_value: p, exact: false })
}

/// Number of permutations of `n` items with `k` inversions, for every `k`.
fn inversion_counts(n: usize) -> Vec<f64> {
    let mut counts = vec![1.0];
    for m in 2..=n {
        let max = counts.len() - 1 + (m - 1);
        let mut next = vec![0.0; max + 1];
        for (k, &c) in counts.iter().enumerate() {
            for j in 0..m {
                next[k + j] += c;
            }
        }
        counts = next;
    }
    counts
}

/// Sizes of groups of equal values (only groups larger than one).
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut run = 1usize;
    for w in s.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                out.push(run as f64);
            }
            run = 1;
        }
    }
    if run > 1 {
        out.push(run as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_concordance_and_discordance() {
        let up = [1.0, 2.0, 3.0, 4.0, 5.0];
        let down = [9.0, 7.0, 5.0, 3.0, 1.0];
        assert_eq!(cross_series_correlation(&up, &up).unwrap().tau, 1.0);
        assert_eq!(cross_series_correlation(&up, &down).unwrap().tau, -1.0);
    }

    #[test]
    fn one_swap_in_four() {
        let k = cross_series_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((k.tau - 2.0 / 3.0).abs() < 1e-15);
        assert!(k.exact);
        // 4 of 24 permutations have <= 1 inversion and 4 have >= 5: p = 2 * 4 / 24
        assert!((k.p_value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inversion_counts_are_mahonian() {
        assert_eq!(inversion_counts(4), vec![1.0, 3.0, 5.0, 6.0, 5.0, 3.0, 1.0]);
        assert_eq!(inversion_counts(12).iter().sum::<f64>(), 479_001_600.0);
    }

    #[test]
    fn constant_series_is_an_error() {
        assert!(cross_series_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(cross_series_correlation(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(cross_series_correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_use_tau_b_and_normal_approximation() {
        let x = [1.0, 2.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 2.0, 5.0];
        let k = cross_series_correlation(&x, &y).unwrap();
        assert!(!k.exact);
        // C = 7, D = 1, one tie in each series: (7 - 1) / sqrt(9 * 9)
        assert!((k.tau - 6.0 / 9.0).abs() < 1e-12);
        assert!(k.p_value > 0.0 && k.p_value < 1.0);
    }

    #[test]
    fn long_series_use_normal_approximation() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let k = cross_series_correlation(&x, &y).unwrap();
        assert!(!k.exact);
        assert!((0.0..=1.0).contains(&k.p_value));
    }
}
