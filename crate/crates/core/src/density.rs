//! Scalar log-densities and normal-tail helpers used by the likelihood.

use statrs::function::beta::ln_beta;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the normal CDF is evaluated through a continued fraction.
const TAIL_SWITCH: f64 = -8.0;

/// Log-density of a normal with the given mean and standard deviation at `x`.
pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Log-density of `LN(mu, sd^2)` at `x > 0`, where `mu` is the log-scale location.
pub fn lognormal_ln_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if sd == 0.0 {
        return if x.ln() == mu { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    normal_ln_pdf(x.ln(), mu, sd) - x.ln()
}

pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let kf = k as f64;
    kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)
}

/// Gamma with shape `alpha` and rate `beta`.
pub fn gamma_ln_pdf(x: f64, alpha: f64, beta: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * x.ln() - beta * x
}

pub fn exponential_ln_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    rate.ln() - rate * x
}

pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    // uniform case stays finite at the end points
    if a == 1.0 && b == 1.0 {
        return 0.0;
    }
    let left = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let right = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - x).ln() };
    left + right - ln_beta(a, b)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Phi(-x) / phi(x)` for `x > 0` by its continued fraction.
fn mills_ratio(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=200).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln Phi(x)`, accurate far into the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x >= TAIL_SWITCH {
        std_normal_cdf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(-x).ln()
    }
}

/// `phi(x) / Phi(x)`, the derivative of `ln Phi(x)`.
pub fn inverse_mills(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x >= TAIL_SWITCH {
        std_normal_pdf(x) / std_normal_cdf(x)
    } else {
        1.0 / mills_ratio(-x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, Continuous, ContinuousCDF, Discrete, Gamma, LogNormal, Normal, Poisson};

    #[test]
    fn textbook_densities_match_statrs() {
        let ln = LogNormal::new(1.3, 0.7).unwrap();
        assert!((lognormal_ln_pdf(2.5, 1.3, 0.7) - ln.ln_pdf(2.5)).abs() < 1e-13);
        let n = Normal::new(-0.4, 2.0).unwrap();
        assert!((normal_ln_pdf(1.1, -0.4, 2.0) - n.ln_pdf(1.1)).abs() < 1e-13);
        let p = Poisson::new(7.5).unwrap();
        assert!((poisson_ln_pmf(4, 7.5) - p.ln_pmf(4)).abs() < 1e-12);
        let g = Gamma::new(2.5, 3.0).unwrap();
        assert!((gamma_ln_pdf(0.8, 2.5, 3.0) - g.ln_pdf(0.8)).abs() < 1e-12);
        let b = Beta::new(2.0, 5.0).unwrap();
        assert!((beta_ln_pdf(0.3, 2.0, 5.0) - b.ln_pdf(0.3)).abs() < 1e-12);
        assert!((std_normal_cdf(0.7) - Normal::standard().cdf(0.7)).abs() < 1e-15);
    }

    #[test]
    fn poisson_at_zero_is_minus_lambda() {
        assert!((poisson_ln_pmf(0, 3.25) + 3.25).abs() < 1e-15);
        assert_eq!(poisson_ln_pmf(0, 0.0), 0.0);
        assert_eq!(poisson_ln_pmf(2, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_beta_is_zero_on_closed_interval() {
        assert_eq!(beta_ln_pdf(0.0, 1.0, 1.0), 0.0);
        assert_eq!(beta_ln_pdf(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn log_cdf_is_continuous_across_the_switch() {
        let below = ln_std_normal_cdf(TAIL_SWITCH - 1e-9);
        let above = ln_std_normal_cdf(TAIL_SWITCH + 1e-9);
        assert!((below - above).abs() < 1e-7);
        let mb = inverse_mills(TAIL_SWITCH - 1e-9);
        let ma = inverse_mills(TAIL_SWITCH + 1e-9);
        assert!((mb - ma).abs() / ma < 1e-7);
    }

    #[test]
    fn log_cdf_deep_tail_matches_high_precision_values() {
        // reference values from 40-digit arithmetic
        assert!((ln_std_normal_cdf(-40.0) / -804.608_442_013_753_8 - 1.0).abs() < 1e-14);
        assert!((ln_std_normal_cdf(-10.0) / -53.231_285_150_512_47 - 1.0).abs() < 1e-14);
        assert!(inverse_mills(-40.0) > 40.0);
    }

    #[test]
    fn inverse_mills_is_derivative_of_log_cdf() {
        for &x in &[-30.0, -9.0, -3.0, 0.0, 2.0, 6.0] {
            let h = 1e-5;
            let fd = (ln_std_normal_cdf(x + h) - ln_std_normal_cdf(x - h)) / (2.0 * h);
            assert!((fd - inverse_mills(x)).abs() < 1e-6 * (1.0 + fd.abs()), "x = {x}");
        }
    }
}
