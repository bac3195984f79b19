use std::io::Write;

use serde::Serialize;

use super::chain::{ChainOutput, DecodedDraws};
use crate::error::Result;
use crate::stats::{mean, quantile_sorted};

/// Quantile levels reported for every parameter.
pub const SUMMARY_LEVELS: [f64; 5] = [0.025, 0.10, 0.50, 0.90, 0.975];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// Values at [`SUMMARY_LEVELS`].
    pub quantiles: Vec<f64>,
    /// `None` when the draws are constant.
    pub ess: Option<f64>,
    /// Ratio of pooled to within-chain spread; needs two or more chains.
    pub psrf: Option<f64>,
    /// The same statistic computed on half-chains.
    pub split_psrf: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub acceptance_rates: Vec<f64>,
    pub parameters: Vec<ParameterSummary>,
}

/// Summarizes already-decoded draws, one [`DecodedDraws`] per chain.
pub fn summarize(chains: &[DecodedDraws], acceptance_rates: Vec<f64>) -> Summary {
    assert!(!chains.is_empty(), "diagnostics need at least one chain");
    let names = &chains[0].names;
    let n = chains.iter().map(|c| c.rows.len()).min().unwrap_or(0);
    let parameters = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.rows[..n].iter().map(|r| r[j]).collect()).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            summarize_one(name, &refs)
        })
        .collect();
    Summary { n_chains: chains.len(), draws_per_chain: n, acceptance_rates, parameters }
}

/// Summary over the raw (unconstrained) coordinates of one or more chains.
pub fn diagnostics(chains: &[ChainOutput]) -> Summary {
    let decoded: Vec<DecodedDraws> = chains
        .iter()
        .map(|c| DecodedDraws { names: c.names.clone(), rows: c.draws.clone() })
        .collect();
    summarize(&decoded, chains.iter().map(|c| c.acceptance_rate).collect())
}

fn summarize_one(name: &str, chains: &[&[f64]]) -> ParameterSummary {
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let m = mean(&pooled);
    let sd = if pooled.len() > 1 {
        (pooled.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles: Vec<f64> = SUMMARY_LEVELS.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
    let degenerate = sorted.first() == sorted.last();
    ParameterSummary {
        name: name.to_string(),
        mean: m,
        sd,
        median: quantile_sorted(&sorted, 0.5),
        quantiles,
        ess: effective_sample_size(chains),
        psrf: potential_scale_reduction(chains),
        split_psrf: split_potential_scale_reduction(chains),
        degenerate,
    }
}

/// Autocovariance at `lag` with divisor `n`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
///
/// Chains are truncated to the shortest. Returns `None` for fewer than four
/// draws, non-finite values or a constant sample.
pub fn effective_sample_size(chains: &[&[f64]]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 || chains.iter().any(|c| c[..n].iter().any(|v| !v.is_finite())) {
        return None;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, 0)).collect();
    let nf = n as f64;
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = w * (nf - 1.0) / nf;
    if m > 1 {
        let gm = mean(&means);
        var_plus += means.iter().map(|x| (x - gm) * (x - gm)).sum::<f64>() / (m - 1) as f64;
    }
    if !(var_plus > 0.0) || !(w > 0.0) {
        return None;
    }
    let rho = |lag: usize| -> f64 {
        let a = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m as f64;
        1.0 - (w - a) / var_plus
    };

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let total = (m * n) as f64;
    let ess = total / tau.max(1.0 / total.log10());
    Some(ess.min(total * total.log10()))
}

fn between_within(chains: &[&[f64]]) -> Option<(f64, f64)> {
    let n = chains.iter().map(|c| c.len()).min()?;
    if chains.len() < 2 || n < 2 {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64)
        .sum::<f64>()
        / chains.len() as f64;
    let gm = mean(&means);
    let between = means.iter().map(|x| (x - gm) * (x - gm)).sum::<f64>() / means.len() as f64;
    Some((between, within))
}

/// `sqrt(total variance / mean within-chain variance)` over the supplied chains,
/// with the total variance decomposed as within plus between-means. Identical
/// chains give exactly 1.
pub fn potential_scale_reduction(chains: &[&[f64]]) -> Option<f64> {
    let (b, w) = between_within(chains)?;
    if !(w > 0.0) {
        return None;
    }
    Some((1.0 + b / w).sqrt())
}

/// Split-chain potential scale reduction: each chain is halved and the
/// classical `sqrt(((n-1)/n W + B/n) / W)` is computed over the halves.
pub fn split_potential_scale_reduction(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(|c| c.len()).min()? / 2;
    if n < 2 {
        return None;
    }
    let halves: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..n], &c[n..2 * n]]).collect();
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / halves.len() as f64;
    if !(w > 0.0) {
        return None;
    }
    let gm = mean(&means);
    let b = nf * means.iter().map(|x| (x - gm) * (x - gm)).sum::<f64>() / (means.len() - 1) as f64;
    Some((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// One row per stored draw: `chain,iteration,<names...>`.
pub fn write_trace_csv<W: Write>(out: W, chains: &[(u64, &[usize], &DecodedDraws)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some((_, _, first)) = chains.first() {
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(first.names.iter().cloned());
        w.write_record(&header)?;
    }
    for (chain, iterations, draws) in chains {
        for (it, row) in iterations.iter().zip(&draws.rows) {
            let mut rec = vec![chain.to_string(), it.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
