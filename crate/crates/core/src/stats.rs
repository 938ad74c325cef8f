//! Per-variant accuracy summaries, pairwise Mann-Whitney U tests and
//! best/worst marking.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::experiment::RunRecord;
use crate::loss::LossVariant;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Samples with fewer observations than this on either side get the exact test.
pub const EXACT_BELOW: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub dataset: String,
    pub variant: LossVariant,
    pub mean: f64,
    /// Sample standard deviation (n − 1 divisor).
    pub std: f64,
    pub sample: Vec<f64>,
}

pub fn mean_std(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.len() < 2 {
        return Err(Error::Empty(format!("need at least 2 observations, got {}", sample.len())));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

pub fn summarize_sample(dataset: &str, variant: LossVariant, sample: Vec<f64>) -> Result<VariantSummary> {
    let (mean, std) = mean_std(&sample)?;
    Ok(VariantSummary {
        dataset: dataset.to_string(),
        variant,
        mean,
        std,
        sample,
    })
}

/// One summary per (dataset, variant) over completed runs, in dataset then
/// variant order.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<VariantSummary>> {
    let mut groups: BTreeMap<(&str, LossVariant), Vec<(usize, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_completed()) {
        groups
            .entry((r.dataset.as_str(), r.variant))
            .or_default()
            .push((r.run, r.final_test_accuracy));
    }
    if groups.is_empty() {
        return Err(Error::Empty("no completed runs to summarise".into()));
    }
    groups
        .into_iter()
        .map(|((dataset, variant), mut runs)| {
            runs.sort_by_key(|&(r, _)| r);
            summarize_sample(dataset, variant, runs.into_iter().map(|(_, a)| a).collect())
                .map_err(|e| Error::Report(format!("{dataset}/{variant}: {e}")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: PValueMethod,
}

impl MannWhitney {
    pub fn significant(&self) -> bool {
        self.p < SIGNIFICANCE_LEVEL
    }
}

/// Mid-ranks of the pooled sample, doubled so that they are integers.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i + 1) + (j + 1)) / 2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of `k`-subsets of `scores` reaching each possible sum.
fn subset_sum_counts(scores: &[u64], k: usize) -> Vec<u128> {
    let max_sum: u64 = scores.iter().sum();
    let width = max_sum as usize + 1;
    let mut table = vec![vec![0u128; width]; k + 1];
    table[0][0] = 1;
    for &s in scores {
        let s = s as usize;
        for j in (1..=k).rev() {
            let (lo, hi) = table.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for total in (s..width).rev() {
                cur[total] += prev[total - s];
            }
        }
    }
    table.swap_remove(k)
}

/// Two-sided Mann-Whitney U test with mid-ranks for ties. The exact
/// permutation distribution is used when either sample has fewer than
/// [`EXACT_BELOW`] observations; otherwise a tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Mann-Whitney U needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Report("Mann-Whitney U got a NaN observation".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let rank_sum_a: u64 = ranks[..na].iter().sum();
    // 2·U_A = 2·R_A − nA(nA + 1)
    let u = (rank_sum_a as f64 - (na * (na + 1)) as f64) / 2.0;

    if na < EXACT_BELOW || nb < EXACT_BELOW {
        let center = (na * (n + 1)) as i64;
        let observed = (rank_sum_a as i64 - center).abs();
        let counts = subset_sum_counts(&ranks, na);
        let mut extreme: u128 = 0;
        let mut total: u128 = 0;
        for (sum, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            total += c;
            if (sum as i64 - center).abs() >= observed {
                extreme += c;
            }
        }
        return Ok(MannWhitney {
            u,
            p: extreme as f64 / total as f64,
            method: PValueMethod::Exact,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let variance = naf * nbf / 12.0 * ((nf + 1.0) - tie_term);
    let p = if variance <= 0.0 {
        1.0
    } else {
        let z = (((u - naf * nbf / 2.0).abs() - 0.5).max(0.0)) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
    };
    Ok(MannWhitney {
        u,
        p,
        method: PValueMethod::Normal,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub dataset: String,
    pub a: LossVariant,
    pub b: LossVariant,
    pub u: f64,
    pub p: f64,
    pub significant: bool,
}

/// Every unordered pair of variants within each dataset.
pub fn pairwise_tests(summaries: &[VariantSummary]) -> Result<Vec<PairwiseTest>> {
    let mut out = Vec::new();
    for (i, sa) in summaries.iter().enumerate() {
        for sb in summaries[i + 1..].iter().filter(|s| s.dataset == sa.dataset) {
            let mw = mann_whitney_u(&sa.sample, &sb.sample)?;
            out.push(PairwiseTest {
                dataset: sa.dataset.clone(),
                a: sa.variant,
                b: sb.variant,
                u: mw.u,
                p: mw.p,
                significant: mw.significant(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marking {
    pub dataset: String,
    pub variant: LossVariant,
    pub best: bool,
    pub worst: bool,
}

/// A variant is best if it has the highest mean or is not significantly
/// different from a variant that does; worst is the mirror image.
pub fn mark_best_worst(summaries: &[VariantSummary], tests: &[PairwiseTest]) -> Vec<Marking> {
    let differs = |ds: &str, x: LossVariant, y: LossVariant| -> bool {
        tests
            .iter()
            .find(|t| t.dataset == ds && ((t.a == x && t.b == y) || (t.a == y && t.b == x)))
            .is_some_and(|t| t.significant)
    };
    let mut out = Vec::with_capacity(summaries.len());
    for s in summaries {
        let peers: Vec<&VariantSummary> = summaries.iter().filter(|o| o.dataset == s.dataset).collect();
        let hi = peers.iter().map(|o| o.mean).fold(f64::NEG_INFINITY, f64::max);
        let lo = peers.iter().map(|o| o.mean).fold(f64::INFINITY, f64::min);
        let near = |target: f64| {
            peers
                .iter()
                .filter(|o| o.mean == target)
                .any(|o| o.variant == s.variant || !differs(&s.dataset, s.variant, o.variant))
        };
        out.push(Marking {
            dataset: s.dataset.clone(),
            variant: s.variant,
            best: near(hi),
            worst: near(lo),
        });
    }
    out
}

pub fn summary_csv(summaries: &[VariantSummary], marks: &[Marking]) -> String {
    let mut s = String::from("dataset,variant,mean,std,best,worst\n");
    for v in summaries {
        let m = marks.iter().find(|m| m.dataset == v.dataset && m.variant == v.variant);
        let (best, worst) = m.map_or((false, false), |m| (m.best, m.worst));
        writeln!(s, "{},{},{},{},{},{}", v.dataset, v.variant, v.mean, v.std, best, worst).unwrap();
    }
    s
}

pub fn pairwise_csv(tests: &[PairwiseTest]) -> String {
    let mut s = String::from("dataset,a,b,u,p,significant\n");
    for t in tests {
        writeln!(s, "{},{},{},{},{},{}", t.dataset, t.a, t.b, t.u, t.p, t.significant).unwrap();
    }
    s
}
