//! Self-contained statistics for the evaluation pipelines: AUROC, Cohen's
//! kappa, agreement, Wilcoxon signed-rank, Mann-Whitney U, binomial
//! volatility, and the per-record permutation sigma.
//!
//! The signed-rank and U tests carry exact small-sample branches because the
//! per-dataset samples these pipelines see (n = 20..60) sit where normal
//! approximations are marginal.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("both label classes must be present")]
    SingleClass,
    #[error("sequences have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("chance agreement is 1 with imperfect observed agreement")]
    DegenerateMarginals,
    #[error("all differences are zero")]
    AllZeroDiffs,
    #[error("score is not finite")]
    NonFiniteScore,
}

/// Scores paired with binary labels, the input to AUROC.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    pairs: Vec<(f64, bool)>,
}

impl ScoredLabels {
    pub fn new(pairs: Vec<(f64, bool)>) -> Result<Self, StatsError> {
        if pairs.is_empty() {
            return Err(StatsError::Empty);
        }
        if pairs.iter().any(|(s, _)| !s.is_finite()) {
            return Err(StatsError::NonFiniteScore);
        }
        Ok(ScoredLabels { pairs })
    }

    pub fn pairs(&self) -> &[(f64, bool)] {
        &self.pairs
    }
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// AUROC in its rank form: P(score+ > score-) + P(tie)/2, computed exactly
/// over all positive-negative pairs.
pub fn auroc(data: &ScoredLabels) -> Result<f64, StatsError> {
    let n_pos = data.pairs.iter().filter(|(_, l)| *l).count();
    let n_neg = data.pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(StatsError::SingleClass);
    }
    let scores: Vec<f64> = data.pairs.iter().map(|(s, _)| *s).collect();
    let ranks = average_ranks(&scores);
    let rank_sum_pos: f64 = data
        .pairs
        .iter()
        .zip(&ranks)
        .filter(|((_, l), _)| *l)
        .map(|(_, r)| *r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Cohen's kappa with marginal-product chance agreement. Perfect chance
/// agreement is only legal when observed agreement is also perfect.
pub fn cohens_kappa<T: Eq + std::hash::Hash + Clone>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = a.len() as f64;
    let mut count_a: HashMap<&T, usize> = HashMap::new();
    let mut count_b: HashMap<&T, usize> = HashMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        *count_a.entry(x).or_default() += 1;
        *count_b.entry(y).or_default() += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let mut p_e = 0.0;
    for (label, ca) in &count_a {
        if let Some(cb) = count_b.get(*label) {
            p_e += (*ca as f64 / n) * (*cb as f64 / n);
        }
    }
    if (1.0 - p_e).abs() < 1e-12 {
        return if (1.0 - p_o).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(StatsError::DegenerateMarginals)
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Fraction of positions where the two sequences agree.
pub fn agreement<T: Eq>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Binomial standard deviation sqrt(p(1-p)/n) of an accuracy estimate.
pub fn binomial_sd(p: f64, n: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Propagated standard error of a macro-average over k independent
/// binomials: (1/k) * sqrt(sum p_i(1-p_i)/n).
pub fn macro_se(ps: &[f64], n: usize) -> f64 {
    if ps.is_empty() {
        return 0.0;
    }
    let total: f64 = ps
        .iter()
        .map(|&p| {
            let p = p.clamp(0.0, 1.0);
            p * (1.0 - p) / n.max(1) as f64
        })
        .sum();
    total.sqrt() / ps.len() as f64
}

/// Abramowitz-Stegun 7.1.26 erf approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonTest {
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// min(W+, W-), the classic signed-rank statistic.
    pub statistic: f64,
    /// P(positive shift): probability of a W+ at least this large under H0.
    pub p_greater: f64,
    pub p_two_sided: f64,
    pub method: TestMethod,
}

const WILCOXON_EXACT_MAX_N: usize = 20;

/// Distribution of 2*W+ over all sign assignments, as pattern counts per sum.
/// Ranks arrive doubled so tied (half-integer) ranks index exactly.
fn signed_rank_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in doubled_ranks {
        for s in (0..=(total - r) as usize).rev() {
            if counts[s] > 0.0 {
                counts[s + r as usize] += counts[s];
            }
        }
    }
    counts
}

/// Wilcoxon signed-rank test on paired differences. Zeros are dropped, ties
/// get average ranks; exact enumeration up to n = 20, tie-corrected normal
/// approximation with continuity correction above.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonTest, StatsError> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFiniteScore);
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(StatsError::AllZeroDiffs);
    }
    let n = nonzero.len();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_greater, p_two_sided, method) = if n <= WILCOXON_EXACT_MAX_N {
        let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
        let counts = signed_rank_counts(&doubled);
        let patterns = 2f64.powi(n as i32);
        let w2 = (w_plus * 2.0).round() as usize;
        let p_ge: f64 = counts[w2..].iter().sum::<f64>() / patterns;
        let p_le: f64 = counts[..=w2].iter().sum::<f64>() / patterns;
        (p_ge, (2.0 * p_ge.min(p_le)).min(1.0), TestMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_groups(&abs).iter().map(|&t| t * t * t - t).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let sd = var.sqrt();
        let p_ge = 1.0 - normal_cdf((w_plus - mean - 0.5) / sd);
        let p_le = normal_cdf((w_plus - mean + 0.5) / sd);
        (
            p_ge,
            (2.0 * p_ge.min(p_le)).min(1.0),
            TestMethod::NormalApprox,
        )
    };
    Ok(WilcoxonTest {
        n_nonzero: n,
        w_plus,
        w_minus,
        statistic,
        p_greater,
        p_two_sided,
        method,
    })
}

fn tie_groups(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push((j - i) as f64);
        i = j;
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct MannWhitneyTest {
    pub u: f64,
    pub u_other: f64,
    /// P(x tends larger): probability of a U at least this large under H0.
    pub p_greater: f64,
    pub p_two_sided: f64,
    pub method: TestMethod,
}

const MANN_WHITNEY_EXACT_MAX_N: usize = 12;

/// Counts of doubled-rank-sum values over all size-k subsets of the pooled
/// doubled ranks.
fn subset_sum_counts(doubled_ranks: &[u64], k: usize) -> Vec<Vec<f64>> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut dp = vec![vec![0.0f64; total as usize + 1]; k + 1];
    dp[0][0] = 1.0;
    for &r in doubled_ranks {
        for size in (0..k).rev() {
            for s in 0..=(total - r) as usize {
                if dp[size][s] > 0.0 {
                    let add = dp[size][s];
                    dp[size + 1][s + r as usize] += add;
                }
            }
        }
    }
    dp
}

/// Mann-Whitney U test. Exact enumeration over all label assignments when
/// the pooled size is at most 12, tie-corrected normal approximation above.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitneyTest, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::Empty);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteScore);
    }
    let n1 = x.len();
    let n2 = y.len();
    let pooled: Vec<f64> = x.iter().chain(y.iter()).copied().collect();
    let ranks = average_ranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let u2 = (n1 * n2) as f64 - u1;

    let (p_greater, p_two_sided, method) = if n1 + n2 <= MANN_WHITNEY_EXACT_MAX_N {
        let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
        let dp = subset_sum_counts(&doubled, n1);
        let counts = &dp[n1];
        let n_subsets: f64 = counts.iter().sum();
        let s_obs = (r1 * 2.0).round() as usize;
        let p_ge: f64 = counts[s_obs..].iter().sum::<f64>() / n_subsets;
        let p_le: f64 = counts[..=s_obs].iter().sum::<f64>() / n_subsets;
        (p_ge, (2.0 * p_ge.min(p_le)).min(1.0), TestMethod::Exact)
    } else {
        let nf = (n1 + n2) as f64;
        let mean = (n1 * n2) as f64 / 2.0;
        let tie_term: f64 = tie_groups(&pooled).iter().map(|&t| t * t * t - t).sum();
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        let sd = var.sqrt();
        let p_ge = 1.0 - normal_cdf((u1 - mean - 0.5) / sd);
        let p_le = normal_cdf((u1 - mean + 0.5) / sd);
        (
            p_ge,
            (2.0 * p_ge.min(p_le)).min(1.0),
            TestMethod::NormalApprox,
        )
    };
    Ok(MannWhitneyTest {
        u: u1,
        u_other: u2,
        p_greater,
        p_two_sided,
        method,
    })
}

/// Per-record permutation stability: sample standard deviation of the AUROCs
/// across row orderings, or rejection when fewer than `min_valid` orderings
/// survived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PermSigma {
    Sigma(f64),
    Rejected,
}

pub fn perm_sigma(aurocs: &[f64], min_valid: usize) -> PermSigma {
    if aurocs.len() < min_valid.max(2) {
        return PermSigma::Rejected;
    }
    let n = aurocs.len() as f64;
    let mean = aurocs.iter().sum::<f64>() / n;
    let var = aurocs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    PermSigma::Sigma(var.sqrt())
}
