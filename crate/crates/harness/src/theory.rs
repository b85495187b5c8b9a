//! Simulation-backed checks of the formal claims behind the reward design:
//! variance growth of unguided multi-step loss, the parsimony directions of
//! the lexical state reward, and pruning monotonicity under filter steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use cellground_core::engine::{execute, CmpOp, StepValue, TableState, ToolCall};
use cellground_core::rewards::{lcs_length, tabrouge};
use cellground_core::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub checks: Vec<TheoryCheck>,
    pub all_passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TheoryConfig {
    pub seed: u64,
    pub martingale_paths: usize,
    pub martingale_steps: usize,
    pub parsimony_cases: usize,
    pub pruning_cases: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            seed: 0,
            martingale_paths: 10_000,
            martingale_steps: 8,
            parsimony_cases: 100,
            pruning_cases: 50,
        }
    }
}

/// Martingale loss process: Y_S = Y_{S-1} + unit-variance zero-mean noise.
/// Empirical Var(Y_S) must be nondecreasing in S and match the analytic
/// S * sigma^2 within two standard errors of the variance estimate.
pub fn check_variance_growth(cfg: &TheoryConfig) -> TheoryCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let paths = cfg.martingale_paths;
    let steps = cfg.martingale_steps;
    let mut values = vec![0.0f64; paths];
    let mut variances = Vec::with_capacity(steps);
    for _ in 0..steps {
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += z;
        }
        let mean = values.iter().sum::<f64>() / paths as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (paths as f64 - 1.0);
        variances.push(var);
    }
    let mut passed = true;
    let mut detail = String::new();
    for (i, &var) in variances.iter().enumerate() {
        let s = (i + 1) as f64;
        // Var of the sample variance of a normal sum: 2*sigma^4/(n-1)
        let se = s * (2.0 / (paths as f64 - 1.0)).sqrt();
        if (var - s).abs() > 2.0 * se {
            passed = false;
            detail = format!(
                "Var(Y_{}) = {var:.4} outside {s} +/- {:.4}",
                i + 1,
                2.0 * se
            );
            break;
        }
        if i > 0 && var + 1e-9 < variances[i - 1] {
            passed = false;
            detail = format!(
                "variance decreased: Var(Y_{}) = {:.4} < Var(Y_{}) = {:.4}",
                i + 1,
                var,
                i,
                variances[i - 1]
            );
            break;
        }
    }
    if passed {
        detail = format!(
            "empirical variances {:?} track S over {paths} paths",
            variances
                .iter()
                .map(|v| (v * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        );
    }
    TheoryCheck {
        name: "variance_growth".into(),
        passed,
        detail,
    }
}

const VOCAB: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];
const JUNK: [&str; 4] = ["junk1", "junk2", "junk3", "junk4"];

fn ratio(lcs: usize, len: usize) -> f64 {
    lcs as f64 / len as f64
}

/// One maximal LCS alignment of `q` against `s` as matched `(q index,
/// s index)` pairs, recovered by dynamic-programming backtrace.
fn lcs_alignment(q: &[&str], s: &[&str]) -> Vec<(usize, usize)> {
    let n = q.len();
    let m = s.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..n {
        for j in 0..m {
            dp[i + 1][j + 1] = if q[i] == s[j] {
                dp[i][j] + 1
            } else {
                dp[i][j + 1].max(dp[i + 1][j])
            };
        }
    }
    let mut matched = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if q[i - 1] == s[j - 1] && dp[i][j] == dp[i - 1][j - 1] + 1 {
            matched.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if dp[i - 1][j] >= dp[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    matched.reverse();
    matched
}

/// Parsimony directions of the lexical reward on random token sequences:
/// deleting tokens disjoint from a maximal alignment strictly increases the
/// score; appending tokens denser than the current score increases it, and
/// appending junk below the ratio decreases it.
pub fn check_parsimony_directions(cfg: &TheoryConfig) -> TheoryCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < cfg.parsimony_cases {
        attempts += 1;
        if attempts > cfg.parsimony_cases * 100 {
            return TheoryCheck {
                name: "parsimony_directions".into(),
                passed: false,
                detail: "generator failed to produce eligible cases".into(),
            };
        }
        let q: Vec<&str> = (0..rng.random_range(2..=5))
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
            .collect();
        let mut s: Vec<&str> = (0..rng.random_range(3..=8))
            .map(|_| {
                if rng.random::<f64>() < 0.5 {
                    VOCAB[rng.random_range(0..VOCAB.len())]
                } else {
                    JUNK[rng.random_range(0..JUNK.len())]
                }
            })
            .collect();
        // guarantee a non-empty alignment
        s.push(q[0]);
        let base_lcs = lcs_length(&q, &s);
        let base = ratio(base_lcs, s.len());
        let alignment = lcs_alignment(&q, &s);
        let matched_s: Vec<usize> = alignment.iter().map(|&(_, j)| j).collect();
        let off: Vec<usize> = (0..s.len()).filter(|j| !matched_s.contains(j)).collect();
        if off.is_empty() || base_lcs == 0 {
            continue;
        }

        // deletion of a random non-empty off-alignment subset
        let keep_out: Vec<usize> = off
            .iter()
            .copied()
            .filter(|_| rng.random::<bool>())
            .collect();
        let removed: Vec<usize> = if keep_out.is_empty() {
            vec![off[0]]
        } else {
            keep_out
        };
        let pruned: Vec<&str> = s
            .iter()
            .enumerate()
            .filter(|(j, _)| !removed.contains(j))
            .map(|(_, t)| *t)
            .collect();
        let pruned_score = ratio(lcs_length(&q, &pruned), pruned.len());
        if pruned_score <= base {
            return TheoryCheck {
                name: "parsimony_directions".into(),
                passed: false,
                detail: format!("deletion did not increase score: {base} -> {pruned_score}"),
            };
        }

        // junk append: marginal density 0 < current score, strict decrease
        let mut diluted = s.clone();
        diluted.push(JUNK[0]);
        diluted.push(JUNK[1]);
        let diluted_score = ratio(lcs_length(&q, &diluted), diluted.len());
        if diluted_score >= base {
            return TheoryCheck {
                name: "parsimony_directions".into(),
                passed: false,
                detail: format!("junk append did not decrease score: {base} -> {diluted_score}"),
            };
        }

        // dense append: the question tokens past the last matched question
        // index extend the alignment one-for-one, marginal density 1
        if base < 1.0 {
            let last_q = alignment.last().map(|&(i, _)| i + 1).unwrap_or(0);
            if last_q < q.len() {
                let mut extended = s.clone();
                extended.extend_from_slice(&q[last_q..]);
                let extended_score = ratio(lcs_length(&q, &extended), extended.len());
                if extended_score <= base {
                    return TheoryCheck {
                        name: "parsimony_directions".into(),
                        passed: false,
                        detail: format!(
                            "dense append did not increase score: {base} -> {extended_score}"
                        ),
                    };
                }
            }
        }
        checked += 1;
    }
    TheoryCheck {
        name: "parsimony_directions".into(),
        passed: true,
        detail: format!("{checked} randomized cases hold"),
    }
}

/// Pruning monotonicity: a filter step that removes rows sharing no token
/// with the question never decreases the lexical reward.
pub fn check_pruning_monotonicity(cfg: &TheoryConfig) -> TheoryCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    for case in 0..cfg.pruning_cases {
        let n_rel = rng.random_range(1..=3);
        let n_junk = rng.random_range(1..=4);
        let question: Vec<&str> = (0..rng.random_range(1..=3))
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
            .collect();
        let mut rows = Vec::new();
        for _ in 0..n_rel {
            rows.push(vec![
                "keep".to_string(),
                question[rng.random_range(0..question.len())].to_string(),
            ]);
        }
        for _ in 0..n_junk {
            rows.push(vec![
                "drop".to_string(),
                JUNK[rng.random_range(0..JUNK.len())].to_string(),
            ]);
        }
        let table = Table::new(vec!["flag".into(), "val".into()], rows).unwrap();
        let question_text = question.join(" ");
        let state = TableState::initial(table);
        let before = tabrouge(&question_text, &state).expect("non-empty");
        let out = execute(
            &state,
            &ToolCall::Filter {
                column: "flag".into(),
                op: CmpOp::Eq,
                value: "keep".into(),
            },
        );
        let next = match out.value {
            StepValue::State(s) => s,
            _ => unreachable!("filter is not terminal"),
        };
        let after = tabrouge(&question_text, &next).expect("non-empty");
        if after.score < before.score {
            return TheoryCheck {
                name: "pruning_monotonicity".into(),
                passed: false,
                detail: format!(
                    "case {case}: filter decreased score {} -> {}",
                    before.score, after.score
                ),
            };
        }
        if before.lcs_len > 0 && after.score <= before.score {
            return TheoryCheck {
                name: "pruning_monotonicity".into(),
                passed: false,
                detail: format!(
                    "case {case}: expected strict increase at positive lcs, {} -> {}",
                    before.score, after.score
                ),
            };
        }
    }
    TheoryCheck {
        name: "pruning_monotonicity".into(),
        passed: true,
        detail: format!("{} constructed filter steps hold", cfg.pruning_cases),
    }
}

pub fn theory_checks(cfg: &TheoryConfig) -> TheoryReport {
    let checks = vec![
        check_variance_growth(cfg),
        check_parsimony_directions(cfg),
        check_pruning_monotonicity(cfg),
    ];
    TheoryReport {
        all_passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_under_default_config() {
        let report = theory_checks(&TheoryConfig::default());
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        assert!(report.all_passed);
    }

    #[test]
    fn alignment_backtrace_is_a_common_subsequence() {
        let q = vec!["a", "b", "c"];
        let s = vec!["x", "a", "y", "b", "c", "z"];
        let alignment = lcs_alignment(&q, &s);
        assert_eq!(alignment, vec![(0, 1), (1, 3), (2, 4)]);
    }
}
