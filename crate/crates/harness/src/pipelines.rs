//! Evaluation pipelines over attention-standard JSONL files: cell-level
//! AUROC, permutation stability, density-preserving mask falsification, and
//! judge-vs-human labelability.
//!
//! Records are processed in parallel and reports are assembled in record-id
//! order, so concurrency and input order never change output bytes. All
//! per-record randomness is seeded from the record id.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cellground_core::engine::fnv1a64;
use cellground_core::stats::{
    agreement, auroc, cohens_kappa, mann_whitney_u, perm_sigma, wilcoxon_signed_rank,
    MannWhitneyTest, PermSigma, ScoredLabels, StatsError, WilcoxonTest,
};
use cellground_core::table::{permute_rows, serialize, CellMask, Table};
use cellground_core::verifier::{falsification_ratio, CellAttention, NullKind, NullMaskSpec};

use crate::backend::{AttentionProvider, AttentionQuery};
use crate::standards::{LabelRecord, LabelUnit, Standard};

fn query_attention(
    backend: &dyn AttentionProvider,
    record_id: &str,
    question: &str,
    table: &Table,
    mask: &CellMask,
) -> Result<CellAttention, String> {
    let (text, index) = serialize(table);
    backend
        .attention(&AttentionQuery {
            record_id,
            question,
            table,
            text: &text,
            index: &index,
            step: 0,
            mask_hint: Some(mask),
        })
        .map_err(|e| e.to_string())
}

/// Flatten per-cell attention against mask bits and compute AUROC.
fn record_auroc(attn: &CellAttention, mask: &CellMask) -> Result<f64, StatsError> {
    let mut pairs = Vec::with_capacity(mask.n_rows() * mask.n_cols());
    for r in 0..mask.n_rows() {
        for c in 0..mask.n_cols() {
            pairs.push((attn.score(r, c), mask.get(r, c)));
        }
    }
    auroc(&ScoredLabels::new(pairs)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordStatus {
    pub id: String,
    pub dataset: String,
    pub auroc: Option<f64>,
    /// Why the record was excluded, when it was.
    pub invalid: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMean {
    pub n: usize,
    pub mean_auroc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AurocReport {
    pub per_record: Vec<RecordStatus>,
    pub per_dataset: BTreeMap<String, DatasetMean>,
    pub overall_mean: Option<f64>,
    pub n_valid: usize,
    pub n_invalid: usize,
}

/// Cell-level AUROC of backend attention against the human masks.
/// Records whose mask is single-class (all or nothing relevant) are marked
/// invalid and excluded from the means.
pub fn eval_auroc(standards: &[Standard], backend: &dyn AttentionProvider) -> AurocReport {
    let mut per_record: Vec<RecordStatus> = standards
        .par_iter()
        .map(|s| {
            let outcome = query_attention(backend, &s.id, &s.question, &s.table, &s.mask)
                .map_err(|e| format!("backend: {e}"))
                .and_then(|attn| record_auroc(&attn, &s.mask).map_err(|e| e.to_string()));
            match outcome {
                Ok(a) => RecordStatus {
                    id: s.id.clone(),
                    dataset: s.dataset.clone(),
                    auroc: Some(a),
                    invalid: None,
                },
                Err(reason) => RecordStatus {
                    id: s.id.clone(),
                    dataset: s.dataset.clone(),
                    auroc: None,
                    invalid: Some(reason),
                },
            }
        })
        .collect();
    per_record.sort_by(|a, b| a.id.cmp(&b.id));

    let mut sums: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    let mut n_valid = 0usize;
    for rec in &per_record {
        if let Some(a) = rec.auroc {
            let entry = sums.entry(rec.dataset.clone()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += a;
            total += a;
            n_valid += 1;
        }
    }
    let per_dataset = sums
        .into_iter()
        .map(|(ds, (n, sum))| {
            (
                ds,
                DatasetMean {
                    n,
                    mean_auroc: sum / n as f64,
                },
            )
        })
        .collect();
    AurocReport {
        n_invalid: per_record.len() - n_valid,
        overall_mean: if n_valid > 0 {
            Some(total / n_valid as f64)
        } else {
            None
        },
        per_dataset,
        per_record,
        n_valid,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordSigma {
    pub id: String,
    pub dataset: String,
    /// AUROC per row-permuted view; view 0 is the identity.
    pub view_aurocs: Vec<Option<f64>>,
    pub sigma: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermStabilityReport {
    pub k_perms: usize,
    pub per_record: Vec<RecordSigma>,
    pub mean_sigma: Option<f64>,
    pub n_rejected: usize,
}

/// Fisher-Yates permutation seeded from the record id and view number, so
/// every backend sees the same orderings.
fn view_permutation(record_id: &str, view: usize, seed: u64, n_rows: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut perm: Vec<usize> = (0..n_rows).collect();
    if view == 0 {
        return perm;
    }
    let record_seed = fnv1a64(record_id.as_bytes())
        .wrapping_add(seed)
        .wrapping_add((view as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(record_seed));
    perm
}

/// Per-record stability of attention AUROC across `k_perms` row-permuted
/// views. The mask permutes in lockstep with the rows; records with fewer
/// than `min_valid` valid views are rejected.
pub fn eval_perm_stability(
    standards: &[Standard],
    backend: &dyn AttentionProvider,
    k_perms: usize,
    seed: u64,
    min_valid: usize,
) -> PermStabilityReport {
    let mut per_record: Vec<RecordSigma> = standards
        .par_iter()
        .map(|s| {
            let mut views = Vec::with_capacity(k_perms);
            for view in 0..k_perms {
                let perm = view_permutation(&s.id, view, seed, s.table.n_rows());
                let auroc_v = permute_rows(&s.table, &s.mask, &perm)
                    .map_err(|e| e.to_string())
                    .and_then(|(table, mask)| {
                        query_attention(backend, &s.id, &s.question, &table, &mask)
                            .and_then(|attn| record_auroc(&attn, &mask).map_err(|e| e.to_string()))
                    })
                    .ok();
                views.push(auroc_v);
            }
            let valid: Vec<f64> = views.iter().flatten().copied().collect();
            let (sigma, rejected) = match perm_sigma(&valid, min_valid) {
                PermSigma::Sigma(v) => (Some(v), false),
                PermSigma::Rejected => (None, true),
            };
            RecordSigma {
                id: s.id.clone(),
                dataset: s.dataset.clone(),
                view_aurocs: views,
                sigma,
                rejected,
            }
        })
        .collect();
    per_record.sort_by(|a, b| a.id.cmp(&b.id));
    let sigmas: Vec<f64> = per_record.iter().filter_map(|r| r.sigma).collect();
    PermStabilityReport {
        k_perms,
        mean_sigma: if sigmas.is_empty() {
            None
        } else {
            Some(sigmas.iter().sum::<f64>() / sigmas.len() as f64)
        },
        n_rejected: per_record.iter().filter(|r| r.rejected).count(),
        per_record,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFalsification {
    pub id: String,
    pub dataset: String,
    pub gt_score: f64,
    /// Mean null score per shuffle kind.
    pub null_means: BTreeMap<String, f64>,
    pub ratio: f64,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub n: usize,
    pub statistic: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub primary_kind: String,
    pub draws: usize,
    pub per_record: Vec<RecordFalsification>,
    pub mean_gt: Option<f64>,
    pub mean_null: BTreeMap<String, f64>,
    /// Mean ground-truth score over the mean primary-kind null score.
    pub ratio: Option<f64>,
    /// Paired test between ground-truth and primary-kind null scores.
    pub wilcoxon: Option<SignificanceSummary>,
    pub n_skipped: usize,
}

fn wilcoxon_summary(t: &WilcoxonTest) -> SignificanceSummary {
    SignificanceSummary {
        n: t.n_nonzero,
        statistic: t.statistic,
        p_two_sided: t.p_two_sided,
        p_greater: t.p_greater,
        exact: matches!(t.method, cellground_core::stats::TestMethod::Exact),
    }
}

/// Which mask the verifier scores against. `Noised` flips each bit of the
/// stored mask independently, leaving the attention side untouched — the
/// corrupted-supervision stress test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSource {
    GroundTruth,
    Noised { p_flip: f64 },
}

/// Density-preserving mask falsification: ground-truth overlap against all
/// four null kinds, with the headline ratio and paired signed-rank test
/// taken against `spec.kind`.
pub fn eval_falsification(
    standards: &[Standard],
    backend: &dyn AttentionProvider,
    spec: &NullMaskSpec,
) -> FalsificationReport {
    eval_falsification_with(standards, backend, spec, MaskSource::GroundTruth)
}

pub fn eval_falsification_with(
    standards: &[Standard],
    backend: &dyn AttentionProvider,
    spec: &NullMaskSpec,
    mask_source: MaskSource,
) -> FalsificationReport {
    let mut per_record: Vec<RecordFalsification> = standards
        .par_iter()
        .map(|s| {
            let empty = RecordFalsification {
                id: s.id.clone(),
                dataset: s.dataset.clone(),
                gt_score: 0.0,
                null_means: BTreeMap::new(),
                ratio: 0.0,
                skipped: None,
            };
            let scored_mask = match mask_source {
                MaskSource::GroundTruth => s.mask.clone(),
                MaskSource::Noised { p_flip } => cellground_core::verifier::noise_mask(
                    &s.mask,
                    p_flip,
                    spec.seed.wrapping_add(fnv1a64(s.id.as_bytes())),
                ),
            };
            if scored_mask.count_ones() == 0 {
                return RecordFalsification {
                    skipped: Some("empty mask".into()),
                    ..empty
                };
            }
            // attention is keyed to the stored mask; only scoring changes
            let attn = match query_attention(backend, &s.id, &s.question, &s.table, &s.mask) {
                Ok(a) => a,
                Err(e) => {
                    return RecordFalsification {
                        skipped: Some(format!("backend: {e}")),
                        ..empty
                    }
                }
            };
            let mut null_means = BTreeMap::new();
            let mut gt_score = 0.0;
            let mut primary_ratio = 0.0;
            for kind in NullKind::ALL {
                let kind_spec = NullMaskSpec {
                    kind,
                    draws: spec.draws,
                    seed: spec
                        .seed
                        .wrapping_add(fnv1a64(s.id.as_bytes()))
                        .wrapping_add(fnv1a64(kind.as_str().as_bytes())),
                };
                match falsification_ratio(&attn, &scored_mask, &kind_spec) {
                    Ok(out) => {
                        gt_score = out.gt_score;
                        null_means.insert(kind.as_str().to_string(), out.mean_null_score);
                        if kind == spec.kind {
                            primary_ratio = out.ratio;
                        }
                    }
                    Err(e) => {
                        return RecordFalsification {
                            skipped: Some(e.to_string()),
                            ..empty
                        }
                    }
                }
            }
            RecordFalsification {
                id: s.id.clone(),
                dataset: s.dataset.clone(),
                gt_score,
                null_means,
                ratio: primary_ratio,
                skipped: None,
            }
        })
        .collect();
    per_record.sort_by(|a, b| a.id.cmp(&b.id));

    let valid: Vec<&RecordFalsification> =
        per_record.iter().filter(|r| r.skipped.is_none()).collect();
    let n = valid.len();
    let mean_gt = if n > 0 {
        Some(valid.iter().map(|r| r.gt_score).sum::<f64>() / n as f64)
    } else {
        None
    };
    let mut mean_null = BTreeMap::new();
    for kind in NullKind::ALL {
        let key = kind.as_str().to_string();
        if n > 0 {
            let total: f64 = valid.iter().filter_map(|r| r.null_means.get(&key)).sum();
            mean_null.insert(key, total / n as f64);
        }
    }
    let primary = spec.kind.as_str().to_string();
    let ratio = match (mean_gt, mean_null.get(&primary)) {
        (Some(gt), Some(null)) => Some(gt / null.max(cellground_core::verifier::EPSILON)),
        _ => None,
    };
    // paired test on per-record (gt - null) differences, skipped under n = 2;
    // sub-epsilon differences are rounding noise and count as zeros
    let diffs: Vec<f64> = valid
        .iter()
        .filter_map(|r| r.null_means.get(&primary).map(|nm| r.gt_score - nm))
        .map(|d| if d.abs() < 1e-12 { 0.0 } else { d })
        .collect();
    let wilcoxon = if diffs.len() >= 2 {
        wilcoxon_signed_rank(&diffs)
            .ok()
            .map(|t| wilcoxon_summary(&t))
    } else {
        None
    };
    FalsificationReport {
        primary_kind: primary,
        draws: spec.draws,
        n_skipped: per_record.len() - n,
        per_record,
        mean_gt,
        mean_null,
        ratio,
        wilcoxon,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementRow {
    pub n: usize,
    pub agreement_pct: f64,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitLabelability {
    pub per_dataset: BTreeMap<String, AgreementRow>,
    pub pooled: Option<AgreementRow>,
    /// Step-side decisions dropped because the human label was "unsure".
    pub excluded_unsure: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelabilityReport {
    pub cell: UnitLabelability,
    pub step: UnitLabelability,
    pub join_misses: Vec<String>,
}

fn agreement_row(judge: &[String], human: &[String]) -> Option<AgreementRow> {
    if judge.is_empty() {
        return None;
    }
    Some(AgreementRow {
        n: judge.len(),
        agreement_pct: 100.0 * agreement(judge, human).ok()?,
        kappa: cohens_kappa(judge, human).ok(),
    })
}

/// Judge-vs-human agreement and Cohen's kappa, per dataset and pooled, split
/// by decision unit. Step-side pairs where the human label is "unsure" are
/// excluded before agreement; unmatched ids are listed, not fatal.
pub fn eval_labelability(judge: &[LabelRecord], human: &[LabelRecord]) -> LabelabilityReport {
    let mut human_by_key: BTreeMap<(LabelUnit, &str), &LabelRecord> = BTreeMap::new();
    for rec in human {
        human_by_key.insert((rec.unit, rec.id.as_str()), rec);
    }
    let mut join_misses = Vec::new();
    let mut excluded = BTreeMap::from([(LabelUnit::Cell, 0usize), (LabelUnit::Step, 0usize)]);
    // (unit, dataset) -> paired label vectors
    let mut groups: BTreeMap<(LabelUnit, String), (Vec<String>, Vec<String>)> = BTreeMap::new();
    for rec in judge {
        let Some(h) = human_by_key.get(&(rec.unit, rec.id.as_str())) else {
            join_misses.push(rec.id.clone());
            continue;
        };
        if rec.unit == LabelUnit::Step && h.label == "unsure" {
            *excluded.get_mut(&LabelUnit::Step).expect("present") += 1;
            continue;
        }
        let entry = groups.entry((rec.unit, rec.dataset.clone())).or_default();
        entry.0.push(rec.label.clone());
        entry.1.push(h.label.clone());
    }
    join_misses.sort();

    let build = |unit: LabelUnit| -> UnitLabelability {
        let mut per_dataset = BTreeMap::new();
        let mut pooled_judge = Vec::new();
        let mut pooled_human = Vec::new();
        for ((u, dataset), (j, h)) in &groups {
            if *u != unit {
                continue;
            }
            if let Some(row) = agreement_row(j, h) {
                per_dataset.insert(dataset.clone(), row);
            }
            pooled_judge.extend(j.iter().cloned());
            pooled_human.extend(h.iter().cloned());
        }
        UnitLabelability {
            per_dataset,
            pooled: agreement_row(&pooled_judge, &pooled_human),
            excluded_unsure: excluded[&unit],
        }
    };
    LabelabilityReport {
        cell: build(LabelUnit::Cell),
        step: build(LabelUnit::Step),
        join_misses,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MannWhitneySummary {
    pub u: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
    pub exact: bool,
}

pub fn mann_whitney_summary(t: &MannWhitneyTest) -> MannWhitneySummary {
    MannWhitneySummary {
        u: t.u,
        p_two_sided: t.p_two_sided,
        p_greater: t.p_greater,
        exact: matches!(t.method, cellground_core::stats::TestMethod::Exact),
    }
}

/// Mann-Whitney U over two samples of per-record scalars (used for the
/// answer-surface-position comparison).
pub fn compare_positions(x: &[f64], y: &[f64]) -> Result<MannWhitneySummary, StatsError> {
    mann_whitney_u(x, y).map(|t| mann_whitney_summary(&t))
}
