//! Per-cell attention aggregation, the attention-overlap step reward,
//! two-parameter logistic calibration, and density-preserving mask
//! perturbations used to falsify sharpness-only readings of the reward.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{CellMask, MaskProvenance, SpanIndex, SpanOwner};

/// Floor for the attention-mass denominator; totals below it score zero and
/// are flagged uninformative.
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error("token range {start}..{end} outside serialized text of length {len}")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("attention is {a_rows}x{a_cols} but mask is {m_rows}x{m_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        m_rows: usize,
        m_cols: usize,
    },
    #[error("invalid attention: {0}")]
    InvalidAttention(String),
    #[error("calibration needs both labels present")]
    DegenerateLabels,
    #[error("mask has no set bits")]
    EmptyMask,
}

/// Nonnegative attention mass per data cell plus per-column header mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAttention {
    n_rows: usize,
    n_cols: usize,
    scores: Vec<f64>,
    header_scores: Vec<f64>,
}

impl CellAttention {
    pub fn new(cells: Vec<Vec<f64>>, header_scores: Vec<f64>) -> Result<Self, VerifierError> {
        let n_cols = header_scores.len();
        let n_rows = cells.len();
        let mut scores = Vec::with_capacity(n_rows * n_cols);
        for row in &cells {
            if row.len() != n_cols {
                return Err(VerifierError::InvalidAttention(format!(
                    "row has {} scores, expected {n_cols}",
                    row.len()
                )));
            }
            scores.extend_from_slice(row);
        }
        for v in scores.iter().chain(header_scores.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(VerifierError::InvalidAttention(format!(
                    "score {v} is negative or not finite"
                )));
            }
        }
        Ok(CellAttention {
            n_rows,
            n_cols,
            scores,
            header_scores,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CellAttention {
            n_rows,
            n_cols,
            scores: vec![0.0; n_rows * n_cols],
            header_scores: vec![0.0; n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.n_cols + col]
    }

    pub fn header_score(&self, col: usize) -> f64 {
        self.header_scores[col]
    }

    pub fn add(&mut self, row: usize, col: usize, mass: f64) {
        self.scores[row * self.n_cols + col] += mass;
    }

    pub fn add_header(&mut self, col: usize, mass: f64) {
        self.header_scores[col] += mass;
    }

    pub fn total_mass(&self) -> f64 {
        self.scores.iter().sum::<f64>() + self.header_scores.iter().sum::<f64>()
    }

    /// Multiply every score by a positive constant.
    pub fn scaled(&self, factor: f64) -> CellAttention {
        CellAttention {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            scores: self.scores.iter().map(|v| v * factor).collect(),
            header_scores: self.header_scores.iter().map(|v| v * factor).collect(),
        }
    }

    /// Flat per-cell view, row-major, data cells only.
    pub fn cell_scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Pool token-level span scores into per-cell and per-header mass. A token
/// straddling several spans splits proportionally to overlap; mass over
/// structural delimiters is discarded.
pub fn aggregate_cells(
    token_scores: &[(Range<usize>, f64)],
    index: &SpanIndex,
) -> Result<CellAttention, VerifierError> {
    for (range, score) in token_scores {
        if range.start > range.end || range.end > index.total_len() {
            return Err(VerifierError::RangeOutOfBounds {
                start: range.start,
                end: range.end,
                len: index.total_len(),
            });
        }
        if !score.is_finite() || *score < 0.0 {
            return Err(VerifierError::InvalidAttention(format!(
                "token score {score} is negative or not finite"
            )));
        }
    }
    let spans: Vec<(SpanOwner, Range<usize>)> = index.iter().collect();
    let mut attn = CellAttention::zeros(index.n_rows(), index.n_cols());
    for (token, score) in token_scores {
        let len = token.end - token.start;
        if len == 0 {
            continue; // a zero-width token has no extent; its mass is discarded
        }
        let first = spans.partition_point(|(_, s)| s.end <= token.start);
        for (owner, span) in spans[first..].iter() {
            if span.start >= token.end {
                break;
            }
            let overlap = token
                .end
                .min(span.end)
                .saturating_sub(token.start.max(span.start));
            if overlap == 0 {
                continue;
            }
            let mass = score * overlap as f64 / len as f64;
            match owner {
                SpanOwner::Header(c) => attn.add_header(*c, mass),
                SpanOwner::Cell(r, c) => attn.add(*r, *c, mass),
            }
        }
    }
    Ok(attn)
}

/// Numerator policy for header mass. Headers are the lexical anchor a plan
/// names, so by default their mass counts as overlap whenever the column has
/// any masked cell; it always counts in the denominator.
#[derive(Debug, Clone, Copy)]
pub struct OverlapConfig {
    pub credit_headers_to_masked_columns: bool,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            credit_headers_to_masked_columns: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapScore {
    pub value: f64,
    /// False when total table-attention mass fell below [`EPSILON`]; such
    /// steps are excluded from calibration samples.
    pub informative: bool,
}

/// Fraction of table-attention mass on mask-designated cells, in [0, 1].
pub fn r_attn(attn: &CellAttention, mask: &CellMask) -> Result<f64, VerifierError> {
    r_attn_with(attn, mask, &OverlapConfig::default()).map(|s| s.value)
}

pub fn r_attn_with(
    attn: &CellAttention,
    mask: &CellMask,
    cfg: &OverlapConfig,
) -> Result<OverlapScore, VerifierError> {
    if attn.n_rows() != mask.n_rows() || attn.n_cols() != mask.n_cols() {
        return Err(VerifierError::ShapeMismatch {
            a_rows: attn.n_rows(),
            a_cols: attn.n_cols(),
            m_rows: mask.n_rows(),
            m_cols: mask.n_cols(),
        });
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for r in 0..attn.n_rows() {
        for c in 0..attn.n_cols() {
            let s = attn.score(r, c);
            denominator += s;
            if mask.get(r, c) {
                numerator += s;
            }
        }
    }
    for c in 0..attn.n_cols() {
        let h = attn.header_score(c);
        denominator += h;
        // a zero-row mask leaves every column vacuously covered, so the
        // uniform mask still scores 1 on header-only states
        let covered = mask.n_rows() == 0 || mask.column_any(c);
        if cfg.credit_headers_to_masked_columns && covered {
            numerator += h;
        }
    }
    if denominator < EPSILON {
        return Ok(OverlapScore {
            value: 0.0,
            informative: false,
        });
    }
    Ok(OverlapScore {
        value: numerator / denominator.max(EPSILON),
        informative: true,
    })
}

/// Two-parameter logistic calibration of the overlap score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub slope: f64,
    pub intercept: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl CalibrationParams {
    pub fn calibrate(&self, score: f64) -> f64 {
        sigmoid(self.slope * score + self.intercept)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub train_fraction: f64,
    pub patience: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            train_fraction: 0.8,
            patience: 10,
            learning_rate: 1.0,
            max_iters: 5000,
            seed: 0,
        }
    }
}

fn bce(params: &CalibrationParams, samples: &[(f64, bool)]) -> f64 {
    let mut loss = 0.0;
    for &(score, label) in samples {
        let p = params.calibrate(score).clamp(1e-12, 1.0 - 1e-12);
        loss -= if label { p.ln() } else { (1.0 - p).ln() };
    }
    loss / samples.len() as f64
}

/// Fit `(slope, intercept)` by full-batch gradient descent on binary
/// cross-entropy, with early stopping on a held-out split. The split is
/// stratified by label and seeded, so fits are reproducible.
pub fn fit_calibration(
    samples: &[(f64, bool)],
    cfg: &FitConfig,
) -> Result<CalibrationParams, VerifierError> {
    let n_pos = samples.iter().filter(|(_, l)| *l).count();
    if samples.len() < 2 || n_pos == 0 || n_pos == samples.len() {
        return Err(VerifierError::DegenerateLabels);
    }
    if let Some((bad, _)) = samples.iter().find(|(s, _)| !s.is_finite()) {
        return Err(VerifierError::InvalidAttention(format!(
            "calibration sample score {bad} is not finite"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| *l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64) * cfg.train_fraction).ceil() as usize;
        let cut = cut.clamp(1, idx.len());
        for (k, &i) in idx.iter().enumerate() {
            if k < cut {
                train.push(samples[i]);
            } else {
                held.push(samples[i]);
            }
        }
    }
    if held.is_empty() {
        held = train.clone();
    }
    let mut params = CalibrationParams {
        slope: 0.0,
        intercept: 0.0,
    };
    let mut best = params;
    let mut best_loss = bce(&params, &held);
    let mut best_iter = 0usize;
    for iter in 1..=cfg.max_iters {
        let mut g_slope = 0.0;
        let mut g_intercept = 0.0;
        for &(score, label) in &train {
            let err = params.calibrate(score) - if label { 1.0 } else { 0.0 };
            g_slope += err * score;
            g_intercept += err;
        }
        let n = train.len() as f64;
        params.slope -= cfg.learning_rate * g_slope / n;
        params.intercept -= cfg.learning_rate * g_intercept / n;
        let loss = bce(&params, &held);
        if loss < best_loss - 1e-12 {
            best_loss = loss;
            best = params;
            best_iter = iter;
        } else if iter - best_iter > cfg.patience {
            break;
        }
    }
    Ok(best)
}

/// Scope of a density-preserving shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullKind {
    ShuffleCell,
    ShuffleWithinRow,
    ShuffleWithinCol,
    PermuteColumns,
}

impl NullKind {
    pub const ALL: [NullKind; 4] = [
        NullKind::ShuffleCell,
        NullKind::ShuffleWithinRow,
        NullKind::ShuffleWithinCol,
        NullKind::PermuteColumns,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NullKind::ShuffleCell => "shuffle_cell",
            NullKind::ShuffleWithinRow => "shuffle_within_row",
            NullKind::ShuffleWithinCol => "shuffle_within_col",
            NullKind::PermuteColumns => "permute_columns",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NullMaskSpec {
    pub kind: NullKind,
    pub draws: usize,
    pub seed: u64,
}

impl Default for NullMaskSpec {
    fn default() -> Self {
        NullMaskSpec {
            kind: NullKind::ShuffleCell,
            draws: 50,
            seed: 0,
        }
    }
}

/// Seeded density-preserving null masks: every draw has exactly the bit
/// count of the input.
pub fn null_masks(mask: &CellMask, spec: &NullMaskSpec) -> Result<Vec<CellMask>, VerifierError> {
    if mask.count_ones() == 0 {
        return Err(VerifierError::EmptyMask);
    }
    let (n_rows, n_cols) = (mask.n_rows(), mask.n_cols());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.draws.max(1));
    for _ in 0..spec.draws.max(1) {
        let mut bits: Vec<bool> = mask.bits().to_vec();
        match spec.kind {
            NullKind::ShuffleCell => bits.shuffle(&mut rng),
            NullKind::ShuffleWithinRow => {
                for r in 0..n_rows {
                    bits[r * n_cols..(r + 1) * n_cols].shuffle(&mut rng);
                }
            }
            NullKind::ShuffleWithinCol => {
                for c in 0..n_cols {
                    let mut col: Vec<bool> = (0..n_rows).map(|r| bits[r * n_cols + c]).collect();
                    col.shuffle(&mut rng);
                    for (r, v) in col.into_iter().enumerate() {
                        bits[r * n_cols + c] = v;
                    }
                }
            }
            NullKind::PermuteColumns => {
                let mut perm: Vec<usize> = (0..n_cols).collect();
                perm.shuffle(&mut rng);
                let orig = bits.clone();
                for r in 0..n_rows {
                    for (c, &p) in perm.iter().enumerate() {
                        bits[r * n_cols + c] = orig[r * n_cols + p];
                    }
                }
            }
        }
        out.push(
            CellMask::from_bits(n_rows, n_cols, bits, MaskProvenance::NullShuffled)
                .expect("bit count preserved"),
        );
    }
    Ok(out)
}

/// Flip each bit independently with probability `p_flip`. Density is
/// preserved only in expectation.
pub fn noise_mask(mask: &CellMask, p_flip: f64, seed: u64) -> CellMask {
    let p = p_flip.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<bool> = mask
        .bits()
        .iter()
        .map(|&b| {
            let flip = rng.random::<f64>() < p;
            b ^ flip
        })
        .collect();
    CellMask::from_bits(mask.n_rows(), mask.n_cols(), bits, MaskProvenance::Noised)
        .expect("same shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsificationOutcome {
    pub gt_score: f64,
    pub mean_null_score: f64,
    pub ratio: f64,
}

/// Ground-truth overlap against the mean over density-preserving null draws.
/// A ratio well above 1 rules out the sharpness-only reading of the reward.
pub fn falsification_ratio(
    attn: &CellAttention,
    gt_mask: &CellMask,
    spec: &NullMaskSpec,
) -> Result<FalsificationOutcome, VerifierError> {
    let gt_score = r_attn(attn, gt_mask)?;
    let nulls = null_masks(gt_mask, spec)?;
    let mut total = 0.0;
    for null in &nulls {
        total += r_attn(attn, null)?;
    }
    let mean_null_score = total / nulls.len() as f64;
    Ok(FalsificationOutcome {
        gt_score,
        mean_null_score,
        ratio: gt_score / mean_null_score.max(EPSILON),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{serialize, Table};

    fn grid(rows: Vec<Vec<f64>>, headers: Vec<f64>) -> CellAttention {
        CellAttention::new(rows, headers).unwrap()
    }

    fn mask_of(bits: &[&[u8]]) -> CellMask {
        let n_rows = bits.len();
        let n_cols = bits[0].len();
        let flat = bits
            .iter()
            .flat_map(|r| r.iter().map(|&b| b == 1))
            .collect();
        CellMask::from_bits(n_rows, n_cols, flat, MaskProvenance::Parsed).unwrap()
    }

    #[test]
    fn exact_token_alignment_assigns_full_mass() {
        let table = Table::new(vec!["A".into()], vec![vec!["x".into()]]).unwrap();
        let (_, index) = serialize(&table);
        let cell = index.cell_span(0, 0).unwrap().clone();
        let attn = aggregate_cells(&[(cell, 0.4)], &index).unwrap();
        assert!((attn.score(0, 0) - 0.4).abs() < 1e-12);
        assert_eq!(attn.header_score(0), 0.0);
    }

    #[test]
    fn straddling_token_splits_proportionally() {
        let table = Table::new(
            vec!["A".into(), "B".into()],
            vec![vec!["xx".into(), "yy".into()]],
        )
        .unwrap();
        let (_, index) = serialize(&table);
        let a = index.cell_span(0, 0).unwrap().clone();
        let b = index.cell_span(0, 1).unwrap().clone();
        // token covering one byte of each cell: the 50/50 split
        let token = (a.end - 1)..(b.start + 1);
        let attn = aggregate_cells(&[(token.clone(), 0.2)], &index).unwrap();
        let token_len = (token.end - token.start) as f64;
        assert!((attn.score(0, 0) - 0.2 / token_len).abs() < 1e-12);
        assert!((attn.score(0, 1) - 0.2 / token_len).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_token_is_rejected() {
        let table = Table::new(vec!["A".into()], vec![]).unwrap();
        let (text, index) = serialize(&table);
        let bad = text.len()..text.len() + 1;
        assert!(matches!(
            aggregate_cells(&[(bad, 1.0)], &index),
            Err(VerifierError::RangeOutOfBounds { .. })
        ));
    }

    #[test]
    fn header_mass_pools_into_columns() {
        let table = Table::new(vec!["Country".into()], vec![vec!["dz".into()]]).unwrap();
        let (_, index) = serialize(&table);
        let h = index.header_span(0).unwrap().clone();
        let attn = aggregate_cells(&[(h, 0.7)], &index).unwrap();
        assert!((attn.header_score(0) - 0.7).abs() < 1e-12);
        assert_eq!(attn.score(0, 0), 0.0);
    }

    #[test]
    fn direct_overlap_case() {
        let attn = grid(vec![vec![0.2, 0.3, 0.5]], vec![0.0, 0.0, 0.0]);
        let mask = mask_of(&[&[1, 0, 1]]);
        let got = r_attn(&attn, &mask).unwrap();
        assert!((got - 0.7).abs() < 1e-12);
    }

    #[test]
    fn uniform_mask_scores_one() {
        let attn = grid(vec![vec![0.1, 0.9], vec![0.4, 0.2]], vec![0.3, 0.0]);
        let mask = CellMask::uniform_fallback(2, 2);
        assert_eq!(r_attn(&attn, &mask).unwrap(), 1.0);
    }

    #[test]
    fn zero_mass_scores_zero_and_uninformative() {
        let attn = CellAttention::zeros(2, 2);
        let mask = CellMask::uniform_fallback(2, 2);
        let out = r_attn_with(&attn, &mask, &OverlapConfig::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(!out.informative);
    }

    #[test]
    fn disjoint_support_scores_zero() {
        let attn = grid(vec![vec![0.0, 1.0]], vec![0.0, 0.0]);
        let mask = mask_of(&[&[1, 0]]);
        assert_eq!(r_attn(&attn, &mask).unwrap(), 0.0);
    }

    #[test]
    fn mask_covering_the_support_scores_one() {
        // mass only on (0,0) and the header of a masked column
        let attn = grid(vec![vec![0.6, 0.0], vec![0.0, 0.0]], vec![0.4, 0.0]);
        let mask = mask_of(&[&[1, 1], &[0, 0]]);
        assert_eq!(r_attn(&attn, &mask).unwrap(), 1.0);
    }

    #[test]
    fn header_credit_follows_masked_columns() {
        let attn = grid(vec![vec![0.5, 0.0]], vec![0.25, 0.25]);
        let mask = mask_of(&[&[1, 0]]);
        // masked column header credited: (0.5 + 0.25) / 1.0
        assert!((r_attn(&attn, &mask).unwrap() - 0.75).abs() < 1e-12);
        let strict = OverlapConfig {
            credit_headers_to_masked_columns: false,
        };
        let got = r_attn_with(&attn, &mask, &strict).unwrap().value;
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grounding_failure_scores_low() {
        // attention concentrated on the wrong column variant
        let attn = grid(vec![vec![0.02, 0.6], vec![0.02, 0.7]], vec![0.0, 0.0]);
        let mask = mask_of(&[&[1, 0], &[1, 0]]);
        let score = r_attn(&attn, &mask).unwrap();
        assert!(
            score < 0.1,
            "wrong-column attention should score < 0.1, got {score}"
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let attn = CellAttention::zeros(1, 2);
        let mask = CellMask::uniform_fallback(2, 2);
        assert!(matches!(
            r_attn(&attn, &mask),
            Err(VerifierError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn separable_data_fits_positive_slope() {
        let mut samples = Vec::new();
        for i in 0..40 {
            let jitter = (i % 7) as f64 * 0.004;
            samples.push((0.9 - jitter, true));
            samples.push((0.1 + jitter, false));
        }
        let params = fit_calibration(&samples, &FitConfig::default()).unwrap();
        assert!(params.slope > 0.0);
        // a constant predictor achieves ln 2; separable data must beat it
        assert!(bce(&params, &samples) < std::f64::consts::LN_2);
    }

    #[test]
    fn independent_labels_fit_near_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base_rate = 0.7;
        let samples: Vec<(f64, bool)> = (0..4000)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>() < base_rate))
            .collect();
        let params = fit_calibration(&samples, &FitConfig::default()).unwrap();
        assert!(params.slope.abs() < 0.5, "slope {} not small", params.slope);
        let mid = params.calibrate(0.5);
        assert!(
            (mid - base_rate).abs() < 0.05,
            "calibrated midpoint {mid} far from base rate {base_rate}"
        );
    }

    #[test]
    fn non_finite_calibration_samples_are_rejected() {
        let samples = vec![(f64::NAN, true), (0.1, false)];
        assert!(matches!(
            fit_calibration(&samples, &FitConfig::default()),
            Err(VerifierError::InvalidAttention(_))
        ));
    }

    #[test]
    fn single_class_labels_are_degenerate() {
        let samples = vec![(0.1, true), (0.9, true)];
        assert!(matches!(
            fit_calibration(&samples, &FitConfig::default()),
            Err(VerifierError::DegenerateLabels)
        ));
    }

    #[test]
    fn null_draws_preserve_density() {
        let mask = mask_of(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 0]]);
        for kind in NullKind::ALL {
            let spec = NullMaskSpec {
                kind,
                draws: 20,
                seed: 3,
            };
            for draw in null_masks(&mask, &spec).unwrap() {
                assert_eq!(draw.count_ones(), 2, "{kind:?} changed density");
                assert_eq!(draw.provenance(), MaskProvenance::NullShuffled);
            }
        }
    }

    #[test]
    fn within_row_shuffle_preserves_row_counts() {
        let mask = mask_of(&[&[1, 1, 0], &[0, 0, 1]]);
        let spec = NullMaskSpec {
            kind: NullKind::ShuffleWithinRow,
            draws: 30,
            seed: 9,
        };
        for draw in null_masks(&mask, &spec).unwrap() {
            let row0: usize = (0..3).filter(|&c| draw.get(0, c)).count();
            let row1: usize = (0..3).filter(|&c| draw.get(1, c)).count();
            assert_eq!((row0, row1), (2, 1));
        }
    }

    #[test]
    fn empty_mask_has_no_nulls() {
        let mask = CellMask::zeros(2, 2, MaskProvenance::Parsed);
        assert!(matches!(
            null_masks(&mask, &NullMaskSpec::default()),
            Err(VerifierError::EmptyMask)
        ));
    }

    #[test]
    fn cell_shuffle_inclusion_matches_binomial_expectation() {
        let mask = mask_of(&[&[1, 1, 0, 0], &[1, 0, 0, 0], &[0, 0, 0, 0]]);
        let k = mask.count_ones() as f64;
        let n_cells = 12.0;
        let draws = 400;
        let spec = NullMaskSpec {
            kind: NullKind::ShuffleCell,
            draws,
            seed: 11,
        };
        let nulls = null_masks(&mask, &spec).unwrap();
        let p = k / n_cells;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for r in 0..3 {
            for c in 0..4 {
                let freq = nulls.iter().filter(|m| m.get(r, c)).count() as f64 / draws as f64;
                assert!(
                    (freq - p).abs() <= 3.0 * sigma,
                    "cell ({r},{c}) frequency {freq} outside 3 sigma of {p}"
                );
            }
        }
    }

    #[test]
    fn noise_mask_extremes() {
        let mask = mask_of(&[&[1, 0], &[0, 1]]);
        let same = noise_mask(&mask, 0.0, 5);
        assert_eq!(same.bits(), mask.bits());
        let flipped = noise_mask(&mask, 1.0, 5);
        for (a, b) in mask.bits().iter().zip(flipped.bits()) {
            assert_ne!(a, b);
        }
        assert_eq!(flipped.provenance(), MaskProvenance::Noised);
    }

    #[test]
    fn noise_flip_count_within_binomial_band() {
        let mask = CellMask::zeros(100, 100, MaskProvenance::Oracle);
        let noised = noise_mask(&mask, 0.2, 13);
        let flips = noised.count_ones() as f64;
        let n = 10_000.0_f64;
        let sigma = (n * 0.2 * 0.8).sqrt();
        assert!(
            (flips - 2000.0).abs() <= 3.0 * sigma,
            "flip count {flips} outside 3 sigma of 2000"
        );
    }

    #[test]
    fn concentrated_attention_beats_nulls_by_inverse_density() {
        // all mass on GT cells: null expectation under cell shuffle is the
        // mask density, so the ratio approaches n_cells / k
        let n_rows = 5;
        let n_cols = 4;
        let mask = {
            let mut m = CellMask::zeros(n_rows, n_cols, MaskProvenance::Oracle);
            m.set(0, 0, true);
            m.set(3, 2, true);
            m
        };
        let mut cells = vec![vec![0.0; n_cols]; n_rows];
        cells[0][0] = 0.5;
        cells[3][2] = 0.5;
        let attn = grid(cells, vec![0.0; n_cols]);
        let spec = NullMaskSpec {
            kind: NullKind::ShuffleCell,
            draws: 400,
            seed: 21,
        };
        let out = falsification_ratio(&attn, &mask, &spec).unwrap();
        assert_eq!(out.gt_score, 1.0);
        let expected_ratio = (n_rows * n_cols) as f64 / 2.0;
        assert!(
            (out.ratio - expected_ratio).abs() / expected_ratio < 0.25,
            "ratio {} far from closed form {expected_ratio}",
            out.ratio
        );
    }

    #[test]
    fn uniform_attention_is_not_falsified() {
        let attn = grid(vec![vec![0.25; 4]; 5], vec![0.0; 4]);
        let mask = mask_of(&[
            &[1, 0, 0, 0],
            &[0, 1, 0, 0],
            &[0, 0, 0, 0],
            &[0, 0, 0, 0],
            &[0, 0, 0, 0],
        ]);
        let out = falsification_ratio(&attn, &mask, &NullMaskSpec::default()).unwrap();
        assert!(
            (out.ratio - 1.0).abs() < 1e-9,
            "ratio {} should be 1",
            out.ratio
        );
    }

    #[test]
    fn calibration_params_persist_as_json() {
        let p = CalibrationParams {
            slope: 3.25,
            intercept: -1.5,
        };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"slope":3.25,"intercept":-1.5}"#);
        let back: CalibrationParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
