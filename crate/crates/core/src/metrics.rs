//! Binary classification metrics and conversation-balance ratios.
//!
//! Degenerate cases (a zero factor in MCC, 0/0 in precision or recall)
//! evaluate to 0 by convention; the conventions are part of the reported
//! output, not silent fixes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and label lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("no participant has a qualifying turn")]
    NoQualifyingTurns,
    #[error("total speaking time is zero")]
    ZeroTotalTime,
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts true/false positives/negatives from boolean predictions.
pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<Confusion, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Matthews correlation coefficient in [-1, 1]; 0 when any factor of the
/// denominator vanishes.
pub fn mcc(c: &Confusion) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Rank-based (Mann-Whitney) AUC; tied scores contribute 1/2 per pair.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over tie groups (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// (precision, recall, f_score, accuracy) with 0 conventions for 0/0.
pub fn prf_accuracy(c: &Confusion) -> (f64, f64, f64, f64) {
    let precision = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = if c.total() == 0 {
        0.0
    } else {
        (c.tp + c.tn) as f64 / c.total() as f64
    };
    (precision, recall, f_score, accuracy)
}

/// Per-participant share of speaking turns. Segments lasting at most
/// `backchannel_max` seconds are treated as backchannels and do not count.
pub fn rs_turn(
    per_participant_segments: &[Vec<(f64, f64)>],
    backchannel_max: f64,
) -> Result<Vec<f64>, MetricError> {
    let counts: Vec<f64> = per_participant_segments
        .iter()
        .map(|segs| {
            segs.iter()
                .filter(|(s, e)| e - s > backchannel_max)
                .count() as f64
        })
        .collect();
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(MetricError::NoQualifyingTurns);
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Per-participant share of total speaking time. Backchannels count here;
/// the exclusion applies to turn counts only.
pub fn rs_time(per_participant_segments: &[Vec<(f64, f64)>]) -> Result<Vec<f64>, MetricError> {
    let times: Vec<f64> = per_participant_segments
        .iter()
        .map(|segs| segs.iter().map(|(s, e)| e - s).sum())
        .collect();
    let total: f64 = times.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::ZeroTotalTime);
    }
    Ok(times.into_iter().map(|t| t / total).collect())
}

/// The JSON report emitted by the `eval` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcc: f64,
    pub auc: f64,
    pub f_score: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub n: usize,
    pub threshold: f64,
}

/// Scores a labeled set at a decision threshold (strict `score > threshold`).
pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport, MetricError> {
    let preds: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let c = confusion(&preds, labels)?;
    let (precision, recall, f_score, accuracy) = prf_accuracy(&c);
    Ok(EvalReport {
        mcc: mcc(&c),
        auc: auc(scores, labels)?,
        f_score,
        accuracy,
        precision,
        recall,
        n: labels.len(),
        threshold,
    })
}
