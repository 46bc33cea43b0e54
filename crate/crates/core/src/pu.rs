//! Loss functions and the PN, uPU, and nnPU empirical risk estimators.
//!
//! All estimators work on raw classifier scores (logits). Each `*_grad`
//! variant additionally returns the exact partial derivative of the risk
//! with respect to every input score, which is what the training loop
//! backpropagates. Reductions use a fixed left-to-right summation order so
//! runs are bit-reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    /// A risk estimator was handed an empty score batch.
    #[error("empty score batch for {0} side")]
    EmptyBatch(&'static str),
    /// Prior estimation needs both classes present.
    #[error("labels contain a single class; cannot estimate a prior in (0,1)")]
    SingleClass,
    #[error("class prior must lie strictly inside (0,1), got {0}")]
    InvalidPrior(f64),
}

/// Surrogate loss applied to a score `t` with target `y` in {-1,+1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `l(t, y) = 1 / (1 + exp(y t))`, bounded in (0,1).
    Sigmoid,
    /// `l(t, y) = ln(1 + exp(-y t))`.
    Logistic,
}

/// Which empirical risk estimator drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Pn,
    Upu,
    Nnpu,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(LossKind::Sigmoid),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(format!(
                "unknown loss `{other}` (expected sigmoid|logistic)"
            )),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pn" => Ok(Estimator::Pn),
            "upu" => Ok(Estimator::Upu),
            "nnpu" => Ok(Estimator::Nnpu),
            other => Err(format!("unknown estimator `{other}` (expected pn|upu|nnpu)")),
        }
    }
}

/// Class prior, loss, and estimator choice for risk computation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RiskConfig {
    /// pi = P(Y = +1), strictly inside (0, 1).
    pub prior: f64,
    pub loss_kind: LossKind,
    pub estimator: Estimator,
}

impl RiskConfig {
    pub fn new(prior: f64, loss_kind: LossKind, estimator: Estimator) -> Result<Self, RiskError> {
        if !(prior > 0.0 && prior < 1.0) {
            return Err(RiskError::InvalidPrior(prior));
        }
        Ok(RiskConfig {
            prior,
            loss_kind,
            estimator,
        })
    }
}

/// Numerically stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow for large |x|.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss value and its derivative with respect to the score.
///
/// `y` must be +1 or -1. Large |t| is handled by the stable formulations,
/// so neither branch can overflow.
pub fn loss(t: f64, y: i8, kind: LossKind) -> (f64, f64) {
    debug_assert!(y == 1 || y == -1);
    let y = f64::from(y);
    match kind {
        LossKind::Sigmoid => {
            // l = sigma(-y t); dl/dt = -y * l * (1 - l)
            let l = sigmoid(-y * t);
            (l, -y * l * (1.0 - l))
        }
        LossKind::Logistic => {
            // l = softplus(-y t); dl/dt = -y * sigma(-y t)
            (softplus(-y * t), -y * sigmoid(-y * t))
        }
    }
}

/// Mean loss over `scores` against a fixed target, plus per-score gradients
/// of the mean.
fn mean_loss(scores: &[f64], y: i8, kind: LossKind) -> (f64, Vec<f64>) {
    let n = scores.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for &t in scores {
        let (v, d) = loss(t, y, kind);
        total += v;
        grads.push(d / n);
    }
    (total / n, grads)
}

/// Positive-negative risk: `pi * R_p(+1) + (1 - pi) * R_n(-1)`.
pub fn risk_pn(scores_p: &[f64], scores_n: &[f64], cfg: &RiskConfig) -> Result<f64, RiskError> {
    risk_pn_grad(scores_p, scores_n, cfg).map(|g| g.value)
}

/// Unbiased PU risk: `pi * R_p^+ + R_u^- - pi * R_p^-`.
pub fn risk_upu(scores_p: &[f64], scores_u: &[f64], cfg: &RiskConfig) -> Result<f64, RiskError> {
    risk_upu_grad(scores_p, scores_u, cfg).map(|g| g.value)
}

/// Non-negative PU risk: `pi * R_p^+ + max{0, R_u^- - pi * R_p^-}`.
///
/// Returns the clipped value and whether the clip fired
/// (`R_u^- - pi * R_p^- < 0`).
pub fn risk_nnpu(
    scores_p: &[f64],
    scores_u: &[f64],
    cfg: &RiskConfig,
) -> Result<(f64, bool), RiskError> {
    risk_nnpu_grad(scores_p, scores_u, cfg).map(|g| (g.value, g.clip_active))
}

/// A risk value with its exact gradient w.r.t. every input score.
#[derive(Debug, Clone)]
pub struct RiskGrad {
    pub value: f64,
    /// d(value)/d(scores_p[i]); first argument of the estimator.
    pub grad_p: Vec<f64>,
    /// d(value)/d(scores_u[i]) (or scores_n for PN).
    pub grad_u: Vec<f64>,
    /// nnPU only: true when the negative-risk term was clipped to zero.
    pub clip_active: bool,
}

pub fn risk_pn_grad(
    scores_p: &[f64],
    scores_n: &[f64],
    cfg: &RiskConfig,
) -> Result<RiskGrad, RiskError> {
    if scores_p.is_empty() {
        return Err(RiskError::EmptyBatch("positive"));
    }
    if scores_n.is_empty() {
        return Err(RiskError::EmptyBatch("negative"));
    }
    let pi = cfg.prior;
    let (rp, gp) = mean_loss(scores_p, 1, cfg.loss_kind);
    let (rn, gn) = mean_loss(scores_n, -1, cfg.loss_kind);
    Ok(RiskGrad {
        value: pi * rp + (1.0 - pi) * rn,
        grad_p: gp.into_iter().map(|g| pi * g).collect(),
        grad_u: gn.into_iter().map(|g| (1.0 - pi) * g).collect(),
        clip_active: false,
    })
}

pub fn risk_upu_grad(
    scores_p: &[f64],
    scores_u: &[f64],
    cfg: &RiskConfig,
) -> Result<RiskGrad, RiskError> {
    if scores_p.is_empty() {
        return Err(RiskError::EmptyBatch("positive"));
    }
    if scores_u.is_empty() {
        return Err(RiskError::EmptyBatch("unlabeled"));
    }
    let pi = cfg.prior;
    let (rp_pos, gp_pos) = mean_loss(scores_p, 1, cfg.loss_kind);
    let (rp_neg, gp_neg) = mean_loss(scores_p, -1, cfg.loss_kind);
    let (ru_neg, gu_neg) = mean_loss(scores_u, -1, cfg.loss_kind);
    let grad_p = gp_pos
        .iter()
        .zip(&gp_neg)
        .map(|(a, b)| pi * (a - b))
        .collect();
    // Same association as nnPU so the two agree bit-for-bit when the
    // nnPU clip is inactive.
    let inner = ru_neg - pi * rp_neg;
    Ok(RiskGrad {
        value: pi * rp_pos + inner,
        grad_p,
        grad_u: gu_neg,
        clip_active: false,
    })
}

pub fn risk_nnpu_grad(
    scores_p: &[f64],
    scores_u: &[f64],
    cfg: &RiskConfig,
) -> Result<RiskGrad, RiskError> {
    if scores_p.is_empty() {
        return Err(RiskError::EmptyBatch("positive"));
    }
    if scores_u.is_empty() {
        return Err(RiskError::EmptyBatch("unlabeled"));
    }
    let pi = cfg.prior;
    let (rp_pos, gp_pos) = mean_loss(scores_p, 1, cfg.loss_kind);
    let (rp_neg, gp_neg) = mean_loss(scores_p, -1, cfg.loss_kind);
    let (ru_neg, gu_neg) = mean_loss(scores_u, -1, cfg.loss_kind);
    let inner = ru_neg - pi * rp_neg;
    let clip_active = inner < 0.0;
    // Subgradient of max{0, inner}: pass the inner gradient only when
    // inner > 0; at and below the boundary the clipped term contributes 0.
    let pass_inner = inner > 0.0;
    let grad_p: Vec<f64> = gp_pos
        .iter()
        .zip(&gp_neg)
        .map(|(a, b)| {
            if pass_inner {
                pi * (a - b)
            } else {
                pi * a
            }
        })
        .collect();
    let grad_u = if pass_inner {
        gu_neg
    } else {
        vec![0.0; scores_u.len()]
    };
    Ok(RiskGrad {
        value: pi * rp_pos + inner.max(0.0),
        grad_p,
        grad_u,
        clip_active,
    })
}

/// Risk + gradients for whichever estimator `cfg` selects.
///
/// For [`Estimator::Pn`] the second argument is the negative batch.
pub fn risk_grad(
    scores_p: &[f64],
    scores_other: &[f64],
    cfg: &RiskConfig,
) -> Result<RiskGrad, RiskError> {
    match cfg.estimator {
        Estimator::Pn => risk_pn_grad(scores_p, scores_other, cfg),
        Estimator::Upu => risk_upu_grad(scores_p, scores_other, cfg),
        Estimator::Nnpu => risk_nnpu_grad(scores_p, scores_other, cfg),
    }
}

/// Positive fraction of a labeled set; the default source for `pi`.
pub fn estimate_prior(labels: &[bool]) -> Result<f64, RiskError> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(RiskError::SingleClass);
    }
    Ok(pos as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(prior: f64, kind: LossKind) -> RiskConfig {
        RiskConfig::new(prior, kind, Estimator::Nnpu).unwrap()
    }

    #[test]
    fn sigmoid_loss_symmetry_point() {
        let (v, _) = loss(0.0, 1, LossKind::Sigmoid);
        assert_eq!(v, 0.5);
    }

    #[test]
    fn sigmoid_loss_large_score() {
        // exp(-20)/(1+exp(-20)), evaluated independently at high precision.
        let (v, _) = loss(20.0, 1, LossKind::Sigmoid);
        assert!((v - 2.06115361819e-9).abs() / 2.06115361819e-9 < 1e-9);
    }

    #[test]
    fn loss_handles_extreme_scores_without_overflow() {
        for &t in &[-1e4, -500.0, 500.0, 1e4] {
            for &y in &[-1i8, 1] {
                for kind in [LossKind::Sigmoid, LossKind::Logistic] {
                    let (v, d) = loss(t, y, kind);
                    assert!(v.is_finite() && v >= 0.0, "t={t} y={y} {kind:?} v={v}");
                    assert!(d.is_finite());
                }
            }
        }
    }

    #[test]
    fn loss_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // h = 1e-5 keeps FD cancellation error well under the tolerance
        // when the sigmoid loss saturates near 1.
        let h = 1e-5;
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(-10.0..10.0);
            let y: i8 = if rng.gen::<bool>() { 1 } else { -1 };
            for kind in [LossKind::Sigmoid, LossKind::Logistic] {
                let (_, d) = loss(t, y, kind);
                let (vp, _) = loss(t + h, y, kind);
                let (vm, _) = loss(t - h, y, kind);
                let fd = (vp - vm) / (2.0 * h);
                let denom = d.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((d - fd) / denom).abs() < 1e-6,
                    "t={t} y={y} {kind:?}: analytic {d} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn pn_symmetric_zero_scores() {
        let c = cfg(0.5, LossKind::Sigmoid);
        let r = risk_pn(&[0.0, 0.0], &[0.0], &c).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pn_table_prior_example() {
        // 0.369 * l(2,+1) + 0.631 * l(-2,-1); both losses equal sigma(-2).
        let c = cfg(0.369, LossKind::Sigmoid);
        let r = risk_pn(&[2.0], &[-2.0], &c).unwrap();
        assert!((r - 0.119202922022).abs() < 1e-10);
    }

    #[test]
    fn pn_prior_one_limit() {
        let c = cfg(1.0 - 1e-12, LossKind::Sigmoid);
        let scores_p = [1.5, -0.5, 2.0];
        let mean_p: f64 = scores_p
            .iter()
            .map(|&t| loss(t, 1, LossKind::Sigmoid).0)
            .sum::<f64>()
            / 3.0;
        let r = risk_pn(&scores_p, &[0.3], &c).unwrap();
        assert!((r - mean_p).abs() < 1e-9);
    }

    #[test]
    fn upu_prior_zero_reduces_to_unlabeled_risk() {
        // prior -> 0 limit; use the smallest admissible prior.
        let c = cfg(1e-300, LossKind::Sigmoid);
        let scores_u = [0.1, -0.4, 2.0];
        let ru: f64 = scores_u
            .iter()
            .map(|&t| loss(t, -1, LossKind::Sigmoid).0)
            .sum::<f64>()
            / 3.0;
        let r = risk_upu(&[5.0], &scores_u, &c).unwrap();
        assert!((r - ru).abs() < 1e-12);
    }

    #[test]
    fn upu_sigmoid_complement_identity() {
        // With l(t,+1) + l(t,-1) = 1, uPU = 2 pi R_p^+ + R_u^- - pi.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pi: f64 = rng.gen_range(0.05..0.95);
            let c = cfg(pi, LossKind::Sigmoid);
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let u: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let rp_pos: f64 = p
                .iter()
                .map(|&t| loss(t, 1, LossKind::Sigmoid).0)
                .sum::<f64>()
                / p.len() as f64;
            let ru_neg: f64 = u
                .iter()
                .map(|&t| loss(t, -1, LossKind::Sigmoid).0)
                .sum::<f64>()
                / u.len() as f64;
            let direct = risk_upu(&p, &u, &c).unwrap();
            let via_identity = 2.0 * pi * rp_pos + ru_neg - pi;
            assert!((direct - via_identity).abs() < 1e-12);
        }
    }

    #[test]
    fn upu_matches_scalar_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let pi: f64 = rng.gen_range(0.05..0.95);
            let c = cfg(pi, LossKind::Sigmoid);
            let n = rng.gen_range(1..12);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
            // Same scores on both sides; expand the estimator by hand.
            let rp_pos: f64 = scores
                .iter()
                .map(|&t| loss(t, 1, LossKind::Sigmoid).0)
                .sum::<f64>()
                / n as f64;
            let rp_neg: f64 = scores
                .iter()
                .map(|&t| loss(t, -1, LossKind::Sigmoid).0)
                .sum::<f64>()
                / n as f64;
            let expected = pi * rp_pos + rp_neg - pi * rp_neg;
            let got = risk_upu(&scores, &scores, &c).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn nnpu_clip_inactive_example() {
        // scores_p = scores_u = [5,5,5], pi=0.9; values from a scalar oracle.
        let c = cfg(0.9, LossKind::Sigmoid);
        let s = [5.0, 5.0, 5.0];
        let (v, clip) = risk_nnpu(&s, &s, &c).unwrap();
        assert!(!clip);
        assert!((v - 0.105354280739).abs() < 1e-10);
        let upu = risk_upu(&s, &s, &c).unwrap();
        assert_eq!(v, upu);
    }

    #[test]
    fn nnpu_prior_near_zero_is_unlabeled_risk() {
        let c = cfg(1e-300, LossKind::Sigmoid);
        let u = [0.5, -1.0];
        let ru: f64 = u
            .iter()
            .map(|&t| loss(t, -1, LossKind::Sigmoid).0)
            .sum::<f64>()
            / 2.0;
        let (v, clip) = risk_nnpu(&[3.0], &u, &c).unwrap();
        assert!(!clip);
        assert!((v - ru).abs() < 1e-12);
    }

    #[test]
    fn nnpu_clip_active_when_unlabeled_risk_small() {
        // Unlabeled scores strongly negative => R_u^- tiny; pi R_p^- large.
        let c = cfg(0.9, LossKind::Sigmoid);
        let (v, clip) = risk_nnpu(&[-5.0], &[-10.0, -12.0], &c).unwrap();
        assert!(clip);
        let rp_pos = loss(-5.0, 1, LossKind::Sigmoid).0;
        assert!((v - 0.9 * rp_pos).abs() < 1e-15);
        let upu = risk_upu(&[-5.0], &[-10.0, -12.0], &c).unwrap();
        assert!(v > upu);
    }

    #[test]
    fn estimators_reject_empty_batches() {
        let c = cfg(0.5, LossKind::Sigmoid);
        assert_eq!(
            risk_pn(&[], &[0.0], &c),
            Err(RiskError::EmptyBatch("positive"))
        );
        assert_eq!(
            risk_upu(&[0.0], &[], &c),
            Err(RiskError::EmptyBatch("unlabeled"))
        );
        assert!(risk_nnpu(&[], &[], &c).is_err());
    }

    #[test]
    fn estimate_prior_cases() {
        // Merged validation counts: 72 positive out of 195.
        let mut labels = vec![true; 72];
        labels.extend(vec![false; 123]);
        let p = estimate_prior(&labels).unwrap();
        assert!((p - 0.369230769231).abs() < 1e-12);
        assert_eq!(estimate_prior(&[true, false]).unwrap(), 0.5);
        assert_eq!(estimate_prior(&[true, true]), Err(RiskError::SingleClass));
    }

    #[test]
    fn estimate_prior_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let labels: Vec<bool> = (0..1000).map(|_| rng.gen::<f64>() < 0.3).collect();
        let count = labels.iter().filter(|&&l| l).count();
        assert_eq!(
            estimate_prior(&labels).unwrap(),
            count as f64 / labels.len() as f64
        );
    }

    #[test]
    fn risk_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-6;
        for trial in 0..50 {
            let pi: f64 = rng.gen_range(0.1..0.9);
            let kind = if trial % 2 == 0 {
                LossKind::Sigmoid
            } else {
                LossKind::Logistic
            };
            let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for est in [Estimator::Pn, Estimator::Upu, Estimator::Nnpu] {
                let c = RiskConfig::new(pi, kind, est).unwrap();
                // Skip configurations near the nnPU clip boundary.
                if est == Estimator::Nnpu {
                    let g = risk_upu_grad(&p, &u, &c).unwrap();
                    let rp_pos: f64 = p.iter().map(|&t| loss(t, 1, kind).0).sum::<f64>()
                        / p.len() as f64;
                    if (g.value - pi * rp_pos).abs() < 1e-3 {
                        continue;
                    }
                }
                let g = risk_grad(&p, &u, &c).unwrap();
                let eval = |p: &[f64], u: &[f64]| risk_grad(p, u, &c).unwrap().value;
                for i in 0..p.len() {
                    let mut pp = p.clone();
                    pp[i] += h;
                    let vp = eval(&pp, &u);
                    pp[i] -= 2.0 * h;
                    let vm = eval(&pp, &u);
                    let fd = (vp - vm) / (2.0 * h);
                    let denom = g.grad_p[i].abs().max(fd.abs()).max(1e-8);
                    assert!(
                        ((g.grad_p[i] - fd) / denom).abs() < 1e-5,
                        "{est:?} grad_p[{i}]"
                    );
                }
                for j in 0..u.len() {
                    let mut uu = u.clone();
                    uu[j] += h;
                    let vp = eval(&p, &uu);
                    uu[j] -= 2.0 * h;
                    let vm = eval(&p, &uu);
                    let fd = (vp - vm) / (2.0 * h);
                    let denom = g.grad_u[j].abs().max(fd.abs()).max(1e-8);
                    assert!(
                        ((g.grad_u[j] - fd) / denom).abs() < 1e-5,
                        "{est:?} grad_u[{j}]"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn nnpu_nonnegative_and_bounded_below(
            pi in 0.05f64..0.95,
            p in prop::collection::vec(-8.0f64..8.0, 1..10),
            u in prop::collection::vec(-8.0f64..8.0, 1..10),
        ) {
            let c = cfg(pi, LossKind::Sigmoid);
            let (v, clip) = risk_nnpu(&p, &u, &c).unwrap();
            let rp_pos: f64 = p.iter()
                .map(|&t| loss(t, 1, LossKind::Sigmoid).0)
                .sum::<f64>() / p.len() as f64;
            prop_assert!(v >= 0.0);
            prop_assert!(v >= pi * rp_pos - 1e-15);
            let upu = risk_upu(&p, &u, &c).unwrap();
            if clip {
                prop_assert!(v > upu);
            } else {
                prop_assert!(v == upu);
            }
        }

        #[test]
        fn estimators_are_permutation_invariant(
            pi in 0.1f64..0.9,
            p in prop::collection::vec(-5.0f64..5.0, 2..8),
            u in prop::collection::vec(-5.0f64..5.0, 2..8),
        ) {
            let c = cfg(pi, LossKind::Sigmoid);
            let mut p_rev = p.clone();
            p_rev.reverse();
            let mut u_rev = u.clone();
            u_rev.reverse();
            let tol = 1e-12;
            let a = risk_pn(&p, &u, &c).unwrap();
            let b = risk_pn(&p_rev, &u_rev, &c).unwrap();
            prop_assert!((a - b).abs() < tol);
            let a = risk_upu(&p, &u, &c).unwrap();
            let b = risk_upu(&p_rev, &u_rev, &c).unwrap();
            prop_assert!((a - b).abs() < tol);
            let a = risk_nnpu(&p, &u, &c).unwrap().0;
            let b = risk_nnpu(&p_rev, &u_rev, &c).unwrap().0;
            prop_assert!((a - b).abs() < tol);
        }
    }
}
