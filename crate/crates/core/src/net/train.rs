//! Risk-driven training loop.
//!
//! Each epoch shuffles both sides with a seeded RNG, forms minibatches that
//! contain positive and unlabeled (or negative, under PN) members in
//! proportion to the dataset sizes, backpropagates the chosen risk, and
//! takes an Adam step. Validation MCC at threshold 0 is appended to the
//! history after every epoch; the parameters of the best epoch win.
//! Everything is single-threaded and deterministic given the seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, forward, forward_cached, Adam, ModelParams, NetError, NetworkConfig};
use crate::metrics::{confusion, mcc};
use crate::pu::{risk_grad, RiskConfig};
use crate::tensor::Tensor;

/// One line of training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean minibatch risk over the epoch.
    pub train_risk: f64,
    /// Validation MCC at threshold 0.
    pub val_mcc: f64,
}

/// Epoch callback verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSignal {
    Continue,
    /// Stop after the current epoch (used by the tuner's pruner).
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters of the epoch with the highest validation MCC (the
    /// earliest such epoch on ties); the initial parameters if no epoch
    /// ran.
    pub params: ModelParams,
    pub history: Vec<EpochStat>,
    /// True when the callback stopped training early.
    pub stopped_early: bool,
}

/// Trains from scratch. Under PN, `unlabeled` holds the negatives.
///
/// `val` pairs a sample with its merged binary label and needs both
/// classes. The callback runs after every epoch and may stop training.
pub fn train(
    positives: &[Tensor],
    unlabeled: &[Tensor],
    val: &[(Tensor, bool)],
    net_cfg: &NetworkConfig,
    risk_cfg: &RiskConfig,
    mut callback: Option<&mut dyn FnMut(&EpochStat) -> TrainSignal>,
) -> Result<TrainResult, NetError> {
    net_cfg.validate()?;
    if positives.is_empty() {
        return Err(NetError::EmptyDataset("positives"));
    }
    if unlabeled.is_empty() {
        return Err(NetError::EmptyDataset("unlabeled"));
    }
    if val.is_empty() {
        return Err(NetError::EmptyDataset("validation"));
    }
    if !val.iter().any(|(_, l)| *l) || !val.iter().any(|(_, l)| !*l) {
        return Err(NetError::EmptyDataset("validation needs both classes"));
    }

    let mut params = ModelParams::init(net_cfg)?;
    let mut best_params = params.clone();
    let mut best_mcc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(net_cfg.epochs);
    let mut stopped_early = false;

    let mut adam = Adam::new(net_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(net_cfg.init_seed.wrapping_add(0x9e37_79b9));

    let n_p = positives.len();
    let n_u = unlabeled.len();
    let total = n_p + n_u;
    // Every batch must carry both sides, so never more batches than the
    // smaller dataset.
    let n_batches = (total / net_cfg.batch_size).clamp(1, n_p.min(n_u));

    let mut idx_p: Vec<usize> = (0..n_p).collect();
    let mut idx_u: Vec<usize> = (0..n_u).collect();

    for epoch in 1..=net_cfg.epochs {
        idx_p.shuffle(&mut rng);
        idx_u.shuffle(&mut rng);

        let mut risk_sum = 0.0;
        for b in 0..n_batches {
            let p_lo = b * n_p / n_batches;
            let p_hi = (b + 1) * n_p / n_batches;
            let u_lo = b * n_u / n_batches;
            let u_hi = (b + 1) * n_u / n_batches;
            let batch_p = &idx_p[p_lo..p_hi];
            let batch_u = &idx_u[u_lo..u_hi];

            let mut caches_p = Vec::with_capacity(batch_p.len());
            let mut scores_p = Vec::with_capacity(batch_p.len());
            for &i in batch_p {
                let c = forward_cached(&params, &positives[i])?;
                scores_p.push(c.logit);
                caches_p.push(c);
            }
            let mut caches_u = Vec::with_capacity(batch_u.len());
            let mut scores_u = Vec::with_capacity(batch_u.len());
            for &i in batch_u {
                let c = forward_cached(&params, &unlabeled[i])?;
                scores_u.push(c.logit);
                caches_u.push(c);
            }

            let risk = risk_grad(&scores_p, &scores_u, risk_cfg)?;
            if !risk.value.is_finite() {
                return Err(NetError::DivergenceDetected { epoch });
            }
            risk_sum += risk.value;

            let mut grads = ModelParams::zeros(net_cfg)?;
            for ((cache, &i), &g) in caches_p.iter().zip(batch_p).zip(&risk.grad_p) {
                if g != 0.0 {
                    backward(&params, &positives[i], cache, g, &mut grads);
                }
            }
            for ((cache, &i), &g) in caches_u.iter().zip(batch_u).zip(&risk.grad_u) {
                if g != 0.0 {
                    backward(&params, &unlabeled[i], cache, g, &mut grads);
                }
            }
            adam.step(&mut params, &grads, net_cfg.learning_rate);
        }

        if !params.all_finite() {
            return Err(NetError::DivergenceDetected { epoch });
        }

        let val_mcc = validation_mcc(&params, val)?;
        let stat = EpochStat {
            epoch,
            train_risk: risk_sum / n_batches as f64,
            val_mcc,
        };
        history.push(stat);
        if val_mcc > best_mcc {
            best_mcc = val_mcc;
            best_params = params.clone();
        }
        if let Some(cb) = callback.as_deref_mut() {
            if cb(&stat) == TrainSignal::Stop {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainResult {
        params: best_params,
        history,
        stopped_early,
    })
}

/// MCC of thresholded logits (threshold 0) on a labeled set.
pub fn validation_mcc(params: &ModelParams, val: &[(Tensor, bool)]) -> Result<f64, NetError> {
    let mut preds = Vec::with_capacity(val.len());
    let mut labels = Vec::with_capacity(val.len());
    for (sample, label) in val {
        preds.push(forward(params, sample)? > 0.0);
        labels.push(*label);
    }
    let c = confusion(&preds, &labels)
        .map_err(|e| NetError::InvalidConfig(format!("validation set: {e}")))?;
    Ok(mcc(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pu::{Estimator, LossKind};
    use rand::Rng;

    fn tiny_config(epochs: usize) -> NetworkConfig {
        NetworkConfig {
            conv1_dim: 2,
            conv2_dim: 3,
            kernel_size: 3,
            lstm_layers: 1,
            lstm_dim: 3,
            input_channels: 2,
            seq_len: 6,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs,
            init_seed: 5,
        }
    }

    /// Separable two-class toy data: positives ride a +level offset.
    fn toy_data(n: usize, level: f64, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Tensor::from_vec(
                    &[6, 2],
                    (0..12).map(|_| level + rng.gen_range(-0.3..0.3)).collect(),
                )
            })
            .collect()
    }

    fn risk_cfg(est: Estimator) -> RiskConfig {
        RiskConfig::new(0.5, LossKind::Sigmoid, est).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialized_params() {
        let cfg = tiny_config(0);
        let pos = toy_data(4, 1.0, 1);
        let neg = toy_data(4, -1.0, 2);
        let val: Vec<(Tensor, bool)> = pos
            .iter()
            .map(|t| (t.clone(), true))
            .chain(neg.iter().map(|t| (t.clone(), false)))
            .collect();
        let out = train(&pos, &neg, &val, &cfg, &risk_cfg(Estimator::Pn), None).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.params, ModelParams::init(&cfg).unwrap());
    }

    #[test]
    fn same_seed_gives_bit_identical_history() {
        let cfg = tiny_config(4);
        let pos = toy_data(10, 1.0, 3);
        let neg = toy_data(12, -1.0, 4);
        let val: Vec<(Tensor, bool)> = pos
            .iter()
            .take(4)
            .map(|t| (t.clone(), true))
            .chain(neg.iter().take(4).map(|t| (t.clone(), false)))
            .collect();
        let a = train(&pos, &neg, &val, &cfg, &risk_cfg(Estimator::Pn), None).unwrap();
        let b = train(&pos, &neg, &val, &cfg, &risk_cfg(Estimator::Pn), None).unwrap();
        assert_eq!(a.history.len(), 4);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_risk.to_bits(), y.train_risk.to_bits());
            assert_eq!(x.val_mcc.to_bits(), y.val_mcc.to_bits());
        }
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn pn_loss_decreases_on_separable_data() {
        let mut cfg = tiny_config(5);
        cfg.learning_rate = 1e-3;
        let pos = toy_data(16, 1.5, 7);
        let neg = toy_data(16, -1.5, 8);
        let val: Vec<(Tensor, bool)> = pos
            .iter()
            .take(4)
            .map(|t| (t.clone(), true))
            .chain(neg.iter().take(4).map(|t| (t.clone(), false)))
            .collect();
        let out = train(&pos, &neg, &val, &cfg, &risk_cfg(Estimator::Pn), None).unwrap();
        for w in out.history.windows(2) {
            assert!(
                w[1].train_risk <= w[0].train_risk + 1e-12,
                "risk went up: {} -> {}",
                w[0].train_risk,
                w[1].train_risk
            );
        }
    }

    #[test]
    fn callback_stop_prunes_training() {
        let cfg = tiny_config(10);
        let pos = toy_data(6, 1.0, 9);
        let neg = toy_data(6, -1.0, 10);
        let val: Vec<(Tensor, bool)> = pos
            .iter()
            .take(2)
            .map(|t| (t.clone(), true))
            .chain(neg.iter().take(2).map(|t| (t.clone(), false)))
            .collect();
        let mut seen = 0usize;
        let mut cb = |_: &EpochStat| {
            seen += 1;
            if seen == 3 {
                TrainSignal::Stop
            } else {
                TrainSignal::Continue
            }
        };
        let out = train(
            &pos,
            &neg,
            &val,
            &cfg,
            &risk_cfg(Estimator::Nnpu),
            Some(&mut cb),
        )
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn rejects_empty_and_single_class_inputs() {
        let cfg = tiny_config(1);
        let pos = toy_data(2, 1.0, 1);
        let val: Vec<(Tensor, bool)> = pos.iter().map(|t| (t.clone(), true)).collect();
        assert!(matches!(
            train(&pos, &[], &val, &cfg, &risk_cfg(Estimator::Nnpu), None),
            Err(NetError::EmptyDataset("unlabeled"))
        ));
        assert!(matches!(
            train(&pos, &pos, &val, &cfg, &risk_cfg(Estimator::Nnpu), None),
            Err(NetError::EmptyDataset(_))
        ));
    }
}
