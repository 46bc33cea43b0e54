//! Exhaustive grid search with median pruning.
//!
//! Trials run sequentially in grid order; after each epoch past the warmup,
//! a trial whose validation MCC falls strictly below the median of prior
//! trials' values at the same epoch is terminated. Sequential order makes
//! the median pool, and therefore the whole study, reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NetworkConfig;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("empty search dimension `{0}`")]
    EmptySpace(&'static str),
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("trial {trial_id} failed: {message}")]
    TrialFailed { trial_id: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Hyperparameter domains, exhaustively crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub conv1_dims: Vec<usize>,
    pub conv2_dims: Vec<usize>,
    pub lstm_layers: Vec<usize>,
    pub lstm_dims: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    /// No pruning during the first this-many epochs.
    pub prune_warmup: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            conv1_dims: vec![8, 16, 32, 64],
            conv2_dims: vec![8, 16, 32, 64, 128],
            lstm_layers: vec![1, 2, 3, 4, 5, 6],
            lstm_dims: vec![16, 32, 64, 128],
            learning_rates: vec![1e-2, 1e-3, 1e-4, 1e-5],
            epochs: 50,
            prune_warmup: 5,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TuneError> {
        if self.conv1_dims.is_empty() {
            return Err(TuneError::EmptySpace("conv1_dims"));
        }
        if self.conv2_dims.is_empty() {
            return Err(TuneError::EmptySpace("conv2_dims"));
        }
        if self.lstm_layers.is_empty() {
            return Err(TuneError::EmptySpace("lstm_layers"));
        }
        if self.lstm_dims.is_empty() {
            return Err(TuneError::EmptySpace("lstm_dims"));
        }
        if self.learning_rates.is_empty() {
            return Err(TuneError::EmptySpace("learning_rates"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.conv1_dims.len()
            * self.conv2_dims.len()
            * self.lstm_layers.len()
            * self.lstm_dims.len()
            * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full Cartesian product, in deterministic nested-loop order:
/// conv1 (outermost) -> conv2 -> lstm_layers -> lstm_dim -> learning_rate.
/// Non-grid fields (kernel size, channels, seq_len, batch, seed) come from
/// `base`.
pub fn grid_trials(space: &SearchSpace, base: &NetworkConfig) -> Vec<NetworkConfig> {
    let mut out = Vec::with_capacity(space.len());
    for &conv1 in &space.conv1_dims {
        for &conv2 in &space.conv2_dims {
            for &layers in &space.lstm_layers {
                for &dim in &space.lstm_dims {
                    for &lr in &space.learning_rates {
                        out.push(NetworkConfig {
                            conv1_dim: conv1,
                            conv2_dim: conv2,
                            lstm_layers: layers,
                            lstm_dim: dim,
                            learning_rate: lr,
                            epochs: space.epochs,
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneDecision {
    Keep,
    Prune,
}

/// Median rule at epoch `e` (1-based): always keep during the warmup or
/// with an empty pool; otherwise prune iff the value is strictly below the
/// median. An even pool's median is the mean of the middle two.
pub fn median_prune(
    history_pool: &[f64],
    trial_value: f64,
    epoch: usize,
    prune_warmup: usize,
) -> PruneDecision {
    if epoch <= prune_warmup || history_pool.is_empty() {
        return PruneDecision::Keep;
    }
    let mut pool = history_pool.to_vec();
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pool.len();
    let median = if n % 2 == 1 {
        pool[n / 2]
    } else {
        (pool[n / 2 - 1] + pool[n / 2]) / 2.0
    };
    if trial_value < median {
        PruneDecision::Prune
    } else {
        PruneDecision::Keep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
    Failed,
}

/// One hyperparameter configuration and its per-epoch validation MCCs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub config: NetworkConfig,
    /// Validation MCC per executed epoch.
    pub history: Vec<f64>,
    pub status: TrialStatus,
    pub best_mcc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub space: SearchSpace,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub best_trial_id: Option<usize>,
    pub best_mcc: f64,
    pub executed_epochs: usize,
}

impl StudyReport {
    pub fn best_config(&self) -> Option<&NetworkConfig> {
        self.best_trial_id.map(|id| &self.trials[id].config)
    }
}

/// Drives one trial: reports each epoch's validation MCC and learns whether
/// to continue. Implementations must be deterministic given (config, seed).
pub type EpochSink<'a> = dyn FnMut(usize, f64) -> PruneDecision + 'a;
pub type TrainFn<'a> = dyn FnMut(&NetworkConfig, u64, &mut EpochSink) -> Result<(), String> + 'a;

/// Runs the whole grid sequentially, consulting the median rule after every
/// epoch against same-epoch values of earlier trials. `checkpoint` (the
/// report so far, written after every trial) makes long studies resumable.
pub fn run_study(
    space: &SearchSpace,
    base: &NetworkConfig,
    train_fn: &mut TrainFn,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<StudyReport, TuneError> {
    space.validate()?;
    let configs = grid_trials(space, base);

    let mut report = match checkpoint {
        Some(path) if path.exists() => {
            let loaded = load_checkpoint(path)?;
            if loaded.space != *space || loaded.seed != seed {
                return Err(TuneError::CheckpointCorrupt(
                    "checkpoint space or seed does not match this study".into(),
                ));
            }
            if loaded.trials.len() > configs.len()
                || loaded
                    .trials
                    .iter()
                    .any(|t| t.status == TrialStatus::Running)
            {
                return Err(TuneError::CheckpointCorrupt(
                    "checkpoint holds more trials than the grid or an unfinished trial".into(),
                ));
            }
            log::info!("resuming study at trial {}", loaded.trials.len());
            loaded
        }
        _ => StudyReport {
            space: space.clone(),
            seed,
            trials: Vec::new(),
            best_trial_id: None,
            best_mcc: f64::NEG_INFINITY,
            executed_epochs: 0,
        },
    };

    for (trial_id, config) in configs.iter().enumerate().skip(report.trials.len()) {
        // Same-epoch values of every prior trial (completed or pruned).
        let prior: Vec<Vec<f64>> = report.trials.iter().map(|t| t.history.clone()).collect();
        let mut history: Vec<f64> = Vec::new();
        let mut pruned = false;
        {
            let warmup = space.prune_warmup;
            let mut sink = |epoch: usize, value: f64| -> PruneDecision {
                history.push(value);
                let pool: Vec<f64> = prior
                    .iter()
                    .filter_map(|h| h.get(epoch - 1))
                    .copied()
                    .collect();
                let decision = median_prune(&pool, value, epoch, warmup);
                if decision == PruneDecision::Prune {
                    pruned = true;
                }
                decision
            };
            train_fn(config, seed, &mut sink).map_err(|message| TuneError::TrialFailed {
                trial_id,
                message,
            })?;
        }
        let best_mcc = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.executed_epochs += history.len();
        report.trials.push(Trial {
            trial_id,
            config: config.clone(),
            history,
            status: if pruned {
                TrialStatus::Pruned
            } else {
                TrialStatus::Complete
            },
            best_mcc,
        });
        if best_mcc > report.best_mcc {
            report.best_mcc = best_mcc;
            report.best_trial_id = Some(trial_id);
        }
        if let Some(path) = checkpoint {
            save_checkpoint(&report, path)?;
        }
    }
    Ok(report)
}

pub fn save_checkpoint(report: &StudyReport, path: &Path) -> Result<(), TuneError> {
    let io_err = |source| TuneError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| TuneError::CheckpointCorrupt(e.to_string()))?;
    std::fs::write(&tmp, text).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<StudyReport, TuneError> {
    let text = std::fs::read_to_string(path).map_err(|source| TuneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| TuneError::CheckpointCorrupt(e.to_string()))
}
