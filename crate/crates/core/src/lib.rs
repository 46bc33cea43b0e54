//! Desk-scale toolkit for turn-grabbing intention prediction.
//!
//! The pipeline turns per-face feature and active-speaker-detection streams
//! into positive/unlabeled training samples, trains a small
//! Conv1D -> LSTM -> FC classifier with a non-negative PU risk estimator,
//! evaluates it, tunes hyperparameters with median pruning, and renders a
//! pseudo leaning-forward effect on image frames.
//!
//! Modules map onto pipeline stages:
//!
//! - [`dataio`]: parse feature/ASD CSV streams, match them per face by
//!   bounding-box intersection, and fill feature gaps by interpolation.
//! - [`segmentation`]: smooth speaking activity, detect turn-taking events,
//!   and extract positive/unlabeled windows.
//! - [`pu`]: loss functions and the PN / uPU / nnPU empirical risk
//!   estimators with exact gradients.
//! - [`net`]: from-scratch Conv1D x2 -> LSTM -> FC network with exact
//!   backpropagation, Adam, and the training loop.
//! - [`metrics`]: MCC, AUC, precision/recall/F/accuracy, and the
//!   conversation-balance ratios.
//! - [`tuner`]: exhaustive grid search with median pruning.
//! - [`effect`]: lean-forward trajectory derivation and affine warping.
//! - [`synth`]: synthetic sessions with known ground truth for end-to-end
//!   validation.

pub mod dataio;
pub mod effect;
pub mod metrics;
pub mod net;
pub mod pu;
pub mod segmentation;
pub mod synth;
pub mod tensor;
pub mod tuner;
