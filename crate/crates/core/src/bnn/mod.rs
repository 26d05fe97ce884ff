//! Exact integer inference for binarized networks.
//!
//! Weights and activations are `±1`, pre-activations are integers computed
//! with XNOR and popcount, and batch norm is folded into an even threshold
//! per column, so a hidden layer is `sign(Wᵀx - B)` with `sign(0) = +1`.

mod matrix;
mod model;
mod threshold;
mod vector;

pub use matrix::{xnor_popcount_matvec, BinWeightMatrix};
pub use model::{
    argmax, classify_with, evaluate, predict_all, BnnModel, Classifier, EncodedSet, HiddenLayer, LayerEngine,
    OutputHead,
};
pub use threshold::{ceil_to_even, fold_batchnorm, sign_threshold, FoldedBatchNorm, ThresholdVec};
pub use vector::BipolarVec;
