//! Keyed transforms that let a BNN run on protected weights.
//!
//! A device-unique response keys a reversible transform of each hidden
//! layer's weights and thresholds. Inference runs on the stored `(W*, B*)`
//! with cheap input and output transforms, and equals the plain network bit
//! for bit. Without the response the same weights give near-chance accuracy.

mod model;
mod puf;
mod schedule;
mod transform;

pub use model::{
    canonical_thresholds, keyed_classify, protect, protect_with_schedule, protected_forward, ProtectedModel, Unlocked,
};
pub use puf::{expand_key, fnv1a64, puf_response, Challenge, PufDevice, Response, DEVICE_SECRET_BYTES, RESPONSE_BITS};
pub use schedule::{build_key_schedule, key_length_bits, key_length_formula, KeyMode, KeySchedule, SchemeId};
pub use transform::{
    invert_column, protect_cols, protect_rowinv_colswap, protect_rows, recover_column_output, recover_output_cols,
    transform_input_rows, DiagonalSpec, LayerKey, PermutationSpec,
};
