//! Binarized MLPs whose stored weights are only usable next to the device
//! that protected them.
//!
//! A simulated PUF answers a public challenge with a device-unique
//! response; the response expands into keys for a reversible sign-flip and
//! pair-swap transform of each hidden layer. Inference on the transformed
//! weights, with the input and output transforms applied, equals the plain
//! network exactly, on the integer backend and on an ideal crossbar. The
//! guide in `book/` walks through each module with tested examples.

pub mod attack;
pub mod bits;
pub mod bnn;
pub mod crossbar;
pub mod error;
pub mod format;
pub mod protection;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bnn.md")]
    mod bnn {}
    #[doc = include_str!("../../../book/src/protection.md")]
    mod protection {}
    #[doc = include_str!("../../../book/src/keys.md")]
    mod keys {}
    #[doc = include_str!("../../../book/src/crossbar.md")]
    mod crossbar {}
    #[doc = include_str!("../../../book/src/attack.md")]
    mod attack {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
