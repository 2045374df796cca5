//! Two-party secret-shared inference for object detection.
//!
//! Images are split into additive shares over `Z_p` (`p = 2^127 - 1`) and
//! pushed through secure convolution, batch normalization, activations,
//! pooling, box prediction, sorting and non-maximum suppression by two
//! parties with help from an offline dealer. A plaintext backend runs the
//! same block graph for error measurement.

pub mod detect;
pub mod error;
pub mod fixed;
pub mod harness;
pub mod nn;
pub mod party;
pub mod pipeline;
pub mod protocols;
pub mod ring;
pub mod sharing;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use fixed::FixedPointCodec;
pub use party::Party;
pub use ring::RingElement;
pub use sharing::PartyId;
