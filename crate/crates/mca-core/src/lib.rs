//! Rotary-position attention with pluggable 2D position layouts.
//!
//! The crate covers the pipeline from position assignment to measurement:
//! rotary frequency schedules and rotations ([`rope`]), grid position
//! layouts including Manhattan and concentric remappings ([`layout`]),
//! index-causal masking for interleaved text/image sequences ([`mask`]),
//! masked rotary attention with exact gradients ([`attention`]), long-range
//! score decay profiling ([`decay`]), caption hallucination rates
//! ([`chair`]), and a small trainable model for measuring how layouts shape
//! learning ([`toy`]).
//!
//! Numeric kernels are generic over [`Scalar`] (any float that behaves like
//! `f32`/`f64`); the aliases at the crate root pin the default precision
//! used by the binaries and the toy harness.

pub mod attention;
pub mod chair;
pub mod decay;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod layout;
pub mod mask;
pub mod rope;
pub mod scalar;
pub mod toy;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default precision for everything the binaries compute.
pub type Real = f64;

/// Frequency schedule at the default precision.
pub type Frequencies = rope::RotaryFrequencies<Real>;

/// Dense rotation matrix at the default precision.
pub type Rotation = rope::RotationMatrix<Real>;

/// Attention shape configuration at the default precision.
pub type Attention = attention::AttentionConfig<Real>;

/// Decay profile at the default precision.
pub type Decay = decay::DecayProfile<Real>;
