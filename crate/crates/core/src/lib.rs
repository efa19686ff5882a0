//! Event-driven spiking neural network engine for binary classification of
//! event-camera streams.
//!
//! Pipeline: event streams ([`event_stream`], simulated from frames by
//! [`evsim`] or generated by [`synthgen`]) are binned into binary spike
//! tensors, pooled and passed through a stack of dense LIF layers
//! ([`network`], [`neuron`]). Training minimises a spike-rate loss ([`loss`])
//! with surrogate-gradient BPTT and Adam ([`trainer`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod event_stream;
pub mod evsim;
pub mod loss;
pub mod network;
pub mod neuron;
pub mod par;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use error::{Error, Result};

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient verification).
pub trait Real:
    Float + FromPrimitive + Default + Debug + Sum + AddAssign + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + Default + Debug + Sum + AddAssign + Send + Sync + 'static
{
}

/// SHA-256 (hex) of the compact JSON encoding of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("value serialises to JSON")))
}
