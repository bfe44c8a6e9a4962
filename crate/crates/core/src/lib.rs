//! Simulator for layered spiking networks that learn concept hierarchies
//! with Oja's rule and winner-take-all engagement.
//!
//! The crate covers the concept-hierarchy data model, the synchronous
//! network, the learning loop, a single-neuron dynamics oracle, recognition
//! evaluation, lower-bound certificates and a seeded experiment harness.
//! Numeric code is generic over [`Scalar`]; `f64` is the working type and
//! [`num_rational::BigRational`] backs exact audits.

// `!(a <= b)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod harness;
pub mod hierarchy;
pub mod lower_bound;
pub mod network;
pub mod ratio;
pub mod recognition;
pub mod scalar;
pub mod trace;
pub mod training;

pub use hierarchy::{ConceptHierarchy, ConceptId, HierarchyError, SupportedSet};
pub use network::{NetworkError, NetworkParams, NetworkState, NeuronId, WeightSnapshot};
pub use ratio::Fraction;
pub use scalar::Scalar;
pub use trace::SimulationTrace;
pub use training::{LearnParams, PresentationSchedule, RepMap};

/// Exact rational scalar.
pub type Rational = num_rational::BigRational;

/// Working network type.
pub type Network = NetworkState<f64>;
/// Single-precision network for quick experiments.
pub type Network32 = NetworkState<f32>;
/// Exact network for short audits.
pub type ExactNetwork = NetworkState<Rational>;

pub type TrainOutcome = training::TrainOutcome<f64>;
pub type NoiseFreeState = dynamics::SingleNeuronState<f64>;
pub type ExactNoiseFreeState = dynamics::SingleNeuronState<Rational>;
