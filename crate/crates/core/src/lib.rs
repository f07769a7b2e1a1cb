//! Generative machine listener.
//!
//! A model that maps a reference/coded stereo pair to a probability
//! distribution over individual MUSHRA listener scores, together with the
//! tooling around it: a Gammatone front end, the distribution losses and
//! listening-test statistics, a small convolutional network trained with
//! Adam on per-listener negative log-likelihood, CutMix/MixUp augmentation,
//! the benchmarking metrics and a synthetic dataset generator.

pub mod augment;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod harness;
pub mod net;
pub mod prob;

pub use error::{Error, Result};
pub use eval::{ConditionResult, EvalReport};
pub use frontend::{FourChannels, GammatoneConfig, ModelInput, StereoSignal};
pub use harness::{Manifest, RatingRecord, SyntheticSpec};
pub use net::{BackboneConfig, Checkpoint, Model, ModelParams, Sample, TrainConfig};
pub use prob::{ConfidenceInterval, Family, ScoreDistribution};
