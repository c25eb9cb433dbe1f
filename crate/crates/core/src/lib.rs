//! Matrix factorization with a Zipf-exponent penalty that counteracts
//! popularity concentration (the Matthew Effect) in recommendations.
//!
//! Training is two-stage: a vanilla cosine MF model supplies item popularity
//! ranks, a Lasso fit turns them into per-user coefficients, and the penalized
//! trainer then uses those coefficients to push the estimated Zipf exponent
//! of its own output.

pub mod alpha;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod model;
pub mod powerlaw;
pub mod synth;

pub use alpha::{AlphaCoefficients, LassoConfig};
pub use data::{load_movielens, DataSplit, Rating, RatingScale, RatingsDataset};
pub use engine::{train_vanilla, train_zipf, TrainConfig, TrainOutcome, Trainer, TrainerRegistry};
pub use error::{Error, Result};
pub use model::FactorModel;
