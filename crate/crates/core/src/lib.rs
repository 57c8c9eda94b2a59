//! Streaming recommendation with continuous-time latent factors.
//!
//! Users and items carry `d`-dimensional latent vectors that drift as
//! Brownian motion and are born from the population average. Ratings are
//! ordered-probit readings of their inner product. [`filter`] tracks Gaussian
//! posteriors online, [`em`] learns the noise and drift variances offline,
//! [`synthetic`] samples from the model and [`eval`] runs prequential
//! experiments on rating logs.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision.

pub mod em;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod model;
pub mod probit;
pub mod scalar;
pub mod synthetic;

pub use em::{em_fit, EmConfig, EmFit, PairCounting, TraceRow};
pub use error::{Error, Result};
pub use eval::{correlation_decay, load_movielens, prequential_eval, rmse, EvalProtocol, EvalReport};
pub use filter::{FilterConfig, FilterState, StartPoint};
pub use model::{Event, EventKind, EventLog, ItemId, LatentState, ModelParams, Side, Time, UserId};
pub use probit::{RatingMap, RatingScale, TruncatedGaussian};
pub use scalar::Scalar;
pub use synthetic::{generate, SimConfig, SimOutput};

pub type FilterStateF64 = FilterState<f64>;
pub type FilterStateF32 = FilterState<f32>;
pub type LatentStateF64 = LatentState<f64>;
pub type LatentStateF32 = LatentState<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type RatingScaleF64 = RatingScale<f64>;
pub type RatingScaleF32 = RatingScale<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
