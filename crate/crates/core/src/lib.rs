//! Classifier guidance for denoising diffusion with exactly known data.
//!
//! The data distribution is a Gaussian mixture, so the denoiser, its
//! Jacobian and the Bayes-optimal classifier are available in closed form.
//! Trained MLP classifiers (clean or noise-augmented) supply the guidance
//! gradients whose stability is under study.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod linalg;
pub mod nn;
pub mod numfmt;
pub mod plot;
pub mod rng;
pub mod schedule;
pub mod sensitivity;
pub mod synthdata;

pub use classifier::{accuracy, ClassifierHandle, Preprocess};
pub use config::{Experiment, ExperimentConfig, Persona};
pub use denoiser::{AnalyticDenoiser, GuidancePath, JacobianMode};
pub use error::{Error, Result};
pub use nn::{Activation, Mlp, NoiseMode, Objective, TrainConfig};
pub use schedule::{PosteriorVariance, Schedule};
pub use synthdata::{sample_dataset, GmmSpec, LabeledDataset};
