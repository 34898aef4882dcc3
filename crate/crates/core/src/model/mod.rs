//! Joint-model assembly: configuration, data stacking, latent layout,
//! hyperparameters, the predictor map and the joint log-density.

mod config;
mod data;
mod hyper;
mod joint;
mod layout;
mod mapping;

use thiserror::Error;

pub use config::{
    AssociationStructure, Baseline, GridConfig, IntegrationStrategy, ModelConfig, RandomEffects,
    SplineConfig,
};
pub use data::{stack, JointData, LongRow, Response, StackedDesign, SurvRow};
pub use hyper::{HyperParams, HyperSpace};
pub use joint::{
    joint_logdensity_parts, JointModel, LikTerm, LogDensityParts, PriorPrecision,
    AUGMENTATION_PRECISION,
};
pub use layout::{Block, BlockKind, LatentLayout, LatentVector};
pub use mapping::{association_weights, build_mapping, interpolation_weights, layout_for, nu_values};

use crate::gmrf::GmrfError;
use crate::likelihoods::LikelihoodError;
use crate::priors::{HyperName, PriorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("no data rows")]
    EmptyData,
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateArity { row: usize, expected: usize, found: usize },
    #[error("subject `{id}`: invalid time {time}")]
    InvalidTime { id: String, time: f64 },
    #[error("subject `{id}`: event indicator must be 0 or 1, got {value}")]
    InvalidEvent { id: String, value: u8 },
    #[error("subject `{id}`: non-finite value")]
    NonFiniteValue { id: String },
    #[error("subject `{0}` has longitudinal rows but no survival row")]
    MissingSurvivalRow(String),
    #[error("subject `{0}` has more than one survival row")]
    DuplicateSurvivalRow(String),
    #[error("time {time} lies outside the knot range [{lo}, {hi}]")]
    TimeOutsideKnotRange { time: f64, lo: f64, hi: f64 },
    #[error("association structure needs {expected} scaling parameters, got {found}")]
    WrongNuArity { expected: usize, found: usize },
    #[error("hyperparameter `{0}` is missing")]
    MissingHyperparameter(HyperName),
    #[error("hyperparameter `{name}` = {value} is outside its domain")]
    HyperparameterDomain { name: HyperName, value: f64 },
    #[error("latent vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}
