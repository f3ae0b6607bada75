//! Universal physically-realizable adversarial rooftop objects against
//! LiDAR object detectors.
//!
//! The crate covers the full desk-scale pipeline: deformable-mesh
//! adversary parameterization, LiDAR ray casting, rooftop localization
//! through a PCA shape prior over vehicle SDFs, small trainable
//! reference detectors, white-box and black-box attack optimizers, and
//! augmentation / adversarial-training defenses with their evaluation
//! metrics.

pub mod attack;
pub mod config;
pub mod dataset;
pub mod defense;
pub mod deform;
mod mc_tables;
pub mod delaunay;
pub mod detector;
pub mod mesh;
pub mod mesh_io;
pub mod raycast;
pub mod roof_fit;
pub mod scene;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("shape prior error: {0}")]
    Prior(String),
    #[error("detector error: {0}")]
    Detector(String),
    #[error("attack error: {0}")]
    Attack(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
