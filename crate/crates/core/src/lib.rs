//! Local deep implicit functions.
//!
//! A shape is a sum of oriented anisotropic Gaussians, each modulated by a
//! small latent-conditioned residual network evaluated in the Gaussian's
//! local frame. This crate fits such models directly to watertight meshes,
//! extracts surfaces from them and scores reconstructions.

pub mod cli;
pub mod decoder;
pub mod depth;
pub mod error;
pub mod fit;
pub mod fixtures;
pub mod geom;
pub mod grad;
pub mod loss;
pub mod mesher;
pub mod metrics;
pub mod model;
pub mod rng;

pub use decoder::{decoder_forward, param_count, DecoderWeights};
pub use error::{Error, Result};
pub use geom::{Aabb, TriMesh, Vec3};
pub use model::{activate, eval_ldif, ElementParams, LdifModel, RawElementVars};
