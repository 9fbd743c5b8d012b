//! Completion of partial textured body meshes.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`shape`]: an encoder-decoder deforms a fixed-topology template into the
//!    pose and shape of a partial scan, then the latent code is refined
//!    against a directed Chamfer objective.
//! 2. [`texture`]: the partial texture is carried onto the completed mesh by
//!    casting rays along the interpolated normals, and the missing-texel mask
//!    is read off the transferred atlas.
//! 3. [`inpaint`]: a UNet of background-aware partial convolutions fills the
//!    missing texels while ignoring the atlas background.
//!
//! [`pipeline`] wires the stages to files; the `meshboost` binary exposes it.

pub mod error;
pub mod inpaint;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod shape;
pub mod spatial;
pub mod texture;

pub use error::{Error, Result};
pub use mesh::{Mesh, TextureAtlas, TexturedMesh, Vec3};
