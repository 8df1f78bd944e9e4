//! Animatable textured 3D guidance for video virtual try-on.
//!
//! The crate covers the geometric half of a guidance-driven try-on pipeline:
//!
//! * [`body`] – a parametric skinned humanoid (template + shape/pose
//!   blendshapes + linear blend skinning over a kinematic tree),
//! * [`raster`] – weak-perspective camera and z-buffered rasterization of
//!   silhouette, normal, depth and color maps,
//! * [`fit`] – refinement of shape, translation and camera scale against a
//!   clothed normal map and silhouette with the pose frozen,
//! * [`recon`] – least-squares normal integration, pixel-grid meshing,
//!   body infill and texture baking,
//! * [`rig`] – KNN skinning-weight transfer and animation of the clothed mesh,
//! * [`keyframe`] and [`mask`] – keyframe selection and the rectangular
//!   agnostic mask,
//! * [`cond`] – diffusion conditioning tensors (v-prediction algebra,
//!   17-channel denoiser input, reference concatenation, training mix),
//! * [`pipeline`] – the end-to-end orchestrator and synthetic fixture.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise; results are
//! identical either way.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod cond;
pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod keyframe;
pub mod mask;
pub mod math;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod recon;
pub mod rig;
pub mod spatial;

pub use error::{Error, Result};
