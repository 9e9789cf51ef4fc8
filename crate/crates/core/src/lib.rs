//! Compositional inclusion scoring for text-to-image models.
//!
//! The pipeline: a [`registry`] of concepts, a stratified [`suite`] of
//! prompts, image [`generation`] through a backend and cache, component
//! [`detection`], inclusion [`metrics`], internal [`diagnostics`] and
//! [`reporting`]. The [`runner`] ties the stages together under a manifest.

pub mod detection;
pub mod diagnostics;
pub mod generation;
pub mod glyph;
pub mod metrics;
pub mod registry;
pub mod reporting;
pub mod runner;
pub mod suite;
pub mod util;
