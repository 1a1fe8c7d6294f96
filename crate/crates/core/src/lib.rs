//! Core library for the nerfchat pipeline.
//!
//! The flow, end to end: procedural scenes are rendered into small multi-view
//! datasets (`scenegen`), a tiny MLP radiance field is fit per scene (`nerf`),
//! the fitted weights are stacked into a fixed-layout matrix (`weightspace`),
//! a row-wise set encoder turns that matrix into one global embedding
//! (`metaencoder`), and a small decoder-only language model conditioned on the
//! embedding answers captioning and question tasks about the scene
//! (`assistant`). `evalbench` scores the results. Everything runs on f64 CPU
//! math built on the `numerics` module.

pub mod img;
pub mod nerf;
pub mod numerics;
pub mod scenegen;
pub mod text;
