//! Desk-scale laboratory for number encodings in transformer language models.
//!
//! Numbers embedded in text can be fed to a transformer either as text tokens
//! (`P10`, `P1000`, `B1999`, `FP15`) or as a single `[NUM]` placeholder whose
//! embedding is scaled multiplicatively by the value (`xVal`). This crate
//! implements all five codecs, a from-scratch autodiff trunk able to train
//! GPT-2-style models on CPU, deterministic generators for three synthetic
//! corpora (arithmetic expressions, planetary orbits, a weather-like
//! surrogate), and an evaluation harness focused on out-of-distribution
//! interpolation.

pub mod codec;
pub mod datagen;
pub mod evaluation;
pub mod model;
pub mod real;
pub mod tensor;
pub mod training;
