// SPDX-License-Identifier: MIT OR Apache-2.0

//! # lingualens
//!
//! Interpretability instruments for multilingual language models, run over
//! a small self-contained decoder-only transformer:
//!
//! - [`lens`]: decode intermediate residual-stream states through the final
//!   norm and unembedding (logit lens grids),
//! - [`tracing`]: corrupt subject embeddings and restore single clean
//!   states to locate facts (average indirect effect grids),
//! - [`steering`]: mean-difference steering vectors, steered generation,
//!   success evaluation, layer/gamma sweeps and cross-language geometry,
//! - [`routing`]: how often generated words pass through their English
//!   equivalent in the lens, aggregated by part of speech,
//! - [`interpolation`]: blend two prompts' hidden states and push the
//!   result forward,
//! - [`data_io`]: dataset loaders, versioned reports and SVG figures.
//!
//! ```
//! use lingualens::model::{generate, synthesize_bundle, toy_config, toy_vocabulary, TOY_WORDS};
//! use lingualens::lens::lens_grid;
//!
//! let vocab = toy_vocabulary(TOY_WORDS);
//! let bundle = synthesize_bundle(1, toy_config(vocab.len()), vocab).unwrap();
//! let generation = generate(&bundle, "Le bateau naviguait", 4, &[]).unwrap();
//! let grid = lens_grid(&bundle, &generation, 5).unwrap();
//! assert_eq!(grid.rows.len(), bundle.n_layers() + 1);
//! ```

pub mod cli;
pub mod data_io;
pub mod error;
pub mod interpolation;
pub mod lens;
pub mod model;
pub mod rng;
pub mod routing;
pub mod steering;
pub mod tracing;

pub use error::{Error, Result};
pub use model::{ForwardTrace, Generation, Intervention, ModelBundle, ModelConfig, PositionSet, TokenSeq};
