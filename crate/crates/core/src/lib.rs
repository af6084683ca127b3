//! Generative Cardan grille cipher.
//!
//! A message is written into chosen bit planes of the known pixels of a
//! partially observed image; a trained generator then completes the image by
//! latent search, and the receiver reads the bits back through the grille.

pub mod container;
pub mod error;
pub mod generator;
pub mod grille_key;
pub mod image;
pub mod keyed;
pub mod latent_search;
pub mod message_codec;
pub mod nn;
pub mod pipeline;
pub mod security_metrics;
pub mod steganalysis;
pub mod toy_cipher;

pub use error::{Error, Result};
