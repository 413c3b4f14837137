//! Latent-space text attribute transfer.
//!
//! A Transformer autoencoder maps a sentence to a single latent vector, a
//! small feed-forward classifier predicts attributes from that vector, and
//! the editor in [`fgim`] moves the vector along classifier gradients until
//! the prediction matches a requested attribute vector. The decoder then
//! emits the transferred sentence. [`evalsuite`] measures the result with an
//! independent n-gram classifier, corpus BLEU, and a Kneser-Ney trigram
//! language model.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod evalsuite;
pub mod fgim;
pub mod latent_classifier;
pub mod numerics;
pub mod pipeline;
pub mod textdata;
pub mod toydata;
