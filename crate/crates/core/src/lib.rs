//! Cross-city human-mobility estimation with a spatio-temporal meta-GAN.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`griddata`] rasterizes raw layers, windows samples and partitions tasks.
//! * [`synthcity`] generates synthetic cities with a known mobility process.
//! * [`sttg`] builds the city task graph and samples 1-hop subgraphs.
//! * [`embed`] encodes subgraphs with a variational graph autoencoder.
//! * [`nets`] holds the CNN+LSTM generator and the discriminator.
//! * [`metatrain`] runs first-order MAML over tasks and fast adaptation.
//! * [`baselines`] and [`metrics`] provide the comparison methods and scores.
//! * [`protocol`] ties everything into the held-out-city evaluation.

pub mod baselines;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod gradcheck;
pub mod griddata;
pub mod layers;
pub mod metatrain;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod params;
pub mod protocol;
pub mod seed;
pub mod sttg;
pub mod synthcity;

pub use error::{Error, Result};
pub use par::ExecMode;
