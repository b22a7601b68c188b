//! Model-free massive-MIMO channel estimation by latent tracking.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece
//! of the workbench:
//!
//! - [`linalg`]: dense complex matrices, column-major `vec`/`ivec`, Kronecker
//!   products and an SVD-based Moore–Penrose pseudoinverse.
//! - [`channel`]: uniform planar array steering vectors, the multipath channel
//!   model, a single-bounce geometric scene and dataset/trajectory generation.
//! - [`signaling`]: pilots, the observation model `Y = Wᴴ H G + N` and the
//!   least-squares / minimum-norm baseline.
//! - [`nn`]: dense layers, stacked LSTMs, Adam and a finite-difference
//!   gradient checker, all with hand-written backward passes.
//! - [`autoencoder`]: amplitude/phase pre- and postprocessing, the
//!   reconstruction and distance-matching losses and autoencoder training.
//! - [`tracker`]: the LSTM latent tracker, its loss, training and channel
//!   inference.
//! - [`direct`]: an end-to-end LSTM baseline regressing the full channel.
//! - [`metrics`]: NMSE and rank correlation.
//!
//! File formats, configuration and the command line live in the companion
//! `chartrack` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autoencoder;
pub mod channel;
pub mod direct;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod signaling;
pub mod tracker;

pub use linalg::CMatrix;
pub use num_complex::Complex64;
