//! Polarimetric image restoration toolkit.
//!
//! The crate is organized around the physical pipeline of a division-of-focal-plane
//! polarization camera:
//!
//! * [`polar`] — exact linear-polarization physics: Malus' law, Stokes parameters,
//!   degree/angle of polarization, and the consistency identity they obey.
//! * [`degrade`] — forward degradation models (low-light sensor noise, motion blur,
//!   polarization mosaicing) and a deterministic synthetic scene generator.
//! * [`tensor`] — a minimal dense-tensor engine with reverse-mode automatic
//!   differentiation and an AdamW optimizer; exactly the operator set the network needs.
//! * [`net`] — the dual-branch restoration network: a U-shaped backbone whose units couple
//!   an image branch (channel attention) with a Stokes branch (bottleneck convolutions).
//! * [`objective`] — the dual-domain training loss with its physics regularizers.
//! * [`metrics`] — PSNR/SSIM over total intensity, DoP, and AoP.
//! * [`io`] — PQUAD and checkpoint file formats, PNG16 conversion.
//! * [`config`] / [`pipeline`] — run configuration and the synth/train/eval/infer commands.

pub mod config;
pub mod degrade;
pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod pipeline;
pub mod polar;
pub mod scalar;
pub mod tensor;

pub use error::Error;
