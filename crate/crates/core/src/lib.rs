//! Simulation and cryptanalysis toolkit for double-mask lensless
//! encryption cameras.
//!
//! A camera is described by a [`Key`]: a multiplexing PSF `P` and a scaling
//! mask `S`. A scene `X` is captured as `Y = S * (P conv X) + N` where the
//! convolution is full-size. The crate covers key generation, capture
//! simulation, keyed decryption, classical attacks and seeded studies.
//!
//! Tensors are row-major and channel-last; see [`tensor`] for the on-disk
//! format.

pub mod attacks;
pub mod cli;
pub mod decrypt;
pub mod experiment;
pub mod error;
pub mod fft;
pub mod keygen;
pub mod metrics;
pub mod noise;
pub mod optics;
pub mod plane;
pub mod tensor;

pub use attacks::{AlsConfig, AttackKind, AttackReport};
pub use decrypt::{keyed_decrypt, wiener_decrypt, WienerConfig};
pub use error::{Error, Result};
pub use keygen::{draw_keyspec, make_key, make_key_with, BaselineKind, Key, KeySpec, MaskCount, PsfDesign};
pub use metrics::{psnr, ssim};
pub use noise::Rng;
pub use optics::{forward_double, forward_single, Measurement, NoiseModel, SceneKind, SceneSpec};
pub use plane::Plane;
pub use tensor::Tensor;
