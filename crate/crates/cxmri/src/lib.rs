//! Complex-valued convolutional networks for accelerated MRI reconstruction,
//! built from scratch: complex tensors and convolution kernels, a reverse-mode
//! tape, the activation zoo, unrolled and U-Net reconstruction models, a
//! synthetic SENSE acquisition pipeline, an ISTA-wavelet baseline, training
//! with Adam, and the image-quality metrics, all behind one CLI.

pub mod autodiff;
pub mod cli;
pub mod conv;
pub mod cs;
pub mod error;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod models;
pub mod mri;
pub mod nn;
pub mod rng;
pub mod suite;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Complex, ComplexTensor};
