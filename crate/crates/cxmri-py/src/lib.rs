//! Python bindings for the complex-valued MRI reconstruction toolkit.
//!
//! Exposes the tensor type and the core operations (complex convolution,
//! centered FFT, activations, phantom/map/mask simulation, SENSE operators,
//! metrics, and the CS baseline) as an extension module named `cxmri_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cxmri::conv::ConvKernel;
use cxmri::cs::CsConfig;
use cxmri::mri::MaskSpec;
use cxmri::tensor::{Complex, ComplexTensor};

fn err(e: cxmri::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// N-dimensional complex tensor with planar (re, im) storage.
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: ComplexTensor,
}

#[pymethods]
impl PyTensor {
    /// Build from a shape and flat row-major real/imaginary lists.
    #[new]
    #[pyo3(signature = (shape, re, im=None))]
    fn new(shape: Vec<usize>, re: Vec<f64>, im: Option<Vec<f64>>) -> PyResult<Self> {
        let im = im.unwrap_or_else(|| vec![0.0; re.len()]);
        Ok(PyTensor {
            inner: ComplexTensor::from_parts(shape, re, im).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: ComplexTensor::zeros(&shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn re(&self) -> Vec<f64> {
        self.inner.re().to_vec()
    }

    fn im(&self) -> Vec<f64> {
        self.inner.im().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn add(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.add(&other.inner).map_err(err)?,
        })
    }

    fn sub(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.sub(&other.inner).map_err(err)?,
        })
    }

    /// Complex Hadamard product.
    fn mul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.mul(&other.inner).map_err(err)?,
        })
    }

    fn conj(&self) -> Self {
        PyTensor {
            inner: self.inner.conj(),
        }
    }

    fn magnitude(&self) -> Self {
        PyTensor {
            inner: self.inner.magnitude(),
        }
    }

    fn phase(&self) -> Self {
        PyTensor {
            inner: self.inner.phase(),
        }
    }

    /// alpha * self + other for complex alpha = (re, im).
    fn scale_add(&self, alpha: (f64, f64), other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self
                .inner
                .scale_add(Complex::new(alpha.0, alpha.1), &other.inner)
                .map_err(err)?,
        })
    }

    fn norm2(&self) -> f64 {
        self.inner.norm2()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.reshaped(&shape).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Centered orthonormal 2-D FFT over the trailing two axes.
#[pyfunction]
#[pyo3(signature = (x, inverse=false))]
fn fft2c(x: &PyTensor, inverse: bool) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::fft::fft2c(&x.inner, inverse).map_err(err)?,
    })
}

/// Complex convolution of `[in_ch, H, W]` data with a `[out_ch, in_ch, k, k]`
/// filter bank (X = weight re plane, Y = weight im plane) plus complex bias.
#[pyfunction]
fn conv2d_complex(x: &PyTensor, weight: &PyTensor, bias: &PyTensor) -> PyResult<PyTensor> {
    let kernel = ConvKernel::new(weight.inner.clone(), bias.inner.clone()).map_err(err)?;
    Ok(PyTensor {
        inner: cxmri::conv::conv2d_complex(&x.inner, &kernel).map_err(err)?,
    })
}

/// Real convolution over the real planes.
#[pyfunction]
fn conv2d_real(x: &PyTensor, weight: &PyTensor, bias: Vec<f64>) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::conv::conv2d_real(&x.inner, &weight.inner, &bias).map_err(err)?,
    })
}

#[pyfunction]
fn relu_two_channel(x: &PyTensor) -> PyTensor {
    PyTensor {
        inner: cxmri::nn::relu_two_channel(&x.inner),
    }
}

#[pyfunction]
fn crelu(x: &PyTensor) -> PyTensor {
    PyTensor {
        inner: cxmri::nn::crelu(&x.inner),
    }
}

#[pyfunction]
fn zrelu(x: &PyTensor) -> PyTensor {
    PyTensor {
        inner: cxmri::nn::zrelu(&x.inner),
    }
}

#[pyfunction]
fn modrelu(x: &PyTensor, bias: Vec<f64>) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::nn::modrelu(&x.inner, &bias).map_err(err)?,
    })
}

#[pyfunction]
fn cardioid(x: &PyTensor) -> PyTensor {
    PyTensor {
        inner: cxmri::nn::cardioid(&x.inner),
    }
}

/// Shepp-Logan phantom with seed-drawn smooth phase plus `phase_detail`
/// Gaussian phase features.
#[pyfunction]
#[pyo3(signature = (h, w, seed, phase_detail=3))]
fn generate_phantom(h: usize, w: usize, seed: u64, phase_detail: usize) -> PyTensor {
    PyTensor {
        inner: cxmri::mri::generate_phantom(h, w, seed, phase_detail),
    }
}

/// Analytic coil maps, pixelwise normalized so sum_c |S_c|^2 = 1.
#[pyfunction]
fn generate_maps(h: usize, w: usize, coils: usize, seed: u64) -> PyTensor {
    PyTensor {
        inner: cxmri::mri::generate_maps(h, w, coils, seed),
    }
}

/// Variable-density Poisson-disc sampling mask.
#[pyfunction]
#[pyo3(signature = (h, w, accel, calib=12, density_power=2.0, seed=1))]
fn poisson_mask(
    h: usize,
    w: usize,
    accel: f64,
    calib: usize,
    density_power: f64,
    seed: u64,
) -> PyResult<PyTensor> {
    let spec = MaskSpec {
        h,
        w,
        accel_target: accel,
        calib,
        density_power,
        seed,
    };
    Ok(PyTensor {
        inner: cxmri::mri::poisson_mask(&spec).map_err(err)?,
    })
}

#[pyfunction]
fn mask_acceleration(mask: &PyTensor) -> f64 {
    cxmri::mri::mask_acceleration(&mask.inner)
}

/// SENSE forward operator: coil multiply, centered FFT, mask.
#[pyfunction]
fn sense_forward(image: &PyTensor, maps: &PyTensor, mask: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::mri::sense_forward(&image.inner, &maps.inner, &mask.inner).map_err(err)?,
    })
}

/// SENSE adjoint: mask, inverse FFT, conjugate-map multiply, coil sum.
#[pyfunction]
fn sense_adjoint(kspace: &PyTensor, maps: &PyTensor, mask: &PyTensor) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::mri::sense_adjoint(&kspace.inner, &maps.inner, &mask.inner).map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (image, maps, mask, noise_sigma=0.0, seed=1))]
fn simulate_acquisition(
    image: &PyTensor,
    maps: &PyTensor,
    mask: &PyTensor,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::mri::simulate_acquisition(
            &image.inner,
            &maps.inner,
            &mask.inner,
            noise_sigma,
            seed,
        )
        .map_err(err)?,
    })
}

#[pyfunction]
fn l1_loss(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    cxmri::metrics::l1_loss(&pred.inner, &target.inner).map_err(err)
}

#[pyfunction]
fn nrmse(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    cxmri::metrics::nrmse(&pred.inner, &target.inner).map_err(err)
}

#[pyfunction]
fn psnr(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    cxmri::metrics::psnr(&pred.inner, &target.inner).map_err(err)
}

#[pyfunction]
fn ssim(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    cxmri::metrics::ssim(&pred.inner, &target.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, target, threshold=0.1))]
fn phase_rmse(pred: &PyTensor, target: &PyTensor, threshold: f64) -> PyResult<f64> {
    cxmri::metrics::phase_rmse(&pred.inner, &target.inner, threshold).map_err(err)
}

/// Orthonormal multilevel Haar transform of an `[H, W]` image.
#[pyfunction]
#[pyo3(signature = (x, levels=2, inverse=false))]
fn haar2(x: &PyTensor, levels: usize, inverse: bool) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::cs::haar2(&x.inner, levels, inverse).map_err(err)?,
    })
}

/// Complex soft-thresholding with threshold `tau`.
#[pyfunction]
fn soft_threshold(x: &PyTensor, tau: f64) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: cxmri::cs::soft_threshold(&x.inner, tau).map_err(err)?,
    })
}

/// ISTA reconstruction with L1-wavelet regularization. Returns the image and
/// the per-iteration objective trace.
#[pyfunction]
#[pyo3(signature = (kspace, maps, mask, lam=0.0, iterations=100, step=1.0, wavelet_levels=2))]
fn ista_wavelet_recon(
    kspace: &PyTensor,
    maps: &PyTensor,
    mask: &PyTensor,
    lam: f64,
    iterations: usize,
    step: f64,
    wavelet_levels: usize,
) -> PyResult<(PyTensor, Vec<f64>)> {
    let cfg = CsConfig {
        lambda: lam,
        iterations,
        step,
        wavelet_levels,
    };
    let result =
        cxmri::cs::ista_wavelet_recon(&kspace.inner, &maps.inner, &mask.inner, &cfg).map_err(err)?;
    Ok((
        PyTensor {
            inner: result.image,
        },
        result.objective,
    ))
}

#[pymodule]
fn cxmri_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(fft2c, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d_complex, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d_real, m)?)?;
    m.add_function(wrap_pyfunction!(relu_two_channel, m)?)?;
    m.add_function(wrap_pyfunction!(crelu, m)?)?;
    m.add_function(wrap_pyfunction!(zrelu, m)?)?;
    m.add_function(wrap_pyfunction!(modrelu, m)?)?;
    m.add_function(wrap_pyfunction!(cardioid, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(generate_maps, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_mask, m)?)?;
    m.add_function(wrap_pyfunction!(mask_acceleration, m)?)?;
    m.add_function(wrap_pyfunction!(sense_forward, m)?)?;
    m.add_function(wrap_pyfunction!(sense_adjoint, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_acquisition, m)?)?;
    m.add_function(wrap_pyfunction!(l1_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(phase_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(haar2, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(ista_wavelet_recon, m)?)?;
    Ok(())
}
