//! Property tests over the algebraic invariants of the numerical kernels.

use proptest::prelude::*;

use cxmri::conv::{conv2d_complex, ConvKernel};
use cxmri::cs::{haar2, soft_threshold};
use cxmri::fft::fft2c;
use cxmri::tensor::{Complex, ComplexTensor};

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = ComplexTensor> {
    let n: usize = shape.iter().product();
    (
        prop::collection::vec(-1.0f64..1.0, n),
        prop::collection::vec(-1.0f64..1.0, n),
    )
        .prop_map(move |(re, im)| ComplexTensor::from_parts(shape.clone(), re, im).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_is_unitary_and_invertible(
        x in (0usize..3).prop_flat_map(|i| {
            let (h, w) = [(4, 4), (8, 4), (8, 8)][i];
            tensor_strategy(vec![h, w])
        })
    ) {
        let k = fft2c(&x, false).unwrap();
        let norm = x.norm2();
        prop_assert!((k.norm2() - norm).abs() <= 1e-12 * norm.max(1.0));
        let back = fft2c(&k, true).unwrap();
        let err = back.sub(&x).unwrap().norm2();
        prop_assert!(err <= 1e-12 * norm.max(1.0), "round trip error {err}");
    }

    #[test]
    fn complex_conv_is_complex_linear(
        x in tensor_strategy(vec![2, 5, 5]),
        w in tensor_strategy(vec![2, 2, 3, 3]),
        are in -1.0f64..1.0,
        aim in -1.0f64..1.0,
    ) {
        let kernel = ConvKernel::new(w, ComplexTensor::zeros(&[2])).unwrap();
        let alpha = Complex::new(are, aim);
        let lhs = conv2d_complex(&x.scale(alpha), &kernel).unwrap();
        let rhs = conv2d_complex(&x, &kernel).unwrap().scale(alpha);
        let err = lhs.sub(&rhs).unwrap().norm2();
        prop_assert!(err <= 1e-10, "linearity violated by {err}");
    }

    #[test]
    fn soft_threshold_is_non_expansive(
        u in tensor_strategy(vec![6, 6]),
        v in tensor_strategy(vec![6, 6]),
        tau in 0.0f64..1.5,
    ) {
        let du = soft_threshold(&u, tau).unwrap();
        let dv = soft_threshold(&v, tau).unwrap();
        let shrunk = du.sub(&dv).unwrap().norm2();
        let original = u.sub(&v).unwrap().norm2();
        prop_assert!(shrunk <= original + 1e-12);
    }

    #[test]
    fn haar_preserves_norm_and_reconstructs(
        x in tensor_strategy(vec![16, 16]),
        levels in 1usize..4,
    ) {
        let w = haar2(&x, levels, false).unwrap();
        prop_assert!((w.norm2() - x.norm2()).abs() <= 1e-12 * x.norm2().max(1.0));
        let back = haar2(&w, levels, true).unwrap();
        prop_assert!(back.sub(&x).unwrap().norm2() <= 1e-12 * x.norm2().max(1.0));
    }

    #[test]
    fn container_encoding_round_trips(
        x in tensor_strategy(vec![3, 4]),
        real_only in any::<bool>(),
    ) {
        // Quantize through f32 first: the container stores f32 exactly.
        let q = ComplexTensor::from_parts(
            x.shape().to_vec(),
            x.re().iter().map(|&v| (v as f32) as f64).collect(),
            if real_only { vec![0.0; x.numel()] } else {
                x.im().iter().map(|&v| (v as f32) as f64).collect()
            },
        ).unwrap();
        let dir = std::env::temp_dir().join(format!("cxmri_prop_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.cxt");
        cxmri::io::write_cxt(&path, &q, real_only).unwrap();
        let (back, was_real) = cxmri::io::read_cxt(&path).unwrap();
        prop_assert_eq!(was_real, real_only);
        prop_assert_eq!(back, q);
    }

    #[test]
    fn l1_loss_separates_points(
        a in tensor_strategy(vec![3, 3]),
        b in tensor_strategy(vec![3, 3]),
    ) {
        let loss = cxmri::metrics::l1_loss(&a, &b).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, a == b);
        prop_assert_eq!(cxmri::metrics::l1_loss(&a, &a).unwrap(), 0.0);
    }
}
