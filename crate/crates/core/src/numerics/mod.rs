//! Tensor substrate, seeded random streams, and the finite-difference oracle.

mod gradcheck;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{compare_gradients, finite_diff_grad, GradAgreement};
pub use rng::{sample_gaussian, RngStream};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = Tensor::eye(3).unwrap();
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let expected = a.transpose().unwrap().matmul(&b).unwrap();
        let mut c = vec![0.0; 12];
        f64::gemm(3, 2, 4, a.data(), true, b.data(), false, 0.0, &mut c);
        assert_eq!(c, expected.data());
    }

    #[test]
    fn slice_and_concat_invert() {
        let t = Tensor::<f32>::from_vec(&[3, 4], (0..12).map(|v| v as f32).collect()).unwrap();
        let a = t.slice(1, 0, 1).unwrap();
        let b = t.slice(1, 1, 4).unwrap();
        assert_eq!(a.data(), &[0.0, 4.0, 8.0]);
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), t);
        assert!(t.slice(0, 2, 5).is_err());
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2]).unwrap();
        let b = Tensor::<f32>::zeros(&[3]).unwrap();
        assert!(a.add(&b).is_err());
        assert!(a.reshape(&[3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(v in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
            let n = v.len();
            let t = Tensor::from_vec(&[n], v).unwrap();
            let s = ops::softmax(&t, 0).unwrap();
            prop_assert!(s.data().iter().all(|&p| p >= 0.0));
            prop_assert!((s.sum() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn transpose_is_involution(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
            let t: Tensor<f64> = sample_gaussian(&mut RngStream::new(seed, 0), &[r, c]).unwrap();
            prop_assert_eq!(t.transpose().unwrap().transpose().unwrap(), t);
        }
    }
}
