//! Differentiable-operation contract the models are built on: dense tensors,
//! a reverse-mode tape, named parameters, a seedable RNG, finite-difference
//! gradient verification, and the checkpoint container.

pub mod checkpoint;
pub mod grad_check;
pub mod graph;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;

pub use checkpoint::{fnv1a_hex, load_checkpoint, peek_checkpoint, save_checkpoint};
pub use grad_check::{grad_check, GradCheckReport, ScalarFn};
pub use graph::{Graph, Var, MASKED_SCORE};
pub use params::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use proptest::prelude::*;

    fn finite_diff_check<F>(f: F, shape: Vec<usize>, data: Vec<f64>) -> f64
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut params = ParamStore::<f64>::new();
        params
            .register("x", Tensor::new(shape, data).unwrap())
            .unwrap();
        let report = grad_check(&f, &params, 1e-5, 1.0, None).unwrap();
        report.max_rel_err
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(1, 3, vec![0.0; 3]).unwrap());
        let y = g.softmax(x);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert!((g.value(y).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut g = Graph::<f32>::new();
        let mut rng = rng::Rng::seed_from(1);
        let x = g.leaf(Tensor::from_rows(2, 3, vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0]).unwrap());
        let y = g.dropout(x, 0.3, false, &mut rng).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert_eq!(x, y, "eval-mode dropout must be the same node");
    }

    #[test]
    fn dropout_train_mode_scales_by_keep() {
        let mut g = Graph::<f64>::new();
        let mut rng = rng::Rng::seed_from(2);
        let x = g.leaf(Tensor::new(vec![1000], vec![1.0; 1000]).unwrap());
        let y = g.dropout(x, 0.4, true, &mut rng).unwrap();
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.6).abs() < 1e-12);
        }
        let kept = g.value(y).data().iter().filter(|&&v| v != 0.0).count();
        assert!((550..650).contains(&kept), "kept {kept} of 1000 at rate 0.4");
    }

    #[test]
    fn shape_mismatch_names_operation() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::from_rows(2, 3, vec![0.0; 6]).unwrap());
        let b = g.leaf(Tensor::from_rows(2, 3, vec![0.0; 6]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn masked_nll_with_all_false_mask_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(Tensor::from_rows(2, 4, vec![0.3; 8]).unwrap());
        let sum = g.masked_nll_sum(logits, &[1, 2], &[false, false]).unwrap();
        assert_eq!(g.value(sum).item(), 0.0);
        g.backward(sum).unwrap();
        let grad = g.grad(logits).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(2, 3, vec![0.1, -2.0, 3.5, 1.0, 1.0, -0.5]).unwrap());
        let sm = g.softmax(x);
        let lsm = g.log_softmax(x);
        for (a, b) in g.value(sm).data().iter().zip(g.value(lsm).data()) {
            assert!((a.ln() - b).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..4, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = rng::Rng::seed_from(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * 3.0).collect();
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::from_rows(rows, cols, data).unwrap());
            let y = g.softmax(x);
            for r in 0..rows {
                let s: f64 = g.value(y).row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn matmul_gradient_matches_finite_differences(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..1000) {
            let mut rng = rng::Rng::seed_from(seed);
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let b_t = Tensor::from_rows(k, n, b).unwrap();
            let err = finite_diff_check(
                move |g, vars| {
                    let bc = g.constant(b_t.clone());
                    let y = g.matmul(vars[0], bc)?;
                    Ok(g.sum(y))
                },
                vec![m, k],
                a,
            );
            prop_assert!(err < 1e-4, "rel err {err}");
        }

        #[test]
        fn elementwise_gradients_match_finite_differences(n in 1usize..8, seed in 0u64..1000, which in 0usize..5) {
            let mut rng = rng::Rng::seed_from(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            // Weight outputs unevenly: sum(softmax) alone is constant.
            let w = Tensor::new(vec![n], (0..n).map(|i| 0.7 + 1.3 * i as f64).collect()).unwrap();
            let err = finite_diff_check(
                move |g, vars| {
                    let y = match which {
                        0 => g.sigmoid(vars[0]),
                        1 => g.tanh(vars[0]),
                        2 => g.relu(vars[0]),
                        3 => g.softmax(vars[0]),
                        _ => g.log_softmax(vars[0]),
                    };
                    let wc = g.constant(w.clone());
                    let weighted = g.mul(y, wc)?;
                    Ok(g.sum(weighted))
                },
                vec![n],
                x,
            );
            prop_assert!(err < 1e-4, "op {which} rel err {err}");
        }

        #[test]
        fn layer_norm_gradient_matches_finite_differences(rows in 1usize..3, cols in 2usize..6, seed in 0u64..1000) {
            let mut rng = rng::Rng::seed_from(seed);
            let x: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
            let gain: Vec<f64> = (0..cols).map(|_| 1.0 + 0.1 * rng.normal()).collect();
            let bias: Vec<f64> = (0..cols).map(|_| 0.1 * rng.normal()).collect();
            let mut params = ParamStore::<f64>::new();
            params.register("x", Tensor::from_rows(rows, cols, x).unwrap()).unwrap();
            params.register("gain", Tensor::new(vec![cols], gain).unwrap()).unwrap();
            params.register("bias", Tensor::new(vec![cols], bias).unwrap()).unwrap();
            let f = |g: &mut Graph<f64>, vars: &[Var]| {
                let y = g.layer_norm(vars[0], vars[1], vars[2])?;
                // Weight rows unevenly so mean/variance paths both matter.
                let w = g.constant(Tensor::from_rows(g.value(y).cols(), 1,
                    (0..g.value(y).cols()).map(|i| 0.3 + i as f64).collect()).unwrap());
                let z = g.matmul(y, w)?;
                Ok(g.sum(z))
            };
            let report = grad_check(&f, &params, 1e-5, 1.0, None).unwrap();
            prop_assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
        }

        #[test]
        fn masked_cross_entropy_gradient_matches_finite_differences(rows in 1usize..4, cols in 2usize..5, seed in 0u64..1000) {
            let mut rng = rng::Rng::seed_from(seed);
            let x: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
            let targets: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
            let mut mask: Vec<bool> = (0..rows).map(|_| rng.uniform() < 0.7).collect();
            mask[0] = true;
            let err = finite_diff_check(
                move |g, vars| g.masked_cross_entropy(vars[0], &targets, &mask),
                vec![rows, cols],
                x,
            );
            prop_assert!(err < 1e-4, "rel err {err}");
        }

        #[test]
        fn gather_concat_slice_gradients_match(seed in 0u64..1000) {
            let mut rng = rng::Rng::seed_from(seed);
            let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let idx: Vec<u32> = (0..6).map(|_| rng.below(4) as u32).collect();
            let err = finite_diff_check(
                move |g, vars| {
                    let gathered = g.gather_per_row(vars[0], &idx, 2)?;
                    let sliced = g.slice_cols(vars[0], 1, 2)?;
                    let joined = g.concat_cols(&[gathered, sliced])?;
                    let t = g.transpose(joined)?;
                    Ok(g.sum(t))
                },
                vec![3, 4],
                x,
            );
            prop_assert!(err < 1e-4, "rel err {err}");
        }
    }
}
