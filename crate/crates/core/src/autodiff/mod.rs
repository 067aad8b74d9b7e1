//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! Parameters live in a [`ParamStore`] outside any tape. A training step
//! creates a fresh [`Tape`], binds the store onto it, runs the forward pass
//! through [`Var`] operations, and calls [`Tape::backward`]. The returned
//! [`Gradients`] are folded back into the store and an [`Optimizer`] applies
//! them.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use tape::{softmax_segments_in_place, Binding, ElemKind, Gradients, ReduceKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("axis {axis} out of range for a {ndim}-dimensional tensor")]
    InvalidAxis { axis: usize, ndim: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("`{op}` expects {expected} operand(s)")]
    Arity { op: &'static str, expected: usize },
    #[error("`{op}` needs at least one input")]
    EmptyInput { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("variables from different tapes cannot be combined")]
    ForeignTape,
    #[error("parameter `{name}` has no gradient")]
    MissingGrad { name: String },
    #[error("parameter layout mismatch: {detail}")]
    LayoutMismatch { detail: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn relu_and_tanh_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]).unwrap());
        assert_eq!(x.relu().to_vec(), vec![0.0, 2.0]);
        let z = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        assert_eq!(z.tanh().to_vec(), vec![0.0]);
    }

    #[test]
    fn square_gradient_matches_central_difference() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5]).unwrap().with_requires_grad(true));
        let loss = x.square().sum();
        let g = tape.backward(loss).unwrap();
        let analytic = g.wrt(x).unwrap()[0];
        assert_eq!(analytic, 3.0);
        let numeric = fd_scalar(|v| v * v, 1.5, 1e-6);
        assert!(((analytic - numeric) / numeric).abs() < 1e-6);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        let err = a.add(b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::ShapeMismatch {
                op: "add",
                left: vec![2],
                right: vec![1]
            }
        );
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[1]"));
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(a.log(), Err(AutodiffError::Domain { op: "log", .. })));
        assert!(matches!(
            a.elementwise(ElemKind::Add, None),
            Err(AutodiffError::Arity { .. })
        ));
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        assert_eq!(i2.matmul(v).unwrap().to_vec(), vec![3.0, 4.0]);
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = tape.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let out = a.matmul(z).unwrap();
        assert_eq!(out.shape(), vec![1, 1]);
        assert_eq!(out.to_vec(), vec![0.0]);
        assert!(matches!(
            a.matmul(a),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true));
        let s = a.sum();
        assert_eq!(s.item(), 6.0);
        assert_eq!(s.shape(), Vec::<usize>::new());
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &[1.0, 1.0, 1.0]);

        let one = tape.constant(Tensor::vector(vec![4.0]).unwrap());
        assert_eq!(one.mean().item(), 4.0);

        let m = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        assert_eq!(m.reduce(ReduceKind::Sum, Some(0)).unwrap().to_vec(), vec![5.0, 7.0, 9.0]);
        assert_eq!(m.reduce(ReduceKind::Mean, Some(1)).unwrap().to_vec(), vec![2.0, 5.0]);
        assert_eq!(
            m.reduce(ReduceKind::Sum, Some(2)).unwrap_err(),
            AutodiffError::InvalidAxis { axis: 2, ndim: 2 }
        );
    }

    #[test]
    fn backward_power_rule_and_independent_param() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![3.0]).unwrap());
        let p = store.add("p", Tensor::vector(vec![7.0]).unwrap());
        let tape = Tape::new();
        let bind = tape.bind(&store);
        let xv = bind.get(x);
        let _pv = bind.get(p);
        let loss = xv.square().sum();
        let g = tape.backward(loss).unwrap();
        drop(bind);
        g.accumulate_into(&mut store);
        assert_eq!(store.get(x).grad().unwrap(), &[6.0]);
        assert_eq!(store.get(p).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_requires_grad(true));
        assert_eq!(
            tape.backward(a).unwrap_err(),
            AutodiffError::NonScalarLoss { shape: vec![2] }
        );
    }

    #[test]
    fn backward_visits_each_node_once() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![0.3, -0.2]).unwrap().with_requires_grad(true));
        // diamond: a feeds two branches that rejoin
        let b = a.tanh();
        let c = a.square();
        let d = b.mul(c).unwrap().add(a).unwrap();
        let loss = d.sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.visit_counts().iter().all(|&v| v <= 1));
        assert_eq!(g.nodes_visited(), tape.len());
    }

    #[test]
    fn sgd_one_step() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0]).unwrap());
        store.get_mut(p).accumulate_grad(&[2.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        opt.step(&mut store, &[p]).unwrap();
        assert!((store.get(p).data()[0] - 0.8).abs() < 1e-15);
        assert!(store.get(p).grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1)] {
            let mut store = ParamStore::new();
            let p = store.add("p", Tensor::vector(vec![1.25]).unwrap());
            store.get_mut(p).zero_grad();
            let mut opt = Optimizer::new(cfg);
            opt.step(&mut store, &[p]).unwrap();
            assert_eq!(store.get(p).data()[0], 1.25);
        }
    }

    #[test]
    fn step_without_grad_is_an_error() {
        let mut store = ParamStore::new();
        let p = store.add("w", Tensor::vector(vec![1.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerConfig::default());
        assert_eq!(
            opt.step(&mut store, &[p]).unwrap_err(),
            AutodiffError::MissingGrad { name: "w".into() }
        );
    }

    /// Textbook Adam recurrences, written out independently of `Optimizer`.
    fn reference_adam(p0: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        p
    }

    #[test]
    fn adam_matches_reference_recurrences() {
        let grads = [0.7, -1.3, 2.1, 0.05, -0.4];
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![0.5]).unwrap());
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        for (k, g) in grads.iter().enumerate() {
            store.get_mut(p).accumulate_grad(&[*g]);
            opt.step(&mut store, &[p]).unwrap();
            let expect = reference_adam(0.5, &grads[..=k], 0.01);
            assert!((store.get(p).data()[0] - expect).abs() < 1e-15);
        }
        // the first bias-corrected step moves by ~lr against the gradient sign
        let mut store = ParamStore::new();
        let q = store.add("q", Tensor::vector(vec![0.0, 0.0]).unwrap());
        store.get_mut(q).accumulate_grad(&[3.0, -0.2]);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
        opt.step(&mut store, &[q]).unwrap();
        let d = store.get(q).data();
        assert!((d[0] + 1e-3).abs() < 1e-9 && (d[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn weighted_sum_is_order_independent() {
        let tape = Tape::new();
        let vals = [0.1, 1e16, -1e16, 0.3, 0.7];
        let vars: Vec<_> = vals
            .iter()
            .map(|&v| tape.constant(Tensor::vector(vec![v]).unwrap()))
            .collect();
        let fwd: Vec<_> = vars.iter().map(|v| (*v, 1.0)).collect();
        let rev: Vec<_> = vars.iter().rev().map(|v| (*v, 1.0)).collect();
        let a = Var::weighted_sum(&fwd).unwrap().item();
        let b = Var::weighted_sum(&rev).unwrap().item();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn softmax_segments_rows_sum_to_one() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 5, vec![0.1, 3.0, -1.0, 2.0, 2.0, 0.0, 0.0, 0.0, 5.0, -5.0]).unwrap());
        let y = x.softmax_segments(&[3, 2]).unwrap().to_vec();
        for row in y.chunks(5) {
            assert!((row[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((row[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((y[5] - 1.0 / 3.0).abs() < 1e-15);
    }
}
