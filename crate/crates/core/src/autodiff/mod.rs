//! Reverse-mode automatic differentiation over small dense tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, op_suite, DEFAULT_STEP};
pub(crate) use tape::sigmoid;
pub use tape::{BackwardRule, Tape, Var, LEAKY_RELU_SLOPE};
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("gradient requested of a non-scalar loss with shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("log of negative value {0}")]
    LogOfNegative(f64),
    #[error("reduction over an empty tensor")]
    EmptyReduction,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.var(Tensor::scalar(-2.0));
        let z = x * y + x.exp();
        let g = tape.grad(z, &[x, y]).unwrap();
        assert!(close(g[0].item(), -2.0 + 3f64.exp(), 1e-14));
        assert!(close(g[1].item(), 3.0, 1e-14));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(tape.grad(x, &[x]).unwrap_err(), AutodiffError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn log_of_negative() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(-1.0));
        assert!(matches!(x.try_ln(), Err(AutodiffError::LogOfNegative(_))));
        let z = tape.var(Tensor::scalar(0.0)).ln();
        assert_eq!(z.item(), f64::NEG_INFINITY);
    }

    #[test]
    fn stop_gradient_blocks() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let y = x * x.stop_gradient();
        assert_eq!(y.item(), 4.0);
        assert_eq!(tape.grad(y, &[x]).unwrap()[0].item(), 2.0);
    }

    #[test]
    fn logsumexp_of_all_neg_inf() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![f64::NEG_INFINITY; 3]));
        let l = x.logsumexp();
        assert_eq!(l.item(), f64::NEG_INFINITY);
        let g = tape.grad(l, &[x]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn logsumexp_single_is_exact() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![-1234.5678]));
        assert_eq!(x.logsumexp().item(), -1234.5678);
    }

    #[test]
    fn custom_rule_called_once() {
        use std::cell::Cell;
        use std::rc::Rc;
        let calls = Rc::new(Cell::new(0));
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.5));
        let c = calls.clone();
        let y = tape.custom_vjp(
            Tensor::scalar(3.0),
            &[x],
            Box::new(move |g| {
                c.set(c.get() + 1);
                vec![g.scale(2.0)]
            }),
        );
        let loss = y * y;
        let g = tape.grad(loss, &[x]).unwrap();
        assert_eq!(calls.get(), 1);
        assert_eq!(g[0].item(), 12.0);
    }

    #[test]
    fn op_zoo_matches_finite_differences() {
        let a = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.4, 0.9, -1.3]);
        let b = Tensor::matrix(3, 2, vec![0.2, 0.5, -0.4, 0.8, 1.5, -0.6]);
        let v = Tensor::vector(vec![0.7, -0.2, 0.35]);
        let err = finite_diff_check(
            |_t, x| {
                let m = x[0].matmul(x[1]).tanh();
                let s = (x[0] * x[0]).sigmoid().sum_axis(0) * x[2];
                let l = x[0].logsumexp_axis(1).softplus().sum();
                let e = x[2].erf().leaky_relu().repeat_rows(2).slice_cols(1, 3).sum();
                let q = (x[2].square() + 1.0).sqrt().ln().sum();
                let r = x[0].t().gather_rows(&[2, 0, 2]).logsumexp_axis(0).sum();
                let d = x[2].diag_embed().matmul(x[1]).max();
                let c = x[0].tape().concat_rows(&[x[2], x[0].row(1)]).sum_last().sum();
                m.sum() + s.sum() / (l + 3.0) + e - q + r * d + c
            },
            &[a, b, v],
            1e-5,
        );
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn triangular_solve_gradient() {
        let b = Tensor::matrix(3, 3, vec![1.5, 0.0, 0.0, 0.3, 0.8, 0.0, -0.2, 0.4, 1.2]);
        let w = Tensor::matrix(2, 3, vec![0.5, -1.0, 0.25, 1.3, 0.2, -0.7]);
        let err = finite_diff_check(
            |_t, x| {
                let z = x[1].solve_lower_rows(x[0]);
                (z * z).sum() + z.sum()
            },
            &[b.clone(), w.clone()],
            1e-6,
        );
        assert!(err < 1e-7, "max rel err {err}");
        let tape = Tape::new();
        let z = tape.constant(w.clone()).solve_lower_rows(tape.constant(b.clone()));
        let back = z.value().matmul(&b.transpose());
        for (x, y) in back.data().iter().zip(w.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
