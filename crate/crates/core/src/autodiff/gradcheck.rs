use super::{Tape, Tensor, Var};

/// Central-difference step used by [`finite_diff_check`] when none is given.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients of `f` at `point`, measured as `|ad - num| / max(1, |num|)`.
pub fn finite_diff_check<F>(f: F, point: &[Tensor], step: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.var(p.clone())).collect();
    let loss = f(&tape, &vars);
    let ad = tape.grad(loss, &vars).expect("scalar loss");

    let eval = |pt: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|p| tape.constant(p.clone())).collect();
        f(&tape, &vars).item()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = point.to_vec();
    for (k, p) in point.iter().enumerate() {
        for idx in 0..p.len() {
            let x0 = p.data()[idx];
            work[k].data_mut()[idx] = x0 + step;
            let up = eval(&work);
            work[k].data_mut()[idx] = x0 - step;
            let down = eval(&work);
            work[k].data_mut()[idx] = x0;
            let num = (up - down) / (2.0 * step);
            let err = (ad[k].data()[idx] - num).abs() / num.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

type OpFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

/// One finite-difference check per differentiable tape operation.
/// Returns `(operation, max relative error)` pairs.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    let a = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.4, 0.9, -1.3]);
    let b = Tensor::matrix(3, 2, vec![0.2, 0.5, -0.4, 0.8, 1.5, -0.6]);
    let pos = Tensor::matrix(2, 3, vec![0.6, 1.7, 0.25, 2.2, 0.9, 1.3]);
    let low = Tensor::matrix(3, 3, vec![1.5, 0.0, 0.0, 0.3, 0.8, 0.0, -0.2, 0.4, 1.2]);
    let w = Tensor::matrix(3, 3, vec![0.9, -0.4, 0.1, 0.2, 1.1, -0.3, 0.5, 0.7, -0.8]);
    let cases: Vec<(&'static str, OpFn, Vec<Tensor>)> = vec![
        (
            "add",
            |_, x| (x[0] + x[1].t()).square().sum(),
            vec![a.clone(), b.clone()],
        ),
        (
            "sub",
            |_, x| (x[0] - x[1].t()).square().sum(),
            vec![a.clone(), b.clone()],
        ),
        ("mul", |_, x| (x[0] * x[1].t()).sum(), vec![a.clone(), b.clone()]),
        ("div", |_, x| (x[0] / x[1]).sum(), vec![a.clone(), pos.clone()]),
        ("neg", |_, x| (-x[0]).exp().sum(), vec![a.clone()]),
        (
            "scalar",
            |_, x| (x[0] * 2.5 + 1.0 - 0.5 / x[1]).square().sum(),
            vec![a.clone(), pos.clone()],
        ),
        ("exp", |_, x| x[0].exp().sum(), vec![a.clone()]),
        ("ln", |_, x| x[0].ln().sum(), vec![pos.clone()]),
        ("sqrt", |_, x| x[0].sqrt().sum(), vec![pos.clone()]),
        ("erf", |_, x| x[0].erf().sum(), vec![a.clone()]),
        ("sigmoid", |_, x| x[0].sigmoid().sum(), vec![a.clone()]),
        ("leaky_relu", |_, x| (x[0].leaky_relu() * x[0]).sum(), vec![a.clone()]),
        ("tanh", |_, x| x[0].tanh().sum(), vec![a.clone()]),
        ("softplus", |_, x| x[0].softplus().sum(), vec![a.clone()]),
        ("square", |_, x| (x[0].square() * x[0]).sum(), vec![a.clone()]),
        (
            "matmul",
            |_, x| x[0].matmul(x[1]).tanh().sum(),
            vec![a.clone(), b.clone()],
        ),
        ("transpose", |_, x| (x[0].t() * x[1]).sum(), vec![a.clone(), b.clone()]),
        ("sum_axis0", |_, x| x[0].sum_axis(0).square().sum(), vec![a.clone()]),
        ("sum_axis1", |_, x| x[0].sum_axis(1).square().sum(), vec![a.clone()]),
        ("sum_last", |_, x| x[0].sum_last().exp().sum(), vec![a.clone()]),
        ("max", |_, x| x[0].max() * x[0].sum(), vec![a.clone()]),
        ("logsumexp", |_, x| x[0].logsumexp().square(), vec![a.clone()]),
        (
            "logsumexp_axis0",
            |_, x| x[0].logsumexp_axis(0).square().sum(),
            vec![a.clone()],
        ),
        (
            "logsumexp_axis1",
            |_, x| x[0].logsumexp_axis(1).square().sum(),
            vec![a.clone()],
        ),
        (
            "take",
            |_, x| x[0].take(vec![5, 0, 0, 3], &[2, 2]).square().sum(),
            vec![a.clone()],
        ),
        (
            "gather_rows",
            |_, x| x[0].gather_rows(&[1, 1, 0]).exp().sum(),
            vec![a.clone()],
        ),
        ("row", |_, x| x[0].row(1).exp().sum(), vec![a.clone()]),
        ("at", |_, x| x[0].at(4).exp(), vec![a.clone()]),
        (
            "repeat_rows",
            |_, x| (x[0].row(0).repeat_rows(2) * x[0]).sum(),
            vec![a.clone()],
        ),
        (
            "repeat_cols",
            |_, x| (x[0].sum_last().reshape(&[2, 1]).repeat_cols(3) * x[0]).sum(),
            vec![a.clone()],
        ),
        (
            "reshape",
            |_, x| x[0].reshape(&[3, 2]).matmul(x[0]).sum(),
            vec![a.clone()],
        ),
        ("slice_cols", |_, x| x[0].slice_cols(1, 3).exp().sum(), vec![a.clone()]),
        (
            "diag_embed",
            |_, x| x[0].row(0).diag_embed().matmul(x[1]).square().sum(),
            vec![a.clone(), b.clone()],
        ),
        (
            "solve_lower_rows",
            |_, x| x[1].solve_lower_rows(x[0]).square().sum(),
            vec![low.clone(), w.clone()],
        ),
        (
            "concat_rows",
            |t, x| t.concat_rows(&[x[0], x[1].t()]).exp().sum(),
            vec![a.clone(), b.clone()],
        ),
    ];
    cases
        .into_iter()
        .map(|(name, f, point)| (name, finite_diff_check(f, &point, DEFAULT_STEP)))
        .collect()
}
