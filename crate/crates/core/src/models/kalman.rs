use nalgebra::{DMatrix, DVector};

use super::lgssm::to_na;
use super::{Dataset, Lgssm};
use crate::distributions::HALF_LN_2PI;
use crate::error::{Error, Result};

/// Filtering moments after assimilating `y_t`.
#[derive(Clone, Debug)]
pub struct KalmanStep {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// `log p(y_t | y_{1:t-1})`
    pub loglik: f64,
}

/// Predict/update recursion with prior `N(0, I)`.
pub fn kalman_filter(m: &Lgssm, data: &Dataset) -> Result<Vec<KalmanStep>> {
    let dx = m.dx();
    let dy = m.dy();
    if data.obs_dim() != dy {
        return Err(Error::InvalidModel(format!(
            "dataset has dy={}, model has dy={dy}",
            data.obs_dim()
        )));
    }
    let a = to_na(&m.a);
    let c = to_na(&m.c);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&m.q_diag));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&m.r_diag));
    let mut mean = DVector::zeros(dx);
    let mut cov = DMatrix::identity(dx, dx);
    let mut out = Vec::with_capacity(data.len());
    for t in 1..=data.len() {
        if t > 1 {
            mean = &a * &mean;
            cov = &a * &cov * a.transpose() + &q;
        }
        let y = DVector::from_column_slice(data.y(t));
        let innov = &y - &c * &mean;
        let s = &c * &cov * c.transpose() + &r;
        let chol = s.clone().cholesky().ok_or(Error::NotPositiveDefinite { t })?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sol = chol.solve(&innov);
        let quad = innov.dot(&sol);
        let loglik = -(dy as f64) * HALF_LN_2PI - 0.5 * logdet - 0.5 * quad;
        let k = &cov * c.transpose() * chol.inverse();
        mean = &mean + &k * innov;
        let i_kc = DMatrix::identity(dx, dx) - &k * &c;
        // Joseph form keeps the covariance symmetric positive definite
        cov = &i_kc * &cov * i_kc.transpose() + &k * &r * k.transpose();
        out.push(KalmanStep {
            mean: mean.iter().copied().collect(),
            cov: cov.clone(),
            loglik,
        });
    }
    Ok(out)
}

/// Exact `log p(y_{1:T})`.
pub fn kalman_loglik(m: &Lgssm, data: &Dataset) -> Result<f64> {
    Ok(kalman_filter(m, data)?.iter().map(|s| s.loglik).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_model(a: f64) -> Lgssm {
        Lgssm::with_matrices(
            Tensor::matrix(1, 1, vec![a]),
            Tensor::matrix(1, 1, vec![1.0]),
            vec![1.0],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_step_marginal() {
        let d = Dataset::from_obs("lgssm", vec![vec![0.0]]);
        let ll = kalman_loglik(&scalar_model(0.0), &d).unwrap();
        assert!((ll + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((ll + 1.265512).abs() < 1e-6);
    }

    #[test]
    fn independent_steps_when_a_is_zero() {
        let d = Dataset::from_obs("lgssm", vec![vec![0.7], vec![-1.3]]);
        let ll = kalman_loglik(&scalar_model(0.0), &d).unwrap();
        let lnorm = |y: f64| -0.5 * (4.0 * std::f64::consts::PI).ln() - y * y / 4.0;
        assert!((ll - lnorm(0.7) - lnorm(-1.3)).abs() < 1e-12);
    }

    /// Brute-force quadrature over (x1, x2) on a grid.
    #[test]
    fn matches_grid_integration() {
        let a = 0.6;
        let (y1, y2) = (0.4, -0.9);
        let d = Dataset::from_obs("lgssm", vec![vec![y1], vec![y2]]);
        let ll = kalman_loglik(&scalar_model(a), &d).unwrap();
        let npdf = |x: f64, m: f64| (-0.5 * (x - m) * (x - m)).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let h = 0.01;
        let grid: Vec<f64> = (0..=1600).map(|k| -8.0 + h * k as f64).collect();
        let mut total = 0.0;
        for &x1 in &grid {
            let p1 = npdf(x1, 0.0) * npdf(y1, x1);
            let inner: f64 = grid.iter().map(|&x2| npdf(x2, a * x1) * npdf(y2, x2)).sum::<f64>() * h;
            total += p1 * inner * h;
        }
        assert!((ll - total.ln()).abs() < 1e-4, "{ll} vs {}", total.ln());
    }
}
