//! Central finite differences.

use nalgebra::{DMatrix, DVector};

/// Relative step used for Jacobians: `1e-5 · (1 + |x|)`.
pub const JACOBIAN_STEP: f64 = 1e-5;

/// Relative step for reward gradients and Hessians. Second differences
/// lose `ε/h²` to roundoff, so this is larger than [`JACOBIAN_STEP`].
pub const HESSIAN_STEP: f64 = 1e-3;

#[inline]
pub fn step_size(x: f64, rel: f64) -> f64 {
    rel * (1.0 + x.abs())
}

/// Closed interval a coordinate must stay in when probed.
pub type Bound = (f64, f64);

/// Jacobian of `f` at `x` by central differences, one column per coordinate.
pub fn jacobian<E, F>(x: &DVector<f64>, rows: usize, mut f: F) -> Result<DMatrix<f64>, E>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, E>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = step_size(x[j], JACOBIAN_STEP);
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Gradient and Hessian of a scalar function by central differences.
pub fn gradient_hessian<E, F>(x: &DVector<f64>, mut f: F) -> Result<(DVector<f64>, DMatrix<f64>), E>
where
    F: FnMut(&DVector<f64>) -> Result<f64, E>,
{
    let n = x.len();
    let f0 = f(x)?;
    let h: Vec<f64> = x.iter().map(|&v| step_size(v, HESSIAN_STEP)).collect();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for i in 0..n {
        probe[i] = x[i] + h[i];
        let fp = f(&probe)?;
        probe[i] = x[i] - h[i];
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| -> Result<f64, E> {
                probe[i] = x[i] + si * h[i];
                probe[j] = x[j] + sj * h[j];
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((grad, hess))
}

/// Second derivatives of every output of a vector function: entry `k` is
/// the Hessian of `f(x)[k]`.
pub fn output_hessians<E, F>(x: &DVector<f64>, rows: usize, mut f: F) -> Result<Vec<DMatrix<f64>>, E>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, E>,
{
    let n = x.len();
    let f0 = f(x)?;
    let h: Vec<f64> = x.iter().map(|&v| step_size(v, HESSIAN_STEP)).collect();
    let mut out = vec![DMatrix::zeros(n, n); rows];
    let mut probe = x.clone();
    for i in 0..n {
        probe[i] = x[i] + h[i];
        let fp = f(&probe)?;
        probe[i] = x[i] - h[i];
        let fm = f(&probe)?;
        probe[i] = x[i];
        let d = (fp - &f0 * 2.0 + fm) / (h[i] * h[i]);
        for (k, m) in out.iter_mut().enumerate() {
            m[(i, i)] = d[k];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| -> Result<DVector<f64>, E> {
                probe[i] = x[i] + si * h[i];
                probe[j] = x[j] + sj * h[j];
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let d = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            for (k, m) in out.iter_mut().enumerate() {
                m[(i, j)] = d[k];
                m[(j, i)] = d[k];
            }
        }
    }
    Ok(out)
}
