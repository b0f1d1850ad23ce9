//! Forced vector fields `x' = F(theta . t, x)` over a torus rotation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forcing::{RotationVector, TorusPoint};
use crate::ode::{self, OdeOptions, Trajectory};
use crate::quadrature::GaussLegendre;

pub trait ForcedSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn rotation(&self) -> &RotationVector;

    /// Vector field at base angles `angles` (not necessarily reduced).
    fn field(&self, angles: &[f64], x: &[f64], out: &mut [f64]) -> Result<()>;

    fn jacobian(&self, angles: &[f64], x: &[f64]) -> DMatrix<f64>;

    fn in_box(&self, _x: &[f64]) -> bool {
        true
    }

    /// Diagonal sign change `mu` taking the linearization to cooperative form.
    fn gauge(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }

    /// `int_0^1 J(y + s(x - y)) ds` by the given rule.
    fn mean_value_matrix_with(&self, rule: &GaussLegendre, angles: &[f64], x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut acc = DMatrix::zeros(n, n);
        let mut p = vec![0.0; n];
        for (s, w) in rule.iter() {
            for k in 0..n {
                p[k] = y[k] + s * (x[k] - y[k]);
            }
            acc += self.jacobian(angles, &p) * w;
        }
        acc
    }

    fn mean_value_matrix(&self, angles: &[f64], x: &[f64], y: &[f64]) -> DMatrix<f64> {
        self.mean_value_matrix_with(&GaussLegendre::mean_value(), angles, x, y)
    }

    /// `out = a(x, y) v`; systems with structure override this.
    fn mean_value_apply(&self, rule: &GaussLegendre, angles: &[f64], x: &[f64], y: &[f64], v: &[f64], out: &mut [f64]) {
        let a = self.mean_value_matrix_with(rule, angles, x, y);
        let r = a * DVector::from_column_slice(v);
        out.copy_from_slice(r.as_slice());
    }
}

/// Base angles at time `t` along the rotation from `theta`.
pub fn angles_at(theta: &TorusPoint, rot: &RotationVector, t: f64) -> Vec<f64> {
    theta.unreduced_at(rot, t)
}

fn rhs_for<'a, S: ForcedSystem + ?Sized>(
    sys: &'a S,
    theta: &'a TorusPoint,
    t0: f64,
) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let rot = sys.rotation().clone();
    let mut angles = theta.angles().to_vec();
    move |t, x, dx| {
        for (a, (th, w)) in angles.iter_mut().zip(theta.angles().iter().zip(rot.omega())) {
            *a = th + w * (t - t0);
        }
        sys.field(&angles, x, dx)
    }
}

/// Solution at times `grid` (first entry is the start time; the base point
/// `theta` is attached to `grid[0]`).
pub fn solve_on_grid<S: ForcedSystem + ?Sized>(
    sys: &S,
    theta: &TorusPoint,
    x0: &[f64],
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<f64>>> {
    let mut f = rhs_for(sys, theta, grid[0]);
    ode::integrate_grid(&mut f, x0, grid, opts)
}

pub fn solve_to<S: ForcedSystem + ?Sized>(sys: &S, theta: &TorusPoint, x0: &[f64], t: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    let mut f = rhs_for(sys, theta, 0.0);
    ode::integrate_to(&mut f, 0.0, x0, t, opts)
}

pub fn solve_dense<S: ForcedSystem + ?Sized>(sys: &S, theta: &TorusPoint, x0: &[f64], t: f64, opts: &OdeOptions) -> Result<Trajectory> {
    let mut f = rhs_for(sys, theta, 0.0);
    ode::integrate(&mut f, 0.0, x0, t, opts)
}

/// Autonomous `x' = A x`; the base rotation is carried but ignored.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub rotation: RotationVector,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::config("system.matrix", "matrix must be square and nonempty"));
        }
        Ok(Self {
            a,
            rotation: RotationVector::default_pair(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::config("system.matrix", "matrix must be square"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat))
    }

    /// Symmetric tridiagonal matrix with constant diagonal and off-diagonal.
    pub fn tridiagonal(n: usize, diag: f64, off: f64) -> Self {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = diag;
            if i + 1 < n {
                a[(i, i + 1)] = off;
                a[(i + 1, i)] = off;
            }
        }
        Self {
            a,
            rotation: RotationVector::default_pair(),
        }
    }
}

impl ForcedSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn rotation(&self) -> &RotationVector {
        &self.rotation
    }

    fn field(&self, _angles: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }

    fn jacobian(&self, _angles: &[f64], _x: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }

    fn mean_value_matrix_with(&self, _rule: &GaussLegendre, _angles: &[f64], _x: &[f64], _y: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }

    fn mean_value_apply(&self, _rule: &GaussLegendre, angles: &[f64], _x: &[f64], _y: &[f64], v: &[f64], out: &mut [f64]) {
        let _ = self.field(angles, v, out);
    }
}

/// Central-difference Jacobian, flagged approximate by callers.
pub fn finite_difference_jacobian<S: ForcedSystem + ?Sized>(sys: &S, angles: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for c in 0..n {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        sys.field(angles, &xp, &mut fp)?;
        xp[c] = x[c] - h;
        sys.field(angles, &xp, &mut fm)?;
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_flow_matches_exponential() {
        let sys = LinearSystem::tridiagonal(3, -1.0, 1.0);
        let th = TorusPoint::zero(2);
        let x0 = [1.0, -2.0, 0.5];
        let y = solve_to(&sys, &th, &x0, 1.5, &OdeOptions::with_tol(1e-11)).unwrap();
        let e = (sys.a.clone() * 1.5).exp() * DVector::from_column_slice(&x0);
        for i in 0..3 {
            assert!((y[i] - e[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn fd_jacobian_of_linear_is_exact() {
        let sys = LinearSystem::tridiagonal(4, -2.0, 0.7);
        let j = finite_difference_jacobian(&sys, &[0.0, 0.0], &[0.3, 0.1, -0.2, 1.0]).unwrap();
        assert!((j - &sys.a).amax() < 1e-8);
    }
}
