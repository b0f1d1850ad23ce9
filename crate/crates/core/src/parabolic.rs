//! Method-of-lines discretization of scalar reaction–diffusion equations on
//! `[0, 1]`, with optional nonlocal or chemotactic perturbation.
//!
//! Neumann grids carry the `N + 1` nodes `x_j = j / N`; Dirichlet grids carry
//! the `N` interior nodes `x_j = j / (N + 1)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{ForcingSpec, RotationVector, TorusPoint};
use crate::linalg::max_abs;
use crate::ode::{self, OdeOptions};
use crate::quadrature::GaussLegendre;
use crate::system::ForcedSystem;

pub const MIN_GRID: usize = 8;

/// `(3e^2 - e) / (2(e - 1))`, the sup-norm bound of the elliptic solve.
pub fn chemo_bound_constant() -> f64 {
    let e = std::f64::consts::E;
    (3.0 * e * e - e) / (2.0 * (e - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub n: usize,
    pub bc: BoundaryCondition,
    pub values: Vec<f64>,
}

pub fn node_count(n: usize, bc: BoundaryCondition) -> usize {
    match bc {
        BoundaryCondition::Neumann => n + 1,
        BoundaryCondition::Dirichlet => n,
    }
}

pub fn grid_spacing(n: usize, bc: BoundaryCondition) -> f64 {
    match bc {
        BoundaryCondition::Neumann => 1.0 / n as f64,
        BoundaryCondition::Dirichlet => 1.0 / (n + 1) as f64,
    }
}

pub fn grid_nodes(n: usize, bc: BoundaryCondition) -> Vec<f64> {
    let h = grid_spacing(n, bc);
    match bc {
        BoundaryCondition::Neumann => (0..=n).map(|j| j as f64 * h).collect(),
        BoundaryCondition::Dirichlet => (1..=n).map(|j| j as f64 * h).collect(),
    }
}

impl GridFunction {
    pub fn new(n: usize, bc: BoundaryCondition, values: Vec<f64>) -> Result<Self> {
        if n < MIN_GRID {
            return Err(Error::config("grid.n", format!("at least {MIN_GRID} points required")));
        }
        if values.len() != node_count(n, bc) {
            return Err(Error::config("grid.values", format!("expected {} values", node_count(n, bc))));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid.values", "values must be finite"));
        }
        Ok(Self { n, bc, values })
    }

    pub fn from_fn(n: usize, bc: BoundaryCondition, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(n, bc, grid_nodes(n, bc).into_iter().map(f).collect())
    }

    pub fn h(&self) -> f64 {
        grid_spacing(self.n, self.bc)
    }

    pub fn nodes(&self) -> Vec<f64> {
        grid_nodes(self.n, self.bc)
    }

    pub fn sup_norm(&self) -> f64 {
        max_abs(&self.values)
    }

    /// `||u||_inf + ||D_h u||_inf`, the discrete C^1 proxy norm.
    pub fn c1_norm(&self) -> f64 {
        let d = centered_difference(&self.values, self.h(), self.bc);
        self.sup_norm() + max_abs(&d)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "value"])?;
        for (x, v) in self.nodes().iter().zip(&self.values) {
            wr.write_record([x.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn centered_difference(u: &[f64], h: f64, bc: BoundaryCondition) -> Vec<f64> {
    let m = u.len();
    let mut d = vec![0.0; m];
    match bc {
        BoundaryCondition::Neumann => {
            for j in 1..m - 1 {
                d[j] = (u[j + 1] - u[j - 1]) / (2.0 * h);
            }
        }
        BoundaryCondition::Dirichlet => {
            for j in 0..m {
                let l = if j > 0 { u[j - 1] } else { 0.0 };
                let r = if j + 1 < m { u[j + 1] } else { 0.0 };
                d[j] = (r - l) / (2.0 * h);
            }
        }
    }
    d
}

fn laplacian(u: &[f64], h: f64, bc: BoundaryCondition, out: &mut [f64]) {
    let m = u.len();
    let ih2 = 1.0 / (h * h);
    match bc {
        BoundaryCondition::Neumann => {
            out[0] = 2.0 * (u[1] - u[0]) * ih2;
            out[m - 1] = 2.0 * (u[m - 2] - u[m - 1]) * ih2;
            for j in 1..m - 1 {
                out[j] = (u[j - 1] - 2.0 * u[j] + u[j + 1]) * ih2;
            }
        }
        BoundaryCondition::Dirichlet => {
            for j in 0..m {
                let l = if j > 0 { u[j - 1] } else { 0.0 };
                let r = if j + 1 < m { u[j + 1] } else { 0.0 };
                out[j] = (l - 2.0 * u[j] + r) * ih2;
            }
        }
    }
}

/// Solves a tridiagonal system `lower[j] x[j-1] + diag[j] x[j] + upper[j] x[j+1] = rhs[j]`.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for j in 1..m {
        let den = diag[j] - lower[j] * c[j - 1];
        c[j] = if j + 1 < m { upper[j] / den } else { 0.0 };
        d[j] = (rhs[j] - lower[j] * d[j - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for j in (0..m - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    x
}

/// Discrete Neumann solve of `v_xx - v + u = 0`.
pub fn solve_chemo_v(u: &GridFunction) -> Result<GridFunction> {
    if u.bc != BoundaryCondition::Neumann {
        return Err(Error::Precondition("the elliptic solve needs Neumann data".into()));
    }
    let v = solve_chemo_values(&u.values, u.h());
    GridFunction::new(u.n, u.bc, v)
}

fn solve_chemo_values(u: &[f64], h: f64) -> Vec<f64> {
    let m = u.len();
    let ih2 = 1.0 / (h * h);
    let mut lower = vec![-ih2; m];
    let diag = vec![1.0 + 2.0 * ih2; m];
    let mut upper = vec![-ih2; m];
    // ghost nodes double the inward coupling at both ends
    upper[0] = -2.0 * ih2;
    lower[m - 1] = -2.0 * ih2;
    thomas(&lower, &diag, &upper, u)
}

/// `max_j |(v_xx - v + u)_j|` on the grid.
pub fn elliptic_residual(u: &GridFunction, v: &GridFunction) -> f64 {
    let mut lap = vec![0.0; v.values.len()];
    laplacian(&v.values, v.h(), v.bc, &mut lap);
    lap.iter()
        .zip(&v.values)
        .zip(&u.values)
        .map(|((l, v), u)| (l - v + u).abs())
        .fold(0.0, f64::max)
}

/// Closed-form Neumann solution evaluated by trapezoid quadrature:
/// `v(x) = -c (e^x + e^-x) - int_0^x sinh(x - y) u(y) dy` with
/// `c = -int_0^1 (e^{2-y} + e^y) u(y) dy / (2(e^2 - 1))`.
pub fn chemo_v_formula(u: &GridFunction) -> Result<GridFunction> {
    if u.bc != BoundaryCondition::Neumann {
        return Err(Error::Precondition("the closed form needs Neumann data".into()));
    }
    let xs = u.nodes();
    let h = u.h();
    let e2 = std::f64::consts::E.powi(2);
    let trap = |g: &dyn Fn(usize) -> f64, upto: usize| -> f64 {
        if upto == 0 {
            return 0.0;
        }
        let mut s = 0.5 * (g(0) + g(upto));
        for j in 1..upto {
            s += g(j);
        }
        s * h
    };
    let c = -trap(&|j| ((2.0 - xs[j]).exp() + xs[j].exp()) * u.values[j], u.n) / (2.0 * (e2 - 1.0));
    let v: Vec<f64> = (0..=u.n)
        .map(|k| {
            let x = xs[k];
            let conv = trap(&|j| (x - xs[j]).sinh() * u.values[j], k);
            -c * (x.exp() + (-x).exp()) - conv
        })
        .collect();
    GridFunction::new(u.n, u.bc, v)
}

/// `f(theta, x, u, p) = sum_k poly[k] u^k - q u|u| + advection p + s(theta) profile(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    #[serde(default)]
    pub poly: Vec<f64>,
    #[serde(default)]
    pub abs_quadratic: f64,
    #[serde(default)]
    pub advection: f64,
    /// Scalar signal `s(theta)`; must not depend on the state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<ForcingSpec>,
    /// Cosine coefficients of the spatial profile, `sum_k b_k cos(k pi x)`.
    #[serde(default = "default_profile")]
    pub forcing_profile: Vec<f64>,
}

fn default_profile() -> Vec<f64> {
    vec![1.0]
}

fn cos_profile(coef: &[f64], x: f64) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(k, b)| b * (k as f64 * std::f64::consts::PI * x).cos())
        .sum()
}

impl Nonlinearity {
    fn du(&self, u: f64) -> f64 {
        self.poly_du(u) - 2.0 * self.abs_quadratic * u.abs()
    }

    fn poly_du(&self, u: f64) -> f64 {
        let mut d = 0.0;
        let mut pw = 1.0;
        for (k, c) in self.poly.iter().enumerate().skip(1) {
            d += k as f64 * c * pw;
            pw *= u;
        }
        d
    }

    fn local(&self, u: f64, p: f64) -> f64 {
        let mut v = 0.0;
        let mut pw = 1.0;
        for c in &self.poly {
            v += c * pw;
            pw *= u;
        }
        v - self.abs_quadratic * u * u.abs() + self.advection * p
    }

    fn signal(&self, angles: &[f64]) -> f64 {
        match &self.forcing {
            Some(f) => {
                let mut out = [0.0];
                f.add_to(angles, &[0.0], &mut out);
                out[0]
            }
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Perturbation {
    None,
    /// `eps c(theta, x) int_0^1 nu(x) u dx` with `c = c_mean + c_osc sin(theta_1)`.
    Nonlocal {
        c_mean: f64,
        #[serde(default)]
        c_osc: f64,
        nu: Vec<f64>,
        eps: f64,
    },
    /// `-eps (u v_x)_x` with `v_xx - v + u = 0`.
    Chemotaxis { eps: f64 },
}

impl Perturbation {
    pub fn c_sup(&self) -> f64 {
        match self {
            Perturbation::Nonlocal { c_mean, c_osc, .. } => c_mean.abs() + c_osc.abs(),
            _ => 0.0,
        }
    }

    /// Upper bound for `sup |nu|` (exact for a constant profile).
    pub fn nu_sup(&self) -> f64 {
        match self {
            Perturbation::Nonlocal { nu, .. } => nu.iter().map(|b| b.abs()).sum(),
            _ => 0.0,
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::Nonlocal { eps, .. } | Perturbation::Chemotaxis { eps } => *eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicDissipativity {
    pub xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicSpec {
    pub n: usize,
    pub bc: BoundaryCondition,
    pub rotation: RotationVector,
    pub nonlinearity: Nonlinearity,
    pub perturbation: Perturbation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipativity: Option<ParabolicDissipativity>,
}

impl ParabolicSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_GRID {
            return Err(Error::config("system.n", format!("grid needs at least {MIN_GRID} points")));
        }
        if let Some(f) = &self.nonlinearity.forcing {
            if f.dim != 1 || f.is_state_dependent() {
                return Err(Error::config("system.nonlinearity.forcing", "must be a scalar, state-independent signal"));
            }
            if f.rotation.len() != self.rotation.len() {
                return Err(Error::config("system.nonlinearity.forcing.rotation", "must match the system rotation"));
            }
            f.validate("system.nonlinearity.forcing")?;
        }
        if matches!(self.perturbation, Perturbation::Chemotaxis { .. }) && self.bc != BoundaryCondition::Neumann {
            return Err(Error::config("system.bc", "chemotaxis needs Neumann data"));
        }
        if let Some(d) = &self.dissipativity {
            if !(d.xi > 0.0) {
                return Err(Error::config("system.dissipativity.xi", "must be positive"));
            }
            let b = dissipativity_bounds(self, d);
            if !b.feasible {
                let bound = match self.perturbation {
                    Perturbation::Chemotaxis { .. } => format!("|eps| < xi/(C+1) = {}", d.xi / (chemo_bound_constant() + 1.0)),
                    _ => format!(
                        "0 <= eps < xi/(|c| |nu|) = {}",
                        d.xi / (self.perturbation.c_sup() * self.perturbation.nu_sup())
                    ),
                };
                return Err(Error::config("system.perturbation.eps", format!("eps = {} violates {bound}", self.perturbation.eps())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipativityBounds {
    pub m_star: Option<f64>,
    pub m1_star: Option<f64>,
    pub feasible: bool,
}

/// `M* = M0 / (xi - eps |c| |nu|)` for the nonlocal term,
/// `M1* = sqrt(M1 / (xi - (C+1)|eps|))` for chemotaxis.
pub fn dissipativity_bounds(spec: &ParabolicSpec, d: &ParabolicDissipativity) -> DissipativityBounds {
    match &spec.perturbation {
        Perturbation::Chemotaxis { eps } => {
            let den = d.xi - (chemo_bound_constant() + 1.0) * eps.abs();
            let feasible = den > 0.0;
            DissipativityBounds {
                m_star: None,
                m1_star: d.m1.filter(|_| feasible).map(|m1| (m1 / den).sqrt()),
                feasible,
            }
        }
        p => {
            let eps = p.eps();
            let prod = eps * p.c_sup() * p.nu_sup();
            let feasible = eps >= 0.0 && prod < d.xi;
            DissipativityBounds {
                m_star: d.m0.filter(|_| feasible).map(|m0| m0 / (d.xi - prod)),
                m1_star: None,
                feasible,
            }
        }
    }
}

/// Scalar form: `M* = M0 / (xi - eps_c_nu)` when `0 <= eps_c_nu < xi`.
pub fn nonlocal_m_star(m0: f64, xi: f64, eps_c_nu: f64) -> Option<f64> {
    (eps_c_nu >= 0.0 && eps_c_nu < xi).then(|| m0 / (xi - eps_c_nu))
}

/// Scalar form: `M1* = sqrt(M1 / (xi - (C+1)|eps|))` when `|eps| < xi/(C+1)`.
pub fn chemotaxis_m1_star(m1: f64, xi: f64, eps: f64) -> Option<f64> {
    let den = xi - (chemo_bound_constant() + 1.0) * eps.abs();
    (den > 0.0).then(|| (m1 / den).sqrt())
}

/// Semidiscrete system on the grid nodes.
#[derive(Debug, Clone)]
pub struct ParabolicSystem {
    pub spec: ParabolicSpec,
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    profile: Vec<f64>,
    nu: Vec<f64>,
    /// `(I - D2)^{-1}` for chemotaxis Jacobians.
    elliptic_inverse: Option<DMatrix<f64>>,
}

pub fn semidiscretize(spec: &ParabolicSpec) -> Result<ParabolicSystem> {
    spec.validate()?;
    let h = grid_spacing(spec.n, spec.bc);
    let nodes = grid_nodes(spec.n, spec.bc);
    let m = nodes.len();
    let weights: Vec<f64> = match spec.bc {
        BoundaryCondition::Neumann => (0..m).map(|j| if j == 0 || j == m - 1 { 0.5 * h } else { h }).collect(),
        BoundaryCondition::Dirichlet => vec![h; m],
    };
    let profile = nodes.iter().map(|&x| cos_profile(&spec.nonlinearity.forcing_profile, x)).collect();
    let nu = match &spec.perturbation {
        Perturbation::Nonlocal { nu, .. } => nodes.iter().map(|&x| cos_profile(nu, x)).collect(),
        _ => vec![0.0; m],
    };
    let elliptic_inverse = match spec.perturbation {
        Perturbation::Chemotaxis { .. } => {
            let mut k = DMatrix::zeros(m, m);
            let mut e = vec![0.0; m];
            for c in 0..m {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[c] = 1.0;
                let col = solve_chemo_values(&e, h);
                for r in 0..m {
                    k[(r, c)] = col[r];
                }
            }
            Some(k)
        }
        _ => None,
    };
    Ok(ParabolicSystem {
        spec: spec.clone(),
        h,
        nodes,
        weights,
        profile,
        nu,
        elliptic_inverse,
    })
}

impl ParabolicSystem {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn grid(&self, values: Vec<f64>) -> Result<GridFunction> {
        GridFunction::new(self.spec.n, self.spec.bc, values)
    }

    fn nonlocal_factor(&self, angles: &[f64]) -> f64 {
        match &self.spec.perturbation {
            Perturbation::Nonlocal { c_mean, c_osc, eps, .. } => {
                eps * (c_mean + c_osc * angles.first().copied().unwrap_or(0.0).sin())
            }
            _ => 0.0,
        }
    }

    fn integral_nu(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.weights).zip(&self.nu).map(|((u, w), n)| u * w * n).sum()
    }

    /// Chemotactic term `-eps u_x v_x - eps u v + eps u^2` and `v`.
    fn chemo_term(&self, eps: f64, u: &[f64], p: &[f64], out: &mut [f64]) {
        let v = solve_chemo_values(u, self.h);
        let vx = centered_difference(&v, self.h, self.spec.bc);
        for j in 0..u.len() {
            out[j] += -eps * p[j] * vx[j] - eps * u[j] * v[j] + eps * u[j] * u[j];
        }
    }

    /// Applies the linearization of the chemotactic term at `m` to `w`.
    fn chemo_linear(&self, eps: f64, m: &[f64], w: &[f64], out: &mut [f64]) {
        let h = self.h;
        let bc = self.spec.bc;
        let km = solve_chemo_values(m, h);
        let kw = solve_chemo_values(w, h);
        let mx = centered_difference(m, h, bc);
        let wx = centered_difference(w, h, bc);
        let kmx = centered_difference(&km, h, bc);
        let kwx = centered_difference(&kw, h, bc);
        for j in 0..m.len() {
            out[j] += -eps * (mx[j] * kwx[j] + wx[j] * kmx[j]) - eps * (w[j] * km[j] + m[j] * kw[j]) + 2.0 * eps * m[j] * w[j];
        }
    }

    /// Split-homotopy coefficients `(a_j, b_j)` of the linearized equation.
    pub fn linear_coefficients(&self, rule: &GaussLegendre, u1: &[f64], u2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nl = &self.spec.nonlinearity;
        let a = vec![nl.advection; u1.len()];
        let b = u1
            .iter()
            .zip(u2)
            .map(|(&x, &y)| rule.integrate(|s| nl.poly_du(y + s * (x - y))) - 2.0 * nl.abs_quadratic * mean_abs(x, y))
            .collect();
        (a, b)
    }

    pub fn solve(&self, theta: &TorusPoint, u0: &[f64], grid: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
        crate::system::solve_on_grid(self, theta, u0, grid, &OdeOptions::with_tol(tol))
    }
}

impl ForcedSystem for ParabolicSystem {
    fn dim(&self) -> usize {
        self.nodes.len()
    }

    fn rotation(&self) -> &RotationVector {
        &self.spec.rotation
    }

    fn field(&self, angles: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let nl = &self.spec.nonlinearity;
        laplacian(u, self.h, self.spec.bc, out);
        let p = centered_difference(u, self.h, self.spec.bc);
        let s = nl.signal(angles);
        for j in 0..u.len() {
            out[j] += nl.local(u[j], p[j]) + s * self.profile[j];
        }
        match &self.spec.perturbation {
            Perturbation::None => {}
            Perturbation::Nonlocal { .. } => {
                let k = self.nonlocal_factor(angles) * self.integral_nu(u);
                out.iter_mut().for_each(|o| *o += k);
            }
            Perturbation::Chemotaxis { eps } => self.chemo_term(*eps, u, &p, out),
        }
        Ok(())
    }

    fn jacobian(&self, angles: &[f64], u: &[f64]) -> DMatrix<f64> {
        let m = u.len();
        let nl = &self.spec.nonlinearity;
        let mut j = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        // linear differential part column by column
        for c in 0..m {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            laplacian(&e, self.h, self.spec.bc, &mut col);
            let d = centered_difference(&e, self.h, self.spec.bc);
            for r in 0..m {
                j[(r, c)] = col[r] + nl.advection * d[r];
            }
        }
        for r in 0..m {
            j[(r, r)] += nl.du(u[r]);
        }
        match &self.spec.perturbation {
            Perturbation::None => {}
            Perturbation::Nonlocal { .. } => {
                let k = self.nonlocal_factor(angles);
                for r in 0..m {
                    for c in 0..m {
                        j[(r, c)] += k * self.weights[c] * self.nu[c];
                    }
                }
            }
            Perturbation::Chemotaxis { eps } => {
                for c in 0..m {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[c] = 1.0;
                    col.iter_mut().for_each(|v| *v = 0.0);
                    self.chemo_linear(*eps, u, &e, &mut col);
                    for r in 0..m {
                        j[(r, c)] += col[r];
                    }
                }
            }
        }
        let _ = &self.elliptic_inverse;
        j
    }

    fn mean_value_matrix_with(&self, rule: &GaussLegendre, angles: &[f64], x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let mut a = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        for c in 0..m {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            self.mean_value_apply(rule, angles, x, y, &e, &mut col);
            for r in 0..m {
                a[(r, c)] = col[r];
            }
        }
        a
    }

    fn mean_value_apply(&self, rule: &GaussLegendre, angles: &[f64], x: &[f64], y: &[f64], v: &[f64], out: &mut [f64]) {
        laplacian(v, self.h, self.spec.bc, out);
        let pv = centered_difference(v, self.h, self.spec.bc);
        let (a, b) = self.linear_coefficients(rule, x, y);
        for j in 0..v.len() {
            out[j] += a[j] * pv[j] + b[j] * v[j];
        }
        match &self.spec.perturbation {
            Perturbation::None => {}
            Perturbation::Nonlocal { .. } => {
                let k = self.nonlocal_factor(angles) * self.integral_nu(v);
                out.iter_mut().for_each(|o| *o += k);
            }
            Perturbation::Chemotaxis { eps } => {
                // quadratic term: exact mean value at the midpoint
                let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
                self.chemo_linear(*eps, &mid, v, out);
            }
        }
    }
}

/// `int_0^1 |y + s(x - y)| ds`, exact across a sign change.
fn mean_abs(x: f64, y: f64) -> f64 {
    if x * y >= 0.0 {
        0.5 * (x + y).abs()
    } else {
        0.5 * (x * x + y * y) / (x - y).abs()
    }
}

/// Paired solution `(u1, u2)` and the solution `v` of the linearized equation.
#[derive(Debug, Clone)]
pub struct LinearizedPath {
    pub t_grid: Vec<f64>,
    pub u1: Vec<GridFunction>,
    pub u2: Vec<GridFunction>,
    pub v: Vec<GridFunction>,
}

impl LinearizedPath {
    pub fn max_identity_residual(&self) -> f64 {
        self.v
            .iter()
            .zip(self.u1.iter().zip(&self.u2))
            .map(|(v, (a, b))| {
                v.values
                    .iter()
                    .zip(a.values.iter().zip(&b.values))
                    .map(|(v, (a, b))| (v - (a - b)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Integrates `(u1, u2, v)` jointly; `v` starts from `v0` (the difference when `None`).
pub fn linearized_parabolic(
    sys: &ParabolicSystem,
    theta: &TorusPoint,
    u1: &GridFunction,
    u2: &GridFunction,
    v0: Option<&GridFunction>,
    grid: &[f64],
    nodes: usize,
    tol: f64,
) -> Result<LinearizedPath> {
    let spec = &sys.spec;
    for (name, g) in [("u1", Some(u1)), ("u2", Some(u2)), ("v0", v0)] {
        if let Some(g) = g {
            if g.n != spec.n || g.bc != spec.bc {
                return Err(Error::config(format!("linearized.{name}"), "grid does not match the system"));
            }
        }
    }
    if nodes == 0 {
        return Err(Error::config("linearized.nodes", "quadrature needs at least one node"));
    }
    let rule = GaussLegendre::new(nodes);
    let m = sys.dim();
    let mut y0 = Vec::with_capacity(3 * m);
    y0.extend_from_slice(&u1.values);
    y0.extend_from_slice(&u2.values);
    match v0 {
        Some(v) => y0.extend_from_slice(&v.values),
        None => y0.extend(u1.values.iter().zip(&u2.values).map(|(a, b)| a - b)),
    }
    let rot = spec.rotation.clone();
    let t0 = grid[0];
    let mut angles = theta.angles().to_vec();
    let mut f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        for (a, (th, w)) in angles.iter_mut().zip(theta.angles().iter().zip(rot.omega())) {
            *a = th + w * (t - t0);
        }
        let (a, rest) = y.split_at(m);
        let (b, v) = rest.split_at(m);
        let (da, drest) = dy.split_at_mut(m);
        let (db, dv) = drest.split_at_mut(m);
        sys.field(&angles, a, da)?;
        sys.field(&angles, b, db)?;
        sys.mean_value_apply(&rule, &angles, a, b, v, dv);
        Ok(())
    };
    let states = ode::integrate_grid(&mut f, &y0, grid, &OdeOptions::with_tol(tol))?;
    let mut path = LinearizedPath {
        t_grid: grid.to_vec(),
        u1: Vec::new(),
        u2: Vec::new(),
        v: Vec::new(),
    };
    for s in states {
        path.u1.push(sys.grid(s[..m].to_vec())?);
        path.u2.push(sys.grid(s[m..2 * m].to_vec())?);
        path.v.push(sys.grid(s[2 * m..].to_vec())?);
    }
    Ok(path)
}

/// Sampled check of the sign condition `u f(theta, x, u, 0) <= -zeta` for `|u| >= delta`.
pub fn sample_sign_condition(spec: &ParabolicSpec, delta: f64, zeta: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.rotation.len();
    let nl = &spec.nonlinearity;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let angles: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        let x: f64 = rng.random();
        let mag = delta * (1.0 + 9.0 * rng.random::<f64>());
        let u = if rng.random::<bool>() { mag } else { -mag };
        let f = nl.local(u, 0.0) + nl.signal(&angles) * cos_profile(&nl.forcing_profile, x);
        worst = worst.min(-zeta - u * f);
    }
    worst
}

fn scalar_signal(rotation: &RotationVector, amp: f64) -> ForcingSpec {
    let m = rotation.len();
    let per = vec![amp; m];
    ForcingSpec::uniform_sines(1, rotation.clone(), &per, 1e6)
}

/// `u_t = u_xx - u - u^3 + M0 (0.5 sin theta_1 + 0.5 sin theta_2) + eps c int nu u`
/// with `c = nu = 1`.
pub fn default_nonlocal(n: usize, eps: f64) -> ParabolicSpec {
    let rotation = RotationVector::default_pair();
    ParabolicSpec {
        n,
        bc: BoundaryCondition::Neumann,
        rotation: rotation.clone(),
        nonlinearity: Nonlinearity {
            poly: vec![0.0, -1.0, 0.0, -1.0],
            abs_quadratic: 0.0,
            advection: 0.0,
            forcing: Some(scalar_signal(&rotation, 0.5)),
            forcing_profile: vec![1.0],
        },
        perturbation: Perturbation::Nonlocal {
            c_mean: 1.0,
            c_osc: 0.0,
            nu: vec![1.0],
            eps,
        },
        dissipativity: Some(ParabolicDissipativity {
            xi: 1.0,
            m0: Some(1.0),
            m1: None,
        }),
    }
}

/// `f = -xi u|u| + 0.5 (sin theta_1 + sin theta_2) cos(pi x)` with chemotaxis strength `eps`.
pub fn default_chemotaxis(n: usize, eps: f64) -> ParabolicSpec {
    let rotation = RotationVector::default_pair();
    ParabolicSpec {
        n,
        bc: BoundaryCondition::Neumann,
        rotation: rotation.clone(),
        nonlinearity: Nonlinearity {
            poly: vec![0.0, 0.0],
            abs_quadratic: 7.0,
            advection: 0.0,
            forcing: Some(scalar_signal(&rotation, 0.5)),
            forcing_profile: vec![0.5, 0.5],
        },
        perturbation: Perturbation::Chemotaxis { eps },
        dissipativity: Some(ParabolicDissipativity {
            xi: 7.0,
            m0: None,
            m1: Some(1.0),
        }),
    }
}

/// Bistable reaction–diffusion `u_t = u_xx + u - u^3 + 0.05 (sin theta_1 + sin theta_2)`.
pub fn default_bistable(n: usize) -> ParabolicSpec {
    let rotation = RotationVector::default_pair();
    ParabolicSpec {
        n,
        bc: BoundaryCondition::Neumann,
        rotation: rotation.clone(),
        nonlinearity: Nonlinearity {
            poly: vec![0.0, 1.0, 0.0, -1.0],
            abs_quadratic: 0.0,
            advection: 0.0,
            forcing: Some(scalar_signal(&rotation, 0.05)),
            forcing_profile: vec![1.0],
        },
        perturbation: Perturbation::None,
        dissipativity: None,
    }
}

/// Pure diffusion `u_t = u_xx`.
pub fn heat(n: usize, bc: BoundaryCondition) -> ParabolicSpec {
    ParabolicSpec {
        n,
        bc,
        rotation: RotationVector::default_pair(),
        nonlinearity: Nonlinearity {
            poly: vec![],
            abs_quadratic: 0.0,
            advection: 0.0,
            forcing: None,
            forcing_profile: vec![1.0],
        },
        perturbation: Perturbation::None,
        dissipativity: None,
    }
}

/// Sup-norm error of the discrete heat flow from `cos(pi x)` (Neumann) or
/// `sin(pi x)` (Dirichlet) against `e^{-pi^2 t}` times the initial profile.
pub fn heat_error(n: usize, bc: BoundaryCondition, t: f64, tol: f64) -> Result<f64> {
    use std::f64::consts::PI;
    let sys = semidiscretize(&heat(n, bc))?;
    let shape = |x: f64| match bc {
        BoundaryCondition::Neumann => (PI * x).cos(),
        BoundaryCondition::Dirichlet => (PI * x).sin(),
    };
    let u0: Vec<f64> = sys.nodes().iter().map(|&x| shape(x)).collect();
    let out = sys.solve(&TorusPoint::zero(2), &u0, &[0.0, t], tol)?;
    let decay = (-PI * PI * t).exp();
    Ok(sys
        .nodes()
        .iter()
        .zip(&out[1])
        .map(|(&x, u)| (u - decay * shape(x)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::zero_number;
    use std::f64::consts::PI;

    #[test]
    fn heat_neumann_second_order() {
        let e64 = heat_error(64, BoundaryCondition::Neumann, 0.1, 1e-11).unwrap();
        let e128 = heat_error(128, BoundaryCondition::Neumann, 0.1, 1e-11).unwrap();
        let ratio = e64 / e128;
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
        // C h^2 with a modest constant
        assert!(e64 < 2.0 * (1.0 / 64.0f64).powi(2));
    }

    #[test]
    fn heat_dirichlet_second_order() {
        let e1 = heat_error(31, BoundaryCondition::Dirichlet, 0.1, 1e-11).unwrap();
        let e2 = heat_error(63, BoundaryCondition::Dirichlet, 0.1, 1e-11).unwrap();
        assert!((e1 / e2 - 4.0).abs() < 0.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn constants_preserved() {
        let sys = semidiscretize(&heat(16, BoundaryCondition::Neumann)).unwrap();
        let out = sys.solve(&TorusPoint::zero(2), &vec![1.0; 17], &[0.0, 1.0], 1e-10).unwrap();
        assert!(out[1].iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn elliptic_examples() {
        let one = GridFunction::new(32, BoundaryCondition::Neumann, vec![1.0; 33]).unwrap();
        let v = solve_chemo_v(&one).unwrap();
        assert!(v.values.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let zero = GridFunction::new(32, BoundaryCondition::Neumann, vec![0.0; 33]).unwrap();
        assert!(solve_chemo_v(&zero).unwrap().values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn elliptic_bound_and_residual_on_random_data() {
        let c = chemo_bound_constant();
        assert!((c - 5.6594).abs() < 1e-4 && c <= 5.6595);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let vals: Vec<f64> = (0..=64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = max_abs(&vals);
            let u = GridFunction::new(64, BoundaryCondition::Neumann, vals.iter().map(|v| v / s).collect()).unwrap();
            let v = solve_chemo_v(&u).unwrap();
            assert!(v.sup_norm() <= c);
            assert!(elliptic_residual(&u, &v) <= 1e-6);
            // discrete Neumann condition through the ghost nodes
            assert!(v.values.len() == 65);
        }
    }

    #[test]
    fn closed_form_agrees_after_sign_flip() {
        let printed_sign_at_one = {
            // printed form: c(e^x + e^-x) + int sinh(x-y) u, c = -int(...)u/(2(e^2-1))
            let c = -0.5;
            let x = 0.3f64;
            c * (x.exp() + (-x).exp()) + (x.cosh() - 1.0)
        };
        assert!((printed_sign_at_one + 1.0).abs() < 1e-12);
        let u = GridFunction::from_fn(256, BoundaryCondition::Neumann, |x| (PI * x).cos() + 0.3 * x * x).unwrap();
        let a = solve_chemo_v(&u).unwrap();
        let b = chemo_v_formula(&u).unwrap();
        let diff = a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "diff {diff}");
    }

    #[test]
    fn bound_examples() {
        assert_eq!(nonlocal_m_star(1.0, 1.0, 0.5), Some(2.0));
        assert!((chemotaxis_m1_star(1.0, 7.0, 0.0).unwrap() - 0.37796).abs() < 1e-5);
        assert_eq!(nonlocal_m_star(1.0, 1.0, 1.0), None);
        let spec = default_nonlocal(16, 1.0);
        let b = dissipativity_bounds(&spec, spec.dissipativity.as_ref().unwrap());
        assert!(!b.feasible);
        assert!(matches!(spec.validate(), Err(Error::Config { .. })));
        let spec = default_nonlocal(16, 0.5);
        let b = dissipativity_bounds(&spec, spec.dissipativity.as_ref().unwrap());
        assert_eq!(b.m_star, Some(2.0));
        let spec = default_chemotaxis(16, 0.0);
        let b = dissipativity_bounds(&spec, spec.dissipativity.as_ref().unwrap());
        assert!((b.m1_star.unwrap() - (1.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for spec in [default_nonlocal(12, 0.5), default_chemotaxis(12, 0.1), default_bistable(12)] {
            let sys = semidiscretize(&spec).unwrap();
            let u: Vec<f64> = sys.nodes().iter().map(|&x| 0.3 + (PI * x).cos() * 0.7).collect();
            let angles = [0.7, 1.3];
            let ja = sys.jacobian(&angles, &u);
            let jf = crate::system::finite_difference_jacobian(&sys, &angles, &u).unwrap();
            assert!((&ja - &jf).amax() < 1e-4 * ja.amax().max(1.0), "{:?}", spec.perturbation);
        }
    }

    #[test]
    fn linearized_identity() {
        let theta = TorusPoint::new(vec![0.2, 0.9]);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let tol = 1e-9;
        for spec in [default_bistable(16), default_nonlocal(16, 0.5), default_chemotaxis(16, 0.1)] {
            let sys = semidiscretize(&spec).unwrap();
            let u1 = GridFunction::from_fn(16, BoundaryCondition::Neumann, |x| 0.8 * (PI * x).cos()).unwrap();
            let u2 = GridFunction::from_fn(16, BoundaryCondition::Neumann, |x| 0.2 - 0.5 * x).unwrap();
            let path = linearized_parabolic(&sys, &theta, &u1, &u2, None, &grid, 16, tol).unwrap();
            assert!(path.max_identity_residual() <= 10.0 * tol, "{:?}: {}", spec.perturbation, path.max_identity_residual());
            // identical states give the zero path
            let same = linearized_parabolic(&sys, &theta, &u1, &u1, None, &grid, 16, tol).unwrap();
            assert!(same.v.iter().all(|v| v.sup_norm() == 0.0));
        }
    }

    #[test]
    fn mismatched_grid_is_config_error() {
        let sys = semidiscretize(&default_bistable(16)).unwrap();
        let u1 = GridFunction::from_fn(16, BoundaryCondition::Neumann, |x| x).unwrap();
        let u2 = GridFunction::from_fn(8, BoundaryCondition::Neumann, |x| x).unwrap();
        let r = linearized_parabolic(&sys, &TorusPoint::zero(2), &u1, &u2, None, &[0.0, 0.1], 16, 1e-8);
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn zero_number_drops_along_linearized_heat_flow() {
        let sys = semidiscretize(&default_bistable(64)).unwrap();
        let u1 = GridFunction::from_fn(64, BoundaryCondition::Neumann, |x| 0.5 * (3.0 * PI * x).cos() + 0.6 * (PI * x).cos()).unwrap();
        let u2 = GridFunction::from_fn(64, BoundaryCondition::Neumann, |_| 0.0).unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.025).collect();
        let path = linearized_parabolic(&sys, &TorusPoint::zero(2), &u1, &u2, None, &grid, 16, 1e-9).unwrap();
        let zs: Vec<usize> = path.v.iter().map(|v| zero_number(v, 1e-9).z).collect();
        assert!(zs.windows(2).all(|w| w[1] <= w[0]), "{zs:?}");
        assert_eq!(*zs.last().unwrap(), 1);
    }

    #[test]
    fn sign_condition_of_defaults() {
        assert!(sample_sign_condition(&default_nonlocal(16, 0.5), 2.0, 0.1, 1000, 4) > 0.0);
    }

    #[test]
    fn grid_function_guards() {
        assert!(GridFunction::new(4, BoundaryCondition::Neumann, vec![0.0; 5]).is_err());
        assert!(GridFunction::new(8, BoundaryCondition::Neumann, vec![0.0; 8]).is_err());
        assert!(GridFunction::new(8, BoundaryCondition::Dirichlet, vec![0.0; 8]).is_ok());
        let g = GridFunction::from_fn(8, BoundaryCondition::Neumann, |x| x).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }
}
