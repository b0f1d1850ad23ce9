//! The linearized difference operator `T(t, x, y, theta)` along orbit pairs.
//!
//! `T` is the solution operator of `v' = a(t) v`, where `a(t)` is the
//! mean-value matrix of the field along the segment between the two orbits.
//! The pair and the linear part are integrated as one system, so that
//! `T(t, z)(x - y)` tracks `phi(t, x) - phi(t, y)` stage by stage.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::{cone_membership_vec, hyperplane_split, sigma, sigma_bounds, HyperplaneConvention, Location, Side};
use crate::error::{Error, Result};
use crate::forcing::{advance_base, TorusPoint};
use crate::linalg::random_unit_vector;
use crate::ode::{self, OdeOptions};
use crate::quadrature::{GaussLegendre, MEAN_VALUE_NODES};
use crate::system::ForcedSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocyclePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: TorusPoint,
}

impl CocyclePoint {
    pub fn new<S: ForcedSystem + ?Sized>(sys: &S, x: Vec<f64>, y: Vec<f64>, theta: TorusPoint) -> Result<Self> {
        let n = sys.dim();
        if x.len() != n || y.len() != n {
            return Err(Error::Precondition(format!("states must have length {n}")));
        }
        if theta.angles().len() != sys.rotation().len() {
            return Err(Error::Precondition("base point has the wrong torus dimension".into()));
        }
        if !sys.in_box(&x) || !sys.in_box(&y) {
            return Err(Error::Domain("cocycle point outside the declared box".into()));
        }
        Ok(Self { x, y, theta })
    }

    pub fn diagonal<S: ForcedSystem + ?Sized>(sys: &S, x: Vec<f64>, theta: TorusPoint) -> Result<Self> {
        Self::new(sys, x.clone(), x, theta)
    }

    pub fn difference(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalMatrix {
    pub t_grid: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

/// Pair states and the propagated columns at each grid time.
#[derive(Debug, Clone)]
pub struct CocyclePath {
    pub t_grid: Vec<f64>,
    pub points: Vec<CocyclePoint>,
    pub columns: Vec<DMatrix<f64>>,
}

/// Integrates `(x, y, V)` over the relative times `grid` (starting at 0).
pub fn propagate_path<S: ForcedSystem + ?Sized>(
    sys: &S,
    z: &CocyclePoint,
    cols: &DMatrix<f64>,
    grid: &[f64],
    tol: f64,
) -> Result<CocyclePath> {
    let n = sys.dim();
    if cols.nrows() != n {
        return Err(Error::Precondition(format!("vectors must have length {n}")));
    }
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::Precondition("time grid must start at 0".into()));
    }
    if let Some(&t) = grid.iter().find(|t| **t < 0.0) {
        return Err(Error::Range { t, start: 0.0, end: f64::INFINITY });
    }
    let k = cols.ncols();
    let rule = GaussLegendre::mean_value();
    let omega = sys.rotation().omega().to_vec();
    let theta0 = z.theta.angles().to_vec();
    let mut angles = theta0.clone();
    let mut y0 = Vec::with_capacity(2 * n + n * k);
    y0.extend_from_slice(&z.x);
    y0.extend_from_slice(&z.y);
    y0.extend_from_slice(cols.as_slice());
    let mut f = |t: f64, s: &[f64], ds: &mut [f64]| -> Result<()> {
        for (a, (th, w)) in angles.iter_mut().zip(theta0.iter().zip(&omega)) {
            *a = th + w * t;
        }
        let (x, rest) = s.split_at(n);
        let (y, v) = rest.split_at(n);
        let (dx, drest) = ds.split_at_mut(n);
        let (dy, dv) = drest.split_at_mut(n);
        sys.field(&angles, x, dx)?;
        sys.field(&angles, y, dy)?;
        if k == 1 {
            sys.mean_value_apply(&rule, &angles, x, y, v, dv);
        } else {
            let a = sys.mean_value_matrix_with(&rule, &angles, x, y);
            let vm = DMatrix::from_column_slice(n, k, v);
            dv.copy_from_slice((a * vm).as_slice());
        }
        Ok(())
    };
    let states = ode::integrate_grid(&mut f, &y0, grid, &OdeOptions::with_tol(tol))?;
    let mut path = CocyclePath {
        t_grid: grid.to_vec(),
        points: Vec::with_capacity(grid.len()),
        columns: Vec::with_capacity(grid.len()),
    };
    for (t, s) in grid.iter().zip(states) {
        path.points.push(CocyclePoint {
            x: s[..n].to_vec(),
            y: s[n..2 * n].to_vec(),
            theta: advance_base(&z.theta, sys.rotation(), *t),
        });
        path.columns.push(DMatrix::from_column_slice(n, k, &s[2 * n..]));
    }
    Ok(path)
}

/// `(z . t, T(t, z) cols)`.
pub fn propagate_frame<S: ForcedSystem + ?Sized>(
    sys: &S,
    z: &CocyclePoint,
    cols: &DMatrix<f64>,
    t: f64,
    tol: f64,
) -> Result<(CocyclePoint, DMatrix<f64>)> {
    if t < 0.0 {
        return Err(Error::Range { t, start: 0.0, end: f64::INFINITY });
    }
    if t == 0.0 {
        return Ok((z.clone(), cols.clone()));
    }
    let mut p = propagate_path(sys, z, cols, &[0.0, t], tol)?;
    Ok((p.points.pop().unwrap(), p.columns.pop().unwrap()))
}

/// `T(t, z) v`.
pub fn propagate<S: ForcedSystem + ?Sized>(sys: &S, z: &CocyclePoint, v: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    let (_, m) = propagate_frame(sys, z, &DMatrix::from_column_slice(v.len(), 1, v), t, tol)?;
    Ok(m.as_slice().to_vec())
}

/// The pair advanced by `t`: `z . t`.
pub fn advance<S: ForcedSystem + ?Sized>(sys: &S, z: &CocyclePoint, t: f64, tol: f64) -> Result<CocyclePoint> {
    let empty = DMatrix::zeros(sys.dim(), 0);
    Ok(propagate_frame(sys, z, &empty, t, tol)?.0)
}

pub fn fundamental_matrix<S: ForcedSystem + ?Sized>(sys: &S, z: &CocyclePoint, grid: &[f64], tol: f64) -> Result<FundamentalMatrix> {
    let n = sys.dim();
    let path = propagate_path(sys, z, &DMatrix::identity(n, n), grid, tol)?;
    Ok(FundamentalMatrix {
        t_grid: path.t_grid,
        matrices: path.columns,
    })
}

/// `a(t)` along the pair through `z`, with a `nodes`-point rule in `s`.
pub fn meanvalue_coefficients_with<S: ForcedSystem + ?Sized>(
    sys: &S,
    z: &CocyclePoint,
    t: f64,
    tol: f64,
    nodes: usize,
) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::Range { t, start: 0.0, end: f64::INFINITY });
    }
    let zt = advance(sys, z, t, tol)?;
    let angles = z.theta.unreduced_at(sys.rotation(), t);
    Ok(sys.mean_value_matrix_with(&GaussLegendre::new(nodes), &angles, &zt.x, &zt.y))
}

pub fn meanvalue_coefficients<S: ForcedSystem + ?Sized>(sys: &S, z: &CocyclePoint, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    meanvalue_coefficients_with(sys, z, t, tol, MEAN_VALUE_NODES)
}

/// `int_0^1 d_2 phi(t, y + s(x - y), theta) ds` from variational equations at
/// `nodes` Gauss points; a lower-accuracy cross-check of `T(t, z)`.
pub fn derivative_cross_check<S: ForcedSystem + ?Sized>(sys: &S, z: &CocyclePoint, t: f64, tol: f64, nodes: usize) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let rule = GaussLegendre::new(nodes);
    let omega = sys.rotation().omega().to_vec();
    let theta0 = z.theta.angles().to_vec();
    let mut acc = DMatrix::zeros(n, n);
    for (s, w) in rule.iter() {
        let p: Vec<f64> = z.y.iter().zip(&z.x).map(|(b, a)| b + s * (a - b)).collect();
        let mut angles = theta0.clone();
        let mut f = |tt: f64, st: &[f64], ds: &mut [f64]| -> Result<()> {
            for (a, (th, om)) in angles.iter_mut().zip(theta0.iter().zip(&omega)) {
                *a = th + om * tt;
            }
            let (x, m) = st.split_at(n);
            let (dx, dm) = ds.split_at_mut(n);
            sys.field(&angles, x, dx)?;
            let j = sys.jacobian(&angles, x);
            dm.copy_from_slice((j * DMatrix::from_column_slice(n, n, m)).as_slice());
            Ok(())
        };
        let mut y0 = p.clone();
        y0.extend_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
        let out = ode::integrate_to(&mut f, 0.0, &y0, t, &OdeOptions::with_tol(tol))?;
        acc += DMatrix::from_column_slice(n, n, &out[n..]) * w;
    }
    Ok(acc)
}

fn gauged(mu: &[f64], v: &[f64]) -> Vec<f64> {
    v.iter().zip(mu).map(|(a, m)| a * m).collect()
}

/// Vector whose sign pattern has exactly `changes` sign changes.
pub fn random_pattern<R: Rng + ?Sized>(rng: &mut R, n: usize, changes: usize) -> Vec<f64> {
    let mut gaps: Vec<usize> = (1..n).collect();
    // partial Fisher-Yates for the change positions
    for k in 0..changes.min(gaps.len()) {
        let j = rng.random_range(k..gaps.len());
        gaps.swap(k, j);
    }
    let cuts = &gaps[..changes.min(n.saturating_sub(1))];
    let mut sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (0..n)
        .map(|j| {
            if cuts.contains(&j) {
                sign = -sign;
            }
            sign * rng.random_range(0.1..1.0)
        })
        .collect()
}

/// A point of the boundary of `C_i`: `i - 1` sign changes and one zeroed
/// entry whose sign is free to add changes.
pub fn random_boundary_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, i: usize, tol: f64) -> Option<Vec<f64>> {
    for _ in 0..64 {
        let mut v = random_pattern(rng, n, i - 1);
        let j = rng.random_range(0..n);
        v[j] = 0.0;
        if cone_membership_vec(&v, i, tol).location == Location::Boundary {
            return Some(v);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryPlan {
    pub samples: usize,
    /// Times in `(0, 1]` at which (H3)/(H4) are tested.
    pub times: Vec<f64>,
    pub tol: f64,
    /// Relative zero tolerance of the cone tests.
    pub sign_tol: f64,
    pub composition_tol: f64,
    pub continuity_tol: f64,
    /// Sampling half-width for `x`, `y`.
    pub state_half_width: f64,
    pub h5_horizon: f64,
    pub h5_dt: f64,
    pub seed: u64,
}

impl Default for BatteryPlan {
    fn default() -> Self {
        Self {
            samples: 40,
            times: vec![0.5, 0.75, 1.0],
            tol: 1e-10,
            sign_tol: 1e-8,
            composition_tol: 1e-8,
            continuity_tol: 1e-4,
            state_half_width: 1.0,
            h5_horizon: 4.0,
            h5_dt: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxiomStatus {
    Pass,
    Fail,
    /// Holds by construction (finite dimension); not tested.
    Structural,
    /// No admissible trial exists (e.g. scalar systems).
    Vacuous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub z: CocyclePoint,
    pub v: Vec<f64>,
    pub t: f64,
    pub image: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxiomResult {
    pub axiom: String,
    pub status: AxiomStatus,
    pub trials: usize,
    pub worst_margin: f64,
    pub counterexamples: Vec<Counterexample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl AxiomResult {
    fn new(axiom: &str) -> Self {
        Self {
            axiom: axiom.into(),
            status: AxiomStatus::Pass,
            trials: 0,
            worst_margin: f64::INFINITY,
            counterexamples: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn absorb(&mut self, other: Trial) {
        self.trials += other.trials;
        self.worst_margin = self.worst_margin.min(other.worst);
        self.counterexamples.extend(other.counterexamples);
        self.errors.extend(other.error);
    }

    fn finish(mut self) -> Self {
        if self.trials == 0 && self.errors.is_empty() {
            self.status = AxiomStatus::Vacuous;
            self.worst_margin = 0.0;
        } else {
            let ok = self.errors.is_empty() && self.counterexamples.is_empty() && self.worst_margin > 0.0;
            self.status = if ok { AxiomStatus::Pass } else { AxiomStatus::Fail };
        }
        // keep reports small
        self.counterexamples.truncate(10);
        self
    }

    pub fn passed(&self) -> bool {
        matches!(self.status, AxiomStatus::Pass | AxiomStatus::Structural | AxiomStatus::Vacuous)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryReport {
    pub samples: usize,
    pub results: Vec<AxiomResult>,
}

impl BatteryReport {
    pub fn get(&self, axiom: &str) -> Option<&AxiomResult> {
        self.results.iter().find(|r| r.axiom == axiom)
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(AxiomResult::passed)
    }
}

#[derive(Default)]
struct Trial {
    trials: usize,
    worst: f64,
    counterexamples: Vec<Counterexample>,
    error: Option<String>,
}

impl Trial {
    fn new() -> Self {
        Self { worst: f64::INFINITY, ..Default::default() }
    }

    fn failed(e: Error) -> Self {
        Self { worst: f64::NEG_INFINITY, error: Some(e.to_string()), ..Default::default() }
    }

    fn record(&mut self, margin: f64, bad: impl FnOnce() -> Counterexample) {
        self.trials += 1;
        self.worst = self.worst.min(margin);
        if margin <= 0.0 {
            self.counterexamples.push(bad());
        }
    }
}

struct Sample {
    z: CocyclePoint,
    v: Vec<f64>,
    t1: f64,
    t2: f64,
    boundary: Vec<(usize, Vec<f64>)>,
    h5: Vec<Vec<f64>>,
}

fn draw_samples<S: ForcedSystem + ?Sized>(sys: &S, plan: &BatteryPlan) -> Vec<Sample> {
    let n = sys.dim();
    let m = sys.rotation().len();
    let mu = sys.gauge();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = Vec::with_capacity(plan.samples);
    let w = plan.state_half_width;
    let mut attempts = 0;
    while out.len() < plan.samples && attempts < 100 * plan.samples.max(1) {
        attempts += 1;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-w..w)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-w..w)).collect();
        let theta = TorusPoint::new((0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect());
        let Ok(z) = CocyclePoint::new(sys, x, y, theta) else { continue };
        let v = random_unit_vector(&mut rng, n).as_slice().to_vec();
        let t1 = rng.random_range(0.25..2.0);
        let t2 = rng.random_range(0.25..2.0);
        let mut boundary = Vec::new();
        let mut h5 = Vec::new();
        for i in 1..n {
            if let Some(b) = random_boundary_vector(&mut rng, n, i, plan.sign_tol) {
                // sampled in gauge coordinates; mu is an involution
                boundary.push((i, gauged(&mu, &b)));
            }
        }
        for i in 2..=n {
            h5.push(gauged(&mu, &random_pattern(&mut rng, n, i - 1)));
        }
        out.push(Sample { z, v, t1, t2, boundary, h5 });
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn h1_trial<S: ForcedSystem + ?Sized>(sys: &S, s: &Sample, plan: &BatteryPlan) -> Trial {
    let run = || -> Result<Trial> {
        let mut tr = Trial::new();
        let whole = propagate(sys, &s.z, &s.v, s.t1 + s.t2, plan.tol)?;
        let (z1, v1) = propagate_frame(sys, &s.z, &DMatrix::from_column_slice(s.v.len(), 1, &s.v), s.t1, plan.tol)?;
        let split = propagate(sys, &z1, v1.as_slice(), s.t2, plan.tol)?;
        let res = norm(&whole.iter().zip(&split).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&whole).max(1.0);
        tr.record(plan.composition_tol - res, || Counterexample {
            z: s.z.clone(),
            v: s.v.clone(),
            t: s.t1 + s.t2,
            image: whole.clone(),
            note: format!("composition residual {res:e}"),
        });
        let h = 1e-6;
        let small = propagate(sys, &s.z, &s.v, h, plan.tol)?;
        let res = norm(&small.iter().zip(&s.v).map(|(a, b)| a - b).collect::<Vec<_>>());
        tr.record(plan.continuity_tol - res, || Counterexample {
            z: s.z.clone(),
            v: s.v.clone(),
            t: h,
            image: small.clone(),
            note: format!("continuity residual {res:e}"),
        });
        Ok(tr)
    };
    run().unwrap_or_else(Trial::failed)
}

fn h3_trial<S: ForcedSystem + ?Sized>(sys: &S, s: &Sample, plan: &BatteryPlan) -> Trial {
    let mu = sys.gauge();
    let run = || -> Result<Trial> {
        let mut tr = Trial::new();
        let grid: Vec<f64> = std::iter::once(0.0).chain(plan.times.iter().copied()).collect();
        let path = propagate_path(sys, &s.z, &DMatrix::from_column_slice(s.v.len(), 1, &s.v), &grid, plan.tol)?;
        for (t, c) in grid.iter().zip(&path.columns).skip(1) {
            let w = gauged(&mu, c.as_slice());
            let r = sigma(&w, plan.sign_tol);
            let margin = if r.regular { r.margin } else { -1.0 };
            tr.record(margin, || Counterexample {
                z: s.z.clone(),
                v: s.v.clone(),
                t: *t,
                image: w.clone(),
                note: "image is zero or irregular".into(),
            });
        }
        Ok(tr)
    };
    run().unwrap_or_else(Trial::failed)
}

fn h4_trial<S: ForcedSystem + ?Sized>(sys: &S, s: &Sample, plan: &BatteryPlan) -> Trial {
    let mu = sys.gauge();
    let run = || -> Result<Trial> {
        let mut tr = Trial::new();
        let grid: Vec<f64> = std::iter::once(0.0).chain(plan.times.iter().copied()).collect();
        for (i, v) in &s.boundary {
            let path = propagate_path(sys, &s.z, &DMatrix::from_column_slice(v.len(), 1, v), &grid, plan.tol)?;
            for (t, c) in grid.iter().zip(&path.columns).skip(1) {
                let w = gauged(&mu, c.as_slice());
                let m = cone_membership_vec(&w, *i, plan.sign_tol);
                let margin = match m.location {
                    Location::Interior => m.margin,
                    Location::Boundary => 0.0,
                    Location::Outside => -m.margin,
                };
                tr.record(margin, || Counterexample {
                    z: s.z.clone(),
                    v: v.clone(),
                    t: *t,
                    image: w.clone(),
                    note: format!("boundary of C_{i} not mapped into its interior"),
                });
            }
        }
        Ok(tr)
    };
    run().unwrap_or_else(Trial::failed)
}

/// Smallest `i` with `x` in the closed cone `C_i`.
fn closed_cone_index(x: &[f64], tol: f64) -> usize {
    sigma_bounds(x, tol).map_or(0, |(lo, _)| lo + 1)
}

fn h5_trial<S: ForcedSystem + ?Sized>(sys: &S, s: &Sample, plan: &BatteryPlan) -> Trial {
    let mu = sys.gauge();
    let n = sys.dim();
    let run = || -> Result<Trial> {
        let mut tr = Trial::new();
        let grid = crate::tridiag::uniform_grid(0.0, plan.h5_horizon, plan.h5_dt);
        for v in &s.h5 {
            let vg = gauged(&mu, v);
            let path = propagate_path(sys, &s.z, &DMatrix::from_column_slice(n, 1, v), &grid, plan.tol)?;
            for k in 1..grid.len() {
                let a = path.columns[k - 1][0] * mu[0];
                let b = path.columns[k][0] * mu[0];
                if a * b > 0.0 || k == 1 && a == 0.0 {
                    continue;
                }
                // bisect the crossing of the first coordinate
                let z0 = &path.points[k - 1];
                let c0 = path.columns[k - 1].clone();
                let (mut lo, mut hi) = (0.0, grid[k] - grid[k - 1]);
                let mut w = path.columns[k].as_slice().to_vec();
                let mut t_star = grid[k];
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let (_, cm) = propagate_frame(sys, z0, &c0, mid, plan.tol)?;
                    w = cm.as_slice().to_vec();
                    t_star = grid[k - 1] + mid;
                    if (cm[0] * mu[0]) * a > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-13 {
                        break;
                    }
                }
                let wg = gauged(&mu, &w);
                let split = hyperplane_split(&wg, HyperplaneConvention::FirstCoordinate, plan.sign_tol);
                if split.side != Side::Hyperplane {
                    continue;
                }
                let i_w = closed_cone_index(&wg, plan.sign_tol);
                if i_w == 0 {
                    continue;
                }
                let mv = cone_membership_vec(&vg, i_w, plan.sign_tol);
                let margin = match mv.location {
                    Location::Outside => mv.margin,
                    Location::Boundary => 0.0,
                    Location::Interior => -mv.margin,
                };
                tr.record(margin, || Counterexample {
                    z: s.z.clone(),
                    v: v.clone(),
                    t: t_star,
                    image: wg.clone(),
                    note: format!("image in (C_{i_w} minus C_{}) on the hyperplane while v lies in C_{i_w}", i_w - 1),
                });
            }
        }
        Ok(tr)
    };
    run().unwrap_or_else(Trial::failed)
}

/// Runs (H1), (H3), (H4), (H5) on sampled pairs; (H2) is recorded as structural.
pub fn axiom_battery<S: ForcedSystem + ?Sized>(sys: &S, plan: &BatteryPlan) -> BatteryReport {
    let samples = draw_samples(sys, plan);
    type TrialFn<S> = fn(&S, &Sample, &BatteryPlan) -> Trial;
    let axioms: [(&str, TrialFn<S>); 4] = [("H1", h1_trial::<S>), ("H3", h3_trial::<S>), ("H4", h4_trial::<S>), ("H5", h5_trial::<S>)];
    let mut results = Vec::new();
    for (name, f) in axioms {
        let trials: Vec<Trial> = samples.par_iter().map(|s| f(sys, s, plan)).collect();
        let mut r = AxiomResult::new(name);
        for t in trials {
            r.absorb(t);
        }
        results.push(r.finish());
        if name == "H1" {
            results.push(AxiomResult {
                axiom: "H2".into(),
                status: AxiomStatus::Structural,
                trials: 0,
                worst_margin: 0.0,
                counterexamples: Vec::new(),
                errors: Vec::new(),
            });
        }
    }
    BatteryReport {
        samples: samples.len(),
        results,
    }
}

/// `x' = A x` with `a_12 = -1`, `a_21 = +1`: the cone conditions fail.
pub fn non_cooperative_control() -> crate::system::LinearSystem {
    crate::system::LinearSystem::from_rows(&[vec![-1.0, -1.0], vec![1.0, -1.0]]).expect("square")
}

/// Applies a matrix to a slice.
pub fn apply(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::{
        advance, apply, axiom_battery, cone_membership_vec, derivative_cross_check, fundamental_matrix, meanvalue_coefficients,
        meanvalue_coefficients_with, non_cooperative_control, propagate, propagate_frame, propagate_path, random_boundary_vector,
        random_pattern, random_unit_vector, sigma, AxiomStatus, BatteryPlan, CocyclePoint, DMatrix, Error, ForcedSystem, Location,
        TorusPoint,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::system::LinearSystem;
    use crate::tridiag::{default_chain5, default_cubic_pair};
    use proptest::prelude::*;
    use rand::Rng;

    fn chain_point(rng: &mut ChaCha8Rng) -> CocyclePoint {
        let sys = default_chain5();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.2..1.2)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.2..1.2)).collect();
        let th = TorusPoint::new(vec![rng.random::<f64>() * 6.28, rng.random::<f64>() * 6.28]);
        CocyclePoint::new(&sys, x, y, th).unwrap()
    }

    #[test]
    fn swap_matrix_matches_exponential() {
        let sys = LinearSystem::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let z = CocyclePoint::new(&sys, vec![0.3, -0.2], vec![-0.1, 0.4], TorusPoint::zero(2)).unwrap();
        let d = z.difference();
        let out = propagate(&sys, &z, &d, 1.0, 1e-11).unwrap();
        let (c, s) = (1.0f64.cosh(), 1.0f64.sinh());
        let exact = [c * d[0] + s * d[1], s * d[0] + c * d[1]];
        for k in 0..2 {
            assert!((out[k] - exact[k]).abs() < 1e-9);
        }
        assert_eq!(propagate(&sys, &z, &d, 0.0, 1e-9).unwrap(), d);
    }

    #[test]
    fn linear_coefficients_are_the_matrix() {
        let sys = LinearSystem::tridiagonal(3, -1.0, 1.0);
        let z = CocyclePoint::new(&sys, vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.5], TorusPoint::zero(2)).unwrap();
        assert_eq!(meanvalue_coefficients(&sys, &z, 0.7, 1e-9).unwrap(), sys.a);
    }

    #[test]
    fn diagonal_pair_gives_jacobian() {
        let sys = default_chain5();
        let z = CocyclePoint::diagonal(&sys, vec![0.5, -0.3, 0.2, 1.0, -1.0], TorusPoint::new(vec![0.4, 2.0])).unwrap();
        let a = meanvalue_coefficients(&sys, &z, 0.5, 1e-10).unwrap();
        let zt = advance(&sys, &z, 0.5, 1e-10).unwrap();
        let j = sys.jacobian(&z.theta.unreduced_at(sys.rotation(), 0.5), &zt.x);
        assert!((a - j).amax() < 1e-13);
    }

    #[test]
    fn quadrature_refinement_agrees() {
        let sys = default_chain5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = chain_point(&mut rng);
        let a16 = meanvalue_coefficients_with(&sys, &z, 1.0, 1e-10, 16).unwrap();
        let a32 = meanvalue_coefficients_with(&sys, &z, 1.0, 1e-10, 32).unwrap();
        assert!((a16 - a32).amax() < 1e-12);
    }

    #[test]
    fn tridiagonal_sparsity_and_cooperativity() {
        let sys = default_chain5();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z = chain_point(&mut rng);
            let a = meanvalue_coefficients(&sys, &z, 0.3, 1e-9).unwrap();
            for r in 0..5usize {
                for c in 0..5usize {
                    if r.abs_diff(c) >= 2 {
                        assert_eq!(a[(r, c)], 0.0);
                    } else if r != c {
                        assert!(a[(r, c)] >= sys.eps0);
                    }
                }
            }
        }
    }

    #[test]
    fn difference_identity_and_negative_time() {
        let sys = default_chain5();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tol = 1e-9;
        for _ in 0..10 {
            let z = chain_point(&mut rng);
            let v = propagate(&sys, &z, &z.difference(), 2.0, tol).unwrap();
            let zt = advance(&sys, &z, 2.0, tol * 1e-2).unwrap();
            let d = zt.difference();
            assert!(v.iter().zip(&d).all(|(a, b)| (a - b).abs() <= 10.0 * tol));
        }
        let z = chain_point(&mut rng);
        assert!(matches!(propagate(&sys, &z, &z.difference(), -1.0, tol), Err(Error::Range { .. })));
    }

    #[test]
    fn cross_check_path_agrees_with_fundamental_matrix() {
        let sys = default_cubic_pair();
        let z = CocyclePoint::new(&sys, vec![0.8, -0.5], vec![-0.3, 0.6], TorusPoint::zero(2)).unwrap();
        let phi = fundamental_matrix(&sys, &z, &[0.0, 1.0], 1e-11).unwrap();
        let cross = derivative_cross_check(&sys, &z, 1.0, 1e-11, 12).unwrap();
        // both operators carry x - y to the orbit difference
        let d = z.difference();
        let a = apply(&phi.matrices[1], &d);
        let b = apply(&cross, &d);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-6));
        assert_eq!(phi.matrices[0], DMatrix::identity(2, 2));
        assert!(phi.matrices[1].determinant().abs() > 0.0);
        // and coincide as x -> y
        let near = CocyclePoint::new(&sys, vec![0.8, -0.5], vec![0.8 + 1e-4, -0.5 - 1e-4], TorusPoint::zero(2)).unwrap();
        let phi = fundamental_matrix(&sys, &near, &[0.0, 1.0], 1e-11).unwrap();
        let cross = derivative_cross_check(&sys, &near, 1.0, 1e-11, 4).unwrap();
        assert!((&phi.matrices[1] - cross).amax() < 1e-6);
    }

    #[test]
    fn sigma_nonincreasing_along_cocycle() {
        let sys = default_chain5();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = crate::tridiag::uniform_grid(0.0, 5.0, 0.05);
        for _ in 0..10 {
            let z = chain_point(&mut rng);
            let v = random_pattern(&mut rng, 5, 4);
            let path = propagate_path(&sys, &z, &DMatrix::from_column_slice(5, 1, &v), &grid, 1e-10).unwrap();
            let mut prev = usize::MAX;
            for c in &path.columns {
                let r = sigma(c.as_slice(), 1e-8);
                if r.regular {
                    assert!(r.sigma <= prev);
                    prev = r.sigma;
                }
            }
        }
    }

    #[test]
    fn battery_on_cooperative_linear_system() {
        let sys = LinearSystem::tridiagonal(3, -1.0, 1.0);
        let plan = BatteryPlan { samples: 12, seed: 7, ..Default::default() };
        let rep = axiom_battery(&sys, &plan);
        for r in &rep.results {
            assert!(r.passed(), "{}: {:?}", r.axiom, r);
        }
        assert_eq!(rep.get("H2").unwrap().status, AxiomStatus::Structural);
        assert!(rep.get("H5").unwrap().trials > 0);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"H4\""));
    }

    #[test]
    fn battery_flags_non_cooperative_control() {
        let plan = BatteryPlan { samples: 12, seed: 7, ..Default::default() };
        let rep = axiom_battery(&non_cooperative_control(), &plan);
        let h4 = rep.get("H4").unwrap();
        assert_eq!(h4.status, AxiomStatus::Fail);
        assert!(!h4.counterexamples.is_empty());
    }

    #[test]
    fn boundary_samples_are_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 2..7 {
            for i in 1..n {
                let b = random_boundary_vector(&mut rng, n, i, 1e-9).unwrap();
                assert_eq!(cone_membership_vec(&b, i, 1e-9).location, Location::Boundary);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cocycle_composition(seed in 0u64..1000, t1 in 0.25f64..2.0, t2 in 0.25f64..2.0) {
            let sys = default_chain5();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = chain_point(&mut rng);
            let v = random_unit_vector(&mut rng, 5).as_slice().to_vec();
            let tol = 1e-11;
            let whole = propagate(&sys, &z, &v, t1 + t2, tol).unwrap();
            let (z1, v1) = propagate_frame(&sys, &z, &DMatrix::from_column_slice(5, 1, &v), t1, tol).unwrap();
            let split = propagate(&sys, &z1, v1.as_slice(), t2, tol).unwrap();
            for k in 0..5 {
                prop_assert!((whole[k] - split[k]).abs() <= 1e-8);
            }
        }

        #[test]
        fn pattern_has_requested_changes(seed in 0u64..1000, n in 1usize..9, c in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = c.min(n - 1);
            let v = random_pattern(&mut rng, n, c);
            prop_assert_eq!(sigma(&v, 1e-12).sigma, c);
        }
    }
}
