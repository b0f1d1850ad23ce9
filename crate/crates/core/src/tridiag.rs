//! Competitive–cooperative tridiagonal systems `x_i' = f_i(theta.t, x_{i-1}, x_i, x_{i+1}) + eps g_i(theta.t, x)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{advance_base, ForcingSpec, RotationVector, TorusPoint};
use crate::ode::OdeOptions;
use crate::system::{self, ForcedSystem};

/// `coeff * x_{i-1}^p0 * x_i^p1 * x_{i+1}^p2` in component `component`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub component: usize,
    pub coeff: f64,
    pub powers: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissipativity {
    /// `delta` of the strong box condition.
    pub delta: f64,
    /// Half-width `C` of the absorbing box.
    pub box_half_width: f64,
    /// Constant of the weaker sign condition; stored only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TridiagSpec {
    pub n: usize,
    pub delta_signs: Vec<i8>,
    pub eps0: f64,
    pub terms: Vec<Monomial>,
    /// Additive forcing inside `f`.
    pub forcing: ForcingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<ForcingSpec>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipativity: Option<Dissipativity>,
}

pub fn gauge_transform(delta_signs: &[i8]) -> Vec<f64> {
    let mut mu = Vec::with_capacity(delta_signs.len() + 1);
    mu.push(1.0);
    for (i, &d) in delta_signs.iter().enumerate() {
        mu.push(d as f64 * mu[i]);
    }
    mu
}

fn ipow(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(p as i32),
    }
}

impl TridiagSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("system.n", "dimension must be positive"));
        }
        if self.delta_signs.len() + 1 != self.n {
            return Err(Error::config("system.delta_signs", "length must be n - 1"));
        }
        if self.delta_signs.iter().any(|d| *d != 1 && *d != -1) {
            return Err(Error::config("system.delta_signs", "entries must be +1 or -1"));
        }
        if self.n > 1 && !(self.eps0 > 0.0) {
            return Err(Error::config("system.eps0", "cooperativity margin must be positive"));
        }
        for (k, m) in self.terms.iter().enumerate() {
            let p = format!("system.terms[{k}]");
            if m.component >= self.n {
                return Err(Error::config(format!("{p}.component"), "index out of range"));
            }
            if m.component == 0 && m.powers[0] != 0 {
                return Err(Error::config(format!("{p}.powers"), "first component has no left neighbour"));
            }
            if m.component + 1 == self.n && m.powers[2] != 0 {
                return Err(Error::config(format!("{p}.powers"), "last component has no right neighbour"));
            }
        }
        if self.forcing.dim != self.n {
            return Err(Error::config("system.forcing.dim", "must equal n"));
        }
        self.forcing.validate("system.forcing")?;
        if let Some(g) = &self.perturbation {
            if g.dim != self.n {
                return Err(Error::config("system.perturbation.dim", "must equal n"));
            }
            if g.rotation.len() != self.forcing.rotation.len() {
                return Err(Error::config("system.perturbation.rotation", "must match the forcing torus"));
            }
            g.validate("system.perturbation")?;
        }
        if let Some(d) = &self.dissipativity {
            if !(d.delta > 0.0) || !(d.box_half_width > 0.0) {
                return Err(Error::config("system.dissipativity", "delta and box_half_width must be positive"));
            }
        }
        Ok(())
    }

    fn neighbours(&self, i: usize, x: &[f64]) -> [f64; 3] {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < self.n { x[i + 1] } else { 0.0 };
        [left, x[i], right]
    }

    /// Unperturbed tridiagonal part `f` (polynomial + forcing).
    pub fn f_part(&self, angles: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in &self.terms {
            let [a, b, c] = self.neighbours(m.component, x);
            out[m.component] += m.coeff * ipow(a, m.powers[0]) * ipow(b, m.powers[1]) * ipow(c, m.powers[2]);
        }
        self.forcing.add_to(angles, x, out);
    }

    pub fn f_jacobian(&self, angles: &[f64], x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut j = DMatrix::zeros(n, n);
        for m in &self.terms {
            let i = m.component;
            let v = self.neighbours(i, x);
            for slot in 0..3 {
                let p = m.powers[slot];
                if p == 0 {
                    continue;
                }
                let mut d = m.coeff * p as f64 * ipow(v[slot], p - 1);
                for other in 0..3 {
                    if other != slot {
                        d *= ipow(v[other], m.powers[other]);
                    }
                }
                let col = i + slot - 1;
                j[(i, col)] += d;
            }
        }
        self.forcing.add_jacobian(angles, &mut j);
        j
    }

    /// Jacobian of `f` in gauge coordinates `x_hat = mu x`.
    pub fn gauged_jacobian(&self, angles: &[f64], x: &[f64]) -> DMatrix<f64> {
        let mu = gauge_transform(&self.delta_signs);
        let j = self.f_jacobian(angles, x);
        DMatrix::from_fn(self.n, self.n, |r, c| mu[r] * j[(r, c)] * mu[c])
    }

    pub fn perturbation_bound(&self) -> f64 {
        self.perturbation.as_ref().map_or(0.0, |g| g.sup_bound)
    }
}

impl ForcedSystem for TridiagSpec {
    fn dim(&self) -> usize {
        self.n
    }

    fn gauge(&self) -> Vec<f64> {
        gauge_transform(&self.delta_signs)
    }

    fn rotation(&self) -> &RotationVector {
        &self.forcing.rotation
    }

    fn field(&self, angles: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        self.f_part(angles, x, out);
        if let Some(g) = &self.perturbation {
            if self.eps != 0.0 {
                let mut tmp = vec![0.0; self.n];
                g.add_to(angles, x, &mut tmp);
                for (o, t) in out.iter_mut().zip(tmp) {
                    *o += self.eps * t;
                }
            }
        }
        Ok(())
    }

    fn jacobian(&self, angles: &[f64], x: &[f64]) -> DMatrix<f64> {
        let mut j = self.f_jacobian(angles, x);
        if let Some(g) = &self.perturbation {
            if self.eps != 0.0 {
                let mut jg = DMatrix::zeros(self.n, self.n);
                g.add_jacobian(angles, &mut jg);
                j += jg * self.eps;
            }
        }
        j
    }

    fn in_box(&self, x: &[f64]) -> bool {
        self.forcing.in_box(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CooperativityReport {
    pub samples: usize,
    pub min_offdiagonal: f64,
    pub eps0: f64,
    pub passed: bool,
}

/// Spot-checks the gauged off-diagonal entries of `df` on random box samples.
pub fn check_cooperativity(spec: &TridiagSpec, samples: usize, seed: u64) -> CooperativityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.forcing.rotation.len();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let angles: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        let x: Vec<f64> = spec
            .forcing
            .state_box
            .iter()
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect();
        let j = spec.gauged_jacobian(&angles, &x);
        for i in 0..spec.n.saturating_sub(1) {
            worst = worst.min(j[(i, i + 1)]).min(j[(i + 1, i)]);
        }
    }
    CooperativityReport {
        samples,
        min_offdiagonal: worst,
        eps0: spec.eps0,
        passed: spec.n < 2 || worst >= spec.eps0 - 1e-9,
    }
}

/// Solution samples on a uniform output grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Orbit {
    pub t_grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Base point at `t_grid[0]`.
    pub theta0: TorusPoint,
    pub rotation: RotationVector,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    pub fn theta_at(&self, k: usize) -> TorusPoint {
        advance_base(&self.theta0, &self.rotation, self.t_grid[k] - self.t_grid[0])
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("non-empty orbit")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.rotation.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|j| format!("theta_{j}")));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t_grid[k].to_string()];
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.extend(self.theta_at(k).angles().iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Uniform grid `t0, t0 + dt, ..., t1` (last point snapped to `t1`).
pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut g: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).collect();
    *g.last_mut().unwrap() = t1;
    if g.len() >= 2 && g[g.len() - 1] <= g[g.len() - 2] {
        g.remove(g.len() - 2);
    }
    g
}

/// Orbit of any forced system on a uniform output grid.
pub fn orbit_of<S: ForcedSystem + ?Sized>(
    sys: &S,
    theta: &TorusPoint,
    x0: &[f64],
    t_span: (f64, f64),
    dt_out: f64,
    tol: f64,
) -> Result<Orbit> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial state must be finite".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Precondition(format!("initial state has length {}, expected {}", x0.len(), sys.dim())));
    }
    let grid = uniform_grid(t_span.0, t_span.1, dt_out);
    let states = system::solve_on_grid(sys, theta, x0, &grid, &OdeOptions::with_tol(tol))?;
    Ok(Orbit {
        t_grid: grid,
        states,
        theta0: theta.clone(),
        rotation: sys.rotation().clone(),
    })
}

pub fn integrate(spec: &TridiagSpec, theta: &TorusPoint, x0: &[f64], t_span: (f64, f64), dt_out: f64, tol: f64) -> Result<Orbit> {
    orbit_of(spec, theta, x0, t_span, dt_out, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxViolation {
    pub x0: Vec<f64>,
    pub theta: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipativeReport {
    pub samples: usize,
    pub entered: bool,
    pub max_entry_time: f64,
    pub violations: Vec<BoxViolation>,
}

#[derive(Debug, Clone)]
pub struct BoxCheckPlan {
    pub samples: usize,
    /// Initial states are drawn uniformly from `[-start_half_width, start_half_width]^n`.
    pub start_half_width: f64,
    pub horizon: f64,
    pub dt: f64,
    pub tol: f64,
    pub seed: u64,
}

/// Checks that sampled orbits enter the declared box and stay there.
pub fn check_dissipative_box(spec: &TridiagSpec, plan: &BoxCheckPlan) -> Result<DissipativeReport> {
    let d = spec
        .dissipativity
        .as_ref()
        .ok_or_else(|| Error::Precondition("no dissipativity constants declared".into()))?;
    let mg = spec.perturbation_bound();
    if spec.eps.abs() * mg >= d.delta {
        return Err(Error::Precondition(format!(
            "|eps| * M_g = {} is not below delta = {}",
            spec.eps.abs() * mg,
            d.delta
        )));
    }
    let c = d.box_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let m = spec.forcing.rotation.len();
    let starts: Vec<(Vec<f64>, TorusPoint)> = (0..plan.samples)
        .map(|_| {
            let x: Vec<f64> = (0..spec.n)
                .map(|_| rng.random_range(-plan.start_half_width..=plan.start_half_width))
                .collect();
            let th = TorusPoint::new((0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect());
            (x, th)
        })
        .collect();
    let inside = |x: &[f64]| x.iter().all(|v| v.abs() <= c + 1e-9);
    let results: Vec<std::result::Result<f64, BoxViolation>> = starts
        .par_iter()
        .map(|(x0, th)| {
            let viol = |reason: String| BoxViolation {
                x0: x0.clone(),
                theta: th.angles().to_vec(),
                reason,
            };
            let orbit = integrate(spec, th, x0, (0.0, plan.horizon), plan.dt, plan.tol).map_err(|e| viol(e.to_string()))?;
            let entry = orbit.states.iter().position(|s| inside(s));
            match entry {
                None => Err(viol("never entered the box".into())),
                Some(k) => {
                    if let Some(j) = orbit.states[k..].iter().position(|s| !inside(s)) {
                        Err(viol(format!("left the box at t = {}", orbit.t_grid[k + j])))
                    } else {
                        Ok(orbit.t_grid[k])
                    }
                }
            }
        })
        .collect();
    let mut max_entry: f64 = 0.0;
    let mut violations = Vec::new();
    for r in results {
        match r {
            Ok(t) => max_entry = max_entry.max(t),
            Err(v) => violations.push(v),
        }
    }
    Ok(DissipativeReport {
        samples: plan.samples,
        entered: violations.is_empty(),
        max_entry_time: max_entry,
        violations,
    })
}

/// Samples the strong box condition: `f_i <= -delta` where `x_i >= C` dominates
/// its neighbours, and `f_i >= delta` in the mirrored case. Returns the worst margin.
pub fn sample_box_condition(spec: &TridiagSpec, samples: usize, seed: u64) -> Result<f64> {
    let d = spec
        .dissipativity
        .as_ref()
        .ok_or_else(|| Error::Precondition("no dissipativity constants declared".into()))?;
    let c = d.box_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.forcing.rotation.len();
    let mut worst = f64::INFINITY;
    let mut f = vec![0.0; spec.n];
    for _ in 0..samples {
        let angles: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        let i = rng.random_range(0..spec.n);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let xi = c * (1.0 + rng.random::<f64>());
        let mut x: Vec<f64> = (0..spec.n).map(|_| rng.random_range(-c..=c)).collect();
        x[i] = sign * xi;
        if i > 0 {
            x[i - 1] = rng.random_range(-xi..=xi);
        }
        if i + 1 < spec.n {
            x[i + 1] = rng.random_range(-xi..=xi);
        }
        spec.f_part(&angles, &x, &mut f);
        worst = worst.min(-sign * f[i] - d.delta);
    }
    Ok(worst)
}

fn cubic_terms(n: usize, linear: f64, cubic: f64) -> Vec<Monomial> {
    let mut t = Vec::new();
    for i in 0..n {
        if linear != 0.0 {
            t.push(Monomial { component: i, coeff: linear, powers: [0, 1, 0] });
        }
        t.push(Monomial { component: i, coeff: cubic, powers: [0, 3, 0] });
    }
    t
}

/// `x1' = -x1^3 + x2`, `x2' = x1 - x2^3`; absorbing box half-width 2.
pub fn default_cubic_pair() -> TridiagSpec {
    let mut terms = cubic_terms(2, 0.0, -1.0);
    terms.push(Monomial { component: 0, coeff: 1.0, powers: [0, 0, 1] });
    terms.push(Monomial { component: 1, coeff: 1.0, powers: [1, 0, 0] });
    TridiagSpec {
        n: 2,
        delta_signs: vec![1],
        eps0: 1.0,
        terms,
        forcing: ForcingSpec::zero(2, RotationVector::default_pair(), 10.0),
        perturbation: None,
        eps: 0.0,
        dissipativity: Some(Dissipativity {
            delta: 1.0,
            box_half_width: 2.0,
            weak_delta: None,
        }),
    }
}

/// Diffusively coupled bistable chain
/// `x_i' = x_i - x_i^3 + d (x_{i-1} - 2 x_i + x_{i+1}) + a (sin theta_1 + sin theta_2)`
/// with free ends and `d = 0.5`.
pub fn default_chain(n: usize, amplitude: f64) -> TridiagSpec {
    let d = 0.5;
    let mut terms = Vec::new();
    for i in 0..n {
        let neighbours = (i > 0) as u32 + (i + 1 < n) as u32;
        terms.push(Monomial { component: i, coeff: 1.0 - d * neighbours as f64, powers: [0, 1, 0] });
        terms.push(Monomial { component: i, coeff: -1.0, powers: [0, 3, 0] });
        if i > 0 {
            terms.push(Monomial { component: i, coeff: d, powers: [1, 0, 0] });
        }
        if i + 1 < n {
            terms.push(Monomial { component: i, coeff: d, powers: [0, 0, 1] });
        }
    }
    TridiagSpec {
        n,
        delta_signs: vec![1; n.saturating_sub(1)],
        eps0: d,
        terms,
        forcing: ForcingSpec::uniform_sines(n, RotationVector::default_pair(), &[amplitude, amplitude], 10.0),
        perturbation: None,
        eps: 0.0,
        dissipativity: Some(Dissipativity {
            delta: 1.0,
            box_half_width: 1.5,
            weak_delta: None,
        }),
    }
}

/// Five-component chain with forcing amplitude 0.05.
pub fn default_chain5() -> TridiagSpec {
    default_chain(5, 0.05)
}

/// `x' = x - x^3 + 0.05 (sin theta_1 + sin theta_2)`.
pub fn default_pitchfork() -> TridiagSpec {
    TridiagSpec {
        n: 1,
        delta_signs: vec![],
        eps0: 1.0,
        terms: cubic_terms(1, 1.0, -1.0),
        forcing: ForcingSpec::uniform_sines(1, RotationVector::default_pair(), &[0.05, 0.05], 10.0),
        perturbation: None,
        eps: 0.0,
        dissipativity: Some(Dissipativity {
            delta: 1.0,
            box_half_width: 1.5,
            weak_delta: None,
        }),
    }
}

/// `x' = -x + 0.05 (sin theta_1 + sin theta_2)`.
pub fn default_forced_linear() -> TridiagSpec {
    TridiagSpec {
        terms: cubic_terms(1, -1.0, 0.0),
        ..default_pitchfork()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::finite_difference_jacobian;

    #[test]
    fn gauge_examples() {
        assert_eq!(gauge_transform(&[1, 1]), vec![1.0, 1.0, 1.0]);
        assert_eq!(gauge_transform(&[-1, -1]), vec![1.0, -1.0, 1.0]);
        assert_eq!(gauge_transform(&[-1, 1, -1]), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn gauge_makes_competitive_chain_cooperative() {
        let mut spec = default_chain(4, 0.05);
        // flip the sign of every coupling: competitive chain
        for m in spec.terms.iter_mut() {
            if m.powers[0] == 1 || m.powers[2] == 1 {
                m.coeff = -m.coeff;
            }
        }
        spec.delta_signs = vec![-1; 3];
        spec.validate().unwrap();
        let r = check_cooperativity(&spec, 1000, 1);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn defaults_validate_and_are_cooperative() {
        for spec in [default_cubic_pair(), default_chain5(), default_pitchfork()] {
            spec.validate().unwrap();
            let r = check_cooperativity(&spec, 1000, 7);
            assert!(r.passed, "{r:?}");
            assert!(sample_box_condition(&spec, 2000, 3).unwrap() > 0.0);
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let spec = default_chain5();
        let x = [0.3, -0.7, 1.1, 0.2, -0.4];
        let angles = [0.4, 1.9];
        let ja = spec.jacobian(&angles, &x);
        let jf = finite_difference_jacobian(&spec, &angles, &x).unwrap();
        assert!((ja - jf).amax() < 1e-6);
    }

    #[test]
    fn monotone_in_initial_data() {
        let spec = default_chain5();
        let th = TorusPoint::new(vec![0.3, 2.0]);
        let x = [-1.0, 0.2, 0.5, -0.3, 0.9];
        let y: Vec<f64> = x.iter().map(|v| v + 0.2).collect();
        let ox = integrate(&spec, &th, &x, (0.0, 10.0), 0.1, 1e-10).unwrap();
        let oy = integrate(&spec, &th, &y, (0.0, 10.0), 0.1, 1e-10).unwrap();
        for (a, b) in ox.states.iter().zip(&oy.states) {
            for i in 0..5 {
                assert!(a[i] <= b[i] + 1e-8);
            }
        }
    }

    #[test]
    fn cubic_pair_enters_box() {
        let plan = BoxCheckPlan {
            samples: 100,
            start_half_width: 5.0,
            horizon: 20.0,
            dt: 0.01,
            tol: 1e-8,
            seed: 5,
        };
        let r = check_dissipative_box(&default_cubic_pair(), &plan).unwrap();
        assert!(r.entered && r.violations.is_empty(), "{:?}", r.violations.first());
        assert!(r.max_entry_time > 0.0 && r.max_entry_time < 20.0);
    }

    #[test]
    fn start_inside_box_enters_at_zero() {
        let plan = BoxCheckPlan {
            samples: 10,
            start_half_width: 1.0,
            horizon: 5.0,
            dt: 0.05,
            tol: 1e-8,
            seed: 9,
        };
        let r = check_dissipative_box(&default_cubic_pair(), &plan).unwrap();
        assert_eq!(r.max_entry_time, 0.0);
    }

    #[test]
    fn large_eps_is_precondition_error() {
        let mut spec = default_cubic_pair();
        let mut g = ForcingSpec::uniform_sines(2, RotationVector::default_pair(), &[1.0, 1.0], 10.0);
        g.sup_bound = 2.0;
        spec.perturbation = Some(g);
        spec.eps = 0.6;
        let plan = BoxCheckPlan { samples: 1, start_half_width: 1.0, horizon: 1.0, dt: 0.1, tol: 1e-8, seed: 0 };
        assert!(matches!(check_dissipative_box(&spec, &plan), Err(Error::Precondition(_))));
        spec.eps = 0.4;
        assert!(check_dissipative_box(&spec, &plan).is_ok());
    }

    #[test]
    fn orbit_csv_has_header_and_rows() {
        let spec = default_cubic_pair();
        let o = integrate(&spec, &TorusPoint::zero(2), &[1.0, -1.0], (0.0, 1.0), 0.5, 1e-8).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,theta_1,theta_2");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = default_chain5();
        let s = serde_json::to_string(&spec).unwrap();
        let back: TridiagSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
