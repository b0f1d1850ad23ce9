//! Quasi-periodic forcing: a torus rotation and finite trigonometric sums on it.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest denominator probed when deciding whether a frequency ratio is rational.
pub const MAX_RATIONAL_DENOMINATOR: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RotationVector {
    omega: Vec<f64>,
}

impl RotationVector {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::config("rotation", "at least one frequency is required"));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("rotation", "frequencies must be finite"));
        }
        if omega.len() >= 2 && !has_irrational_pair(&omega) {
            return Err(Error::config(
                "rotation",
                format!(
                    "every frequency ratio is rational up to denominator {MAX_RATIONAL_DENOMINATOR}"
                ),
            ));
        }
        Ok(Self { omega })
    }

    /// `(1, sqrt 2)`.
    pub fn default_pair() -> Self {
        Self {
            omega: vec![1.0, std::f64::consts::SQRT_2],
        }
    }

    /// Periodic base flow (no irrationality requirement, `m = 1`).
    pub fn single(omega: f64) -> Self {
        Self { omega: vec![omega] }
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

impl TryFrom<Vec<f64>> for RotationVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RotationVector::new(v)
    }
}

impl From<RotationVector> for Vec<f64> {
    fn from(r: RotationVector) -> Self {
        r.omega
    }
}

fn has_irrational_pair(omega: &[f64]) -> bool {
    for i in 0..omega.len() {
        for j in (i + 1)..omega.len() {
            if omega[j] == 0.0 || omega[i] == 0.0 {
                continue;
            }
            if rational_approximation(omega[i] / omega[j], MAX_RATIONAL_DENOMINATOR).is_none() {
                return true;
            }
        }
    }
    false
}

/// Returns `(p, q)` if some continued-fraction convergent with `q <= max_q`
/// reproduces `x` to a few ulps.
pub fn rational_approximation(x: f64, max_q: u64) -> Option<(i64, u64)> {
    let tol = 8.0 * f64::EPSILON * x.abs().max(1.0);
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let ai = a as i128;
        let p2 = ai * p1 + p0;
        let q2 = ai * q1 + q0;
        if q2 > max_q as i128 {
            return None;
        }
        if (x - p2 as f64 / q2 as f64).abs() <= tol {
            return Some((p2 as i64, q2 as u64));
        }
        let frac = r - a;
        if frac <= 0.0 {
            return None;
        }
        r = 1.0 / frac;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    angles: Vec<f64>,
}

impl TorusPoint {
    pub fn new(angles: Vec<f64>) -> Self {
        Self {
            angles: angles.into_iter().map(reduce_angle).collect(),
        }
    }

    pub fn zero(m: usize) -> Self {
        Self { angles: vec![0.0; m] }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Angles at time `t` without reduction; used inside integrators where
    /// trig functions absorb the period.
    pub fn unreduced_at(&self, rot: &RotationVector, t: f64) -> Vec<f64> {
        self.angles
            .iter()
            .zip(rot.omega())
            .map(|(a, w)| a + w * t)
            .collect()
    }

    /// Distance on the torus (max over coordinates of the wrapped difference).
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.angles
            .iter()
            .zip(&other.angles)
            .map(|(a, b)| wrapped_difference(*a, *b).abs())
            .fold(0.0, f64::max)
    }
}

fn reduce_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Difference `a - b` wrapped into `(-pi, pi]`.
pub fn wrapped_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

pub fn advance_base(theta: &TorusPoint, rot: &RotationVector, t: f64) -> TorusPoint {
    assert_eq!(theta.angles.len(), rot.len(), "torus dimension mismatch");
    TorusPoint::new(theta.unreduced_at(rot, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Sin,
    Cos,
}

impl Trig {
    fn eval(self, phase: f64) -> f64 {
        match self {
            Trig::Sin => phase.sin(),
            Trig::Cos => phase.cos(),
        }
    }
}

/// Mode coefficient `c + L x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub constant: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i32>,
    pub trig: Trig,
    pub coefficient: Coefficient,
}

impl Mode {
    fn phase(&self, angles: &[f64]) -> f64 {
        self.k
            .iter()
            .zip(angles)
            .map(|(&k, &a)| k as f64 * a)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub dim: usize,
    pub rotation: RotationVector,
    #[serde(default)]
    pub modes: Vec<Mode>,
    /// Per-component `(lo, hi)` bounds of the admissible state box.
    pub state_box: Vec<(f64, f64)>,
    /// Declared uniform bound on `|F(theta, x)|_inf` over the box.
    pub sup_bound: f64,
}

impl ForcingSpec {
    pub fn zero(dim: usize, rotation: RotationVector, half_width: f64) -> Self {
        Self {
            dim,
            rotation,
            modes: Vec::new(),
            state_box: vec![(-half_width, half_width); dim],
            sup_bound: 0.0,
        }
    }

    /// The same scalar signal `sum_j amp_j sin(theta_j)` added to every component.
    pub fn uniform_sines(dim: usize, rotation: RotationVector, amp: &[f64], half_width: f64) -> Self {
        let m = rotation.len();
        let modes = amp
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let mut k = vec![0; m];
                k[j] = 1;
                Mode {
                    k,
                    trig: Trig::Sin,
                    coefficient: Coefficient {
                        constant: vec![a; dim],
                        linear: None,
                    },
                }
            })
            .collect();
        Self {
            dim,
            rotation,
            modes,
            state_box: vec![(-half_width, half_width); dim],
            sup_bound: amp.iter().map(|a| a.abs()).sum(),
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let m = self.rotation.len();
        if self.state_box.len() != self.dim {
            return Err(Error::config(format!("{path}.state_box"), "length must equal dim"));
        }
        for (j, mode) in self.modes.iter().enumerate() {
            let p = format!("{path}.modes[{j}]");
            if mode.k.len() != m {
                return Err(Error::config(format!("{p}.k"), "multi-index length must match rotation"));
            }
            if mode.coefficient.constant.len() != self.dim {
                return Err(Error::config(format!("{p}.coefficient.constant"), "length must equal dim"));
            }
            if let Some(lin) = &mode.coefficient.linear {
                if lin.len() != self.dim || lin.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::config(format!("{p}.coefficient.linear"), "must be dim x dim"));
                }
            }
        }
        if !(self.sup_bound >= 0.0) {
            return Err(Error::config(format!("{path}.sup_bound"), "must be nonnegative"));
        }
        Ok(())
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.state_box)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn eval(&self, theta: &TorusPoint, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!("state has length {}, expected {}", x.len(), self.dim)));
        }
        if !self.in_box(x) {
            return Err(Error::Domain(format!("{x:?}")));
        }
        let mut out = vec![0.0; self.dim];
        self.add_to(theta.angles(), x, &mut out);
        Ok(out)
    }

    /// Accumulates `F(angles, x)` into `out` without the box check.
    pub fn add_to(&self, angles: &[f64], x: &[f64], out: &mut [f64]) {
        for mode in &self.modes {
            let w = mode.trig.eval(mode.phase(angles));
            if w == 0.0 {
                continue;
            }
            let c = &mode.coefficient;
            for i in 0..self.dim {
                let mut coeff = c.constant[i];
                if let Some(lin) = &c.linear {
                    coeff += lin[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                out[i] += coeff * w;
            }
        }
    }

    /// Accumulates `dF/dx` into a row-major `dim x dim` buffer.
    pub fn add_jacobian(&self, angles: &[f64], jac: &mut nalgebra::DMatrix<f64>) {
        for mode in &self.modes {
            if let Some(lin) = &mode.coefficient.linear {
                let w = mode.trig.eval(mode.phase(angles));
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        jac[(i, j)] += lin[i][j] * w;
                    }
                }
            }
        }
    }

    pub fn is_state_dependent(&self) -> bool {
        self.modes.iter().any(|m| m.coefficient.linear.is_some())
    }
}

/// Smallest lag `tau = j dt <= horizon / 2` with
/// `max_i |f(t_i + tau) - f(t_i)| < eps` over the samples, or `None`.
///
/// `samples[i]` is the value at `t = i dt`; vector-valued signals use the
/// sup norm over components.
pub fn find_almost_period(samples: &[Vec<f64>], dt: f64, eps: f64, horizon: f64) -> Option<f64> {
    if !(eps > 0.0) || !(dt > 0.0) || samples.len() < 2 {
        return None;
    }
    let max_lag = ((horizon / 2.0) / dt + 1e-9).floor() as usize;
    let max_lag = max_lag.min(samples.len() - 1);
    'lag: for j in 1..=max_lag {
        for i in 0..samples.len() - j {
            let d = samples[i + j]
                .iter()
                .zip(&samples[i])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if d >= eps {
                continue 'lag;
            }
        }
        return Some(j as f64 * dt);
    }
    None
}

/// Scalar convenience wrapper over [`find_almost_period`].
pub fn find_almost_period_scalar(samples: &[f64], dt: f64, eps: f64, horizon: f64) -> Option<f64> {
    let v: Vec<Vec<f64>> = samples.iter().map(|&s| vec![s]).collect();
    find_almost_period(&v, dt, eps, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn two_sines() -> ForcingSpec {
        ForcingSpec::uniform_sines(1, RotationVector::default_pair(), &[1.0, 1.0], 10.0)
    }

    #[test]
    fn advance_identity_and_rotation() {
        let rot = RotationVector::default_pair();
        let th = TorusPoint::zero(2);
        assert_eq!(advance_base(&th, &rot, 0.0).angles(), &[0.0, 0.0]);
        let a = advance_base(&th, &rot, TAU);
        assert!(a.angles()[0].abs() < 1e-12 || (a.angles()[0] - TAU).abs() < 1e-12);
        let expect = (TAU * SQRT_2).rem_euclid(TAU);
        assert!((a.angles()[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn group_law_example() {
        let rot = RotationVector::default_pair();
        let th = TorusPoint::new(vec![0.4, 5.9]);
        let a = advance_base(&advance_base(&th, &rot, 1.3), &rot, 0.7);
        let b = advance_base(&th, &rot, 2.0);
        assert!(a.distance(&b) < 1e-12);
    }

    #[test]
    fn rational_frequencies_rejected() {
        assert!(RotationVector::new(vec![1.0, 2.0]).is_err());
        assert!(RotationVector::new(vec![3.0, 7.0]).is_err());
        assert!(RotationVector::new(vec![1.0, SQRT_2]).is_ok());
        assert!(RotationVector::new(vec![]).is_err());
        assert!(RotationVector::new(vec![2.5]).is_ok());
    }

    #[test]
    fn single_harmonic_value() {
        let spec = ForcingSpec {
            dim: 1,
            rotation: RotationVector::default_pair(),
            modes: vec![Mode {
                k: vec![1, 0],
                trig: Trig::Sin,
                coefficient: Coefficient { constant: vec![1.0], linear: None },
            }],
            state_box: vec![(-1.0, 1.0)],
            sup_bound: 1.0,
        };
        let v = spec.eval(&TorusPoint::new(vec![PI / 2.0, 0.3]), &[0.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_modes_give_zero() {
        let spec = ForcingSpec::zero(3, RotationVector::default_pair(), 1.0);
        let v = spec.eval(&TorusPoint::new(vec![1.0, 2.0]), &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn outside_box_is_domain_error() {
        let spec = two_sines();
        assert!(matches!(
            spec.eval(&TorusPoint::zero(2), &[11.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn matches_closed_form_along_orbit() {
        let spec = two_sines();
        let rot = RotationVector::default_pair();
        let th0 = TorusPoint::zero(2);
        let mut t = 0.0;
        while t <= 100.0 {
            let v = spec.eval(&advance_base(&th0, &rot, t), &[0.0]).unwrap()[0];
            let exact = t.sin() + (SQRT_2 * t).sin();
            assert!((v - exact).abs() < 1e-12, "t={t}");
            t += 0.01;
        }
    }

    #[test]
    fn bounded_on_box() {
        let mut spec = two_sines();
        spec.modes[0].coefficient.linear = Some(vec![vec![0.5]]);
        spec.sup_bound = 2.0 + 0.5 * 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let th = TorusPoint::new(vec![rng.random::<f64>() * TAU, rng.random::<f64>() * TAU]);
            let x = [rng.random_range(-10.0..10.0)];
            worst = worst.max(spec.eval(&th, &x).unwrap()[0].abs());
        }
        assert!(worst.is_finite() && worst <= spec.sup_bound);
    }

    #[test]
    fn almost_period_of_sine() {
        let n = 1000;
        let dt = TAU / n as f64;
        let horizon = 20.0;
        let samples: Vec<f64> = (0..=(horizon / dt) as usize).map(|i| (i as f64 * dt).sin()).collect();
        let tau = find_almost_period_scalar(&samples, dt, 1e-6, horizon).unwrap();
        assert!((tau - TAU).abs() < dt);
    }

    #[test]
    fn constant_signal_accepts_first_step() {
        let dt = 0.1;
        let samples = vec![3.0; 101];
        assert_eq!(find_almost_period_scalar(&samples, dt, 1e-9, 10.0), Some(dt));
    }

    #[test]
    fn short_horizon_gives_none() {
        let dt = 0.01;
        let samples: Vec<f64> = (0..=300).map(|i| (i as f64 * dt).sin()).collect();
        assert_eq!(find_almost_period_scalar(&samples, dt, 1e-3, 3.0), None);
    }

    fn quasi(t: f64) -> f64 {
        t.sin() + (SQRT_2 * t).sin()
    }

    #[test]
    fn quasi_periodic_almost_period_against_brute_force() {
        let dt = 0.01;
        let horizon = 200.0;
        let n = (horizon / dt) as usize;
        let samples: Vec<f64> = (0..=n).map(|i| quasi(i as f64 * dt)).collect();
        let tau = find_almost_period_scalar(&samples, dt, 0.1, horizon).unwrap();
        // independent oracle: direct evaluation on the same grid
        let j = (tau / dt).round() as usize;
        let disc = (0..=n - j)
            .map(|i| (quasi((i + j) as f64 * dt) - quasi(i as f64 * dt)).abs())
            .fold(0.0, f64::max);
        assert!(disc < 0.1);
        // no smaller lag works
        for jj in 1..j {
            let d = (0..=n - jj)
                .map(|i| (quasi((i + jj) as f64 * dt) - quasi(i as f64 * dt)).abs())
                .fold(0.0, f64::max);
            assert!(d >= 0.1);
        }
        // refinement: a 10x finer grid keeps the discrepancy below 2 eps
        let fine = dt / 10.0;
        let disc_fine = (0..=((horizon - tau) / fine) as usize)
            .map(|i| {
                let t = i as f64 * fine;
                (quasi(t + tau) - quasi(t)).abs()
            })
            .fold(0.0, f64::max);
        assert!(disc_fine < 0.2, "fine discrepancy {disc_fine}");
    }

    #[test]
    fn torus_point_serde_roundtrip() {
        let th = TorusPoint::new(vec![1.0, 7.0]);
        let s = serde_json::to_string(&th).unwrap();
        let back: TorusPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(th, back);
        let r: std::result::Result<RotationVector, _> = serde_json::from_str("[1.0, 2.0]");
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn flow_property(a in 0.0..TAU, b in 0.0..TAU, s in -50.0..50.0f64, t in -50.0..50.0f64) {
            let rot = RotationVector::default_pair();
            let th = TorusPoint::new(vec![a, b]);
            let lhs = advance_base(&advance_base(&th, &rot, s), &rot, t);
            let rhs = advance_base(&th, &rot, s + t);
            prop_assert!(lhs.distance(&rhs) < 1e-12);
            prop_assert!(lhs.angles().iter().all(|&x| (0.0..TAU).contains(&x)));
        }
    }
}
