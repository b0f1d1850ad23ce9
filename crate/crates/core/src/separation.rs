//! Exponential separation along sampled orbits and the perturbed nested cones
//! built from it.
//!
//! Splittings come from unit-time step matrices `T(1, z . j)`: forward QR
//! iteration gives the dominant bundles `V^i`, the transposed steps run
//! backward give `L^i`, and `P^i` projects onto `V^i` along `Anih(L^i)`.
//! Every quantifier over cones or spheres is discharged on samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{propagate_path, CocyclePoint};
use crate::cones::{cone_membership_vec, Location};
use crate::error::{Error, Result};
use crate::linalg::{min_singular_value, orthogonal_complement, orthonormalize, qr_with_diag, random_unit_vector, spectral_norm, subspace_angle};
use crate::system::{ForcedSystem, LinearSystem};

/// Times in `[1/2, 1]` at which `T(t, z)` is sampled for `zeta` and the contraction checks.
pub const SUB_TIMES: [f64; 5] = [0.5, 0.625, 0.75, 0.875, 1.0];

/// Smallest resolvable spectral gap.
pub const MIN_GAP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingPlan {
    /// Minimum burn-in (forward and backward); raised to `20 / gamma_est`.
    pub horizon: f64,
    /// Fibers kept after the burn-in.
    pub window: usize,
    pub restarts: usize,
    pub restart_angle_tol: f64,
    /// Highest index whose gap must be resolved (`None`: all `i < n`).
    pub max_index: Option<usize>,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SplittingPlan {
    fn default() -> Self {
        Self {
            horizon: 20.0,
            window: 20,
            restarts: 3,
            restart_angle_tol: 1e-6,
            max_index: None,
            tol: 1e-11,
            seed: 0,
        }
    }
}

/// Splitting data at one fiber; index `i` of `p`/`q` runs over `0..=n`
/// (`P^0 = 0`, `P^n = I`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splitting {
    pub z: CocyclePoint,
    /// `n x n`, first `i` columns span `V^i`.
    pub v_frame: DMatrix<f64>,
    /// `n x n`, first `i` columns span `L^i`.
    pub l_frame: DMatrix<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
}

impl Splitting {
    fn build(z: CocyclePoint, v_frame: DMatrix<f64>, l_frame: DMatrix<f64>) -> Result<Self> {
        let n = v_frame.nrows();
        let mut p = Vec::with_capacity(n + 1);
        p.push(DMatrix::zeros(n, n));
        for i in 1..n {
            let v = v_frame.columns(0, i).into_owned();
            let l = l_frame.columns(0, i).into_owned();
            let g = l.transpose() * &v;
            let gi = g
                .try_inverse()
                .ok_or_else(|| Error::DegenerateSplitting(format!("V^{i} meets Anih(L^{i})")))?;
            p.push(&v * gi * l.transpose());
        }
        p.push(DMatrix::identity(n, n));
        let q = p.iter().map(|pi| DMatrix::identity(n, n) - pi).collect();
        Ok(Self { z, v_frame, l_frame, p, q })
    }

    pub fn dim(&self) -> usize {
        self.v_frame.nrows()
    }

    pub fn v_basis(&self, i: usize) -> DMatrix<f64> {
        self.v_frame.columns(0, i).into_owned()
    }

    pub fn l_basis(&self, i: usize) -> DMatrix<f64> {
        self.l_frame.columns(0, i).into_owned()
    }

    /// Orthonormal basis of `Anih(L^i)`.
    pub fn anih_basis(&self, i: usize) -> DMatrix<f64> {
        let n = self.dim();
        if i == 0 {
            return DMatrix::identity(n, n);
        }
        orthogonal_complement(&self.l_basis(i))
    }

    pub fn idempotency_error(&self) -> f64 {
        self.p.iter().map(|p| (p * p - p).amax()).fold(0.0, f64::max)
    }
}

/// Splittings along a window of an orbit pair plus the step matrices between
/// consecutive fibers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingTrack {
    pub exponents: Vec<f64>,
    /// `gamma_i = lambda_i - lambda_{i+1}`, `i = 1..n-1`.
    pub gammas: Vec<f64>,
    /// Fitted separation constants `M_i`.
    pub m_consts: Vec<f64>,
    pub burn_in: usize,
    pub restart_angle: f64,
    pub fibers: Vec<Splitting>,
    /// `steps[j] = T(1, fibers[j].z)`.
    pub steps: Vec<DMatrix<f64>>,
    /// `sub_steps[j][k] = T(SUB_TIMES[k], fibers[j].z)`.
    pub sub_steps: Vec<Vec<DMatrix<f64>>>,
}

impl SplittingTrack {
    pub fn base(&self) -> &Splitting {
        &self.fibers[0]
    }

    pub fn dim(&self) -> usize {
        self.base().dim()
    }

    pub fn window(&self) -> usize {
        self.steps.len()
    }

    /// `T(t, fibers[j].z)` for integer `t`.
    pub fn transfer(&self, j: usize, t: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::identity(n, n);
        for s in &self.steps[j..j + t] {
            m = s * m;
        }
        m
    }
}

fn unit_steps<S: ForcedSystem + ?Sized>(
    sys: &S,
    z0: &CocyclePoint,
    count: usize,
    tol: f64,
) -> Result<(Vec<CocyclePoint>, Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>)> {
    let n = sys.dim();
    let mut grid = vec![0.0];
    grid.extend_from_slice(&SUB_TIMES);
    let mut points = vec![z0.clone()];
    let mut steps = Vec::with_capacity(count);
    let mut subs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut path = propagate_path(sys, points.last().unwrap(), &DMatrix::identity(n, n), &grid, tol)?;
        let next = path.points.pop().unwrap();
        steps.push(path.columns.last().unwrap().clone());
        subs.push(path.columns.split_off(1));
        points.push(next);
    }
    Ok((points, steps, subs))
}

fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    orthonormalize(&DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)))
}

struct QrRun {
    forward: Vec<DMatrix<f64>>,
    backward: Vec<DMatrix<f64>>,
    log_diag: Vec<Vec<f64>>,
}

/// Forward frames at fibers `burn..=burn+window`, backward frames at the same
/// fibers, and `ln |R_ii|` for the window steps.
fn qr_run(steps: &[DMatrix<f64>], burn: usize, window: usize, rng: &mut ChaCha8Rng) -> QrRun {
    let n = steps[0].nrows();
    let mut q = random_orthonormal(rng, n);
    let mut forward = Vec::with_capacity(window + 1);
    let mut log_diag = Vec::with_capacity(window);
    for (j, s) in steps.iter().enumerate().take(burn + window) {
        if j >= burn {
            forward.push(q.clone());
        }
        let (qn, d) = qr_with_diag(&(s * &q));
        if j >= burn {
            log_diag.push(d.iter().map(|x| x.ln()).collect());
        }
        q = qn;
    }
    forward.push(q);
    let mut w = random_orthonormal(rng, n);
    let mut backward = vec![DMatrix::zeros(n, n); window + 1];
    for j in (burn..steps.len()).rev() {
        let (wn, _) = qr_with_diag(&(steps[j].transpose() * &w));
        w = wn;
        if j <= burn + window {
            backward[j - burn] = w.clone();
        }
    }
    // fiber burn + window is reached after processing step burn + window
    QrRun { forward, backward, log_diag }
}

fn exponents_from(log_diag: &[Vec<f64>]) -> Vec<f64> {
    let n = log_diag[0].len();
    (0..n)
        .map(|i| log_diag.iter().map(|d| d[i]).sum::<f64>() / log_diag.len() as f64)
        .collect()
}

fn gaps(exponents: &[f64]) -> Vec<f64> {
    exponents.windows(2).map(|w| w[0] - w[1]).collect()
}

/// Splittings on `window + 1` fibers after a forward burn-in from `z0`.
pub fn compute_splitting<S: ForcedSystem + ?Sized>(sys: &S, z0: &CocyclePoint, plan: &SplittingPlan) -> Result<SplittingTrack> {
    let n = sys.dim();
    let window = plan.window.max(1);
    let max_index = plan.max_index.unwrap_or(n.saturating_sub(1)).min(n.saturating_sub(1));
    let mut burn = plan.horizon.ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    for attempt in 0..3 {
        let total = 2 * burn + window;
        let (points, steps, subs) = unit_steps(sys, z0, total, plan.tol)?;
        let runs: Vec<QrRun> = (0..plan.restarts.max(1)).map(|_| qr_run(&steps, burn, window, &mut rng)).collect();
        let exponents = exponents_from(&runs[0].log_diag);
        let g = gaps(&exponents);
        let gamma_est = g.iter().take(max_index).copied().fold(f64::INFINITY, f64::min);
        if gamma_est < MIN_GAP {
            return Err(Error::DegenerateSplitting(format!(
                "spectral gap {gamma_est:.3e} below resolution {MIN_GAP:e}"
            )));
        }
        let needed = (20.0 / gamma_est).ceil() as usize;
        if needed > burn && attempt < 2 {
            burn = needed;
            continue;
        }
        // restarts must agree on every resolved bundle at the base fiber
        let mut restart_angle: f64 = 0.0;
        for a in 0..runs.len() {
            for b in a + 1..runs.len() {
                for i in 1..=max_index {
                    let fa = runs[a].forward[0].columns(0, i).into_owned();
                    let fb = runs[b].forward[0].columns(0, i).into_owned();
                    let la = runs[a].backward[0].columns(0, i).into_owned();
                    let lb = runs[b].backward[0].columns(0, i).into_owned();
                    restart_angle = restart_angle.max(subspace_angle(&fa, &fb)).max(subspace_angle(&la, &lb));
                }
            }
        }
        if restart_angle > plan.restart_angle_tol {
            return Err(Error::DegenerateSplitting(format!(
                "restarts disagree by {restart_angle:.3e} rad"
            )));
        }
        let run = &runs[0];
        let mut fibers = Vec::with_capacity(window + 1);
        for k in 0..=window {
            fibers.push(Splitting::build(points[burn + k].clone(), run.forward[k].clone(), run.backward[k].clone())?);
        }
        let win_steps: Vec<DMatrix<f64>> = steps[burn..burn + window].to_vec();
        let win_subs: Vec<Vec<DMatrix<f64>>> = subs[burn..burn + window].to_vec();
        let m_consts = fit_separation_constants(&fibers, &win_steps, &g);
        return Ok(SplittingTrack {
            exponents,
            gammas: g,
            m_consts,
            burn_in: burn,
            restart_angle,
            fibers,
            steps: win_steps,
            sub_steps: win_subs,
        });
    }
    unreachable!("loop returns on the final attempt")
}

/// Products of the step maps restricted to `Anih(L^i)` and `V^i` in the fiber
/// frames, with their log scales, for `t = 1..=horizon`.
struct Restricted {
    w: DMatrix<f64>,
    w_log: f64,
    v: DMatrix<f64>,
    v_log: f64,
}

fn restricted_products(fibers: &[Splitting], steps: &[DMatrix<f64>], i: usize, horizon: usize) -> Vec<Restricted> {
    let k = fibers[0].dim() - i;
    let mut out = Vec::with_capacity(horizon);
    let (mut w, mut v) = (DMatrix::identity(k, k), DMatrix::identity(i, i));
    let (mut w_log, mut v_log) = (0.0, 0.0);
    for (j, s) in steps.iter().enumerate().take(horizon) {
        let a = fibers[j + 1].anih_basis(i).transpose() * s * fibers[j].anih_basis(i);
        let b = fibers[j + 1].v_basis(i).transpose() * s * fibers[j].v_basis(i);
        w = a * w;
        v = b * v;
        let (sw, sv) = (w.amax(), v.amax());
        w /= sw;
        v /= sv;
        w_log += sw.ln();
        v_log += sv.ln();
        out.push(Restricted { w: w.clone(), w_log, v: v.clone(), v_log });
    }
    out
}

/// `M_i = sup_t sup ||T w|| / ||T v|| e^{gamma_i t}` over unit `w` in `Anih(L^i)`
/// and unit `v` in `V^i`, `t = 1..window`.
fn fit_separation_constants(fibers: &[Splitting], steps: &[DMatrix<f64>], gammas: &[f64]) -> Vec<f64> {
    let n = fibers[0].dim();
    (1..n)
        .map(|i| {
            restricted_products(fibers, steps, i, steps.len())
                .iter()
                .enumerate()
                .map(|(t, r)| {
                    let log_ratio = spectral_norm(&r.w).ln() + r.w_log - min_singular_value(&r.v).ln() - r.v_log;
                    (log_ratio + gammas[i - 1] * (t + 1) as f64).exp()
                })
                .filter(|x| x.is_finite())
                .fold(1.0, f64::max)
        })
        .collect()
}

/// Worst log-margin of `||T w|| <= M e^{-gamma t} ||T v||` on sampled unit pairs.
pub fn separation_inequality_margin(track: &SplittingTrack, i: usize, samples: usize, seed: u64) -> f64 {
    let n = track.dim();
    let (m, g) = (track.m_consts[i - 1], track.gammas[i - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..samples)
        .map(|_| (random_unit_vector(&mut rng, i), random_unit_vector(&mut rng, n - i)))
        .collect();
    let mut worst = f64::INFINITY;
    for (t, r) in restricted_products(&track.fibers, &track.steps, i, track.window()).iter().enumerate() {
        for (v, w) in &pairs {
            let lhs = (&r.w * w).norm().ln() + r.w_log;
            let rhs = m.ln() - g * (t + 1) as f64 + (&r.v * v).norm().ln() + r.v_log;
            worst = worst.min(rhs - lhs);
        }
    }
    worst
}

/// Largest angle between `T(t) V^i(z)` and `V^i(z . t)`, and between
/// `T(t) Anih(L^i)(z)` and `Anih(L^i)(z . t)`, for `t = 1..=max_t`.
/// The second is measured as `T(t)^T L^i(z . t)` against `L^i(z)`, which is
/// the same statement without pushing a contracting bundle forward.
pub fn bundle_invariance_angle(track: &SplittingTrack, i: usize, max_t: usize) -> f64 {
    let base = track.base();
    let mut worst: f64 = 0.0;
    for t in 1..=max_t.min(track.window()) {
        let m = track.transfer(0, t);
        let f = &track.fibers[t];
        worst = worst.max(subspace_angle(&orthonormalize(&(&m * base.v_basis(i))), &f.v_basis(i)));
        if i < track.dim() {
            worst = worst.max(subspace_angle(&orthonormalize(&(m.transpose() * f.l_basis(i))), &base.l_basis(i)));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum N0Rule {
    /// `N0 = n`.
    Full,
    /// Smallest `i0` with `lambda_1^t` decay on `Anih(L^{i0})`, as for truncations.
    Truncation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsPlan {
    pub delta: f64,
    #[serde(default)]
    pub lambda1: Option<f64>,
    pub n0_rule: N0Rule,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub delta1: Option<f64>,
}

impl ConstantsPlan {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            lambda1: None,
            n0_rule: N0Rule::Truncation,
            delta0: None,
            delta1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub n0: usize,
    pub delta: f64,
    pub delta0: Option<f64>,
    pub delta1: Option<f64>,
    pub lambda0: f64,
    pub lambda1: f64,
    pub zeta: f64,
    pub r: f64,
    pub c: f64,
    pub c_p: f64,
    pub c_q: f64,
    pub m: f64,
    pub gamma: f64,
    pub t1: f64,
    pub t0: f64,
    /// Root of the `T0` inequality before the `T0 > T1 + 1` floor.
    pub t0_root: f64,
    /// `ln(c M (8r)^{N0} / delta) / gamma`.
    pub t1_closed_form: f64,
    /// `|c M e^{-gamma T1} - (8r)^{-N0} delta| / ((8r)^{-N0} delta)`.
    pub t1_slack: f64,
    /// Relative slack of the `T0` inequality at `t0_root`.
    pub t0_slack: f64,
}

impl ConeParams {
    /// `(8r)^{-N0} delta`.
    pub fn transport_threshold(&self) -> f64 {
        (8.0 * self.r).powi(-(self.n0 as i32)) * self.delta
    }

    /// Opening of the nested cone `C_i = C_i((2r)^{i - N0} delta)`.
    pub fn nested_opening(&self, i: usize) -> f64 {
        (2.0 * self.r).powi(i as i32 - self.n0 as i32) * self.delta
    }

    /// `(4r)^{-N0} delta`.
    pub fn invariance_opening(&self) -> f64 {
        (4.0 * self.r).powi(-(self.n0 as i32)) * self.delta
    }
}

/// `lambda_0 = 2 delta + (delta zeta + sqrt(lambda_1)) / (1 - delta)`.
pub fn lambda0(delta: f64, zeta: f64, lambda1: f64) -> f64 {
    2.0 * delta + (delta * zeta + lambda1.sqrt()) / (1.0 - delta)
}

/// Smallest `t >= 0` with `g(t) <= 0` for a nonincreasing `g`.
fn bisect_first(g: impl Fn(f64) -> f64) -> f64 {
    if g(0.0) <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn sub_norm_sup(tracks: &[SplittingTrack]) -> f64 {
    tracks
        .iter()
        .flat_map(|t| t.sub_steps.iter().flatten())
        .map(spectral_norm)
        .fold(0.0, f64::max)
}

fn decays_on_anih(tracks: &[SplittingTrack], i0: usize, lambda1: f64) -> bool {
    let n = tracks[0].dim();
    if i0 >= n {
        return true;
    }
    tracks.iter().all(|tr| {
        let fibers = tr.window().min(4);
        (0..fibers).all(|j| {
            let b = tr.fibers[j].anih_basis(i0);
            let sub_ok = tr.sub_steps[j]
                .iter()
                .zip(SUB_TIMES)
                .all(|(m, t)| spectral_norm(&(m * &b)) <= lambda1.powf(t) * (1.0 + 1e-9));
            let long_ok = (2..=6usize)
                .filter(|t| j + t <= tr.window())
                .all(|t| spectral_norm(&(tr.transfer(j, t) * &b)) <= lambda1.powi(t as i32) * (1.0 + 1e-9));
            sub_ok && long_ok
        })
    })
}

/// Constants of the nested-cone construction from splittings over sampled fibers.
pub fn compute_constants(tracks: &[SplittingTrack], plan: &ConstantsPlan) -> Result<ConeParams> {
    if tracks.is_empty() {
        return Err(Error::Precondition("at least one splitting track required".into()));
    }
    let n = tracks[0].dim();
    let delta = plan.delta;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InfeasibleParameters(format!("delta = {delta} must lie in (0, 1)")));
    }
    let lambda1 = match plan.lambda1 {
        Some(l) => l,
        None => {
            let mut ex = vec![0.0; n];
            for t in tracks {
                for (a, b) in ex.iter_mut().zip(&t.exponents) {
                    *a += b / tracks.len() as f64;
                }
            }
            let k = ex.len();
            let mean = if k >= 2 { 0.5 * (ex[k - 1] + ex[k - 2]) } else { ex[0] };
            mean.exp()
        }
    };
    if !(lambda1 > 0.0 && lambda1 < 1.0) {
        return Err(Error::InfeasibleParameters(format!("lambda_1 = {lambda1} must lie in (0, 1)")));
    }
    let zeta = sub_norm_sup(tracks).max(1.0);
    let n0 = match plan.n0_rule {
        N0Rule::Full => n,
        N0Rule::Truncation => (1..=n).find(|&i| decays_on_anih(tracks, i, lambda1)).unwrap_or(n),
    };
    let mut c_p: f64 = 0.0;
    let mut c_q: f64 = 0.0;
    for t in tracks {
        for f in &t.fibers {
            for i in 1..=n0 {
                c_p = c_p.max(spectral_norm(&f.p[i]));
                c_q = c_q.max(spectral_norm(&f.q[i]));
            }
        }
    }
    let r = (c_p * c_q).max(1.0);
    let c = 1.0 / delta;
    let l0 = lambda0(delta, zeta, lambda1);
    if l0 >= 1.0 {
        return Err(Error::InfeasibleParameters(format!("lambda_0 = {l0} >= 1")));
    }
    if let (Some(d0), Some(d1)) = (plan.delta0, plan.delta1) {
        let cap = d0.min(d1 / (2.0 + d1));
        if delta >= cap {
            return Err(Error::InfeasibleParameters(format!("delta = {delta} must be below min(delta0, delta1/(2+delta1)) = {cap}")));
        }
    }
    let mut m: f64 = 1.0;
    let mut gamma = f64::INFINITY;
    for t in tracks {
        for i in 1..=n0.min(n - 1) {
            m = m.max(t.m_consts[i - 1]);
            gamma = gamma.min(t.gammas[i - 1]);
        }
    }
    let thr = (8.0 * r).powi(-(n0 as i32)) * delta;
    let (t1, t1_closed_form, t1_slack) = if gamma.is_finite() {
        let g = |t: f64| (c * m).ln() - gamma * t - thr.ln();
        let t1 = bisect_first(g);
        let closed = ((c * m / thr).ln() / gamma).max(0.0);
        let slack = if t1 > 0.0 { ((c * m * (-gamma * t1).exp()) - thr).abs() / thr } else { 0.0 };
        (t1, closed, slack)
    } else {
        (0.0, 0.0, 0.0)
    };
    let a = (l0 - delta).ln();
    let h = |t: f64| (t - t1) * a + t1 * (delta + zeta).ln() - t * l0.ln();
    let t0_root = bisect_first(h);
    let t0_slack = if t0_root > 0.0 { h(t0_root).abs() / (t0_root * l0.ln().abs()).max(1.0) } else { 0.0 };
    let t0 = t0_root.max(t1 + 1.0 + 1e-9);
    Ok(ConeParams {
        n0,
        delta,
        delta0: plan.delta0,
        delta1: plan.delta1,
        lambda0: l0,
        lambda1,
        zeta,
        r,
        c,
        c_p,
        c_q,
        m,
        gamma,
        t1,
        t0,
        t0_root,
        t1_closed_form,
        t1_slack,
        t0_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    C,
    D,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeTest {
    pub member: bool,
    /// Right-hand side minus left-hand side of the defining inequality.
    pub margin: f64,
}

fn nrm(m: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    (m * u).norm()
}

/// Membership in `C_z^i(s)`, `D_z^i(s)` or `W_z^i(s)`.
pub fn cone_c_d_w_membership(u: &[f64], split: &Splitting, i: usize, s: f64, kind: ConeKind) -> ConeTest {
    let u = DVector::from_column_slice(u);
    let margin = match kind {
        ConeKind::C => s * nrm(&split.p[i], &u) - nrm(&split.q[i], &u),
        ConeKind::D => s * nrm(&split.q[i], &u) - nrm(&split.p[i], &u),
        ConeKind::W => {
            let lhs = (&split.q[i] * &u + &split.p[i - 1] * &u).norm();
            let rhs = (&split.q[i - 1] * (&split.p[i] * &u)).norm();
            s * rhs - lhs
        }
    };
    ConeTest { member: margin >= 0.0, margin }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSearchPlan {
    /// Candidate openings in `(0, 1)`, ascending.
    pub grid: Vec<f64>,
    pub samples: usize,
    pub polish_starts: usize,
    pub seed: u64,
}

impl Default for DeltaSearchPlan {
    fn default() -> Self {
        Self {
            grid: (1..20).map(|k| k as f64 / 20.0).collect(),
            samples: 10_000,
            polish_starts: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSearchResult {
    pub delta0: f64,
    pub delta1: f64,
    /// Unit vectors sampled per objective (before polishing).
    pub samples: usize,
    /// The verdict holds on the sampled set only.
    pub certified_on_samples: bool,
}

/// Minimizes `f` over the unit sphere of `span(basis)` by sampling and a
/// compass search from the worst samples.
fn sphere_minimum(basis: &DMatrix<f64>, f: &(dyn Fn(&DVector<f64>) -> f64 + Sync), samples: usize, starts: usize, rng: &mut ChaCha8Rng) -> f64 {
    let k = basis.ncols();
    let coords: Vec<DVector<f64>> = (0..samples).map(|_| random_unit_vector(rng, k)).collect();
    let mut vals: Vec<(f64, usize)> = coords.par_iter().map(|c| f(&(basis * c))).zip(0..coords.len()).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = vals.first().map_or(f64::INFINITY, |v| v.0);
    for &(v0, idx) in vals.iter().take(starts) {
        let mut c = coords[idx].clone();
        let mut val = v0;
        let mut h = 0.1;
        while h > 1e-9 {
            let mut improved = false;
            for d in 0..k {
                for sgn in [1.0, -1.0] {
                    let mut trial = c.clone();
                    trial[d] += sgn * h;
                    let nt = trial.norm();
                    if nt == 0.0 {
                        continue;
                    }
                    trial /= nt;
                    let tv = f(&(basis * &trial));
                    if tv < val {
                        val = tv;
                        c = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        best = best.min(val);
    }
    best
}

fn largest_passing(grid: &[f64], pass: impl Fn(f64) -> bool) -> Option<f64> {
    let mut last = None;
    for &s in grid {
        if pass(s) {
            last = Some(s);
        } else {
            return last;
        }
    }
    // every sampled opening below 1 passes: the cap 1 is attained in the limit
    last.map(|_| 1.0)
}

/// `delta0` (trivial intersection of `C_i(s)` and `D_i(s)`) and `delta1`
/// (trivial intersection of the first-coordinate hyperplane with `W_i(s)`)
/// on the grid, for `i = 1..=n0`.
pub fn find_delta0_delta1(splittings: &[&Splitting], n0: usize, gauge: &[f64], plan: &DeltaSearchPlan) -> Result<DeltaSearchResult> {
    if splittings.is_empty() {
        return Err(Error::Precondition("at least one base sample required".into()));
    }
    let n = splittings[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let full = DMatrix::<f64>::identity(n, n);
    let indices: Vec<usize> = (1..=n0.min(n - 1)).collect();
    let pass0 = |s: f64, rng: &mut ChaCha8Rng| -> bool {
        for a in splittings {
            for b in splittings {
                for &i in &indices {
                    let f = |u: &DVector<f64>| -> f64 {
                        let cdef = nrm(&a.q[i], u) - s * nrm(&a.p[i], u);
                        let ddef = nrm(&b.p[i], u) - s * nrm(&b.q[i], u);
                        cdef.max(ddef)
                    };
                    if sphere_minimum(&full, &f, plan.samples, plan.polish_starts, rng) <= 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    };
    // hyperplane {x_1 = 0} in the gauged coordinates
    let mut h_basis = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        h_basis[(k, k - 1)] = gauge[k];
    }
    let pass1 = |s: f64, rng: &mut ChaCha8Rng| -> bool {
        for a in splittings {
            for &i in &indices {
                let f = |u: &DVector<f64>| -> f64 {
                    let lhs = (&a.q[i] * u + &a.p[i - 1] * u).norm();
                    let rhs = (&a.q[i - 1] * (&a.p[i] * u)).norm();
                    lhs - s * rhs
                };
                if sphere_minimum(&h_basis, &f, plan.samples, plan.polish_starts, rng) <= 0.0 {
                    return false;
                }
            }
        }
        true
    };
    let mut rng0 = ChaCha8Rng::seed_from_u64(rng.random());
    let delta0 = largest_passing(&plan.grid, |s| pass0(s, &mut rng0.clone()))
        .ok_or_else(|| Error::DegenerateGeometry("C_i(s) and D_i(s) meet for every grid opening".into()))?;
    let mut rng1 = ChaCha8Rng::seed_from_u64(rng.random());
    let delta1 = largest_passing(&plan.grid, |s| pass1(s, &mut rng1.clone()))
        .ok_or_else(|| Error::DegenerateGeometry("the hyperplane meets W_i(s) for every grid opening".into()))?;
    let _ = (&mut rng0, &mut rng1);
    Ok(DeltaSearchResult {
        delta0,
        delta1,
        samples: plan.samples,
        certified_on_samples: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub worst_margin: f64,
    pub violations: usize,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            worst_margin: f64::INFINITY,
            violations: 0,
        }
    }

    fn record(&mut self, margin: f64) {
        self.trials += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if margin < 0.0 {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `u = v + w` with `v` in `V^i`, `w` in `Anih(L^i)` and `||w|| <= max_ratio ||v||`.
fn split_sample(rng: &mut ChaCha8Rng, split: &Splitting, i: usize, max_ratio: f64) -> DVector<f64> {
    let n = split.dim();
    let vb = split.v_basis(i);
    let v = &vb * random_unit_vector(rng, i);
    if i == n {
        return v;
    }
    let wb = split.anih_basis(i);
    let w = &wb * random_unit_vector(rng, n - i);
    v + w * (max_ratio * rng.random::<f64>())
}

/// Gauged samples of `V^i` must be interior to the sign-change cone `C_i` and
/// samples of `Anih(L^i)` outside it, `i < n`.
pub fn splitting_cone_check(split: &Splitting, gauge: &[f64], samples: usize, sign_tol: f64, seed: u64) -> CheckResult {
    let n = split.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = CheckResult::new("splitting_cones");
    let gauged = |u: DVector<f64>| -> Vec<f64> { u.iter().zip(gauge).map(|(a, g)| a * g).collect() };
    for i in 1..n {
        let (vb, wb) = (split.v_basis(i), split.anih_basis(i));
        for _ in 0..samples {
            let v = gauged(&vb * random_unit_vector(&mut rng, i));
            let m = cone_membership_vec(&v, i, sign_tol);
            res.record(if m.location == Location::Interior { m.margin } else { -1.0 });
            let w = gauged(&wb * random_unit_vector(&mut rng, n - i));
            let m = cone_membership_vec(&w, i, sign_tol);
            res.record(if m.location == Location::Outside { m.margin } else { -1.0 });
        }
    }
    res
}

/// Transport of `C_z^i(c)` into `C_{z.t}^i((8r)^{-N0} delta)` for
/// `t = ceil(T1) .. ceil(T1) + extra`.
pub fn transport_check(track: &SplittingTrack, params: &ConeParams, vectors: usize, extra: usize, seed: u64) -> Result<CheckResult> {
    let n = track.dim();
    let t_start = params.t1.ceil().max(1.0) as usize;
    if t_start + extra > track.window() {
        return Err(Error::Precondition(format!(
            "window {} shorter than T1 + {extra} = {}",
            track.window(),
            t_start + extra
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thr = params.transport_threshold();
    let mut res = CheckResult::new("transport");
    let base = track.base();
    for i in 1..=params.n0.min(n - 1) {
        for _ in 0..vectors {
            let u = split_sample(&mut rng, base, i, params.c);
            for t in t_start..=t_start + extra {
                let ut = track.transfer(0, t) * &u;
                let f = &track.fibers[t];
                let margin = (thr * nrm(&f.p[i], &ut) - nrm(&f.q[i], &ut)) / ut.norm();
                res.record(margin);
            }
        }
    }
    Ok(res)
}

/// `rho_0` of the cone-opening neighbourhood bound.
pub fn opening_radius(s1: f64, s2: f64, c_p: f64, c_q: f64) -> f64 {
    ((s2 - s1) / (2.0 * (c_q + c_p * s1) * (1.0 + s1))).min(1.0 / (2.0 * c_p * (1.0 + s1)))
}

/// Worst margin of `B(u, rho_0) cap S` inside `C_z^i(s2)` for unit `u` in `C_z^i(s1)`.
pub fn opening_check(split: &Splitting, i: usize, s1: f64, s2: f64, c_p: f64, c_q: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = opening_radius(s1, s2, c_p, c_q);
    let n = split.dim();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let u = split_sample(&mut rng, split, i, s1 * 0.999);
        let u = &u / u.norm();
        let d = random_unit_vector(&mut rng, n) * (rho * rng.random::<f64>());
        let u2 = &u + d;
        let u2 = &u2 / u2.norm();
        worst = worst.min(cone_c_d_w_membership(u2.as_slice(), split, i, s2, ConeKind::C).margin);
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub eps: f64,
    pub seed: u64,
    /// Largest `||T~(1) - T(1)||` over the window steps.
    pub perturbation_norm: f64,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuitePlan {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SuitePlan {
    fn default() -> Self {
        Self { samples: 24, seed: 0 }
    }
}

fn perturbed_steps(track: &SplittingTrack, eps: f64, seed: u64) -> (Vec<DMatrix<f64>>, f64) {
    let n = track.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let steps = track
        .steps
        .iter()
        .map(|s| {
            let e = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = &e / spectral_norm(&e);
            let p = s + e * eps;
            worst = worst.max(spectral_norm(&(&p - s)));
            p
        })
        .collect();
    (steps, worst)
}

/// Runs the nested-chain, invariance, contraction, decay and inclusion checks
/// with `T~(1, z . j) = T(1, z . j) + eps E_j`, `||E_j|| = 1`.
pub fn perturbed_cone_suite(params: &ConeParams, track: &SplittingTrack, eps: f64, plan: &SuitePlan) -> Result<SuiteReport> {
    let n = track.dim();
    let n0 = params.n0;
    let horizon = (2.0 * params.t0).floor() as usize;
    if horizon > track.window() {
        return Err(Error::Precondition(format!("window {} shorter than 2 T0 = {horizon}", track.window())));
    }
    let (steps, pert_norm) = perturbed_steps(track, eps, plan.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9_7f4a_7c15);
    let base = track.base();
    let delta = params.delta;

    // (a) nested chain on the base fiber
    let mut nested = CheckResult::new("nested");
    for i in 1..n0 {
        let si = params.nested_opening(i);
        let sj = params.nested_opening(i + 1);
        for _ in 0..plan.samples {
            let u = split_sample(&mut rng, base, i, si);
            let m = cone_c_d_w_membership(u.as_slice(), base, i + 1, sj, ConeKind::C).margin / u.norm();
            nested.record(if m > 0.0 { m } else { -1.0 });
        }
    }

    // (b) invariance of C_z^i(c) into C^i((4r)^{-N0} delta) on [T1, 2 T0]
    let mut invariance = CheckResult::new("invariance");
    let s_in = params.invariance_opening();
    let t_first = params.t1.ceil().max(1.0) as usize;
    for i in 1..=n0.min(n - 1) {
        for _ in 0..plan.samples {
            let mut u = split_sample(&mut rng, base, i, params.c);
            for (t, s) in steps.iter().enumerate().take(horizon) {
                u = s * u;
                u /= u.norm();
                if t + 1 >= t_first {
                    let f = &track.fibers[t + 1];
                    invariance.record(cone_c_d_w_membership(u.as_slice(), f, i, s_in, ConeKind::C).margin);
                }
            }
        }
    }

    // (c) contraction of D-side vectors by lambda0 - 2 delta on t in [1/2, 1]
    let mut contraction = CheckResult::new("contraction");
    if n0 < n {
        let factor = params.lambda0 - 2.0 * delta;
        let fibers = track.window().min(8);
        for j in 0..fibers {
            let f = &track.fibers[j];
            for _ in 0..plan.samples {
                let u = d_side_sample(&mut rng, f, n0, delta);
                let nu = u.norm();
                for m in &track.sub_steps[j] {
                    contraction.record(factor * nu - (m * &u).norm());
                }
                contraction.record(factor * nu - (&steps[j] * &u).norm());
            }
        }
    }

    // (c') lambda0^t decay of vectors that stay outside C_{N0}
    let mut decay = CheckResult::new("decay");
    let mut stepwise = CheckResult::new("decay_stepwise");
    if n0 < n {
        let outer = params.nested_opening(n0);
        let l0 = params.lambda0.ln();
        let l0d = (params.lambda0 - delta).ln();
        for _ in 0..plan.samples {
            let mut u = d_side_sample(&mut rng, base, n0, delta);
            let mut log_norm = u.norm().ln();
            let log0 = log_norm;
            u /= u.norm();
            for (t, s) in steps.iter().enumerate().take(horizon) {
                let f = &track.fibers[t];
                let outside_c = nrm(&f.p[n0], &u) < delta * nrm(&f.q[n0], &u);
                let next = s * &u;
                let growth = next.norm().ln();
                if outside_c {
                    stepwise.record(l0d - growth);
                }
                log_norm += growth;
                let nn = next.norm();
                u = next / nn;
                let tt = t + 1;
                if tt as f64 >= params.t0 {
                    let g = &track.fibers[tt];
                    let outside = !cone_c_d_w_membership(u.as_slice(), g, n0, outer, ConeKind::C).member;
                    if outside {
                        decay.record(tt as f64 * l0 - (log_norm - log0));
                    }
                }
            }
        }
    }

    // (d) C cap D inclusion into W
    let mut inclusion = CheckResult::new("inclusion");
    for i in 1..=n0 {
        for s in [0.1, 0.3, 0.5] {
            let target = 2.0 * s / (1.0 - s);
            let mut accepted = 0;
            let mut tries = 0;
            while accepted < plan.samples && tries < 50 * plan.samples {
                tries += 1;
                let u = inclusion_sample(&mut rng, base, i, s);
                let uu = u.as_slice();
                let in_i = cone_c_d_w_membership(uu, base, i, s, ConeKind::C).member
                    && (i == 1 || cone_c_d_w_membership(uu, base, i - 1, s, ConeKind::D).member);
                if !in_i {
                    continue;
                }
                accepted += 1;
                let m = cone_c_d_w_membership(uu, base, i, target, ConeKind::W).margin / u.norm();
                inclusion.record(m + 1e-12);
            }
        }
    }

    Ok(SuiteReport {
        eps,
        seed: plan.seed,
        perturbation_norm: pert_norm,
        checks: vec![nested, invariance, contraction, decay, stepwise, inclusion],
    })
}

fn d_side_sample(rng: &mut ChaCha8Rng, f: &Splitting, n0: usize, delta: f64) -> DVector<f64> {
    let n = f.dim();
    let w = f.anih_basis(n0) * random_unit_vector(rng, n - n0);
    let v = f.v_basis(n0) * random_unit_vector(rng, n0);
    w + v * (delta * rng.random::<f64>())
}

fn inclusion_sample(rng: &mut ChaCha8Rng, f: &Splitting, i: usize, s: f64) -> DVector<f64> {
    let n = f.dim();
    let r = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w1 = &f.q[i] * r(rng);
    let w2 = &f.p[i] * (&f.q[i - 1] * r(rng));
    let v = &f.p[i - 1] * r(rng);
    let (a, b, c) = (w1.norm(), w2.norm(), v.norm());
    let scale = |x: f64, target: f64| if x > 0.0 { target / x } else { 0.0 };
    // sizes inside the I_s window relative to the middle component
    let ra = s * rng.random::<f64>();
    let rc = s * rng.random::<f64>();
    w1 * scale(a, ra) + &w2 * scale(b, 1.0) + v * scale(c, rc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Epsilon1Search {
    /// Largest grid value passing the suite for every search seed (0 if none).
    pub eps1: f64,
    pub grid: Vec<f64>,
    pub search: Vec<SuiteReport>,
    pub validation: Vec<SuiteReport>,
    pub stress: SuiteReport,
}

impl Epsilon1Search {
    pub fn validation_passed(&self) -> bool {
        self.eps1 > 0.0 && self.validation.iter().all(SuiteReport::passed)
    }

    pub fn stress_violations(&self) -> usize {
        self.stress.checks.iter().map(|c| c.violations).sum()
    }
}

/// Searches `eps1` over a geometric grid, then validates at `eps1/2` with
/// fresh perturbations and stresses at `100 eps1`.
pub fn search_epsilon1(params: &ConeParams, track: &SplittingTrack, grid: &[f64], seeds: usize, plan: &SuitePlan) -> Result<Epsilon1Search> {
    let mut search = Vec::new();
    let mut eps1 = 0.0;
    for &eps in grid {
        let reports: Vec<SuiteReport> = (0..seeds as u64)
            .into_par_iter()
            .map(|k| perturbed_cone_suite(params, track, eps, &SuitePlan { seed: plan.seed + k, ..plan.clone() }))
            .collect::<Result<_>>()?;
        let ok = reports.iter().all(SuiteReport::passed);
        search.extend(reports);
        if !ok {
            break;
        }
        eps1 = eps;
    }
    let validation = (0..seeds as u64)
        .into_par_iter()
        .map(|k| perturbed_cone_suite(params, track, 0.5 * eps1, &SuitePlan { seed: plan.seed + 1000 + k, ..plan.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let stress_eps = if eps1 > 0.0 { 100.0 * eps1 } else { 100.0 * grid[0] };
    let stress = perturbed_cone_suite(params, track, stress_eps, &SuitePlan { seed: plan.seed + 2000, ..plan.clone() })?;
    Ok(Epsilon1Search {
        eps1,
        grid: grid.to_vec(),
        search,
        validation,
        stress,
    })
}

/// `eps = 1e-4 * 2^k`, `k = 0..=20`.
pub fn default_epsilon_grid() -> Vec<f64> {
    (0..=20).map(|k| 1e-4 * 2f64.powi(k)).collect()
}

/// `x' = A x` with `A = tridiag(1, -1, 1)`, `n = 3`.
pub fn linear_test_system() -> LinearSystem {
    LinearSystem::tridiagonal(3, -1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::TorusPoint;
    use crate::linalg::subspace_sin_angle;
    use proptest::prelude::*;

    fn origin(sys: &LinearSystem) -> CocyclePoint {
        let n = sys.a.nrows();
        CocyclePoint::new(sys, vec![0.0; n], vec![0.0; n], TorusPoint::zero(2)).unwrap()
    }

    fn track_of(sys: &LinearSystem, window: usize) -> SplittingTrack {
        let plan = SplittingPlan { window, ..Default::default() };
        compute_splitting(sys, &origin(sys), &plan).unwrap()
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v);
        &m / m.norm()
    }

    #[test]
    fn swap_matrix_splitting() {
        let sys = LinearSystem::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let tr = track_of(&sys, 10);
        let b = tr.base();
        assert!(subspace_angle(&b.v_basis(1), &col(&[1.0, 1.0])) < 1e-6);
        assert!(subspace_angle(&b.anih_basis(1), &col(&[1.0, -1.0])) < 1e-6);
        assert!((tr.gammas[0] - 2.0).abs() < 1e-4);
        assert!(b.idempotency_error() < 1e-10);
        assert_eq!(b.p[2], DMatrix::identity(2, 2));
        assert_eq!(b.q[2], DMatrix::zeros(2, 2));
    }

    #[test]
    fn diagonal_splitting() {
        let sys = LinearSystem::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let tr = track_of(&sys, 10);
        let e12 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(subspace_angle(&tr.base().v_basis(2), &e12) < 1e-6);
        assert!((tr.gammas[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_gap_is_degenerate() {
        let sys = LinearSystem::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let r = compute_splitting(&sys, &origin(&sys), &SplittingPlan::default());
        assert!(matches!(r, Err(Error::DegenerateSplitting(_))));
    }

    #[test]
    fn separation_and_invariance_hold() {
        let sys = linear_test_system();
        let tr = track_of(&sys, 20);
        for i in 1..3 {
            assert!(separation_inequality_margin(&tr, i, 200, 1) >= -1e-9);
            assert!(bundle_invariance_angle(&tr, i, 5) <= 1e-5);
        }
    }

    #[test]
    fn splitting_bundles_sit_in_the_cones() {
        for n in [2, 3, 5] {
            let sys = LinearSystem::tridiagonal(n, -1.0, 1.0);
            let tr = track_of(&sys, 4);
            let res = splitting_cone_check(tr.base(), &vec![1.0; n], 500, 1e-10, 3);
            assert!(res.passed() && res.trials > 0, "{res:?}");
        }
    }

    #[test]
    fn lambda0_examples() {
        assert!((lambda0(0.01, 2.0, 0.25) - (0.02 + 0.52 / 0.99)).abs() < 1e-15);
        assert!((lambda0(0.01, 2.0, 0.25) - 0.54525).abs() < 1e-5);
        assert!((lambda0(1e-12, 2.0, 0.25) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn constants_on_linear_test_system() {
        let sys = linear_test_system();
        let tr = track_of(&sys, 20);
        let p = compute_constants(std::slice::from_ref(&tr), &ConstantsPlan::new(0.01)).unwrap();
        assert_eq!(p.n0, 2);
        assert!(p.lambda0 < 1.0);
        let s2 = std::f64::consts::SQRT_2;
        assert!((p.gamma - s2).abs() < 1e-4);
        // T1 bisection contract
        let g = |t: f64| p.c * p.m * (-p.gamma * t).exp();
        assert!(g(p.t1) <= p.transport_threshold() * (1.0 + 1e-12));
        assert!(g(p.t1 - 0.01) > p.transport_threshold());
        assert!((p.t1 - p.t1_closed_form).abs() < 1e-6);
        assert!(p.t1_slack <= 1e-6 && p.t0_slack <= 1e-6);
        assert!(p.t0 > p.t1 + 1.0);
        let lhs = |t: f64| (t - p.t1) * (p.lambda0 - p.delta).ln() + p.t1 * (p.delta + p.zeta).ln();
        assert!(lhs(p.t0) <= p.t0 * p.lambda0.ln() + 1e-9);
        let full = compute_constants(std::slice::from_ref(&tr), &ConstantsPlan { n0_rule: N0Rule::Full, ..ConstantsPlan::new(0.01) }).unwrap();
        assert_eq!(full.n0, 3);
    }

    #[test]
    fn infeasible_lambda0() {
        let sys = linear_test_system();
        let tr = track_of(&sys, 10);
        let r = compute_constants(std::slice::from_ref(&tr), &ConstantsPlan { lambda1: Some(0.99), ..ConstantsPlan::new(0.2) });
        assert!(matches!(r, Err(Error::InfeasibleParameters(_))));
    }

    #[test]
    fn transport_passes() {
        let sys = linear_test_system();
        let tr = track_of(&sys, 20);
        let p = compute_constants(std::slice::from_ref(&tr), &ConstantsPlan::new(0.01)).unwrap();
        let res = transport_check(&tr, &p, 200, 3, 4).unwrap();
        assert!(res.passed(), "{res:?}");
    }

    #[test]
    fn membership_examples() {
        let sys = LinearSystem::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = track_of(&sys, 4).base().clone();
        let v = b.v_basis(1);
        let w = b.anih_basis(1);
        assert!(cone_c_d_w_membership(v.as_slice(), &b, 1, 1e-6, ConeKind::C).member);
        let d = cone_c_d_w_membership(w.as_slice(), &b, 1, 0.5, ConeKind::D);
        assert!(d.member && (d.margin - 0.5).abs() < 1e-9);
        let u: Vec<f64> = (0..2).map(|k| v[k] + 0.3 * w[k]).collect();
        assert!(!cone_c_d_w_membership(&u, &b, 1, 0.25, ConeKind::C).member);
    }

    fn rotated(angle: f64) -> Splitting {
        let (c, s) = (angle.cos(), angle.sin());
        let frame = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let sys = LinearSystem::tridiagonal(2, -1.0, 1.0);
        Splitting::build(origin(&sys), frame.clone(), frame).unwrap()
    }

    #[test]
    fn delta_search_geometry() {
        let plan = DeltaSearchPlan { samples: 2000, ..Default::default() };
        let a = rotated(0.0);
        let r = find_delta0_delta1(&[&a], 1, &[1.0, 1.0], &plan).unwrap();
        assert_eq!(r.delta0, 1.0);
        let b = rotated(std::f64::consts::FRAC_PI_3);
        let r2 = find_delta0_delta1(&[&a, &b], 1, &[1.0, 1.0], &plan).unwrap();
        assert!(r2.delta0 < 1.0);
        // 30 degrees between the cone axes: they meet once tan^-1(s) >= 15 degrees
        assert!((r2.delta0 - 0.25).abs() < 1e-12, "{}", r2.delta0);
        // V^1 inside the hyperplane {x_1 = 0}
        let c = rotated(std::f64::consts::FRAC_PI_2);
        assert!(matches!(find_delta0_delta1(&[&c], 1, &[1.0, 1.0], &plan), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn perturbed_suite_unperturbed_and_stressed() {
        let sys = linear_test_system();
        let short = track_of(&sys, 20);
        let p = compute_constants(std::slice::from_ref(&short), &ConstantsPlan::new(0.01)).unwrap();
        let tr = track_of(&sys, (2.0 * p.t0).ceil() as usize + 1);
        let plan = SuitePlan { samples: 6, seed: 1 };
        let clean = perturbed_cone_suite(&p, &tr, 0.0, &plan).unwrap();
        assert!(clean.passed(), "{clean:?}");
        assert!(clean.check("decay_stepwise").unwrap().trials > 0);
        let stressed = perturbed_cone_suite(&p, &tr, 5.0, &plan).unwrap();
        assert!(!stressed.passed());
    }

    #[test]
    fn random_frames_give_valid_projections() {
        let sys = LinearSystem::tridiagonal(5, -1.0, 1.0);
        let tr = track_of(&sys, 5);
        for f in &tr.fibers {
            assert!(f.idempotency_error() < 1e-10);
        }
        let (_, evecs) = {
            let e = sys.a.clone().symmetric_eigen();
            let mut idx: Vec<usize> = (0..5).collect();
            idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
            (0, DMatrix::from_fn(5, 5, |r, c| e.eigenvectors[(r, idx[c])]))
        };
        for i in 1..5 {
            assert!(subspace_sin_angle(&tr.base().v_basis(i), &evecs.columns(0, i).into_owned()) < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn cone_opening_neighbourhood(s1 in 0.0f64..0.5, ds in 0.01f64..0.5, seed in 0u64..1000) {
            let sys = linear_test_system();
            let tr = track_of(&sys, 2);
            let b = tr.base();
            let c_p = (1..3).map(|i| spectral_norm(&b.p[i])).fold(0.0, f64::max);
            let c_q = (1..3).map(|i| spectral_norm(&b.q[i])).fold(0.0, f64::max);
            for i in 1..3 {
                prop_assert!(opening_check(b, i, s1, s1 + ds, c_p, c_q, 100, seed) >= -1e-12);
            }
        }
    }
}
