//! Sampling of omega-limit sets over a torus rotation and their classification:
//! dichotomy of orbit differences, at most two minimal sets, and the
//! single-point fiber proxy.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::smallest_interior_index;
use crate::error::{Error, Result};
use crate::forcing::{advance_base, wrapped_difference, RotationVector, TorusPoint};
use crate::ode::OdeOptions;
use crate::separation::{cone_c_d_w_membership, ConeKind, ConeParams, Splitting};
use crate::system::{solve_to, ForcedSystem};
use crate::tridiag::{orbit_of, Orbit};

/// Minimum number of returns per fiber.
pub const MIN_RETURNS: usize = 10;

/// Times `t` in `window` with `theta0 . t` within `eta` (max-coordinate
/// distance) of `target`, refined to the closest approach.
pub fn return_times(theta0: &TorusPoint, target: &TorusPoint, rot: &RotationVector, eta: f64, window: (f64, f64)) -> Vec<f64> {
    let w = rot.omega();
    let phi: Vec<f64> = target
        .angles()
        .iter()
        .zip(theta0.angles())
        .map(|(b, a)| (b - a).rem_euclid(TAU))
        .collect();
    let (j0, w0) = w
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty rotation");
    if w0 == 0.0 {
        // the base is a point: every unit time is a return
        let first = window.0.floor() as i64 + 1;
        return (first..).map(|k| k as f64).take_while(|&t| t <= window.1).collect();
    }
    let (a, b) = (window.0 * w0, window.1 * w0);
    let (lo, hi) = (a.min(b), a.max(b));
    let k_lo = ((lo - phi[j0]) / TAU).floor() as i64;
    let k_hi = ((hi - phi[j0]) / TAU).ceil() as i64;
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    let mut out: Vec<f64> = Vec::new();
    for k in k_lo..=k_hi {
        let t = (phi[j0] + TAU * k as f64) / w0;
        let num: f64 = w
            .iter()
            .zip(&phi)
            .map(|(wj, pj)| {
                let kj = ((wj * t - pj) / TAU).round();
                wj * (pj + TAU * kj)
            })
            .sum();
        let ts = num / norm2;
        let dist = w
            .iter()
            .zip(&phi)
            .map(|(wj, pj)| wrapped_difference(wj * ts, *pj).abs())
            .fold(0.0, f64::max);
        if dist <= eta && ts > window.0 && ts <= window.1 && out.last().is_none_or(|l| ts - l > 1e-9) {
            out.push(ts);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaPlan {
    /// Base return radius (radians).
    pub eta: f64,
    /// State resolution; clouds are linked at `3 eta_state`.
    pub eta_state: f64,
    pub transient_cut: f64,
    /// Length of the re-integration that lands each sample exactly on its
    /// reference fiber (0: raw orbit states at the return times).
    pub rebase_time: f64,
    pub fibers: usize,
    pub windows: usize,
    pub visit_fraction: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OmegaPlan {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            eta_state: 1e-2,
            transient_cut: 100.0,
            rebase_time: 10.0,
            fibers: 16,
            windows: 5,
            visit_fraction: 0.8,
            tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberCloud {
    pub theta: TorusPoint,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Single-linkage clusters (indices into `points`), ordered by first coordinate.
    pub clusters: Vec<Vec<usize>>,
}

impl FiberCloud {
    pub fn cluster_diameter(&self, c: usize) -> f64 {
        diameter(self.clusters[c].iter().map(|&k| self.points[k].as_slice()))
    }

    /// `(min, max)` of the first coordinate over a cluster.
    pub fn s_interval(&self, c: usize) -> (f64, f64) {
        self.clusters[c]
            .iter()
            .map(|&k| self.points[k][0])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaCapture {
    pub clouds: Vec<FiberCloud>,
    pub link_radius: f64,
    pub plan: OmegaPlan,
}

impl OmegaCapture {
    /// Cloud dump: fiber id, time, first coordinate, state.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.clouds.iter().find_map(|c| c.points.first()).map_or(0, Vec::len);
        let mut header = vec!["fiber".to_string(), "t".into(), "s".into()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        wr.write_record(&header)?;
        for (f, c) in self.clouds.iter().enumerate() {
            for (t, p) in c.times.iter().zip(&c.points) {
                let mut row = vec![f.to_string(), t.to_string(), p[0].to_string()];
                row.extend(p.iter().map(|v| v.to_string()));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn diameter<'a>(pts: impl Iterator<Item = &'a [f64]> + Clone) -> f64 {
    let v: Vec<&[f64]> = pts.collect();
    let mut d: f64 = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            d = d.max(dist(v[i], v[j]));
        }
    }
    d
}

/// Single-linkage clusters at `radius`, ordered by the first coordinate of
/// their smallest member.
pub fn single_linkage(points: &[Vec<f64>], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(&points[i], &points[j]) <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_of[r] {
            Some(g) => groups[g].push(i),
            None => {
                root_of[r] = Some(groups.len());
                groups.push(vec![i]);
            }
        }
    }
    let key = |g: &Vec<usize>| g.iter().map(|&k| points[k][0]).fold(f64::INFINITY, f64::min);
    groups.sort_by(|a, b| key(a).total_cmp(&key(b)));
    groups
}

/// Fiber clouds of the omega-limit set of `orbit` over `plan.fibers` random
/// reference base points.
pub fn capture_omega<S: ForcedSystem + ?Sized>(sys: &S, orbit: &Orbit, plan: &OmegaPlan) -> Result<OmegaCapture> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let m = orbit.rotation.len();
    let refs: Vec<TorusPoint> = (0..plan.fibers)
        .map(|_| TorusPoint::new((0..m).map(|_| rng.random::<f64>() * TAU).collect()))
        .collect();
    capture_omega_at(sys, orbit, &refs, plan)
}

pub fn capture_omega_at<S: ForcedSystem + ?Sized>(sys: &S, orbit: &Orbit, refs: &[TorusPoint], plan: &OmegaPlan) -> Result<OmegaCapture> {
    let t0 = orbit.t_grid[0];
    let t_end = *orbit.t_grid.last().unwrap();
    if plan.transient_cut + plan.rebase_time >= t_end - t0 {
        return Err(Error::InsufficientRecurrence { found: 0, required: MIN_RETURNS });
    }
    let dt = orbit.t_grid[1] - orbit.t_grid[0];
    let opts = OdeOptions::with_tol(plan.tol);
    let clouds: Vec<FiberCloud> = refs
        .par_iter()
        .map(|r| -> Result<FiberCloud> {
            let times = return_times(&orbit.theta0, r, &orbit.rotation, plan.eta, (plan.transient_cut + plan.rebase_time, t_end - t0));
            if times.len() < MIN_RETURNS {
                return Err(Error::InsufficientRecurrence { found: times.len(), required: MIN_RETURNS });
            }
            let mut points = Vec::with_capacity(times.len());
            for &t in &times {
                let k = (((t - plan.rebase_time) / dt).floor() as usize).min(orbit.len() - 1);
                let s = orbit.t_grid[k] - t0;
                let run = t - s;
                // land exactly on r when rebasing, follow the orbit's own base otherwise
                let start = if plan.rebase_time > 0.0 {
                    advance_base(r, &orbit.rotation, -run)
                } else {
                    orbit.theta_at(k)
                };
                points.push(solve_to(sys, &start, &orbit.states[k], run, &opts)?);
            }
            let clusters = single_linkage(&points, 3.0 * plan.eta_state);
            Ok(FiberCloud {
                theta: r.clone(),
                times,
                points,
                clusters,
            })
        })
        .collect::<Result<_>>()?;
    Ok(OmegaCapture {
        clouds,
        link_radius: 3.0 * plan.eta_state,
        plan: plan.clone(),
    })
}

/// Integrates from `x0` at `theta0` over `[0, horizon]` and captures the omega-limit clouds.
pub fn capture_from<S: ForcedSystem + ?Sized>(sys: &S, theta0: &TorusPoint, x0: &[f64], horizon: f64, dt: f64, plan: &OmegaPlan) -> Result<OmegaCapture> {
    let orbit = orbit_of(sys, theta0, x0, (0.0, horizon), dt, plan.tol)?;
    capture_omega(sys, &orbit, plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    SingleMinimal,
    MinimalPlusConnector,
    TwoMinimalPlusConnector,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberStats {
    pub theta: Vec<f64>,
    pub returns: usize,
    pub clusters: usize,
    pub minimal_clusters: usize,
    /// Largest cluster diameter in the fiber.
    pub diameter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaReport {
    pub classification: Classification,
    pub minimal_count: usize,
    pub fiber_stats: Vec<FiberStats>,
    /// `min over fibers of m_2 - M_1` when two minimal candidates are present.
    pub gap: Option<f64>,
    /// The s-intervals of the two candidates are disjoint on every fiber.
    pub separated: Option<bool>,
    pub connector_observed: bool,
    /// Backward-limit conditions on connectors are not evaluated.
    pub alpha_limits: String,
    pub return_times: Vec<Vec<f64>>,
    pub note: String,
}

/// Flags of the clusters visited in at least `visit_fraction` of the return windows.
fn recurrent_clusters(c: &FiberCloud, windows: usize, visit_fraction: f64) -> Vec<bool> {
    let n = c.points.len();
    let w = windows.clamp(1, n.max(1));
    let mut owner = vec![0usize; n];
    for (g, members) in c.clusters.iter().enumerate() {
        for &k in members {
            owner[k] = g;
        }
    }
    let mut visits = vec![0usize; c.clusters.len()];
    for win in 0..w {
        let (a, b) = (win * n / w, (win + 1) * n / w);
        let mut seen = vec![false; c.clusters.len()];
        for &o in &owner[a..b] {
            seen[o] = true;
        }
        for (v, s) in visits.iter_mut().zip(seen) {
            *v += s as usize;
        }
    }
    visits.iter().map(|&v| v as f64 >= visit_fraction * w as f64).collect()
}

/// Classifies captured clouds into the three structural branches.
pub fn classify_trichotomy(capture: &OmegaCapture) -> OmegaReport {
    let plan = &capture.plan;
    let flags: Vec<Vec<bool>> = capture
        .clouds
        .iter()
        .map(|c| recurrent_clusters(c, plan.windows, plan.visit_fraction))
        .collect();
    let fiber_stats: Vec<FiberStats> = capture
        .clouds
        .iter()
        .zip(&flags)
        .map(|(c, f)| FiberStats {
            theta: c.theta.angles().to_vec(),
            returns: c.points.len(),
            clusters: c.clusters.len(),
            minimal_clusters: f.iter().filter(|&&b| b).count(),
            diameter: (0..c.clusters.len()).map(|g| c.cluster_diameter(g)).fold(0.0, f64::max),
        })
        .collect();
    let counts: Vec<usize> = fiber_stats.iter().map(|s| s.minimal_clusters).collect();
    let minimal_count = counts.iter().copied().max().unwrap_or(0);
    let consistent = counts.iter().all(|&c| c == minimal_count);
    let connector_observed = fiber_stats.iter().any(|s| s.clusters > s.minimal_clusters);
    let mut gap = None;
    let mut separated = None;
    if minimal_count == 2 && consistent {
        let mut g = f64::INFINITY;
        let mut disjoint = true;
        for (c, f) in capture.clouds.iter().zip(&flags) {
            let idx: Vec<usize> = (0..f.len()).filter(|&k| f[k]).collect();
            let (lo, hi) = (c.s_interval(idx[0]), c.s_interval(idx[1]));
            let (low, high) = if lo.1 <= hi.0 { (lo, hi) } else { (hi, lo) };
            g = g.min(high.0 - low.1);
            disjoint &= high.0 > low.1;
        }
        gap = Some(g);
        separated = Some(disjoint);
    }
    let (classification, note) = if !consistent {
        (Classification::Inconclusive, format!("minimal candidates differ across fibers: {counts:?}"))
    } else {
        match (minimal_count, connector_observed) {
            (0, _) => (Classification::Inconclusive, "no cluster is recurrent".into()),
            (1, false) => (Classification::SingleMinimal, String::new()),
            (1, true) => (Classification::MinimalPlusConnector, String::new()),
            (2, _) => (Classification::TwoMinimalPlusConnector, String::new()),
            (k, _) => (Classification::Inconclusive, format!("{k} recurrent clusters per fiber")),
        }
    };
    OmegaReport {
        classification,
        minimal_count,
        fiber_stats,
        gap,
        separated,
        connector_observed,
        alpha_limits: "unevaluated".into(),
        return_times: capture.clouds.iter().map(|c| c.times.clone()).collect(),
        note,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverResult {
    pub fraction_single: f64,
    pub max_fiber_diameter: f64,
}

/// Fraction of fibers whose cloud is one cluster of diameter below `tol`.
pub fn almost_one_cover_test(capture: &OmegaCapture, tol: f64) -> CoverResult {
    let mut single = 0usize;
    let mut max_d: f64 = 0.0;
    for c in &capture.clouds {
        let d = diameter(c.points.iter().map(Vec::as_slice));
        max_d = max_d.max(d);
        if c.clusters.len() == 1 && d < tol {
            single += 1;
        }
    }
    CoverResult {
        fraction_single: single as f64 / capture.clouds.len().max(1) as f64,
        max_fiber_diameter: max_d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Decay,
    ConeLock,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub branch: Branch,
    /// Fitted log-slope of `||x - y||` (decay branch; `None` for identical states).
    pub rate: Option<f64>,
    pub lock_index: Option<usize>,
    pub onset: Option<f64>,
    /// Sign changes of the first difference coordinate after the onset.
    pub hyperplane_crossings: usize,
    pub resolvable_samples: usize,
}

/// Cones used to read off the lock index of a difference.
#[derive(Debug, Clone, Copy)]
pub enum ConeFamily<'a> {
    /// Sign-change cones in the gauged coordinates.
    SignChange { sign_tol: f64 },
    /// Nested cones of a fiber-independent splitting.
    Splitting { split: &'a Splitting, params: &'a ConeParams },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyPlan {
    pub horizon: f64,
    pub dt: f64,
    pub tol: f64,
    /// Differences below `noise * (1 + |x|)` are unresolvable.
    pub noise: f64,
    /// Latest admissible onset as a fraction of the horizon.
    pub onset_fraction: f64,
    pub fit_tol: f64,
}

impl Default for DichotomyPlan {
    fn default() -> Self {
        Self {
            horizon: 20.0,
            dt: 0.05,
            tol: 1e-11,
            noise: 1e-8,
            onset_fraction: 0.5,
            fit_tol: 0.05,
        }
    }
}

/// Smallest `i <= N0` with `v` interior to the nested cone of index `i`.
fn nested_index(v: &[f64], split: &Splitting, params: &ConeParams) -> Option<usize> {
    (1..=params.n0).find(|&i| {
        i == split.dim() || cone_c_d_w_membership(v, split, i, params.nested_opening(i), ConeKind::C).margin > 0.0
    })
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let den: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    num / den
}

/// Decay or cone lock of `x(t) - y(t)` for two orbits over the same base point.
pub fn dichotomy_check<S: ForcedSystem + ?Sized>(
    sys: &S,
    theta: &TorusPoint,
    x0: &[f64],
    y0: &[f64],
    family: ConeFamily<'_>,
    lambda0: Option<f64>,
    plan: &DichotomyPlan,
) -> Result<DichotomyVerdict> {
    let ox = orbit_of(sys, theta, x0, (0.0, plan.horizon), plan.dt, plan.tol)?;
    let oy = orbit_of(sys, theta, y0, (0.0, plan.horizon), plan.dt, plan.tol)?;
    if ox.states.iter().chain(&oy.states).any(|s| !sys.in_box(s)) {
        return Err(Error::Precondition("orbit leaves the certified neighbourhood".into()));
    }
    if x0 == y0 {
        return Ok(DichotomyVerdict {
            branch: Branch::Decay,
            rate: None,
            lock_index: None,
            onset: Some(0.0),
            hyperplane_crossings: 0,
            resolvable_samples: 0,
        });
    }
    let gauge = sys.gauge();
    let n = sys.dim();
    struct Sample {
        t: f64,
        log_d: f64,
        index: Option<usize>,
        s: f64,
    }
    let mut samples = Vec::new();
    for k in 0..ox.len() {
        let v: Vec<f64> = ox.states[k].iter().zip(&oy.states[k]).zip(&gauge).map(|((a, b), g)| (a - b) * g).collect();
        let d = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = 1.0 + ox.states[k].iter().chain(&oy.states[k]).fold(0.0f64, |m, x| m.max(x.abs()));
        if d <= plan.noise * scale {
            continue;
        }
        let index = match family {
            ConeFamily::SignChange { sign_tol } => {
                let i = smallest_interior_index(&v, sign_tol);
                (i >= 1 && i <= n).then_some(i)
            }
            ConeFamily::Splitting { split, params } => nested_index(&v, split, params),
        };
        samples.push(Sample { t: ox.t_grid[k], log_d: d.ln(), index, s: v[0] });
    }
    let resolvable = samples.len();
    if resolvable < 3 {
        return Ok(DichotomyVerdict {
            branch: Branch::Inconclusive,
            rate: None,
            lock_index: None,
            onset: None,
            hyperplane_crossings: 0,
            resolvable_samples: resolvable,
        });
    }
    let last = samples.last().unwrap().index;
    // onset: first sample after the last change of the index
    let mut start = samples.len() - 1;
    while start > 0 && samples[start - 1].index == last {
        start -= 1;
    }
    let onset = samples[start].t;
    let tail = &samples[start..];
    let stable = onset <= plan.onset_fraction * plan.horizon && tail.len() >= 3;
    let crossings = tail.windows(2).filter(|w| w[0].s * w[1].s <= 0.0).count();
    let rate = slope(&tail.iter().map(|s| s.t).collect::<Vec<_>>(), &tail.iter().map(|s| s.log_d).collect::<Vec<_>>());
    let branch = match (stable, last) {
        (true, None) if lambda0.is_none_or(|l| rate <= l.ln() + plan.fit_tol) => Branch::Decay,
        (true, Some(_)) => Branch::ConeLock,
        _ => Branch::Inconclusive,
    };
    Ok(DichotomyVerdict {
        branch,
        rate: (branch == Branch::Decay).then_some(rate),
        lock_index: if branch == Branch::ConeLock { last } else { None },
        onset: (branch != Branch::Inconclusive).then_some(onset),
        hyperplane_crossings: if branch == Branch::ConeLock { crossings } else { 0 },
        resolvable_samples: resolvable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::CocyclePoint;
    use crate::separation::{compute_constants, compute_splitting, ConstantsPlan, SplittingPlan};
    use crate::system::LinearSystem;
    use crate::tridiag::{default_forced_linear, default_pitchfork};
    use proptest::prelude::*;

    #[test]
    fn returns_are_close_and_refined() {
        let rot = RotationVector::default_pair();
        let th0 = TorusPoint::zero(2);
        let target = TorusPoint::new(vec![1.0, 2.0]);
        let ts = return_times(&th0, &target, &rot, 0.1, (0.0, 2000.0));
        assert!(ts.len() >= 10, "{}", ts.len());
        for &t in &ts {
            assert!(advance_base(&th0, &rot, t).distance(&target) <= 0.1 + 1e-12);
        }
        // periodic base: returns are exact multiples of the period
        let per = return_times(&TorusPoint::zero(1), &TorusPoint::zero(1), &RotationVector::single(1.0), 1e-6, (0.0, 20.0));
        assert_eq!(per.len(), 3);
        assert!((per[0] - TAU).abs() < 1e-12);
    }

    #[test]
    fn single_linkage_groups() {
        let pts = vec![vec![0.0], vec![0.01], vec![1.0], vec![0.02], vec![1.005]];
        let c = single_linkage(&pts, 0.015);
        assert_eq!(c, vec![vec![0, 1, 3], vec![2, 4]]);
    }

    #[test]
    fn forced_linear_has_one_thin_fiber() {
        let sys = default_forced_linear();
        let plan = OmegaPlan { eta: 0.1, ..Default::default() };
        let th = TorusPoint::zero(2);
        let short = capture_from(&sys, &th, &[3.0], 2000.0, 0.1, &plan).unwrap();
        let long = capture_from(&sys, &th, &[3.0], 4000.0, 0.1, &plan).unwrap();
        let rep = classify_trichotomy(&short);
        assert_eq!(rep.classification, Classification::SingleMinimal);
        let (a, b) = (almost_one_cover_test(&short, 1e-4), almost_one_cover_test(&long, 1e-4));
        assert_eq!(a.fraction_single, 1.0);
        assert!(a.max_fiber_diameter < 1e-6 && b.max_fiber_diameter < 1e-6, "{a:?} {b:?}");
    }

    #[test]
    fn raw_sampling_spreads_with_eta() {
        let sys = default_forced_linear();
        let plan = OmegaPlan { eta: 0.1, rebase_time: 0.0, ..Default::default() };
        let cap = capture_from(&sys, &TorusPoint::zero(2), &[3.0], 2000.0, 0.1, &plan).unwrap();
        let cover = almost_one_cover_test(&cap, 1e-4);
        assert!(cover.max_fiber_diameter > 1e-4);
    }

    #[test]
    fn too_few_returns() {
        let sys = default_forced_linear();
        let r = capture_from(&sys, &TorusPoint::zero(2), &[1.0], 300.0, 0.1, &OmegaPlan::default());
        assert!(matches!(r, Err(Error::InsufficientRecurrence { .. })));
    }

    #[test]
    fn doubled_cloud_is_not_single() {
        let sys = default_forced_linear();
        let plan = OmegaPlan { eta: 0.1, ..Default::default() };
        let mut cap = capture_from(&sys, &TorusPoint::zero(2), &[3.0], 2000.0, 0.1, &plan).unwrap();
        for c in cap.clouds.iter_mut() {
            let shifted: Vec<Vec<f64>> = c.points.iter().map(|p| vec![p[0] + 1.0]).collect();
            c.times.extend(c.times.clone());
            c.points.extend(shifted);
            c.clusters = single_linkage(&c.points, cap.link_radius);
        }
        assert_eq!(almost_one_cover_test(&cap, 1e-3).fraction_single, 0.0);
    }

    #[test]
    fn pitchfork_from_two_is_single_minimal() {
        let sys = default_pitchfork();
        let plan = OmegaPlan { eta: 0.1, ..Default::default() };
        let cap = capture_from(&sys, &TorusPoint::zero(2), &[2.0], 2000.0, 0.1, &plan).unwrap();
        let rep = classify_trichotomy(&cap);
        assert_eq!(rep.classification, Classification::SingleMinimal);
        assert!(rep.minimal_count <= 2);
        assert!(almost_one_cover_test(&cap, 1e-3).fraction_single >= 0.95);
        for c in &cap.clouds {
            assert!((c.points[0][0] - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn pitchfork_pair_locks_in_first_cone() {
        let sys = default_pitchfork();
        let v = dichotomy_check(&sys, &TorusPoint::zero(2), &[2.0], &[1.5], ConeFamily::SignChange { sign_tol: 1e-10 }, None, &DichotomyPlan::default()).unwrap();
        assert_eq!(v.branch, Branch::ConeLock);
        assert_eq!(v.lock_index, Some(1));
        assert_eq!(v.hyperplane_crossings, 0);
        let same = dichotomy_check(&sys, &TorusPoint::zero(2), &[1.2], &[1.2], ConeFamily::SignChange { sign_tol: 1e-10 }, None, &DichotomyPlan::default()).unwrap();
        assert_eq!(same.branch, Branch::Decay);
        assert_eq!(same.rate, None);
    }

    fn diag_setup() -> (LinearSystem, Splitting, ConeParams) {
        let sys = LinearSystem::from_rows(&[vec![-1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let z = CocyclePoint::new(&sys, vec![0.0; 2], vec![0.0; 2], TorusPoint::zero(2)).unwrap();
        let tr = compute_splitting(&sys, &z, &SplittingPlan { window: 10, ..Default::default() }).unwrap();
        let p = compute_constants(std::slice::from_ref(&tr), &ConstantsPlan::new(0.01)).unwrap();
        (sys, tr.base().clone(), p)
    }

    #[test]
    fn diagonal_linear_dichotomy() {
        let (sys, split, p) = diag_setup();
        assert_eq!(p.n0, 1);
        let fam = ConeFamily::Splitting { split: &split, params: &p };
        let lock = dichotomy_check(&sys, &TorusPoint::zero(2), &[1.0, 1.0], &[0.0, -1.0], fam, Some(p.lambda0), &DichotomyPlan::default()).unwrap();
        assert_eq!(lock.branch, Branch::ConeLock);
        assert_eq!(lock.lock_index, Some(1));
        let decay = dichotomy_check(&sys, &TorusPoint::zero(2), &[0.0, 1.0], &[0.0, -1.0], fam, Some(p.lambda0), &DichotomyPlan::default()).unwrap();
        assert_eq!(decay.branch, Branch::Decay);
        let r = decay.rate.unwrap();
        assert!((r + 2.0).abs() <= 0.05 * 2.0, "{r}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lock_index_does_not_grow_with_horizon(x in 1.0f64..3.0, y in 1.0f64..3.0) {
            prop_assume!((x - y).abs() > 1e-3);
            let sys = default_pitchfork();
            let fam = ConeFamily::SignChange { sign_tol: 1e-10 };
            let a = dichotomy_check(&sys, &TorusPoint::zero(2), &[x], &[y], fam, None, &DichotomyPlan::default()).unwrap();
            let b = dichotomy_check(&sys, &TorusPoint::zero(2), &[x], &[y], fam, None, &DichotomyPlan { horizon: 40.0, ..Default::default() }).unwrap();
            prop_assert!(a.branch != Branch::Decay || a.lock_index.is_none());
            if let (Some(i), Some(j)) = (a.lock_index, b.lock_index) {
                prop_assert!(j <= i);
            }
        }
    }
}
