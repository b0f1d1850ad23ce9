//! Integer-valued Lyapunov functionals and the cones they define.
//!
//! Zero tests are relative: an entry counts as zero when
//! `|x_j| <= tol * max_k |x_k|`, which keeps every verdict invariant under
//! `x -> lambda x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::max_abs;
use crate::parabolic::GridFunction;
use crate::tridiag::Orbit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignChangeResult {
    pub regular: bool,
    pub sigma: usize,
    /// Relative sup-norm distance proxy to the irregular set (0 when irregular).
    pub margin: f64,
}

fn zero_flags(x: &[f64], tol: f64) -> (Vec<bool>, f64) {
    let scale = max_abs(x);
    let thr = tol * scale;
    (x.iter().map(|v| v.abs() <= thr).collect(), scale)
}

fn sign_changes_skipping(x: &[f64], zero: &[bool]) -> usize {
    let mut last: Option<bool> = None;
    let mut count = 0;
    for (v, z) in x.iter().zip(zero) {
        if *z {
            continue;
        }
        let pos = *v > 0.0;
        if let Some(l) = last {
            if l != pos {
                count += 1;
            }
        }
        last = Some(pos);
    }
    count
}

/// Number of sign changes after removing near-zero entries, plus regularity.
pub fn sigma(x: &[f64], tol: f64) -> SignChangeResult {
    let n = x.len();
    let (zero, scale) = zero_flags(x, tol);
    if n == 0 || scale == 0.0 {
        return SignChangeResult { regular: false, sigma: 0, margin: 0.0 };
    }
    let s = sign_changes_skipping(x, &zero);
    let mut regular = !zero[0] && !zero[n - 1];
    for i in 1..n.saturating_sub(1) {
        if zero[i] {
            let thr = tol * scale;
            if !(x[i - 1] * x[i + 1] < -thr * thr) || zero[i - 1] || zero[i + 1] {
                regular = false;
            }
        }
    }
    let margin = if regular { regularity_margin(x) / scale } else { 0.0 };
    SignChangeResult { regular, sigma: s, margin }
}

fn regularity_margin(x: &[f64]) -> f64 {
    let n = x.len();
    let mut m = x[0].abs().min(x[n - 1].abs());
    for i in 0..n.saturating_sub(1) {
        m = m.min(x[i].abs().max(x[i + 1].abs()));
    }
    for i in 1..n.saturating_sub(1) {
        if x[i - 1] * x[i + 1] > 0.0 {
            m = m.min(x[i].abs());
        }
    }
    m
}

/// Min and max number of sign changes over all sign choices for the entries
/// flagged `free` (other entries keep their sign).
fn sigma_range(x: &[f64], free: &[bool]) -> (usize, usize) {
    // dp over the sign of the last entry: (min, max) changes so far
    const INF: usize = usize::MAX / 4;
    let mut lo = [INF, INF];
    let mut hi = [0usize, 0usize];
    let mut reach = [false, false];
    for (i, (&v, &f)) in x.iter().zip(free).enumerate() {
        let options: &[usize] = if f {
            &[0, 1]
        } else if v > 0.0 {
            &[1]
        } else {
            &[0]
        };
        let mut nlo = [INF, INF];
        let mut nhi = [0usize, 0usize];
        let mut nreach = [false, false];
        for &s in options {
            if i == 0 {
                nlo[s] = 0;
                nhi[s] = 0;
                nreach[s] = true;
                continue;
            }
            for p in 0..2 {
                if !reach[p] {
                    continue;
                }
                let add = (p != s) as usize;
                nlo[s] = nlo[s].min(lo[p] + add);
                nhi[s] = nhi[s].max(hi[p] + add);
                nreach[s] = true;
            }
        }
        lo = nlo;
        hi = nhi;
        reach = nreach;
    }
    let mut mn = INF;
    let mut mx = 0;
    for s in 0..2 {
        if reach[s] {
            mn = mn.min(lo[s]);
            mx = mx.max(hi[s]);
        }
    }
    if mn == INF {
        (0, 0)
    } else {
        (mn, mx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Interior,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeMembership {
    pub index: usize,
    pub location: Location,
    /// Relative size of the smallest entry perturbation that changes the
    /// verdict; 0 on the boundary.
    pub margin: f64,
}

fn verdict(x: &[f64], i: usize, free: &[bool]) -> Location {
    let (mn, mx) = sigma_range(x, free);
    if mx < i {
        Location::Interior
    } else if mn < i {
        Location::Boundary
    } else {
        Location::Outside
    }
}

/// Membership of `x` in the sign-change cone `C_i` (`1 <= i <= n`, `C_n` is the whole space).
pub fn cone_membership_vec(x: &[f64], i: usize, tol: f64) -> ConeMembership {
    let n = x.len();
    let (zero, scale) = zero_flags(x, tol);
    if scale == 0.0 {
        // the origin lies in every cone, on its boundary
        return ConeMembership { index: i, location: Location::Boundary, margin: 0.0 };
    }
    if i >= n {
        return ConeMembership { index: i, location: Location::Interior, margin: 1.0 };
    }
    if i == 0 {
        return ConeMembership { index: 0, location: Location::Outside, margin: 1.0 };
    }
    let loc = verdict(x, i, &zero);
    if loc == Location::Boundary {
        return ConeMembership { index: i, location: loc, margin: 0.0 };
    }
    // free further entries in ascending magnitude until the verdict moves
    let mut order: Vec<usize> = (0..n).filter(|&j| !zero[j]).collect();
    order.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()));
    let mut free = zero.clone();
    let mut margin = 1.0;
    for &j in &order {
        free[j] = true;
        if verdict(x, i, &free) != loc {
            margin = x[j].abs() / scale;
            break;
        }
    }
    ConeMembership { index: i, location: loc, margin }
}

/// `(sigma_min, sigma_max)` over sign choices for the near-zero entries;
/// `None` for the zero vector.
pub fn sigma_bounds(x: &[f64], tol: f64) -> Option<(usize, usize)> {
    let (zero, scale) = zero_flags(x, tol);
    (scale > 0.0).then(|| sigma_range(x, &zero))
}

/// Smallest `i` such that `x` is interior to `C_i` (always `<= n`).
pub fn smallest_interior_index(x: &[f64], tol: f64) -> usize {
    let (zero, scale) = zero_flags(x, tol);
    if scale == 0.0 {
        return 0;
    }
    let (_, mx) = sigma_range(x, &zero);
    (mx + 1).min(x.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroNumber {
    pub z: usize,
    pub all_simple: bool,
}

/// Sign changes of the grid values (near-zero nodes merged into the
/// neighbouring cell); `all_simple` fails on touching or flat zeros.
pub fn zero_number(u: &GridFunction, tol: f64) -> ZeroNumber {
    zero_number_values(&u.values, u.h(), tol)
}

pub fn zero_number_values(values: &[f64], h: f64, tol: f64) -> ZeroNumber {
    let (zero, scale) = zero_flags(values, tol);
    if scale == 0.0 {
        return ZeroNumber { z: 0, all_simple: false };
    }
    let z = sign_changes_skipping(values, &zero);
    let mut all_simple = true;
    // walk consecutive nonzero nodes
    let idx: Vec<usize> = (0..values.len()).filter(|&j| !zero[j]).collect();
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gap = b - a;
        let change = (values[a] > 0.0) != (values[b] > 0.0);
        if change {
            let slope = (values[b] - values[a]).abs() / scale / (gap as f64 * h);
            if slope <= tol / h || gap > 2 {
                all_simple = false;
            }
        } else if gap > 1 {
            // zero touched without a sign change
            all_simple = false;
        }
    }
    // zeros sitting on the endpoints are multiple under Neumann data
    if zero[0] || zero[values.len() - 1] {
        all_simple = false;
    }
    ZeroNumber { z, all_simple }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperplaneConvention {
    /// `u+ = e_1`, `pi(x) = x_1`.
    FirstCoordinate,
    /// `u+ = 1` (constant grid function), `pi(u) = u(0)`.
    ConstantFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
    Hyperplane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneCoord {
    pub s: f64,
    pub h_part: Vec<f64>,
    pub side: Side,
}

impl HyperplaneCoord {
    pub fn reconstruct(&self, convention: HyperplaneConvention) -> Vec<f64> {
        let mut x = self.h_part.clone();
        match convention {
            HyperplaneConvention::FirstCoordinate => x[0] += self.s,
            HyperplaneConvention::ConstantFunction => x.iter_mut().for_each(|v| *v += self.s),
        }
        x
    }
}

/// `x = s u+ + h` with `h` in the kernel of `pi`.
pub fn hyperplane_split(x: &[f64], convention: HyperplaneConvention, tol: f64) -> HyperplaneCoord {
    let s = x[0];
    let mut h = x.to_vec();
    match convention {
        HyperplaneConvention::FirstCoordinate => h[0] = 0.0,
        HyperplaneConvention::ConstantFunction => h.iter_mut().for_each(|v| *v -= s),
    }
    let thr = tol * max_abs(x);
    let side = if s > thr {
        Side::Plus
    } else if s < -thr {
        Side::Minus
    } else {
        Side::Hyperplane
    };
    HyperplaneCoord { s, h_part: h, side }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberOrder {
    Greater,
    Less,
    Equal,
    Undecided,
}

/// Order of two orbits over the same base trajectory on `t >= tail_start`.
pub fn fiber_order(x: &Orbit, y: &Orbit, tail_start: f64, tol: f64) -> Result<FiberOrder> {
    if x.t_grid.len() != y.t_grid.len()
        || x.t_grid.iter().zip(&y.t_grid).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::config("fiber_order", "orbits do not share a time grid"));
    }
    if x.theta0.distance(&y.theta0) > 1e-12 || x.rotation != y.rotation {
        return Err(Error::config("fiber_order", "orbits do not share a base trajectory"));
    }
    let mut all_pos = true;
    let mut all_neg = true;
    let mut all_eq = true;
    let mut any = false;
    for k in 0..x.len() {
        if x.t_grid[k] < tail_start {
            continue;
        }
        any = true;
        let d: Vec<f64> = x.states[k].iter().zip(&y.states[k]).map(|(a, b)| a - b).collect();
        let s = d[0];
        all_pos &= s > tol;
        all_neg &= s < -tol;
        all_eq &= max_abs(&d) < tol;
    }
    Ok(if !any {
        FiberOrder::Undecided
    } else if all_eq {
        FiberOrder::Equal
    } else if all_pos {
        FiberOrder::Greater
    } else if all_neg {
        FiberOrder::Less
    } else {
        FiberOrder::Undecided
    })
}
