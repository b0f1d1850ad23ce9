//! Dormand–Prince 5(4) with cubic Hermite dense output.
//!
//! Mixed error control with `atol = rtol = tol`; the RMS of the scaled
//! embedded error must stay at or below one for a step to be accepted.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub tol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Right-hand side `f(t, y, dy)`.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

struct Stepper {
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stepper {
    fn new(n: usize) -> Self {
        Self {
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }

    /// One trial step from `(t, y)` with `k[0] = f(t, y)` already filled.
    /// Returns the scaled error norm; `y_new` and `k[6] = f(t+h, y_new)` are set.
    fn trial<R: Rhs + ?Sized>(&mut self, f: &mut R, t: f64, y: &[f64], h: f64, tol: f64) -> Result<f64> {
        let n = self.n;
        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                for i in 0..n {
                    self.tmp[i] = y[i] + h * (0.0 $(+ $a * self.k[$j][i])*);
                }
                let (_, rest) = self.k.split_at_mut($dst);
                f.eval(t + $c * h, &self.tmp, &mut rest[0])?;
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for i in 0..n {
            self.y_new[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        {
            let (_, rest) = self.k.split_at_mut(6);
            f.eval(t + h, &self.y_new, &mut rest[0])?;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sc = tol + tol * y[i].abs().max(self.y_new[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let err = (acc / n.max(1) as f64).sqrt();
        if !err.is_finite() || self.y_new.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        Ok(err)
    }
}

fn initial_step<R: Rhs + ?Sized>(f: &mut R, t0: f64, y0: &[f64], dy0: &[f64], span: f64, tol: f64) -> Result<f64> {
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|v| tol + tol * v.abs()).collect();
    let d0 = (y0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d1 = (dy0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span.abs());
    let y1: Vec<f64> = y0.iter().zip(dy0).map(|(y, d)| y + h0 * d).collect();
    let mut dy1 = vec![0.0; n];
    f.eval(t0 + h0, &y1, &mut dy1)?;
    let d2 = (dy1
        .iter()
        .zip(dy0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n.max(1) as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span.abs()).max(1e-12))
}

/// Integrates forward from `grid[0]` and calls `on_step(t, y, dy)` after
/// every accepted step. Steps are clipped so that every grid time is hit
/// exactly; `on_grid(index, y)` is called at each grid point (including 0).
fn drive<R, S, G>(
    f: &mut R,
    y0: &[f64],
    grid: &[f64],
    opts: &OdeOptions,
    mut on_step: S,
    mut on_grid: G,
) -> Result<()>
where
    R: Rhs + ?Sized,
    S: FnMut(f64, &[f64], &[f64]),
    G: FnMut(usize, &[f64]),
{
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition("integration tolerance must be positive".into()));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial state must be finite".into()));
    }
    if grid.is_empty() {
        return Ok(());
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("time grid must be strictly increasing".into()));
    }
    let n = y0.len();
    let mut st = Stepper::new(n);
    let mut t = grid[0];
    let mut y = y0.to_vec();
    f.eval(t, &y, &mut st.k[0])?;
    on_grid(0, &y);
    on_step(t, &y, &st.k[0]);
    if grid.len() == 1 {
        return Ok(());
    }
    let t_end = *grid.last().unwrap();
    let mut h = match opts.h_init {
        Some(h) => h,
        None => initial_step(f, t, &y, &st.k[0].clone(), t_end - t, opts.tol)?,
    }
    .min(opts.h_max);
    let mut next = 1usize;
    let mut steps = 0usize;
    let mut rejected_last = false;
    while next < grid.len() {
        let target = grid[next];
        let remaining = target - t;
        let mut hit = false;
        let mut h_try = h;
        if h_try >= remaining * (1.0 - 1e-12) {
            h_try = remaining;
            hit = true;
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h_try < h_min && !hit {
            return Err(Error::Integration {
                t_last: t,
                reason: format!("step size underflow (h = {h_try:e})"),
            });
        }
        let err = st.trial(f, t, &y, h_try, opts.tol)?;
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration {
                t_last: t,
                reason: "maximum number of steps exceeded".into(),
            });
        }
        if err <= 1.0 {
            t = if hit { target } else { t + h_try };
            std::mem::swap(&mut y, &mut st.y_new);
            st.k.swap(0, 6);
            on_step(t, &y, &st.k[0]);
            if hit {
                on_grid(next, &y);
                next += 1;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let fac = if rejected_last { fac.min(1.0) } else { fac };
            // don't let a clipped step shrink the controller's step
            let base = if hit { h.max(h_try) } else { h_try };
            h = (base * fac).min(opts.h_max);
            rejected_last = false;
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = h_try * fac;
            rejected_last = true;
            if h < h_min {
                return Err(Error::Integration {
                    t_last: t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
        }
    }
    Ok(())
}

/// Final state at `t1`.
pub fn integrate_to<R: Rhs + ?Sized>(f: &mut R, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    let mut out = y0.to_vec();
    drive(f, y0, &[t0, t1], opts, |_, _, _| {}, |i, y| {
        if i == 1 {
            out.copy_from_slice(y);
        }
    })?;
    Ok(out)
}

/// States at each time in `grid` (which starts at the initial time).
pub fn integrate_grid<R: Rhs + ?Sized>(f: &mut R, y0: &[f64], grid: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(grid.len());
    drive(f, y0, grid, opts, |_, _, _| {}, |_, y| out.push(y.to_vec()))?;
    Ok(out)
}

/// All accepted steps from `t0` to `t1` with dense output.
pub fn integrate<R: Rhs + ?Sized>(f: &mut R, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Trajectory> {
    let mut tr = Trajectory {
        dim: y0.len(),
        times: Vec::new(),
        states: Vec::new(),
        derivs: Vec::new(),
    };
    if t1 == t0 {
        let mut d = vec![0.0; y0.len()];
        f.eval(t0, y0, &mut d)?;
        tr.times.push(t0);
        tr.states.extend_from_slice(y0);
        tr.derivs.extend_from_slice(&d);
        return Ok(tr);
    }
    drive(
        f,
        y0,
        &[t0, t1],
        opts,
        |t, y, dy| {
            tr.times.push(t);
            tr.states.extend_from_slice(y);
            tr.derivs.extend_from_slice(dy);
        },
        |_, _| {},
    )?;
    Ok(tr)
}

/// Accepted steps with cubic Hermite interpolation between them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.t_start(), self.t_end());
        let slack = 1e-12 * t1.abs().max(1.0);
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::Range { t, start: t0, end: t1 });
        }
        let t = t.clamp(t0, t1);
        let i = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            p => (p - 1).min(self.times.len().saturating_sub(2)),
        };
        if self.times.len() == 1 {
            return Ok(self.state(0).to_vec());
        }
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let d = self.dim;
        let ya = &self.states[i * d..(i + 1) * d];
        let yb = &self.states[(i + 1) * d..(i + 2) * d];
        let fa = &self.derivs[i * d..(i + 1) * d];
        let fb = &self.derivs[(i + 1) * d..(i + 2) * d];
        Ok((0..d)
            .map(|k| h00 * ya[k] + h10 * h * fa[k] + h01 * yb[k] + h11 * h * fb[k])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    #[test]
    fn exponential_decay() {
        let y = integrate_to(&mut decay, 0.0, &[1.0], 1.0, &OdeOptions::with_tol(1e-8)).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!((y[0] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn linear_cooperative_pair() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[1];
            dy[1] = y[0];
            Ok(())
        };
        let y = integrate_to(&mut f, 0.0, &[1.0, 0.0], 1.0, &OdeOptions::with_tol(1e-8)).unwrap();
        // oracle: matrix exponential
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = a.exp();
        assert!((y[0] - e[(0, 0)]).abs() < 1e-6);
        assert!((y[1] - e[(1, 0)]).abs() < 1e-6);
        assert!((y[0] - 1.54308).abs() < 1e-5 && (y[1] - 1.17520).abs() < 1e-5);
    }

    #[test]
    fn semiflow_identity() {
        let tol = 1e-9;
        let opts = OdeOptions::with_tol(tol);
        let mut f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[0] - y[0].powi(3) + 0.3 * t.sin();
            Ok(())
        };
        let direct = integrate_to(&mut f, 0.0, &[0.2], 3.0, &opts).unwrap();
        let mid = integrate_to(&mut f, 0.0, &[0.2], 1.2, &opts).unwrap();
        let two = integrate_to(&mut f, 1.2, &mid, 3.0, &opts).unwrap();
        assert!((direct[0] - two[0]).abs() < 10.0 * tol);
    }

    #[test]
    fn grid_hits_every_point() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let states = integrate_grid(&mut decay, &[1.0], &grid, &OdeOptions::with_tol(1e-10)).unwrap();
        assert_eq!(states.len(), grid.len());
        for (t, y) in grid.iter().zip(&states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_accuracy() {
        let tr = integrate(&mut decay, 0.0, &[1.0], 5.0, &OdeOptions::with_tol(1e-10)).unwrap();
        for i in 0..=100 {
            let t = i as f64 * 0.05;
            let y = tr.eval(t).unwrap();
            assert!((y[0] - (-t).exp()).abs() < 1e-6, "t={t}");
        }
        assert!(matches!(tr.eval(6.0), Err(Error::Range { .. })));
    }

    #[test]
    fn blow_up_reports_last_time() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        };
        // solution 1/(1-t) blows up at t = 1
        match integrate_to(&mut f, 0.0, &[1.0], 2.0, &OdeOptions::with_tol(1e-8)) {
            Err(Error::Integration { t_last, .. }) => assert!(t_last > 0.9 && t_last < 1.0 + 1e-6, "t_last={t_last}"),
            other => panic!("expected integration error, got {other:?}"),
        }
    }

    #[test]
    fn halving_tol_reduces_error() {
        fn f(t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0].powi(3) + y[1];
            dy[1] = y[0] - y[1].powi(3) + 0.5 * t.cos();
            Ok(())
        }
        let y0 = [1.5, -0.5];
        let tol = 1e-6;
        let reference = integrate_to(&mut f, 0.0, &y0, 10.0, &OdeOptions::with_tol(tol / 100.0)).unwrap();
        let err = |tol: f64| {
            let y = integrate_to(&mut f, 0.0, &y0, 10.0, &OdeOptions::with_tol(tol)).unwrap();
            (y[0] - reference[0]).abs().max((y[1] - reference[1]).abs())
        };
        let e1 = err(tol);
        let e2 = err(tol / 2.0);
        assert!(e2 * 2.0 <= e1, "e1={e1} e2={e2}");
    }
}
