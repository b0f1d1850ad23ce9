//! Config-driven experiment runs, sweeps and the bundled default suite.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cocycle::{advance, axiom_battery, AxiomStatus, non_cooperative_control, propagate, BatteryPlan, CocyclePoint};
use crate::cones::{sigma, zero_number};
use crate::error::{Error, Result};
use crate::forcing::TorusPoint;
use crate::omega::{almost_one_cover_test, capture_from, classify_trichotomy, dichotomy_check, Branch, Classification, ConeFamily, DichotomyPlan, OmegaPlan};
use crate::parabolic::{
    chemo_bound_constant, default_chemotaxis, default_nonlocal, dissipativity_bounds, elliptic_residual, heat, heat_error, linearized_parabolic, semidiscretize,
    solve_chemo_v, BoundaryCondition, ParabolicSpec, ParabolicSystem, Perturbation,
};
use crate::separation::{
    bundle_invariance_angle, compute_constants, compute_splitting, default_epsilon_grid, find_delta0_delta1, linear_test_system, perturbed_cone_suite,
    search_epsilon1, separation_inequality_margin, splitting_cone_check, transport_check, ConeParams, ConstantsPlan, DeltaSearchPlan, N0Rule, SplittingPlan,
    SplittingTrack, SuitePlan,
};
use crate::system::{ForcedSystem, LinearSystem};
use crate::tridiag::{default_chain, default_cubic_pair, default_forced_linear, default_pitchfork, orbit_of, uniform_grid, TridiagSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TridiagPreset {
    Chain,
    CubicPair,
    Pitchfork,
    ForcedLinear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    /// `tridiag(1, -1, 1)` in dimension 3.
    LinearTest,
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    /// The non-cooperative linear control system.
    Control,
    Tridiag {
        #[serde(default)]
        preset: Option<TridiagPreset>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        amplitude: Option<f64>,
        #[serde(default)]
        spec: Option<TridiagSpec>,
    },
    ParabolicNonlocal {
        n: usize,
        eps: f64,
        #[serde(default)]
        spec: Option<ParabolicSpec>,
    },
    ParabolicChemotaxis {
        n: usize,
        eps: f64,
        #[serde(default)]
        spec: Option<ParabolicSpec>,
    },
    Heat {
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Cocycle,
    Sigma,
    ZeroNumber,
    Battery,
    BatteryControl,
    Splitting,
    Constants,
    Perturbed,
    PerturbedAt,
    Dichotomy,
    Omega,
    ParabolicBounds,
    Heat,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cocycle => "cocycle",
            Self::Sigma => "sigma",
            Self::ZeroNumber => "zero_number",
            Self::Battery => "battery",
            Self::BatteryControl => "battery_control",
            Self::Splitting => "splitting",
            Self::Constants => "constants",
            Self::Perturbed => "perturbed",
            Self::PerturbedAt => "perturbed_at",
            Self::Dichotomy => "dichotomy",
            Self::Omega => "omega",
            Self::ParabolicBounds => "parabolic_bounds",
            Self::Heat => "heat",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ode: f64,
    pub sign: f64,
    /// Difference identity bound in units of `ode`.
    pub identity_factor: f64,
    pub composition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode: 1e-8,
            sign: 1e-8,
            identity_factor: 10.0,
            composition: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlan {
    pub trials: usize,
    pub vectors: usize,
    pub starts: usize,
    pub bases: usize,
    pub sphere: usize,
    pub suite: usize,
    pub battery: usize,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            trials: 100,
            vectors: 1000,
            starts: 50,
            bases: 2,
            sphere: 2000,
            suite: 24,
            battery: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizons {
    pub orbit: f64,
    pub splitting: f64,
    pub omega: f64,
    pub parabolic: f64,
    pub linearized: f64,
}

impl Default for Horizons {
    fn default() -> Self {
        Self {
            orbit: 20.0,
            splitting: 20.0,
            omega: 2000.0,
            parabolic: 20.0,
            linearized: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeSettings {
    pub delta: f64,
    pub lambda1: Option<f64>,
    pub n0_rule: N0Rule,
    /// Perturbation size for `perturbed_at`.
    pub eps: f64,
    pub eps_grid: Option<Vec<f64>>,
    pub perturbation_seeds: usize,
}

impl Default for ConeSettings {
    fn default() -> Self {
        Self {
            delta: 0.01,
            lambda1: None,
            n0_rule: N0Rule::Truncation,
            eps: 0.0,
            eps_grid: None,
            perturbation_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSampler {
    /// States are drawn uniformly from `[-half_width, half_width]^n`.
    pub half_width: f64,
    /// Scalar starts for the dichotomy check.
    pub start_range: (f64, f64),
    pub x0: Option<Vec<f64>>,
}

impl Default for InitialSampler {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            start_range: (1.0, 3.0),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaSettings {
    pub eta: f64,
    pub eta_state: f64,
    pub transient_cut: f64,
    pub rebase_time: f64,
    pub fibers: usize,
    pub cover_tol: f64,
    pub doubling: bool,
}

impl Default for OmegaSettings {
    fn default() -> Self {
        Self {
            eta: 0.1,
            eta_state: 1e-2,
            transient_cut: 100.0,
            rebase_time: 10.0,
            fibers: 16,
            cover_tol: 1e-3,
            doubling: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub system: SystemConfig,
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub samples: SamplePlan,
    #[serde(default)]
    pub horizons: Horizons,
    #[serde(default)]
    pub cones: ConeSettings,
    #[serde(default)]
    pub initial: InitialSampler,
    #[serde(default)]
    pub omega: OmegaSettings,
    #[serde(default)]
    pub output_dir: Option<String>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("linear-2d", include_str!("../configs/linear-2d.json")),
    ("linear-test", include_str!("../configs/linear-test.json")),
    ("chain5", include_str!("../configs/chain5.json")),
    ("control", include_str!("../configs/control.json")),
    ("pitchfork", include_str!("../configs/pitchfork.json")),
    ("nonlocal", include_str!("../configs/nonlocal.json")),
    ("chemotaxis", include_str!("../configs/chemotaxis.json")),
    ("heat", include_str!("../configs/heat.json")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::config("name", format!("no bundled config named {name:?}")))?;
    ExperimentConfig::from_json(text, name)
}

/// Bundled configs of the default suite, in a fixed order.
pub fn default_suite() -> Vec<ExperimentConfig> {
    bundled_names().into_iter().map(|n| bundled(n).expect("bundled configs parse")).collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("schema_version", format!("expected {SCHEMA_VERSION}, found {}", self.schema_version)));
        }
        if self.checks.is_empty() {
            return Err(Error::config("checks", "at least one check is required"));
        }
        let t = &self.tolerances;
        for (name, v) in [("ode", t.ode), ("sign", t.sign), ("identity_factor", t.identity_factor), ("composition", t.composition)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("tolerances.{name}"), "must be positive"));
            }
        }
        if !(self.cones.delta > 0.0 && self.cones.delta < 1.0) {
            return Err(Error::config("cones.delta", "must lie in (0, 1)"));
        }
        if !(self.cones.eps >= 0.0) {
            return Err(Error::config("cones.eps", "must be non-negative"));
        }
        let sys = self.build_system()?;
        let parabolic = matches!(sys, BuiltSystem::Parabolic(_));
        for (k, c) in self.checks.iter().enumerate() {
            let ok = match c {
                CheckKind::ZeroNumber | CheckKind::ParabolicBounds => parabolic,
                CheckKind::Heat => matches!(self.system, SystemConfig::Heat { .. }),
                CheckKind::Dichotomy => !parabolic && sys.as_dyn().dim() == 1,
                _ => !parabolic || matches!(c, CheckKind::Cocycle),
            };
            if !ok {
                return Err(Error::config(format!("checks[{k}]"), format!("{} does not apply to this system", c.name())));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<BuiltSystem> {
        Ok(match &self.system {
            SystemConfig::LinearTest => BuiltSystem::Linear(linear_test_system()),
            SystemConfig::Linear { matrix } => BuiltSystem::Linear(LinearSystem::from_rows(matrix)?),
            SystemConfig::Control => BuiltSystem::Linear(non_cooperative_control()),
            SystemConfig::Tridiag { preset, n, amplitude, spec } => {
                let s = match (spec, preset) {
                    (Some(s), None) => s.clone(),
                    (None, Some(p)) => match p {
                        TridiagPreset::Chain => default_chain(n.unwrap_or(5), amplitude.unwrap_or(0.05)),
                        TridiagPreset::CubicPair => default_cubic_pair(),
                        TridiagPreset::Pitchfork => default_pitchfork(),
                        TridiagPreset::ForcedLinear => default_forced_linear(),
                    },
                    _ => return Err(Error::config("system", "exactly one of preset and spec is required")),
                };
                s.validate()?;
                BuiltSystem::Tridiag(s)
            }
            SystemConfig::ParabolicNonlocal { n, eps, spec } => {
                let s = spec.clone().unwrap_or_else(|| default_nonlocal(*n, *eps));
                BuiltSystem::Parabolic(semidiscretize(&s)?)
            }
            SystemConfig::ParabolicChemotaxis { n, eps, spec } => {
                let s = spec.clone().unwrap_or_else(|| default_chemotaxis(*n, *eps));
                BuiltSystem::Parabolic(semidiscretize(&s)?)
            }
            SystemConfig::Heat { n } => BuiltSystem::Parabolic(semidiscretize(&heat(*n, BoundaryCondition::Neumann))?),
        })
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub enum BuiltSystem {
    Linear(LinearSystem),
    Tridiag(TridiagSpec),
    Parabolic(ParabolicSystem),
}

impl BuiltSystem {
    pub fn as_dyn(&self) -> &dyn ForcedSystem {
        match self {
            Self::Linear(s) => s,
            Self::Tridiag(s) => s,
            Self::Parabolic(s) => s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Headline margin (positive on pass), if the check has one.
    pub margin: Option<f64>,
    pub trials: usize,
    pub error: Option<String>,
    pub details: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportBody {
    pub schema_version: u32,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub csv: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub body: ReportBody,
    /// Wall-clock time per check; not part of the deterministic body.
    pub timing_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl RunReport {
    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.file), &a.csv)?;
        }
        Ok(())
    }
}

struct Outcome {
    passed: bool,
    margin: Option<f64>,
    trials: usize,
    details: Value,
    artifacts: Vec<Artifact>,
}

impl Outcome {
    fn new(passed: bool, margin: Option<f64>, trials: usize, details: Value) -> Self {
        Self {
            passed,
            margin,
            trials,
            details,
            artifacts: Vec::new(),
        }
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    sys: BuiltSystem,
    tracks: OnceLock<std::result::Result<Vec<SplittingTrack>, String>>,
    params: OnceLock<std::result::Result<ConeParams, String>>,
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, hw: f64) -> Vec<f64> {
    (0..n).map(|_| hw * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn random_torus(rng: &mut ChaCha8Rng, m: usize) -> TorusPoint {
    TorusPoint::new((0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect())
}

/// Smooth initial profile `sum_k a_k cos(k pi x)`, `k <= 3`.
fn random_profile(rng: &mut ChaCha8Rng, nodes: &[f64], hw: f64) -> Vec<f64> {
    let a: Vec<f64> = (0..4).map(|_| hw * (2.0 * rng.random::<f64>() - 1.0) / 2.0).collect();
    nodes
        .iter()
        .map(|&x| a.iter().enumerate().map(|(k, ak)| ak * (k as f64 * std::f64::consts::PI * x).cos()).sum())
        .collect()
}

fn initial_state(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let hw = ctx.cfg.initial.half_width;
    match &ctx.sys {
        BuiltSystem::Parabolic(p) => random_profile(rng, p.nodes(), hw),
        s => random_state(rng, s.as_dyn().dim(), hw),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_cocycle(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let sys = ctx.sys.as_dyn();
    let tol = ctx.cfg.tolerances.ode;
    let bound = ctx.cfg.tolerances.identity_factor * tol;
    let comp_tol = ctx.cfg.tolerances.composition;
    let times = [0.5, 1.0, 2.0, 5.0];
    let seeds: Vec<u64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..ctx.cfg.samples.trials).map(|_| rng.random()).collect()
    };
    let results: Vec<Result<(f64, f64)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = initial_state(ctx, &mut rng);
            let y = initial_state(ctx, &mut rng);
            let z = CocyclePoint::new(sys, x, y, random_torus(&mut rng, sys.rotation().len()))?;
            let d = z.difference();
            let v: Vec<f64> = (0..d.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let mut worst_id: f64 = 0.0;
            let mut worst_comp: f64 = 0.0;
            for &t in &times {
                let td = propagate(sys, &z, &d, t, tol)?;
                let zt = advance(sys, &z, t, tol)?;
                let diff = zt.difference();
                worst_id = worst_id.max(td.iter().zip(&diff).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                // T(t + 1/2, z) v = T(t, z . 1/2) T(1/2, z) v
                let whole = propagate(sys, &z, &v, t + 0.5, tol)?;
                let half = propagate(sys, &z, &v, 0.5, tol)?;
                let z_half = advance(sys, &z, 0.5, tol)?;
                let parts = propagate(sys, &z_half, &half, t, tol)?;
                let res = whole.iter().zip(&parts).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / inf_norm(&whole).max(1.0);
                worst_comp = worst_comp.max(res);
            }
            Ok((worst_id, worst_comp))
        })
        .collect();
    let mut worst_id: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    for r in results {
        let (a, b) = r?;
        worst_id = worst_id.max(a);
        worst_comp = worst_comp.max(b);
    }
    let margin = (bound - worst_id).min(comp_tol - worst_comp);
    Ok(Outcome::new(
        margin >= 0.0,
        Some(margin),
        seeds.len() * times.len(),
        json!({ "identity_residual": worst_id, "identity_bound": bound, "composition_residual": worst_comp, "composition_bound": comp_tol }),
    ))
}

fn check_sigma(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let sys = ctx.sys.as_dyn();
    let gauge = sys.gauge();
    let tol = ctx.cfg.tolerances.ode;
    let sign_tol = ctx.cfg.tolerances.sign;
    let grid = uniform_grid(0.0, ctx.cfg.horizons.orbit, 0.05);
    let seeds: Vec<u64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..ctx.cfg.samples.trials).map(|_| rng.random()).collect()
    };
    let res: Vec<Result<(usize, usize)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let th = random_torus(&mut rng, sys.rotation().len());
            let x = initial_state(ctx, &mut rng);
            let y = initial_state(ctx, &mut rng);
            let ox = orbit_of(sys, &th, &x, (grid[0], *grid.last().unwrap()), 0.05, tol)?;
            let oy = orbit_of(sys, &th, &y, (grid[0], *grid.last().unwrap()), 0.05, tol)?;
            let mut last: Option<usize> = None;
            let (mut regular, mut violations) = (0, 0);
            for (a, b) in ox.states.iter().zip(&oy.states) {
                let v: Vec<f64> = a.iter().zip(b).zip(&gauge).map(|((p, q), g)| (p - q) * g).collect();
                let s = sigma(&v, sign_tol);
                if !s.regular {
                    continue;
                }
                regular += 1;
                if last.is_some_and(|l| s.sigma > l) {
                    violations += 1;
                }
                last = Some(s.sigma);
            }
            Ok((regular, violations))
        })
        .collect();
    let (mut regular, mut violations) = (0, 0);
    for r in res {
        let (a, b) = r?;
        regular += a;
        violations += b;
    }
    Ok(Outcome::new(violations == 0, Some(0.0 - violations as f64), regular, json!({ "orbits": seeds.len(), "regular_samples": regular, "violations": violations })))
}

fn check_zero_number(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let BuiltSystem::Parabolic(sys) = &ctx.sys else { unreachable!("validated") };
    let tol = ctx.cfg.tolerances.ode;
    let runs = 20;
    let grid = uniform_grid(0.0, ctx.cfg.horizons.linearized, ctx.cfg.horizons.linearized / 40.0);
    let seeds: Vec<u64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..runs).map(|_| rng.random()).collect()
    };
    let res: Vec<Result<(usize, usize)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let th = random_torus(&mut rng, sys.rotation().len());
            let u1 = sys.grid(random_profile(&mut rng, sys.nodes(), ctx.cfg.initial.half_width))?;
            let u2 = sys.grid(random_profile(&mut rng, sys.nodes(), ctx.cfg.initial.half_width))?;
            let path = linearized_parabolic(sys, &th, &u1, &u2, None, &grid, 16, tol)?;
            let mut last: Option<usize> = None;
            let (mut simple, mut violations) = (0, 0);
            for v in &path.v {
                let z = zero_number(v, ctx.cfg.tolerances.sign);
                if !z.all_simple {
                    continue;
                }
                simple += 1;
                if last.is_some_and(|l| z.z > l) {
                    violations += 1;
                }
                last = Some(z.z);
            }
            Ok((simple, violations))
        })
        .collect();
    let (mut simple, mut violations) = (0, 0);
    for r in res {
        let (a, b) = r?;
        simple += a;
        violations += b;
    }
    Ok(Outcome::new(violations == 0, Some(0.0 - violations as f64), simple, json!({ "runs": runs, "n": sys.spec.n, "simple_samples": simple, "violations": violations })))
}

fn battery_plan(ctx: &Ctx, seed: u64) -> BatteryPlan {
    BatteryPlan {
        samples: ctx.cfg.samples.battery,
        state_half_width: ctx.cfg.initial.half_width,
        seed,
        ..BatteryPlan::default()
    }
}

fn check_battery(ctx: &Ctx, seed: u64, control: bool) -> Result<Outcome> {
    let plan = battery_plan(ctx, seed);
    let report = if control {
        axiom_battery(&non_cooperative_control(), &plan)
    } else {
        axiom_battery(ctx.sys.as_dyn(), &plan)
    };
    let h4 = report.get("H4").map(|r| r.passed()).unwrap_or(false);
    let margin = report
        .results
        .iter()
        .filter(|r| matches!(r.status, AxiomStatus::Pass))
        .map(|r| r.worst_margin)
        .filter(|m| m.is_finite())
        .fold(f64::INFINITY, f64::min);
    let passed = if control { !h4 } else { report.passed() };
    let trials = report.results.iter().map(|r| r.trials).sum();
    Ok(Outcome::new(passed, margin.is_finite().then_some(margin), trials, serde_json::to_value(&report)?))
}

fn tracks<'a>(ctx: &'a Ctx, seed: u64) -> Result<&'a Vec<SplittingTrack>> {
    let r = ctx.tracks.get_or_init(|| {
        let sys = ctx.sys.as_dyn();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases: Vec<(CocyclePoint, u64)> = (0..ctx.cfg.samples.bases.max(1))
            .map(|_| {
                let x = initial_state(ctx, &mut rng);
                let y = initial_state(ctx, &mut rng);
                let th = random_torus(&mut rng, sys.rotation().len());
                CocyclePoint::new(sys, x, y, th).map(|z| (z, rng.random()))
            })
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?;
        bases
            .par_iter()
            .map(|(z, s)| {
                let plan = SplittingPlan {
                    horizon: ctx.cfg.horizons.splitting,
                    tol: ctx.cfg.tolerances.ode.min(1e-10),
                    seed: *s,
                    ..SplittingPlan::default()
                };
                compute_splitting(sys, z, &plan)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())
    });
    r.as_ref().map_err(|e| Error::Precondition(format!("splitting failed: {e}")))
}

fn params<'a>(ctx: &'a Ctx, seed: u64) -> Result<&'a ConeParams> {
    let r = ctx.params.get_or_init(|| {
        let tr = tracks(ctx, seed).map_err(|e| e.to_string())?;
        let plan = ConstantsPlan {
            delta: ctx.cfg.cones.delta,
            lambda1: ctx.cfg.cones.lambda1,
            n0_rule: ctx.cfg.cones.n0_rule,
            delta0: None,
            delta1: None,
        };
        compute_constants(tr, &plan).map_err(|e| e.to_string())
    });
    r.as_ref().map_err(|e| Error::InfeasibleParameters(e.clone()))
}

fn check_splitting(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let tr = tracks(ctx, seed)?;
    let gauge = ctx.sys.as_dyn().gauge();
    let n = ctx.sys.as_dyn().dim();
    let mut sep: f64 = f64::INFINITY;
    let mut inv: f64 = 0.0;
    let mut idem: f64 = 0.0;
    let mut restart: f64 = 0.0;
    let mut cone_ok = true;
    let mut cone_trials = 0;
    for (k, t) in tr.iter().enumerate() {
        for i in 1..n {
            sep = sep.min(separation_inequality_margin(t, i, 200, seed + k as u64));
            inv = inv.max(bundle_invariance_angle(t, i, 5));
        }
        idem = idem.max(t.fibers.iter().map(|f| f.idempotency_error()).fold(0.0, f64::max));
        restart = restart.max(t.restart_angle);
        let c = splitting_cone_check(t.base(), &gauge, 200, ctx.cfg.tolerances.sign, seed + 100 + k as u64);
        cone_ok &= c.passed();
        cone_trials += c.trials;
    }
    let passed = sep >= -1e-9 && inv <= 1e-5 && idem <= 1e-10 && restart <= 1e-6 && cone_ok;
    let mut csv = String::from("base,index,exponent,gap,m\n");
    for (k, t) in tr.iter().enumerate() {
        for i in 0..n {
            let (g, m) = if i + 1 < n { (t.gammas[i], t.m_consts[i]) } else { (f64::NAN, f64::NAN) };
            csv.push_str(&format!("{k},{},{},{g},{m}\n", i + 1, t.exponents[i]));
        }
    }
    let mut out = Outcome::new(
        passed,
        Some(sep),
        tr.len(),
        json!({
            "exponents": tr.iter().map(|t| t.exponents.clone()).collect::<Vec<_>>(),
            "gammas": tr.iter().map(|t| t.gammas.clone()).collect::<Vec<_>>(),
            "m": tr.iter().map(|t| t.m_consts.clone()).collect::<Vec<_>>(),
            "separation_log_margin": sep,
            "invariance_angle": inv,
            "idempotency_error": idem,
            "restart_angle": restart,
            "cone_verdicts_passed": cone_ok,
            "cone_verdict_trials": cone_trials,
        }),
    );
    out.artifacts.push(Artifact { file: "splitting.csv".into(), csv });
    Ok(out)
}

fn check_constants(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let tr = tracks(ctx, seed)?;
    let p = params(ctx, seed)?;
    let sys = ctx.sys.as_dyn();
    let bases: Vec<_> = tr.iter().map(|t| t.base()).collect();
    let deltas = find_delta0_delta1(
        &bases,
        p.n0,
        &sys.gauge(),
        &DeltaSearchPlan {
            samples: ctx.cfg.samples.sphere,
            seed,
            ..Default::default()
        },
    );
    let extra = 3;
    let window_needed = p.t1.ceil() as usize + extra;
    let transport = if tr[0].window() >= window_needed {
        transport_check(&tr[0], p, ctx.cfg.samples.vectors, extra, seed)?
    } else {
        let plan = SplittingPlan {
            horizon: ctx.cfg.horizons.splitting,
            window: window_needed,
            tol: ctx.cfg.tolerances.ode.min(1e-10),
            seed,
            ..SplittingPlan::default()
        };
        let long = compute_splitting(sys, &tr[0].base().z, &plan)?;
        transport_check(&long, p, ctx.cfg.samples.vectors, extra, seed)?
    };
    let (d0, d1, delta_ok, delta_err) = match &deltas {
        Ok(d) => (Some(d.delta0), Some(d.delta1), p.delta < d.delta0.min(d.delta1 / (2.0 + d.delta1)), None),
        Err(e) => (None, None, false, Some(e.to_string())),
    };
    let passed = p.lambda0 < 1.0 && p.t1_slack <= 1e-6 && p.t0_slack <= 1e-6 && transport.passed() && delta_ok;
    Ok(Outcome::new(
        passed,
        Some(transport.worst_margin),
        transport.trials,
        json!({
            "params": p,
            "delta0": d0,
            "delta1": d1,
            "delta_feasible": delta_ok,
            "delta_error": delta_err,
            "delta_samples": ctx.cfg.samples.sphere,
            "transport": transport,
        }),
    ))
}

fn long_track(ctx: &Ctx, seed: u64, p: &ConeParams) -> Result<SplittingTrack> {
    let tr = tracks(ctx, seed)?;
    let plan = SplittingPlan {
        horizon: ctx.cfg.horizons.splitting,
        window: (2.0 * p.t0).ceil() as usize + 1,
        tol: ctx.cfg.tolerances.ode.min(1e-10),
        seed,
        ..SplittingPlan::default()
    };
    compute_splitting(ctx.sys.as_dyn(), &tr[0].base().z, &plan)
}

fn check_perturbed(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let p = params(ctx, seed)?;
    let tr = long_track(ctx, seed, p)?;
    let grid = ctx.cfg.cones.eps_grid.clone().unwrap_or_else(default_epsilon_grid);
    let plan = SuitePlan { samples: ctx.cfg.samples.suite, seed };
    let s = search_epsilon1(p, &tr, &grid, ctx.cfg.cones.perturbation_seeds, &plan)?;
    let passed = s.validation_passed() && s.stress_violations() > 0;
    let margin = s
        .validation
        .iter()
        .flat_map(|r| r.checks.iter())
        .filter(|c| c.trials > 0)
        .map(|c| c.worst_margin)
        .fold(f64::INFINITY, f64::min);
    let summarize = |r: &crate::separation::SuiteReport| {
        json!({
            "eps": r.eps,
            "seed": r.seed,
            "perturbation_norm": r.perturbation_norm,
            "checks": r.checks,
        })
    };
    Ok(Outcome::new(
        passed,
        margin.is_finite().then_some(margin),
        s.validation.iter().flat_map(|r| r.checks.iter()).map(|c| c.trials).sum(),
        json!({
            "eps1": s.eps1,
            "validation": s.validation.iter().map(summarize).collect::<Vec<_>>(),
            "stress": summarize(&s.stress),
            "stress_violations": s.stress_violations(),
            "grid_points_searched": s.search.len() / ctx.cfg.cones.perturbation_seeds.max(1),
        }),
    ))
}

fn check_perturbed_at(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let p = params(ctx, seed)?;
    let tr = long_track(ctx, seed, p)?;
    let r = perturbed_cone_suite(p, &tr, ctx.cfg.cones.eps, &SuitePlan { samples: ctx.cfg.samples.suite, seed })?;
    let inv = r.check("invariance").map_or(f64::NAN, |c| c.worst_margin);
    Ok(Outcome::new(r.passed(), Some(inv), r.checks.iter().map(|c| c.trials).sum(), serde_json::to_value(&r)?))
}

fn check_dichotomy(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let sys = ctx.sys.as_dyn();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ctx.cfg.initial.start_range;
    let starts: Vec<f64> = (0..ctx.cfg.samples.starts).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let th = random_torus(&mut rng, sys.rotation().len());
    let mut pairs = Vec::new();
    for a in 0..starts.len() {
        for b in a + 1..starts.len() {
            pairs.push((starts[a], starts[b]));
        }
    }
    let plan = DichotomyPlan {
        horizon: ctx.cfg.horizons.orbit,
        tol: ctx.cfg.tolerances.ode.min(1e-10),
        ..Default::default()
    };
    let fam = ConeFamily::SignChange { sign_tol: ctx.cfg.tolerances.sign };
    let verdicts: Vec<_> = pairs
        .par_iter()
        .map(|(x, y)| dichotomy_check(sys, &th, &[*x], &[*y], fam, None, &plan))
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut crossings = 0;
    let mut indices: BTreeMap<usize, usize> = BTreeMap::new();
    for v in &verdicts {
        *counts.entry(format!("{:?}", v.branch)).or_default() += 1;
        crossings += v.hyperplane_crossings;
        if let Some(i) = v.lock_index {
            *indices.entry(i).or_default() += 1;
        }
    }
    let locked = verdicts.iter().filter(|v| v.branch == Branch::ConeLock && v.lock_index == Some(1)).count();
    let passed = locked == verdicts.len() && crossings == 0;
    Ok(Outcome::new(
        passed,
        Some(locked as f64 - verdicts.len() as f64 - crossings as f64),
        verdicts.len(),
        json!({ "pairs": verdicts.len(), "branches": counts, "lock_indices": indices, "hyperplane_crossings": crossings }),
    ))
}

fn check_omega(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let sys = ctx.sys.as_dyn();
    let o = &ctx.cfg.omega;
    let plan = OmegaPlan {
        eta: o.eta,
        eta_state: o.eta_state,
        transient_cut: o.transient_cut,
        rebase_time: o.rebase_time,
        fibers: o.fibers,
        tol: ctx.cfg.tolerances.ode.min(1e-10),
        seed,
        ..OmegaPlan::default()
    };
    let x0 = ctx.cfg.initial.x0.clone().unwrap_or_else(|| vec![0.0; sys.dim()]);
    let th = TorusPoint::zero(sys.rotation().len());
    let h = ctx.cfg.horizons.omega;
    let cap = capture_from(sys, &th, &x0, h, 0.1, &plan)?;
    let rep = classify_trichotomy(&cap);
    let cover = almost_one_cover_test(&cap, o.cover_tol);
    let doubled = if o.doubling {
        let cap2 = capture_from(sys, &th, &x0, 2.0 * h, 0.1, &plan)?;
        Some((classify_trichotomy(&cap2), almost_one_cover_test(&cap2, o.cover_tol)))
    } else {
        None
    };
    let conclusive_ok = |r: &crate::omega::OmegaReport| r.classification != Classification::Inconclusive && r.minimal_count <= 2;
    let monotone = doubled.as_ref().is_none_or(|(_, c)| c.fraction_single >= cover.fraction_single);
    let passed = conclusive_ok(&rep) && doubled.as_ref().is_none_or(|(r, _)| conclusive_ok(r)) && monotone;
    let mut csv = Vec::new();
    cap.write_csv(&mut csv)?;
    let mut out = Outcome::new(
        passed,
        Some(cover.fraction_single),
        cap.clouds.iter().map(|c| c.points.len()).sum(),
        json!({
            "classification": rep.classification,
            "minimal_count": rep.minimal_count,
            "fraction_single": cover.fraction_single,
            "max_fiber_diameter": cover.max_fiber_diameter,
            "gap": rep.gap,
            "connector_observed": rep.connector_observed,
            "alpha_limits": rep.alpha_limits,
            "doubled": doubled.as_ref().map(|(r, c)| json!({
                "classification": r.classification,
                "minimal_count": r.minimal_count,
                "fraction_single": c.fraction_single,
                "max_fiber_diameter": c.max_fiber_diameter,
            })),
            "fiber_stats": rep.fiber_stats,
        }),
    );
    out.artifacts.push(Artifact {
        file: "omega_clouds.csv".into(),
        csv: String::from_utf8(csv).expect("csv is utf-8"),
    });
    Ok(out)
}

fn check_parabolic_bounds(ctx: &Ctx, seed: u64) -> Result<Outcome> {
    let BuiltSystem::Parabolic(sys) = &ctx.sys else { unreachable!("validated") };
    let spec = &sys.spec;
    let d = spec
        .dissipativity
        .clone()
        .ok_or_else(|| Error::config("system.spec.dissipativity", "bounds need dissipativity data"))?;
    let bounds = dissipativity_bounds(spec, &d);
    let tol = ctx.cfg.tolerances.ode;
    let h = ctx.cfg.horizons.parabolic;
    let grid = uniform_grid(0.0, h, 0.1);
    let seeds: Vec<u64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..ctx.cfg.samples.starts).map(|_| rng.random()).collect()
    };
    let chemo = matches!(spec.perturbation, Perturbation::Chemotaxis { .. });
    let c_bound = chemo_bound_constant();
    // (limsup |u|, worst v/u ratio, worst elliptic residual)
    let runs: Vec<Result<(f64, f64, f64)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let th = random_torus(&mut rng, sys.rotation().len());
            let u0 = random_profile(&mut rng, sys.nodes(), 2.0 * ctx.cfg.initial.half_width);
            let states = sys.solve(&th, &u0, &grid, tol)?;
            let mut limsup: f64 = 0.0;
            let mut ratio: f64 = 0.0;
            let mut resid: f64 = 0.0;
            for (t, u) in grid.iter().zip(&states) {
                let norm = inf_norm(u);
                if *t >= 0.5 * h {
                    limsup = limsup.max(norm);
                }
                if chemo {
                    let g = sys.grid(u.clone())?;
                    let v = solve_chemo_v(&g)?;
                    if norm > 0.0 {
                        ratio = ratio.max(inf_norm(&v.values) / norm);
                    }
                    resid = resid.max(elliptic_residual(&g, &v));
                }
            }
            Ok((limsup, ratio, resid))
        })
        .collect();
    let (mut limsup, mut ratio, mut resid): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for r in runs {
        let (a, b, c) = r?;
        limsup = limsup.max(a);
        ratio = ratio.max(b);
        resid = resid.max(c);
    }
    let (passed, margin, details) = if chemo {
        let margin = (c_bound - ratio).min(1e-6 - resid);
        (
            margin >= 0.0,
            margin,
            json!({ "kind": "chemotaxis", "max_v_over_u": ratio, "c": c_bound, "max_elliptic_residual": resid, "limsup_u": limsup, "m1_star": bounds.m1_star }),
        )
    } else {
        let m_star = bounds
            .m_star
            .ok_or_else(|| Error::config("system.eps", "the nonlocal bound is infeasible"))?;
        let margin = 1.025 * m_star - limsup;
        (margin >= 0.0, margin, json!({ "kind": "nonlocal", "limsup_u": limsup, "m_star": m_star, "allowed": 1.025 * m_star }))
    };
    Ok(Outcome::new(passed, Some(margin), seeds.len(), details))
}

fn check_heat(ctx: &Ctx) -> Result<Outcome> {
    let SystemConfig::Heat { n } = ctx.cfg.system else { unreachable!("validated") };
    let tol = ctx.cfg.tolerances.ode.min(1e-11);
    let ns = [n, 2 * n, 4 * n];
    let mut rows = Vec::new();
    let mut worst: f64 = f64::INFINITY;
    for bc in [BoundaryCondition::Neumann, BoundaryCondition::Dirichlet] {
        let errs: Vec<f64> = ns.iter().map(|&k| heat_error(k, bc, 0.1, tol)).collect::<Result<_>>()?;
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
        for r in &ratios {
            worst = worst.min(0.5 - (r - 4.0).abs());
        }
        rows.push(json!({ "bc": bc, "n": ns, "errors": errs, "ratios": ratios }));
    }
    Ok(Outcome::new(worst >= 0.0, Some(worst), 6, json!({ "convergence": rows })))
}

fn run_check(ctx: &Ctx, kind: CheckKind, seed: u64) -> Result<Outcome> {
    match kind {
        CheckKind::Cocycle => check_cocycle(ctx, seed),
        CheckKind::Sigma => check_sigma(ctx, seed),
        CheckKind::ZeroNumber => check_zero_number(ctx, seed),
        CheckKind::Battery => check_battery(ctx, seed, false),
        CheckKind::BatteryControl => check_battery(ctx, seed, true),
        CheckKind::Splitting => check_splitting(ctx, seed),
        CheckKind::Constants => check_constants(ctx, seed),
        CheckKind::Perturbed => check_perturbed(ctx, seed),
        CheckKind::PerturbedAt => check_perturbed_at(ctx, seed),
        CheckKind::Dichotomy => check_dichotomy(ctx, seed),
        CheckKind::Omega => check_omega(ctx, seed),
        CheckKind::ParabolicBounds => check_parabolic_bounds(ctx, seed),
        CheckKind::Heat => check_heat(ctx),
    }
}

/// Runs every configured check; failures and runtime errors are recorded
/// per check without stopping the others.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let ctx = Ctx {
        cfg,
        sys: cfg.build_system()?,
        tracks: OnceLock::new(),
        params: OnceLock::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // splitting-based checks share one seed so they see the same tracks
    let shared: u64 = rng.random();
    let mut checks = Vec::new();
    let mut timing = BTreeMap::new();
    let mut artifacts = Vec::new();
    for &kind in &cfg.checks {
        let own: u64 = rng.random();
        let seed = match kind {
            CheckKind::Splitting | CheckKind::Constants | CheckKind::Perturbed | CheckKind::PerturbedAt => shared,
            _ => own,
        };
        let start = Instant::now();
        let outcome = run_check(&ctx, kind, seed);
        timing.insert(kind.name().to_string(), start.elapsed().as_secs_f64() * 1e3);
        checks.push(match outcome {
            Ok(o) => {
                artifacts.extend(o.artifacts);
                CheckOutcome {
                    name: kind.name().into(),
                    passed: o.passed,
                    margin: o.margin,
                    trials: o.trials,
                    error: None,
                    details: o.details,
                }
            }
            Err(e) => CheckOutcome {
                name: kind.name().into(),
                passed: false,
                margin: None,
                trials: 0,
                error: Some(e.to_string()),
                details: Value::Null,
            },
        });
    }
    Ok(RunReport {
        body: ReportBody {
            schema_version: SCHEMA_VERSION,
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        },
        timing_ms: timing,
        artifacts,
    })
}

/// Runs `f` on a pool of `workers` threads (`None`: the global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Eps,
    N,
    Horizon,
    Delta,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(Self::Eps),
            "n" | "N" => Ok(Self::N),
            "horizon" => Ok(Self::Horizon),
            "delta" => Ok(Self::Delta),
            _ => Err(Error::config("axis", format!("unknown axis {s:?} (eps, n, horizon, delta)"))),
        }
    }
}

/// Copy of `cfg` with the axis set to `value`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        Axis::Eps => match &mut c.system {
            SystemConfig::ParabolicNonlocal { eps, .. } | SystemConfig::ParabolicChemotaxis { eps, .. } => *eps = value,
            _ => c.cones.eps = value,
        },
        Axis::N => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::config("axis", "N values must be positive integers"));
            }
            match &mut c.system {
                SystemConfig::ParabolicNonlocal { n, .. } | SystemConfig::ParabolicChemotaxis { n, .. } | SystemConfig::Heat { n } => *n = value as usize,
                SystemConfig::Tridiag { n, preset: Some(TridiagPreset::Chain), .. } => *n = Some(value as usize),
                _ => return Err(Error::config("axis", "this system has no N parameter")),
            }
        }
        Axis::Horizon => {
            c.horizons.orbit = value;
            c.horizons.omega = value;
            c.horizons.parabolic = value;
        }
        Axis::Delta => c.cones.delta = value,
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// One entry per axis value; configuration errors are kept per row.
    pub reports: Vec<std::result::Result<RunReport, String>>,
}

impl SweepResult {
    pub fn summary_csv(&self) -> String {
        let names: Vec<String> = self
            .reports
            .iter()
            .find_map(|r| r.as_ref().ok())
            .map(|r| r.body.checks.iter().map(|c| c.name.clone()).collect())
            .unwrap_or_default();
        let mut out = format!("{:?},passed,error", self.axis).to_lowercase();
        for n in &names {
            out.push_str(&format!(",{n}_passed,{n}_margin"));
        }
        out.push('\n');
        for (v, r) in self.values.iter().zip(&self.reports) {
            match r {
                Ok(rep) => {
                    out.push_str(&format!("{v},{},", rep.body.passed));
                    for c in &rep.body.checks {
                        let m = c.margin.map(|m| m.to_string()).unwrap_or_default();
                        out.push_str(&format!(",{},{m}", c.passed));
                    }
                }
                Err(e) => out.push_str(&format!("{v},false,\"{}\"", e.replace('"', "'"))),
            }
            out.push('\n');
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.as_ref().is_ok_and(|r| r.body.passed))
    }
}

/// One run per axis value, concurrently; results keep the axis order.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, values: &[f64]) -> SweepResult {
    let reports = values
        .par_iter()
        .map(|&v| apply_axis(cfg, axis, v).and_then(|c| run(&c)).map_err(|e| e.to_string()))
        .collect();
    SweepResult {
        axis,
        values: values.to_vec(),
        reports,
    }
}

/// Runs every bundled config with its own seed (or `seed` for all of them).
pub fn run_suite(seed: Option<u64>) -> Result<Vec<RunReport>> {
    default_suite()
        .into_iter()
        .map(|mut c| {
            if let Some(s) = seed {
                c.seed = s;
            }
            run(&c)
        })
        .collect()
}

/// Eigen-decomposition subspaces of a symmetric matrix, eigenvalues descending.
pub fn symmetric_eigenframe(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&p, &q| e.eigenvalues[q].total_cmp(&e.eigenvalues[p]));
    let vals = idx.iter().map(|&k| e.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_validate() {
        for name in bundled_names() {
            let c = bundled(name).unwrap();
            assert_eq!(c.name, name);
        }
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = r#"{"schema_version":1,"name":"x","system":{"kind":"linear-test"},"checks":["splitting"]}"#;
        let e = ExperimentConfig::from_json(text, "inline").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn infeasible_eps_names_the_bound() {
        let text = r#"{"schema_version":1,"name":"x","seed":1,"system":{"kind":"parabolic-nonlocal","n":16,"eps":1.5},"checks":["parabolic_bounds"]}"#;
        let e = ExperimentConfig::from_json(text, "inline").unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e}");
        assert!(e.to_string().contains("eps"), "{e}");
    }

    #[test]
    fn incompatible_check_is_rejected() {
        let text = r#"{"schema_version":1,"name":"x","seed":1,"system":{"kind":"linear-test"},"checks":["heat"]}"#;
        let e = ExperimentConfig::from_json(text, "inline").unwrap_err();
        assert!(e.to_string().contains("checks[0]"), "{e}");
    }

    #[test]
    fn linear_2d_passes_quickly_and_deterministically() {
        let cfg = bundled("linear-2d").unwrap();
        let start = Instant::now();
        let a = run(&cfg).unwrap();
        assert!(start.elapsed().as_secs_f64() < 5.0);
        assert!(a.body.passed, "{}", a.body_json());
        let b = run(&cfg).unwrap();
        assert_eq!(a.body_json(), b.body_json());
    }

    #[test]
    fn single_point_sweep_matches_run() {
        let cfg = bundled("linear-2d").unwrap();
        let s = sweep(&cfg, Axis::Delta, &[cfg.cones.delta]);
        let r = run(&cfg).unwrap();
        assert_eq!(s.reports[0].as_ref().unwrap().body_json(), r.body_json());
    }

    #[test]
    fn runtime_errors_do_not_stop_siblings() {
        // a degenerate gap fails the splitting checks but not the cocycle check
        let text = r#"{"schema_version":1,"name":"x","seed":3,"system":{"kind":"linear","matrix":[[-1,0],[0,-1]]},"checks":["splitting","cocycle"],"samples":{"trials":5}}"#;
        let cfg = ExperimentConfig::from_json(text, "inline").unwrap();
        let r = run(&cfg).unwrap();
        assert!(r.body.checks[0].error.is_some());
        assert!(r.body.checks[1].passed);
    }
}
