//! Inverse homogenization: filtered, projected SIMP densities on a periodic
//! cell, updated by MMA with β continuation.

mod filter;
mod mma;

pub use filter::{heaviside_derivative, heaviside_projection, PeriodicFilter};
pub use mma::{Mma, MmaPoint, MmaStep};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{Homogenizer, DEFAULT_PENALTY};
use crate::laminate::{LoadSet, MaterialPair};
use crate::recon::Rank3Laminate;
use crate::unitcell::{map_laminate, DensityField, ParallelogramCell, DEFAULT_SUPERSAMPLE};

/// Volume excess tolerated at convergence.
pub const VOLUME_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaSchedule {
    pub initial: f64,
    pub factor: f64,
    pub interval: usize,
    pub cap: f64,
    /// Iterations to run at the cap before convergence is checked.
    pub stabilization: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self { initial: 1.0, factor: 2.0, interval: 50, cap: 64.0, stabilization: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopOptConfig {
    /// Filter radius in cell units.
    pub radius: f64,
    pub beta: BetaSchedule,
    pub p_simp: f64,
    pub max_iter: usize,
    pub move_limit: f64,
    /// Convergence threshold on the largest design change.
    pub conv_tol: f64,
    /// Volume fraction bound.
    pub f: f64,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub supersample: usize,
}

impl Default for TopOptConfig {
    fn default() -> Self {
        Self {
            radius: 0.025,
            beta: BetaSchedule::default(),
            p_simp: DEFAULT_PENALTY,
            max_iter: 500,
            move_limit: 0.2,
            conv_tol: 0.01,
            f: 0.5,
            seed: 0,
            nx: 100,
            ny: 100,
            supersample: DEFAULT_SUPERSAMPLE,
        }
    }
}

impl TopOptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nx < 2 || self.ny < 2 {
            return bad(format!("mesh must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        let h = 1.0 / self.nx.min(self.ny) as f64;
        if !(self.radius > h) {
            return bad(format!("filter radius {} must exceed the element size {h}", self.radius));
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return bad(format!("volume fraction must lie in (0, 1), got {}", self.f));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return bad(format!("move limit must lie in (0, 1], got {}", self.move_limit));
        }
        if !(self.p_simp >= 1.0) || !(self.conv_tol > 0.0) {
            return bad("penalty must be >= 1 and conv_tol positive".into());
        }
        let b = &self.beta;
        if !(b.initial >= 0.0 && b.factor >= 1.0 && b.cap >= b.initial) || b.interval == 0 {
            return bad(format!("invalid beta schedule {b:?}"));
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Mapped,
    Random,
    Homogeneous,
}

impl StartKind {
    pub const ALL: [StartKind; 3] = [StartKind::Mapped, StartKind::Random, StartKind::Homogeneous];

    pub fn name(self) -> &'static str {
        match self {
            StartKind::Mapped => "mapped",
            StartKind::Random => "random",
            StartKind::Homogeneous => "homogeneous",
        }
    }
}

impl std::str::FromStr for StartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapped" => Ok(StartKind::Mapped),
            "random" => Ok(StartKind::Random),
            "homogeneous" | "homog" => Ok(StartKind::Homogeneous),
            _ => Err(Error::Config(format!("unknown starting guess '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub beta: f64,
    pub objective: f64,
    pub volume: f64,
    pub max_design_change: f64,
}

#[derive(Debug, Clone)]
pub struct DesignState {
    pub cell: ParallelogramCell,
    pub nx: usize,
    pub ny: usize,
    /// Design variables.
    pub rho: Vec<f64>,
    pub rho_bar: Vec<f64>,
    /// Physical field.
    pub rho_hat: Vec<f64>,
    pub iteration: usize,
    pub beta: f64,
    pub history: Vec<IterationRecord>,
}

impl DesignState {
    /// Wraps design variables; the filtered and projected fields are filled
    /// in by the first evaluation.
    pub fn new(cell: ParallelogramCell, nx: usize, ny: usize, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != nx * ny {
            return Err(Error::InvalidMesh(format!("{} densities for a {nx}x{ny} mesh", rho.len())));
        }
        if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidMesh("densities must lie in [0, 1]".into()));
        }
        Ok(Self {
            cell,
            nx,
            ny,
            rho_bar: rho.clone(),
            rho_hat: rho.clone(),
            rho,
            iteration: 0,
            beta: 0.0,
            history: Vec::new(),
        })
    }

    pub fn physical_field(&self) -> Result<DensityField> {
        DensityField::new(self.nx, self.ny, self.rho_hat.clone(), self.cell.clone())
    }

    pub fn design_field(&self) -> Result<DensityField> {
        DensityField::new(self.nx, self.ny, self.rho.clone(), self.cell.clone())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Initial design for one of the three strategies.
pub fn starting_guess(kind: StartKind, laminate: Option<&Rank3Laminate>, config: &TopOptConfig) -> Result<DesignState> {
    config.validate()?;
    let (nx, ny) = (config.nx, config.ny);
    match kind {
        StartKind::Mapped => {
            let lam = laminate.ok_or_else(|| Error::Config("mapped starting guess needs a laminate".into()))?;
            let (field, _) = map_laminate(lam, nx, ny, config.supersample)?;
            DesignState::new(field.cell, nx, ny, field.rho)
        }
        StartKind::Random => {
            let cell = ParallelogramCell::unit_square();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let hi = (2.0 * config.f).min(1.0);
            let raw: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.0..=hi)).collect();
            let rho = PeriodicFilter::new(&cell, nx, ny, config.radius)?.apply(&raw);
            DesignState::new(cell, nx, ny, rho.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())
        }
        StartKind::Homogeneous => {
            let rho = (0..nx * ny)
                .map(|k| {
                    let x = ((k % nx) as f64 + 0.5) / nx as f64 - 0.5;
                    let y = ((k / nx) as f64 + 0.5) / ny as f64 - 0.5;
                    if x.hypot(y) < config.radius {
                        0.0
                    } else {
                        config.f
                    }
                })
                .collect();
            DesignState::new(ParallelogramCell::unit_square(), nx, ny, rho)
        }
    }
}

/// Objective and volume with their gradients with respect to the design
/// variables.
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub volume: f64,
    pub volume_gradient: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub rho_hat: Vec<f64>,
}

/// Filter, projection and homogenization of one design.
pub struct Evaluator<'a> {
    pub filter: PeriodicFilter,
    pub homogenizer: Homogenizer,
    loads: &'a LoadSet,
    mat: &'a MaterialPair,
    p_simp: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(state: &DesignState, loads: &'a LoadSet, mat: &'a MaterialPair, config: &TopOptConfig) -> Result<Self> {
        Ok(Self {
            filter: PeriodicFilter::new(&state.cell, state.nx, state.ny, config.radius)?,
            homogenizer: Homogenizer::new(&state.cell, state.nx, state.ny, mat.nu)?,
            loads,
            mat,
            p_simp: config.p_simp,
        })
    }

    /// Filtered and projected fields of `rho`.
    pub fn physical(&self, rho: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
        // the filter is a convex combination; clamping only removes round-off
        let rho_bar: Vec<f64> = self.filter.apply(rho).into_iter().map(|r| r.clamp(0.0, 1.0)).collect();
        let rho_hat = rho_bar.iter().map(|&r| heaviside_projection(r, beta).clamp(0.0, 1.0)).collect();
        (rho_bar, rho_hat)
    }

    pub fn evaluate(&self, rho: &[f64], beta: f64) -> Result<Evaluation> {
        let h = &self.homogenizer;
        let (rho_bar, rho_hat) = self.physical(rho, beta);
        let field = DensityField::new(h.nx, h.ny, rho_hat.clone(), h.cell.clone())?;
        let (objective, dc) = h.objective_and_sensitivities(&field, self.loads, self.mat, self.p_simp)?;
        let n = rho.len() as f64;
        let dh: Vec<f64> = rho_bar.iter().map(|&r| heaviside_derivative(r, beta)).collect();
        let gradient = self.filter.apply_transpose(&dc.iter().zip(&dh).map(|(a, b)| a * b).collect::<Vec<_>>());
        let volume_gradient = self.filter.apply_transpose(&dh.iter().map(|d| d / n).collect::<Vec<_>>());
        Ok(Evaluation { objective, gradient, volume: mean(&rho_hat), volume_gradient, rho_bar, rho_hat })
    }
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub state: DesignState,
    /// Objective of the final physical field.
    pub objective: f64,
    pub volume: f64,
    pub converged: bool,
    /// Iterations where MMA fell back to a steepest-descent step.
    pub fallback_steps: usize,
}

/// Runs the optimization loop from `start`.
///
/// β starts at the schedule's initial value and is multiplied every
/// `interval` iterations, or earlier when the design change drops below
/// `conv_tol`, and MMA restarts from its initial asymptotes after each
/// increase. Once at the cap the loop runs at least `stabilization`
/// iterations and then stops on the first small design change.
pub fn optimize(start: DesignState, loads: &LoadSet, mat: &MaterialPair, config: &TopOptConfig) -> Result<Optimized> {
    config.validate()?;
    let eval = Evaluator::new(&start, loads, mat, config)?;
    let n = start.rho.len();
    let mut state = start;
    let mut mma = Mma::new(n, 1, config.move_limit);
    let (lo, hi) = (vec![0.0; n], vec![1.0; n]);
    let sched = config.beta;
    let mut beta = sched.initial.min(sched.cap);
    let mut since_change = 0;
    let mut at_cap = 0;
    let mut scale = None;
    let mut converged = false;
    let mut fallback_steps = 0;
    for it in 1..=config.max_iter {
        let ev = eval.evaluate(&state.rho, beta)?;
        let s = *scale.get_or_insert(ev.objective.abs().max(f64::MIN_POSITIVE));
        let df0: Vec<f64> = ev.gradient.iter().map(|g| g / s).collect();
        let fval = [ev.volume / config.f - 1.0];
        let dfdx = [ev.volume_gradient.iter().map(|g| g / config.f).collect::<Vec<_>>()];
        let pt = MmaPoint { x: &state.rho, f0: ev.objective / s, df0: &df0, fval: &fval, dfdx: &dfdx };
        let step = mma.update(&pt, &lo, &hi)?;
        fallback_steps += step.fallback as usize;
        let change = step.x.iter().zip(&state.rho).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        state.history.push(IterationRecord {
            iter: it,
            beta,
            objective: ev.objective,
            volume: ev.volume,
            max_design_change: change,
        });
        state.rho = step.x;
        state.iteration = it;
        if beta < sched.cap {
            since_change += 1;
            if since_change >= sched.interval || change < config.conv_tol {
                beta = (beta * sched.factor).min(sched.cap);
                since_change = 0;
                // asymptotes adapted to the old projection overshoot on the new one
                mma = Mma::new(n, 1, config.move_limit);
            }
        } else {
            at_cap += 1;
            if at_cap >= sched.stabilization && change < config.conv_tol {
                converged = true;
                break;
            }
        }
    }
    let last = eval.evaluate(&state.rho, beta)?;
    state.rho_bar = last.rho_bar;
    state.rho_hat = last.rho_hat;
    state.beta = beta;
    Ok(Optimized { state, objective: last.objective, volume: last.volume, converged, fallback_steps })
}
