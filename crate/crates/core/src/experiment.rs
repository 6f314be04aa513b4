//! Parameter sweeps: bound, mapped laminate and optimized cells per load
//! parameter, for each starting guess.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::Homogenizer;
use crate::io;
use crate::laminate::{LoadSet, MaterialPair, MomentVector, StressCase};
use crate::moments::{optimize_moments, SolverOptions};
use crate::recon::{reconstruct, rotation_angle, Rank3Laminate};
use crate::topopt::{optimize, starting_guess, BetaSchedule, StartKind, TopOptConfig};
use crate::unitcell::{map_laminate, DensityField, DEFAULT_SUPERSAMPLE};

/// Four-case load set of the first three examples: a deviatoric and a
/// shear case weighted by `chi`, two uniaxial cases by `1 - chi`.
pub fn loads_examples123(chi: f64) -> Result<LoadSet> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::InvalidLoads(format!("chi must lie in [0, 1], got {chi}")));
    }
    let cases = [
        StressCase::new(-1.0, 1.0, 0.0, chi / 2.0),
        StressCase::new(0.0, 0.0, 1.0, chi / 2.0),
        StressCase::new(1.0, 0.0, 0.0, (1.0 - chi) / 2.0),
        StressCase::new(0.0, 1.0, 0.0, (1.0 - chi) / 2.0),
    ];
    LoadSet::new(cases.into_iter().filter(|c| c.weight > 0.0).collect())
}

/// Three unit uniaxial stresses at 0, chi and 2 chi degrees, equally weighted.
pub fn loads_example4(chi_degrees: f64) -> Result<LoadSet> {
    if !(0.0..=60.0).contains(&chi_degrees) {
        return Err(Error::InvalidLoads(format!("chi must lie in [0, 60] degrees, got {chi_degrees}")));
    }
    let phi = chi_degrees.to_radians();
    LoadSet::new((0..3).map(|k| StressCase::uniaxial(k as f64 * phi, 1.0 / 3.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// 1 to 4, or `None` for a custom load set.
    pub example: Option<u8>,
    /// Custom load cases, used when `example` is `None`.
    pub loads: Option<Vec<StressCase>>,
    pub chi: Vec<f64>,
    pub f: f64,
    /// Minimum length scale, twice the filter radius.
    pub lengthscale: f64,
    pub nx: usize,
    pub ny: usize,
    pub supersample: usize,
    pub starting_guesses: Vec<StartKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub max_iter: usize,
    pub beta: BetaSchedule,
    pub conv_tol: f64,
    pub move_limit: f64,
    pub p_simp: f64,
    /// Draw solid black on white.
    pub invert_images: bool,
    /// Report finished runs on stderr.
    pub verbose: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::example(1).expect("example 1 exists")
    }
}

fn grid(lo: f64, step: f64, count: usize) -> Vec<f64> {
    // rounded so the values print as written
    (0..count).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

impl ExperimentConfig {
    pub fn example(id: u8) -> Result<Self> {
        let t = TopOptConfig::default();
        let (chi, f, lengthscale) = match id {
            1 => (grid(0.0, 0.1, 11), 0.5, 0.05),
            2 => (grid(0.0, 0.1, 11), 0.5, 0.15),
            3 => (grid(0.0, 0.1, 11), 0.2, 0.05),
            4 => (grid(0.0, 5.0, 13), 0.25, 0.05),
            _ => return Err(Error::Config(format!("unknown example {id}, expected 1 to 4"))),
        };
        Ok(Self {
            example: Some(id),
            loads: None,
            chi,
            f,
            lengthscale,
            nx: 100,
            ny: 100,
            supersample: DEFAULT_SUPERSAMPLE,
            starting_guesses: StartKind::ALL.to_vec(),
            seed: 0,
            out: None,
            workers: 1,
            max_iter: t.max_iter,
            beta: t.beta,
            conv_tol: t.conv_tol,
            move_limit: t.move_limit,
            p_simp: t.p_simp,
            invert_images: false,
            verbose: false,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, None)
    }

    /// Parses a configuration whose missing fields take the defaults of the
    /// example it names; `example` replaces the file's example id. Without an
    /// id, custom loads default to a single unlabeled point and anything else
    /// to example 1.
    pub fn from_json_with(text: &str, example: Option<u8>) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(e.to_string());
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let fields = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("configuration must be a JSON object".into()))?;
        if let Some(id) = example {
            fields.insert("example".into(), id.into());
        }
        let custom = fields.get("loads").is_some_and(|l| !l.is_null());
        let base = match fields.get("example") {
            Some(serde_json::Value::Null) | None if custom => Self { example: None, chi: Vec::new(), ..Self::default() },
            None => Self::default(),
            Some(id) => {
                let id = id
                    .as_u64()
                    .and_then(|n| u8::try_from(n).ok())
                    .ok_or_else(|| Error::Config(format!("invalid example id {id}")))?;
                Self::example(id)?
            }
        };
        let mut merged = serde_json::to_value(base).map_err(bad)?;
        if let Some(m) = merged.as_object_mut() {
            m.extend(fields.clone());
        }
        serde_json::from_value(merged).map_err(bad)
    }

    pub fn label(&self) -> String {
        match self.example {
            Some(id) => format!("example{id}"),
            None => "custom".into(),
        }
    }

    pub fn topopt(&self) -> TopOptConfig {
        TopOptConfig {
            radius: self.lengthscale / 2.0,
            beta: self.beta,
            p_simp: self.p_simp,
            max_iter: self.max_iter,
            move_limit: self.move_limit,
            conv_tol: self.conv_tol,
            f: self.f,
            seed: self.seed,
            nx: self.nx,
            ny: self.ny,
            supersample: self.supersample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.example, &self.loads) {
            (Some(id), None) if (1..=4).contains(&id) => {}
            (Some(id), None) => return bad(format!("unknown example {id}, expected 1 to 4")),
            (Some(_), Some(_)) => return bad("custom loads conflict with an example id".into()),
            (None, None) => return bad("either an example id or custom loads are required".into()),
            (None, Some(cases)) => {
                LoadSet::normalized(cases.clone())?;
                if self.chi.len() > 1 {
                    return bad("a custom load set runs a single point; give at most one chi label".into());
                }
            }
        }
        if self.chi.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("chi values must be sorted and unique".into());
        }
        if self.chi.iter().any(|c| !c.is_finite()) {
            return bad("chi values must be finite".into());
        }
        let range = if self.example == Some(4) { 60.0 } else { 1.0 };
        if self.example.is_some() && self.chi.iter().any(|&c| !(0.0..=range).contains(&c)) {
            return bad(format!("chi values must lie in [0, {range}]"));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        let mut seen = self.starting_guesses.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.starting_guesses.len() {
            return bad("starting guesses must be distinct".into());
        }
        MaterialPair::new(self.f).map_err(|e| Error::Config(e.to_string()))?;
        self.topopt().validate()
    }

    pub fn loads(&self, chi: f64) -> Result<LoadSet> {
        match (self.example, &self.loads) {
            (Some(4), _) => loads_example4(chi),
            (Some(_), _) => loads_examples123(chi),
            (None, Some(cases)) => LoadSet::normalized(cases.clone()),
            (None, None) => Err(Error::Config("no loads".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub objective: f64,
    pub volume: f64,
    pub converged: bool,
    pub iterations: usize,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub chi: f64,
    pub bound: Option<f64>,
    pub mapped_rank3: Option<f64>,
    pub mapped_volume: Option<f64>,
    pub runs: BTreeMap<StartKind, RunSummary>,
    /// One entry per failed stage.
    pub failures: Vec<String>,
}

impl SweepRow {
    pub fn energy(&self, kind: StartKind) -> Option<f64> {
        self.runs.get(&kind).map(|r| r.objective)
    }

    pub fn normalized(&self, value: Option<f64>) -> Option<f64> {
        Some(value? / self.bound?)
    }

    pub fn status(&self) -> String {
        if self.failures.is_empty() {
            "ok".into()
        } else {
            let stages: Vec<&str> = self.failures.iter().map(|f| f.split(':').next().unwrap_or("")).collect();
            format!("failed:{}", stages.join(";"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| !r.failures.is_empty())
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(
            "chi,bound,mapped_rank3,mapped_sg,random_sg,homog_sg,mapped_rank3_norm,mapped_sg_norm,random_sg_norm,homog_sg_norm,status\n",
        );
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let values = [
                r.bound,
                r.mapped_rank3,
                r.energy(StartKind::Mapped),
                r.energy(StartKind::Random),
                r.energy(StartKind::Homogeneous),
            ];
            let _ = write!(s, "{}", r.chi);
            for v in values {
                let _ = write!(s, ",{}", cell(v));
            }
            for v in &values[1..] {
                let _ = write!(s, ",{}", cell(r.normalized(*v)));
            }
            let _ = writeln!(s, ",{}", r.status());
        }
        s
    }
}

#[derive(Serialize)]
struct LaminateRecord {
    p: [f64; 3],
    theta: [f64; 3],
    mu: [f64; 3],
    f: f64,
    moments: [f64; 4],
    gamma: f64,
}

/// Moment bound, laminate and mapped cell of one sweep point.
struct Prepared {
    loads: LoadSet,
    mat: MaterialPair,
    bound: f64,
    laminate: Rank3Laminate,
    moments: MomentVector,
    mapped: DensityField,
}

fn prepare(cfg: &ExperimentConfig, chi: f64) -> std::result::Result<Prepared, String> {
    let loads = cfg.loads(chi).map_err(|e| format!("loads: {e}"))?;
    let mat = MaterialPair::new(cfg.f).map_err(|e| format!("material: {e}"))?;
    let sol = optimize_moments(&loads, &mat, &SolverOptions::default()).map_err(|e| format!("bound: {e}"))?;
    let laminate = reconstruct(&sol.m, cfg.f).map_err(|e| format!("reconstruction: {e}"))?;
    let (mapped, _) = map_laminate(&laminate, cfg.nx, cfg.ny, cfg.supersample).map_err(|e| format!("mapping: {e}"))?;
    Ok(Prepared { loads, mat, bound: sol.energy, laminate, moments: sol.m, mapped })
}

fn chi_dir(cfg: &ExperimentConfig, chi: f64) -> Option<PathBuf> {
    cfg.out.as_ref().map(|o| o.join(cfg.label()).join(chi.to_string()))
}

fn write_laminate(dir: &Path, p: &Prepared) -> Result<()> {
    let lam = &p.laminate;
    let rec = LaminateRecord {
        p: lam.p,
        theta: lam.theta,
        mu: lam.mu,
        f: lam.f,
        moments: p.moments.to_array(),
        gamma: rotation_angle(&p.moments),
    };
    io::write_json(&dir.join("laminate.json"), &rec)
}

fn mapped_energy(cfg: &ExperimentConfig, p: &Prepared) -> Result<(f64, f64)> {
    let h = Homogenizer::for_field(&p.mapped, p.mat.nu)?;
    let t = h.homogenize(&p.mapped, &p.mat, cfg.p_simp)?.tensor;
    Ok((t.complementary_energy(&p.loads)?, p.mapped.volume()))
}

fn run_one(cfg: &ExperimentConfig, chi: f64, p: &Prepared, kind: StartKind) -> Result<RunSummary> {
    let tcfg = cfg.topopt();
    let start = starting_guess(kind, Some(&p.laminate), &tcfg)?;
    let res = optimize(start, &p.loads, &p.mat, &tcfg)?;
    if let Some(dir) = chi_dir(cfg, chi) {
        let dir = dir.join(kind.name());
        io::write_field_images(&dir, &res.state.physical_field()?, cfg.invert_images)?;
        fs::write(dir.join("log.csv"), io::log_csv(&res.state.history))?;
        write_laminate(&dir, p)?;
    }
    if cfg.verbose {
        eprintln!(
            "{} chi={chi} {}: objective {} after {} iterations",
            cfg.label(),
            kind.name(),
            res.objective,
            res.state.iteration
        );
    }
    Ok(RunSummary {
        objective: res.objective,
        volume: res.volume,
        converged: res.converged,
        iterations: res.state.iteration,
        fallback_steps: res.fallback_steps,
    })
}

/// Runs every sweep point and starting guess, writing `results.csv` and the
/// per-run artifacts when an output directory is set. Failures of single
/// runs are recorded in the rows; only configuration and output errors are
/// returned as `Err`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let chis = if cfg.example.is_none() && cfg.chi.is_empty() { vec![0.0] } else { cfg.chi.clone() };

    let prepared: Vec<std::result::Result<Prepared, String>> =
        pool.install(|| chis.par_iter().map(|&chi| prepare(cfg, chi)).collect());
    let mut rows: Vec<SweepRow> = chis
        .iter()
        .zip(&prepared)
        .map(|(&chi, p)| {
            let mut row = SweepRow {
                chi,
                bound: None,
                mapped_rank3: None,
                mapped_volume: None,
                runs: BTreeMap::new(),
                failures: Vec::new(),
            };
            match p {
                Ok(p) => {
                    row.bound = Some(p.bound);
                    match mapped_energy(cfg, p) {
                        Ok((e, v)) => {
                            row.mapped_rank3 = Some(e);
                            row.mapped_volume = Some(v);
                        }
                        Err(e) => row.failures.push(format!("mapped_rank3: {e}")),
                    }
                    if let Some(dir) = chi_dir(cfg, chi) {
                        let dir = dir.join("mapped_rank3");
                        let written = io::write_field_images(&dir, &p.mapped, cfg.invert_images)
                            .and_then(|_| write_laminate(&dir, p));
                        if let Err(e) = written {
                            row.failures.push(format!("output: {e}"));
                        }
                    }
                }
                Err(e) => row.failures.push(e.clone()),
            }
            row
        })
        .collect();

    let jobs: Vec<(usize, StartKind)> = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_ok())
        .flat_map(|(i, _)| cfg.starting_guesses.iter().map(move |&k| (i, k)))
        .collect();
    let outcomes: Vec<(usize, StartKind, Result<RunSummary>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, kind)| {
                let p = prepared[i].as_ref().expect("filtered");
                (i, kind, run_one(cfg, chis[i], p, kind))
            })
            .collect()
    });
    for (i, kind, out) in outcomes {
        match out {
            Ok(summary) => {
                rows[i].runs.insert(kind, summary);
            }
            Err(e) => rows[i].failures.push(format!("{}_sg: {e}", kind.name())),
        }
    }

    let result = SweepResult { rows };
    if let Some(out) = &cfg.out {
        let dir = out.join(cfg.label());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("results.csv"), result.csv())?;
    }
    Ok(result)
}
