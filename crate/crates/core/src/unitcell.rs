//! Periodic single-scale realization of a laminate.
//!
//! Every layer family becomes a set of parallel bars with solid fraction `w`
//! per period. The cell is chosen so that each family crosses it at most once
//! along each lattice vector; the phase of layer `n` at lattice coordinates
//! `(u, v)` is then `u·k₁ + v·k₂` with integer crossing counts `k`, which makes
//! the field periodic by construction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::Rank3Laminate;

/// Minimum angle between distinct layer families.
pub const PARALLEL_TOL: f64 = 1e-4;
pub const DEFAULT_SUPERSAMPLE: usize = 3;
/// Side of the sampling set used by [`width_bisection`] (`QUAD_RESOLUTION²` points).
pub const QUAD_RESOLUTION: usize = 2048;
pub const VOLUME_TOL: f64 = 1e-4;
const MAX_BISECTION: usize = 60;

type Vec2 = [f64; 2];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn tangent(theta: f64) -> Vec2 {
    [theta.cos(), theta.sin()]
}

fn normal(theta: f64) -> Vec2 {
    [-theta.sin(), theta.cos()]
}

fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

/// One layer family inside a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellLayer {
    pub theta: f64,
    pub p: f64,
    pub normal: Vec2,
    pub lambda_tilde: f64,
    /// Number of periods crossed along `a1` and `a2` (signed).
    pub crossings: [i64; 2],
}

impl CellLayer {
    /// Phase (in periods) at lattice coordinates `(u, v)`.
    #[inline]
    pub fn phase(&self, u: f64, v: f64) -> f64 {
        u * self.crossings[0] as f64 + v * self.crossings[1] as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelogramCell {
    pub a1: Vec2,
    pub a2: Vec2,
    pub layers: Vec<CellLayer>,
    pub area_raw: f64,
}

impl ParallelogramCell {
    /// Axis-aligned unit square without layers.
    pub fn unit_square() -> Self {
        Self { a1: [1.0, 0.0], a2: [0.0, 1.0], layers: Vec::new(), area_raw: 1.0 }
    }

    pub fn area(&self) -> f64 {
        cross(self.a1, self.a2)
    }

    pub fn lambda_tilde(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.lambda_tilde).collect()
    }

    pub fn normals(&self) -> Vec<Vec2> {
        self.layers.iter().map(|l| l.normal).collect()
    }

    /// Physical position of lattice coordinates `(u, v)`.
    pub fn position(&self, u: f64, v: f64) -> Vec2 {
        [u * self.a1[0] + v * self.a2[0], u * self.a1[1] + v * self.a2[1]]
    }

    /// Lattice coordinates of a physical point.
    pub fn lattice_coords(&self, x: Vec2) -> Vec2 {
        let det = self.area();
        [cross(x, self.a2) / det, cross(self.a1, x) / det]
    }

    pub fn is_unit_square(&self) -> bool {
        self.a1 == [1.0, 0.0] && self.a2 == [0.0, 1.0]
    }

    /// Attaches layers to a cell, computing normalized spacings and crossing counts.
    fn with_layers(a1: Vec2, a2: Vec2, area_raw: f64, spacing: &[(f64, f64, f64)]) -> Result<Self> {
        let (a1, a2) = if cross(a1, a2) < 0.0 { (a1, scale(a2, -1.0)) } else { (a1, a2) };
        let mut layers = Vec::with_capacity(spacing.len());
        for &(theta, p, lambda) in spacing {
            let n = normal(theta);
            let mut crossings = [0i64; 2];
            for (k, a) in [a1, a2].into_iter().enumerate() {
                let c = dot(n, a) / lambda;
                let r = c.round();
                if (c - r).abs() > 1e-9 {
                    return Err(Error::DegenerateGeometry(format!(
                        "layer at {theta} crosses the cell {c} times, not an integer"
                    )));
                }
                crossings[k] = r as i64;
            }
            layers.push(CellLayer { theta, p, normal: n, lambda_tilde: lambda, crossings });
        }
        Ok(Self { a1, a2, layers, area_raw })
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Unnormalized spacings `(λ₁, λ₂, λ₃, A)` of three layer families with `λ₃ = 1`.
pub fn layer_spacings(theta: [f64; 3]) -> Result<(f64, f64, f64, f64)> {
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if angle_gap(theta[i], theta[j]) < PARALLEL_TOL {
            return Err(Error::DegenerateGeometry(format!(
                "layers {} and {} are parallel within {PARALLEL_TOL} rad; use the two-layer cell",
                i + 1,
                j + 1
            )));
        }
    }
    let d1 = theta[0] - theta[2];
    let d2 = theta[1] - theta[2];
    let cot = |x: f64| x.cos() / x.sin();
    let area = (cot(d2) - cot(d1)).abs();
    Ok((d1.sin().abs() * area, d2.sin().abs() * area, 1.0, area))
}

/// Layers of a laminate with negligible ones dropped and near-parallel ones merged.
pub fn effective_layers(laminate: &Rank3Laminate) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (p, theta) in laminate.active_layers() {
        match out.iter_mut().find(|(_, t)| angle_gap(*t, theta) < PARALLEL_TOL) {
            Some(existing) => {
                if p > existing.0 {
                    existing.1 = theta;
                }
                existing.0 += p;
            }
            None => out.push((p, theta)),
        }
    }
    out
}

/// Unit-area periodic cell in which every layer family crosses once per period.
pub fn build_cell(laminate: &Rank3Laminate) -> Result<ParallelogramCell> {
    let layers = effective_layers(laminate);
    match layers.as_slice() {
        [] => Err(Error::DegenerateGeometry("laminate has no layers".into())),
        &[(p, t)] => ParallelogramCell::with_layers(tangent(t), normal(t), 1.0, &[(t, p, 1.0)]),
        &[(pa, ta), (pb, tb)] => {
            // rhombus with equal spacings; a square for orthogonal layers
            let s = (tb - ta).sin().abs();
            let lambda = s.sqrt();
            let edge = lambda / s;
            ParallelogramCell::with_layers(
                scale(tangent(ta), edge),
                scale(tangent(tb), edge),
                1.0,
                &[(ta, pa, lambda), (tb, pb, lambda)],
            )
        }
        &[(p1, t1), (p2, t2), (p3, t3)] => {
            let (l1, l2, l3, area) = layer_spacings([t1, t2, t3])?;
            let root = area.sqrt();
            let a1 = scale(tangent(t3), area / root);
            let a2 = scale(tangent(t1), l3 / ((t1 - t3).sin() * root));
            ParallelogramCell::with_layers(
                a1,
                a2,
                area,
                &[(t1, p1, l1 / root), (t2, p2, l2 / root), (t3, p3, l3 / root)],
            )
        }
        _ => unreachable!("a laminate has at most three layers"),
    }
}

/// Element densities on a regular grid of the cell's lattice coordinates;
/// element `(i, j)` covers `u ∈ [i/nx, (i+1)/nx]`, `v ∈ [j/ny, (j+1)/ny]` and
/// is stored at `j·nx + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub nx: usize,
    pub ny: usize,
    pub rho: Vec<f64>,
    pub cell: ParallelogramCell,
}

impl DensityField {
    pub fn new(nx: usize, ny: usize, rho: Vec<f64>, cell: ParallelogramCell) -> Result<Self> {
        if nx == 0 || ny == 0 || rho.len() != nx * ny {
            return Err(Error::InvalidMesh(format!("{} values for a {nx}x{ny} mesh", rho.len())));
        }
        if let Some(x) = rho.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidMesh(format!("density {x} outside [0, 1]")));
        }
        Ok(Self { nx, ny, rho, cell })
    }

    pub fn uniform(nx: usize, ny: usize, value: f64, cell: ParallelogramCell) -> Result<Self> {
        Self::new(nx, ny, vec![value; nx * ny], cell)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rho[j * self.nx + i]
    }

    pub fn volume(&self) -> f64 {
        measure_volume(self)
    }
}

/// Mean element density.
pub fn measure_volume(field: &DensityField) -> f64 {
    field.rho.iter().sum::<f64>() / field.rho.len() as f64
}

/// Bar widths that give a requested stiff fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthSolution {
    pub psi: f64,
    pub widths: Vec<f64>,
    /// Stiff fraction of the continuous field at these widths.
    pub volume: f64,
    /// `false` when the fraction cannot be reached with widths ≤ 1.
    pub reached: bool,
}

/// Distance of a phase to the nearest integer, in `[0, ½]`.
#[inline]
fn phase_distance(phase: f64) -> f64 {
    (phase - phase.round()).abs()
}

/// Smallest `ψ` at which a point becomes solid: layer `n` covers it once
/// `2·d_n ≤ ψ·p_n`.
fn solid_threshold(layers: &[CellLayer], u: f64, v: f64) -> f64 {
    layers
        .iter()
        .filter(|l| l.p > 0.0)
        .map(|l| 2.0 * phase_distance(l.phase(u, v)) / l.p)
        .fold(f64::INFINITY, f64::min)
}

/// Thresholds at `n²` points of a two-dimensional Kronecker sequence. A tensor
/// grid aligned with the lattice would quantize the volume of axis-aligned
/// layer families in steps of `1/n`.
fn sampled_thresholds(cell: &ParallelogramCell, n: usize) -> Vec<f64> {
    // plastic-number sequence, the standard low-discrepancy choice in 2D
    const G1: f64 = 0.754_877_666_246_692_7;
    const G2: f64 = 0.569_840_290_998_053_3;
    let count = n * n;
    let mut tau: Vec<f64> = (0..count)
        .map(|k| {
            let u = (0.5 + G1 * k as f64).fract();
            let v = (0.5 + G2 * k as f64).fract();
            solid_threshold(&cell.layers, u, v)
        })
        .collect();
    tau.sort_by(f64::total_cmp);
    tau
}

/// Finds `ψ` with `wₙ = ψ·pₙ` so the projected field has stiff fraction `f`.
pub fn width_bisection(laminate: &Rank3Laminate, cell: &ParallelogramCell, quad: usize) -> Result<WidthSolution> {
    let f = laminate.f;
    if cell.layers.is_empty() {
        return Err(Error::DegenerateGeometry("cell has no layers".into()));
    }
    let widths_for = |psi: f64| cell.layers.iter().map(|l| (psi * l.p).min(1.0)).collect::<Vec<_>>();
    let p_max = cell.layers.iter().map(|l| l.p).fold(0.0, f64::max);
    if f >= 1.0 {
        let psi = 1.0 / p_max;
        return Ok(WidthSolution { psi, widths: widths_for(psi), volume: 1.0, reached: true });
    }
    let tau = sampled_thresholds(cell, quad.max(1));
    let volume = |psi: f64| tau.partition_point(|&t| t <= psi) as f64 / tau.len() as f64;

    let mut lo = f;
    let mut hi = 1.0 / p_max;
    let v_hi = volume(hi);
    if v_hi < f - VOLUME_TOL {
        return Ok(WidthSolution { psi: hi, widths: widths_for(hi), volume: v_hi, reached: false });
    }
    // the sampled volume is a step function; bisect down to its resolution
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        if volume(mid) < f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (v_lo, v_hi) = (volume(lo), volume(hi));
    let (psi, vol) = if f - v_lo < v_hi - f { (lo, v_lo) } else { (hi, v_hi) };
    Ok(WidthSolution { psi, widths: widths_for(psi), volume: vol, reached: (vol - f).abs() <= VOLUME_TOL })
}

/// Rasterizes the bar pattern: each element gets the fraction of its
/// `supersample²` sample points that lie inside at least one bar.
pub fn project_density(
    cell: &ParallelogramCell,
    widths: &[f64],
    nx: usize,
    ny: usize,
    supersample: usize,
) -> Result<DensityField> {
    if widths.len() != cell.layers.len() {
        return Err(Error::InvalidMesh(format!(
            "{} widths for {} layers",
            widths.len(),
            cell.layers.len()
        )));
    }
    let ss = supersample.max(1);
    let levels: Vec<f64> = widths.iter().map(|&w| (PI * w).cos()).collect();
    let full = widths.iter().any(|&w| w >= 1.0);
    let inside = |u: f64, v: f64| {
        cell.layers.iter().zip(widths).zip(&levels).any(|((l, &w), &level)| {
            w > 0.0 && (2.0 * PI * l.phase(u, v)).cos() >= level
        })
    };
    let mut rho = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if full {
                rho[j * nx + i] = 1.0;
                continue;
            }
            let mut hits = 0usize;
            for b in 0..ss {
                let v = (j as f64 + (b as f64 + 0.5) / ss as f64) / ny as f64;
                for a in 0..ss {
                    let u = (i as f64 + (a as f64 + 0.5) / ss as f64) / nx as f64;
                    hits += inside(u, v) as usize;
                }
            }
            rho[j * nx + i] = hits as f64 / (ss * ss) as f64;
        }
    }
    DensityField::new(nx, ny, rho, cell.clone())
}

/// Full mapping: cell, widths and rasterized field of a laminate.
pub fn map_laminate(
    laminate: &Rank3Laminate,
    nx: usize,
    ny: usize,
    supersample: usize,
) -> Result<(DensityField, WidthSolution)> {
    let cell = build_cell(laminate)?;
    let widths = width_bisection(laminate, &cell, QUAD_RESOLUTION)?;
    let field = project_density(&cell, &widths.widths, nx, ny, supersample)?;
    Ok((field, widths))
}
