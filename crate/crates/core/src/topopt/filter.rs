//! Periodic cone filter and Heaviside projection.

use crate::error::{Error, Result};
use crate::unitcell::ParallelogramCell;

/// Translation-invariant cone filter on a periodic grid. Distances are
/// physical and measured to the nearest periodic image, and the weights are
/// normalized by their common sum, so the operator is symmetric and
/// preserves the mean.
#[derive(Debug, Clone)]
pub struct PeriodicFilter {
    nx: usize,
    ny: usize,
    stencil: Vec<(usize, usize, f64)>,
}

impl PeriodicFilter {
    pub fn new(cell: &ParallelogramCell, nx: usize, ny: usize, radius: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh("empty mesh".into()));
        }
        if !(radius >= 0.0) {
            return Err(Error::Config(format!("filter radius must be non-negative, got {radius}")));
        }
        let h1 = [cell.a1[0] / nx as f64, cell.a1[1] / nx as f64];
        let h2 = [cell.a2[0] / ny as f64, cell.a2[1] / ny as f64];
        let dist = |di: i64, dj: i64| {
            let x = di as f64 * h1[0] + dj as f64 * h2[0];
            let y = di as f64 * h1[1] + dj as f64 * h2[1];
            x.hypot(y)
        };
        let (nxi, nyi) = (nx as i64, ny as i64);
        let mut stencil = Vec::new();
        for dj in 0..nyi {
            for di in 0..nxi {
                let mut d = f64::INFINITY;
                for k in -2..=1 {
                    for l in -2..=1 {
                        d = d.min(dist(di + k * nxi, dj + l * nyi));
                    }
                }
                let w = radius - d;
                if w > 0.0 || (di == 0 && dj == 0) {
                    stencil.push((di as usize, dj as usize, w.max(0.0)));
                }
            }
        }
        let total: f64 = stencil.iter().map(|s| s.2).sum();
        if total > 0.0 {
            stencil.iter_mut().for_each(|s| s.2 /= total);
        } else {
            // radius below the element size: identity
            stencil = vec![(0, 0, 1.0)];
        }
        Ok(Self { nx, ny, stencil })
    }

    pub fn stencil_len(&self) -> usize {
        self.stencil.len()
    }

    /// `out[i,j] = Σ w(d) x[i+d]`; also its own transpose.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; nx * ny];
        for &(di, dj, w) in &self.stencil {
            for j in 0..ny {
                let row = ((j + dj) % ny) * nx;
                let dst = &mut out[j * nx..(j + 1) * nx];
                for (i, o) in dst.iter_mut().enumerate() {
                    *o += w * x[row + (i + di) % nx];
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply), used for chain-rule gradients.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; nx * ny];
        for &(di, dj, w) in &self.stencil {
            for j in 0..ny {
                let row = ((j + dj) % ny) * nx;
                for i in 0..nx {
                    out[row + (i + di) % nx] += w * g[j * nx + i];
                }
            }
        }
        out
    }
}

/// `ρ̂ = 1 − e^{−βρ̄} + ρ̄ e^{−β}`.
pub fn heaviside_projection(rho_bar: f64, beta: f64) -> f64 {
    1.0 - (-beta * rho_bar).exp() + rho_bar * (-beta).exp()
}

pub fn heaviside_derivative(rho_bar: f64, beta: f64) -> f64 {
    beta * (-beta * rho_bar).exp() + (-beta).exp()
}
