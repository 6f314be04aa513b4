//! The bound problem: minimize the complementary energy over the feasible set
//! of trigonometric moments.
//!
//! The feasible set is the set of `m` whose Toeplitz matrix
//!
//! ```text
//! ⎡ 1   c1  c2 ⎤
//! ⎢ c̄1  1   c1 ⎥    c1 = m1 + i m2,  c2 = m3 + i m4
//! ⎣ c̄2  c̄1  1  ⎦
//! ```
//!
//! is positive semidefinite. Its log-determinant together with the two
//! simpler constraints gives a convex barrier, and the energy is convex in
//! `m`, so a damped Newton barrier method reaches the global optimum.

use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::laminate::{
    complementary_energy, laminate_inner_inverse, moment_feasibility, moment_matrix_partial, to_xi_coords,
    toeplitz_determinant, LoadSet, MaterialPair, MomentVector,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Number of barrier-parameter reductions.
    pub outer_iterations: usize,
    /// Barrier parameter multiplier per outer iteration.
    pub mu_factor: f64,
    /// Newton-decrement tolerance of each inner solve (relative to the energy).
    pub inner_tol: f64,
    /// Newton steps allowed per outer iteration.
    pub max_iter: usize,
    /// Required relative optimality estimate for `converged`.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { outer_iterations: 20, mu_factor: 0.2, inner_tol: 1e-10, max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSolution {
    pub m: MomentVector,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Estimated relative suboptimality: barrier gap plus half the squared
    /// Newton decrement, divided by the energy.
    pub kkt_residual: f64,
}

/// Load data reduced to what the energy needs: `½ tr(C S)` with `S = Σ w s sᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct EnergyModel {
    stress: Matrix3<f64>,
    base: f64,
    one_minus_f: f64,
    fe: f64,
    mat: MaterialPair,
}

impl EnergyModel {
    pub(crate) fn new(loads: &LoadSet, mat: &MaterialPair) -> Self {
        let stress = loads.cases().iter().fold(Matrix3::zeros(), |acc, c| {
            let s = to_xi_coords(c).as_vector();
            acc + s * s.transpose() * c.weight
        });
        let base = 0.5 * (mat.stiff_compliance() * stress).trace();
        Self { stress, base, one_minus_f: 1.0 - mat.f, fe: mat.f * mat.e_plus, mat: *mat }
    }

    fn inverse(&self, m: &MomentVector) -> Option<Matrix3<f64>> {
        laminate_inner_inverse(m, &self.mat)
    }

    pub(crate) fn energy(&self, m: &MomentVector) -> Option<f64> {
        if self.one_minus_f <= 0.0 {
            return Some(self.base);
        }
        let inv = self.inverse(m)?;
        Some(self.base - 0.5 * self.one_minus_f * (inv * self.stress).trace())
    }

    /// Energy, gradient and Hessian with respect to the moments.
    pub(crate) fn derivatives(&self, m: &MomentVector) -> Option<(f64, Vector4<f64>, Matrix4<f64>)> {
        if self.one_minus_f <= 0.0 {
            return Some((self.base, Vector4::zeros(), Matrix4::zeros()));
        }
        let inv = self.inverse(m)?;
        let energy = self.base - 0.5 * self.one_minus_f * (inv * self.stress).trace();
        // Y = A⁻¹ S A⁻¹ collects Σ w y yᵀ with y = A⁻¹ s
        let y = inv * self.stress * inv;
        let partials: [Matrix3<f64>; 4] = std::array::from_fn(moment_matrix_partial);
        let mut grad = Vector4::zeros();
        let mut hess = Matrix4::zeros();
        for k in 0..4 {
            grad[k] = -0.5 * self.one_minus_f * self.fe * (partials[k] * y).trace();
            for l in k..4 {
                let h = -self.one_minus_f
                    * self.fe
                    * self.fe
                    * (partials[k] * inv * partials[l] * y).trace();
                hess[(k, l)] = h;
                hess[(l, k)] = h;
            }
        }
        Some((energy, grad, hess))
    }
}

/// Energy gradient with respect to the four moments.
pub fn energy_gradient(m: &MomentVector, loads: &LoadSet, mat: &MaterialPair) -> Result<[f64; 4]> {
    let model = EnergyModel::new(loads, mat);
    let (_, g, _) = model.derivatives(m).ok_or(Error::Singular("energy_gradient"))?;
    Ok([g[0], g[1], g[2], g[3]])
}

/// Log-barrier of the feasible set; `None` outside its interior.
fn barrier(m: &MomentVector) -> Option<(f64, Vector4<f64>, Matrix4<f64>)> {
    let MomentVector { m1, m2, m3, m4 } = *m;
    let u = 1.0 - m1 * m1 - m2 * m2;
    let lo = 1.0 + m3;
    let hi = 1.0 - m3;
    let d = toeplitz_determinant(m);
    if !(u > 0.0 && lo > 0.0 && hi > 0.0 && d > 0.0) {
        return None;
    }
    let mut value = -u.ln() - lo.ln() - hi.ln() - d.ln();
    if !value.is_finite() {
        value = f64::INFINITY;
    }

    let mut grad = Vector4::zeros();
    let mut hess = Matrix4::zeros();
    // −log g contributes −∇g/g and ∇g∇gᵀ/g² − ∇²g/g
    let mut add = |g: f64, dg: Vector4<f64>, d2g: Matrix4<f64>| {
        grad -= dg / g;
        hess += dg * dg.transpose() / (g * g) - d2g / g;
    };
    add(
        u,
        Vector4::new(-2.0 * m1, -2.0 * m2, 0.0, 0.0),
        Matrix4::from_diagonal(&Vector4::new(-2.0, -2.0, 0.0, 0.0)),
    );
    add(lo, Vector4::new(0.0, 0.0, 1.0, 0.0), Matrix4::zeros());
    add(hi, Vector4::new(0.0, 0.0, -1.0, 0.0), Matrix4::zeros());
    let dd = Vector4::new(
        -4.0 * m1 * hi + 4.0 * m2 * m4,
        -4.0 * m2 * lo + 4.0 * m1 * m4,
        -2.0 * m3 + 2.0 * m1 * m1 - 2.0 * m2 * m2,
        -2.0 * m4 + 4.0 * m1 * m2,
    );
    #[rustfmt::skip]
    let d2d = Matrix4::new(
        -4.0 * hi, 4.0 * m4,   4.0 * m1,  4.0 * m2,
        4.0 * m4,  -4.0 * lo,  -4.0 * m2, 4.0 * m1,
        4.0 * m1,  -4.0 * m2,  -2.0,      0.0,
        4.0 * m2,  4.0 * m1,   0.0,       -2.0,
    );
    add(d, dd, d2d);
    Some((value, grad, hess))
}

fn probe_points() -> [MomentVector; 5] {
    [
        MomentVector::ZERO,
        MomentVector::new(1.0, 0.0, 1.0, 0.0),
        MomentVector::new(-1.0, 0.0, 1.0, 0.0),
        MomentVector::new(0.0, 1.0, -1.0, 0.0),
        MomentVector::new(0.0, -1.0, -1.0, 0.0),
    ]
}

fn from_vec(v: &Vector4<f64>) -> MomentVector {
    MomentVector::new(v[0], v[1], v[2], v[3])
}

/// Minimizes the complementary energy over the feasible moment set.
pub fn optimize_moments(loads: &LoadSet, mat: &MaterialPair, opts: &SolverOptions) -> Result<MomentSolution> {
    let model = EnergyModel::new(loads, mat);
    if loads.is_degenerate() {
        return Ok(MomentSolution {
            m: MomentVector::ZERO,
            energy: 0.0,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
        });
    }
    if mat.f >= 1.0 {
        return Ok(MomentSolution {
            m: MomentVector::ZERO,
            energy: model.base,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
        });
    }

    let mut x = Vector4::zeros();
    let e0 = model.energy(&MomentVector::ZERO).ok_or(Error::Singular("optimize_moments"))?;
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    let mut mu = e0 / 10.0;
    let mut iterations = 0;
    let mut decrement_sq = f64::INFINITY;

    let penalized = |v: &Vector4<f64>, mu: f64| -> Option<f64> {
        let m = from_vec(v);
        let (b, _, _) = barrier(&m)?;
        let e = model.energy(&m)?;
        let total = e + mu * b;
        total.is_finite().then_some(total)
    };

    for outer in 0..opts.outer_iterations {
        if outer > 0 {
            mu *= opts.mu_factor;
        }
        for _ in 0..opts.max_iter {
            let m = from_vec(&x);
            let (Some((_, ge, he)), Some((_, gb, hb))) = (model.derivatives(&m), barrier(&m)) else {
                return Err(Error::Solver("moment iterate left the feasible interior".into()));
            };
            let g = ge + gb * mu;
            let h = he + hb * mu;
            let step = newton_step(&h, &g);
            decrement_sq = -g.dot(&step);
            if !(decrement_sq.is_finite()) {
                break;
            }
            if decrement_sq * 0.5 <= opts.inner_tol * scale {
                break;
            }
            iterations += 1;
            let f0 = penalized(&x, mu).unwrap_or(f64::INFINITY);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-16 {
                let trial = x + step * t;
                if let Some(ft) = penalized(&trial, mu) {
                    if ft <= f0 - 0.25 * t * decrement_sq {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                // no further progress in floating point
                break;
            }
        }
    }

    let mut best = from_vec(&x);
    let mut energy = complementary_energy(&best, loads, mat)?;
    let gap = (4.0 * mu + 0.5 * decrement_sq.max(0.0)) / energy.abs().max(f64::MIN_POSITIVE);
    for probe in probe_points() {
        if let Ok(e) = complementary_energy(&probe, loads, mat) {
            if e < energy {
                energy = e;
                best = probe;
            }
        }
    }
    Ok(MomentSolution {
        m: best,
        energy,
        iterations,
        converged: gap <= opts.tol,
        kkt_residual: gap,
    })
}

/// Solves `H Δ = −g`, regularizing `H` if it is not numerically positive definite.
fn newton_step(h: &Matrix4<f64>, g: &Vector4<f64>) -> Vector4<f64> {
    let norm = h.diagonal().abs().max().max(1e-300);
    let mut shift = 0.0;
    for _ in 0..30 {
        let shifted = h + Matrix4::identity() * shift;
        if let Some(chol) = shifted.cholesky() {
            return -chol.solve(g);
        }
        shift = if shift == 0.0 { norm * 1e-14 } else { shift * 10.0 };
    }
    -g / norm
}

/// Brute-force reference minimizer over a lattice of feasible moments with
/// spacing `resolution` (rounded so that `2/resolution` is an integer).
///
/// The lattice is searched coarse to fine: a full sweep of a coarse sublattice
/// (spacing at most 0.1) and then, at each halving of the spacing, a
/// neighborhood of the best candidates so far. Used only for validation.
pub fn grid_search_oracle(loads: &LoadSet, mat: &MaterialPair, resolution: f64) -> Result<MomentSolution> {
    if !(resolution >= 1e-3) {
        return Err(Error::Config(format!("oracle resolution must be at least 1e-3, got {resolution}")));
    }
    let model = EnergyModel::new(loads, mat);
    let n = (2.0 / resolution).round().max(1.0) as i64;
    let coord = |i: i64| -1.0 + 2.0 * i as f64 / n as f64;
    let point = |idx: [i64; 4]| MomentVector::new(coord(idx[0]), coord(idx[1]), coord(idx[2]), coord(idx[3]));
    let feasible = |m: &MomentVector| moment_feasibility(m).iter().all(|&g| g <= 1e-12);

    let mut stride = 1i64;
    while n % (stride * 2) == 0 && (stride * 2) as f64 * 2.0 / n as f64 <= 0.1 + 1e-12 {
        stride *= 2;
    }

    const KEEP: usize = 16;
    const WINDOW: i64 = 4;
    let mut evaluations = 0usize;
    let mut ranked: Vec<(f64, [i64; 4])> = Vec::new();
    let consider = |idx: [i64; 4], ranked: &mut Vec<(f64, [i64; 4])>, evaluations: &mut usize| {
        let m = point(idx);
        if !feasible(&m) {
            return;
        }
        if let Some(e) = model.energy(&m) {
            *evaluations += 1;
            ranked.push((e, idx));
        }
    };

    let steps: Vec<i64> = (0..=n / stride).map(|k| k * stride).collect();
    for &a in &steps {
        for &b in &steps {
            let m12 = coord(a).powi(2) + coord(b).powi(2);
            if m12 > 1.0 + 1e-12 {
                continue;
            }
            for &c in &steps {
                for &d in &steps {
                    consider([a, b, c, d], &mut ranked, &mut evaluations);
                }
            }
        }
    }
    let sort_keep = |ranked: &mut Vec<(f64, [i64; 4])>| {
        ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        ranked.dedup_by(|x, y| x.1 == y.1);
        ranked.truncate(KEEP);
    };
    sort_keep(&mut ranked);

    while stride > 1 {
        stride /= 2;
        let centers: Vec<[i64; 4]> = ranked.iter().map(|r| r.1).collect();
        let mut seen = std::collections::HashSet::new();
        for center in centers {
            for da in -WINDOW..=WINDOW {
                for db in -WINDOW..=WINDOW {
                    for dc in -WINDOW..=WINDOW {
                        for dd in -WINDOW..=WINDOW {
                            let idx = [
                                center[0] + da * stride,
                                center[1] + db * stride,
                                center[2] + dc * stride,
                                center[3] + dd * stride,
                            ];
                            if idx.iter().any(|&i| i < 0 || i > n) || !seen.insert(idx) {
                                continue;
                            }
                            consider(idx, &mut ranked, &mut evaluations);
                        }
                    }
                }
            }
        }
        sort_keep(&mut ranked);
    }

    let (energy, idx) = ranked.first().copied().ok_or(Error::Solver("empty oracle lattice".into()))?;
    Ok(MomentSolution { m: point(idx), energy, iterations: evaluations, converged: true, kkt_residual: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminate::StressCase;
    use approx::assert_relative_eq;

    fn uniaxial() -> LoadSet {
        LoadSet::new(vec![StressCase::new(1.0, 0.0, 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn energy_matches_laminate_module() {
        let mat = MaterialPair::new(0.35).unwrap();
        let loads = LoadSet::new(vec![
            StressCase::new(1.0, -0.4, 0.2, 0.3),
            StressCase::new(0.1, 0.8, -0.5, 0.7),
        ])
        .unwrap();
        let m = MomentVector::new(0.2, -0.3, 0.1, 0.15);
        let model = EnergyModel::new(&loads, &mat);
        let a = model.energy(&m).unwrap();
        let b = complementary_energy(&m, &loads, &mat).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mat = MaterialPair::new(0.4).unwrap();
        let loads = LoadSet::new(vec![
            StressCase::new(1.0, -0.4, 0.2, 0.3),
            StressCase::new(0.1, 0.8, -0.5, 0.7),
        ])
        .unwrap();
        let model = EnergyModel::new(&loads, &mat);
        let x = Vector4::new(0.15, -0.2, 0.3, -0.1);
        let (_, g, h) = model.derivatives(&from_vec(&x)).unwrap();
        let step = 1e-6;
        for k in 0..4 {
            let mut e = Vector4::zeros();
            e[k] = step;
            let (fp, gp, _) = model.derivatives(&from_vec(&(x + e))).unwrap();
            let (fm, gm, _) = model.derivatives(&from_vec(&(x - e))).unwrap();
            assert_relative_eq!(g[k], (fp - fm) / (2.0 * step), max_relative = 1e-6, epsilon = 1e-9);
            let col = (gp - gm) / (2.0 * step);
            for l in 0..4 {
                assert_relative_eq!(h[(l, k)], col[l], max_relative = 1e-5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let x = Vector4::new(0.1, 0.3, -0.2, 0.25);
        let (_, g, h) = barrier(&from_vec(&x)).unwrap();
        let step = 1e-6;
        for k in 0..4 {
            let mut e = Vector4::zeros();
            e[k] = step;
            let (fp, gp, _) = barrier(&from_vec(&(x + e))).unwrap();
            let (fm, gm, _) = barrier(&from_vec(&(x - e))).unwrap();
            assert_relative_eq!(g[k], (fp - fm) / (2.0 * step), max_relative = 1e-6);
            let col = (gp - gm) / (2.0 * step);
            for l in 0..4 {
                assert_relative_eq!(h[(l, k)], col[l], max_relative = 1e-5, epsilon = 1e-8);
            }
        }
        assert!(barrier(&MomentVector::new(1.0, 0.0, 1.0, 0.0)).is_none());
    }

    #[test]
    fn uniaxial_optimum_is_aligned_layer() {
        let mat = MaterialPair::new(0.5).unwrap();
        let sol = optimize_moments(&uniaxial(), &mat, &SolverOptions::default()).unwrap();
        let corner = MomentVector::new(1.0, 0.0, 1.0, 0.0);
        assert!(sol.m.max_abs_diff(&corner) < 1e-4, "{:?}", sol.m);
        assert_relative_eq!(sol.energy, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn zero_loads_return_origin() {
        let mat = MaterialPair::new(0.5).unwrap();
        let loads = LoadSet::new(vec![StressCase::new(0.0, 0.0, 0.0, 1.0)]).unwrap();
        let sol = optimize_moments(&loads, &mat, &SolverOptions::default()).unwrap();
        assert_eq!(sol.m, MomentVector::ZERO);
        assert_eq!(sol.energy, 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn coarse_oracle_picks_corner_for_uniaxial_load() {
        let mat = MaterialPair::new(0.5).unwrap();
        let sol = grid_search_oracle(&uniaxial(), &mat, 0.5).unwrap();
        assert_eq!(sol.m, MomentVector::new(1.0, 0.0, 1.0, 0.0));
        assert!(grid_search_oracle(&uniaxial(), &mat, 1e-4).is_err());
    }
}
