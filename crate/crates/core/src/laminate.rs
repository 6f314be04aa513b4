//! Tensor algebra in the orthonormal ξ basis of symmetric 2D tensors,
//! effective compliance of finite-rank laminates expressed through four
//! trigonometric moments, and the complementary energy of a load set.
//!
//! The ξ basis is
//!
//! ```text
//! ξ1 = [[1, 0], [0, -1]] / √2   ξ2 = [[0, 1], [1, 0]] / √2   ξ3 = [[1, 0], [0, 1]] / √2
//! ```
//!
//! and every isotropic fourth-order tensor is diagonal in it.
//!
//! Layer angles θ are angles of the layer *tangent* `t = (cos θ, sin θ)`.
//! With that convention the projected dyad `ξ:(t⊗t)⊗(t⊗t):ξ` of a single layer
//! is `v vᵀ` with `v = (cos 2θ, sin 2θ, 1)/√2`, which is what [`moment_matrix`]
//! reproduces for arbitrary layer sets.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio between the compliant and the stiff Young's modulus.
pub const DEFAULT_CONTRAST: f64 = 1e-9;

/// Poisson's ratio shared by both phases.
pub const DEFAULT_POISSON: f64 = 0.3;

/// Tolerance on the weight normalization of a [`LoadSet`].
pub const WEIGHT_TOL: f64 = 1e-12;

/// 3×3 symmetric matrix of a fourth-order compliance or stiffness tensor
/// in the ξ basis.
pub type ComplianceMatrix = Matrix3<f64>;

/// Two isotropic phases and the volume fraction of the stiff one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialPair {
    pub e_plus: f64,
    pub e_minus: f64,
    pub nu: f64,
    pub f: f64,
}

impl MaterialPair {
    /// Unit stiff phase, `e_minus = 1e-9`, `ν = 0.3`.
    pub fn new(f: f64) -> Result<Self> {
        Self::with_moduli(1.0, DEFAULT_CONTRAST, DEFAULT_POISSON, f)
    }

    pub fn with_moduli(e_plus: f64, e_minus: f64, nu: f64, f: f64) -> Result<Self> {
        if !(e_plus > 0.0) {
            return Err(Error::InvalidMaterial(format!("e_plus must be positive, got {e_plus}")));
        }
        if !(e_minus > 0.0) || e_minus > e_plus {
            return Err(Error::InvalidMaterial(format!(
                "e_minus must lie in (0, e_plus], got {e_minus}"
            )));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(Error::InvalidMaterial(format!("nu must lie in (-1, 0.5), got {nu}")));
        }
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidMaterial(format!("f must lie in (0, 1], got {f}")));
        }
        Ok(Self { e_plus, e_minus, nu, f })
    }

    /// Same phases at a different volume fraction.
    pub fn with_fraction(&self, f: f64) -> Result<Self> {
        Self::with_moduli(self.e_plus, self.e_minus, self.nu, f)
    }

    pub fn stiff_compliance(&self) -> ComplianceMatrix {
        isotropic_compliance(self.e_plus, self.nu).expect("validated modulus")
    }

    pub fn compliant_compliance(&self) -> ComplianceMatrix {
        isotropic_compliance(self.e_minus, self.nu).expect("validated modulus")
    }
}

/// A symmetric 2D stress tensor together with its relative weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressCase {
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
    pub weight: f64,
}

impl StressCase {
    pub fn new(s11: f64, s22: f64, s12: f64, weight: f64) -> Self {
        Self { s11, s22, s12, weight }
    }

    /// Unit uniaxial stress along direction `phi`: `R(φ)·diag(1,0)·R(φ)ᵀ`.
    pub fn uniaxial(phi: f64, weight: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self::new(c * c, s * s, s * c, weight)
    }

    /// Stress tensor expressed in a frame rotated by `phi` (tensor rotated by +φ).
    pub fn rotated(&self, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        // σ' = R σ Rᵀ
        let s11 = c * c * self.s11 - 2.0 * s * c * self.s12 + s * s * self.s22;
        let s22 = s * s * self.s11 + 2.0 * s * c * self.s12 + c * c * self.s22;
        let s12 = s * c * (self.s11 - self.s22) + (c * c - s * s) * self.s12;
        Self::new(s11, s22, s12, self.weight)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.s11 * factor, self.s22 * factor, self.s12 * factor, self.weight)
    }

    /// Engineering (Voigt) vector `(s11, s22, s12)`.
    pub fn voigt(&self) -> Vector3<f64> {
        Vector3::new(self.s11, self.s22, self.s12)
    }

    pub fn is_zero(&self) -> bool {
        self.s11 == 0.0 && self.s22 == 0.0 && self.s12 == 0.0
    }
}

/// Weighted stress cases whose weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSet {
    cases: Vec<StressCase>,
}

impl LoadSet {
    /// Accepts cases whose weights are non-negative and already sum to one.
    pub fn new(cases: Vec<StressCase>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::InvalidLoads("load set is empty".into()));
        }
        if let Some(c) = cases.iter().find(|c| !(c.weight >= 0.0) || !c.weight.is_finite()) {
            return Err(Error::InvalidLoads(format!("invalid weight {}", c.weight)));
        }
        let total: f64 = cases.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidLoads(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { cases })
    }

    /// Rescales non-negative weights so they sum to one.
    pub fn normalized(mut cases: Vec<StressCase>) -> Result<Self> {
        let total: f64 = cases.iter().map(|c| c.weight).sum();
        if !(total > 0.0) || cases.iter().any(|c| c.weight < 0.0) {
            return Err(Error::InvalidLoads("weights must be non-negative with positive sum".into()));
        }
        for c in &mut cases {
            c.weight /= total;
        }
        Self::new(cases)
    }

    pub fn cases(&self) -> &[StressCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.cases.iter().all(|c| c.is_zero() || c.weight == 0.0)
    }

    pub fn rotated(&self, phi: f64) -> Self {
        Self { cases: self.cases.iter().map(|c| c.rotated(phi)).collect() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { cases: self.cases.iter().map(|c| c.scaled(factor)).collect() }
    }
}

/// Coordinates of a symmetric 2D tensor in the ξ basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiVector {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl XiVector {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x1, self.x2, self.x3)
    }

    pub fn norm_squared(&self) -> f64 {
        self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3
    }
}

pub fn to_xi_coords(sigma: &StressCase) -> XiVector {
    XiVector {
        x1: (sigma.s11 - sigma.s22) / std::f64::consts::SQRT_2,
        x2: std::f64::consts::SQRT_2 * sigma.s12,
        x3: (sigma.s11 + sigma.s22) / std::f64::consts::SQRT_2,
    }
}

/// The four trigonometric moments of a layer distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentVector {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl MomentVector {
    pub const ZERO: MomentVector = MomentVector { m1: 0.0, m2: 0.0, m3: 0.0, m4: 0.0 };

    pub fn new(m1: f64, m2: f64, m3: f64, m4: f64) -> Self {
        Self { m1, m2, m3, m4 }
    }

    pub fn from_array(m: [f64; 4]) -> Self {
        Self::new(m[0], m[1], m[2], m[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.m1, self.m2, self.m3, self.m4]
    }

    /// Moments of layers given as `(p, θ)` pairs.
    pub fn from_layers(layers: &[(f64, f64)]) -> Self {
        layers.iter().fold(Self::ZERO, |acc, &(p, theta)| {
            let (s2, c2) = (2.0 * theta).sin_cos();
            let (s4, c4) = (4.0 * theta).sin_cos();
            Self::new(acc.m1 + p * c2, acc.m2 + p * s2, acc.m3 + p * c4, acc.m4 + p * s4)
        })
    }

    /// Moments seen in a frame where every layer angle is increased by `gamma`.
    pub fn rotated(&self, gamma: f64) -> Self {
        let (s2, c2) = (2.0 * gamma).sin_cos();
        let (s4, c4) = (4.0 * gamma).sin_cos();
        Self::new(
            self.m1 * c2 - self.m2 * s2,
            self.m1 * s2 + self.m2 * c2,
            self.m3 * c4 - self.m4 * s4,
            self.m3 * s4 + self.m4 * c4,
        )
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        moment_feasibility(self).iter().all(|&g| g <= tol)
    }
}

/// `diag(1/(2μ), 1/(2μ), 1/(2κ))` for a plane-stress isotropic phase.
pub fn isotropic_compliance(e: f64, nu: f64) -> Result<ComplianceMatrix> {
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::InvalidMaterial(format!("Young's modulus must be positive, got {e}")));
    }
    let shear = e / (2.0 * (1.0 + nu));
    let bulk = e / (2.0 * (1.0 - nu));
    Ok(Matrix3::from_diagonal(&Vector3::new(
        1.0 / (2.0 * shear),
        1.0 / (2.0 * shear),
        1.0 / (2.0 * bulk),
    )))
}

/// Projected layer dyad `Σ pₙ ξ:(tₙ⊗tₙ)⊗(tₙ⊗tₙ):ξ` written through the moments.
pub fn moment_matrix(m: &MomentVector) -> ComplianceMatrix {
    Matrix3::new(
        1.0 + m.m3, m.m4, 2.0 * m.m1,
        m.m4, 1.0 - m.m3, 2.0 * m.m2,
        2.0 * m.m1, 2.0 * m.m2, 2.0,
    ) * 0.25
}

/// Derivative of [`moment_matrix`] with respect to moment `k` (0-based).
pub(crate) fn moment_matrix_partial(k: usize) -> ComplianceMatrix {
    let mut d = Matrix3::zeros();
    match k {
        0 => {
            d[(0, 2)] = 0.5;
            d[(2, 0)] = 0.5;
        }
        1 => {
            d[(1, 2)] = 0.5;
            d[(2, 1)] = 0.5;
        }
        2 => {
            d[(0, 0)] = 0.25;
            d[(1, 1)] = -0.25;
        }
        3 => {
            d[(0, 1)] = 0.25;
            d[(1, 0)] = 0.25;
        }
        _ => panic!("moment index out of range: {k}"),
    }
    d
}

/// `A = (C⁺ − C⁻)⁻¹ − f E⁺ M(m)`, the matrix inverted inside the laminate formula.
pub(crate) fn laminate_inner_matrix(m: &MomentVector, mat: &MaterialPair) -> ComplianceMatrix {
    let diff = mat.stiff_compliance() - mat.compliant_compliance();
    // diagonal, with non-zero entries whenever e_minus < e_plus
    let diff_inv = Matrix3::from_diagonal(&diff.diagonal().map(|d| 1.0 / d));
    diff_inv - moment_matrix(m) * (mat.f * mat.e_plus)
}

/// Inverse of [`laminate_inner_matrix`]. Near the corners of the moment set
/// its condition number approaches the phase contrast, so the explicit
/// cofactor inverse is useless; `−A` is positive definite on the feasible set
/// and a Cholesky factorization stays accurate.
pub(crate) fn laminate_inner_inverse(m: &MomentVector, mat: &MaterialPair) -> Option<ComplianceMatrix> {
    let a = laminate_inner_matrix(m, mat);
    if let Some(chol) = (-a).cholesky() {
        return Some(-chol.inverse());
    }
    a.lu().try_inverse()
}

/// Effective compliance `C⁺ − (1−f)[(C⁺−C⁻)⁻¹ − f E⁺ M]⁻¹`.
pub fn effective_compliance(m: &MomentVector, mat: &MaterialPair) -> Result<ComplianceMatrix> {
    let c_plus = mat.stiff_compliance();
    if mat.f >= 1.0 {
        return Ok(c_plus);
    }
    if mat.e_minus >= mat.e_plus {
        return Ok(c_plus);
    }
    let inv = laminate_inner_inverse(m, mat).ok_or(Error::Singular("effective_compliance"))?;
    let c = c_plus - inv * (1.0 - mat.f);
    Ok((c + c.transpose()) * 0.5)
}

/// `½ Σ w_j sⱼᵀ C^H sⱼ` with `sⱼ` the ξ coordinates of the stresses.
pub fn complementary_energy(m: &MomentVector, loads: &LoadSet, mat: &MaterialPair) -> Result<f64> {
    let c = effective_compliance(m, mat)?;
    Ok(energy_with_compliance(&c, loads))
}

pub(crate) fn energy_with_compliance(c: &ComplianceMatrix, loads: &LoadSet) -> f64 {
    0.5 * loads
        .cases()
        .iter()
        .map(|case| {
            let s = to_xi_coords(case).as_vector();
            case.weight * s.dot(&(c * s))
        })
        .sum::<f64>()
}

/// Signed residuals `(g₁, g₂, g₃)` of the three moment constraints; a point is
/// feasible when all three are non-positive.
pub fn moment_feasibility(m: &MomentVector) -> [f64; 3] {
    let MomentVector { m1, m2, m3, m4 } = *m;
    let g1 = m1 * m1 + m2 * m2 - 1.0;
    let g2 = m3.abs() - 1.0;
    let g3 = if m3.abs() > 1.0 - 1e-9 {
        // multiplied through by (1 − m3²) to remove the 0/0 at m3 = ±1
        2.0 * m1 * m1 * (1.0 - m3) + 2.0 * m2 * m2 * (1.0 + m3) + m4 * m4 - 4.0 * m1 * m2 * m4
            - (1.0 - m3 * m3)
    } else {
        let q = 1.0 - m3 * m3;
        2.0 * m1 * m1 / (1.0 + m3) + 2.0 * m2 * m2 / (1.0 - m3) + m4 * m4 / q
            - 4.0 * m1 * m2 * m4 / q
            - 1.0
    };
    [g1, g2, g3]
}

/// Determinant of the Toeplitz moment matrix; it is positive exactly on the
/// interior of the feasible set and equals `−(1−m3²)·g₃` away from `m3 = ±1`.
pub(crate) fn toeplitz_determinant(m: &MomentVector) -> f64 {
    let MomentVector { m1, m2, m3, m4 } = *m;
    (1.0 - m3 * m3) - 2.0 * m1 * m1 * (1.0 - m3) - 2.0 * m2 * m2 * (1.0 + m3) - m4 * m4
        + 4.0 * m1 * m2 * m4
}
