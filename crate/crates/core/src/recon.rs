//! Explicit rank-3 laminates from optimal moments.
//!
//! The moments are first rotated so that the fourth one vanishes, which leaves
//! a point `m̃` of a three-dimensional convex body with four corners (the
//! single-layer laminates). `m̃` is written as a convex combination of a corner
//! and a point `b` on the curved boundary; every boundary point is the moment
//! vector of a two-layer laminate, which gives three layers in total.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laminate::{moment_feasibility, MomentVector};

/// Tolerance on the two saturation residuals that identify a corner.
pub const RANK1_TOL: f64 = 1e-7;
/// Contributions at or below this count as absent layers.
pub const LAYER_TOL: f64 = 1e-9;

const ROUND_TRIP_TOL: f64 = 1e-6;
const BOUNDARY_TOL: f64 = 1e-7;

/// Corners of the rotated moment body and the layer angle each one represents.
pub const CORNERS: [([f64; 3], f64); 4] = [
    ([1.0, 0.0, 1.0], 0.0),
    ([-1.0, 0.0, 1.0], FRAC_PI_2),
    ([0.0, 1.0, -1.0], FRAC_PI_4),
    ([0.0, -1.0, -1.0], -FRAC_PI_4),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedMoments {
    pub mt1: f64,
    pub mt2: f64,
    pub mt3: f64,
    pub gamma: f64,
}

impl RotatedMoments {
    pub fn as_array(&self) -> [f64; 3] {
        [self.mt1, self.mt2, self.mt3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rank2BoundarySolution {
    pub b: [f64; 3],
    pub alpha: f64,
    pub corner: [f64; 3],
    /// Layer angle of the corner in the rotated frame.
    pub corner_angle: f64,
    pub t_angle: f64,
    pub beta_b: f64,
    pub p1b: f64,
    pub p2b: f64,
    pub theta1b: f64,
    pub theta2b: f64,
    pub delta: f64,
    pub s: f64,
}

/// Two-layer laminate realizing a boundary point, in the rotated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rank2Layers {
    pub t_angle: f64,
    pub beta_b: f64,
    pub p1: f64,
    pub p2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub delta: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank3Laminate {
    pub p: [f64; 3],
    pub theta: [f64; 3],
    pub mu: [f64; 3],
    pub f: f64,
    pub rank: usize,
}

impl Rank3Laminate {
    /// Builds a laminate from contributions and angles, deriving the widths.
    pub fn new(p: [f64; 3], theta: [f64; 3], f: f64) -> Self {
        let theta = theta.map(normalize_angle);
        let mu = relative_widths(&p, f);
        let rank = p.iter().filter(|&&x| x > LAYER_TOL).count();
        Self { p, theta, mu, f, rank }
    }

    /// Inverse of the width relation: a laminate from sequential widths.
    pub fn from_widths(theta: [f64; 3], mu: [f64; 3]) -> Self {
        let f = total_fraction(&mu);
        let p = [
            mu[0] / f,
            (1.0 - mu[0]) * mu[1] / f,
            (1.0 - mu[0]) * (1.0 - mu[1]) * mu[2] / f,
        ];
        Self::new(p, theta, f)
    }

    pub fn moments(&self) -> MomentVector {
        let layers: Vec<(f64, f64)> = self.p.iter().copied().zip(self.theta).collect();
        MomentVector::from_layers(&layers)
    }

    /// Layers with a non-negligible contribution, as `(p, θ)`.
    pub fn active_layers(&self) -> Vec<(f64, f64)> {
        self.p
            .iter()
            .copied()
            .zip(self.theta)
            .filter(|&(p, _)| p > LAYER_TOL)
            .collect()
    }

    pub fn stiff_fraction(&self) -> f64 {
        total_fraction(&self.mu)
    }
}

/// Sequential widths `μ₁ = p₁f`, `μ₂ = p₂f/(1−μ₁)`, `μ₃ = p₃f/((1−μ₁)(1−μ₂))`.
pub fn relative_widths(p: &[f64; 3], f: f64) -> [f64; 3] {
    let ratio = |num: f64, den: f64| if num <= 0.0 { 0.0 } else { (num / den).min(1.0) };
    let mu1 = ratio(p[0] * f, 1.0);
    let mu2 = ratio(p[1] * f, 1.0 - mu1);
    let mu3 = ratio(p[2] * f, (1.0 - mu1) * (1.0 - mu2));
    [mu1, mu2, mu3]
}

pub fn total_fraction(mu: &[f64; 3]) -> f64 {
    mu[0] + (1.0 - mu[0]) * mu[1] + (1.0 - mu[0]) * (1.0 - mu[1]) * mu[2]
}

/// Maps an orientation into `(−π/2, π/2]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Rotation that removes the fourth moment; `m̃3 = |m3 + i m4| ≥ 0` afterwards.
pub fn rotation_angle(m: &MomentVector) -> f64 {
    // 0.0 − m4 keeps the branch at +π for m4 = ±0 and m3 < 0
    0.25 * (0.0 - m.m4).atan2(m.m3)
}

pub fn rotate_moments(m: &MomentVector, gamma: f64) -> Result<RotatedMoments> {
    let r = m.rotated(gamma);
    if r.m4.abs() > 1e-10 {
        return Err(Error::InconsistentRotation(r.m4));
    }
    Ok(RotatedMoments { mt1: r.m1, mt2: r.m2, mt3: r.m3, gamma })
}

/// Cleared boundary function of the rotated body; zero on the curved boundary,
/// negative inside.
pub fn boundary_residual(b: &[f64; 3]) -> f64 {
    2.0 * b[0] * b[0] * (1.0 - b[2]) + 2.0 * b[1] * b[1] * (1.0 + b[2]) - (1.0 - b[2] * b[2])
}

/// Global layer angle when the rotated moments sit on a corner.
pub fn detect_rank1(rm: &RotatedMoments) -> Option<f64> {
    let x = rm.as_array();
    let saturation = x[0] * x[0] + x[1] * x[1] - 1.0;
    if saturation.abs() > RANK1_TOL || boundary_residual(&x).abs() > RANK1_TOL {
        return None;
    }
    let (_, angle) = CORNERS
        .iter()
        .map(|(c, a)| ((0..3).map(|i| (c[i] - x[i]).powi(2)).sum::<f64>(), *a))
        .min_by(|a, b| a.0.total_cmp(&b.0))?;
    Some(normalize_angle(angle - rm.gamma))
}

/// Coefficients `[c0, c1, c2, c3]` of `boundary_residual(a + s d)` in powers of `s`.
fn ray_polynomial(a: &[f64; 3], d: &[f64; 3]) -> [f64; 4] {
    let (lo, hi) = (1.0 - a[2], 1.0 + a[2]);
    [
        2.0 * a[0] * a[0] * lo + 2.0 * a[1] * a[1] * hi - (1.0 - a[2] * a[2]),
        2.0 * (2.0 * a[0] * d[0] * lo - a[0] * a[0] * d[2])
            + 2.0 * (2.0 * a[1] * d[1] * hi + a[1] * a[1] * d[2])
            + 2.0 * a[2] * d[2],
        2.0 * (d[0] * d[0] * lo - 2.0 * a[0] * d[0] * d[2])
            + 2.0 * (d[1] * d[1] * hi + 2.0 * a[1] * d[1] * d[2])
            + d[2] * d[2],
        2.0 * d[2] * (d[1] * d[1] - d[0] * d[0]),
    ]
}

/// Writes `m̃ = α a + (1−α) b` with `a` a corner and `b` on the curved boundary.
pub fn split_corner_boundary(rm: &RotatedMoments) -> Result<Rank2BoundarySolution> {
    let x = rm.as_array();
    let mut last_err = String::from("no corner gives a valid split");
    for &(a, corner_angle) in CORNERS.iter() {
        let d = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if dn < 1e-12 {
            last_err = "moments coincide with a corner".into();
            continue;
        }
        // a is a singular point of the boundary, so the constant and linear
        // coefficients vanish and the ray meets the boundary again at −c2/c3
        let c = ray_polynomial(&a, &d);
        if c[3].abs() < 1e-14 {
            continue;
        }
        let s = -c[2] / c[3];
        if !s.is_finite() || s < 1.0 - 1e-9 {
            continue;
        }
        let s = s.max(1.0);
        let b = [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]];
        if b[2].abs() > 1.0 + 1e-9 || b[0] * b[0] + b[1] * b[1] > 1.0 + 1e-9 {
            continue;
        }
        let b = [b[0], b[1], b[2].clamp(-1.0, 1.0)];
        let alpha = (1.0 - 1.0 / s).clamp(0.0, 1.0);
        match boundary_to_rank2(&b) {
            Ok(r2) => {
                return Ok(Rank2BoundarySolution {
                    b,
                    alpha,
                    corner: a,
                    corner_angle,
                    t_angle: r2.t_angle,
                    beta_b: r2.beta_b,
                    p1b: r2.p1,
                    p2b: r2.p2,
                    theta1b: r2.theta1,
                    theta2b: r2.theta2,
                    delta: r2.delta,
                    s: r2.s,
                })
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::Reconstruction(format!("corner/boundary split failed for {x:?}: {last_err}")))
}

fn two_layer_moments(p1: f64, t1: f64, p2: f64, t2: f64) -> [f64; 4] {
    MomentVector::from_layers(&[(p1, t1), (p2, t2)]).to_array()
}

fn reproduces(b: &[f64; 3], m: &[f64; 4]) -> bool {
    (m[0] - b[0]).abs() <= BOUNDARY_TOL
        && (m[1] - b[1]).abs() <= BOUNDARY_TOL
        && (m[2] - b[2]).abs() <= BOUNDARY_TOL
        && m[3].abs() <= BOUNDARY_TOL
}

/// Two layers (rotated frame) whose moments equal the boundary point `b`
/// with vanishing fourth moment.
pub fn boundary_to_rank2(b: &[f64; 3]) -> Result<Rank2Layers> {
    let residual = boundary_residual(b);
    if residual.abs() > 1e-8 {
        return Err(Error::Reconstruction(format!("{b:?} is not on the boundary (residual {residual:e})")));
    }
    let beta = 0.5 * b[2].clamp(-1.0, 1.0).acos();
    let (sb, cb) = beta.sin_cos();

    // On the two straight edges the layers are an orthogonal pair.
    const EDGE: f64 = 1e-9;
    if sb < EDGE || cb < EDGE {
        let (along, angle) = if sb < EDGE { (b[0], 0.0) } else { (b[1], FRAC_PI_4) };
        let p1 = (0.5 * (1.0 + along)).clamp(0.0, 1.0);
        if p1 <= 0.0 || p1 >= 1.0 {
            return Err(Error::Reconstruction(format!("{b:?} is a corner, not a two-layer point")));
        }
        let layers = Rank2Layers {
            t_angle: if sb < EDGE { along.clamp(-1.0, 1.0).acos() } else { along.clamp(-1.0, 1.0).asin() },
            beta_b: beta,
            p1,
            p2: 1.0 - p1,
            theta1: angle,
            theta2: angle + FRAC_PI_2,
            delta: FRAC_PI_2,
            s: f64::NAN,
        };
        let m = two_layer_moments(layers.p1, layers.theta1, layers.p2, layers.theta2);
        if reproduces(b, &m) {
            return Ok(layers);
        }
        return Err(Error::Reconstruction(format!("edge point {b:?} not reproduced")));
    }

    let t = (b[1] / sb).atan2(b[0] / cb);
    let c = (2.0 * beta).cos();
    let s = (c * c - 2.0 * c * (2.0 * t).cos() + 1.0).max(0.0);
    let root_s = s.sqrt();
    let delta = root_s.atan2((1.0 - c * c).max(0.0).sqrt());
    let p1 = if root_s > 0.0 { 0.5 * (1.0 + c * (2.0 * t).sin() / root_s) } else { 0.5 };
    let p1 = p1.clamp(0.0, 1.0);
    let p2 = 1.0 - p1;
    let (st, ct) = t.sin_cos();
    let theta1 = (p2 * (2.0 * delta).sin() - sb * st)
        .atan2(-(p1 + p2 * (2.0 * delta).cos() + cb * ct))
        .rem_euclid(PI);

    for shift in [0.0, FRAC_PI_2] {
        let t1 = theta1 + shift;
        let t2 = t1 + delta;
        let m = two_layer_moments(p1, t1, p2, t2);
        if reproduces(b, &m) {
            return Ok(Rank2Layers {
                t_angle: t,
                beta_b: beta,
                p1,
                p2,
                theta1: normalize_angle(t1),
                theta2: normalize_angle(t2),
                delta,
                s,
            });
        }
    }
    Err(Error::Reconstruction(format!("two-layer solution for {b:?} does not reproduce it")))
}

/// Rank-3 (or lower) laminate whose moments equal `m`.
pub fn reconstruct(m: &MomentVector, f: f64) -> Result<Rank3Laminate> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidMaterial(format!("f must lie in (0, 1], got {f}")));
    }
    let g = moment_feasibility(m);
    if g.iter().any(|&x| x > 1e-8) {
        return Err(Error::InfeasibleMoments(g));
    }
    let gamma = rotation_angle(m);
    let rm = rotate_moments(m, gamma)?;

    let lam = if let Some(theta) = detect_rank1(&rm) {
        Rank3Laminate::new([1.0, 0.0, 0.0], [theta; 3], f)
    } else {
        let split = split_corner_boundary(&rm)?;
        let q = 1.0 - split.alpha;
        Rank3Laminate::new(
            [split.alpha, q * split.p1b, q * split.p2b],
            [split.corner_angle - gamma, split.theta1b - gamma, split.theta2b - gamma],
            f,
        )
    };

    let err = lam.moments().max_abs_diff(m);
    if err > ROUND_TRIP_TOL {
        return Err(Error::Reconstruction(format!("moment round trip error {err:e} for {m:?}")));
    }
    Ok(lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_angle_branches() {
        assert_eq!(rotation_angle(&MomentVector::new(0.0, 0.0, 1.0, 0.0)), 0.0);
        assert_relative_eq!(rotation_angle(&MomentVector::new(0.0, 0.0, 0.0, 1.0)), -PI / 8.0);
        let m = MomentVector::new(0.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(rotation_angle(&m), FRAC_PI_4);
        let m = MomentVector::new(0.0, 0.0, -1.0, -0.0);
        assert_relative_eq!(rotation_angle(&m), FRAC_PI_4);
        let rm = rotate_moments(&m, rotation_angle(&m)).unwrap();
        assert_relative_eq!(rm.mt3, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_rejects_wrong_angle() {
        let m = MomentVector::new(0.1, 0.0, 0.2, 0.3);
        assert!(matches!(rotate_moments(&m, 0.0), Err(Error::InconsistentRotation(_))));
    }

    #[test]
    fn corners_are_rank_one() {
        for (corner, angle) in CORNERS {
            let rm = RotatedMoments { mt1: corner[0], mt2: corner[1], mt3: corner[2], gamma: 0.0 };
            assert_relative_eq!(detect_rank1(&rm).unwrap(), normalize_angle(angle));
        }
        let rm = RotatedMoments { mt1: 0.0, mt2: 0.0, mt3: 0.0, gamma: 0.0 };
        assert!(detect_rank1(&rm).is_none());
    }

    #[test]
    fn split_along_positive_diagonal() {
        let rm = RotatedMoments { mt1: 0.5, mt2: 0.0, mt3: 0.5, gamma: 0.0 };
        let split = split_corner_boundary(&rm).unwrap();
        assert_eq!(split.corner, [1.0, 0.0, 1.0]);
        assert_relative_eq!(split.b[0], -0.5, epsilon = 1e-14);
        assert_relative_eq!(split.b[2], -0.5, epsilon = 1e-14);
        assert_relative_eq!(split.alpha, 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(split.beta_b, PI / 3.0, epsilon = 1e-14);
        assert!(boundary_residual(&split.b).abs() < 1e-10);
        for i in [0, 2] {
            let ratio = (rm.as_array()[i] - split.corner[i]) / (split.b[i] - split.corner[i]);
            assert_relative_eq!(ratio, 1.0 - split.alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_point_maps_to_itself() {
        let b = [0.5, 0.5, 0.0];
        let rm = RotatedMoments { mt1: b[0], mt2: b[1], mt3: b[2], gamma: 0.0 };
        let split = split_corner_boundary(&rm).unwrap();
        assert!(split.alpha.abs() < 1e-12);
        for i in 0..3 {
            assert_relative_eq!(split.b[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_boundary_point() {
        let b = [std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0];
        let r = boundary_to_rank2(&b).unwrap();
        assert_relative_eq!(r.p1, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.beta_b, FRAC_PI_4, epsilon = 1e-12);
        let mut angles = [r.theta1, r.theta2];
        angles.sort_by(f64::total_cmp);
        assert_relative_eq!(angles[0], -PI / 8.0, epsilon = 1e-12);
        assert_relative_eq!(angles[1], PI / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn edge_points_use_orthogonal_pairs() {
        let r = boundary_to_rank2(&[0.4, 0.0, 1.0]).unwrap();
        assert_relative_eq!(r.p1, 0.7, epsilon = 1e-14);
        assert_eq!(r.theta1, 0.0);
        let r = boundary_to_rank2(&[0.0, -0.2, -1.0]).unwrap();
        assert_relative_eq!(r.p1, 0.4, epsilon = 1e-14);
        assert!(boundary_to_rank2(&[1.0, 0.0, 1.0]).is_err());
        assert!(boundary_to_rank2(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn corner_moments_reconstruct_single_layer() {
        let lam = reconstruct(&MomentVector::new(1.0, 0.0, 1.0, 0.0), 0.4).unwrap();
        assert_eq!(lam.rank, 1);
        assert_eq!(lam.theta[0], 0.0);
        assert_relative_eq!(lam.mu[0], 0.4);
    }

    #[test]
    fn widths_recover_fraction() {
        let lam = Rank3Laminate::from_widths([PI / 3.0, -PI / 6.0, PI / 6.0], [0.2, 0.25, 0.5]);
        assert_relative_eq!(lam.f, 0.7, epsilon = 1e-15);
        assert_relative_eq!(lam.p[0], 2.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(lam.p[1], 2.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(lam.p[2], 3.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(lam.mu[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(lam.mu[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn infeasible_moments_are_rejected() {
        assert!(matches!(
            reconstruct(&MomentVector::new(0.9, 0.9, 0.0, 0.0), 0.5),
            Err(Error::InfeasibleMoments(_))
        ));
    }
}
