//! Method of moving asymptotes with dense constraint rows.
//!
//! Solves `min f0(x)` subject to `f_i(x) <= 0`, `xmin <= x <= xmax`, with
//! the standard artificial variables (`a0 = 1`, `a = 0`, `c = 1000`,
//! `d = 1`). The subproblem is solved by a primal-dual interior point
//! method.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ASYINIT: f64 = 0.5;
const ASYINCR: f64 = 1.2;
const ASYDECR: f64 = 0.7;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;
const EPSIMIN: f64 = 1e-7;
const C_ART: f64 = 1000.0;
const D_ART: f64 = 1.0;
/// Default closest distance of an asymptote to the iterate, relative to the
/// bounds.
pub const ASYMPTOTE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Mma {
    n: usize,
    m: usize,
    move_limit: f64,
    floor: f64,
    iter: usize,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
}

/// Result of one update. `fallback` is set when the subproblem failed and a
/// clamped steepest-descent step was taken instead.
#[derive(Debug, Clone)]
pub struct MmaStep {
    pub x: Vec<f64>,
    pub fallback: bool,
}

/// One evaluated point.
pub struct MmaPoint<'a> {
    pub x: &'a [f64],
    pub f0: f64,
    pub df0: &'a [f64],
    pub fval: &'a [f64],
    pub dfdx: &'a [Vec<f64>],
}

impl Mma {
    pub fn new(n: usize, m: usize, move_limit: f64) -> Self {
        Self {
            n,
            m,
            move_limit,
            floor: ASYMPTOTE_FLOOR,
            iter: 0,
            xold1: Vec::new(),
            xold2: Vec::new(),
            low: vec![0.0; n],
            upp: vec![0.0; n],
        }
    }

    /// Lets the asymptotes approach the iterate closer than the default.
    /// Small floors resolve slow oscillations of a few variables but make
    /// the subproblem badly scaled when many variables are free.
    pub fn with_asymptote_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Computes the next iterate.
    pub fn update(&mut self, pt: &MmaPoint, xmin: &[f64], xmax: &[f64]) -> Result<MmaStep> {
        let (n, m) = (self.n, self.m);
        if pt.x.len() != n || pt.df0.len() != n || xmin.len() != n || xmax.len() != n {
            return Err(Error::Solver("MMA dimension mismatch".into()));
        }
        if pt.fval.len() != m || pt.dfdx.len() != m || pt.dfdx.iter().any(|r| r.len() != n) {
            return Err(Error::Solver("MMA constraint dimension mismatch".into()));
        }
        if !pt.f0.is_finite() || pt.df0.iter().chain(pt.fval).any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite objective or constraint".into()));
        }
        self.iter += 1;
        let x = pt.x;
        if pt.df0.iter().all(|&g| g == 0.0) && pt.fval.iter().all(|&v| v <= 0.0) {
            // already a KKT point; the interior-point solve would only drift
            self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
            if self.xold2.is_empty() {
                self.xold2 = x.to_vec();
            }
            return Ok(MmaStep { x: x.to_vec(), fallback: false });
        }
        if self.iter <= 2 {
            for j in 0..n {
                let span = xmax[j] - xmin[j];
                self.low[j] = x[j] - ASYINIT * span;
                self.upp[j] = x[j] + ASYINIT * span;
            }
        } else {
            for j in 0..n {
                let span = xmax[j] - xmin[j];
                let z = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if z > 0.0 {
                    ASYINCR
                } else if z < 0.0 {
                    ASYDECR
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.max(x[j] - 10.0 * span).min(x[j] - self.floor * span);
                self.upp[j] = upp.min(x[j] + 10.0 * span).max(x[j] + self.floor * span);
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = DMatrix::zeros(m, n);
        let mut qm = DMatrix::zeros(m, n);
        let mut b = DVector::from_iterator(m, pt.fval.iter().map(|v| -v));
        for j in 0..n {
            let span = xmax[j] - xmin[j];
            alfa[j] = (self.low[j] + ALBEFA * (x[j] - self.low[j])).max(x[j] - self.move_limit * span).max(xmin[j]);
            beta[j] = (self.upp[j] - ALBEFA * (self.upp[j] - x[j])).min(x[j] + self.move_limit * span).min(xmax[j]);
            let inv_span = 1.0 / span.max(1e-5);
            let ux1 = self.upp[j] - x[j];
            let xl1 = x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let (p, q) = (pt.df0[j].max(0.0), (-pt.df0[j]).max(0.0));
            let pq = 0.001 * (p + q) + RAA0 * inv_span;
            p0[j] = (p + pq) * ux2;
            q0[j] = (q + pq) * xl2;
            for i in 0..m {
                let g = pt.dfdx[i][j];
                let (p, q) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (p + q) + RAA0 * inv_span;
                pm[(i, j)] = (p + pq) * ux2;
                qm[(i, j)] = (q + pq) * xl2;
                b[i] += pm[(i, j)] / ux1 + qm[(i, j)] / xl1;
            }
        }

        let sub = Subproblem { n, m, low: &self.low, upp: &self.upp, alfa: &alfa, beta: &beta, p0: &p0, q0: &q0, pm: &pm, qm: &qm, b: &b };
        let step = match sub.solve() {
            Ok(x) if x.iter().all(|v| v.is_finite()) => MmaStep { x, fallback: false },
            _ => {
                let gmax = pt.df0.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
                let x = (0..n)
                    .map(|j| {
                        let dx = if gmax > 0.0 { -self.move_limit * (xmax[j] - xmin[j]) * pt.df0[j] / gmax } else { 0.0 };
                        (x[j] + dx).clamp(alfa[j], beta[j])
                    })
                    .collect();
                MmaStep { x, fallback: true }
            }
        };
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        if self.xold2.is_empty() {
            self.xold2 = x.to_vec();
        }
        Ok(step)
    }
}

struct Subproblem<'a> {
    n: usize,
    m: usize,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    pm: &'a DMatrix<f64>,
    qm: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl State {
    fn axpy(&self, t: f64, d: &State) -> State {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u + t * v).collect();
        State {
            x: add(&self.x, &d.x),
            y: add(&self.y, &d.y),
            z: self.z + t * d.z,
            lam: add(&self.lam, &d.lam),
            xsi: add(&self.xsi, &d.xsi),
            eta: add(&self.eta, &d.eta),
            mu: add(&self.mu, &d.mu),
            zet: self.zet + t * d.zet,
            s: add(&self.s, &d.s),
        }
    }
}

impl Subproblem<'_> {
    /// `(plam, qlam)` per variable.
    fn pq_lam(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for i in 0..self.m {
            for j in 0..self.n {
                plam[j] += self.pm[(i, j)] * lam[i];
                qlam[j] += self.qm[(i, j)] * lam[i];
            }
        }
        (plam, qlam)
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                (0..self.n).map(|j| self.pm[(i, j)] / (self.upp[j] - x[j]) + self.qm[(i, j)] / (x[j] - self.low[j])).sum()
            })
            .collect()
    }

    fn residual(&self, st: &State, epsi: f64) -> Vec<f64> {
        let (plam, qlam) = self.pq_lam(&st.lam);
        let gvec = self.gvec(&st.x);
        let mut r = Vec::with_capacity(3 * self.n + 4 * self.m + 2);
        for j in 0..self.n {
            let ux = self.upp[j] - st.x[j];
            let xl = st.x[j] - self.low[j];
            r.push(plam[j] / (ux * ux) - qlam[j] / (xl * xl) - st.xsi[j] + st.eta[j]);
        }
        for i in 0..self.m {
            r.push(C_ART + D_ART * st.y[i] - st.mu[i] - st.lam[i]);
        }
        // a0 = 1, a = 0
        r.push(1.0 - st.zet);
        for i in 0..self.m {
            r.push(gvec[i] - st.y[i] + st.s[i] - self.b[i]);
        }
        for j in 0..self.n {
            r.push(st.xsi[j] * (st.x[j] - self.alfa[j]) - epsi);
            r.push(st.eta[j] * (self.beta[j] - st.x[j]) - epsi);
        }
        for i in 0..self.m {
            r.push(st.mu[i] * st.y[i] - epsi);
            r.push(st.lam[i] * st.s[i] - epsi);
        }
        r.push(st.zet * st.z - epsi);
        r
    }

    fn solve(&self) -> Result<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        let x: Vec<f64> = (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect();
        let mut st = State {
            xsi: (0..n).map(|j| (1.0 / (x[j] - self.alfa[j])).max(1.0)).collect(),
            eta: (0..n).map(|j| (1.0 / (self.beta[j] - x[j])).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: vec![(0.5 * C_ART).max(1.0); m],
            zet: 1.0,
            s: vec![1.0; m],
        };
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let maxabs = |r: &[f64]| r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut epsi = 1.0;
        while epsi > EPSIMIN {
            let mut res = self.residual(&st, epsi);
            let mut resnorm = norm(&res);
            let mut inner = 0;
            while maxabs(&res) > 0.9 * epsi && inner < 200 {
                inner += 1;
                let d = self.newton_direction(&st, epsi)?;
                let mut step = 1.0 / self.max_step(&st, &d).max(1.0);
                let mut trial = st.clone();
                let mut newnorm = 2.0 * resnorm;
                for _ in 0..50 {
                    trial = st.axpy(step, &d);
                    res = self.residual(&trial, epsi);
                    newnorm = norm(&res);
                    if newnorm <= resnorm {
                        break;
                    }
                    step *= 0.5;
                }
                if !newnorm.is_finite() {
                    return Err(Error::Solver("MMA subproblem diverged".into()));
                }
                st = trial;
                resnorm = newnorm;
            }
            epsi *= 0.1;
        }
        Ok(st.x)
    }

    fn max_step(&self, st: &State, d: &State) -> f64 {
        let mut worst: f64 = 0.0;
        let mut pos = |v: f64, dv: f64| worst = worst.max(-1.01 * dv / v);
        for i in 0..self.m {
            pos(st.y[i], d.y[i]);
            pos(st.lam[i], d.lam[i]);
            pos(st.mu[i], d.mu[i]);
            pos(st.s[i], d.s[i]);
        }
        pos(st.z, d.z);
        pos(st.zet, d.zet);
        for j in 0..self.n {
            pos(st.xsi[j], d.xsi[j]);
            pos(st.eta[j], d.eta[j]);
            pos(st.x[j] - self.alfa[j], d.x[j]);
            pos(self.beta[j] - st.x[j], -d.x[j]);
        }
        worst
    }

    fn newton_direction(&self, st: &State, epsi: f64) -> Result<State> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.pq_lam(&st.lam);
        let gvec = self.gvec(&st.x);
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        let mut gg = DMatrix::zeros(m, n);
        for j in 0..n {
            let ux1 = self.upp[j] - st.x[j];
            let xl1 = st.x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let (dxa, dbx) = (st.x[j] - self.alfa[j], self.beta[j] - st.x[j]);
            delx[j] = plam[j] / ux2 - qlam[j] / xl2 - epsi / dxa + epsi / dbx;
            diagx[j] = 2.0 * (plam[j] / (ux2 * ux1) + qlam[j] / (xl2 * xl1)) + st.xsi[j] / dxa + st.eta[j] / dbx;
            for i in 0..m {
                gg[(i, j)] = self.pm[(i, j)] / ux2 - self.qm[(i, j)] / xl2;
            }
        }
        let dely: Vec<f64> = (0..m).map(|i| C_ART + D_ART * st.y[i] - st.lam[i] - epsi / st.y[i]).collect();
        let delz = 1.0 - epsi / st.z;
        let dellam: Vec<f64> = (0..m).map(|i| gvec[i] - st.y[i] - self.b[i] + epsi / st.lam[i]).collect();
        let diagy: Vec<f64> = (0..m).map(|i| D_ART + st.mu[i] / st.y[i]).collect();

        // reduced system in (dlam, dz)
        let mut aa = DMatrix::zeros(m + 1, m + 1);
        let mut bb = DVector::zeros(m + 1);
        for i in 0..m {
            aa[(i, i)] = st.s[i] / st.lam[i] + 1.0 / diagy[i];
            for k in 0..m {
                aa[(i, k)] += (0..n).map(|j| gg[(i, j)] * gg[(k, j)] / diagx[j]).sum::<f64>();
            }
            bb[i] = dellam[i] + dely[i] / diagy[i] - (0..n).map(|j| gg[(i, j)] * delx[j] / diagx[j]).sum::<f64>();
        }
        aa[(m, m)] = -st.zet / st.z;
        bb[m] = delz;
        let sol = aa.lu().solve(&bb).ok_or_else(|| Error::Solver("singular MMA subproblem system".into()))?;
        let dlam: Vec<f64> = (0..m).map(|i| sol[i]).collect();
        let dz = sol[m];
        let dx: Vec<f64> = (0..n)
            .map(|j| (-delx[j] - (0..m).map(|i| gg[(i, j)] * dlam[i]).sum::<f64>()) / diagx[j])
            .collect();
        let dy: Vec<f64> = (0..m).map(|i| (-dely[i] + dlam[i]) / diagy[i]).collect();
        let dxsi = (0..n)
            .map(|j| {
                let dxa = st.x[j] - self.alfa[j];
                -st.xsi[j] + epsi / dxa - st.xsi[j] * dx[j] / dxa
            })
            .collect();
        let deta = (0..n)
            .map(|j| {
                let dbx = self.beta[j] - st.x[j];
                -st.eta[j] + epsi / dbx + st.eta[j] * dx[j] / dbx
            })
            .collect();
        let dmu = (0..m).map(|i| -st.mu[i] + epsi / st.y[i] - st.mu[i] * dy[i] / st.y[i]).collect();
        let dzet = -st.zet + epsi / st.z - st.zet * dz / st.z;
        let ds = (0..m).map(|i| -st.s[i] + epsi / st.lam[i] - st.s[i] * dlam[i] / st.lam[i]).collect();
        Ok(State { x: dx, y: dy, z: dz, lam: dlam, xsi: dxsi, eta: deta, mu: dmu, zet: dzet, s: ds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F>(mut mma: Mma, x0: Vec<f64>, iters: usize, lo: f64, hi: f64, mut f: F) -> Vec<f64>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>),
    {
        let n = x0.len();
        let mut x = x0;
        for _ in 0..iters {
            let (f0, df0, fval, dfdx) = f(&x);
            let pt = MmaPoint { x: &x, f0, df0: &df0, fval: &fval, dfdx: &dfdx };
            x = mma.update(&pt, &vec![lo; n], &vec![hi; n]).unwrap().x;
        }
        x
    }

    #[test]
    fn unconstrained_quadratic() {
        let f = |x: &[f64]| ((x[0] - 0.3).powi(2), vec![2.0 * (x[0] - 0.3)], vec![], vec![]);
        let x = run(Mma::new(1, 0, 0.2).with_asymptote_floor(1e-6), vec![0.8], 50, 0.0, 1.0, f);
        assert!((x[0] - 0.3).abs() < 1e-6, "{}", x[0]);
        // the default floor leaves a slowly decaying two-cycle
        let x = run(Mma::new(1, 0, 0.2), vec![0.8], 50, 0.0, 1.0, f);
        assert!((x[0] - 0.3).abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn linear_objective_with_sphere_constraint() {
        // min x1 + x2 s.t. x1² + x2² <= 1: optimum at −(1, 1)/√2
        let x = run(Mma::new(2, 1, 0.2), vec![0.0, 0.0], 100, -2.0, 2.0, |x| {
            (x[0] + x[1], vec![1.0, 1.0], vec![x[0] * x[0] + x[1] * x[1] - 1.0], vec![vec![2.0 * x[0], 2.0 * x[1]]])
        });
        let r = -std::f64::consts::FRAC_1_SQRT_2;
        assert!((x[0] - r).abs() < 1e-4 && (x[1] - r).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn linear_program_with_volume_constraint() {
        let n = 10;
        let f = 0.35;
        let x0: Vec<f64> = (0..n).map(|k| 0.1 + 0.08 * k as f64).collect();
        let x = run(Mma::new(n, 1, 0.2), x0, 100, 0.0, 1.0, |x| {
            let mean = x.iter().sum::<f64>() / n as f64;
            (-x.iter().sum::<f64>(), vec![-1.0; n], vec![mean / f - 1.0], vec![vec![1.0 / (n as f64 * f); n]])
        });
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!((mean - f).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn zero_gradient_keeps_design() {
        let x0 = vec![0.2, 0.5, 0.9];
        let mut mma = Mma::new(3, 1, 0.2);
        let zeros = vec![0.0; 3];
        let pt = MmaPoint { x: &x0, f0: 1.0, df0: &zeros, fval: &[-0.5], dfdx: std::slice::from_ref(&zeros) };
        let x = mma.update(&pt, &[0.0; 3], &[1.0; 3]).unwrap().x;
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn iterates_respect_bounds_and_move_limit() {
        let x0 = vec![0.5; 4];
        let mut mma = Mma::new(4, 1, 0.2);
        let df0 = vec![1.0, -1.0, 5.0, -5.0];
        let pt = MmaPoint { x: &x0, f0: 0.0, df0: &df0, fval: &[-1.0], dfdx: &[vec![0.25; 4]] };
        let x = mma.update(&pt, &[0.0; 4], &[1.0; 4]).unwrap().x;
        for v in &x {
            assert!((0.0..=1.0).contains(v) && (v - 0.5).abs() <= 0.2 + 1e-12);
        }
        assert!(x[0] < 0.5 && x[1] > 0.5);
    }
}
