//! Periodic finite-element homogenization on parallelogram cells.
//!
//! The cell is split into `nx × ny` congruent parallelogram elements with
//! bilinear shape functions, so a single element matrix (scaled by the element
//! modulus) serves the whole mesh. Three cell problems with unit macroscopic
//! strains share one sparse Cholesky factorization; the symbolic part and the
//! assembly scatter map are built once per mesh in [`Homogenizer`].

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::laminate::{LoadSet, MaterialPair};
use crate::unitcell::{DensityField, ParallelogramCell};

pub type ElementMatrix = SMatrix<f64, 8, 8>;
type ElementVector = SVector<f64, 8>;

pub const DEFAULT_PENALTY: f64 = 3.0;
const RESIDUAL_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-9;
const UNUSED: u32 = u32::MAX;

/// Plane-stress constitutive matrix in engineering Voigt notation.
pub fn plane_stress_stiffness(e: f64, nu: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu)) * (e / (1.0 - nu * nu))
}

/// `x = Q e` takes engineering Voigt strains to ξ coordinates.
fn voigt_to_xi() -> Matrix3<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Matrix3::new(r, -r, 0.0, 0.0, 0.0, r, r, r, 0.0)
}

/// Bilinear element on the parallelogram spanned by `h1` and `h2`, with local
/// nodes at `0, h1, h1+h2, h2` and DOFs `(x, y)` per node.
pub fn element_stiffness(h1: [f64; 2], h2: [f64; 2], e: f64, nu: f64) -> Result<ElementMatrix> {
    let det = h1[0] * h2[1] - h1[1] * h2[0];
    if !(det > 0.0) {
        return Err(Error::InvalidMesh(format!("element Jacobian {det} is not positive")));
    }
    // rows of J⁻ᵀ applied to (∂/∂ξ, ∂/∂η)
    let inv = [[h2[1] / det, -h1[1] / det], [-h2[0] / det, h1[0] / det]];
    let d = plane_stress_stiffness(e, nu);
    let g = 0.5 / 3f64.sqrt();
    let mut ke = ElementMatrix::zeros();
    for &xi in &[0.5 - g, 0.5 + g] {
        for &eta in &[0.5 - g, 0.5 + g] {
            let dn_dxi = [-(1.0 - eta), 1.0 - eta, eta, -eta];
            let dn_deta = [-(1.0 - xi), -xi, xi, 1.0 - xi];
            let mut b = SMatrix::<f64, 3, 8>::zeros();
            for k in 0..4 {
                let dx = inv[0][0] * dn_dxi[k] + inv[0][1] * dn_deta[k];
                let dy = inv[1][0] * dn_dxi[k] + inv[1][1] * dn_deta[k];
                b[(0, 2 * k)] = dx;
                b[(1, 2 * k + 1)] = dy;
                b[(2, 2 * k)] = dy;
                b[(2, 2 * k + 1)] = dx;
            }
            ke += b.transpose() * d * b * (0.25 * det);
        }
    }
    Ok((ke + ke.transpose()) * 0.5)
}

/// Effective stiffness of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizedTensor {
    /// Engineering Voigt form (11, 22, 12 with engineering shear).
    pub voigt: Matrix3<f64>,
}

impl HomogenizedTensor {
    /// Stiffness in the ξ basis.
    pub fn xi_stiffness(&self) -> Matrix3<f64> {
        let q_inv = voigt_to_xi().try_inverse().expect("fixed basis change");
        q_inv.transpose() * self.voigt * q_inv
    }

    /// Compliance in the ξ basis, comparable to the laminate formulas.
    pub fn xi_compliance(&self) -> Result<Matrix3<f64>> {
        self.xi_stiffness().try_inverse().ok_or(Error::Singular("homogenized stiffness"))
    }

    pub fn voigt_compliance(&self) -> Result<Matrix3<f64>> {
        self.voigt
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::Singular("homogenized stiffness"))
    }

    /// `½ Σ w σ·S σ` in engineering notation.
    pub fn complementary_energy(&self, loads: &LoadSet) -> Result<f64> {
        let s = self.voigt_compliance()?;
        Ok(0.5 * loads.cases().iter().map(|c| c.weight * c.voigt().dot(&(s * c.voigt()))).sum::<f64>())
    }
}

/// Cell-problem solution: effective stiffness plus the per-element mutual
/// energies `Q_e[i][j] = (u0ⁱ − χⁱ)ᵀ K0 (u0ʲ − χʲ)` for a unit modulus.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub tensor: HomogenizedTensor,
    pub element_energy: Vec<Matrix3<f64>>,
    pub area: f64,
}

/// Reusable assembly and factorization data of one periodic mesh.
pub struct Homogenizer {
    pub nx: usize,
    pub ny: usize,
    pub cell: ParallelogramCell,
    nu: f64,
    ke: ElementMatrix,
    /// element-local DOFs mapped to reduced global DOFs (`UNUSED` for the fixed node)
    dofs: Vec<[u32; 8]>,
    /// element-local pair `(a, b)` to position in the lower-triangular values
    scatter: Vec<[u32; 64]>,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLlt<usize>,
    u0: [ElementVector; 3],
    ndof: usize,
}

impl Homogenizer {
    pub fn new(cell: &ParallelogramCell, nx: usize, ny: usize, nu: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidMesh(format!("mesh {nx}x{ny} is too small")));
        }
        let h1 = [cell.a1[0] / nx as f64, cell.a1[1] / nx as f64];
        let h2 = [cell.a2[0] / ny as f64, cell.a2[1] / ny as f64];
        let ke = element_stiffness(h1, h2, 1.0, nu)?;

        let nodes = nx * ny;
        let ndof = 2 * nodes - 2;
        let reduced = |node: usize, c: usize| -> u32 {
            let d = 2 * node + c;
            if d < 2 {
                UNUSED
            } else {
                (d - 2) as u32
            }
        };
        let mut dofs = Vec::with_capacity(nodes);
        for j in 0..ny {
            for i in 0..nx {
                let (ip, jp) = ((i + 1) % nx, (j + 1) % ny);
                let n = [j * nx + i, j * nx + ip, jp * nx + ip, jp * nx + i];
                dofs.push(std::array::from_fn(|k| reduced(n[k / 2], k % 2)));
            }
        }

        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); ndof];
        for ed in &dofs {
            for &r in ed {
                for &c in ed {
                    if r != UNUSED && c != UNUSED && r >= c {
                        columns[c as usize].push(r as usize);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(ndof + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let scatter = dofs
            .iter()
            .map(|ed| {
                std::array::from_fn(|k| {
                    let (r, c) = (ed[k / 8], ed[k % 8]);
                    if r == UNUSED || c == UNUSED || r < c {
                        return UNUSED;
                    }
                    let (lo, hi) = (col_ptr[c as usize], col_ptr[c as usize + 1]);
                    let pos = row_idx[lo..hi].binary_search(&(r as usize)).expect("pattern entry");
                    (lo + pos) as u32
                })
            })
            .collect();
        let pattern = SymbolicSparseColMat::<usize>::new_checked(ndof, ndof, col_ptr, None, row_idx);
        let symbolic = SymbolicLlt::try_new(pattern.as_ref(), Side::Lower)
            .map_err(|e| Error::Solver(format!("symbolic factorization failed: {e:?}")))?;

        // nodal displacements of the three unit strains ε11, ε22, γ12
        let local = [[0.0, 0.0], h1, [h1[0] + h2[0], h1[1] + h2[1]], h2];
        let u0 = [
            ElementVector::from_fn(|k, _| if k % 2 == 0 { local[k / 2][0] } else { 0.0 }),
            ElementVector::from_fn(|k, _| if k % 2 == 1 { local[k / 2][1] } else { 0.0 }),
            ElementVector::from_fn(|k, _| 0.5 * if k % 2 == 0 { local[k / 2][1] } else { local[k / 2][0] }),
        ];

        Ok(Self { nx, ny, cell: cell.clone(), nu, ke, dofs, scatter, pattern, symbolic, u0, ndof })
    }

    pub fn for_field(field: &DensityField, nu: f64) -> Result<Self> {
        Self::new(&field.cell, field.nx, field.ny, nu)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn element_matrix(&self) -> &ElementMatrix {
        &self.ke
    }

    fn check_field(&self, field: &DensityField) -> Result<()> {
        if field.nx != self.nx || field.ny != self.ny {
            return Err(Error::InvalidMesh(format!(
                "field is {}x{}, homogenizer expects {}x{}",
                field.nx, field.ny, self.nx, self.ny
            )));
        }
        Ok(())
    }

    fn matvec(&self, values: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let col_ptr = self.pattern.col_ptr();
        let rows = self.pattern.row_idx();
        for c in 0..self.ndof {
            for k in col_ptr[c]..col_ptr[c + 1] {
                let r = rows[k];
                y[r] += values[k] * x[c];
                if r != c {
                    y[c] += values[k] * x[r];
                }
            }
        }
    }

    /// Solves the three cell problems for per-element moduli.
    pub fn solve(&self, moduli: &[f64]) -> Result<CellSolution> {
        let ne = self.element_count();
        if moduli.len() != ne {
            return Err(Error::InvalidMesh(format!("{} moduli for {ne} elements", moduli.len())));
        }
        let mut values = vec![0.0; self.pattern.row_idx().len()];
        let mut rhs = Mat::<f64>::zeros(self.ndof, 3);
        let f0: [ElementVector; 3] = std::array::from_fn(|i| self.ke * self.u0[i]);
        for (e, (map, ed)) in self.scatter.iter().zip(&self.dofs).enumerate() {
            let m = moduli[e];
            for (k, &pos) in map.iter().enumerate() {
                if pos != UNUSED {
                    values[pos as usize] += m * self.ke[(k / 8, k % 8)];
                }
            }
            for (a, &d) in ed.iter().enumerate() {
                if d != UNUSED {
                    for i in 0..3 {
                        rhs[(d as usize, i)] += m * f0[i][a];
                    }
                }
            }
        }

        let matrix = SparseColMatRef::new(self.pattern.as_ref(), &values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), matrix, Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky factorization failed: {e:?}")))?;
        let mut chi = rhs.clone();
        llt.solve_in_place(chi.as_mut());

        // residual check with one step of iterative refinement as fallback
        let mut ax = vec![0.0; self.ndof];
        for i in 0..3 {
            let b: Vec<f64> = (0..self.ndof).map(|r| rhs[(r, i)]).collect();
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for attempt in 0..2 {
                let x: Vec<f64> = (0..self.ndof).map(|r| chi[(r, i)]).collect();
                self.matvec(&values, &x, &mut ax);
                let res: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
                let rnorm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rnorm <= RESIDUAL_TOL * bnorm {
                    break;
                }
                if attempt == 1 {
                    return Err(Error::Solver(format!(
                        "cell problem {i}: relative residual {:e}",
                        rnorm / bnorm
                    )));
                }
                let mut corr = Mat::<f64>::from_fn(self.ndof, 1, |r, _| res[r]);
                llt.solve_in_place(corr.as_mut());
                for r in 0..self.ndof {
                    chi[(r, i)] += corr[(r, 0)];
                }
            }
        }

        let area = self.cell.area().abs();
        let mut voigt = Matrix3::zeros();
        // Cauchy-Schwarz bound of every term, the scale of round-off in the sum
        let mut magnitude = Matrix3::zeros();
        let mut element_energy = Vec::with_capacity(ne);
        for (e, ed) in self.dofs.iter().enumerate() {
            let v: [ElementVector; 3] = std::array::from_fn(|i| {
                let mut v = self.u0[i];
                for (a, &d) in ed.iter().enumerate() {
                    if d != UNUSED {
                        v[a] -= chi[(d as usize, i)];
                    }
                }
                v
            });
            let kv: [ElementVector; 3] = std::array::from_fn(|i| self.ke * v[i]);
            let q = Matrix3::from_fn(|i, j| v[i].dot(&kv[j]));
            voigt += q * moduli[e];
            magnitude += Matrix3::from_fn(|i, j| v[i].norm() * kv[j].norm()) * moduli[e];
            element_energy.push(q);
        }
        voigt /= area;
        let scale = (magnitude / area).max().max(f64::MIN_POSITIVE);
        let asym = (voigt - voigt.transpose()).abs().max();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Solver(format!("homogenized tensor asymmetric by {:e}", asym / scale)));
        }
        let voigt = (voigt + voigt.transpose()) * 0.5;
        Ok(CellSolution { tensor: HomogenizedTensor { voigt }, element_energy, area })
    }

    /// Homogenized stiffness of a density field under SIMP interpolation.
    pub fn homogenize(&self, field: &DensityField, mat: &MaterialPair, p_simp: f64) -> Result<CellSolution> {
        self.check_field(field)?;
        if (mat.nu - self.nu).abs() > 0.0 {
            return Err(Error::InvalidMaterial("Poisson's ratio differs from the mesh's".into()));
        }
        let moduli: Vec<f64> = field.rho.iter().map(|&r| simp_modulus(r, mat, p_simp)).collect();
        self.solve(&moduli)
    }

    /// Complementary energy of the loads and its gradient with respect to
    /// each element density.
    pub fn objective_and_sensitivities(
        &self,
        field: &DensityField,
        loads: &LoadSet,
        mat: &MaterialPair,
        p_simp: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let sol = self.homogenize(field, mat, p_simp)?;
        let s = sol.tensor.voigt_compliance()?;
        let strains: Vec<(f64, Vector3<f64>)> =
            loads.cases().iter().map(|c| (c.weight, s * c.voigt())).collect();
        let objective = 0.5 * loads.cases().iter().map(|c| c.weight * c.voigt().dot(&(s * c.voigt()))).sum::<f64>();
        let grad = field
            .rho
            .iter()
            .zip(&sol.element_energy)
            .map(|(&r, q)| {
                let de = simp_derivative(r, mat, p_simp) / sol.area;
                -0.5 * de * strains.iter().map(|(w, eps)| w * eps.dot(&(q * eps))).sum::<f64>()
            })
            .collect();
        Ok((objective, grad))
    }
}

/// `E(ρ) = e⁻ + ρᵖ (e⁺ − e⁻)`.
pub fn simp_modulus(rho: f64, mat: &MaterialPair, p: f64) -> f64 {
    mat.e_minus + rho.max(0.0).powf(p) * (mat.e_plus - mat.e_minus)
}

pub fn simp_derivative(rho: f64, mat: &MaterialPair, p: f64) -> f64 {
    p * rho.max(0.0).powf(p - 1.0) * (mat.e_plus - mat.e_minus)
}

/// One-shot homogenization of a field.
pub fn homogenize(field: &DensityField, mat: &MaterialPair, p_simp: f64) -> Result<HomogenizedTensor> {
    Ok(Homogenizer::for_field(field, mat.nu)?.homogenize(field, mat, p_simp)?.tensor)
}

/// One-shot objective and per-element gradient.
pub fn objective_and_sensitivities(
    field: &DensityField,
    loads: &LoadSet,
    mat: &MaterialPair,
    p_simp: f64,
) -> Result<(f64, Vec<f64>)> {
    Homogenizer::for_field(field, mat.nu)?.objective_and_sensitivities(field, loads, mat, p_simp)
}
