//! Assembly of the discrete penalty operators.
//!
//! All velocity operators share one union sparsity pattern so that the step
//! matrix `M/k + N(u*) + nu A + (1/eps) G` is a cheap value-wise combination,
//! and `eps` can change between attempts without reassembly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{FeSpace, Field, Quadrature, SpaceKind, VectorFn};
use crate::par;
use crate::sparse::{CsrMatrix, CsrPattern};

/// Precomputed scatter map from element matrices into a CSR pattern.
#[derive(Debug)]
pub struct ElementScatter {
    pattern: Arc<CsrPattern>,
    local_rows: usize,
    local_cols: usize,
    /// Storage position of every local entry, element-major.
    positions: Vec<u32>,
}

impl ElementScatter {
    pub fn new<R, C>(n_elements: usize, nrows: usize, ncols: usize, rows_of: R, cols_of: C) -> Self
    where
        R: Fn(usize) -> Vec<usize>,
        C: Fn(usize) -> Vec<usize>,
    {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        let mut local_rows = 0;
        let mut local_cols = 0;
        for t in 0..n_elements {
            let (r, c) = (rows_of(t), cols_of(t));
            local_rows = r.len();
            local_cols = c.len();
            for &i in &r {
                rows[i].extend_from_slice(&c);
            }
        }
        let pattern = Arc::new(CsrPattern::from_rows(ncols, rows));
        let mut positions = Vec::with_capacity(n_elements * local_rows * local_cols);
        for t in 0..n_elements {
            let (r, c) = (rows_of(t), cols_of(t));
            for &i in &r {
                for &j in &c {
                    let k = pattern
                        .position(i, j)
                        .expect("entry missing from its own pattern");
                    positions.push(u32::try_from(k).expect("pattern too large for u32 positions"));
                }
            }
        }
        ElementScatter {
            pattern,
            local_rows,
            local_cols,
            positions,
        }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    /// Computes element matrices (in parallel when enabled) and sums them in
    /// element order, so the result does not depend on the thread count.
    pub fn assemble<F>(&self, element: F) -> CsrMatrix
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let block = self.local_rows * self.local_cols;
        let n_elements = self.positions.len().checked_div(block).unwrap_or(0);
        let locals = par::map_indexed(n_elements, |t| {
            let mut ke = vec![0.0; block];
            element(t, &mut ke);
            ke
        });
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        for (t, ke) in locals.iter().enumerate() {
            let pos = &self.positions[t * block..(t + 1) * block];
            for (&p, &v) in pos.iter().zip(ke) {
                m.values[p as usize] += v;
            }
        }
        m
    }
}

/// Basis data of one quadrature point on one element.
struct QpBasis {
    weight: f64,
    phi: [f64; 6],
    grad: [[f64; 2]; 6],
}

fn element_basis(space: &FeSpace, q: &Quadrature, t: usize) -> Vec<QpBasis> {
    let jac = space.geometry(t).jacobian();
    q.points
        .iter()
        .zip(&q.weights)
        .map(|(l, w)| QpBasis {
            weight: w * jac,
            phi: space.shape_values(*l),
            grad: space.shape_grads(t, *l),
        })
        .collect()
}

/// Velocity operators on the P2 vector space.
#[derive(Debug)]
pub struct VelocityOperators {
    space: Arc<FeSpace>,
    scatter: ElementScatter,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub graddiv: CsrMatrix,
}

impl VelocityOperators {
    pub fn new(space: Arc<FeSpace>) -> Result<Self> {
        if space.kind() != SpaceKind::P2Vector {
            return Err(Error::SpaceMismatch(
                "velocity operators need the P2 vector space".into(),
            ));
        }
        let n = space.dof_count();
        let scatter = ElementScatter::new(
            space.num_elements(),
            n,
            n,
            |t| space.element_dofs(t),
            |t| space.element_dofs(t),
        );
        let mass = assemble_mass_with(&space, &scatter);
        let stiffness = assemble_stiffness_with(&space, &scatter);
        let graddiv = assemble_graddiv_with(&space, &scatter);
        Ok(VelocityOperators {
            space,
            scatter,
            mass,
            stiffness,
            graddiv,
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        self.scatter.pattern()
    }

    /// Skew-symmetrized convection operator `N(u*)` in the shared pattern.
    pub fn convection(&self, u_star: &Field) -> Result<CsrMatrix> {
        if !self.space.same_as(u_star.space()) {
            return Err(Error::SpaceMismatch(
                "u* must live in the velocity space".into(),
            ));
        }
        Ok(assemble_convection_with(&self.space, &self.scatter, u_star))
    }

    /// `M/k + N + nu A + (1/eps) G`
    pub fn step_matrix(
        &self,
        k: f64,
        nu: f64,
        eps: f64,
        convection: &CsrMatrix,
    ) -> Result<CsrMatrix> {
        CsrMatrix::combine(&[
            (1.0 / k, &self.mass),
            (1.0, convection),
            (nu, &self.stiffness),
            (1.0 / eps, &self.graddiv),
        ])
    }
}

/// Copies the upper triangle onto the lower one so element matrices are
/// bitwise symmetric.
fn mirror_upper(s: &mut [[f64; 6]; 6]) {
    for i in 0..6 {
        for j in 0..i {
            s[i][j] = s[j][i];
        }
    }
}

/// Fills a 12x12 block-diagonal element matrix from a 6x6 scalar one.
fn block_diag(scalar: &[[f64; 6]; 6], ke: &mut [f64]) {
    for c in 0..2 {
        for i in 0..6 {
            for j in 0..6 {
                ke[(c * 6 + i) * 12 + c * 6 + j] = scalar[i][j];
            }
        }
    }
}

fn assemble_mass_with(space: &FeSpace, scatter: &ElementScatter) -> CsrMatrix {
    let q = Quadrature::degree5();
    scatter.assemble(|t, ke| {
        let mut s = [[0.0; 6]; 6];
        for b in element_basis(space, &q, t) {
            for i in 0..6 {
                for j in i..6 {
                    s[i][j] += b.weight * b.phi[i] * b.phi[j];
                }
            }
        }
        mirror_upper(&mut s);
        block_diag(&s, ke);
    })
}

fn assemble_stiffness_with(space: &FeSpace, scatter: &ElementScatter) -> CsrMatrix {
    let q = Quadrature::degree5();
    scatter.assemble(|t, ke| {
        let mut s = [[0.0; 6]; 6];
        for b in element_basis(space, &q, t) {
            for i in 0..6 {
                for j in i..6 {
                    s[i][j] +=
                        b.weight * (b.grad[i][0] * b.grad[j][0] + b.grad[i][1] * b.grad[j][1]);
                }
            }
        }
        mirror_upper(&mut s);
        block_diag(&s, ke);
    })
}

fn assemble_graddiv_with(space: &FeSpace, scatter: &ElementScatter) -> CsrMatrix {
    let q = Quadrature::degree5();
    scatter.assemble(|t, ke| {
        for b in element_basis(space, &q, t) {
            // div of basis (c, i) is d(phi_i)/dx_c
            for a in 0..12 {
                let (c, i) = (a / 6, a % 6);
                for bb in a..12 {
                    let (d, j) = (bb / 6, bb % 6);
                    ke[a * 12 + bb] += b.weight * b.grad[i][c] * b.grad[j][d];
                }
            }
        }
        for a in 0..12 {
            for bb in 0..a {
                ke[a * 12 + bb] = ke[bb * 12 + a];
            }
        }
    })
}

fn assemble_convection_with(
    space: &FeSpace,
    scatter: &ElementScatter,
    u_star: &Field,
) -> CsrMatrix {
    let q = Quadrature::degree5();
    scatter.assemble(|t, ke| {
        let mut s = [[0.0; 6]; 6];
        for (b, l) in element_basis(space, &q, t).iter().zip(&q.points) {
            let e = u_star.eval(t, *l);
            let half_div = 0.5 * e.div();
            for j in 0..6 {
                let adv =
                    e.value[0] * b.grad[j][0] + e.value[1] * b.grad[j][1] + half_div * b.phi[j];
                for i in 0..6 {
                    s[i][j] += b.weight * adv * b.phi[i];
                }
            }
        }
        block_diag(&s, ke);
    })
}

fn check_velocity(space: &FeSpace) -> Result<()> {
    if space.kind() == SpaceKind::P2Vector {
        Ok(())
    } else {
        Err(Error::SpaceMismatch("expected the P2 vector space".into()))
    }
}

fn velocity_scatter(space: &FeSpace) -> ElementScatter {
    let n = space.dof_count();
    ElementScatter::new(
        space.num_elements(),
        n,
        n,
        |t| space.element_dofs(t),
        |t| space.element_dofs(t),
    )
}

/// Mass matrix, `(M f) . g = (f, g)`.
pub fn assemble_mass(space: &FeSpace) -> Result<CsrMatrix> {
    check_velocity(space)?;
    Ok(assemble_mass_with(space, &velocity_scatter(space)))
}

/// Unscaled stiffness `(grad u, grad v)`.
pub fn assemble_stiffness(space: &FeSpace) -> Result<CsrMatrix> {
    check_velocity(space)?;
    Ok(assemble_stiffness_with(space, &velocity_scatter(space)))
}

/// Unscaled grad-div form `(div u, div v)`.
pub fn assemble_graddiv(space: &FeSpace) -> Result<CsrMatrix> {
    check_velocity(space)?;
    Ok(assemble_graddiv_with(space, &velocity_scatter(space)))
}

/// Convection `(u*.grad w, v) + 1/2 (div u* w, v)`, row = test `v`, column = trial `w`.
pub fn assemble_convection(space: &Arc<FeSpace>, u_star: &Field) -> Result<CsrMatrix> {
    check_velocity(space)?;
    if !space.same_as(u_star.space()) {
        return Err(Error::SpaceMismatch(
            "u* must live in the velocity space".into(),
        ));
    }
    Ok(assemble_convection_with(
        space,
        &velocity_scatter(space),
        u_star,
    ))
}

/// Load vector `(f(., t), phi_i)`.
pub fn assemble_load(space: &FeSpace, f: &VectorFn, t: f64) -> Result<Vec<f64>> {
    check_velocity(space)?;
    let q = Quadrature::degree5();
    let locals = par::map_indexed(space.num_elements(), |e| {
        let geo = space.geometry(e);
        let mut fe = [0.0; 12];
        for (l, w) in q.points.iter().zip(&q.weights) {
            let x = geo.map(*l);
            let fv = f(x[0], x[1], t);
            let phi = space.shape_values(*l);
            let wj = w * geo.jacobian();
            for i in 0..6 {
                fe[i] += wj * fv[0] * phi[i];
                fe[6 + i] += wj * fv[1] * phi[i];
            }
        }
        fe
    });
    let mut rhs = vec![0.0; space.dof_count()];
    for (e, fe) in locals.iter().enumerate() {
        for (&d, &v) in space.element_dofs(e).iter().zip(fe) {
            rhs[d] += v;
        }
    }
    if let Some(i) = rhs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("load entry {i}")));
    }
    Ok(rhs)
}

/// Boundary values of `g(., t)` at every Dirichlet DOF (zero elsewhere).
pub fn dirichlet_values(space: &FeSpace, g: &VectorFn, t: f64) -> Vec<f64> {
    let n = space.n_scalar();
    let mut vals = vec![0.0; space.dof_count()];
    for s in (0..n).filter(|&s| space.is_boundary_scalar(s)) {
        let p = space.scalar_location(s);
        let v = g(p[0], p[1], t);
        vals[s] = v[0];
        vals[n + s] = v[1];
    }
    vals
}

/// Row replacement plus column elimination. Constrained rows become identity
/// rows with `rhs = value`; constrained columns in the other rows are zeroed
/// and their known contribution moved to the right-hand side. The pattern is
/// left untouched so symbolic factorizations stay valid.
pub fn apply_dirichlet_values(
    matrix: &mut CsrMatrix,
    rhs: &mut [f64],
    mask: &[bool],
    values: &[f64],
) {
    assert_eq!(mask.len(), matrix.nrows());
    assert_eq!(rhs.len(), matrix.nrows());
    let pattern = matrix.pattern().clone();
    let (row_ptr, col_idx) = (pattern.row_ptr(), pattern.col_idx());
    for r in 0..matrix.nrows() {
        let range = row_ptr[r]..row_ptr[r + 1];
        if mask[r] {
            for k in range {
                matrix.values[k] = if col_idx[k] == r { 1.0 } else { 0.0 };
            }
            rhs[r] = values[r];
        } else {
            for k in range {
                let c = col_idx[k];
                if mask[c] {
                    rhs[r] -= matrix.values[k] * values[c];
                    matrix.values[k] = 0.0;
                }
            }
        }
    }
}

/// Imposes `g(., t)` on all Dirichlet DOFs of `space`.
pub fn apply_dirichlet(
    matrix: &mut CsrMatrix,
    rhs: &mut [f64],
    space: &FeSpace,
    g: &VectorFn,
    t: f64,
) {
    let values = dirichlet_values(space, g, t);
    apply_dirichlet_values(matrix, rhs, &space.dirichlet_mask(), &values);
}

/// Operators for recovering pressure in P1 from a P2 velocity.
#[derive(Debug)]
pub struct PressureOperators {
    pub space: Arc<FeSpace>,
    /// P1 mass matrix.
    pub mass: CsrMatrix,
    /// `B_ij = (div phi_j, q_i)`, P1 rows by P2-vector columns.
    pub divergence: CsrMatrix,
}

impl PressureOperators {
    pub fn new(pressure: Arc<FeSpace>, velocity: &FeSpace) -> Result<Self> {
        if pressure.kind() != SpaceKind::P1Scalar {
            return Err(Error::SpaceMismatch("pressure space must be P1".into()));
        }
        check_velocity(velocity)?;
        let q = Quadrature::degree5();
        let np = pressure.dof_count();
        let mass_scatter = ElementScatter::new(
            pressure.num_elements(),
            np,
            np,
            |t| pressure.element_dofs(t),
            |t| pressure.element_dofs(t),
        );
        let mass = mass_scatter.assemble(|t, ke| {
            for b in element_basis(&pressure, &q, t) {
                for i in 0..3 {
                    for j in 0..3 {
                        ke[i * 3 + j] += b.weight * b.phi[i] * b.phi[j];
                    }
                }
            }
        });
        let div_scatter = ElementScatter::new(
            pressure.num_elements(),
            np,
            velocity.dof_count(),
            |t| pressure.element_dofs(t),
            |t| velocity.element_dofs(t),
        );
        let divergence = div_scatter.assemble(|t, ke| {
            for (l, w) in q.points.iter().zip(&q.weights) {
                let wj = w * velocity.geometry(t).jacobian();
                let qv = pressure.shape_values(*l);
                let g = velocity.shape_grads(t, *l);
                for i in 0..3 {
                    for c in 0..2 {
                        for j in 0..6 {
                            ke[i * 12 + c * 6 + j] += wj * qv[i] * g[j][c];
                        }
                    }
                }
            }
        });
        Ok(PressureOperators {
            space: pressure,
            mass,
            divergence,
        })
    }
}
