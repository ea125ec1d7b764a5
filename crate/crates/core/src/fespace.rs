//! Degrees of freedom, basis functions and quadrature for the P2 vector
//! (velocity) and P1 scalar (pressure) spaces.
//!
//! P2 scalar DOFs are numbered nodes first, then edges in mesh edge order.
//! Vector fields are stored component-blocked: `[x-component | y-component]`.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::par;

/// A symmetric quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct Quadrature {
    /// Barycentric coordinates of the points.
    pub points: Vec<[f64; 3]>,
    /// Weights on the reference triangle; they sum to 1/2.
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// The 7-point rule exact for polynomials of total degree 5.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let w1 = (155.0 - s15) / 2400.0;
        let w2 = (155.0 + s15) / 2400.0;
        let b1 = 1.0 - 2.0 * a1;
        let b2 = 1.0 - 2.0 * a2;
        Quadrature {
            points: vec![
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                [a1, a1, b1],
                [a1, b1, a1],
                [b1, a1, a1],
                [a2, a2, b2],
                [a2, b2, a2],
                [b2, a2, a2],
            ],
            weights: vec![9.0 / 80.0, w1, w1, w1, w2, w2, w2],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// P2 shape function values at barycentric point `l`. Order: vertices 0..3,
/// then midpoints of edges (0,1), (1,2), (2,0).
#[inline]
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Physical gradients of the P2 shape functions given barycentric gradients.
#[inline]
pub fn p2_grads(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for d in 0..2 {
        g[0][d] = (4.0 * l[0] - 1.0) * gl[0][d];
        g[1][d] = (4.0 * l[1] - 1.0) * gl[1][d];
        g[2][d] = (4.0 * l[2] - 1.0) * gl[2][d];
        g[3][d] = 4.0 * (l[1] * gl[0][d] + l[0] * gl[1][d]);
        g[4][d] = 4.0 * (l[2] * gl[1][d] + l[1] * gl[2][d]);
        g[5][d] = 4.0 * (l[0] * gl[2][d] + l[2] * gl[0][d]);
    }
    g
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let [a, b, c] = mesh.triangles()[t];
        let v = [mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]];
        let det =
            (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        let inv = 1.0 / det;
        let grad_lambda = [
            [(v[1][1] - v[2][1]) * inv, (v[2][0] - v[1][0]) * inv],
            [(v[2][1] - v[0][1]) * inv, (v[0][0] - v[2][0]) * inv],
            [(v[0][1] - v[1][1]) * inv, (v[1][0] - v[0][0]) * inv],
        ];
        ElementGeometry {
            vertices: v,
            area: 0.5 * det,
            grad_lambda,
        }
    }

    /// Physical coordinates of a barycentric point.
    #[inline]
    pub fn map(&self, l: [f64; 3]) -> Point {
        let v = &self.vertices;
        [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]
    }

    /// Factor converting reference weights into physical weights.
    #[inline]
    pub fn jacobian(&self) -> f64 {
        2.0 * self.area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    P2Vector,
    P1Scalar,
}

/// A finite element space on a shared mesh.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    kind: SpaceKind,
    /// Number of scalar DOFs per component.
    n_scalar: usize,
    /// Scalar DOFs per triangle, `local` entries each.
    element_scalar: Vec<usize>,
    local: usize,
    /// Geometric location of each scalar DOF.
    locations: Vec<Point>,
    /// Scalar DOFs located on the boundary.
    boundary_scalar: Vec<bool>,
    geometry: Vec<ElementGeometry>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, kind: SpaceKind) -> Self {
        let nn = mesh.num_nodes();
        let (n_scalar, local) = match kind {
            SpaceKind::P2Vector => (nn + mesh.num_edges(), 6),
            SpaceKind::P1Scalar => (nn, 3),
        };
        let mut element_scalar = Vec::with_capacity(mesh.num_triangles() * local);
        for (tri, te) in mesh.triangles().iter().zip(mesh.tri_edges()) {
            element_scalar.extend_from_slice(tri);
            if kind == SpaceKind::P2Vector {
                element_scalar.extend(te.iter().map(|&e| nn + e));
            }
        }
        let mut locations: Vec<Point> = mesh.nodes().to_vec();
        let mut boundary_scalar: Vec<bool> = (0..nn).map(|n| mesh.is_boundary_node(n)).collect();
        if kind == SpaceKind::P2Vector {
            for e in 0..mesh.num_edges() {
                locations.push(mesh.edge_midpoint(e));
                boundary_scalar.push(mesh.is_boundary_edge(e));
            }
        }
        let geometry = (0..mesh.num_triangles())
            .map(|t| ElementGeometry::new(&mesh, t))
            .collect();
        FeSpace {
            mesh,
            kind,
            n_scalar,
            element_scalar,
            local,
            locations,
            boundary_scalar,
            geometry,
        }
    }

    pub fn p2_vector(mesh: Arc<Mesh>) -> Arc<Self> {
        Arc::new(Self::new(mesh, SpaceKind::P2Vector))
    }

    pub fn p1_scalar(mesh: Arc<Mesh>) -> Arc<Self> {
        Arc::new(Self::new(mesh, SpaceKind::P1Scalar))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn components(&self) -> usize {
        match self.kind {
            SpaceKind::P2Vector => 2,
            SpaceKind::P1Scalar => 1,
        }
    }

    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    pub fn dof_count(&self) -> usize {
        self.n_scalar * self.components()
    }

    /// Scalar DOFs per element.
    pub fn local_scalar(&self) -> usize {
        self.local
    }

    pub fn num_elements(&self) -> usize {
        self.geometry.len()
    }

    pub fn element_scalar_dofs(&self, t: usize) -> &[usize] {
        &self.element_scalar[t * self.local..(t + 1) * self.local]
    }

    /// All DOFs of element `t`, component-major.
    pub fn element_dofs(&self, t: usize) -> Vec<usize> {
        let s = self.element_scalar_dofs(t);
        (0..self.components())
            .flat_map(|c| s.iter().map(move |&d| c * self.n_scalar + d))
            .collect()
    }

    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    /// Location of scalar DOF `s` (a node or an edge midpoint).
    pub fn scalar_location(&self, s: usize) -> Point {
        self.locations[s]
    }

    pub fn is_boundary_scalar(&self, s: usize) -> bool {
        self.boundary_scalar[s]
    }

    /// Constrained DOFs (velocity only; empty for P1).
    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        if self.kind != SpaceKind::P2Vector {
            return Vec::new();
        }
        let scalar: Vec<usize> = (0..self.n_scalar)
            .filter(|&s| self.boundary_scalar[s])
            .collect();
        (0..2)
            .flat_map(|c| scalar.iter().map(move |&s| c * self.n_scalar + s))
            .collect()
    }

    /// Mask over all DOFs marking Dirichlet ones.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dof_count()];
        for d in self.dirichlet_dofs() {
            mask[d] = true;
        }
        mask
    }

    /// Shape function values at a barycentric point.
    #[inline]
    pub fn shape_values(&self, l: [f64; 3]) -> [f64; 6] {
        match self.kind {
            SpaceKind::P2Vector => p2_values(l),
            SpaceKind::P1Scalar => [l[0], l[1], l[2], 0.0, 0.0, 0.0],
        }
    }

    /// Physical shape function gradients at a barycentric point of element `t`.
    #[inline]
    pub fn shape_grads(&self, t: usize, l: [f64; 3]) -> [[f64; 2]; 6] {
        let gl = &self.geometry[t].grad_lambda;
        match self.kind {
            SpaceKind::P2Vector => p2_grads(l, gl),
            SpaceKind::P1Scalar => [gl[0], gl[1], gl[2], [0.0; 2], [0.0; 2], [0.0; 2]],
        }
    }

    pub fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other)
    }
}

/// Function of `(x, y, t)` with two components.
pub type VectorFn<'a> = dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'a;
/// Function of `(x, y, t)` with one component.
pub type ScalarFn<'a> = dyn Fn(f64, f64, f64) -> f64 + Send + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1Semi,
    DivL2,
    /// Max absolute DOF value, a nodal stand-in for the true sup norm.
    LinfNodal,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(NormKind::L2),
            "h1-semi" | "H1-semi" => Ok(NormKind::H1Semi),
            "div-l2" | "div-L2" => Ok(NormKind::DivL2),
            "linf-nodal" | "Linf-nodal" => Ok(NormKind::LinfNodal),
            _ => Err(Error::Config(format!("unknown norm kind `{s}`"))),
        }
    }
}

/// Coefficient vector of a finite element function.
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

/// Value and gradient of a (possibly vector) field at one quadrature point.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointEval {
    pub value: [f64; 2],
    /// `grad[c][d] = d u_c / d x_d`
    pub grad: [[f64; 2]; 2],
}

impl PointEval {
    pub fn div(&self) -> f64 {
        self.grad[0][0] + self.grad[1][1]
    }
}

impl Field {
    pub fn zeros(space: &Arc<FeSpace>) -> Self {
        Field {
            space: space.clone(),
            coeffs: vec![0.0; space.dof_count()],
        }
    }

    pub fn from_coeffs(space: &Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dof_count() {
            return Err(Error::SpaceMismatch(format!(
                "{} coefficients for a space with {} DOFs",
                coeffs.len(),
                space.dof_count()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coefficient {i} is {}",
                coeffs[i]
            )));
        }
        Ok(Field {
            space: space.clone(),
            coeffs,
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn check_same_space(&self, other: &Field) -> Result<()> {
        if self.space.same_as(&other.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch(
                "fields live on different spaces".into(),
            ))
        }
    }

    /// Nodal interpolant of a vector function.
    pub fn interpolate_vector(space: &Arc<FeSpace>, g: &VectorFn, t: f64) -> Result<Self> {
        if space.kind() != SpaceKind::P2Vector {
            return Err(Error::SpaceMismatch(
                "vector interpolation needs the P2 vector space".into(),
            ));
        }
        let n = space.n_scalar();
        let vals = par::map_indexed(n, |s| {
            let p = space.scalar_location(s);
            g(p[0], p[1], t)
        });
        let mut coeffs = vec![0.0; 2 * n];
        for (s, v) in vals.into_iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                let p = space.scalar_location(s);
                return Err(Error::NonFinite(format!(
                    "sample at ({}, {}) is {:?}",
                    p[0], p[1], v
                )));
            }
            coeffs[s] = v[0];
            coeffs[n + s] = v[1];
        }
        Ok(Field {
            space: space.clone(),
            coeffs,
        })
    }

    /// Nodal interpolant of a scalar function (P1, or a P2 space's components set alike).
    pub fn interpolate_scalar(space: &Arc<FeSpace>, g: &ScalarFn, t: f64) -> Result<Self> {
        let n = space.n_scalar();
        let vals = par::map_indexed(n, |s| {
            let p = space.scalar_location(s);
            g(p[0], p[1], t)
        });
        if let Some(s) = vals.iter().position(|v| !v.is_finite()) {
            let p = space.scalar_location(s);
            return Err(Error::NonFinite(format!(
                "sample at ({}, {}) is {}",
                p[0], p[1], vals[s]
            )));
        }
        let mut coeffs = Vec::with_capacity(space.dof_count());
        for _ in 0..space.components() {
            coeffs.extend_from_slice(&vals);
        }
        Ok(Field {
            space: space.clone(),
            coeffs,
        })
    }

    /// Value and gradient at barycentric point `l` of element `t`.
    pub fn eval(&self, t: usize, l: [f64; 3]) -> PointEval {
        let sp = &self.space;
        let dofs = sp.element_scalar_dofs(t);
        let phi = sp.shape_values(l);
        let grad = sp.shape_grads(t, l);
        let n = sp.n_scalar();
        let mut out = PointEval::default();
        for c in 0..sp.components() {
            for (i, &d) in dofs.iter().enumerate() {
                let a = self.coeffs[c * n + d];
                out.value[c] += a * phi[i];
                out.grad[c][0] += a * grad[i][0];
                out.grad[c][1] += a * grad[i][1];
            }
        }
        out
    }

    /// Sum over elements of `integrand(eval, x)` integrated with the degree-5 rule.
    fn integrate<F>(&self, integrand: F) -> f64
    where
        F: Fn(&PointEval, Point) -> f64 + Sync + Send,
    {
        let q = Quadrature::degree5();
        let per_element = par::map_indexed(self.space.num_elements(), |t| {
            let geo = self.space.geometry(t);
            let mut s = 0.0;
            for (l, w) in q.points.iter().zip(&q.weights) {
                let e = self.eval(t, *l);
                s += w * integrand(&e, geo.map(*l));
            }
            s * geo.jacobian()
        });
        per_element.iter().sum()
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        let comps = self.space.components();
        Ok(match kind {
            NormKind::L2 => self
                .integrate(|e, _| (0..comps).map(|c| e.value[c] * e.value[c]).sum())
                .max(0.0)
                .sqrt(),
            NormKind::H1Semi => self
                .integrate(|e, _| {
                    (0..comps)
                        .map(|c| e.grad[c][0].powi(2) + e.grad[c][1].powi(2))
                        .sum()
                })
                .max(0.0)
                .sqrt(),
            NormKind::DivL2 => {
                if comps != 2 {
                    return Err(Error::SpaceMismatch(
                        "divergence needs a vector field".into(),
                    ));
                }
                self.integrate(|e, _| e.div().powi(2)).max(0.0).sqrt()
            }
            NormKind::LinfNodal => self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs())),
        })
    }

    /// `||self - exact(., t)||_{L2}` with the exact function evaluated at quadrature points.
    pub fn l2_error_vector(&self, exact: &VectorFn, t: f64) -> f64 {
        self.integrate(|e, x| {
            let u = exact(x[0], x[1], t);
            (e.value[0] - u[0]).powi(2) + (e.value[1] - u[1]).powi(2)
        })
        .max(0.0)
        .sqrt()
    }

    /// Max over DOF locations of the pointwise error against `exact`.
    pub fn linf_nodal_error_vector(&self, exact: &VectorFn, t: f64) -> f64 {
        let n = self.space.n_scalar();
        let errs = par::map_indexed(n, |s| {
            let p = self.space.scalar_location(s);
            let u = exact(p[0], p[1], t);
            (self.coeffs[s] - u[0])
                .abs()
                .max((self.coeffs[n + s] - u[1]).abs())
        });
        errs.into_iter().fold(0.0, f64::max)
    }

    /// Integral of a scalar field.
    pub fn integral(&self) -> f64 {
        self.integrate(|e, _| e.value[0])
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `a * self + b * other`
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.check_same_space(other)?;
        Ok(Field {
            space: self.space.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}
