//! Benchmark problems with exact solutions, body forces and boundary data.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fespace::{ScalarFn, VectorFn};

pub type VectorField = Arc<VectorFn<'static>>;
pub type ScalarField = Arc<ScalarFn<'static>>;

/// Where the spatial domain comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    MeshFile(PathBuf),
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub nu: f64,
    pub domain: Domain,
    pub t_end: f64,
    pub exact_u: Option<VectorField>,
    pub exact_p: Option<ScalarField>,
    pub force: VectorField,
    pub boundary: VectorField,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("nu", &self.nu)
            .field("domain", &self.domain)
            .field("t_end", &self.t_end)
            .field("exact", &self.exact_u.is_some())
            .finish()
    }
}

pub const PROBLEM_NAMES: [&str; 4] = [
    "taylor_green",
    "vortex_square",
    "offset_circles",
    "quiescent",
];

impl Problem {
    pub fn by_name(name: &str) -> Result<Problem> {
        match name {
            "taylor_green" => Ok(taylor_green(0.01)),
            "vortex_square" => Ok(vortex_square()),
            "offset_circles" => Ok(offset_circles()),
            "quiescent" => Ok(quiescent()),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn has_exact(&self) -> bool {
        self.exact_u.is_some()
    }

    /// Same problem with a different body force.
    pub fn with_force(mut self, force: VectorField) -> Problem {
        self.force = force;
        self
    }

    /// Same problem with a different viscosity. Manufactured forces are
    /// rebuilt so they stay consistent.
    pub fn with_nu(self, nu: f64) -> Problem {
        match self.name.as_str() {
            "taylor_green" => Problem {
                t_end: self.t_end,
                domain: self.domain,
                ..taylor_green(nu)
            },
            _ => Problem { nu, ..self },
        }
    }

    /// Homogeneous Dirichlet data everywhere on the boundary at every time.
    pub fn zero_boundary(&self) -> bool {
        matches!(
            self.name.as_str(),
            "vortex_square" | "offset_circles" | "quiescent"
        )
    }
}

/// Modified Taylor-Green vortex on `[0, 2pi]^2`.
pub fn taylor_green(nu: f64) -> Problem {
    let u: VectorField = Arc::new(move |x: f64, y: f64, t: f64| {
        let e = (-2.0 * nu * t).exp();
        [e * x.cos() * y.sin(), -e * x.sin() * y.cos()]
    });
    let p: ScalarField = Arc::new(move |x: f64, y: f64, t: f64| {
        -0.25 * (-4.0 * nu * t).exp() * ((2.0 * x).cos() + (2.0 * y).cos())
            + x * ((2.0 * t).sin() + (3.0 * t).cos())
            + y * ((3.0 * t).sin() + (2.0 * t).cos())
    });
    // u_t - nu lap u vanishes and u.grad u cancels the first pressure term
    let f: VectorField = Arc::new(|_x: f64, _y: f64, t: f64| {
        [
            (2.0 * t).sin() + (3.0 * t).cos(),
            (3.0 * t).sin() + (2.0 * t).cos(),
        ]
    });
    Problem {
        name: "taylor_green".into(),
        nu,
        domain: Domain::Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 2.0 * PI,
            y1: 2.0 * PI,
        },
        t_end: 1.0,
        exact_u: Some(u.clone()),
        exact_p: Some(p),
        force: f,
        boundary: u,
    }
}

/// Velocity and its first and second derivatives for the vortex on `(-1,1)^2`,
/// with the time factor `s` (`sin t` for u, `cos t` for u_t).
struct VortexJet {
    u: [f64; 2],
    grad: [[f64; 2]; 2],
    lap: [f64; 2],
}

fn vortex_jet(x: f64, y: f64, s: f64) -> VortexJet {
    let sq = |z: f64| (PI * z).sin().powi(2);
    let sq1 = |z: f64| PI * (2.0 * PI * z).sin();
    let sq2 = |z: f64| 2.0 * PI * PI * (2.0 * PI * z).cos();
    let q = |z: f64| (2.0 * PI * z).sin();
    let q1 = |z: f64| 2.0 * PI * (2.0 * PI * z).cos();
    let q2 = |z: f64| -4.0 * PI * PI * (2.0 * PI * z).sin();
    let a = PI * s;
    VortexJet {
        u: [a * q(y) * sq(x), -a * q(x) * sq(y)],
        grad: [
            [a * q(y) * sq1(x), a * q1(y) * sq(x)],
            [-a * q1(x) * sq(y), -a * q(x) * sq1(y)],
        ],
        lap: [
            a * (q(y) * sq2(x) + q2(y) * sq(x)),
            -a * (q2(x) * sq(y) + q(x) * sq2(y)),
        ],
    }
}

/// Exact vortex on `(-1,1)^2` with `nu = 1`.
pub fn vortex_square() -> Problem {
    let nu = 1.0;
    let u: VectorField = Arc::new(|x: f64, y: f64, t: f64| vortex_jet(x, y, t.sin()).u);
    let p: ScalarField =
        Arc::new(|x: f64, y: f64, t: f64| t.sin() * (PI * x).cos() * (PI * y).sin());
    let f: VectorField = Arc::new(move |x: f64, y: f64, t: f64| {
        let j = vortex_jet(x, y, t.sin());
        let ut = vortex_jet(x, y, t.cos()).u;
        let s = t.sin();
        let px = -PI * s * (PI * x).sin() * (PI * y).sin();
        let py = PI * s * (PI * x).cos() * (PI * y).cos();
        let conv = |c: usize| j.u[0] * j.grad[c][0] + j.u[1] * j.grad[c][1];
        [
            ut[0] - nu * j.lap[0] + conv(0) + px,
            ut[1] - nu * j.lap[1] + conv(1) + py,
        ]
    });
    Problem {
        name: "vortex_square".into(),
        nu,
        domain: Domain::Rect {
            x0: -1.0,
            y0: -1.0,
            x1: 1.0,
            y1: 1.0,
        },
        t_end: 1.0,
        exact_u: Some(u),
        exact_p: Some(p),
        force: f,
        boundary: Arc::new(|_, _, _| [0.0, 0.0]),
    }
}

/// Mesh file shipped with the crate for the offset-circles domain.
pub fn offset_circles_mesh_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join("offset_circles.mesh")
}

/// Rotational forcing between the unit circle and a small circle at `(0.5, 0)`.
pub fn offset_circles() -> Problem {
    let f: VectorField = Arc::new(|x: f64, y: f64, t: f64| {
        let s = t.min(1.0) * (1.0 - x * x - y * y);
        [-4.0 * y * s, 4.0 * x * s]
    });
    Problem {
        name: "offset_circles".into(),
        nu: 0.01,
        domain: Domain::MeshFile(offset_circles_mesh_path()),
        t_end: 10.0,
        exact_u: None,
        exact_p: None,
        force: f,
        boundary: Arc::new(|_, _, _| [0.0, 0.0]),
    }
}

/// Fluid at rest in the unit square.
pub fn quiescent() -> Problem {
    let zero: VectorField = Arc::new(|_, _, _| [0.0, 0.0]);
    Problem {
        name: "quiescent".into(),
        nu: 1.0,
        domain: Domain::Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        },
        t_end: 1.0,
        exact_u: Some(zero.clone()),
        exact_p: Some(Arc::new(|_, _, _| 0.0)),
        force: zero.clone(),
        boundary: zero,
    }
}

const FD_H: f64 = 1e-3;

/// Fourth-order central first derivative.
fn d1(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (-f(z + 2.0 * h) + 8.0 * f(z + h) - 8.0 * f(z - h) + f(z - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative.
fn d2(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (-f(z + 2.0 * h) + 16.0 * f(z + h) - 30.0 * f(z) + 16.0 * f(z - h) - f(z - 2.0 * h))
        / (12.0 * h * h)
}

fn sample_points(p: &Problem, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    let Domain::Rect { x0, y0, x1, y1 } = p.domain else {
        return Err(Error::NoExactSolution(p.name.clone()));
    };
    let margin = 4.0 * FD_H;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            [
                rng.gen_range(x0 + margin..x1 - margin),
                rng.gen_range(y0 + margin..y1 - margin),
                rng.gen_range(margin..p.t_end.max(1.0)),
            ]
        })
        .collect())
}

/// Largest pointwise residual `|u_t - nu lap u + u.grad u + grad p - f|` of
/// the exact solution, using finite differences at random interior points.
pub fn verify_forcing(p: &Problem, n_samples: usize, seed: u64) -> Result<f64> {
    let (Some(u), Some(pr)) = (&p.exact_u, &p.exact_p) else {
        return Err(Error::NoExactSolution(p.name.clone()));
    };
    let h = FD_H;
    let mut worst = 0.0f64;
    for [x, y, t] in sample_points(p, n_samples, seed)? {
        let uv = u(x, y, t);
        let f = (p.force)(x, y, t);
        let grad_p = [d1(|z| pr(z, y, t), x, h), d1(|z| pr(x, z, t), y, h)];
        let mut r2 = 0.0;
        for c in 0..2 {
            let ut = d1(|z| u(x, y, z)[c], t, h);
            let ux = d1(|z| u(z, y, t)[c], x, h);
            let uy = d1(|z| u(x, z, t)[c], y, h);
            let lap = d2(|z| u(z, y, t)[c], x, h) + d2(|z| u(x, z, t)[c], y, h);
            let r = ut - p.nu * lap + uv[0] * ux + uv[1] * uy + grad_p[c] - f[c];
            r2 += r * r;
        }
        worst = worst.max(r2.sqrt());
    }
    Ok(worst)
}

/// Largest finite-difference divergence of the exact velocity at random points.
pub fn exact_divergence(p: &Problem, n_samples: usize, seed: u64) -> Result<f64> {
    let Some(u) = &p.exact_u else {
        return Err(Error::NoExactSolution(p.name.clone()));
    };
    let mut worst = 0.0f64;
    for [x, y, t] in sample_points(p, n_samples, seed)? {
        let div = d1(|z| u(z, y, t)[0], x, FD_H) + d1(|z| u(x, z, t)[1], y, FD_H);
        worst = worst.max(div.abs());
    }
    Ok(worst)
}
