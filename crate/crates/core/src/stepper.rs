//! Per-step numerics: the penalized backward Euler solve, the time filter,
//! extrapolation, pressure recovery and the discrete acceleration.

use std::sync::Arc;

use crate::assembly::{
    apply_dirichlet_values, assemble_load, dirichlet_values, PressureOperators, VelocityOperators,
};
use crate::error::{Error, Result};
use crate::fespace::{FeSpace, Field, NormKind, VectorFn};
use crate::linsolve::{LinearSolver, SolveReport, SolverKind};
use crate::sparse::{combined_residual, dot, CsrMatrix};

/// `(1 + tau) u_n - tau u_{n-1}`
pub fn extrapolate(u_n: &Field, u_nm1: &Field, tau: f64) -> Result<Field> {
    u_n.axpby(1.0 + tau, u_nm1, -tau)
}

/// Weights `(a, b, c)` of `D2 = a u1 + b u_n + c u_{n-1}`.
pub fn d2_weights(k_np1: f64, k_n: f64) -> (f64, f64, f64) {
    let s = k_n + k_np1;
    (2.0 * k_n / s, -2.0, 2.0 * k_np1 / s)
}

/// Weighted second difference on raw coefficient slices.
pub fn d2_combination(u1: &[f64], u_n: &[f64], u_nm1: &[f64], k_np1: f64, k_n: f64) -> Vec<f64> {
    let (a, b, c) = d2_weights(k_np1, k_n);
    u1.iter()
        .zip(u_n)
        .zip(u_nm1)
        .map(|((x, y), z)| a * x + b * y + c * z)
        .collect()
}

/// `u1 - (alpha1 / 2) D2` on raw coefficient slices.
pub fn filter_combination(u1: &[f64], d2: &[f64], alpha1: f64) -> Vec<f64> {
    u1.iter()
        .zip(d2)
        .map(|(x, d)| x - 0.5 * alpha1 * d)
        .collect()
}

pub fn compute_d2(u1: &Field, u_n: &Field, u_nm1: &Field, k_np1: f64, k_n: f64) -> Result<Field> {
    u1.check_same_space(u_n)?;
    u1.check_same_space(u_nm1)?;
    Field::from_coeffs(
        u1.space(),
        d2_combination(&u1.coeffs, &u_n.coeffs, &u_nm1.coeffs, k_np1, k_n),
    )
}

pub fn apply_time_filter(u1: &Field, d2: &Field, alpha1: f64) -> Result<Field> {
    u1.check_same_space(d2)?;
    Field::from_coeffs(
        u1.space(),
        filter_combination(&u1.coeffs, &d2.coeffs, alpha1),
    )
}

/// `||(u_np1 - u_n) / k||_{L2}`
pub fn discrete_accel(u_np1: &Field, u_n: &Field, k: f64) -> Result<f64> {
    u_np1.axpby(1.0 / k, u_n, -1.0 / k)?.norm(NormKind::L2)
}

/// Terms of the one-step energy balance of the unfiltered solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub terms: [f64; 6],
}

impl EnergyBalance {
    pub fn residual(&self) -> f64 {
        self.terms.iter().sum::<f64>().abs()
    }

    /// Residual relative to the largest term.
    pub fn relative_residual(&self) -> f64 {
        let scale = self.terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if scale == 0.0 {
            0.0
        } else {
            self.residual() / scale
        }
    }
}

/// `u^T G u` with `G u` accumulated in double-double. Near the penalty
/// limit `|div u|^2` is far below the rounding of `G` against `|grad u|^2`,
/// so a plain product is dominated by cancellation.
fn graddiv_form(g: &CsrMatrix, u: &[f64]) -> f64 {
    let gu = combined_residual(&[(-1.0, g)], u, &vec![0.0; u.len()]);
    dot(u, &gu)
}

/// Operators and solver state for stepping one problem on one mesh.
#[derive(Debug)]
pub struct Stepper {
    pub velocity: VelocityOperators,
    pub pressure: PressureOperators,
    mask: Vec<bool>,
    solver: LinearSolver,
    pressure_solver: LinearSolver,
}

impl Stepper {
    pub fn new(space: Arc<FeSpace>, solver: SolverKind, solver_tol: f64) -> Result<Self> {
        let velocity = VelocityOperators::new(space.clone())?;
        let p1 = FeSpace::p1_scalar(space.mesh().clone());
        let pressure = PressureOperators::new(p1, &space)?;
        let mask = space.dirichlet_mask();
        Ok(Stepper {
            velocity,
            pressure,
            mask,
            solver: LinearSolver::new(solver, solver_tol),
            pressure_solver: LinearSolver::new(SolverKind::Direct, 1e-13),
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        self.velocity.space()
    }

    /// Solves `(M/k + N(u*) + nu A + G/eps) u1 = M u_n / k + F(t)` with the
    /// boundary data `g(., t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn be_penalty_step(
        &mut self,
        u_n: &Field,
        u_star: &Field,
        k: f64,
        eps: f64,
        nu: f64,
        t_np1: f64,
        force: &VectorFn,
        boundary: &VectorFn,
    ) -> Result<(Field, SolveReport)> {
        if !(k > 0.0 && eps > 0.0) {
            return Err(Error::Config(format!(
                "step needs k > 0 and eps > 0, got k = {k}, eps = {eps}"
            )));
        }
        let space = self.space().clone();
        if !space.same_as(u_n.space()) || !space.same_as(u_star.space()) {
            return Err(Error::SpaceMismatch(
                "step inputs must live in the velocity space".into(),
            ));
        }
        let conv = self.velocity.convection(u_star)?;
        let mut a = self.velocity.step_matrix(k, nu, eps, &conv)?;
        let mut rhs = assemble_load(&space, force, t_np1)?;
        let mu = self.velocity.mass.mul_vec(&u_n.coeffs);
        for (r, m) in rhs.iter_mut().zip(&mu) {
            *r += m / k;
        }
        let g = dirichlet_values(&space, boundary, t_np1);
        let raw_rhs = rhs.clone();
        apply_dirichlet_values(&mut a, &mut rhs, &self.mask, &g);
        let v = &self.velocity;
        let terms = [
            (1.0 / k, &v.mass),
            (1.0, &conv),
            (nu, &v.stiffness),
            (1.0 / eps, &v.graddiv),
        ];
        let mask = &self.mask;
        let residual = |x: &[f64]| {
            let mut r = combined_residual(&terms, x, &raw_rhs);
            for (i, ri) in r.iter_mut().enumerate() {
                if mask[i] {
                    *ri = g[i] - x[i];
                }
            }
            r
        };
        let (x, report) = self.solver.solve_with_residual(&a, &rhs, &residual)?;
        report.ok("penalty step")?;
        Ok((Field::from_coeffs(&space, x)?, report))
    }

    /// The six terms of
    /// `1/2|u1|^2 - 1/2|u_n|^2 + 1/2|u1-u_n|^2 + k nu|grad u1|^2 + k/eps|div u1|^2 - k(f, u1)`.
    #[allow(clippy::too_many_arguments)]
    pub fn energy_balance(
        &self,
        u1: &Field,
        u_n: &Field,
        k: f64,
        eps: f64,
        nu: f64,
        t_np1: f64,
        force: &VectorFn,
    ) -> Result<EnergyBalance> {
        let m = &self.velocity.mass;
        let diff = u1.axpby(1.0, u_n, -1.0)?;
        let load = assemble_load(self.space(), force, t_np1)?;
        Ok(EnergyBalance {
            terms: [
                0.5 * m.bilinear(&u1.coeffs, &u1.coeffs),
                -0.5 * m.bilinear(&u_n.coeffs, &u_n.coeffs),
                0.5 * m.bilinear(&diff.coeffs, &diff.coeffs),
                k * nu * self.velocity.stiffness.bilinear(&u1.coeffs, &u1.coeffs),
                k / eps * graddiv_form(&self.velocity.graddiv, &u1.coeffs),
                -k * dot(&load, &u1.coeffs),
            ],
        })
    }

    /// L2 projection of `-(1/eps) div u` onto P1.
    pub fn recover_pressure(&mut self, u: &Field, eps: f64) -> Result<Field> {
        if !self.space().same_as(u.space()) {
            return Err(Error::SpaceMismatch(
                "pressure recovery needs a velocity field".into(),
            ));
        }
        let bu = self.pressure.divergence.mul_vec(&u.coeffs);
        let rhs: Vec<f64> = bu.iter().map(|v| -v / eps).collect();
        let (p, report) = self.pressure_solver.solve(&self.pressure.mass, &rhs)?;
        report.ok("pressure projection")?;
        Field::from_coeffs(&self.pressure.space, p)
    }

    /// `max_q |(div u + eps p, q)|` over the P1 basis.
    pub fn penalty_residual(&self, u: &Field, p: &Field, eps: f64) -> f64 {
        let bu = self.pressure.divergence.mul_vec(&u.coeffs);
        let mp = self.pressure.mass.mul_vec(&p.coeffs);
        bu.iter()
            .zip(&mp)
            .fold(0.0, |m, (b, q)| m.max((b + eps * q).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use crate::problems::{taylor_green, vortex_square};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> Arc<FeSpace> {
        FeSpace::p2_vector(Arc::new(build_rect_mesh(n, n, 0.0, 0.0, 1.0, 1.0).unwrap()))
    }

    fn constant(v: &Arc<FeSpace>, c: f64) -> Field {
        Field::interpolate_scalar(v, &move |_, _, _| c, 0.0).unwrap()
    }

    fn zero_fn(_: f64, _: f64, _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }

    #[test]
    fn extrapolation_examples() {
        let v = square(1);
        let c = constant(&v, 2.5);
        assert_eq!(extrapolate(&c, &c, 1.0).unwrap().coeffs, c.coeffs);
        let e = extrapolate(&constant(&v, 3.0), &constant(&v, 1.0), 2.0).unwrap();
        assert!(e.coeffs.iter().all(|&x| x == 7.0));
    }

    #[test]
    fn d2_examples() {
        assert_eq!(d2_combination(&[4.0], &[1.0], &[0.0], 0.1, 0.1), vec![2.0]);
        // samples of a linear function of time at t = -k_n, 0, k_np1
        let (kn, kp) = (0.3, 0.7);
        let f = |t: f64| 2.0 - 5.0 * t;
        let d = d2_combination(&[f(kp)], &[f(0.0)], &[f(-kn)], kp, kn);
        assert!(d[0].abs() < 1e-14);
        assert_eq!(
            d2_combination(&[1.0], &[0.5], &[0.25], 0.2, 0.2),
            vec![1.0 - 1.0 + 0.25]
        );
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_combination(&[1.5], &[0.0], 2.0 / 3.0), vec![1.5]);
        let (u1, un, unm1) = (4.0, 1.0, 0.0);
        let d = d2_combination(&[u1], &[un], &[unm1], 0.1, 0.1);
        let f = filter_combination(&[u1], &d, 2.0 / 3.0)[0];
        assert!((f - (u1 - (u1 - 2.0 * un + unm1) / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn filter_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a: f64 = rng.gen_range(-10.0..10.0);
            let u1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let al = rng.gen_range(0.1..2.0);
            let lhs = filter_combination(
                &u1.iter().map(|x| a * x).collect::<Vec<_>>(),
                &d2.iter().map(|x| a * x).collect::<Vec<_>>(),
                al,
            );
            let rhs: Vec<f64> = filter_combination(&u1, &d2, al)
                .iter()
                .map(|x| a * x)
                .collect();
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!((l - r).abs() <= 1e-14 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn first_estimate_matches_filter_correction() {
        let v = square(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rnd = || {
            Field::from_coeffs(
                &v,
                (0..v.dof_count())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap()
        };
        let (u1, un, unm1) = (rnd(), rnd(), rnd());
        let d2 = compute_d2(&u1, &un, &unm1, 0.02, 0.03).unwrap();
        let (a1, _) = crate::adapt::alpha_coeffs(1.0, 0.02 / 0.03);
        let u = apply_time_filter(&u1, &d2, a1).unwrap();
        let direct = u.axpby(1.0, &u1, -1.0).unwrap().norm(NormKind::L2).unwrap();
        let est = crate::adapt::est_time_first(&d2, a1).unwrap();
        assert!((direct - est).abs() <= 1e-12 * est);
    }

    #[test]
    fn discrete_accel_examples() {
        let v = square(2);
        let u = constant(&v, 0.3);
        assert_eq!(discrete_accel(&u, &u, 0.1).unwrap(), 0.0);
        let shifted = u.axpby(1.0, &constant(&v, 1.0), 0.1 * 2.0).unwrap();
        // (c, c) with c = 2 per component on the unit square
        assert!((discrete_accel(&shifted, &u, 0.1).unwrap() - 8f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let v = square(3);
        let mut s = Stepper::new(v.clone(), SolverKind::Direct, 1e-12).unwrap();
        let z = Field::zeros(&v);
        let (u1, _) = s
            .be_penalty_step(&z, &z, 0.1, 1e-5, 1.0, 0.1, &zero_fn, &zero_fn)
            .unwrap();
        assert!(u1.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn stokes_step_dissipates() {
        let v = square(4);
        let mut s = Stepper::new(v.clone(), SolverKind::Direct, 1e-12).unwrap();
        let u0 = Field::interpolate_vector(
            &v,
            &|x, y, _| {
                let b = x * (1.0 - x) * y * (1.0 - y);
                [b, -2.0 * b]
            },
            0.0,
        )
        .unwrap();
        let z = Field::zeros(&v);
        let (u1, _) = s
            .be_penalty_step(&u0, &z, 0.05, 1e-3, 1.0, 0.05, &zero_fn, &zero_fn)
            .unwrap();
        assert!(u1.norm(NormKind::L2).unwrap() < u0.norm(NormKind::L2).unwrap());
    }

    #[test]
    fn boundary_values_are_imposed() {
        let p = taylor_green(0.01);
        let mesh = build_rect_mesh(
            4,
            4,
            0.0,
            0.0,
            2.0 * std::f64::consts::PI,
            2.0 * std::f64::consts::PI,
        )
        .unwrap();
        let v = FeSpace::p2_vector(Arc::new(mesh));
        let mut s = Stepper::new(v.clone(), SolverKind::Direct, 1e-12).unwrap();
        let u0 = Field::interpolate_vector(&v, p.exact_u.as_ref().unwrap().as_ref(), 0.0).unwrap();
        let (u1, _) = s
            .be_penalty_step(
                &u0,
                &u0,
                0.01,
                1e-5,
                p.nu,
                0.01,
                p.force.as_ref(),
                p.boundary.as_ref(),
            )
            .unwrap();
        let exact =
            Field::interpolate_vector(&v, p.exact_u.as_ref().unwrap().as_ref(), 0.01).unwrap();
        for d in v.dirichlet_dofs() {
            assert_eq!(u1.coeffs[d], exact.coeffs[d]);
        }
    }

    #[test]
    fn energy_balance_closes() {
        let p = vortex_square();
        let v = FeSpace::p2_vector(Arc::new(
            build_rect_mesh(6, 6, -1.0, -1.0, 1.0, 1.0).unwrap(),
        ));
        let mut s = Stepper::new(v.clone(), SolverKind::Direct, 1e-12).unwrap();
        let u = p.exact_u.clone().unwrap();
        let (k, t) = (0.05, 0.5);
        let un = Field::interpolate_vector(&v, u.as_ref(), t).unwrap();
        let unm1 = Field::interpolate_vector(&v, u.as_ref(), t - k).unwrap();
        let star = extrapolate(&un, &unm1, 1.0).unwrap();
        let (u1, _) = s
            .be_penalty_step(
                &un,
                &star,
                k,
                1e-5,
                p.nu,
                t + k,
                p.force.as_ref(),
                p.boundary.as_ref(),
            )
            .unwrap();
        let b = s
            .energy_balance(&u1, &un, k, 1e-5, p.nu, t + k, p.force.as_ref())
            .unwrap();
        assert!(b.relative_residual() < 1e-8, "{:?}", b);
    }

    #[test]
    fn pressure_recovery_examples() {
        let v = square(3);
        let mut s = Stepper::new(v.clone(), SolverKind::Direct, 1e-12).unwrap();
        let shear = Field::interpolate_vector(&v, &|_, y, _| [y, 0.0], 0.0).unwrap();
        let p = s.recover_pressure(&shear, 1e-3).unwrap();
        assert!(p.coeffs.iter().all(|c| c.abs() < 1e-9));
        let radial = Field::interpolate_vector(&v, &|x, y, _| [x, y], 0.0).unwrap();
        let p = s.recover_pressure(&radial, 0.5).unwrap();
        assert!(p.coeffs.iter().all(|c| (c + 4.0).abs() < 1e-10));
        assert!(s.penalty_residual(&radial, &p, 0.5) < 1e-10);
    }
}
