use std::process::Command;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use penaltyflow::assembly::{
    apply_dirichlet_values, assemble_load, dirichlet_values, VelocityOperators,
};
use penaltyflow::driver::{run_experiment, timeseries_csv, Algorithm, RunConfig};
use penaltyflow::fespace::{FeSpace, Field};
use penaltyflow::linsolve::{LinearSolver, SolverKind};
use penaltyflow::mesh::{build_rect_mesh, load_mesh};
use penaltyflow::problems::{offset_circles_mesh_path, Problem};
use penaltyflow::sparse::norm2;
use penaltyflow::stepper::Stepper;

fn unit_space(n: usize) -> Arc<FeSpace> {
    FeSpace::p2_vector(Arc::new(build_rect_mesh(n, n, 0.0, 0.0, 1.0, 1.0).unwrap()))
}

fn random_field(space: &Arc<FeSpace>, rng: &mut ChaCha8Rng, zero_boundary: bool) -> Field {
    let mask = space.dirichlet_mask();
    let c = mask
        .iter()
        .map(|&b| {
            if b && zero_boundary {
                0.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        })
        .collect();
    Field::from_coeffs(space, c).unwrap()
}

fn small(problem: &str, alg: Algorithm) -> RunConfig {
    RunConfig {
        problem: problem.into(),
        algorithm: alg,
        nx: 6,
        ny: 6,
        t_end: Some(0.1),
        ..RunConfig::default()
    }
}

#[test]
fn step_solve_matches_dense_lu() {
    let space = unit_space(4);
    let ops = VelocityOperators::new(space.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u_star = random_field(&space, &mut rng, false);
    let conv = ops.convection(&u_star).unwrap();
    let mut a = ops.step_matrix(0.05, 0.1, 1e-3, &conv).unwrap();
    let f = |x: f64, y: f64, _t: f64| [x * y, 1.0 - x];
    let mut rhs = assemble_load(&space, &f, 0.0).unwrap();
    let g = dirichlet_values(&space, &|x, y, _| [y, -x], 0.0);
    apply_dirichlet_values(&mut a, &mut rhs, &space.dirichlet_mask(), &g);

    let n = a.nrows();
    let dense = DMatrix::from_row_slice(n, n, &a.to_dense());
    let expect = dense.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
    let (x, report) = LinearSolver::new(SolverKind::Direct, 1e-12)
        .solve(&a, &rhs)
        .unwrap();
    assert!(report.success);
    let diff: Vec<f64> = x.iter().zip(expect.iter()).map(|(a, b)| a - b).collect();
    assert!(
        norm2(&diff) <= 1e-9 * norm2(&x),
        "direct solve differs from dense LU by {}",
        norm2(&diff)
    );

    let gm = SolverKind::Gmres {
        restart: 60,
        max_iter: 2000,
    };
    let (xg, rg) = LinearSolver::new(gm, 1e-12).solve(&a, &rhs).unwrap();
    assert!(rg.success);
    let diff: Vec<f64> = xg.iter().zip(expect.iter()).map(|(a, b)| a - b).collect();
    assert!(norm2(&diff) <= 1e-6 * norm2(&x));
}

#[test]
fn runs_are_deterministic() {
    for alg in [Algorithm::ConstK, Algorithm::Vsvo] {
        let a = run_experiment(&small("vortex_square", alg)).unwrap();
        let b = run_experiment(&small("vortex_square", alg)).unwrap();
        assert_eq!(timeseries_csv(&a.records), timeseries_csv(&b.records));
        assert_eq!(a.final_u.coeffs, b.final_u.coeffs);
    }
}

#[test]
fn energy_identity_holds_on_every_step() {
    for alg in [Algorithm::ConstK, Algorithm::SecondVarK] {
        let res = run_experiment(&small("vortex_square", alg)).unwrap();
        assert!(!res.records.is_empty());
        for r in &res.records {
            assert!(
                r.energy_residual <= 1e-8,
                "t = {}: {}",
                r.t,
                r.energy_residual
            );
            assert!(r.penalty_residual <= 1e-10);
        }
    }
}

#[test]
fn offset_circles_mesh_is_an_annulus() {
    let m = load_mesh(offset_circles_mesh_path()).unwrap();
    let area = std::f64::consts::PI * (1.0 - 0.01);
    assert!(
        (m.total_area() - area).abs() <= 0.02 * area,
        "area {}",
        m.total_area()
    );
    let mut topo: Vec<usize> = (0..m.num_edges())
        .filter(|&e| m.is_boundary_edge(e))
        .flat_map(|e| m.edges()[e])
        .collect();
    topo.sort_unstable();
    topo.dedup();
    assert_eq!(topo, m.boundary_nodes());
    let on_inner = m
        .boundary_nodes()
        .into_iter()
        .filter(|&n| m.boundary_label(n) == 2)
        .all(|n| {
            let p = m.nodes()[n];
            ((p[0] - 0.5).hypot(p[1]) - 0.1).abs() < 1e-12
        });
    assert!(on_inner);
}

#[test]
fn offset_circles_short_run() {
    let cfg = RunConfig {
        problem: "offset_circles".into(),
        algorithm: Algorithm::Vsvo,
        t_end: Some(0.05),
        ..RunConfig::default()
    };
    let res = run_experiment(&cfg).unwrap();
    assert!(res.final_u.is_finite());
    assert!(res.summary.u_err_l2.is_none());
    assert!(res.records.iter().all(|r| r.energy_residual <= 1e-8));
}

#[test]
fn output_directory_gets_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: Some(dir.path().join("out")),
        ..small("quiescent", Algorithm::ConstK)
    };
    let res = run_experiment(&cfg).unwrap();
    let ts = std::fs::read_to_string(dir.path().join("out/timeseries.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(ts.lines().count(), res.records.len() + 1);
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn cli_verify_and_run() {
    let exe = env!("CARGO_BIN_EXE_penaltyflow");
    let ok = Command::new(exe)
        .args(["verify", "vortex_square"])
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("max residual"));
    let bad = Command::new(exe)
        .args(["verify", "offset_circles"])
        .output()
        .unwrap();
    assert!(!bad.status.success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "problem = quiescent\nmesh_n = 4\nt_end = 0.03\n").unwrap();
    let out = Command::new(exe)
        .arg("run")
        .arg(&cfg)
        .args(["--set", "k0=0.01"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("problem,algorithm,steps"));
    assert!(text.contains("quiescent,alg1-const-k,3,"));
    let typo = Command::new(exe)
        .arg("run")
        .arg(&cfg)
        .args(["--set", "tolerance=1"])
        .output()
        .unwrap();
    assert!(!typo.status.success());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn energy_balance_closes_for_any_state(seed in 0u64..1000, log_eps in -8.0f64..-3.0, k in 0.001f64..0.2, nu in 0.001f64..1.0) {
        let space = unit_space(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u_n = random_field(&space, &mut rng, true);
        let u_star = random_field(&space, &mut rng, false);
        let eps = 10f64.powf(log_eps);
        let p = Problem::by_name("quiescent").unwrap();
        let force = |x: f64, y: f64, t: f64| [(x + t).sin(), y * y];
        let mut st = Stepper::new(space, SolverKind::Direct, 1e-10).unwrap();
        let (u1, _) = st.be_penalty_step(&u_n, &u_star, k, eps, nu, k, &force, &*p.boundary).unwrap();
        let eb = st.energy_balance(&u1, &u_n, k, eps, nu, k, &force).unwrap();
        prop_assert!(eb.relative_residual() <= 1e-8, "relative residual {}", eb.relative_residual());
    }
}
