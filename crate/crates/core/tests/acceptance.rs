//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits successfully regardless of outcome so the workspace test
//! run stays green; set `ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use penaltyflow::adapt::{alpha_coeffs, est_epsilon};
use penaltyflow::assembly::assemble_convection;
use penaltyflow::driver::{convergence_study, run_experiment, Algorithm, RunConfig, RunResult};
use penaltyflow::fespace::{FeSpace, Field};
use penaltyflow::mesh::build_rect_mesh;
use penaltyflow::problems::{verify_forcing, Problem};
use penaltyflow::stepper::{d2_combination, filter_combination};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn run(cfg: &RunConfig) -> RunResult {
    run_experiment(cfg).expect("run failed")
}

fn vortex(alg: Algorithm) -> RunConfig {
    RunConfig {
        algorithm: alg,
        ..RunConfig::default()
    }
}

fn temporal_order() -> Outcome {
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let rows = convergence_study(&vortex(Algorithm::ConstK), &steps).expect("rates failed");
    let rates: Vec<f64> = rows.iter().filter_map(|r| r.rate).collect();
    let errs: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.error)).collect();
    outcome(
        rates.iter().all(|r| (1.6..=2.4).contains(r)),
        format!(
            "errors [{}], rates {:?} (need [1.6, 2.4])",
            errs.join(", "),
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn energy_identity(base: &RunResult) -> Outcome {
    let mut run_len = 0usize;
    let mut best = 0usize;
    let mut worst = 0.0f64;
    for r in &base.records {
        worst = worst.max(r.energy_residual);
        if r.energy_residual <= 1e-8 {
            run_len += 1;
            best = best.max(run_len);
        } else {
            run_len = 0;
        }
    }
    outcome(
        best >= 100,
        format!("{best} consecutive steps <= 1e-8, worst relative residual {worst:.2e}"),
    )
}

fn skew_symmetry() -> Outcome {
    let mesh = Arc::new(build_rect_mesh(12, 12, 0.0, 0.0, 1.0, 1.0).unwrap());
    let space = FeSpace::p2_vector(mesh);
    let mask = space.dirichlet_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let us: Vec<f64> = (0..space.dof_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let w: Vec<f64> = mask
            .iter()
            .map(|&b| if b { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let scale =
            us.iter().fold(0.0f64, |m, v| m.max(v.abs())) * w.iter().map(|v| v * v).sum::<f64>();
        let n = assemble_convection(&space, &Field::from_coeffs(&space, us).unwrap()).unwrap();
        worst = worst.max(n.bilinear(&w, &w).abs() / scale);
    }
    outcome(
        worst <= 1e-10,
        format!("max |w'N w| / (|w|^2 max|u*|) = {worst:.2e}"),
    )
}

fn guard_efficacy() -> Outcome {
    let (t_drop, window) = (0.5, 0.1);
    let cfg = |guard: bool| RunConfig {
        guard,
        eps0: 1e-5,
        eps_drop_time: Some(t_drop),
        ..vortex(Algorithm::Vsvo)
    };
    let guarded = run(&cfg(true));
    let unguarded = run(&cfg(false));
    let max_ut = |r: &RunResult| {
        r.records
            .iter()
            .filter(|s| s.t >= t_drop && s.t <= t_drop + window)
            .fold(0.0f64, |m, s| m.max(s.ut_norm))
    };
    let (g, u) = (max_ut(&guarded), max_ut(&unguarded));
    let alpha = RunConfig::default().tolerances.alpha;
    let guard_ok = guarded
        .records
        .windows(2)
        .all(|p| p[1].eps >= (1.0 - p[1].k * alpha).min(0.5) * p[0].eps * (1.0 - 1e-12));
    outcome(
        u >= 5.0 * g && guard_ok,
        format!("max |u_t| on [{t_drop}, {}]: unguarded {u:.4}, guarded {g:.4}, ratio {:.3} (need >= 5); guard bound held: {guard_ok}", t_drop + window, u / g),
    )
}

fn step_ordering() -> Outcome {
    let first = run(&vortex(Algorithm::FirstVarK)).summary.steps;
    let second = run(&vortex(Algorithm::SecondVarK)).summary.steps;
    let vsvo = run(&vortex(Algorithm::Vsvo)).summary.steps;
    outcome(
        first > vsvo && first > second,
        format!("steps: first-order {first}, second-order {second}, vsvo {vsvo}"),
    )
}

fn penalty_relation(base: &RunResult) -> Outcome {
    let worst = base
        .records
        .iter()
        .fold(0.0f64, |m, r| m.max(r.penalty_residual));
    outcome(
        worst <= 1e-10,
        format!(
            "max |(div u + eps p, q)| = {worst:.2e} over {} steps",
            base.records.len()
        ),
    )
}

fn estimator_control(base: &RunResult) -> Outcome {
    let tol = RunConfig::default().tolerances.tol;
    let late: Vec<_> = base.records.iter().filter(|r| r.t > 0.2).collect();
    let bad = late.iter().filter(|r| r.est_e > tol).count();
    let worst = late.iter().fold(0.0f64, |m, r| m.max(r.est_e));
    outcome(
        !late.is_empty() && bad == 0,
        format!(
            "{bad} of {} steps after t = 0.2 exceed TOL, max EST {worst:.2e}",
            late.len()
        ),
    )
}

fn ode_errors(n: usize, filtered: bool) -> f64 {
    let k = 1.0 / n as f64;
    let (alpha1, _) = alpha_coeffs(1.0, 1.0);
    let mut prev = 1.0f64;
    let mut cur = (-k).exp();
    for _ in 1..n {
        let y1 = cur / (1.0 + k);
        let next = if filtered {
            let d2 = d2_combination(&[y1], &[cur], &[prev], k, k);
            filter_combination(&[y1], &d2, alpha1)[0]
        } else {
            y1
        };
        prev = cur;
        cur = next;
    }
    (cur - (-1.0f64).exp()).abs()
}

fn filter_order() -> Outcome {
    let ns = [20usize, 40, 80, 160];
    let order = |filtered: bool| {
        let e: Vec<f64> = ns.iter().map(|&n| ode_errors(n, filtered)).collect();
        e.windows(2)
            .map(|w| (w[0] / w[1]).log2())
            .collect::<Vec<_>>()
    };
    let (be, fl) = (order(false), order(true));
    let ok = be.iter().all(|r| (r - 1.0).abs() <= 0.2) && fl.iter().all(|r| (r - 2.0).abs() <= 0.2);
    outcome(
        ok,
        format!("backward Euler orders {be:.3?}, filtered orders {fl:.3?}"),
    )
}

fn forcing_oracles() -> Outcome {
    let tg = verify_forcing(&Problem::by_name("taylor_green").unwrap(), 100, 0).unwrap();
    let vs = verify_forcing(&Problem::by_name("vortex_square").unwrap(), 100, 0).unwrap();
    let p = Problem::by_name("vortex_square").unwrap();
    let f = p.force.clone();
    let bad = p.with_force(Arc::new(move |x, y, t| {
        let v = f(x, y, t);
        [v[0] + 1.0, v[1]]
    }));
    let corrupted = verify_forcing(&bad, 100, 0).unwrap();
    outcome(
        tg < 1e-6 && vs < 1e-6 && corrupted >= 1e-6,
        format!("taylor_green {tg:.2e}, vortex_square {vs:.2e}, corrupted {corrupted:.2e}"),
    )
}

fn scale_invariance() -> Outcome {
    let mesh = Arc::new(build_rect_mesh(10, 10, 0.0, 0.0, 1.0, 1.0).unwrap());
    let space = FeSpace::p2_vector(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = Field::from_coeffs(
        &space,
        (0..space.dof_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let base = est_epsilon(&u).unwrap().est;
    let worst = [1e-6, 1.0, 1e6]
        .iter()
        .map(|&c| ((est_epsilon(&u.scale(c)).unwrap().est - base) / base).abs())
        .fold(0.0f64, f64::max);
    outcome(worst <= 1e-12, format!("max relative change {worst:.2e}"))
}

fn main() {
    let start = Instant::now();
    let base = run(&vortex(Algorithm::ConstK));
    let checks: Vec<Check> = vec![
        (
            "temporal order of the constant-step scheme",
            Box::new(temporal_order),
        ),
        (
            "discrete energy identity",
            Box::new(|| energy_identity(&base)),
        ),
        ("skew-symmetry of convection", Box::new(skew_symmetry)),
        ("stability guard efficacy", Box::new(guard_efficacy)),
        ("step-count ordering", Box::new(step_ordering)),
        ("penalty relation", Box::new(|| penalty_relation(&base))),
        (
            "penalty estimator control",
            Box::new(|| estimator_control(&base)),
        ),
        ("time filter order", Box::new(filter_order)),
        ("forcing oracles", Box::new(forcing_oracles)),
        ("estimator scale invariance", Box::new(scale_invariance)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!(
        "{} of {} criteria passed in {:.0}s",
        checks.len() - failed,
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
