//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs in report mode by default and exits 0 after printing every line.
//! Set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use servoscope::cli::run_command;
use servoscope::config::{ExperimentConfig, PerturbationSpec};
use servoscope::core::irl::{cost_upper_bound, transition_objective};
use servoscope::core::nn::{layer_specs, Network};
use servoscope::core::sim::{random_start, scaled_success_threshold, CameraModel, Mount, ProgressOracle, RobotState, Scene, SimEnv};
use servoscope::core::uvs::{broyden_update, run_execution, ControllerConfig, ExecutionTrace, JacobianEstimate};
use nalgebra::{DMatrix, DVector};
use servoscope::pipeline::{generate_demos, probe_reward_fields, run_trials, train_model, LearnedTask};

const GRAD_NETS: usize = 120;
const GRAD_H: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
const BOUND_SIGMA0_SQ: f64 = 0.16;
const BOUND_VALUE: f64 = 14.5;
const BOUND_EQ_TOL: f64 = 1e-9;
const SECANT_TRIALS: usize = 1000;
const SECANT_TOL: f64 = 1e-12;
const ORACLE_MIN_WINS: usize = 9;
const CURVE_FRACTION: f64 = 0.6;
const CURVE_WINDOW: usize = 5;
const E2E_MIN_WINS: usize = 6;
const FIELD_MAX_ANGLE_DEG: f64 = 45.0;
const FIELD_MIN_FRACTION: f64 = 0.8;
const CORR_MIN: f64 = 0.8;
const ROBUST_MAX_DROP: usize = 3;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    fn record(&mut self, id: usize, name: &'static str, budget_s: u64, started: Instant, pass: bool, detail: String) {
        let elapsed = started.elapsed();
        let budget = Duration::from_secs(budget_s);
        let pass = pass && elapsed <= budget;
        let line = Line {
            id,
            name,
            pass,
            detail,
            elapsed,
            budget,
        };
        println!(
            "[{}] {:>2} {}: {} ({:.1}s of {}s)",
            if line.pass { "PASS" } else { "FAIL" },
            line.id,
            line.name,
            line.detail,
            line.elapsed.as_secs_f64(),
            line.budget.as_secs()
        );
        self.lines.push(line);
    }
}

fn gradient_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for n in 0..GRAD_NETS {
        let input = rng.random_range(2..=8);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=7)).collect();
        let dof = rng.random_range(1..=3);
        let mut net = Network::new(&layer_specs(input, &hidden, dof), n as u64).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..dof).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |net: &Network| -> f64 { net.predict(&x).unwrap().iter().zip(&e).map(|(y, w)| y * w).sum() };
        let (_, cache) = net.forward(&x).unwrap();
        let analytic: Vec<f64> = net.backprop(&cache, &e).unwrap().iter().collect();
        for (i, a) in analytic.iter().enumerate() {
            let orig = *net.parameter_mut(i).unwrap();
            *net.parameter_mut(i).unwrap() = orig + GRAD_H;
            let up = loss(&net);
            *net.parameter_mut(i).unwrap() = orig - GRAD_H;
            let down = loss(&net);
            *net.parameter_mut(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * GRAD_H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    (worst < GRAD_REL_TOL, format!("{GRAD_NETS} nets, worst relative error {worst:.2e} (tol {GRAD_REL_TOL:.0e})"))
}

fn objective_bound() -> (bool, String) {
    let sigma0 = BOUND_SIGMA0_SQ.sqrt();
    let mut max = f64::NEG_INFINITY;
    let mut argmax = (0.0, 0.0);
    let mut near_max = 0;
    for i in 0..=200 {
        for j in 0..=200 {
            let rp = -1.0 + i as f64 * 0.01;
            let rm = -1.0 + j as f64 * 0.01;
            let ll = transition_objective(rp, rm, sigma0).ll;
            if ll > max {
                max = ll;
                argmax = (rp, rm);
            }
            if (ll - BOUND_VALUE).abs() <= BOUND_EQ_TOL {
                near_max += 1;
            }
        }
    }
    let bound = cost_upper_bound(sigma0);
    let pass = max <= BOUND_VALUE + BOUND_EQ_TOL
        && (bound - BOUND_VALUE).abs() <= BOUND_EQ_TOL
        && near_max == 1
        && argmax == (1.0, -1.0);
    (pass, format!("max {max:.12} at {argmax:?}, {near_max} grid point(s) at the bound"))
}

fn secant_condition() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..SECANT_TRIALS {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let j = DMatrix::from_fn(d, m, |_, _| rng.random_range(-2.0..2.0));
        let dq: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jac = JacobianEstimate::new(j);
        let next = broyden_update(&jac, &dq, &r, 1e-12).unwrap();
        let pred = &next.j * DVector::from_column_slice(&dq);
        let err = pred.iter().zip(&r).map(|(p, o)| (p - o).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    (worst <= SECANT_TOL, format!("{SECANT_TRIALS} updates, worst residual {worst:.2e}"))
}

fn oracle_convergence() -> (bool, String) {
    let camera = CameraModel::default_for(128, 128);
    let mut cfg = ControllerConfig::with_dof(3);
    cfg.max_steps = 100;
    cfg.success_threshold_px = scaled_success_threshold(128);
    let mut wins = 0;
    for seed in 0..10u64 {
        let mut scene = Scene::default();
        scene.object_pos = random_start(&scene.target_pos, 1000 + seed, 50.0, 90.0);
        let mut env = SimEnv::new(scene, camera.clone(), RobotState::default(), Mount::default()).unwrap();
        let oracle = ProgressOracle::new(env.progress_tap(), 10.0, 3);
        let trace = run_execution(&mut env, &oracle, &cfg, |e: &SimEnv| e.pixel_error()).unwrap();
        wins += usize::from(trace.success);
    }
    (wins >= ORACLE_MIN_WINS, format!("{wins}/10 within 100 steps below {:.2} px", cfg.success_threshold_px))
}

fn successes(traces: &[ExecutionTrace]) -> usize {
    traces.iter().filter(|t| t.success).count()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Correlation between cumulative reward and error reduction, starting
/// from the pre-motion point where both are zero.
fn reward_error_correlation(t: &ExecutionTrace) -> Option<f64> {
    let cum: Vec<f64> = std::iter::once(0.0).chain(t.steps.iter().map(|s| s.cum_reward)).collect();
    let red: Vec<f64> = std::iter::once(0.0)
        .chain(t.steps.iter().map(|s| t.initial_error - s.pixel_error))
        .collect();
    pearson(&cum, &red)
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"trainer": {"epochs": 2}, "demos": 3}"#).unwrap();
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        for cmd in ["train", "execute"] {
            let code = run_command([
                "servoscope",
                cmd,
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "17",
                "--out",
                out.to_str().unwrap(),
            ]);
            if code != 0 {
                return (false, format!("{cmd} exited with {code}"));
            }
        }
    }
    let files = ["weights.tfn", "learning_curve.csv", "trace.csv"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(outs[0].join(f)).unwrap() == std::fs::read(outs[1].join(f)).unwrap())
        .collect();
    (same.iter().all(|&s| s), format!("{:?} identical: {same:?}", files))
}

fn main() {
    let mut suite = Suite { lines: Vec::new() };

    let t = Instant::now();
    let (ok, d) = gradient_check();
    suite.record(1, "gradient correctness", 10, t, ok, d);

    let t = Instant::now();
    let (ok, d) = objective_bound();
    suite.record(2, "objective upper bound", 1, t, ok, d);

    let t = Instant::now();
    let (ok, d) = secant_condition();
    suite.record(3, "Broyden secant condition", 1, t, ok, d);

    let t = Instant::now();
    let (ok, d) = oracle_convergence();
    suite.record(4, "controller with oracle task function", 60, t, ok, d);

    let cfg = ExperimentConfig::default();
    let t_train = Instant::now();
    let demos: Vec<_> = generate_demos(&cfg, cfg.demos).unwrap().into_iter().map(|d| d.frames).collect();
    let (net, curve) = train_model(&cfg, &demos, &mut || 0.0).unwrap();
    let train_elapsed = t_train.elapsed();
    let bound = cfg.trainer_config().unwrap().upper_bound();
    let final_ll = curve.final_mean_ll().unwrap();
    let smooth = curve.smoothed(CURVE_WINDOW);
    let monotone = smooth.windows(2).all(|w| w[1] >= w[0]);
    suite.record(
        5,
        "learning curve",
        600,
        t_train,
        final_ll >= CURVE_FRACTION * bound && monotone,
        format!(
            "final mean ll {final_ll:.3} = {:.3} of bound {bound} (need {CURVE_FRACTION}), smoothed curve non-decreasing: {monotone}",
            final_ll / bound
        ),
    );

    let task = LearnedTask::new(&cfg, net).unwrap();
    let t = Instant::now();
    let baseline = run_trials(&cfg, &task, None).unwrap();
    let base_wins = successes(&baseline);
    let e2e_elapsed = train_elapsed + t.elapsed();
    println!("       baseline trial errors: {:?}", baseline.iter().map(|t| (t.final_error() * 10.0).round() / 10.0).collect::<Vec<_>>());
    suite.record(
        6,
        "end-to-end demos -> train -> execute",
        900,
        Instant::now() - e2e_elapsed,
        base_wins >= E2E_MIN_WINS,
        format!("{base_wins}/10 successes (need {E2E_MIN_WINS})"),
    );

    let t = Instant::now();
    let (net1, _) = train_model(&cfg, &demos[..1], &mut || 0.0).unwrap();
    let one = run_trials(&cfg, &LearnedTask::new(&cfg, net1).unwrap(), None).unwrap();
    let one_wins = successes(&one);
    suite.record(
        7,
        "more demonstrations do not hurt",
        1800,
        Instant::now() - (e2e_elapsed + t.elapsed()),
        base_wins >= one_wins,
        format!("11 demos {base_wins}/10 vs 1 demo {one_wins}/10{}", if base_wins + one_wins == 0 { " (holds vacuously)" } else { "" }),
    );

    let t = Instant::now();
    let probes = probe_reward_fields(&cfg, &task).unwrap();
    let hits = probes.iter().filter(|p| p.angle_deg <= FIELD_MAX_ANGLE_DEG).count();
    let angles: Vec<f64> = probes.iter().map(|p| p.angle_deg.round()).collect();
    suite.record(
        8,
        "reward field points at the target",
        120,
        t,
        hits as f64 >= FIELD_MIN_FRACTION * probes.len() as f64,
        format!("{hits}/{} centres within {FIELD_MAX_ANGLE_DEG} deg, angles {angles:?}", probes.len()),
    );

    let t = Instant::now();
    let corrs: Vec<Option<f64>> = baseline.iter().filter(|t| t.success).map(reward_error_correlation).collect();
    let corr_ok = corrs.iter().all(|c| c.is_some_and(|c| c >= CORR_MIN));
    let shown: Vec<String> = corrs.iter().map(|c| c.map_or("undefined".into(), |c| format!("{c:.3}"))).collect();
    suite.record(
        9,
        "cumulative reward tracks error reduction",
        60,
        t,
        corr_ok,
        format!(
            "{} successful trial(s), correlations {shown:?}{}",
            corrs.len(),
            if corrs.is_empty() { " (holds vacuously)" } else { "" }
        ),
    );

    let t = Instant::now();
    let settings = [
        PerturbationSpec::IlluminationShift { delta: 20 },
        PerturbationSpec::IlluminationShift { delta: -20 },
        PerturbationSpec::OccludeObject { fraction: 0.25 },
    ];
    let mut robust = true;
    let mut parts = Vec::new();
    for p in &settings {
        let wins = successes(&run_trials(&cfg, &task, Some(p)).unwrap());
        robust &= base_wins.saturating_sub(wins) <= ROBUST_MAX_DROP;
        parts.push(format!("{} {wins}/10", p.label()));
    }
    suite.record(
        10,
        "robustness to illumination and occlusion",
        900,
        t,
        robust,
        format!("baseline {base_wins}/10; {}", parts.join(", ")),
    );

    let t = Instant::now();
    let (ok, d) = determinism();
    suite.record(11, "determinism", 600, t, ok, d);

    let passed = suite.lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass", suite.lines.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < suite.lines.len() {
        std::process::exit(1);
    }
}
