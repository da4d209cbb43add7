//! `servoscope <gen-demos|train|execute|evaluate|sphere> --config PATH [--seed N] --out DIR`

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use servoscope_core::irl::LearningCurve;
use servoscope_core::nn::Network;
use servoscope_core::vision::ImageState;

use crate::config::{load_config, ExperimentConfig};
use crate::demos::{demo_dir_name, list_demo_dirs, read_demo, write_demo};
use crate::error::{HarnessError, Result};
use crate::pipeline::{evaluate_demo_counts, evaluate_network, generate_demo, generate_demos, probe_reward_fields, run_trial, train_model, LearnedTask};
use crate::{report, weights};

pub const WEIGHTS_FILE: &str = "weights.tfn";
pub const CURVE_FILE: &str = "learning_curve.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUITE_FILE: &str = "suite.csv";
pub const DEMOS_DIR: &str = "demos";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Parser)]
#[command(name = "servoscope", version, about = "Learn a task function from demonstrations and servo with it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic demonstration directories.
    GenDemos(CommonArgs),
    /// Train the task network; writes weights and the learning curve.
    Train(CommonArgs),
    /// Run one execution trial with the trained network.
    Execute(CommonArgs),
    /// Run the trial suite over baseline, perturbations and demo counts.
    Evaluate(CommonArgs),
    /// Sample the reward field around the probe centres.
    Sphere(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the master seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; falls back to `out_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Record elapsed seconds instead of zeros.
    #[arg(long)]
    wall_clock: bool,
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    started: Instant,
}

impl Run {
    fn new(args: &CommonArgs) -> Result<Self> {
        let mut cfg = load_config(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.wall_clock |= args.wall_clock;
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .ok_or_else(|| HarnessError::Validation("out_dir: pass --out or set out_dir".into()))?;
        fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
        Ok(Run {
            cfg,
            out,
            started: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Elapsed seconds, or constant zero unless wall-clock recording is on.
    fn clock(&self) -> impl FnMut() -> f64 {
        let started = self.started;
        let enabled = self.cfg.wall_clock;
        move || if enabled { started.elapsed().as_secs_f64() } else { 0.0 }
    }

    fn demos_needed(&self) -> usize {
        self.cfg.demo_counts.iter().copied().fold(self.cfg.demos, usize::max)
    }

    /// Frames for the first `count` demos. Directories already under
    /// `out/demos` are read back; missing indices are generated and written.
    fn demo_frames(&self, count: usize) -> Result<Vec<Vec<ImageState>>> {
        let root = self.path(DEMOS_DIR);
        let existing = if root.is_dir() { list_demo_dirs(&root)? } else { Vec::new() };
        let mut frames = Vec::with_capacity(count);
        for dir in existing.iter().take(count) {
            frames.push(read_demo(dir)?.frames);
        }
        for i in existing.len()..count {
            let demo = generate_demo(&self.cfg, i)?;
            write_demo(&demo, &root.join(demo_dir_name(i)))?;
            frames.push(demo.frames);
        }
        Ok(frames)
    }

    fn train(&self) -> Result<(Network, LearningCurve)> {
        let frames = self.demo_frames(self.cfg.demos)?;
        let (net, curve) = train_model(&self.cfg, &frames, &mut self.clock())?;
        weights::save(&net, &self.path(WEIGHTS_FILE))?;
        report::write_learning_curve(&curve, &self.path(CURVE_FILE))?;
        Ok((net, curve))
    }

    fn weights(&self) -> Result<Network> {
        let path = self.path(WEIGHTS_FILE);
        if !path.is_file() {
            return Err(HarnessError::format(&path, "weights file missing; run `train` first"));
        }
        weights::load(&path)
    }
}

fn file_label(setting: &str) -> String {
    setting
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn gen_demos(run: &Run) -> Result<()> {
    let demos = generate_demos(&run.cfg, run.demos_needed())?;
    let root = run.path(DEMOS_DIR);
    for (i, d) in demos.iter().enumerate() {
        write_demo(d, &root.join(demo_dir_name(i)))?;
    }
    eprintln!("wrote {} demos to {}", demos.len(), root.display());
    Ok(())
}

fn train(run: &Run) -> Result<()> {
    let (_, curve) = run.train()?;
    let last = curve.len() - 1;
    eprintln!(
        "trained {} epochs: mean ll {:.4} ({:.3} of bound)",
        curve.len(),
        curve.mean_ll[last],
        curve.bound_fraction[last]
    );
    Ok(())
}

fn execute(run: &Run) -> Result<()> {
    let task = LearnedTask::new(&run.cfg, run.weights()?)?;
    let trace = run_trial(&run.cfg, &task, 0, None)?;
    report::write_trace(&trace, &run.path(TRACE_FILE))?;
    eprintln!(
        "{}: final error {:.3} px after {} steps",
        if trace.success { "success" } else { "failure" },
        trace.final_error(),
        trace.steps_used()
    );
    Ok(())
}

fn evaluate(run: &Run) -> Result<()> {
    let mut clock = run.clock();
    let train_start = clock();
    let net = if run.path(WEIGHTS_FILE).is_file() {
        run.weights()?
    } else {
        run.train()?.0
    };
    let train_seconds = clock() - train_start;
    let mut suite = evaluate_network(&run.cfg, net, train_seconds)?;
    if !run.cfg.demo_counts.is_empty() {
        let frames = run.demo_frames(run.demos_needed())?;
        let counts = evaluate_demo_counts(&run.cfg, &frames, &mut clock)?;
        suite.rows.extend(counts.rows);
        suite.traces.extend(counts.traces);
    }
    let traces_dir = run.path(TRACES_DIR);
    fs::create_dir_all(&traces_dir).map_err(|e| HarnessError::io(&traces_dir, e))?;
    for (row, traces) in suite.rows.iter().zip(&suite.traces) {
        for (i, t) in traces.iter().enumerate() {
            let name = format!("{}_trial_{i:02}.csv", file_label(&row.setting));
            report::write_trace(t, &traces_dir.join(name))?;
        }
    }
    report::write_suite(&suite.rows, &run.path(SUITE_FILE))?;
    for row in &suite.rows {
        eprintln!("{}: {}/{}", row.setting, row.successes, row.trials);
    }
    Ok(())
}

fn sphere(run: &Run) -> Result<()> {
    let task = LearnedTask::new(&run.cfg, run.weights()?)?;
    let probes = probe_reward_fields(&run.cfg, &task)?;
    for (k, p) in probes.iter().enumerate() {
        report::write_reward_field(&p.field, &run.path(&format!("reward_field_{k:02}.csv")))?;
        eprintln!(
            "centre ({:.1}, {:.1}, {:.1}): best direction {:.1} deg off target",
            p.center.x, p.center.y, p.center.z, p.angle_deg
        );
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (args, command): (&CommonArgs, fn(&Run) -> Result<()>) = match &cli.command {
        Command::GenDemos(a) => (a, gen_demos),
        Command::Train(a) => (a, train),
        Command::Execute(a) => (a, execute),
        Command::Evaluate(a) => (a, evaluate),
        Command::Sphere(a) => (a, sphere),
    };
    match Run::new(args).and_then(|run| command(&run)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

