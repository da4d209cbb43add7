//! CSV outputs. Floats use the shortest round-trip form; absent values are
//! empty fields.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use servoscope_core::irl::LearningCurve;
use servoscope_core::sim::Vec3;
use servoscope_core::uvs::ExecutionTrace;

use crate::error::{HarnessError, Result};
use crate::pipeline::SuiteRow;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish<W: Write>(w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| HarnessError::io(path, e.into_error()))?
        .flush()
        .map_err(|e| HarnessError::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_learning_curve(curve: &LearningCurve, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "mean_ll", "bound_fraction", "seconds"])?;
    for i in 0..curve.len() {
        w.write_record([
            (i + 1).to_string(),
            num(curve.mean_ll[i]),
            num(curve.bound_fraction[i]),
            num(curve.seconds[i]),
        ])?;
    }
    finish(w, path)
}

pub fn write_reward_field(field: &[(Vec3, f64)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["dir_x", "dir_y", "dir_z", "reward"])?;
    for (d, r) in field {
        w.write_record([num(d.x), num(d.y), num(d.z), num(*r)])?;
    }
    finish(w, path)
}

pub fn trace_header(trace: &ExecutionTrace, joints: usize) -> Vec<String> {
    let dof = trace.steps.first().map_or(0, |s| s.r_obs.len());
    let mut h = vec!["step".to_string()];
    h.extend((0..joints).map(|i| format!("q{i}")));
    h.extend((0..joints).map(|i| format!("dq{i}")));
    h.extend((0..dof).map(|i| format!("r{i}")));
    h.extend(["scalar_reward", "cum_reward", "pixel_error", "recalibrated"].map(String::from));
    h
}

pub fn write_trace(trace: &ExecutionTrace, path: &Path) -> Result<()> {
    let joints = trace.steps.first().map_or(0, |s| s.q.len());
    let mut w = writer(path)?;
    w.write_record(trace_header(trace, joints))?;
    for s in &trace.steps {
        let mut rec = vec![s.step.to_string()];
        rec.extend(s.q.iter().copied().map(num));
        rec.extend(s.dq.iter().copied().map(num));
        rec.extend(s.r_obs.iter().copied().map(num));
        rec.push(num(s.scalar_reward));
        rec.push(num(s.cum_reward));
        rec.push(num(s.pixel_error));
        rec.push(u8::from(s.recalibrated).to_string());
        w.write_record(rec)?;
    }
    finish(w, path)
}

pub fn write_suite(rows: &[SuiteRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "setting",
        "trials",
        "successes",
        "mean_error_px",
        "std_error_px",
        "mean_steps",
        "train_seconds",
    ])?;
    for r in rows {
        w.write_record([
            r.setting.clone(),
            r.trials.to_string(),
            r.successes.to_string(),
            opt(r.mean_error_px),
            opt(r.std_error_px),
            num(r.mean_steps),
            num(r.train_seconds),
        ])?;
    }
    finish(w, path)
}
