//! Demonstration directories: `frame_NNNN.pgm` files plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use servoscope_core::sim::Demonstration;
use servoscope_core::vision::ImageState;

use crate::error::{HarnessError, Result};
use crate::pgm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub frames: usize,
    pub alpha: f64,
    pub seed: u64,
    /// `[object_xyz, target_xyz]` per frame.
    pub ground_truth: Vec<[[f64; 3]; 2]>,
    pub image_w: usize,
    pub image_h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDemo {
    pub frames: Vec<ImageState>,
    pub manifest: Manifest,
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.pgm")
}

pub fn demo_dir_name(index: usize) -> String {
    format!("demo_{index:03}")
}

pub fn manifest_for(demo: &Demonstration) -> Manifest {
    let (w, h) = demo.frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    Manifest {
        frames: demo.frames.len(),
        alpha: demo.expert.alpha,
        seed: demo.expert.noise_seed,
        ground_truth: demo
            .ground_truth
            .iter()
            .map(|(o, t)| [[o.x, o.y, o.z], [t.x, t.y, t.z]])
            .collect(),
        image_w: w,
        image_h: h,
    }
}

pub fn write_demo(demo: &Demonstration, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for (i, frame) in demo.frames.iter().enumerate() {
        pgm::write(frame, &dir.join(frame_name(i)))?;
    }
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest_for(demo)).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

pub fn read_demo(dir: &Path) -> Result<StoredDemo> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::format(&path, e.to_string()))?;
    if manifest.ground_truth.len() != manifest.frames {
        return Err(HarnessError::format(&path, "ground_truth length differs from frames"));
    }
    let frames = (0..manifest.frames)
        .map(|i| {
            let f = pgm::read(&dir.join(frame_name(i)))?;
            if f.width() != manifest.image_w || f.height() != manifest.image_h {
                return Err(HarnessError::format(dir.join(frame_name(i)), "frame size differs from manifest"));
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StoredDemo { frames, manifest })
}

/// Demo directories under `root`, in name order.
pub fn list_demo_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| HarnessError::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("manifest.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
