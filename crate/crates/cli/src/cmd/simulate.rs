use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mapprior::baselines::PDR_STEP_M;
use mapprior::io::{odometry_to_csv, steps_to_csv, trajectory_to_csv, write_atomic};
use mapprior::sim::{corrupt_to_odometry, generate_trajectory, synthesize_steps, SimParams};
use mapprior::{MotionProfile, NoiseProfile};
use serde::{Deserialize, Serialize};

use super::sub_seed;
use crate::manifest::{load_config, RunManifest};
use crate::{mapsel, Common};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub profile: MotionProfile,
    pub n_trajs: usize,
    pub duration_s: usize,
    /// Odometry corruption; defaults to the profile's noise.
    pub noise: Option<NoiseProfile>,
    /// Step events for dead reckoning (pedestrian profile only).
    pub step_length_m: f64,
    pub step_heading_drift: f64,
    pub step_heading_noise: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            profile: MotionProfile::Pedestrian,
            n_trajs: 8,
            duration_s: 120,
            noise: None,
            step_length_m: PDR_STEP_M,
            step_heading_drift: 0.002,
            step_heading_noise: 0.05,
        }
    }
}

pub fn run(common: &Common, profile: Option<MotionProfile>, n_trajs: Option<usize>, duration: Option<usize>) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg: SimulateConfig = load_config(common.config.as_deref())?;
    if let Some(p) = profile {
        cfg.profile = p;
    }
    if let Some(n) = n_trajs {
        cfg.n_trajs = n;
    }
    if let Some(d) = duration {
        cfg.duration_s = d;
    }
    let noise = *cfg.noise.get_or_insert_with(|| NoiseProfile::for_profile(cfg.profile));
    if cfg.n_trajs == 0 || cfg.duration_s == 0 {
        bail!("n_trajs and duration must be positive");
    }
    noise.validate()?;
    let map = mapsel::load(&common.map)?;

    // everything is generated before the first write so failures leave no files
    let params = SimParams::new(cfg.profile, cfg.duration_s);
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for i in 0..cfg.n_trajs {
        let name = format!("traj_{i:03}");
        let idx = i as u64;
        let gt = generate_trajectory(&map, sub_seed(common.seed, 0, idx), &params)
            .with_context(|| format!("generating {name}"))?;
        let odom = corrupt_to_odometry(&gt, &noise, map.resolution(), sub_seed(common.seed, 1, idx));
        files.push((common.out.join(format!("{name}_gt.csv")), trajectory_to_csv(&gt)?));
        files.push((common.out.join(format!("{name}_odometry.csv")), odometry_to_csv(&odom)?));
        if cfg.profile == MotionProfile::Pedestrian {
            let steps = synthesize_steps(
                &gt,
                cfg.step_length_m,
                cfg.step_heading_drift,
                cfg.step_heading_noise,
                sub_seed(common.seed, 2, idx),
            );
            files.push((common.out.join(format!("{name}_steps.csv")), steps_to_csv(&steps)?));
        }
    }
    let generated = t0.elapsed().as_secs_f64();
    for (path, bytes) in &files {
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut manifest = RunManifest::new("simulate", common.seed, &common.map, &cfg)?;
    manifest.outputs = files.into_iter().map(|(p, _)| p).collect();
    manifest.timings.insert("generate_s".into(), generated);
    manifest.timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    manifest.write(&manifest_path(&common.out))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}
