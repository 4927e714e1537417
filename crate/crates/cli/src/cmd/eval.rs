use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mapprior::eval::{cdf_points, cdf_to_csv, trajectory_error, MethodMetrics};
use mapprior::io::{read_trajectory, write_atomic};
use serde::{Deserialize, Serialize};

use super::split_name;
use crate::manifest::RunManifest;
use crate::Common;

/// Files in `est` that are not trajectories.
const NON_TRAJECTORY_SUFFIXES: [&str; 2] = ["odometry", "steps"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub map: String,
    pub n_trajectories: usize,
    pub mean_ate_m: f64,
    pub mean_ee_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub per_trajectory: Vec<MethodMetrics>,
    pub per_method: Vec<MethodSummary>,
}

struct Pair {
    name: String,
    method: String,
    est: PathBuf,
    gt: PathBuf,
}

fn csv_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry.with_context(|| format!("reading {}", dir.display()))?;
        if let Some(n) = entry.file_name().to_str() {
            if n.ends_with(".csv") && !n.starts_with('.') {
                names.push(n.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn pairs(est: &Path, gt: &Path) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    let mut unmatched = Vec::new();
    for file in csv_names(est)? {
        let Some((name, method)) = split_name(&file) else { continue };
        if NON_TRAJECTORY_SUFFIXES.contains(&method) {
            continue;
        }
        let gt_path = gt.join(format!("{name}_gt.csv"));
        if gt_path.is_file() {
            out.push(Pair {
                name: name.to_string(),
                method: method.to_string(),
                est: est.join(&file),
                gt: gt_path,
            });
        } else {
            unmatched.push(file);
        }
    }
    if !unmatched.is_empty() {
        bail!("no ground truth in {} for: {}", gt.display(), unmatched.join(", "));
    }
    if out.is_empty() {
        bail!("no estimated trajectories in {}", est.display());
    }
    Ok(out)
}

/// Trailing number of a trajectory name (`traj_007` → 7), else its position.
fn trajectory_id(name: &str, fallback: usize) -> u64 {
    name.rsplit('_').next().and_then(|s| s.parse().ok()).unwrap_or(fallback as u64)
}

pub fn run(common: &Common, est: &Path, gt: &Path) -> Result<()> {
    let t0 = Instant::now();
    let pairs = pairs(est, gt)?;
    let mut rows = Vec::with_capacity(pairs.len());
    let mut errors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let e = read_trajectory(&p.est).with_context(|| format!("reading {}", p.est.display()))?;
        let g = read_trajectory(&p.gt).with_context(|| format!("reading {}", p.gt.display()))?;
        let err = trajectory_error(&e, &g).with_context(|| format!("scoring {}", p.est.display()))?;
        rows.push(MethodMetrics {
            method: p.method.clone(),
            map: common.map.clone(),
            seed: trajectory_id(&p.name, i),
            ate_m: err.ate,
            ee_m: err.ee,
            n_steps: err.per_step_errors.len(),
        });
        errors.entry(p.method.clone()).or_default().extend(err.per_step_errors);
    }
    rows.sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
    let per_method = summarize(&rows);
    let report = EvalReport { per_trajectory: rows, per_method };

    let mut outputs = Vec::new();
    let metrics = common.out.join("metrics.json");
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&metrics, &bytes)?;
    outputs.push(metrics);
    for (method, errs) in &errors {
        let path = common.out.join(format!("cdf_{method}.csv"));
        write_atomic(&path, &cdf_to_csv(&cdf_points(errs))?)?;
        outputs.push(path);
    }
    let mut manifest = RunManifest::new("eval", common.seed, &common.map, &serde_json::json!({}))?;
    manifest.inputs = pairs.iter().flat_map(|p| [p.est.clone(), p.gt.clone()]).collect();
    manifest.outputs = outputs;
    manifest.timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    manifest.write(&common.out.join("manifest_eval.json"))
}

/// Mean ATE and EE per (method, map).
pub fn summarize(rows: &[MethodMetrics]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&MethodMetrics>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.map.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, map), rs)| {
            let n = rs.len() as f64;
            MethodSummary {
                method,
                map,
                n_trajectories: rs.len(),
                mean_ate_m: rs.iter().map(|r| r.ate_m).sum::<f64>() / n,
                mean_ee_m: rs.iter().map(|r| r.ee_m).sum::<f64>() / n,
            }
        })
        .collect()
}
