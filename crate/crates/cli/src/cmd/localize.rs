use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use mapprior::baselines::{build_graph, crf_grid_search, crf_match, pdr_at_times, CrfParams};
use mapprior::filter::{run_filter, FilterConfig, HeuristicPrior, LearnedPrior, Prior};
use mapprior::io::{read_odometry, read_steps, read_trajectory, write_trajectory};
use mapprior::prior::PriorModel;
use mapprior::sim::integrate_odometry;
use mapprior::{MotionProfile, OccupancyMap, OdometrySample, Pose, Trajectory};
use serde::{Deserialize, Serialize};

use super::{split_name, sub_seed};
use crate::manifest::{load_config, RunManifest};
use crate::{mapsel, Common, Method};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub method: Option<Method>,
    /// Particle filter settings; defaults to the profile's settings.
    pub filter: Option<FilterConfig>,
    pub crf: CrfParams,
    /// Validation odometry file (with a sibling ground truth) on which the
    /// CRF weights and edge length are grid-searched; replaces `crf`.
    pub crf_validation: Option<PathBuf>,
}

/// Input stream: `<name>_odometry.csv` and its siblings.
struct Stream {
    name: String,
    odom_path: PathBuf,
    sibling: Box<dyn Fn(&str) -> PathBuf>,
}

impl Stream {
    fn new(path: &Path) -> Result<Self> {
        let file = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| anyhow!("invalid odometry path {}", path.display()))?;
        let name = match split_name(file) {
            Some((base, "odometry")) => base.to_string(),
            _ => file.trim_end_matches(".csv").to_string(),
        };
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = name.clone();
        Ok(Self {
            name,
            odom_path: path.to_path_buf(),
            sibling: Box::new(move |suffix| dir.join(format!("{base}_{suffix}.csv"))),
        })
    }
}

fn parse_start(s: &str) -> Result<Pose> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| anyhow!("invalid --start {s:?}: {e}"))?;
    match v.as_slice() {
        [x, y, theta] => Ok(Pose::new(0.0, *x, *y, *theta)),
        _ => bail!("invalid --start {s:?}: expected x,y,theta"),
    }
}

pub fn run(
    common: &Common,
    method: Method,
    odom_files: &[PathBuf],
    weights: Option<&Path>,
    profile: Option<MotionProfile>,
    start: Option<&str>,
) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg: LocalizeConfig = load_config(common.config.as_deref())?;
    cfg.method = Some(method);
    let mut filter = cfg
        .filter
        .take()
        .unwrap_or_else(|| FilterConfig::for_mode(profile.unwrap_or(MotionProfile::Pedestrian)));
    if let Some(p) = profile {
        if p != filter.mode {
            filter = FilterConfig { mode: p, ..FilterConfig::for_mode(p) };
        }
    }
    filter.validate()?;
    cfg.filter = Some(filter.clone());
    let start_override = start.map(parse_start).transpose()?;
    let map = mapsel::load(&common.map)?;
    let streams = odom_files.iter().map(|p| Stream::new(p)).collect::<Result<Vec<_>>>()?;

    // method prerequisites are checked before any work is done
    let model = match method {
        Method::Ours => {
            let w = weights.ok_or(mapprior::Error::MissingWeights)?;
            let m = PriorModel::load(w).with_context(|| format!("loading weights {}", w.display()))?;
            Some(m.with_window_len(filter.window_len())?)
        }
        _ => None,
    };
    let t_enc = Instant::now();
    let tensor = model.as_ref().map(|m| m.encode_map(&map)).transpose()?;
    let encode_s = t_enc.elapsed().as_secs_f64();
    let mut validation_inputs = Vec::new();
    if let (Method::Crf, Some(val)) = (method, cfg.crf_validation.as_ref()) {
        let stream = Stream::new(val)?;
        let gt_path = (stream.sibling)("gt");
        let odom = read_odometry(val).with_context(|| format!("reading {}", val.display()))?;
        let gt = read_trajectory(&gt_path).with_context(|| format!("reading {}", gt_path.display()))?;
        let start = *gt.start().ok_or_else(|| anyhow!("empty ground truth {}", gt_path.display()))?;
        let (params, val_ate) = crf_grid_search(&map, &start, &odom, &gt)?;
        log::info!("crf grid search: {params:?} with validation ATE {val_ate:.3} m");
        cfg.crf = params;
        validation_inputs = vec![val.clone(), gt_path];
    }
    let graph = match method {
        Method::Crf => Some(build_graph(&map, cfg.crf.edge_length)?),
        _ => None,
    };

    let mut manifest = RunManifest::new("localize", common.seed, &common.map, &cfg)?;
    manifest.inputs.extend(validation_inputs);
    if let Some(w) = weights {
        manifest.inputs.push(w.to_path_buf());
    }
    if tensor.is_some() {
        manifest.timings.insert("encode_map_s".into(), encode_s);
    }
    let mut outputs = Vec::new();
    for (i, stream) in streams.iter().enumerate() {
        let odom = read_odometry(&stream.odom_path).with_context(|| format!("reading {}", stream.odom_path.display()))?;
        manifest.inputs.push(stream.odom_path.clone());
        let start = match start_override {
            Some(p) => Pose { t: odom.first().map_or(0.0, |o| o.t - 1.0 / filter.rate_hz), ..p },
            None => {
                let gt_path = (stream.sibling)("gt");
                let gt = read_trajectory(&gt_path)
                    .with_context(|| format!("no --start given and cannot read {}", gt_path.display()))?;
                manifest.inputs.push(gt_path);
                *gt.start().ok_or_else(|| anyhow!("empty ground truth for {}", stream.name))?
            }
        };
        let seed = sub_seed(common.seed, 0, i as u64);
        let (traj, steps) = match method {
            Method::Odom => (integrate_odometry(start, &odom), Vec::new()),
            Method::Ours => {
                let model = model.as_ref().expect("loaded above");
                let mut prior = LearnedPrior::with_tensor(model, &map, tensor.clone().expect("encoded above"));
                filtered(&odom, &start, &map, &mut prior, &filter, seed)?
            }
            Method::Heuristic => filtered(&odom, &start, &map, &mut HeuristicPrior::new(&map), &filter, seed)?,
            Method::Crf => {
                let t = Instant::now();
                let traj = crf_match(graph.as_ref().expect("built above"), &start, &odom, &cfg.crf)?;
                (traj, vec![t.elapsed().as_secs_f64() / odom.len().max(1) as f64; odom.len()])
            }
            Method::Pdr => {
                let steps_path = (stream.sibling)("steps");
                let steps = read_steps(&steps_path).with_context(|| format!("pdr needs step events {}", steps_path.display()))?;
                manifest.inputs.push(steps_path);
                let mut times = vec![start.t];
                times.extend(odom.iter().map(|o| o.t));
                (pdr_at_times(&start, &steps, &times)?, Vec::new())
            }
        };
        let out = common.out.join(format!("{}_{}.csv", stream.name, method.name()));
        write_trajectory(&out, &traj)?;
        if !steps.is_empty() {
            let mean = steps.iter().sum::<f64>() / steps.len() as f64;
            manifest.timings.insert(format!("{}_mean_step_s", stream.name), mean);
            manifest.step_timings.insert(stream.name.clone(), steps);
        }
        outputs.push(out);
    }
    manifest.outputs = outputs;
    manifest.timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    manifest.write(&common.out.join(format!("manifest_localize_{}.json", method.name())))
}

fn filtered(
    odom: &[OdometrySample],
    start: &Pose,
    map: &OccupancyMap,
    prior: &mut dyn Prior,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<(Trajectory, Vec<f64>)> {
    let run = run_filter(odom, start, map, Some(prior), cfg, seed)?;
    log::info!("filter: {} re-inits, {} degenerate steps", run.reinit_count, run.degenerate_count);
    Ok((run.trajectory, run.step_seconds))
}
