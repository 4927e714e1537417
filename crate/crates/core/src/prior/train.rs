use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{forward, map_input, window_inputs, PriorModel};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::Grid;
use crate::io::write_atomic;
use crate::map::{Cell, OccupancyMap};
use crate::nn::{adam_step, AdamState, Graph, Tensor};
use crate::sim::{NoiseProfile, Trajectory, TrajectoryWindow};
use crate::target::{balanced_loss_weights, make_target, TargetMap};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of each trajectory's windows (its final time block) held out.
    pub val_fraction: f64,
    /// Caps the number of optimizer steps per epoch.
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 0.01,
            val_fraction: 0.1,
            max_batches_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// One optimizer step's worth of data: a shared map crop and, per sample,
/// the noisy odometry window fed to the network and its target.
#[derive(Clone, Debug)]
pub struct Batch {
    pub crop: OccupancyMap,
    pub inputs: Vec<TrajectoryWindow>,
    pub targets: Vec<TargetMap>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug)]
struct GtWindow {
    window: TrajectoryWindow,
    end_cell: (usize, usize),
}

/// Ground-truth windows over one map, split into training and validation.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    map: OccupancyMap,
    windows: Vec<GtWindow>,
    train: Vec<usize>,
    val: Vec<usize>,
    noise: NoiseProfile,
    crop_size: usize,
    balanced: bool,
}

/// Pads `map` with occupied cells (top and right) so both sides are at least
/// `min_side`.
fn pad_to(map: &OccupancyMap, min_side: usize) -> Result<OccupancyMap> {
    let (w, h) = (map.width().max(min_side), map.height().max(min_side));
    if (w, h) == (map.width(), map.height()) {
        return Ok(map.clone());
    }
    let mut cells = Grid::filled(w, h, Cell::Occupied);
    for y in 0..map.height() {
        for x in 0..map.width() {
            *cells.get_mut(x, y) = map.cell(x, y);
        }
    }
    OccupancyMap::new(cells, map.resolution(), map.origin())
}

impl WindowDataset {
    pub fn new(
        map: &OccupancyMap,
        trajectories: &[Trajectory],
        window_len: usize,
        crop_size: usize,
        noise: NoiseProfile,
        val_fraction: f64,
    ) -> Result<Self> {
        noise.validate()?;
        let map = pad_to(map, crop_size)?;
        let mut windows = Vec::new();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for traj in trajectories {
            let pos = traj.positions();
            if pos.len() < window_len || window_len < 2 {
                continue;
            }
            let n = pos.len() - window_len + 1;
            let n_val = (n as f64 * val_fraction).floor() as usize;
            // drop windows that share positions with the held-out block
            let n_train = if n_val > 0 { n.saturating_sub(n_val + window_len - 1) } else { n };
            for s in 0..n {
                let end = pos[s + window_len - 1];
                let Some(end_cell) = map.world_to_cell_checked(end) else {
                    continue;
                };
                let idx = windows.len();
                if s >= n - n_val {
                    val.push(idx);
                } else if s < n_train {
                    train.push(idx);
                } else {
                    continue;
                }
                windows.push(GtWindow {
                    window: TrajectoryWindow::from_absolute(&pos[s..s + window_len]),
                    end_cell,
                });
            }
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            map,
            windows,
            train,
            val,
            noise,
            crop_size,
            balanced: false,
        })
    }

    /// Uses [`balanced_loss_weights`] instead of the plain inverse-area
    /// weights for every target.
    pub fn with_balanced_weights(mut self, balanced: bool) -> Self {
        self.balanced = balanced;
        self
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_val(&self) -> usize {
        self.val.len()
    }

    pub fn map(&self) -> &OccupancyMap {
        &self.map
    }

    fn in_central_half(&self, offset: (usize, usize), cell: (usize, usize)) -> bool {
        let (lo, hi) = (self.crop_size / 4, self.crop_size - self.crop_size / 4);
        let inside = |o: usize, c: usize| c >= o + lo && c < o + hi;
        inside(offset.0, cell.0) && inside(offset.1, cell.1)
    }

    /// Groups `indices` into batches that share one crop each. Every index is
    /// used as a batch member at least once; short batches are topped up with
    /// repeats of windows ending in the crop's central half.
    fn make_batches(
        &self,
        indices: &[usize],
        batch_size: usize,
        jitter: bool,
        augment: bool,
        rng: &mut ChaCha8Rng,
        limit: Option<usize>,
    ) -> Result<Vec<Batch>> {
        let res = self.map.resolution();
        let mut used = vec![false; self.windows.len()];
        let mut batches = Vec::new();
        for &anchor in indices {
            if used[anchor] || limit.is_some_and(|l| batches.len() >= l) {
                continue;
            }
            let (ax, ay) = self.windows[anchor].end_cell;
            let q = (self.crop_size / 4) as i64;
            let (jx, jy) = if jitter && q > 0 {
                (rng.gen_range(-q..q), rng.gen_range(-q..q))
            } else {
                (0, 0)
            };
            let center = ((ax as i64 + jx).max(0) as usize, (ay as i64 + jy).max(0) as usize);
            let crop = self.map.crop(center, self.crop_size)?;
            let candidates: Vec<usize> = indices
                .iter()
                .copied()
                .filter(|&i| self.in_central_half(crop.offset, self.windows[i].end_cell))
                .collect();
            let mut members = vec![anchor];
            used[anchor] = true;
            for &i in &candidates {
                if members.len() >= batch_size {
                    break;
                }
                if !used[i] {
                    used[i] = true;
                    members.push(i);
                }
            }
            let pool = if candidates.is_empty() { vec![anchor] } else { candidates };
            while members.len() < batch_size.min(indices.len()) {
                members.push(*pool.choose(rng).expect("nonempty pool"));
            }
            let mut batch = Batch {
                crop: crop.map,
                inputs: Vec::with_capacity(members.len()),
                targets: Vec::with_capacity(members.len()),
            };
            for i in members {
                let gt = &self.windows[i].window;
                let target = match make_target(&batch.crop, gt) {
                    Ok(mut t) => {
                        if self.balanced {
                            t.loss_weights = balanced_loss_weights(&t.feasible_mask);
                        }
                        t
                    }
                    Err(Error::KernelTooLarge { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let input = if augment {
                    augment_window(gt, &self.noise, res, rng)
                } else {
                    gt.clone()
                };
                batch.inputs.push(input);
                batch.targets.push(target);
            }
            if !batch.is_empty() {
                batches.push(batch);
            }
        }
        Ok(batches)
    }

    /// Shuffled, freshly augmented training batches.
    pub fn train_batches(&self, batch_size: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        let mut order = self.train.clone();
        order.shuffle(rng);
        self.make_batches(&order, batch_size, true, true, rng, limit)
    }

    /// Validation batches; identical for a given seed.
    pub fn val_batches(&self, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.make_batches(&self.val, batch_size, false, true, &mut rng, None)
    }
}

/// Applies the odometry noise model to one window: a multiplicative bias on
/// the whole window, optional heading drift, and additive per-step noise.
pub fn augment_window<R: Rng>(window: &TrajectoryWindow, noise: &NoiseProfile, resolution: f64, rng: &mut R) -> TrajectoryWindow {
    let bias = noise.forced_bias.unwrap_or_else(|| {
        if noise.velocity_bias_sigma > 0.0 {
            Normal::new(1.0, noise.velocity_bias_sigma).expect("valid sigma").sample(rng)
        } else {
            1.0
        }
    });
    let additive = noise.additive_sigma * resolution;
    let mut heading = 0.0;
    let steps: Vec<Point2> = window
        .steps()
        .into_iter()
        .map(|d| {
            if noise.heading_drift_sigma > 0.0 {
                heading += noise.heading_drift_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let mut s = (d * bias).rotated(heading);
            if additive > 0.0 {
                s.x += additive * rng.sample::<f64, _>(rand_distr::StandardNormal);
                s.y += additive * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            s
        })
        .collect();
    TrajectoryWindow::from_steps(&steps)
}

fn batch_tensors(batch: &Batch) -> (Tensor<f32>, Tensor<f32>) {
    let (w, h) = (batch.crop.width(), batch.crop.height());
    let shape = [batch.len(), h, w];
    let t = batch.targets.iter().flat_map(|t| t.values.data.iter().map(|&v| v as f32)).collect();
    let lw = batch.targets.iter().flat_map(|t| t.loss_weights.data.iter().map(|&v| v as f32)).collect();
    (
        Tensor::new(&shape, t).expect("targets match crop"),
        Tensor::new(&shape, lw).expect("weights match crop"),
    )
}

/// Weighted squared error of `model` on a batch, averaged over its samples,
/// plus gradients when `with_grads` is set.
fn evaluate(model: &PriorModel, batch: &Batch, with_grads: bool) -> Result<(f64, Option<Vec<Tensor<f32>>>)> {
    let mut g = Graph::<f32>::new();
    let vars = if with_grads {
        model.params.bind(&mut g)
    } else {
        model.params.bind_const(&mut g)
    };
    let windows: Vec<&TrajectoryWindow> = batch.inputs.iter().collect();
    let steps = window_inputs(&model.config, &windows, batch.crop.resolution())?;
    let (_, _, s) = forward(&model.config, &mut g, &vars, map_input(&batch.crop), steps)?;
    let (t, w) = batch_tensors(batch);
    let loss = g.weighted_sse(s, t, w)?;
    let value = g.value(loss).data()[0] as f64;
    if !with_grads {
        return Ok((value, None));
    }
    let mut grads = g.backward(loss)?;
    let out = vars
        .iter()
        .zip(model.params.tensors())
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, Some(out)))
}

/// Mean per-sample weighted squared error over `batches`.
pub fn batch_loss(model: &PriorModel, batches: &[Batch]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for b in batches {
        total += evaluate(model, b, false)?.0 * b.len() as f64;
        n += b.len();
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// One entry per epoch; epoch 0 holds the losses before training.
    pub losses: Vec<EpochLoss>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub initial_val_loss: Option<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for l in &self.losses {
            w.serialize(l).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Trains `model` in place with Adam and keeps the weights of the epoch with
/// the lowest validation loss (training loss when nothing is held out).
pub fn train(model: &mut PriorModel, data: &WindowDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    cfg.validate()?;
    let val = data.val_batches(cfg.batch_size, seed ^ 0x5eed_0f_7a1)?;
    let initial_val_loss = if val.is_empty() { None } else { Some(batch_loss(model, &val)?) };
    let mut adam = AdamState::new(model.params.tensors()).with_lr(cfg.lr);
    let epoch_rng = |epoch: usize| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64));
    // epoch 0 records the untrained losses
    let initial_train = data.train_batches(cfg.batch_size, cfg.max_batches_per_epoch, &mut epoch_rng(0))?;
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    losses.push(EpochLoss {
        epoch: 0,
        train_loss: batch_loss(model, &initial_train)?,
        val_loss: initial_val_loss,
    });
    let mut best = (f64::INFINITY, model.params.clone(), 0usize);
    for epoch in 1..=cfg.epochs {
        let batches = data.train_batches(cfg.batch_size, cfg.max_batches_per_epoch, &mut epoch_rng(epoch))?;
        let (mut total, mut n) = (0.0, 0usize);
        for batch in &batches {
            let (loss, grads) = evaluate(model, batch, true)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = grads.expect("requested gradients");
            adam_step(model.params.tensors_mut(), &grads, &mut adam)?;
            total += loss * batch.len() as f64;
            n += batch.len();
            debug!("epoch {epoch} step {} loss {loss:.5}", adam.step);
        }
        let train_loss = total / n.max(1) as f64;
        let val_loss = if val.is_empty() { None } else { Some(batch_loss(model, &val)?) };
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: v });
        }
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        let metric = val_loss.unwrap_or(train_loss);
        if metric < best.0 {
            best = (metric, model.params.clone(), epoch);
        }
        losses.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    model.params = best.1;
    Ok(TrainReport {
        losses,
        best_epoch: best.2,
        initial_val_loss,
    })
}
