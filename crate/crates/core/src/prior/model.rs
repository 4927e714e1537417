use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::map::OccupancyMap;
use crate::nn::{kaiming_uniform, lstm_step, uniform, Graph, LstmParams, ParamStore, Scalar, Tensor, Var};
use crate::sim::{MotionProfile, TrajectoryWindow};

/// Architecture hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of the map tensor and hidden size of the LSTM.
    pub c: usize,
    pub unet_depth: usize,
    /// Width of the first U-Net level; doubles per level.
    pub base_width: usize,
    pub lstm_layers: usize,
    /// Number of positions per odometry window.
    pub window_len: usize,
    pub crop_size: usize,
    /// Multiplier applied to window positions (in cells) before the LSTM.
    pub odom_input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c: 32,
            unet_depth: 3,
            base_width: 16,
            lstm_layers: 2,
            window_len: MotionProfile::Pedestrian.window_len(),
            crop_size: 64,
            odom_input_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn for_profile(profile: MotionProfile) -> Self {
        Self {
            window_len: profile.window_len(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.c == 0 {
            return bad("c must be at least 1".into());
        }
        if self.unet_depth == 0 || self.unet_depth > 6 {
            return bad(format!("unet_depth {} out of range 1..=6", self.unet_depth));
        }
        if self.base_width == 0 || self.lstm_layers == 0 {
            return bad("base_width and lstm_layers must be positive".into());
        }
        if self.window_len < 2 {
            return bad(format!("window_len {} must be at least 2", self.window_len));
        }
        let m = self.multiple();
        if self.crop_size == 0 || self.crop_size % m != 0 {
            return bad(format!("crop_size {} must be a positive multiple of {m}", self.crop_size));
        }
        if !(self.odom_input_scale.is_finite() && self.odom_input_scale > 0.0) {
            return bad("odom_input_scale must be positive".into());
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.unet_depth
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let d = self.unet_depth;
        let mut conv = |name: String, cout: usize, cin: usize, k: usize| {
            out.push((format!("{name}.w"), vec![cout, cin, k, k]));
            out.push((format!("{name}.b"), vec![cout]));
        };
        for l in 0..d {
            let cin = if l == 0 { 1 } else { self.width(l - 1) };
            conv(format!("enc{l}"), self.width(l), cin, 3);
        }
        conv("mid".into(), self.width(d - 1), self.width(d - 1), 3);
        let mut prev = self.width(d - 1);
        for l in (0..d).rev() {
            conv(format!("dec{l}.up"), self.width(l), prev, 3);
            conv(format!("dec{l}.fuse"), self.width(l), 2 * self.width(l), 3);
            prev = self.width(l);
        }
        conv("head".into(), self.c, self.width(0), 1);
        for k in 0..self.lstm_layers {
            let inp = if k == 0 { 2 } else { self.c };
            out.push((format!("lstm{k}.w_ih"), vec![4 * self.c, inp]));
            out.push((format!("lstm{k}.w_hh"), vec![4 * self.c, self.c]));
            out.push((format!("lstm{k}.b"), vec![4 * self.c]));
        }
        out
    }
}

/// Per-cell `c`-vectors over the whole map, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepMapTensor {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// `data[(ch * height + y) * width + x]`
    pub data: Vec<f32>,
}

impl DeepMapTensor {
    pub fn vector_at(&self, x: usize, y: usize) -> Vec<f32> {
        let plane = self.width * self.height;
        (0..self.channels)
            .map(|ch| self.data[ch * plane + y * self.width + x])
            .collect()
    }

    /// Score of one cell against a trajectory vector.
    pub fn score_at(&self, x: usize, y: usize, v: &[f32]) -> f64 {
        let plane = self.width * self.height;
        let base = y * self.width + x;
        v.iter()
            .enumerate()
            .map(|(ch, &w)| self.data[ch * plane + base] as f64 * w as f64)
            .sum()
    }
}

/// Per-cell dot product between the map tensor and a trajectory vector.
pub fn score(map: &DeepMapTensor, v: &[f32]) -> Result<Grid<f64>> {
    if v.len() != map.channels {
        return Err(Error::Shape(format!(
            "trajectory vector has {} channels, map tensor {}",
            v.len(),
            map.channels
        )));
    }
    let plane = map.width * map.height;
    let mut out = vec![0.0f64; plane];
    for (ch, &w) in v.iter().enumerate() {
        let w = w as f64;
        for (o, &m) in out.iter_mut().zip(&map.data[ch * plane..(ch + 1) * plane]) {
            *o += m as f64 * w;
        }
    }
    Ok(Grid::from_vec(map.width, map.height, out))
}

/// Consumes parameter handles in layout order.
struct Cursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Cursor<'_> {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }
}

fn conv_relu<F: Scalar>(g: &mut Graph<F>, cur: &mut Cursor, x: Var) -> Result<Var> {
    let (w, b) = (cur.take(), cur.take());
    let y = g.conv2d(x, w, b, 1, 1)?;
    Ok(g.relu(y))
}

/// U-Net forward on an `(1, 1, H, W)` free-space input; consumes the map
/// branch parameters from `cur`.
fn unet<F: Scalar>(cfg: &ModelConfig, g: &mut Graph<F>, cur: &mut Cursor, input: Var) -> Result<Var> {
    let mut skips = Vec::with_capacity(cfg.unet_depth);
    let mut x = input;
    for l in 0..cfg.unet_depth {
        if l > 0 {
            x = g.max_pool2(x)?;
        }
        x = conv_relu(g, cur, x)?;
        skips.push(x);
    }
    x = g.max_pool2(x)?;
    x = conv_relu(g, cur, x)?;
    for skip in skips.into_iter().rev() {
        x = g.upsample2(x)?;
        x = conv_relu(g, cur, x)?;
        x = g.concat(x, skip)?;
        x = conv_relu(g, cur, x)?;
    }
    let (w, b) = (cur.take(), cur.take());
    g.conv2d(x, w, b, 1, 0)
}

/// Stacked LSTM over `steps` (each `(B, 2)`), returning the last hidden
/// state of the final layer.
fn lstm<F: Scalar>(cfg: &ModelConfig, g: &mut Graph<F>, cur: &mut Cursor, steps: &[Var]) -> Result<Var> {
    let batch = g.value(steps[0]).shape()[0];
    let mut layers = Vec::with_capacity(cfg.lstm_layers);
    for _ in 0..cfg.lstm_layers {
        let (w_ih, w_hh, b) = (cur.take(), cur.take(), cur.take());
        layers.push(LstmParams::new(g, w_ih, w_hh, b)?);
    }
    let zeros = Tensor::zeros(&[batch, cfg.c]);
    let mut state: Vec<(Var, Var)> = (0..cfg.lstm_layers)
        .map(|_| (g.input(zeros.clone()), g.input(zeros.clone())))
        .collect();
    for &x in steps {
        let mut inp = x;
        for (p, st) in layers.iter().zip(state.iter_mut()) {
            let (h, c) = lstm_step(g, p, inp, st.0, st.1)?;
            *st = (h, c);
            inp = h;
        }
    }
    Ok(state.last().expect("at least one layer").0)
}

/// Free-space encoding of a map: 1 for free, 0 for occupied.
pub fn map_input<F: Scalar>(map: &OccupancyMap) -> Tensor<F> {
    let data = map.free_mask_f32().into_iter().map(|v| F::from_f64(v as f64)).collect();
    Tensor::new(&[1, 1, map.height(), map.width()], data).expect("mask matches map dims")
}

/// Per-step LSTM inputs `(B, 2)` for a batch of windows.
pub fn window_inputs<F: Scalar>(cfg: &ModelConfig, windows: &[&TrajectoryWindow], resolution: f64) -> Result<Vec<Tensor<F>>> {
    for w in windows {
        if w.len() != cfg.window_len {
            return Err(Error::Shape(format!(
                "window has {} positions, model expects {}",
                w.len(),
                cfg.window_len
            )));
        }
    }
    let k = cfg.odom_input_scale / resolution;
    (0..cfg.window_len)
        .map(|t| {
            let data = windows
                .iter()
                .flat_map(|w| {
                    let p = w.points[t];
                    [F::from_f64(p.x * k), F::from_f64(p.y * k)]
                })
                .collect();
            Tensor::new(&[windows.len(), 2], data)
        })
        .collect()
}

/// Both branches plus scoring, recorded into `g`. `params` must be bound in
/// layout order. Returns `(map_tensor, traj_vectors, scores)`.
pub fn forward<F: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<F>,
    params: &[Var],
    map: Tensor<F>,
    steps: Vec<Tensor<F>>,
) -> Result<(Var, Var, Var)> {
    let mut cur = Cursor { vars: params, next: 0 };
    let m = g.input(map);
    let mt = unet(cfg, g, &mut cur, m)?;
    let xs: Vec<Var> = steps.into_iter().map(|t| g.input(t)).collect();
    let v = lstm(cfg, g, &mut cur, &xs)?;
    let s = g.score(mt, v)?;
    Ok((mt, v, s))
}

/// The two-branch prior: map encoder, odometry encoder and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl PriorModel {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm_bound = 1.0 / (config.c as f64).sqrt();
        let mut params = ParamStore::new();
        for (name, shape) in config.param_layout() {
            let t = if name.starts_with("lstm") {
                uniform(&shape, lstm_bound, &mut rng)
            } else if shape.len() == 4 {
                kaiming_uniform(&shape, shape[1] * shape[2] * shape[3], &mut rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t)?;
        }
        Ok(Self { config, params })
    }

    /// All-zero weights.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.param_layout() {
            params.insert(name, Tensor::zeros(&shape))?;
        }
        Ok(Self { config, params })
    }

    /// Wraps loaded weights after checking them against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_layout(&Self::zeros(config.clone())?.params)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nn::save_weights(path, &self.params, Some(serde_json::to_value(&self.config)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (params, manifest) = crate::nn::load_weights(path)?;
        let config = match manifest.config {
            Some(v) => serde_json::from_value(v)?,
            None => return Err(Error::Weights("manifest has no model config".into())),
        };
        Self::from_params(config, params)
    }

    /// Same weights, different odometry window length. The recurrent branch
    /// is length-agnostic, so trained weights can be reused as-is.
    pub fn with_window_len(mut self, window_len: usize) -> Result<Self> {
        self.config.window_len = window_len;
        self.config.validate()?;
        Ok(self)
    }

    fn map_branch_len(&self) -> usize {
        2 * (3 * self.config.unet_depth + 2)
    }

    /// Runs the map branch over a whole map. Maps whose sides are not a
    /// multiple of `2^depth` are padded with occupied cells and the output
    /// cropped back.
    pub fn encode_map(&self, map: &OccupancyMap) -> Result<DeepMapTensor> {
        let m = self.config.multiple();
        let (w, h) = (map.width(), map.height());
        let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
        let mask = map.free_mask_f32();
        let mut padded = vec![0.0f32; pw * ph];
        for y in 0..h {
            padded[y * pw..y * pw + w].copy_from_slice(&mask[y * w..(y + 1) * w]);
        }
        let mut g = Graph::<f32>::new();
        let vars = self.params.bind_const(&mut g);
        let input = g.input(Tensor::new(&[1, 1, ph, pw], padded)?);
        let mut cur = Cursor {
            vars: &vars[..self.map_branch_len()],
            next: 0,
        };
        let out = unet(&self.config, &mut g, &mut cur, input)?;
        let full = g.value(out).data();
        let c = self.config.c;
        let mut data = Vec::with_capacity(c * w * h);
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * ph + y) * pw;
                data.extend_from_slice(&full[row..row + w]);
            }
        }
        Ok(DeepMapTensor {
            channels: c,
            width: w,
            height: h,
            data,
        })
    }

    /// Runs the odometry branch on windows of positions (meters, relative to
    /// the window start). Returns one `c`-vector per window.
    pub fn encode_odometry_batch(&self, windows: &[&TrajectoryWindow], resolution: f64) -> Result<Vec<Vec<f32>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let steps = window_inputs::<f32>(&self.config, windows, resolution)?;
        let mut g = Graph::<f32>::new();
        let vars = self.params.bind_const(&mut g);
        let mut cur = Cursor {
            vars: &vars[self.map_branch_len()..],
            next: 0,
        };
        let xs: Vec<Var> = steps.into_iter().map(|t| g.input(t)).collect();
        let v = lstm(&self.config, &mut g, &mut cur, &xs)?;
        Ok(g.value(v).data().chunks(self.config.c).map(|c| c.to_vec()).collect())
    }

    pub fn encode_odometry(&self, window: &TrajectoryWindow, resolution: f64) -> Result<Vec<f32>> {
        Ok(self.encode_odometry_batch(&[window], resolution)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn small() -> ModelConfig {
        ModelConfig {
            c: 4,
            unet_depth: 2,
            base_width: 2,
            lstm_layers: 2,
            window_len: 3,
            crop_size: 8,
            odom_input_scale: 0.1,
        }
    }

    #[test]
    fn layout_matches_default_architecture() {
        let cfg = ModelConfig::default();
        let layout = cfg.param_layout();
        let get = |n: &str| layout.iter().find(|(m, _)| m == n).unwrap().1.clone();
        assert_eq!(get("enc0.w"), vec![16, 1, 3, 3]);
        assert_eq!(get("enc2.w"), vec![64, 32, 3, 3]);
        assert_eq!(get("dec0.fuse.w"), vec![16, 32, 3, 3]);
        assert_eq!(get("head.w"), vec![32, 16, 1, 1]);
        assert_eq!(get("lstm1.w_ih"), vec![128, 32]);
        let m = PriorModel::zeros(cfg).unwrap();
        assert_eq!(m.map_branch_len(), layout.iter().take_while(|(n, _)| !n.starts_with("lstm")).count());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { crop_size: 60, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { c: 0, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { unet_depth: 0, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn encode_map_keeps_dims_for_odd_sizes() {
        let model = PriorModel::new(small(), 1).unwrap();
        let map = OccupancyMap::from_ascii(&["......#", ".#.....", ".......", "...#...", "......."], 0.25).unwrap();
        let t = model.encode_map(&map).unwrap();
        assert_eq!((t.channels, t.width, t.height), (4, 7, 5));
        assert!(t.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_window_length_is_error() {
        let model = PriorModel::new(small(), 1).unwrap();
        let w = TrajectoryWindow::from_absolute(&[Point2::ZERO, Point2::new(1.0, 0.0)]);
        assert!(model.encode_odometry(&w, 0.25).is_err());
    }
}
