use mapprior::nn::{gradcheck, Graph, Tensor};
use mapprior::prior::*;
use mapprior::sim::{generate_trajectory, SimParams};
use mapprior::target::make_target;
use mapprior::{maps, MotionProfile, NoiseProfile, OccupancyMap, Point2, TrajectoryWindow};
use proptest::prelude::*;

fn small_config() -> ModelConfig {
    ModelConfig {
        c: 6,
        unet_depth: 2,
        base_width: 4,
        lstm_layers: 2,
        window_len: 5,
        crop_size: 16,
        odom_input_scale: 0.1,
    }
}

fn straight(n: usize, dx: f64, dy: f64) -> TrajectoryWindow {
    let pts: Vec<Point2> = (0..n).map(|i| Point2::new(i as f64 * dx, i as f64 * dy)).collect();
    TrajectoryWindow::from_absolute(&pts)
}

#[test]
fn map_tensor_has_map_dims_and_default_channels() {
    let model = PriorModel::new(ModelConfig::default(), 0).unwrap();
    for (w, h) in [(16.0, 8.0), (5.25, 3.0)] {
        let map = maps::open(w, h, 0.25);
        let t = model.encode_map(&map).unwrap();
        assert_eq!((t.width, t.height, t.channels), (map.width(), map.height(), 32));
        assert_eq!(t.data.len(), 32 * map.width() * map.height());
    }
    let v = model.encode_odometry(&straight(5, 1.0, 0.0), 0.25).unwrap();
    assert_eq!(v.len(), 32);
}

#[test]
fn zero_weights_give_head_bias_and_zero_vector() {
    let cfg = small_config();
    let mut model = PriorModel::zeros(cfg.clone()).unwrap();
    let map = maps::corridor(0.25);
    let t = model.encode_map(&map).unwrap();
    assert!(t.data.iter().all(|&v| v == 0.0));
    let bias: Vec<f32> = (0..cfg.c).map(|k| k as f32 * 0.5 - 1.0).collect();
    model.params.get_mut("head.b").unwrap().data_mut().copy_from_slice(&bias);
    let t = model.encode_map(&map).unwrap();
    for k in 0..cfg.c {
        let plane = map.width() * map.height();
        assert!(t.data[k * plane..(k + 1) * plane].iter().all(|&v| v == bias[k]));
    }
    let v = model.encode_odometry(&straight(5, 0.7, 0.2), 0.25).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));
}

#[test]
fn caching_the_map_tensor_is_exact() {
    let model = PriorModel::new(small_config(), 4).unwrap();
    let map = maps::corridor_rooms(0.25);
    let a = model.encode_map(&map).unwrap();
    let b = model.encode_map(&map).unwrap();
    assert_eq!(a, b);
    let v = model.encode_odometry(&straight(5, 1.0, 0.3), 0.25).unwrap();
    let w = model.encode_odometry(&straight(5, 1.0, 0.3), 0.25).unwrap();
    assert_eq!(v, w);
    assert_eq!(score(&a, &v).unwrap(), score(&b, &w).unwrap());
}

#[test]
fn batched_and_single_odometry_encoding_agree() {
    let model = PriorModel::new(small_config(), 2).unwrap();
    let ws = [straight(5, 1.0, 0.0), straight(5, 0.0, -0.8), straight(5, 0.4, 0.4)];
    let refs: Vec<&TrajectoryWindow> = ws.iter().collect();
    let batch = model.encode_odometry_batch(&refs, 0.25).unwrap();
    for (w, b) in ws.iter().zip(&batch) {
        let single = model.encode_odometry(w, 0.25).unwrap();
        for (x, y) in single.iter().zip(b) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn wrong_window_length_or_channels_is_an_error() {
    let model = PriorModel::new(small_config(), 0).unwrap();
    assert!(model.encode_odometry(&straight(4, 1.0, 0.0), 0.25).is_err());
    let t = model.encode_map(&maps::open(4.0, 4.0, 0.25)).unwrap();
    assert!(score(&t, &[0.0; 5]).is_err());
    let longer = model.clone().with_window_len(20).unwrap();
    assert_eq!(longer.encode_odometry(&straight(20, 0.2, 0.0), 0.25).unwrap().len(), 6);
}

fn tensor_from(channels: usize, w: usize, h: usize, data: Vec<f32>) -> DeepMapTensor {
    DeepMapTensor {
        channels,
        width: w,
        height: h,
        data,
    }
}

#[test]
fn score_basis_projection_and_zero_vector() {
    let (c, w, h) = (3, 4, 2);
    let data: Vec<f32> = (0..c * w * h).map(|i| i as f32 * 0.25 - 2.0).collect();
    let t = tensor_from(c, w, h, data.clone());
    for k in 0..c {
        let mut e = vec![0.0; c];
        e[k] = 1.0;
        let s = score(&t, &e).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(*s.get(x, y), data[k * w * h + y * w + x] as f64);
            }
        }
    }
    let s = score(&t, &[0.0; 3]).unwrap();
    assert!(s.data.iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn score_is_bilinear(
        data in prop::collection::vec(-4.0f32..4.0, 24),
        u in prop::collection::vec(-2.0f32..2.0, 3),
        v in prop::collection::vec(-2.0f32..2.0, 3),
        alpha in -3.0f32..3.0,
    ) {
        let t = tensor_from(3, 4, 2, data);
        let su = score(&t, &u).unwrap();
        let sv = score(&t, &v).unwrap();
        let sum: Vec<f32> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let suv = score(&t, &sum).unwrap();
        let scaled: Vec<f32> = u.iter().map(|a| a * alpha).collect();
        let sa = score(&t, &scaled).unwrap();
        for i in 0..8 {
            prop_assert!((suv.data[i] - su.data[i] - sv.data[i]).abs() < 1e-4);
            prop_assert!((sa.data[i] - alpha as f64 * su.data[i]).abs() < 1e-4);
        }
    }
}

#[test]
fn full_model_gradcheck_on_miniature() {
    let cfg = ModelConfig {
        c: 3,
        unet_depth: 2,
        base_width: 2,
        lstm_layers: 2,
        window_len: 3,
        crop_size: 8,
        odom_input_scale: 0.1,
    };
    let model = PriorModel::new(cfg.clone(), 11).unwrap();
    let mut params: Vec<Tensor<f64>> = model.params.tensors().map(|t| t.cast()).collect();
    // small nonzero biases keep ReLUs away from their kink
    for (p, (name, _)) in params.iter_mut().zip(cfg.param_layout()) {
        if name.ends_with(".b") {
            for (i, v) in p.data_mut().iter_mut().enumerate() {
                *v = 0.05 + 0.01 * (i % 5) as f64;
            }
        }
    }
    let map = OccupancyMap::from_ascii(
        &["########", "#......#", "#..##..#", "#......#", "###..###", "#......#", "#......#", "########"],
        0.25,
    )
    .unwrap();
    let windows = [straight(3, 0.25, 0.0), straight(3, 0.0, 0.25)];
    let refs: Vec<&TrajectoryWindow> = windows.iter().collect();
    let targets: Vec<f64> = windows
        .iter()
        .flat_map(|w| make_target(&map, w).unwrap().values.data)
        .collect();
    let weights: Vec<f64> = (0..targets.len()).map(|i| 0.5 + (i % 3) as f64 * 0.25).collect();
    let errs = gradcheck::check(&params, 1e-6, |g: &mut Graph<f64>, vars| {
        let steps = window_inputs::<f64>(&cfg, &refs, 0.25)?;
        let (_, _, s) = forward(&cfg, g, vars, map_input(&map), steps)?;
        let t = Tensor::from_f64(&[2, 8, 8], &targets)?;
        let w = Tensor::from_f64(&[2, 8, 8], &weights)?;
        g.weighted_sse(s, t, w)
    })
    .unwrap();
    for (e, (name, _)) in errs.iter().zip(cfg.param_layout()) {
        assert!(*e < 1e-4, "{name}: relative error {e}");
    }
}

fn corridor_dataset(cfg: &ModelConfig, n_traj: u64, noise: NoiseProfile, val: f64) -> WindowDataset {
    let map = maps::corridor(0.25);
    let trajs: Vec<_> = (0..n_traj)
        .map(|s| generate_trajectory(&map, 40 + s, &SimParams::new(MotionProfile::Pedestrian, 80)).unwrap())
        .collect();
    WindowDataset::new(&map, &trajs, cfg.window_len, cfg.crop_size, noise, val).unwrap()
}

#[test]
fn toy_set_overfits() {
    let cfg = small_config();
    let map = maps::corridor(0.25);
    let traj = generate_trajectory(&map, 3, &SimParams::new(MotionProfile::Pedestrian, 13)).unwrap();
    let data = WindowDataset::new(&map, &[traj], cfg.window_len, cfg.crop_size, NoiseProfile::zero(), 0.0).unwrap();
    assert_eq!(data.n_train(), 10);
    let mut model = PriorModel::new(cfg, 5).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 10,
        ..Default::default()
    };
    let rep = train(&mut model, &data, &tc, 1).unwrap();
    let first = rep.losses[1].train_loss;
    let best = rep.losses[1..].iter().map(|l| l.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best <= 0.5 * first, "loss {first} -> {best}");
}

#[test]
fn training_is_deterministic_and_beats_untrained() {
    let cfg = small_config();
    let data = corridor_dataset(&cfg, 3, NoiseProfile::pedestrian(), 0.2);
    let tc = TrainConfig {
        epochs: 4,
        batch_size: 8,
        max_batches_per_epoch: Some(6),
        ..Default::default()
    };
    let run = || {
        let mut m = PriorModel::new(cfg.clone(), 3).unwrap();
        let rep = train(&mut m, &data, &tc, 9).unwrap();
        (m, rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.params, b.params);
    assert_eq!(ra.to_csv().unwrap(), rb.to_csv().unwrap());
    let val = data.val_batches(8, 0).unwrap();
    let untrained = batch_loss(&PriorModel::new(cfg.clone(), 3).unwrap(), &val).unwrap();
    assert!(batch_loss(&a, &val).unwrap() < untrained);
    let csv = String::from_utf8(ra.to_csv().unwrap()).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn empty_dataset_and_bad_config_are_errors() {
    let map = maps::corridor(0.25);
    assert!(WindowDataset::new(&map, &[], 5, 16, NoiseProfile::zero(), 0.1).is_err());
    let mut cfg = small_config();
    cfg.crop_size = 10;
    assert!(PriorModel::new(cfg, 0).is_err());
    let data = corridor_dataset(&small_config(), 1, NoiseProfile::zero(), 0.0);
    let mut m = PriorModel::new(small_config(), 0).unwrap();
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(train(&mut m, &data, &bad, 0).is_err());
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let model = PriorModel::new(small_config(), 8).unwrap();
    model.save(&path).unwrap();
    let back = PriorModel::load(&path).unwrap();
    assert_eq!(back, model);
}

// With the plain inverse-area weights a single long corridor is one feasible
// component whose cells weigh ~1/550 of an infeasible cell, so the trained
// model only fits the partially feasible fringe and its argmax lands in the
// end wall. The balanced weighting keeps the inverse-area ratios but lets the
// feasible region count.
#[test]
fn trained_corridor_argmax_is_feasible() {
    let cfg = ModelConfig {
        crop_size: 32,
        ..small_config()
    };
    let data = corridor_dataset(&cfg, 4, NoiseProfile::zero(), 0.1).with_balanced_weights(true);
    let mut model = PriorModel::new(cfg.clone(), 1).unwrap();
    let tc = TrainConfig {
        epochs: 100,
        batch_size: 16,
        lr: 0.001,
        max_batches_per_epoch: Some(10),
        ..Default::default()
    };
    train(&mut model, &data, &tc, 2).unwrap();
    let map = maps::corridor(0.25);
    let tensor = model.encode_map(&map).unwrap();
    for w in [straight(5, 1.2, 0.0), straight(5, -1.2, 0.0)] {
        let heat = score(&tensor, &model.encode_odometry(&w, 0.25).unwrap()).unwrap();
        let feasible = make_target(&map, &w).unwrap().feasible_mask;
        let best = (0..heat.data.len())
            .max_by(|&a, &b| heat.data[a].total_cmp(&heat.data[b]))
            .unwrap();
        assert!(feasible.data[best], "argmax cell {best} is infeasible");
    }
}
