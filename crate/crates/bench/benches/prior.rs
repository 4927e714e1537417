use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mapprior::filter::{run_filter, FilterConfig, HeuristicPrior, LearnedPrior};
use mapprior::nn::{Graph, Tensor};
use mapprior::prior::{score, ModelConfig, PriorModel};
use mapprior::sim::{corrupt_to_odometry, generate_trajectory, SimParams};
use mapprior::{maps, MotionProfile, NoiseProfile, TrajectoryWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = rand_tensor(&[8, 16, 64, 64], &mut rng);
    let w = rand_tensor(&[16, 16, 3, 3], &mut rng);
    let b = rand_tensor(&[16], &mut rng);
    c.bench_function("conv2d 8x16x64x64 3x3 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let (xv, wv, bv) = (g.input(x.clone()), g.param(w.clone()), g.param(b.clone()));
            let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
            let s = g.sum(y);
            black_box(g.backward(s).unwrap());
        })
    });
}

fn encode_and_score(c: &mut Criterion) {
    let map = maps::open(64.0, 64.0, 0.25);
    let model = PriorModel::new(ModelConfig::default(), 0).unwrap();
    c.bench_function("encode_map 256x256", |bench| bench.iter(|| black_box(model.encode_map(&map).unwrap())));

    let tensor = model.encode_map(&map).unwrap();
    let window = TrajectoryWindow::from_absolute(&mapprior::sim::odometry_positions(
        &mapprior::sim::true_odometry(
            &generate_trajectory(&map, 1, &SimParams::new(MotionProfile::Pedestrian, 4)).unwrap(),
        ),
    ));
    c.bench_function("heatmap score 256x256 (cached tensor)", |bench| {
        bench.iter(|| {
            let v = model.encode_odometry(&window, map.resolution()).unwrap();
            black_box(score(&tensor, &v).unwrap())
        })
    });
}

fn filter(c: &mut Criterion) {
    let map = maps::corridor_rooms(0.25);
    let gt = generate_trajectory(&map, 2, &SimParams::new(MotionProfile::Pedestrian, 30)).unwrap();
    let odom = corrupt_to_odometry(&gt, &NoiseProfile::pedestrian(), map.resolution(), 3);
    let cfg = FilterConfig::for_mode(MotionProfile::Pedestrian);
    let model = PriorModel::new(ModelConfig::default(), 0).unwrap();
    let tensor = model.encode_map(&map).unwrap();
    let mut group = c.benchmark_group("filter 30 steps, 1000 particles");
    group.sample_size(10);
    group.bench_function("learned prior", |bench| {
        bench.iter(|| {
            let mut prior = LearnedPrior::with_tensor(&model, &map, tensor.clone());
            black_box(run_filter(&odom, &gt.poses[0], &map, Some(&mut prior), &cfg, 0).unwrap())
        })
    });
    group.bench_function("heuristic prior", |bench| {
        bench.iter(|| {
            let mut prior = HeuristicPrior::new(&map);
            black_box(run_filter(&odom, &gt.poses[0], &map, Some(&mut prior), &cfg, 0).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, conv, encode_and_score, filter);
criterion_main!(benches);
