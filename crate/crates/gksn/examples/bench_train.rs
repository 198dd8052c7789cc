//! Quick throughput probe: generation and a few training epochs at the
//! production problem size, to extrapolate full-run wall time.

use std::time::Instant;

use gksn::datasets::{generate, split_frames, DatasetKind, GenConfig, OscillatorySpec, SplitProtocol};
use gksn::invariants::{FeatureConfig, Metric};
use gksn::network::{Model, NetworkConfig};
use gksn::training::{train, TrainConfig};

fn main() {
    let threads: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let samples: usize = std::env::args()
        .nth(2)
        .and_then(|v| v.parse().ok())
        .unwrap_or(2000);
    let epochs: usize = std::env::args()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .unwrap_or(20);
    let seed: u64 = std::env::args()
        .nth(4)
        .and_then(|v| v.parse().ok())
        .unwrap_or(42);
    let run_seed: u64 = std::env::args()
        .nth(5)
        .and_then(|v| v.parse().ok())
        .unwrap_or(seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(|| {
        let t0 = Instant::now();
        let config = GenConfig::new(4, 3, samples, seed);
        let frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::default()).unwrap();
        println!(
            "gen: {} frames in {:.2}s ({:.1} frames/s)",
            frames.len(),
            t0.elapsed().as_secs_f64(),
            frames.len() as f64 / t0.elapsed().as_secs_f64()
        );

        let mut energies: Vec<f64> = frames.iter().filter_map(|f| f.energy()).collect();
        energies.sort_by(f64::total_cmp);
        println!(
            "energy quantiles: min {:.4e} p1 {:.4e} p50 {:.4e} p99 {:.4e} max {:.4e}",
            energies[0],
            energies[energies.len() / 100],
            energies[energies.len() / 2],
            energies[energies.len() * 99 / 100],
            energies[energies.len() - 1]
        );

        let (train_frames, test_frames) =
            split_frames(frames, SplitProtocol::Fraction80, seed).unwrap();
        let mut model = Model::build(
            4,
            3,
            FeatureConfig::default(),
            Metric::Euclidean,
            &NetworkConfig::kan(),
            run_seed,
        )
        .unwrap();
        println!("model params: {}", model.param_count());

        let t1 = Instant::now();
        let cfg = TrainConfig {
            epochs,
            seed: run_seed,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_frames, &test_frames, &cfg).unwrap();
        let dt = t1.elapsed().as_secs_f64();
        for r in history.records.iter().step_by(25.max(epochs / 40)) {
            println!(
                "  epoch {:4}  train {:.4e}  test {:.4e}  nll {:7.3}  lr {:.2e}",
                r.epoch, r.train_huber, r.test_huber, r.test_nll, r.lr
            );
        }
        let last = history.records.last().unwrap();
        println!(
            "train: {} epochs in {:.2}s ({:.3} s/epoch); last test huber {:.3e}, NLL {:.3}",
            epochs,
            dt,
            dt / epochs as f64,
            last.test_huber,
            last.test_nll
        );
    });
}
