//! Loss, optimizer, scheduler, and the train/evaluate loops.
//!
//! Targets are min-max normalized to [0, 1] with a scaler fitted on the
//! training split only; the reported metric is the negative log of the mean
//! Huber loss on normalized targets (higher is better). Training is
//! deterministic for a fixed seed: shuffling, batching, and all reductions
//! use fixed orders, and parallel batch gradients are accumulated chunk by
//! chunk in index order.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::Scalar;
use crate::error::{Error, Result};
use crate::invariants::{featurize, Frame};
use crate::network::{Model, OutputScaler, Standardizer, Workspace};

/// Huber loss: quadratic for |pred - target| <= delta, linear beyond.
pub fn huber<S: Scalar>(pred: S, target: S, delta: f64) -> S {
    let e = pred - target;
    let e = if e.value() < 0.0 { -e } else { e };
    if e.value() <= delta {
        e * e * e.lift(0.5)
    } else {
        (e - e.lift(delta / 2.0)) * e.lift(delta)
    }
}

/// d huber / d pred.
fn huber_grad(pred: f64, target: f64, delta: f64) -> f64 {
    let e = pred - target;
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}

/// Negative log of a mean loss; zero maps to the +inf sentinel.
pub fn nll(mean_loss: f64) -> f64 {
    debug_assert!(mean_loss >= 0.0);
    if mean_loss == 0.0 {
        f64::INFINITY
    } else {
        -mean_loss.ln()
    }
}

/// AdamW moment state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update: decoupled weight decay, then a bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        params[i] -= lr * weight_decay * params[i];
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// Reduce-on-plateau: halve the rate after `patience` evaluations without a
/// loss improvement of at least 1e-8, floored at `min_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_evals: usize,
}

const IMPROVEMENT_EPS: f64 = 1e-8;

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    /// Feed one evaluation loss; returns the (possibly reduced) rate.
    pub fn step(&mut self, test_loss: f64) -> f64 {
        if test_loss < self.best - IMPROVEMENT_EPS {
            self.best = test_loss;
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
            if self.bad_evals >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_evals = 0;
            }
        }
        self.lr
    }
}

/// Scheduler hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSpec {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauSpec {
    fn default() -> Self {
        PlateauSpec {
            factor: 0.5,
            patience: 100,
            min_lr: 1e-5,
        }
    }
}

/// Training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub scheduler: PlateauSpec,
    pub seed: u64,
    pub huber_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 4092,
            lr: 1e-3,
            weight_decay: 1e-9,
            scheduler: PlateauSpec::default(),
            seed: 0,
            huber_delta: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr) || self.weight_decay < 0.0 || !positive(self.huber_delta) {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_huber: f64,
    pub test_huber: f64,
    pub test_nll: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Per-epoch training history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// CSV export: epoch, train_huber, test_huber, test_nll, lr, seconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_huber,test_huber,test_nll,lr,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.epoch, r.train_huber, r.test_huber, r.test_nll, r.lr, r.seconds
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Feature vectors and normalized targets ready for the inner loop.
struct Prepared {
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn prepare(model: &Model, frames: &[Frame], what: &str) -> Result<Prepared> {
    let cfg = model.effective_config();
    let mut features = Vec::with_capacity(frames.len());
    let mut targets = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let feats = featurize(frame, &cfg, &model.metric)?;
        features.push(feats.values);
        let Some(e) = frame.energy() else {
            return Err(Error::InvalidConfig(format!(
                "{what} frame {i} has no energy label"
            )));
        };
        targets.push(e);
    }
    Ok(Prepared { features, targets })
}

/// Fixed chunk size for parallel batch gradients; results are reduced in
/// chunk order, so they do not depend on the number of threads.
const GRAD_CHUNK: usize = 256;

/// Train a model in place; returns the per-epoch history.
///
/// Fits the output scaler and input standardizer on the training split, then
/// runs seeded-shuffle mini-batch AdamW with per-epoch test evaluation
/// feeding the plateau scheduler.
pub fn train(
    model: &mut Model,
    train_frames: &[Frame],
    test_frames: &[Frame],
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train_frames.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }

    let raw_train = prepare(model, train_frames, "train")?;
    let raw_test = prepare(model, test_frames, "test")?;

    // Target scaler from the training split only.
    model.output_scaler = OutputScaler::fit(&raw_train.targets)?;
    let scaler = model.output_scaler;
    let train_targets: Vec<f64> = raw_train.targets.iter().map(|&y| scaler.normalize(y)).collect();
    let test_targets: Vec<f64> = raw_test.targets.iter().map(|&y| scaler.normalize(y)).collect();

    // Input standardizer: bank-input statistics for pooled models, then
    // per-dimension statistics of the head input.
    if model.perm_pool.is_some() {
        let mut count = 0usize;
        let mut mean = 0.0;
        for f in &raw_train.features {
            for &v in f {
                mean += v;
                count += 1;
            }
        }
        mean /= count.max(1) as f64;
        let mut var = 0.0;
        for f in &raw_train.features {
            for &v in f {
                var += (v - mean) * (v - mean);
            }
        }
        let std = (var / count.max(1) as f64).sqrt();
        if let Some(pool) = model.perm_pool.as_mut() {
            pool.input_mean = mean;
            pool.input_std = if std > 1e-12 { std } else { 1.0 };
        }
    }
    {
        let head_inputs: Vec<Vec<f64>> = raw_train
            .features
            .iter()
            .map(|f| model.head_input(f))
            .collect();
        model.standardizer = Standardizer::fit(&head_inputs);
    }

    let num_params = model.param_count();
    let mut params = model.flatten_params();
    let mut adam = AdamState::new(num_params);
    let mut scheduler = PlateauScheduler::new(
        config.lr,
        config.scheduler.factor,
        config.scheduler.patience,
        config.scheduler.min_lr,
    );

    let mut shuffle_rng = crate::rng::substream(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut history = History::default();
    let n_train = train_frames.len();

    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        let lr = scheduler.lr;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            // Parallel forward/backward over fixed-size chunks, reduced in
            // chunk order.
            let partials: Vec<(Vec<f64>, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut ws = Workspace::new(model);
                    let mut g = vec![0.0; num_params];
                    let mut loss_sum = 0.0;
                    for &i in chunk {
                        let pred = model.forward_cached(&raw_train.features[i], &mut ws);
                        let y = train_targets[i];
                        loss_sum += huber(pred, y, config.huber_delta);
                        let d_pred = huber_grad(pred, y, config.huber_delta);
                        model.backward(&mut ws, d_pred, &mut g);
                    }
                    (g, loss_sum)
                })
                .collect();

            let mut grads = vec![0.0; num_params];
            let mut batch_loss = 0.0;
            for (g, l) in &partials {
                for (acc, v) in grads.iter_mut().zip(g.iter()) {
                    *acc += v;
                }
                batch_loss += l;
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                *g *= inv;
            }
            batch_loss *= inv;

            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }

            adamw_step(&mut params, &grads, &mut adam, lr, config.weight_decay);
            model.assign_params(&params)?;
            epoch_loss_sum += batch_loss * batch.len() as f64;
        }
        let train_huber = epoch_loss_sum / n_train as f64;

        let (test_huber, test_nll) =
            evaluate_prepared(model, &raw_test.features, &test_targets, config.huber_delta);
        scheduler.step(test_huber);

        history.records.push(EpochRecord {
            epoch,
            train_huber,
            test_huber,
            test_nll,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    Ok(history)
}

fn evaluate_prepared(
    model: &Model,
    features: &[Vec<f64>],
    targets: &[f64],
    delta: f64,
) -> (f64, f64) {
    if features.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let losses: Vec<f64> = features
        .par_chunks(GRAD_CHUNK)
        .zip(targets.par_chunks(GRAD_CHUNK))
        .map(|(fs, ys)| {
            let mut ws = Workspace::new(model);
            let mut acc = 0.0;
            for (f, &y) in fs.iter().zip(ys.iter()) {
                let pred = model.forward_cached(f, &mut ws);
                acc += huber(pred, y, delta);
            }
            acc
        })
        .collect();
    let mean = losses.iter().sum::<f64>() / features.len() as f64;
    (mean, nll(mean))
}

/// Mean Huber loss and its negative log over a test set, in normalized
/// target space.
pub fn evaluate(model: &Model, test_frames: &[Frame], delta: f64) -> Result<(f64, f64)> {
    if test_frames.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    let raw = prepare(model, test_frames, "test")?;
    let targets: Vec<f64> = raw
        .targets
        .iter()
        .map(|&y| model.output_scaler.normalize(y))
        .collect();
    Ok(evaluate_prepared(model, &raw.features, &targets, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, DatasetKind, GenConfig, OscillatorySpec};
    use crate::invariants::{FeatureConfig, Metric};
    use crate::network::{Model, ModelKind, NetworkConfig};
    use approx::assert_relative_eq;

    #[test]
    fn huber_examples() {
        assert_eq!(huber(1.0, 1.0, 1.0), 0.0);
        assert_relative_eq!(huber(1.5, 1.0, 1.0), 0.125);
        assert_relative_eq!(huber(3.0, 1.0, 1.0), 1.5);
        assert_relative_eq!(huber(1.0, 3.0, 1.0), 1.5); // symmetric
    }

    #[test]
    fn huber_gradient_is_smooth_off_the_switch() {
        // Gradient check on the quadratic branch (error 0.5) and the linear
        // branch (error 2), both away from the delta kink.
        for (pred, target) in [(1.5, 1.0), (3.0, 1.0)] {
            let err = crate::diffengine::grad_check(
                |t, v| huber(v[0], t.constant(target), 1.0),
                &[pred],
                1e-6,
            )
            .unwrap();
            assert!(err <= 1e-7, "pred {pred}: {err}");
        }
    }

    #[test]
    fn nll_examples() {
        assert_relative_eq!(nll((-7.0f64).exp()), 7.0, max_relative = 1e-12);
        assert_eq!(nll(1.0), 0.0);
        assert!(nll(0.0).is_infinite());
    }

    #[test]
    fn adamw_zero_grads_zero_decay() {
        let mut params = vec![1.0, -2.0, 0.5];
        let mut state = AdamState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.0);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adamw_first_step_unit_update() {
        // param 1.0, grad 1.0, lr 0.1: bias-corrected first step moves by
        // lr/(1 + eps-scaled term); frozen from the hand-evaluated recurrence.
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        adamw_step(&mut params, &[1.0], &mut state, 0.1, 0.0);
        assert_relative_eq!(params[0], 0.9000000009999999, epsilon = 1e-15);
    }

    #[test]
    fn adamw_decoupled_decay_scales_exactly() {
        let mut params = vec![1.0, -0.5, 2.0];
        let expect: Vec<f64> = params.iter().map(|p| p * (1.0 - 0.1 * 0.01)).collect();
        let mut state = AdamState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.01);
        for (p, e) in params.iter().zip(expect.iter()) {
            assert_eq!(p.to_bits(), e.to_bits());
        }
    }

    #[test]
    fn plateau_scheduler_behavior() {
        // Strictly improving: unchanged.
        let mut s = PlateauScheduler::new(1e-3, 0.5, 20, 1e-5);
        for i in 0..50 {
            s.step(1.0 / (i + 1) as f64);
        }
        assert_eq!(s.lr, 1e-3);

        // 21 flat evaluations: halved exactly once.
        let mut s = PlateauScheduler::new(1e-3, 0.5, 20, 1e-5);
        for _ in 0..21 {
            s.step(1.0);
        }
        assert_relative_eq!(s.lr, 5e-4);

        // Floored at min_lr.
        let mut s = PlateauScheduler::new(2e-5, 0.5, 1, 1e-5);
        for _ in 0..50 {
            s.step(1.0);
        }
        assert_eq!(s.lr, 1e-5);
    }

    #[test]
    fn scheduler_rate_is_non_increasing() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 3, 1e-5);
        let mut rng = crate::rng::substream(3, "sched");
        let mut prev = s.lr;
        use rand::Rng;
        for _ in 0..200 {
            let lr = s.step(rng.random::<f64>());
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn toy_setup(seed: u64) -> (Model, Vec<crate::invariants::Frame>, Vec<crate::invariants::Frame>) {
        let config = GenConfig::new(3, 2, 60, seed);
        let frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::zero()).unwrap();
        let (train_frames, test_frames) =
            crate::datasets::split_frames(frames, crate::datasets::SplitProtocol::Fraction80, seed)
                .unwrap();
        let model = Model::build(
            3,
            2,
            FeatureConfig::default(),
            Metric::Euclidean,
            &NetworkConfig {
                kind: ModelKind::Kan,
                hidden: vec![8, 8],
                basis: 8,
                perm_pool: None,
            },
            seed,
        )
        .unwrap();
        (model, train_frames, test_frames)
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (mut model, train_frames, test_frames) = toy_setup(5);
        let before = model.flatten_params();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_frames, &test_frames, &config).unwrap();
        assert!(history.records.is_empty());
        assert_eq!(before, model.flatten_params());
    }

    #[test]
    fn toy_training_loss_is_monotone_early() {
        // Linear model, quadratic target (sum of squared norms), smooth loss,
        // fixed seed: the first 50 epochs descend monotonically.
        let mut rng = crate::rng::substream(17, "toy");
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut frames = Vec::new();
        for _ in 0..64 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let energy: f64 = rows.iter().flatten().map(|v| v * v).sum();
            frames.push(
                crate::invariants::Frame::from_rows(&rows)
                    .unwrap()
                    .with_energy(energy),
            );
        }
        let test_frames = frames.split_off(48);
        let mut model = Model::build(
            3,
            2,
            FeatureConfig::default(),
            Metric::Euclidean,
            &NetworkConfig {
                kind: ModelKind::Mlp,
                hidden: vec![],
                basis: 8,
                perm_pool: None,
            },
            17,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 50,
            batch_size: 64,
            seed: 17,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &frames, &test_frames, &config).unwrap();
        for w in history.records.windows(2) {
            assert!(
                w[1].train_huber <= w[0].train_huber * (1.0 + 1e-9),
                "epoch {}: {} -> {}",
                w[1].epoch,
                w[0].train_huber,
                w[1].train_huber
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (mut model, train_frames, test_frames) = toy_setup(23);
            let config = TrainConfig {
                epochs: 5,
                batch_size: 16,
                seed: 23,
                ..TrainConfig::default()
            };
            let history = train(&mut model, &train_frames, &test_frames, &config).unwrap();
            (model.flatten_params(), history)
        };
        let (pa, ha) = run();
        let (pb, hb) = run();
        for (a, b) in pa.iter().zip(pb.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (ra, rb) in ha.records.iter().zip(hb.records.iter()) {
            assert_eq!(ra.train_huber.to_bits(), rb.train_huber.to_bits());
            assert_eq!(ra.test_huber.to_bits(), rb.test_huber.to_bits());
            assert_eq!(ra.test_nll.to_bits(), rb.test_nll.to_bits());
            assert_eq!(ra.lr.to_bits(), rb.lr.to_bits());
        }
    }

    #[test]
    fn evaluate_consistency_and_sentinel() {
        let (mut model, train_frames, test_frames) = toy_setup(29);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 29,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &train_frames, &test_frames, &config).unwrap();
        let last = history.records.last().unwrap();
        let (mean_huber, test_nll) = evaluate(&model, &test_frames, config.huber_delta).unwrap();
        // Bit-exact consistency with the in-loop evaluation and with nll().
        assert_eq!(mean_huber.to_bits(), last.test_huber.to_bits());
        assert_eq!(test_nll.to_bits(), last.test_nll.to_bits());
        assert_eq!(test_nll.to_bits(), nll(mean_huber).to_bits());

        assert!(evaluate(&model, &[], 1.0).is_err());
    }

    #[test]
    fn perfect_predictions_give_infinite_nll() {
        // MLP with all-zero parameters except an output bias of 0.5 predicts
        // the degenerate-scaler normalization of identical targets exactly.
        let mut frames = Vec::new();
        for i in 0..10 {
            let f = crate::invariants::Frame::from_rows(&[
                vec![0.0, 0.0],
                vec![1.0 + 0.1 * i as f64, 0.0],
                vec![0.0, 2.0],
            ])
            .unwrap()
            .with_energy(3.25);
            frames.push(f);
        }
        let mut model = Model::build(
            3,
            2,
            FeatureConfig::default(),
            Metric::Euclidean,
            &NetworkConfig {
                kind: ModelKind::Mlp,
                hidden: vec![4],
                basis: 8,
                perm_pool: None,
            },
            31,
        )
        .unwrap();
        let mut params = vec![0.0; model.param_count()];
        let last = params.len() - 1; // output bias
        params[last] = 0.5;
        model.assign_params(&params).unwrap();

        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        train(&mut model, &frames, &frames, &config).unwrap(); // fit scaler only
        let (mean_huber, test_nll) = evaluate(&model, &frames, 1.0).unwrap();
        assert_eq!(mean_huber, 0.0);
        assert!(test_nll.is_infinite());
    }

    #[test]
    fn constant_predictor_nll_is_finite_positive() {
        let (mut model, train_frames, test_frames) = toy_setup(37);
        model.assign_params(&vec![0.0; model.param_count()]).unwrap();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        train(&mut model, &train_frames, &test_frames, &config).unwrap();
        // Constant 0 predictor on normalized targets in [0, 1]: the mean
        // Huber is at most 0.5, so the NLL is finite and at least ln 2.
        let (mean_huber, test_nll) = evaluate(&model, &test_frames, 1.0).unwrap();
        assert!(mean_huber > 0.0 && mean_huber <= 0.5);
        assert!(test_nll.is_finite() && test_nll >= std::f64::consts::LN_2);
    }

    #[test]
    fn history_csv_format() {
        let mut history = History::default();
        history.records.push(EpochRecord {
            epoch: 0,
            train_huber: 0.25,
            test_huber: 0.5,
            test_nll: nll(0.5),
            lr: 1e-3,
            seconds: 0.012345,
        });
        let csv = history.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_huber,test_huber,test_nll,lr,seconds"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,0.25,0.5,0.6931471805599453,0.001,"));
    }

    #[test]
    fn diverged_training_reports_location() {
        let (mut model, train_frames, test_frames) = toy_setup(41);
        // An absurd learning rate drives the parameters non-finite quickly.
        let config = TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e18,
            seed: 41,
            ..TrainConfig::default()
        };
        match train(&mut model, &train_frames, &test_frames, &config) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
