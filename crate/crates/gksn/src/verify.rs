//! Numerical verification of the identities and symmetry properties the
//! architecture is built on.
//!
//! Each check produces a [`VerifyReport`] with a residual, a pinned
//! tolerance, and the seed and dimensions needed to reproduce it. The suite
//! also runs negative controls (a rank-deficient basis, a deliberately
//! symmetry-breaking feature map) that must FAIL; a suite run is healthy only
//! when every expected-pass check passes and every expected-fail check fails.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariants::{featurize, gram, FeatureConfig, Frame, Metric};
use crate::network::{forces, Model, NetworkConfig, DEFAULT_POOL_WIDTH};

/// Problem dimensions of a check, for reproduction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

/// Outcome of one verification check; `pass` holds exactly when
/// `residual <= tolerance`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
    pub dims: Dims,
    /// Negative controls set this; the suite expects them to fail.
    pub expect_fail: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VerifyReport {
    fn new(check: &str, residual: f64, tolerance: f64, seed: u64, dims: Dims) -> Self {
        VerifyReport {
            check: check.to_string(),
            residual,
            tolerance,
            pass: residual <= tolerance,
            seed,
            dims,
            expect_fail: false,
            note: None,
        }
    }

    fn expecting_failure(mut self) -> Self {
        self.expect_fail = true;
        self
    }

    /// A report is healthy when it passed, or failed by design.
    pub fn ok(&self) -> bool {
        self.pass != self.expect_fail
    }
}

/// True when every report is healthy (negative controls failed, all else
/// passed).
pub fn suite_ok(reports: &[VerifyReport]) -> bool {
    reports.iter().all(VerifyReport::ok)
}

pub fn reports_to_json(reports: &[VerifyReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

fn randn(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn orthogonal_from_rng(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = randn(n, n, rng);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the distribution is Haar and deterministic.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Seeded Haar-distributed orthogonal matrix; QᵀQ = I within 1e-12.
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = crate::rng::substream(seed, "orthogonal");
    orthogonal_from_rng(n, &mut rng)
}

fn boost_from_rng(n: usize, rapidity: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::identity(1, 1);
    }
    let mut b = DMatrix::identity(n, n);
    b[(0, 0)] = rapidity.cosh();
    b[(0, 1)] = rapidity.sinh();
    b[(1, 0)] = rapidity.sinh();
    b[(1, 1)] = rapidity.cosh();

    let embed = |q: &DMatrix<f64>| {
        let mut e = DMatrix::identity(n, n);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                e[(i + 1, j + 1)] = q[(i, j)];
            }
        }
        e
    };
    let r1 = embed(&orthogonal_from_rng(n - 1, rng));
    let r2 = embed(&orthogonal_from_rng(n - 1, rng));
    r1 * b * r2
}

/// Seeded proper Lorentz transformation for the signature diag(1,-1,...,-1):
/// a boost of the given rapidity along a random spatial axis composed with
/// random spatial rotations. Preserves the Minkowski form within 1e-10.
pub fn random_boost(n: usize, rapidity: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = crate::rng::substream(seed, "boost");
    boost_from_rng(n, rapidity, &mut rng)
}

fn rel_fro(diff: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    diff.norm() / (reference.norm() + 1e-300)
}

/// Orthogonality of [`random_orthogonal`]: max of ‖QᵀQ - I‖_F and
/// ||det Q| - 1|.
pub fn verify_orthogonality(n: usize, seed: u64) -> VerifyReport {
    let q = random_orthogonal(n, seed);
    let resid_orth = (q.transpose() * &q - DMatrix::identity(n, n)).norm();
    let resid_det = (q.determinant().abs() - 1.0).abs();
    VerifyReport::new(
        "orthogonal",
        resid_orth.max(resid_det),
        1e-12,
        seed,
        Dims {
            n: Some(n),
            ..Dims::default()
        },
    )
}

/// Lorentz-group membership of [`random_boost`]: ‖ΛᵀηΛ - η‖_F.
pub fn verify_boost_identity(n: usize, rapidity: f64, seed: u64) -> VerifyReport {
    let l = random_boost(n, rapidity, seed);
    let eta = Metric::Minkowski.matrix(n);
    let resid = (l.transpose() * &eta * &l - &eta).norm();
    VerifyReport::new(
        "boost",
        resid,
        1e-10,
        seed,
        Dims {
            n: Some(n),
            ..Dims::default()
        },
    )
}

/// Gram-matrix invariance under a Lorentz boost, relative Frobenius.
pub fn verify_minkowski_gram(m: usize, n: usize, rapidity: f64, seed: u64) -> Result<VerifyReport> {
    let mut rng = crate::rng::substream(seed, "minkowski-gram");
    let x = randn(m, n, &mut rng);
    let l = boost_from_rng(n, rapidity, &mut rng);
    let f = Frame::new(x.clone())?;
    let fb = Frame::new(x * l.transpose())?;
    let g = gram(&f, &Metric::Minkowski)?;
    let gb = gram(&fb, &Metric::Minkowski)?;
    let resid = rel_fro(&(&g - &gb), &g);
    Ok(VerifyReport::new(
        "minkowski-gram",
        resid,
        1e-6,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            ..Dims::default()
        },
    ))
}

/// Gram reconstruction through a spanning set:
/// ‖XYᵀ(YYᵀ)⁺YXᵀ - XXᵀ‖_F / ‖XXᵀ‖_F with random normal X (m×n), Y (k×n).
pub fn verify_lemma_a14(m: usize, n: usize, k: usize, seed: u64) -> Result<VerifyReport> {
    if k < n {
        return Err(Error::InvalidConfig(format!(
            "reconstruction needs k >= n, got k={k}, n={n}"
        )));
    }
    let mut rng = crate::rng::substream(seed, "a14");
    let x = randn(m, n, &mut rng);
    let y = randn(k, n, &mut rng);
    let rec = crate::invariants::reconstruct_gram(&(&x * y.transpose()), &(&y * y.transpose()))?;
    let target = &x * x.transpose();
    let resid = rel_fro(&(&rec - &target), &target);
    Ok(VerifyReport::new(
        "lemma-a14",
        resid,
        1e-8,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            k: Some(k),
            ..Dims::default()
        },
    ))
}

/// Negative control: the same reconstruction with Y's rows all equal
/// (rank 1). The identity must fail, demonstrating the rank hypothesis.
pub fn verify_lemma_a14_rank_deficient(m: usize, n: usize, k: usize, seed: u64) -> Result<VerifyReport> {
    let mut rng = crate::rng::substream(seed, "a14-deficient");
    let x = randn(m, n, &mut rng);
    let row = randn(1, n, &mut rng);
    let mut y = DMatrix::zeros(k, n);
    for i in 0..k {
        y.set_row(i, &row.row(0));
    }
    let rec = crate::invariants::reconstruct_gram(&(&x * y.transpose()), &(&y * y.transpose()))?;
    let target = &x * x.transpose();
    let resid = rel_fro(&(&rec - &target), &target);
    let mut report = VerifyReport::new(
        "lemma-a14-rank-deficient",
        resid,
        1e-8,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            k: Some(k),
            ..Dims::default()
        },
    )
    .expecting_failure();
    report.note = Some("negative control: rank(Y) = 1 < n".into());
    Ok(report)
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count()
}

/// Basis-projection features before/after a random rotation of the input:
/// with C = XXᵀ, Y the first n rows, Z = XYᵀ and D = ZZᵀ, all three of
/// C, D, Z must be unchanged. Residual is the max of the three relative
/// Frobenius residuals.
pub fn verify_rotation_listing(m: usize, n: usize, seed: u64) -> Result<VerifyReport> {
    if m < n {
        return Err(Error::InvalidConfig(format!(
            "basis subset needs m >= n, got m={m}, n={n}"
        )));
    }
    let mut rng = crate::rng::substream(seed, "listing");
    let x1 = randn(m, n, &mut rng);
    let q = orthogonal_from_rng(n, &mut rng);

    let basis = |x: &DMatrix<f64>| x.rows(0, n).into_owned();
    let c1 = &x1 * x1.transpose();
    let y1 = basis(&x1);
    let z1 = &x1 * y1.transpose();
    let d1 = &z1 * z1.transpose();

    let x2 = &x1 * &q;
    let c2 = &x2 * x2.transpose();
    let y2 = basis(&x2);
    let z2 = &x2 * y2.transpose();
    let d2 = &z2 * z2.transpose();

    let rc = rel_fro(&(&c1 - &c2), &c1);
    let rd = rel_fro(&(&d1 - &d2), &d1);
    let rz = rel_fro(&(&z1 - &z2), &z1);
    let resid = rc.max(rd).max(rz);

    let rank = matrix_rank(&y1);
    let mut report = VerifyReport::new(
        "rotation-listing",
        resid,
        1e-8,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            ..Dims::default()
        },
    );
    report.note = Some(format!(
        "C: {rc:.3e}, D: {rd:.3e}, Z: {rz:.3e}; basis rank {rank}/{n}"
    ));
    Ok(report)
}

fn group_moved_frame(
    frame: &Frame,
    metric: &Metric,
    center: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Frame> {
    let n = frame.dim();
    let moved = match metric {
        Metric::Euclidean => {
            let q = orthogonal_from_rng(n, rng);
            let mut x = frame.coords() * q.transpose();
            if center {
                let t: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                for j in 0..n {
                    for i in 0..x.nrows() {
                        x[(i, j)] += t[j];
                    }
                }
            }
            x
        }
        Metric::Minkowski => {
            let rapidity: f64 = rng.random_range(-2.0..2.0);
            let l = boost_from_rng(n, rapidity, rng);
            frame.coords() * l.transpose()
        }
        Metric::Bilinear(_) => {
            return Err(Error::InvalidConfig(
                "invariance checks support Euclidean and Minkowski metrics".into(),
            ))
        }
    };
    Frame::new(moved)
}

/// Model-level invariance: max over trials of
/// |E(g·X) - E(X)| / (1 + |E(X)|) with g drawn from the metric's group
/// (plus random translations when centering is on).
pub fn verify_model_invariance(
    model: &Model,
    m: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let mut rng = crate::rng::substream(seed, "model-invariance");
    let center = model.effective_config().center;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let frame = Frame::new(randn(m, n, &mut rng))?;
        let e0 = model.forward_frame(&frame)?;
        let moved = group_moved_frame(&frame, &model.metric, center, &mut rng)?;
        let e1 = model.forward_frame(&moved)?;
        worst = worst.max((e1 - e0).abs() / (1.0 + e0.abs()));
    }
    Ok(VerifyReport::new(
        "model-invariance",
        worst,
        1e-6,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            trials: Some(trials),
            ..Dims::default()
        },
    ))
}

/// All permutations of 0..m (Heap's algorithm).
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..m).collect();
    let mut out = Vec::new();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(m, &mut items, &mut out);
    out
}

fn permute_frame(frame: &Frame, perm: &[usize]) -> Result<Frame> {
    let coords = DMatrix::from_fn(frame.num_points(), frame.dim(), |i, j| {
        frame.coords()[(perm[i], j)]
    });
    let mut out = Frame::new(coords)?;
    if let Some(types) = frame.types() {
        out = out.with_types(perm.iter().map(|&p| types[p]).collect())?;
    }
    Ok(out)
}

/// Exhaustive permutation invariance of a pooled model at point count m:
/// max |E(π·X) - E(X)| over all m! permutations. Exact (residual 0) thanks to
/// value-sorted pooled accumulation.
pub fn verify_permutation_invariance(
    model: &Model,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if model.perm_pool.is_none() {
        return Err(Error::InvalidConfig(
            "permutation check needs a pooled model".into(),
        ));
    }
    if m > 6 {
        return Err(Error::InvalidConfig("exhaustive check limited to m <= 6".into()));
    }
    let mut rng = crate::rng::substream(seed, "perm-invariance");
    let frame = Frame::new(randn(m, n, &mut rng))?;
    let e0 = model.forward_frame(&frame)?;
    let mut worst = 0.0f64;
    for perm in permutations(m) {
        let e1 = model.forward_frame(&permute_frame(&frame, &perm)?)?;
        worst = worst.max((e1 - e0).abs());
    }
    Ok(VerifyReport::new(
        "perm-invariance",
        worst,
        0.0,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            ..Dims::default()
        },
    ))
}

/// Force equivariance: max over trials of
/// ‖F(X Qᵀ) - F(X) Qᵀ‖_F / (‖F(X)‖_F + 1e-12).
pub fn verify_force_equivariance(
    model: &Model,
    m: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let mut rng = crate::rng::substream(seed, "force-equivariance");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = randn(m, n, &mut rng);
        let q = orthogonal_from_rng(n, &mut rng);
        let f0 = forces(model, &Frame::new(x.clone())?)?;
        let f1 = forces(model, &Frame::new(&x * q.transpose())?)?;
        let resid = (&f1 - &f0 * q.transpose()).norm() / (f0.norm() + 1e-12);
        worst = worst.max(resid);
    }
    Ok(VerifyReport::new(
        "force-equivariance",
        worst,
        1e-5,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            trials: Some(trials),
            ..Dims::default()
        },
    ))
}

/// Negative control: an energy with raw coordinates mixed into the features.
/// The invariance residual must exceed the tolerance, demonstrating the
/// invariance check would catch a symmetry-breaking feature map.
pub fn verify_broken_featurization(m: usize, n: usize, seed: u64) -> Result<VerifyReport> {
    let config = FeatureConfig {
        linear: false,
        ..FeatureConfig::default()
    };
    let model = Model::build(
        m,
        n,
        config.clone(),
        Metric::Euclidean,
        &NetworkConfig::kan(),
        seed,
    )?;
    let broken_energy = |frame: &Frame| -> Result<f64> {
        let feats = featurize(frame, &config, &Metric::Euclidean)?;
        let invariant = model.forward(&feats.values)?;
        // "Feature" that is just the coordinate sum: not invariant.
        Ok(invariant + frame.coords().sum())
    };
    let mut rng = crate::rng::substream(seed, "broken");
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let frame = Frame::new(randn(m, n, &mut rng))?;
        let e0 = broken_energy(&frame)?;
        let moved = group_moved_frame(&frame, &Metric::Euclidean, true, &mut rng)?;
        let e1 = broken_energy(&moved)?;
        worst = worst.max((e1 - e0).abs() / (1.0 + e0.abs()));
    }
    let mut report = VerifyReport::new(
        "broken-featurization",
        worst,
        1e-6,
        seed,
        Dims {
            m: Some(m),
            n: Some(n),
            trials: Some(5),
            ..Dims::default()
        },
    )
    .expecting_failure();
    report.note = Some("negative control: raw coordinate sum added to the energy".into());
    Ok(report)
}

/// Run the whole check matrix over `seeds` seeds.
pub fn run_all(seeds: u64) -> Result<Vec<VerifyReport>> {
    let mut reports = Vec::new();
    for seed in 0..seeds {
        reports.push(verify_orthogonality(1 + (seed as usize) % 6, seed));
        reports.push(verify_boost_identity(
            2 + (seed as usize) % 3,
            2.0 * (seed as f64 + 1.0) / seeds.max(1) as f64,
            seed,
        ));
        reports.push(verify_lemma_a14(15, 3, 5, seed)?);
        reports.push(verify_lemma_a14_rank_deficient(15, 3, 5, seed)?);
        reports.push(verify_rotation_listing(5, 3, seed)?);
        reports.push(verify_minkowski_gram(4 + (seed as usize) % 4, 4, 1.5, seed)?);

        let kan = Model::build(
            4,
            3,
            FeatureConfig::default(),
            Metric::Euclidean,
            &NetworkConfig::kan(),
            seed,
        )?;
        reports.push(verify_model_invariance(&kan, 4, 3, 5, seed)?);

        let mlp = Model::build(
            4,
            3,
            FeatureConfig {
                linear: false,
                ..FeatureConfig::default()
            },
            Metric::Euclidean,
            &NetworkConfig::mlp(),
            seed,
        )?;
        reports.push(verify_model_invariance(&mlp, 4, 3, 5, seed)?);

        let pooled = Model::build(
            4,
            3,
            FeatureConfig {
                linear: false,
                ..FeatureConfig::default()
            },
            Metric::Euclidean,
            &NetworkConfig::kan().with_perm_pool(DEFAULT_POOL_WIDTH),
            seed,
        )?;
        reports.push(verify_permutation_invariance(&pooled, 4, 3, seed)?);

        reports.push(verify_force_equivariance(&kan, 4, 3, 3, seed)?);
        reports.push(verify_broken_featurization(4, 3, seed)?);
    }
    Ok(reports)
}
