//! Symmetry-invariant scalar features of point clouds.
//!
//! A [`Frame`] holds m points in n dimensions. Under a [`Metric`] the pairwise
//! inner products are a complete invariant description of the cloud up to the
//! metric's isometry group, and when the first n points span the space the
//! products against those rows alone suffice. [`featurize`] turns a frame
//! into a flat vector of such scalars; everything downstream (network, forces)
//! sees only invariants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffengine::Scalar;
use crate::error::{Error, Result};

/// One configuration: m points in n dimensions with optional per-point type
/// labels and an optional scalar energy target.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    coords: DMatrix<f64>,
    types: Option<Vec<i64>>,
    energy: Option<f64>,
}

impl Frame {
    /// Build a frame from an m×n coordinate matrix (row i = point i).
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() == 0 || coords.ncols() == 0 {
            return Err(Error::InvalidConfig(format!(
                "frame must have m >= 1 points and n >= 1 dimensions, got {}x{}",
                coords.nrows(),
                coords.ncols()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame coordinates".into()));
        }
        Ok(Frame {
            coords,
            types: None,
            energy: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidConfig("empty coordinate rows".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged coordinate rows".into()));
        }
        Frame::new(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    pub fn with_types(mut self, types: Vec<i64>) -> Result<Self> {
        if types.len() != self.num_points() {
            return Err(Error::DimensionMismatch(format!(
                "{} type labels for {} points",
                types.len(),
                self.num_points()
            )));
        }
        self.types = Some(types);
        Ok(self)
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = Some(energy);
        self
    }

    pub fn set_energy(&mut self, energy: Option<f64>) {
        self.energy = energy;
    }

    /// Number of points m.
    pub fn num_points(&self) -> usize {
        self.coords.nrows()
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.coords
    }

    pub fn types(&self) -> Option<&[i64]> {
        self.types.as_deref()
    }

    pub fn energy(&self) -> Option<f64> {
        self.energy
    }

    /// Point i as an owned vector.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// Rows as owned vectors.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_points()).map(|i| self.point(i)).collect()
    }
}

/// Inner-product signature: Euclidean, Minkowski diag(1,-1,...,-1), or a
/// general symmetric bilinear form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    Minkowski,
    Bilinear(DMatrix<f64>),
}

impl Metric {
    /// Build a general bilinear metric; the matrix must be symmetric.
    pub fn bilinear(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch("bilinear form must be square".into()));
        }
        let max_asym = (&a - a.transpose()).abs().max();
        if max_asym > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bilinear form is not symmetric (max |A - A^T| = {max_asym})"
            )));
        }
        Ok(Metric::Bilinear(a))
    }

    /// Check compatibility with an n-dimensional frame.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Metric::Euclidean | Metric::Minkowski => Ok(()),
            Metric::Bilinear(a) if a.nrows() == n => Ok(()),
            Metric::Bilinear(a) => Err(Error::DimensionMismatch(format!(
                "bilinear form is {}x{} but points have dimension {}",
                a.nrows(),
                a.ncols(),
                n
            ))),
        }
    }

    /// Signature matrix of the metric in dimension n.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Metric::Euclidean => DMatrix::identity(n, n),
            Metric::Minkowski => {
                DMatrix::from_fn(n, n, |i, j| {
                    if i != j {
                        0.0
                    } else if i == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
            }
            Metric::Bilinear(a) => a.clone(),
        }
    }
}

/// Metric inner product of two points, generic over plain values and tape
/// expressions.
pub fn inner<S: Scalar>(metric: &Metric, a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    match metric {
        Metric::Euclidean => S::dot(a, b),
        Metric::Minkowski => {
            let head = a[0] * b[0];
            if a.len() == 1 {
                head
            } else {
                head - S::dot(&a[1..], &b[1..])
            }
        }
        Metric::Bilinear(m) => {
            let mut acc = a[0].lift(0.0);
            for (i, &ai) in a.iter().enumerate() {
                let mut row = a[0].lift(0.0);
                for (j, &bj) in b.iter().enumerate() {
                    row = row + bj * bj.lift(m[(i, j)]);
                }
                acc = acc + ai * row;
            }
            acc
        }
    }
}

/// Signed norm sign(<x,x>)·sqrt(|<x,x>|); equals the Euclidean norm for the
/// Euclidean metric and stays real for spacelike vectors otherwise.
pub fn signed_norm<S: Scalar>(metric: &Metric, x: &[S]) -> S {
    signed_sqrt(inner(metric, x, x))
}

fn signed_sqrt<S: Scalar>(g: S) -> S {
    if g.value() >= 0.0 {
        g.sqrt()
    } else {
        -((-g).sqrt())
    }
}

/// Selectable pairwise invariant features, in canonical emission order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Norms of both endpoints: (|x|, |y|).
    N1,
    /// Separation norm |x - y|.
    N12,
    /// Inner product <x, y>.
    Inner,
    /// sqrt(max(0, |x|^2 |y|^2 - <x,y>^2)); the cross-product magnitude in 3d.
    Outer,
    /// <x,y> / (|x| |y|).
    Cos,
    /// outer / (|x| |y|).
    Sin,
}

pub const ALL_FEATURES: [FeatureKind; 6] = [
    FeatureKind::N1,
    FeatureKind::N12,
    FeatureKind::Inner,
    FeatureKind::Outer,
    FeatureKind::Cos,
    FeatureKind::Sin,
];

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n1" => Ok(FeatureKind::N1),
            "n12" => Ok(FeatureKind::N12),
            "inner" => Ok(FeatureKind::Inner),
            "outer" => Ok(FeatureKind::Outer),
            "cos" => Ok(FeatureKind::Cos),
            "sin" => Ok(FeatureKind::Sin),
            other => Err(Error::InvalidConfig(format!("unknown feature '{other}'"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureKind::N1 => "n1",
            FeatureKind::N12 => "n12",
            FeatureKind::Inner => "inner",
            FeatureKind::Outer => "outer",
            FeatureKind::Cos => "cos",
            FeatureKind::Sin => "sin",
        };
        f.write_str(s)
    }
}

/// Ordered feature selection; iteration follows the canonical order of
/// [`FeatureKind`] regardless of insertion order.
pub type FeatureSet = std::collections::BTreeSet<FeatureKind>;

/// Flags and feature selection controlling invariant featurization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Append the zero-based row index of the first endpoint to every pair.
    /// Deliberately breaks permutation symmetry.
    pub node_index: bool,
    /// Pair the m points against the first n rows only (pair count linear in
    /// m) instead of against all m points (quadratic).
    pub linear: bool,
    pub features: FeatureSet,
    /// Remove the coordinate mean before featurizing (translation symmetry).
    pub center: bool,
    /// Append both endpoints' type labels to every pair.
    pub include_types: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            node_index: false,
            linear: true,
            features: [
                FeatureKind::N1,
                FeatureKind::N12,
                FeatureKind::Inner,
                FeatureKind::Outer,
            ]
            .into_iter()
            .collect(),
            center: true,
            include_types: false,
        }
    }
}

impl FeatureConfig {
    /// Validate against a frame shape.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidConfig("feature set is empty".into()));
        }
        if self.linear && m < n {
            return Err(Error::InvalidConfig(format!(
                "linear featurization needs m >= n (got m={m}, n={n})"
            )));
        }
        Ok(())
    }

    /// Number of scalars emitted per pair.
    pub fn per_pair_width(&self) -> usize {
        let mut w = 0;
        for f in &self.features {
            w += match f {
                FeatureKind::N1 => 2,
                _ => 1,
            };
        }
        if self.node_index {
            w += 1;
        }
        if self.include_types {
            w += 2;
        }
        w
    }

    /// Number of (i, j) pairs for a frame with m points in n dimensions.
    pub fn num_pairs(&self, m: usize, n: usize) -> usize {
        if self.linear {
            m * n
        } else {
            m * m
        }
    }

    /// Total feature vector length.
    pub fn feature_len(&self, m: usize, n: usize) -> usize {
        self.num_pairs(m, n) * self.per_pair_width()
    }
}

/// Remove the coordinate mean; column means of the result are zero up to
/// rounding. Types and energy pass through unchanged.
pub fn center(frame: &Frame) -> Frame {
    let mut out = frame.clone();
    let m = frame.num_points() as f64;
    for j in 0..frame.dim() {
        let mean = frame.coords.column(j).sum() / m;
        for i in 0..frame.num_points() {
            out.coords[(i, j)] -= mean;
        }
    }
    out
}

/// Gram matrix G[i][j] = x_i^T Λ x_j under the metric; symmetric by
/// construction.
pub fn gram(frame: &Frame, metric: &Metric) -> Result<DMatrix<f64>> {
    metric.check_dim(frame.dim())?;
    let rows = frame.rows();
    let m = rows.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = inner(metric, &rows[i], &rows[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// First `count` rows of the frame, used as the projection basis for linear
/// featurization. Rank deficiency is reported by the verify module, not here.
pub fn basis_subset(frame: &Frame, count: usize) -> Result<DMatrix<f64>> {
    if frame.num_points() < count {
        return Err(Error::InvalidConfig(format!(
            "basis subset of {count} rows from a frame with {} points",
            frame.num_points()
        )));
    }
    Ok(frame.coords.rows(0, count).into_owned())
}

/// Pairwise invariant features of (x, y) in canonical order, filtered by the
/// selected set. Returns the scalars and a degeneracy flag raised when cos or
/// sin met a zero-norm operand (the feature is emitted as 0).
pub fn pair_features<S: Scalar>(
    x: &[S],
    y: &[S],
    metric: &Metric,
    features: &FeatureSet,
) -> (Vec<S>, bool) {
    let mut out = Vec::with_capacity(features.len() + 1);
    let mut degenerate = false;

    let needs_norms = features.contains(&FeatureKind::N1)
        || features.contains(&FeatureKind::Outer)
        || features.contains(&FeatureKind::Cos)
        || features.contains(&FeatureKind::Sin);
    let needs_inner = features.contains(&FeatureKind::Inner)
        || features.contains(&FeatureKind::Outer)
        || features.contains(&FeatureKind::Cos)
        || features.contains(&FeatureKind::Sin);

    let gxx = if needs_norms { Some(inner(metric, x, x)) } else { None };
    let gyy = if needs_norms { Some(inner(metric, y, y)) } else { None };
    let gxy = if needs_inner { Some(inner(metric, x, y)) } else { None };
    let nx = gxx.map(signed_sqrt);
    let ny = gyy.map(signed_sqrt);

    for f in features {
        match f {
            FeatureKind::N1 => {
                out.push(nx.unwrap());
                out.push(ny.unwrap());
            }
            FeatureKind::N12 => {
                let diff: Vec<S> = x.iter().zip(y.iter()).map(|(&a, &b)| a - b).collect();
                out.push(signed_norm(metric, &diff));
            }
            FeatureKind::Inner => out.push(gxy.unwrap()),
            FeatureKind::Outer => out.push(outer_feature(gxx.unwrap(), gyy.unwrap(), gxy.unwrap())),
            FeatureKind::Cos => {
                let denom = nx.unwrap() * ny.unwrap();
                if denom.value() == 0.0 {
                    degenerate = true;
                    out.push(denom.lift(0.0));
                } else {
                    out.push(gxy.unwrap() / denom);
                }
            }
            FeatureKind::Sin => {
                let denom = nx.unwrap() * ny.unwrap();
                if denom.value() == 0.0 {
                    degenerate = true;
                    out.push(denom.lift(0.0));
                } else {
                    out.push(outer_feature(gxx.unwrap(), gyy.unwrap(), gxy.unwrap()) / denom);
                }
            }
        }
    }
    (out, degenerate)
}

/// sqrt(max(0, <x,x><y,y> - <x,y>^2)); max(0, ·) guards negative rounding
/// residue for parallel vectors.
fn outer_feature<S: Scalar>(gxx: S, gyy: S, gxy: S) -> S {
    (gxx * gyy - gxy * gxy).max0().sqrt()
}

/// Featurization result with the degeneracy flag from cos/sin.
#[derive(Clone, Debug)]
pub struct Featurized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Invariant feature vector of a frame.
///
/// Centers first when configured, then concatenates [`pair_features`] over
/// the pair set in row-major order: all m² ordered pairs when
/// `linear = false`, or the m×n pairs against the first n rows when
/// `linear = true`. Appends the first endpoint's row index and/or both
/// endpoints' type labels per pair when configured.
pub fn featurize(frame: &Frame, config: &FeatureConfig, metric: &Metric) -> Result<Featurized> {
    config.validate(frame.num_points(), frame.dim())?;
    metric.check_dim(frame.dim())?;
    if config.include_types && frame.types().is_none() {
        return Err(Error::InvalidConfig(
            "include_types set but the frame has no type labels".into(),
        ));
    }
    let rows = frame.rows();
    let (values, degenerate) = featurize_rows(&rows, frame.types(), config, metric);
    Ok(Featurized { values, degenerate })
}

/// Generic featurization core shared by the plain and differentiated paths.
/// `rows` must already satisfy the config's preconditions.
pub fn featurize_rows<S: Scalar>(
    rows: &[Vec<S>],
    types: Option<&[i64]>,
    config: &FeatureConfig,
    metric: &Metric,
) -> (Vec<S>, bool) {
    let m = rows.len();
    let n = rows[0].len();
    let some = rows[0][0];

    let centered: Vec<Vec<S>>;
    let rows = if config.center {
        let inv_m = some.lift(1.0 / m as f64);
        let mut means: Vec<S> = Vec::with_capacity(n);
        for j in 0..n {
            // Column values are summed in ascending value order so the mean
            // is bit-identical under any row permutation.
            let mut column: Vec<S> = rows.iter().map(|row| row[j]).collect();
            column.sort_by(|a, b| a.value().total_cmp(&b.value()));
            let mut acc = column[0];
            for v in column.iter().skip(1) {
                acc = acc + *v;
            }
            means.push(acc * inv_m);
        }
        centered = rows
            .iter()
            .map(|row| row.iter().zip(&means).map(|(&v, &mu)| v - mu).collect())
            .collect();
        &centered
    } else {
        rows
    };

    let num_targets = if config.linear { n } else { m };
    let mut out = Vec::with_capacity(config.feature_len(m, n));
    let mut degenerate = false;
    for i in 0..m {
        for j in 0..num_targets {
            let (vals, degen) = pair_features(&rows[i], &rows[j], metric, &config.features);
            degenerate |= degen;
            out.extend(vals);
            if config.node_index {
                out.push(some.lift(i as f64));
            }
            if config.include_types {
                let t = types.expect("validated above");
                out.push(some.lift(t[i] as f64));
                out.push(some.lift(t[j] as f64));
            }
        }
    }
    (out, degenerate)
}

/// Moore-Penrose pseudo-inverse by SVD; singular values below
/// `1e-10 * sigma_max` are treated as zero.
pub(crate) fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax;
    let mut sigma_inv = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sigma_inv * u.transpose()
}

/// Reconstruct X Xᵀ from X Yᵀ and Y Yᵀ as XYᵀ (YYᵀ)⁺ YXᵀ.
///
/// Exact (up to rounding) whenever Y has full column rank n; with a rank-
/// deficient Y the identity genuinely fails, which the verify module checks.
pub fn reconstruct_gram(xyt: &DMatrix<f64>, yyt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if yyt.nrows() != yyt.ncols() {
        return Err(Error::DimensionMismatch("YY^T must be square".into()));
    }
    if xyt.ncols() != yyt.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "XY^T is {}x{} but YY^T is {}x{}",
            xyt.nrows(),
            xyt.ncols(),
            yyt.nrows(),
            yyt.ncols()
        )));
    }
    if xyt.iter().any(|v| !v.is_finite()) || yyt.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruct_gram input".into()));
    }
    let asym = (yyt - yyt.transpose()).abs().max();
    if asym > 1e-9 * (1.0 + yyt.abs().max()) {
        return Err(Error::InvalidConfig(format!(
            "YY^T is not symmetric (max |A - A^T| = {asym})"
        )));
    }
    Ok(xyt * pinv(yyt) * xyt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn frame(rows: &[Vec<f64>]) -> Frame {
        Frame::from_rows(rows).unwrap()
    }

    fn randn_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::substream(seed, "test");
        DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn center_examples() {
        let f = frame(&[vec![1.0, 1.0], vec![3.0, 3.0]])
            .with_types(vec![8, 1])
            .unwrap()
            .with_energy(-2.5);
        let c = center(&f);
        assert_eq!(c.coords(), &DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0]));
        assert_eq!(c.types(), Some(&[8i64, 1][..]));
        assert_eq!(c.energy(), Some(-2.5));

        let single = frame(&[vec![5.0, 5.0, 5.0]]);
        let c = center(&single);
        assert!(c.coords().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_is_idempotent() {
        let f = frame(&[vec![0.3, -1.2], vec![-0.7, 0.4], vec![0.4, 0.8]]);
        let once = center(&f);
        let twice = center(&once);
        for (a, b) in once.coords().iter().zip(twice.coords().iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn gram_identity_frames() {
        let f = frame(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = gram(&f, &Metric::Euclidean).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));

        let g = gram(&f, &Metric::Minkowski).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn gram_is_rotation_invariant() {
        let x = randn_matrix(5, 3, 7);
        let q = crate::verify::random_orthogonal(3, 11);
        let f = Frame::new(x.clone()).unwrap();
        let fq = Frame::new(x * q.transpose()).unwrap();
        let g = gram(&f, &Metric::Euclidean).unwrap();
        let gq = gram(&fq, &Metric::Euclidean).unwrap();
        assert_relative_eq!(g, gq, epsilon = 1e-10);
    }

    #[test]
    fn gram_is_symmetric() {
        let f = Frame::new(randn_matrix(6, 4, 3)).unwrap();
        let g = gram(&f, &Metric::Minkowski).unwrap();
        assert_eq!((&g - g.transpose()).abs().max(), 0.0);
    }

    #[test]
    fn gram_rejects_metric_dim_mismatch() {
        let f = frame(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let metric = Metric::bilinear(DMatrix::identity(3, 3)).unwrap();
        assert!(gram(&f, &metric).is_err());
    }

    #[test]
    fn basis_subset_rows() {
        let x = randn_matrix(5, 3, 1);
        let f = Frame::new(x.clone()).unwrap();
        let y = basis_subset(&f, 3).unwrap();
        assert_eq!(y, x.rows(0, 3).into_owned());

        let y = basis_subset(&f, 5).unwrap();
        assert_eq!(y, x);

        assert!(basis_subset(&f, 6).is_err());

        // Degenerate input passes through; rank checks live elsewhere.
        let f = frame(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        let y = basis_subset(&f, 2).unwrap();
        assert_eq!(y.nrows(), 2);
    }

    #[test]
    fn pair_feature_examples() {
        let set: FeatureSet = [
            FeatureKind::N1,
            FeatureKind::N12,
            FeatureKind::Inner,
            FeatureKind::Outer,
        ]
        .into_iter()
        .collect();
        let (vals, degen) = pair_features(
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &Metric::Euclidean,
            &set,
        );
        assert!(!degen);
        assert_eq!(vals.len(), 5);
        assert_relative_eq!(vals[0], 1.0);
        assert_relative_eq!(vals[1], 1.0);
        assert_relative_eq!(vals[2], std::f64::consts::SQRT_2);
        assert_relative_eq!(vals[3], 0.0);
        assert_relative_eq!(vals[4], 1.0);
    }

    #[test]
    fn pair_features_parallel_cos_sin() {
        let set: FeatureSet = [FeatureKind::Cos, FeatureKind::Sin].into_iter().collect();
        let (vals, degen) = pair_features(&[1.0, 0.0], &[1.0, 0.0], &Metric::Euclidean, &set);
        assert!(!degen);
        assert_relative_eq!(vals[0], 1.0);
        assert_relative_eq!(vals[1], 0.0);
    }

    #[test]
    fn pair_features_outer_345() {
        let set: FeatureSet = [FeatureKind::Outer].into_iter().collect();
        let (vals, _) = pair_features(&[3.0, 4.0], &[4.0, 3.0], &Metric::Euclidean, &set);
        // sqrt(25*25 - 24^2) = sqrt(49)
        assert_relative_eq!(vals[0], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_features_zero_norm_degeneracy() {
        let set: FeatureSet = [FeatureKind::Cos, FeatureKind::Sin].into_iter().collect();
        let (vals, degen) = pair_features(&[0.0, 0.0], &[1.0, 0.0], &Metric::Euclidean, &set);
        assert!(degen);
        assert_eq!(vals, vec![0.0, 0.0]);
    }

    #[test]
    fn featurize_lengths() {
        let f = Frame::new(randn_matrix(4, 3, 5)).unwrap();
        let mut config = FeatureConfig {
            center: false,
            ..FeatureConfig::default()
        };

        config.linear = true;
        let feats = featurize(&f, &config, &Metric::Euclidean).unwrap();
        assert_eq!(feats.values.len(), 60); // 12 pairs x 5 scalars

        config.linear = false;
        let feats = featurize(&f, &config, &Metric::Euclidean).unwrap();
        assert_eq!(feats.values.len(), 80); // 16 pairs x 5 scalars
    }

    #[test]
    fn featurize_appends_index_and_types() {
        let f = Frame::new(randn_matrix(3, 2, 9))
            .unwrap()
            .with_types(vec![8, 1, 6])
            .unwrap();
        let config = FeatureConfig {
            node_index: true,
            linear: false,
            include_types: true,
            center: false,
            ..FeatureConfig::default()
        };
        let feats = featurize(&f, &config, &Metric::Euclidean).unwrap();
        let width = config.per_pair_width();
        assert_eq!(width, 8);
        assert_eq!(feats.values.len(), 9 * width);
        // pair (i=1, j=2) is the 6th of the 3x3 grid: index 1, types (1, 6)
        let pair = &feats.values[5 * width..6 * width];
        assert_eq!(&pair[5..], &[1.0, 1.0, 6.0]);
    }

    #[test]
    fn featurize_rejects_bad_configs() {
        let f = Frame::new(randn_matrix(2, 3, 2)).unwrap();
        let config = FeatureConfig::default(); // linear needs m >= n
        assert!(featurize(&f, &config, &Metric::Euclidean).is_err());

        let f = Frame::new(randn_matrix(4, 3, 2)).unwrap();
        let mut config = FeatureConfig::default();
        config.features.clear();
        assert!(featurize(&f, &config, &Metric::Euclidean).is_err());

        let config = FeatureConfig {
            include_types: true,
            ..FeatureConfig::default()
        };
        assert!(featurize(&f, &config, &Metric::Euclidean).is_err());
    }

    #[test]
    fn featurize_invariant_under_rigid_motion() {
        let mut rng = crate::rng::substream(31, "rigid");
        let config = FeatureConfig::default();
        for trial in 0..100 {
            let n = 1 + (trial % 6);
            let m = n.max(3 + (trial % 18));
            let x = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = crate::verify::random_orthogonal(n, 1000 + trial as u64);
            let t: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut moved = &x * q.transpose();
            for j in 0..n {
                for i in 0..m {
                    moved[(i, j)] += t[j];
                }
            }
            let frame = Frame::new(x).unwrap();
            let fa = featurize(&frame, &config, &Metric::Euclidean).unwrap();
            let fb = featurize(&Frame::new(moved).unwrap(), &config, &Metric::Euclidean).unwrap();
            // Scale for the 1e-8 relative comparison: sqrt-derived features
            // (outer) of near-parallel pairs have an absolute noise floor of
            // about sqrt(n*eps) x the squared coordinate scale.
            let scale = 1.0
                + 4.0
                    * frame
                        .rows()
                        .iter()
                        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
                        .fold(0.0, f64::max);
            for (a, b) in fa.values.iter().zip(fb.values.iter()) {
                let rel = (a - b).abs() / (scale + a.abs());
                assert!(rel <= 1e-8, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn quadratic_pair_multiset_is_permutation_invariant() {
        let x = randn_matrix(5, 3, 17);
        let f = Frame::new(x.clone()).unwrap();
        let config = FeatureConfig {
            linear: false,
            center: false,
            ..FeatureConfig::default()
        };
        let collect_tuples = |fr: &Frame| -> Vec<Vec<u64>> {
            let width = config.per_pair_width();
            let feats = featurize(fr, &config, &Metric::Euclidean).unwrap();
            let mut tuples: Vec<Vec<u64>> = feats
                .values
                .chunks(width)
                .map(|c| c.iter().map(|v| v.to_bits()).collect())
                .collect();
            tuples.sort();
            tuples
        };
        let perm = [4usize, 2, 0, 1, 3];
        let permuted = DMatrix::from_fn(5, 3, |i, j| x[(perm[i], j)]);
        let fp = Frame::new(permuted).unwrap();
        assert_eq!(collect_tuples(&f), collect_tuples(&fp));
    }

    #[test]
    fn reconstruct_gram_full_rank() {
        let x = randn_matrix(15, 3, 42);
        let y = randn_matrix(5, 3, 43);
        let xyt = &x * y.transpose();
        let yyt = &y * y.transpose();
        let rec = reconstruct_gram(&xyt, &yyt).unwrap();
        let target = &x * x.transpose();
        let resid = (&rec - &target).norm() / target.norm();
        assert!(resid <= 1e-8, "residual {resid}");
    }

    #[test]
    fn reconstruct_gram_y_equals_x() {
        let x = randn_matrix(4, 4, 8);
        let xyt = &x * x.transpose();
        let rec = reconstruct_gram(&xyt, &xyt).unwrap();
        let resid = (&rec - &xyt).norm() / xyt.norm();
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn reconstruct_gram_rank_deficient_fails() {
        // 4x2 instance with Y's rows all equal: X has components outside
        // span(Y), so the identity must not hold.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let xyt = &x * y.transpose();
        let yyt = &y * y.transpose();
        let rec = reconstruct_gram(&xyt, &yyt).unwrap();
        let target = &x * x.transpose();
        let resid = (&rec - &target).norm() / target.norm();
        assert!(resid > 0.1, "identity unexpectedly held: residual {resid}");
    }

    #[test]
    fn reconstruct_gram_rejects_nonfinite() {
        let mut xyt = DMatrix::zeros(2, 2);
        xyt[(0, 0)] = f64::NAN;
        let yyt = DMatrix::identity(2, 2);
        assert!(reconstruct_gram(&xyt, &yyt).is_err());
    }

    #[test]
    fn minkowski_gram_boost_invariance() {
        for seed in 0..20u64 {
            let x = randn_matrix(4, 4, 100 + seed);
            let boost = crate::verify::random_boost(4, 1.5, seed);
            let f = Frame::new(x.clone()).unwrap();
            let fb = Frame::new(x * boost.transpose()).unwrap();
            let g = gram(&f, &Metric::Minkowski).unwrap();
            let gb = gram(&fb, &Metric::Minkowski).unwrap();
            let resid = (&g - &gb).norm() / g.norm();
            assert!(resid <= 1e-6, "seed {seed}: residual {resid}");
        }
    }
}
