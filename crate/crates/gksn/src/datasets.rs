//! Synthetic pair-potential datasets and the frames file format.
//!
//! Frames are generated by drawing random positions, relaxing them with
//! gradient descent on the potential, and attaching the relaxed energy as the
//! regression target. Generation is deterministic: every frame draws from its
//! own counter-based random stream, so parallel generation is bit-identical
//! to sequential.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Scalar, Tape};
use crate::error::{Error, Result};
use crate::invariants::Frame;

/// Oscillatory modulation f(x) = x + Σ_l a_l sin(w_l x) applied to pair
/// energies; all-zero amplitudes give the smooth variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorySpec {
    pub a: [f64; 3],
    pub w: [f64; 3],
}

impl Default for OscillatorySpec {
    fn default() -> Self {
        OscillatorySpec {
            a: [1.0, 0.3, 0.1],
            w: [11.0, 30.0, 50.0],
        }
    }
}

impl OscillatorySpec {
    pub fn zero() -> Self {
        OscillatorySpec {
            a: [0.0; 3],
            w: [11.0, 30.0, 50.0],
        }
    }

    fn apply<S: Scalar>(&self, x: S) -> S {
        let mut acc = x;
        for (&a, &w) in self.a.iter().zip(self.w.iter()) {
            if a != 0.0 {
                acc = acc + x.lift(a) * (x * x.lift(w)).sin();
            }
        }
        acc
    }
}

/// Pair potentials with analytic evaluation generic over the scalar type, so
/// the same expression is used for labeling and for tape differentiation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnergyModel {
    /// Summed 12-6 pair interaction f((a/r)^12 - (a/r)^6) over all pairs.
    Lj { a: f64, osc: OscillatorySpec },
    /// Chain molecule: bonded neighbors feel f((d - d_hat)^2), all other
    /// pairs the 12-6 interaction.
    Polymer {
        d_hat: f64,
        a: f64,
        osc: OscillatorySpec,
    },
}

impl EnergyModel {
    pub fn energy(&self, frame: &Frame) -> Result<f64> {
        let rows = frame.rows();
        self.energy_rows(&rows)
    }

    /// Energy from coordinate rows; errors on coincident interacting
    /// particles.
    pub fn energy_rows<S: Scalar>(&self, rows: &[Vec<S>]) -> Result<S> {
        match *self {
            EnergyModel::Lj { a, osc } => lj_from_rows(rows, a, &osc),
            EnergyModel::Polymer { d_hat, a, osc } => polymer_from_rows(rows, d_hat, a, &osc),
        }
    }

    /// Coordinate gradient via the differentiation tape.
    pub fn gradient(&self, frame: &Frame) -> Result<DMatrix<f64>> {
        let tape = Tape::with_capacity(4096);
        self.gradient_on(&tape, frame)
    }

    /// Characteristic interaction length, used to bound per-step particle
    /// displacement during relaxation.
    pub fn length_scale(&self) -> f64 {
        match *self {
            EnergyModel::Lj { a, .. } => a,
            EnergyModel::Polymer { d_hat, a, .. } => a.min(d_hat),
        }
    }

    fn gradient_on(&self, tape: &Tape, frame: &Frame) -> Result<DMatrix<f64>> {
        let m = frame.num_points();
        let n = frame.dim();
        let vars: Vec<Vec<crate::diffengine::Expr<'_>>> = (0..m)
            .map(|i| (0..n).map(|j| tape.var(frame.coords()[(i, j)])).collect())
            .collect();
        let e = self.energy_rows(&vars)?;
        let grads = tape.backward(e)?;
        Ok(DMatrix::from_fn(m, n, |i, j| grads.wrt(vars[i][j])))
    }
}

fn pair_lj<S: Scalar>(r2: S, a: f64, osc: &OscillatorySpec) -> S {
    // (a/r)^6 = (a^2/r^2)^3; no square root needed.
    let s = r2.lift(a * a) / r2;
    let u6 = s * s * s;
    let base = u6 * u6 - u6;
    osc.apply(base)
}

fn squared_distance<S: Scalar>(xi: &[S], xj: &[S]) -> S {
    let diff: Vec<S> = xi.iter().zip(xj.iter()).map(|(&p, &q)| p - q).collect();
    S::dot(&diff, &diff)
}

/// Total 12-6 energy of a frame with oscillatory modulation, summed over
/// unordered pairs.
pub fn lj_energy(frame: &Frame, a: f64, osc: &OscillatorySpec) -> Result<f64> {
    lj_from_rows(&frame.rows(), a, osc)
}

fn lj_from_rows<S: Scalar>(rows: &[Vec<S>], a: f64, osc: &OscillatorySpec) -> Result<S> {
    let m = rows.len();
    let mut acc = rows[0][0].lift(0.0);
    for i in 0..m {
        for j in (i + 1)..m {
            let r2 = squared_distance(&rows[i], &rows[j]);
            if r2.value() == 0.0 {
                return Err(Error::Degenerate(format!("particles {i} and {j} coincide")));
            }
            acc = acc + pair_lj(r2, a, osc);
        }
    }
    Ok(acc)
}

/// Linear-polymer energy: quadratic bond terms between consecutive particles
/// plus the 12-6 interaction over all non-bonded pairs.
pub fn polymer_energy(frame: &Frame, d_hat: f64, a: f64, osc: &OscillatorySpec) -> Result<f64> {
    polymer_from_rows(&frame.rows(), d_hat, a, osc)
}

fn polymer_from_rows<S: Scalar>(
    rows: &[Vec<S>],
    d_hat: f64,
    a: f64,
    osc: &OscillatorySpec,
) -> Result<S> {
    let m = rows.len();
    if m < 2 {
        return Err(Error::InvalidConfig("polymer needs m >= 2 particles".into()));
    }
    let mut acc = rows[0][0].lift(0.0);
    for i in 0..m - 1 {
        let r2 = squared_distance(&rows[i], &rows[i + 1]);
        if r2.value() == 0.0 {
            return Err(Error::Degenerate(format!(
                "bonded particles {i} and {} coincide",
                i + 1
            )));
        }
        let d = r2.sqrt();
        let dd = d - d.lift(d_hat);
        acc = acc + osc.apply(dd * dd);
    }
    for i in 0..m {
        for j in (i + 2)..m {
            let r2 = squared_distance(&rows[i], &rows[j]);
            if r2.value() == 0.0 {
                return Err(Error::Degenerate(format!("particles {i} and {j} coincide")));
            }
            acc = acc + pair_lj(r2, a, osc);
        }
    }
    Ok(acc)
}

/// Result of an energy minimization: the relaxed frame (energy attached) and
/// the recorded energy at start and after each iteration.
pub struct Minimized {
    pub frame: Frame,
    /// Monotone non-increasing: a step that would raise the energy is halved
    /// and, when 20 halvings do not help, skipped.
    pub energies: Vec<f64>,
}

const MAX_HALVINGS: usize = 20;

/// Gradient-descent relaxation x ← x − lr·∇U with backtracking, gradients by
/// the differentiation tape.
pub fn minimize(frame: &Frame, energy: &EnergyModel, lr: f64, iters: usize) -> Result<Minimized> {
    let mut current = frame.clone();
    let mut e = energy.energy(&current)?;
    if !e.is_finite() {
        return Err(Error::NonFinite("energy at minimization start".into()));
    }
    let mut energies = Vec::with_capacity(iters + 1);
    energies.push(e);

    // Trust region: the r^-12 wall produces gradients that would teleport a
    // particle thousands of length units in one descent step (the energy
    // still drops, so plain backtracking accepts it). Cap the trial step so
    // no particle moves more than half a length scale, then backtrack on
    // energy as usual.
    let max_displacement = 0.5 * energy.length_scale();

    let tape = Tape::with_capacity(4096);
    for _ in 0..iters {
        tape.reset();
        let grad = energy.gradient_on(&tape, &current)?;
        let grad_row_max = (0..grad.nrows())
            .map(|i| grad.row(i).norm())
            .fold(0.0f64, f64::max);
        let mut step = if lr * grad_row_max > max_displacement {
            max_displacement / grad_row_max
        } else {
            lr
        };
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate_coords = current.coords() - grad.scale(step);
            let candidate = {
                let mut f = current.clone();
                *f.coords_mut() = candidate_coords;
                f
            };
            match energy.energy(&candidate) {
                Ok(ec) if ec.is_finite() && ec <= e => {
                    current = candidate;
                    e = ec;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        energies.push(e);
        if !accepted {
            break;
        }
    }
    current.set_energy(Some(e));
    Ok(Minimized {
        frame: current,
        energies,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Lj,
    Polymer,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lj" => Ok(DatasetKind::Lj),
            "polymer" => Ok(DatasetKind::Polymer),
            other => Err(Error::InvalidConfig(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub m: usize,
    pub n: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// Learning rate of the relaxation descent.
    pub em_lr: f64,
    /// Relaxation iterations.
    pub em_iters: usize,
    /// Length scale of the 12-6 interaction.
    pub lj_a: f64,
    /// Polymer rest length.
    pub bond_target: f64,
}

impl GenConfig {
    pub fn new(m: usize, n: usize, num_samples: usize, seed: u64) -> Self {
        GenConfig {
            m,
            n,
            num_samples,
            seed,
            em_lr: 0.01,
            em_iters: 500,
            lj_a: 1.0,
            bond_target: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig("need m >= 2 particles".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("need n >= 1 dimensions".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.em_lr) || !positive(self.lj_a) || !positive(self.bond_target) {
            return Err(Error::InvalidConfig("rates and scales must be positive".into()));
        }
        Ok(())
    }

    pub fn energy_model(&self, kind: DatasetKind) -> EnergyModel {
        self.energy_model_with(kind, OscillatorySpec::default())
    }

    pub fn energy_model_with(&self, kind: DatasetKind, osc: OscillatorySpec) -> EnergyModel {
        match kind {
            DatasetKind::Lj => EnergyModel::Lj { a: self.lj_a, osc },
            DatasetKind::Polymer => EnergyModel::Polymer {
                d_hat: self.bond_target,
                a: self.lj_a,
                osc,
            },
        }
    }
}

const GEN_RETRIES: usize = 10;
/// Frames with any pair closer than this fraction of the length scale are
/// re-drawn.
const MIN_DISTANCE_FRACTION: f64 = 0.1;

fn min_pair_distance(coords: &DMatrix<f64>) -> f64 {
    let m = coords.nrows();
    let mut min = f64::INFINITY;
    for i in 0..m {
        for j in (i + 1)..m {
            let d2: f64 = (coords.row(i) - coords.row(j)).norm_squared();
            min = min.min(d2.sqrt());
        }
    }
    min
}

fn max_pair_distance(coords: &DMatrix<f64>) -> f64 {
    let m = coords.nrows();
    let mut max = 0.0f64;
    for i in 0..m {
        for j in (i + 1)..m {
            let d2: f64 = (coords.row(i) - coords.row(j)).norm_squared();
            max = max.max(d2.sqrt());
        }
    }
    max
}

/// Largest credible diameter of a relaxed configuration. A start inside the
/// repulsive wall can catapult a particle thousands of length units out in a
/// single accepted descent step; such frames are re-drawn.
fn escape_threshold(kind: DatasetKind, config: &GenConfig) -> f64 {
    match kind {
        DatasetKind::Lj => 10.0 * config.lj_a * (config.m as f64).cbrt(),
        DatasetKind::Polymer => 2.0 * config.m as f64 * config.bond_target + 10.0 * config.lj_a,
    }
}

/// Largest credible relaxed energy. A bound cluster of an attractive-well
/// pair potential sits below zero; descents stuck on the modulated repulsive
/// wall end orders of magnitude above and are re-drawn. Polymer bond terms
/// are nonnegative, so chains get slack of one unit per particle.
fn energy_ceiling(kind: DatasetKind, config: &GenConfig) -> f64 {
    match kind {
        DatasetKind::Lj => 0.0,
        DatasetKind::Polymer => config.m as f64,
    }
}

fn mean_nearest_neighbor(coords: &DMatrix<f64>) -> f64 {
    let m = coords.nrows();
    let mut acc = 0.0;
    for i in 0..m {
        let mut nearest = f64::INFINITY;
        for j in 0..m {
            if i != j {
                let d2 = (coords.row(i) - coords.row(j)).norm_squared();
                nearest = nearest.min(d2.sqrt());
            }
        }
        acc += nearest;
    }
    acc / m as f64
}

fn generate_one(
    kind: DatasetKind,
    config: &GenConfig,
    osc: &OscillatorySpec,
    index: u64,
) -> Result<Frame> {
    let mut rng = crate::rng::indexed_stream(config.seed, "gen", index);
    let energy = config.energy_model_with(kind, *osc);
    for _attempt in 0..GEN_RETRIES {
        let mut coords = DMatrix::from_fn(config.m, config.n, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        // Scale so the mean nearest-neighbor distance sits near the length
        // scale; avoids the steep repulsive wall at the start.
        let nn = mean_nearest_neighbor(&coords);
        if nn == 0.0 {
            continue;
        }
        coords.scale_mut(config.lj_a / nn);
        let frame = Frame::new(coords)?;
        let relaxed = match minimize(&frame, &energy, config.em_lr, config.em_iters) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let e = relaxed.frame.energy().unwrap_or(f64::NAN);
        if !e.is_finite() || e >= energy_ceiling(kind, config) {
            continue;
        }
        if min_pair_distance(relaxed.frame.coords()) <= MIN_DISTANCE_FRACTION * config.lj_a {
            continue;
        }
        if max_pair_distance(relaxed.frame.coords()) >= escape_threshold(kind, config) {
            continue;
        }
        return Ok(relaxed.frame);
    }
    Err(Error::Degenerate(format!(
        "frame {index}: no valid configuration after {GEN_RETRIES} attempts"
    )))
}

/// Generate a labeled dataset; deterministic for a given seed regardless of
/// thread count.
pub fn generate(kind: DatasetKind, config: &GenConfig, osc: &OscillatorySpec) -> Result<Vec<Frame>> {
    config.validate()?;
    (0..config.num_samples as u64)
        .into_par_iter()
        .map(|i| generate_one(kind, config, osc, i))
        .collect()
}

/// Frames loaded from disk plus non-fatal warnings.
#[derive(Debug)]
pub struct LoadedFrames {
    pub frames: Vec<Frame>,
    pub warnings: Vec<String>,
}

/// Write frames in the text format: a `m n` header, then per frame an
/// `E <energy>` line (`E nan` when unlabeled) and m rows
/// `<type> <x_1> ... <x_n>`. 17 significant digits; loading is lossless.
pub fn save_frames(frames: &[Frame], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    if frames.is_empty() {
        return Ok(());
    }
    let m = frames[0].num_points();
    let n = frames[0].dim();
    writeln!(w, "{m} {n}")?;
    for (idx, frame) in frames.iter().enumerate() {
        if frame.num_points() != m || frame.dim() != n {
            return Err(Error::BadFrame {
                frame: idx,
                msg: format!(
                    "shape {}x{} differs from header {m}x{n}",
                    frame.num_points(),
                    frame.dim()
                ),
            });
        }
        match frame.energy() {
            Some(e) => writeln!(w, "E {e:.16e}")?,
            None => writeln!(w, "E nan")?,
        }
        for i in 0..m {
            let t = frame.types().map_or(0, |ts| ts[i]);
            write!(w, "{t}")?;
            for j in 0..n {
                write!(w, " {:.16e}", frame.coords()[(i, j)])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load frames; errors carry 1-based line numbers. Lines whose first
/// non-blank character is `#` are ignored.
pub fn load_frames(path: &Path) -> Result<LoadedFrames> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((i + 1, trimmed.to_string()));
    }

    if lines.is_empty() {
        return Ok(LoadedFrames {
            frames: Vec::new(),
            warnings: vec!["no frames: file is empty".into()],
        });
    }

    let (header_line, header) = &lines[0];
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Parse {
            line: *header_line,
            msg: format!("header must be 'm n', got '{header}'"),
        });
    }
    let m: usize = parts[0].parse().map_err(|_| Error::Parse {
        line: *header_line,
        msg: format!("non-numeric point count '{}'", parts[0]),
    })?;
    let n: usize = parts[1].parse().map_err(|_| Error::Parse {
        line: *header_line,
        msg: format!("non-numeric dimension '{}'", parts[1]),
    })?;
    if m == 0 || n == 0 {
        return Err(Error::Parse {
            line: *header_line,
            msg: format!("header must have m >= 1 and n >= 1, got {m} {n}"),
        });
    }

    let mut frames = Vec::new();
    let mut cursor = 1;
    while cursor < lines.len() {
        let frame_index = frames.len();
        let (eline, etext) = &lines[cursor];
        let mut it = etext.split_whitespace();
        if it.next() != Some("E") {
            return Err(Error::Parse {
                line: *eline,
                msg: format!(
                    "frame {frame_index}: expected energy line 'E <value>', got '{etext}'"
                ),
            });
        }
        let eval = it.next().ok_or(Error::Parse {
            line: *eline,
            msg: format!("frame {frame_index}: missing energy value"),
        })?;
        if it.next().is_some() {
            return Err(Error::Parse {
                line: *eline,
                msg: format!("frame {frame_index}: trailing fields on energy line"),
            });
        }
        let energy: f64 = eval.parse().map_err(|_| Error::Parse {
            line: *eline,
            msg: format!("frame {frame_index}: non-numeric energy '{eval}'"),
        })?;
        cursor += 1;

        let mut coords = DMatrix::zeros(m, n);
        let mut types = Vec::with_capacity(m);
        for row in 0..m {
            let Some((rline, rtext)) = lines.get(cursor) else {
                return Err(Error::BadFrame {
                    frame: frame_index,
                    msg: format!("expected {m} point rows, found {row}"),
                });
            };
            let fields: Vec<&str> = rtext.split_whitespace().collect();
            if fields.first() == Some(&"E") || fields.len() != n + 1 {
                return Err(Error::BadFrame {
                    frame: frame_index,
                    msg: format!(
                        "line {rline}: expected {m} point rows of {} fields, found {row} rows then '{rtext}'",
                        n + 1
                    ),
                });
            }
            let t: i64 = fields[0].parse().map_err(|_| Error::Parse {
                line: *rline,
                msg: format!("non-numeric type '{}'", fields[0]),
            })?;
            types.push(t);
            for (j, field) in fields[1..].iter().enumerate() {
                coords[(row, j)] = field.parse().map_err(|_| Error::Parse {
                    line: *rline,
                    msg: format!("non-numeric coordinate '{field}'"),
                })?;
            }
            cursor += 1;
        }
        let mut frame = Frame::new(coords)?.with_types(types)?;
        frame.set_energy(if energy.is_nan() { None } else { Some(energy) });
        frames.push(frame);
    }

    Ok(LoadedFrames {
        frames,
        warnings: Vec::new(),
    })
}

/// Train/test split protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitProtocol {
    /// Seeded shuffle, then 80% train / 20% test.
    Fraction80,
    /// Seeded shuffle, then 8000 train / 200 test (trajectory ingestion).
    Md,
}

impl std::str::FromStr for SplitProtocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "80/20" => Ok(SplitProtocol::Fraction80),
            "md" => Ok(SplitProtocol::Md),
            other => Err(Error::InvalidConfig(format!(
                "unknown split '{other}' (80/20 or md)"
            ))),
        }
    }
}

impl std::fmt::Display for SplitProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitProtocol::Fraction80 => f.write_str("80/20"),
            SplitProtocol::Md => f.write_str("md"),
        }
    }
}

/// Deterministic seeded split into (train, test).
pub fn split_frames(
    mut frames: Vec<Frame>,
    protocol: SplitProtocol,
    seed: u64,
) -> Result<(Vec<Frame>, Vec<Frame>)> {
    use rand::seq::SliceRandom;
    let mut rng = crate::rng::substream(seed, "split");
    frames.shuffle(&mut rng);
    match protocol {
        SplitProtocol::Fraction80 => {
            let train_len = frames.len() * 8 / 10;
            let test = frames.split_off(train_len);
            Ok((frames, test))
        }
        SplitProtocol::Md => {
            if frames.len() < 8200 {
                return Err(Error::InvalidConfig(format!(
                    "md split needs at least 8200 frames, got {}",
                    frames.len()
                )));
            }
            let mut rest = frames.split_off(8000);
            rest.truncate(200);
            Ok((frames, rest))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn two_particles(r: f64) -> Frame {
        Frame::from_rows(&[vec![0.0, 0.0, 0.0], vec![r, 0.0, 0.0]]).unwrap()
    }

    const R_MIN: f64 = 1.1224620483089822; // 2^(1/6)

    #[test]
    fn lj_energy_examples() {
        let zero = OscillatorySpec::zero();
        assert_relative_eq!(
            lj_energy(&two_particles(1.0), 1.0, &zero).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            lj_energy(&two_particles(R_MIN), 1.0, &zero).unwrap(),
            -0.25,
            epsilon = 1e-12
        );
        // Oscillatory modulation at the minimum:
        // f(-0.25) = -0.25 + sin(-2.75) + 0.3 sin(-7.5) + 0.1 sin(-12.5),
        // frozen from a high-precision evaluation.
        assert_relative_eq!(
            lj_energy(&two_particles(R_MIN), 1.0, &OscillatorySpec::default()).unwrap(),
            -0.9064287953496333,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lj_energy_rejects_coincident_particles() {
        let frame = Frame::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            lj_energy(&frame, 1.0, &OscillatorySpec::zero()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn polymer_energy_examples() {
        let zero = OscillatorySpec::zero();
        // Two bonded particles at the rest length: no non-bonded pairs, zero
        // bond energy.
        assert_relative_eq!(
            polymer_energy(&two_particles(1.0), 1.0, 1.0, &zero).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // Rest length exceeded by one: unit quadratic.
        assert_relative_eq!(
            polymer_energy(&two_particles(2.0), 1.0, 1.0, &zero).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Equilateral chain of 3 with d_hat = a = side length: bond terms
        // vanish and the single non-bonded pair sits at r = a.
        let tri = Frame::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.75f64.sqrt()],
        ])
        .unwrap();
        assert_relative_eq!(
            polymer_energy(&tri, 1.0, 1.0, &zero).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn polymer_needs_two_particles() {
        let single = Frame::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(polymer_energy(&single, 1.0, 1.0, &OscillatorySpec::zero()).is_err());
    }

    #[test]
    fn energies_invariant_under_rigid_motion_and_permutation() {
        let lj = EnergyModel::Lj {
            a: 1.0,
            osc: OscillatorySpec::default(),
        };
        for trial in 0..100u64 {
            let mut rng = crate::rng::substream(trial, "energy-inv");
            let m = 3 + (trial % 5) as usize;
            let n = 2 + (trial % 3) as usize;
            let x = DMatrix::from_fn(m, n, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let frame = Frame::new(x.clone()).unwrap();
            let e0 = lj.energy(&frame).unwrap();

            let q = crate::verify::random_orthogonal(n, trial);
            let mut moved = &x * q.transpose();
            for v in moved.iter_mut() {
                *v += 0.7;
            }
            let e1 = lj.energy(&Frame::new(moved).unwrap()).unwrap();
            assert!((e1 - e0).abs() / (1.0 + e0.abs()) <= 1e-9, "rigid {trial}");

            let perms = crate::verify::permutations(m);
            let perm = &perms[(trial as usize * 7) % perms.len()];
            let permuted =
                DMatrix::from_fn(m, n, |i, j| x[(perm[i], j)]);
            let e2 = lj.energy(&Frame::new(permuted).unwrap()).unwrap();
            assert!((e2 - e0).abs() / (1.0 + e0.abs()) <= 1e-9, "perm {trial}");
        }
    }

    #[test]
    fn polymer_energy_invariant_under_chain_reversal() {
        let model = EnergyModel::Polymer {
            d_hat: 1.0,
            a: 1.0,
            osc: OscillatorySpec::default(),
        };
        for trial in 0..20u64 {
            let mut rng = crate::rng::substream(trial, "chain");
            let m = 4;
            let x = DMatrix::from_fn(m, 3, |i, j| {
                i as f64 * 1.1 + 0.2 * rng.sample::<f64, _>(StandardNormal) + j as f64 * 0.01
            });
            let frame = Frame::new(x.clone()).unwrap();
            let reversed = DMatrix::from_fn(m, 3, |i, j| x[(m - 1 - i, j)]);
            let e0 = model.energy(&frame).unwrap();
            let e1 = model.energy(&Frame::new(reversed).unwrap()).unwrap();
            assert!((e1 - e0).abs() / (1.0 + e0.abs()) <= 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn minimize_fixed_point_at_minimum() {
        let energy = EnergyModel::Lj {
            a: 1.0,
            osc: OscillatorySpec::zero(),
        };
        let frame = two_particles(R_MIN);
        let out = minimize(&frame, &energy, 0.01, 50).unwrap();
        for (a, b) in out.frame.coords().iter().zip(frame.coords().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn minimize_two_particles_finds_the_well() {
        // Brute-force oracle: the 12-6 pair energy has its minimum at
        // r = 2^(1/6) a (grid search confirms), so relaxation from r = 1.5a
        // must land within 2%.
        let energy = EnergyModel::Lj {
            a: 1.0,
            osc: OscillatorySpec::zero(),
        };
        let (mut best_r, mut best_e) = (0.0, f64::INFINITY);
        for i in 1..4000 {
            let r = 0.8 + i as f64 * 1e-3;
            let e = lj_energy(&two_particles(r), 1.0, &OscillatorySpec::zero()).unwrap();
            if e < best_e {
                best_e = e;
                best_r = r;
            }
        }
        assert!((best_r - R_MIN).abs() < 2e-3, "oracle grid search");

        let out = minimize(&two_particles(1.5), &energy, 0.01, 500).unwrap();
        let d = (out.frame.coords().row(0) - out.frame.coords().row(1)).norm();
        assert!(
            (d - R_MIN).abs() / R_MIN <= 0.02,
            "final separation {d} vs {R_MIN}"
        );
    }

    #[test]
    fn minimize_energy_sequence_is_monotone() {
        let energy = EnergyModel::Lj {
            a: 1.0,
            osc: OscillatorySpec::default(),
        };
        for seed in 0..10u64 {
            let mut rng = crate::rng::substream(seed, "mono");
            let x = DMatrix::from_fn(4, 3, |_, _| 1.5 * rng.sample::<f64, _>(StandardNormal));
            let frame = Frame::new(x).unwrap();
            if energy.energy(&frame).is_err() {
                continue;
            }
            let out = minimize(&frame, &energy, 0.01, 100).unwrap();
            for w in out.energies.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn minimize_shrinks_gradient_norm_on_most_seeds() {
        let energy = EnergyModel::Lj {
            a: 1.0,
            osc: OscillatorySpec::zero(),
        };
        let mut improved = 0;
        let total = 20;
        for seed in 0..total {
            let mut rng = crate::rng::substream(seed, "gradnorm");
            let mut x = DMatrix::from_fn(4, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let nn = mean_nearest_neighbor(&x);
            x.scale_mut(1.0 / nn);
            let frame = Frame::new(x).unwrap();
            let g0 = energy.gradient(&frame).unwrap().norm();
            let out = minimize(&frame, &energy, 0.01, 500).unwrap();
            let g1 = energy.gradient(&out.frame).unwrap().norm();
            if g1 <= 0.1 * g0 {
                improved += 1;
            }
        }
        assert!(
            improved * 10 >= total * 9,
            "only {improved}/{total} seeds reduced the gradient norm 10x"
        );
    }

    #[test]
    fn generate_empty_and_deterministic() {
        let config = GenConfig::new(4, 3, 0, 7);
        let frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::zero()).unwrap();
        assert!(frames.is_empty());

        let config = GenConfig::new(4, 3, 12, 7);
        let a = generate(DatasetKind::Lj, &config, &OscillatorySpec::default()).unwrap();
        let b = generate(DatasetKind::Lj, &config, &OscillatorySpec::default()).unwrap();
        assert_eq!(a.len(), 12);
        for (fa, fb) in a.iter().zip(b.iter()) {
            assert_eq!(fa.energy().unwrap().to_bits(), fb.energy().unwrap().to_bits());
            for (x, y) in fa.coords().iter().zip(fb.coords().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn generated_frames_are_sane() {
        let config = GenConfig::new(4, 3, 40, 11);
        let frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::default()).unwrap();
        for f in &frames {
            assert!(f.energy().unwrap().is_finite());
            assert!(min_pair_distance(f.coords()) > 0.1 * config.lj_a);
        }

        let frames = generate(DatasetKind::Polymer, &config, &OscillatorySpec::zero()).unwrap();
        for f in &frames {
            assert!(f.energy().unwrap().is_finite());
        }
    }

    #[test]
    fn frames_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.txt");
        let config = GenConfig::new(3, 2, 5, 3);
        let mut frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::default()).unwrap();
        frames[1].set_energy(None); // unlabeled frame round-trips too
        save_frames(&frames, &path).unwrap();
        let loaded = load_frames(&path).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.frames.len(), frames.len());
        for (a, b) in frames.iter().zip(loaded.frames.iter()) {
            assert_eq!(a.energy().map(f64::to_bits), b.energy().map(f64::to_bits));
            for (x, y) in a.coords().iter().zip(b.coords().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn frames_file_errors_name_locations() {
        let dir = tempfile::tempdir().unwrap();

        // Row-count mismatch names the frame index.
        let path = dir.path().join("short.txt");
        std::fs::write(&path, "3 2\nE 1.0\n0 0.0 0.0\n0 1.0 1.0\n").unwrap();
        match load_frames(&path) {
            Err(Error::BadFrame { frame, .. }) => assert_eq!(frame, 0),
            other => panic!("expected BadFrame, got {other:?}"),
        }

        // Non-numeric coordinate names the line.
        let path = dir.path().join("nonnum.txt");
        std::fs::write(&path, "# comment\n2 2\nE 1.0\n0 0.0 zero\n0 1.0 1.0\n").unwrap();
        match load_frames(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected Parse, got {other:?}"),
        }

        // Malformed header.
        let path = dir.path().join("header.txt");
        std::fs::write(&path, "3\n").unwrap();
        assert!(matches!(load_frames(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_warns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "# nothing here\n").unwrap();
        let loaded = load_frames(&path).unwrap();
        assert!(loaded.frames.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn split_protocols() {
        let config = GenConfig::new(3, 2, 10, 5);
        let frames = generate(DatasetKind::Lj, &config, &OscillatorySpec::zero()).unwrap();
        let (train, test) = split_frames(frames.clone(), SplitProtocol::Fraction80, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);

        // Same seed, same split.
        let (train2, _) = split_frames(frames.clone(), SplitProtocol::Fraction80, 1).unwrap();
        assert_eq!(train[0], train2[0]);

        assert!(split_frames(frames, SplitProtocol::Md, 1).is_err());
    }
}
