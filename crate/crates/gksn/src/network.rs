//! Univariate-function layers, baselines, and model assembly.
//!
//! The core layer maps z to Ψ∘Φᵀ(z) + Wψ σ(Wφᵀ z): a grid of univariate
//! functions Φ feeding a second grid Ψ, plus an almost-linear rectified
//! residual path that eases optimization of the nonlinear functions. Models
//! stack such layers (or affine+ReLU layers for the MLP baseline) on top of
//! invariant features, optionally behind a permutation-pooling front end.
//! Invariance of the features makes the energy invariant; the coordinate
//! gradient (forces) is then exactly equivariant.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Expr, Scalar, Tape};
use crate::error::{Error, Result};
use crate::invariants::{featurize, featurize_rows, FeatureConfig, Frame, Metric};

/// Fixed knot span covering standardized inputs.
const KNOT_SPAN: f64 = 3.0;

/// Piecewise-linear univariate function
/// φ(x) = slope·x + Σ_b coeffs[b]·max(0, x − knots[b]).
///
/// Knots are fixed (non-learnable); coefficients and slope are learnable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateFunction {
    pub knots: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub slope: f64,
}

impl UnivariateFunction {
    pub fn new(knots: Vec<f64>, coeffs: Vec<f64>, slope: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidConfig("univariate function needs B >= 1 knots".into()));
        }
        if knots.len() != coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} knots vs {} coefficients",
                knots.len(),
                coeffs.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("knots must be strictly increasing".into()));
        }
        Ok(UnivariateFunction { knots, coeffs, slope })
    }

    /// Identity function: slope 1, all basis coefficients 0.
    pub fn identity(basis: usize) -> Self {
        UnivariateFunction {
            knots: default_knots(basis),
            coeffs: vec![0.0; basis],
            slope: 1.0,
        }
    }

    pub fn zero(basis: usize) -> Self {
        UnivariateFunction {
            knots: default_knots(basis),
            coeffs: vec![0.0; basis],
            slope: 0.0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len() + 1
    }

    pub fn eval_generic<S: Scalar>(&self, x: S) -> S {
        let mut acc = x * x.lift(self.slope);
        for (&k, &c) in self.knots.iter().zip(self.coeffs.iter()) {
            acc = acc + (x - x.lift(k)).max0() * x.lift(c);
        }
        acc
    }
}

/// B knots uniformly spaced on [-KNOT_SPAN, KNOT_SPAN] (inclusive).
pub fn default_knots(basis: usize) -> Vec<f64> {
    assert!(basis >= 1);
    if basis == 1 {
        return vec![0.0];
    }
    let step = 2.0 * KNOT_SPAN / (basis as f64 - 1.0);
    (0..basis).map(|b| -KNOT_SPAN + step * b as f64).collect()
}

/// φ(x) for a univariate function.
pub fn univariate_eval(f: &UnivariateFunction, x: f64) -> f64 {
    f.eval_generic(x)
}

/// Dense grid of univariate functions with one shared knot vector,
/// stored structure-of-arrays. Function (j, k) maps input j toward output k;
/// output k is the sum over j of function (j, k) applied to input j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionGrid {
    in_dim: usize,
    out_dim: usize,
    basis: usize,
    knots: Vec<f64>,
    /// coeffs of function (j, k) at [(j*out_dim + k)*basis ..][..basis]
    coeffs: Vec<f64>,
    /// slope of function (j, k) at j*out_dim + k
    slopes: Vec<f64>,
}

impl FunctionGrid {
    pub fn zeros(in_dim: usize, out_dim: usize, basis: usize) -> Self {
        FunctionGrid {
            in_dim,
            out_dim,
            basis,
            knots: default_knots(basis),
            coeffs: vec![0.0; in_dim * out_dim * basis],
            slopes: vec![0.0; in_dim * out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn basis(&self) -> usize {
        self.basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Copy of function (j, k).
    pub fn get(&self, j: usize, k: usize) -> UnivariateFunction {
        let f = j * self.out_dim + k;
        UnivariateFunction {
            knots: self.knots.clone(),
            coeffs: self.coeffs[f * self.basis..(f + 1) * self.basis].to_vec(),
            slope: self.slopes[f],
        }
    }

    pub fn set(&mut self, j: usize, k: usize, f: &UnivariateFunction) -> Result<()> {
        if f.knots != self.knots {
            return Err(Error::InvalidConfig("function knots differ from grid knots".into()));
        }
        if f.coeffs.len() != self.basis {
            return Err(Error::DimensionMismatch("coefficient count differs from grid basis".into()));
        }
        let idx = j * self.out_dim + k;
        self.coeffs[idx * self.basis..(idx + 1) * self.basis].copy_from_slice(&f.coeffs);
        self.slopes[idx] = f.slope;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim * (self.basis + 1)
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        let coeff_std = (2.0 / (self.in_dim as f64 * self.basis as f64)).sqrt();
        for c in &mut self.coeffs {
            *c = coeff_std * rng.sample::<f64, _>(StandardNormal);
        }
        // Random slopes decorrelate the inner channels; identical slopes
        // leave every inner sum almost equal at the start, which the
        // optimizer escapes only slowly.
        let slope_std = (1.0 / self.in_dim as f64).sqrt();
        for s in &mut self.slopes {
            *s = slope_std * rng.sample::<f64, _>(StandardNormal);
        }
    }

    /// out[k] = Σ_j φ_{jk}(z[j]); `out` must be zeroed by the caller.
    fn accumulate(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        let b = self.basis;
        for (j, &zj) in z.iter().enumerate() {
            let base = j * self.out_dim;
            for (k, o) in out.iter_mut().enumerate() {
                let f = base + k;
                let mut acc = self.slopes[f] * zj;
                let cs = &self.coeffs[f * b..(f + 1) * b];
                for (kn, &c) in self.knots.iter().zip(cs.iter()) {
                    let d = zj - kn;
                    if d > 0.0 {
                        acc += c * d;
                    }
                }
                *o += acc;
            }
        }
    }

    /// Backward pass: given inputs z and output adjoints, accumulate parameter
    /// gradients into `g` (laid out per [`Self::write_params`]) and input
    /// adjoints into `dz`.
    fn backward(&self, z: &[f64], d_out: &[f64], g: &mut [f64], dz: Option<&mut [f64]>) {
        let b = self.basis;
        let mut dz_buf = dz;
        for (j, &zj) in z.iter().enumerate() {
            let base = j * self.out_dim;
            let mut dzj = 0.0;
            for (k, &dk) in d_out.iter().enumerate() {
                if dk == 0.0 {
                    continue;
                }
                let f = base + k;
                let goff = f * (b + 1);
                let cs = &self.coeffs[f * b..(f + 1) * b];
                let mut dphi_dz = self.slopes[f];
                for (bi, (kn, &c)) in self.knots.iter().zip(cs.iter()).enumerate() {
                    let d = zj - kn;
                    if d > 0.0 {
                        g[goff + bi] += d * dk;
                        dphi_dz += c;
                    }
                }
                g[goff + b] += zj * dk;
                dzj += dphi_dz * dk;
            }
            if let Some(dz) = dz_buf.as_deref_mut() {
                dz[j] += dzj;
            }
        }
    }

    /// Tape evaluation; parameters come from `params` (canonical layout) when
    /// given, else are lifted as constants.
    fn eval_tape<'t>(
        &self,
        tape: &'t Tape,
        z: &[Expr<'t>],
        params: Option<&[Expr<'t>]>,
    ) -> Vec<Expr<'t>> {
        let b = self.basis;
        let knots: Vec<Expr<'t>> = self.knots.iter().map(|&k| tape.constant(k)).collect();
        let zero = tape.constant(0.0);
        let mut out = vec![zero; self.out_dim];
        for (j, &zj) in z.iter().enumerate() {
            let base = j * self.out_dim;
            for (k, o) in out.iter_mut().enumerate() {
                let f = base + k;
                let goff = f * (b + 1);
                let slope = match params {
                    Some(p) => p[goff + b],
                    None => tape.constant(self.slopes[f]),
                };
                let mut acc = zj * slope;
                for (bi, &kn) in knots.iter().enumerate() {
                    let c = match params {
                        Some(p) => p[goff + bi],
                        None => tape.constant(self.coeffs[f * b + bi]),
                    };
                    acc = acc + (zj - kn).max0() * c;
                }
                *o = *o + acc;
            }
        }
        out
    }

    /// Parameters in canonical order: function (j, k) major, coefficients then
    /// slope.
    fn write_params(&self, out: &mut [f64]) {
        let b = self.basis;
        for f in 0..self.in_dim * self.out_dim {
            out[f * (b + 1)..f * (b + 1) + b].copy_from_slice(&self.coeffs[f * b..(f + 1) * b]);
            out[f * (b + 1) + b] = self.slopes[f];
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let b = self.basis;
        for f in 0..self.in_dim * self.out_dim {
            self.coeffs[f * b..(f + 1) * b].copy_from_slice(&src[f * (b + 1)..f * (b + 1) + b]);
            self.slopes[f] = src[f * (b + 1) + b];
        }
    }

    /// Smallest |input - knot| over all functions, for kink avoidance in
    /// finite-difference checks.
    fn min_knot_gap(&self, z: &[f64]) -> f64 {
        let mut gap = f64::INFINITY;
        for &zj in z {
            for &k in &self.knots {
                gap = gap.min((zj - k).abs());
            }
        }
        gap
    }
}

/// One superposition layer: Ψ∘Φᵀ(z) + Wψ relu(Wφᵀ z).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GksnLayer {
    /// Inner functions Φ: grid over (input j, inner k).
    pub phi: FunctionGrid,
    /// Outer functions Ψ: grid over (inner k, output i).
    pub psi: FunctionGrid,
    /// Residual input weights, in_dim × resid_dim, entry (j, k) at j*resid+k.
    pub w_phi: Vec<f64>,
    /// Residual output weights, out_dim × resid_dim, entry (i, k) at i*resid+k.
    pub w_psi: Vec<f64>,
}

impl GksnLayer {
    /// Layer with Φ: in_dim→inner_dim, Ψ: inner_dim→out_dim; the residual
    /// width equals out_dim.
    pub fn zeros(in_dim: usize, inner_dim: usize, out_dim: usize, basis: usize) -> Self {
        GksnLayer {
            phi: FunctionGrid::zeros(in_dim, inner_dim, basis),
            psi: FunctionGrid::zeros(inner_dim, out_dim, basis),
            w_phi: vec![0.0; in_dim * out_dim],
            w_psi: vec![0.0; out_dim * out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.phi.in_dim
    }

    pub fn inner_dim(&self) -> usize {
        self.phi.out_dim
    }

    pub fn out_dim(&self) -> usize {
        self.psi.out_dim
    }

    /// Residual width k′.
    pub fn resid_dim(&self) -> usize {
        if self.in_dim() == 0 {
            0
        } else {
            self.w_phi.len() / self.in_dim()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.phi.out_dim != self.psi.in_dim {
            return Err(Error::DimensionMismatch(format!(
                "phi outputs {} but psi expects {}",
                self.phi.out_dim, self.psi.in_dim
            )));
        }
        let kp = self.resid_dim();
        if self.w_phi.len() != self.in_dim() * kp || self.w_psi.len() != self.out_dim() * kp {
            return Err(Error::DimensionMismatch("residual weight shapes".into()));
        }
        let finite = self.phi.coeffs.iter().chain(self.phi.slopes.iter())
            .chain(self.psi.coeffs.iter()).chain(self.psi.slopes.iter())
            .chain(self.w_phi.iter()).chain(self.w_psi.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(())
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.phi.init(rng);
        self.psi.init(rng);
        let w_phi_std = (2.0 / self.in_dim() as f64).sqrt();
        for w in &mut self.w_phi {
            *w = w_phi_std * rng.sample::<f64, _>(StandardNormal);
        }
        let w_psi_std = (2.0 / self.resid_dim().max(1) as f64).sqrt();
        for w in &mut self.w_psi {
            *w = w_psi_std * rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn num_params(&self) -> usize {
        self.phi.num_params() + self.psi.num_params() + self.w_phi.len() + self.w_psi.len()
    }

    /// Forward into preallocated buffers. `u` has inner_dim entries, `r`
    /// resid_dim entries, `out` out_dim entries.
    fn forward_into(&self, z: &[f64], u: &mut [f64], r: &mut [f64], out: &mut [f64]) {
        u.fill(0.0);
        self.phi.accumulate(z, u);
        out.fill(0.0);
        self.psi.accumulate(u, out);

        let kp = self.resid_dim();
        r.fill(0.0);
        for (j, &zj) in z.iter().enumerate() {
            if zj == 0.0 {
                continue;
            }
            let row = &self.w_phi[j * kp..(j + 1) * kp];
            for (k, &w) in row.iter().enumerate() {
                r[k] += w * zj;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w_psi[i * kp..(i + 1) * kp];
            let mut acc = 0.0;
            for (k, &w) in row.iter().enumerate() {
                if r[k] > 0.0 {
                    acc += w * r[k];
                }
            }
            *o += acc;
        }
    }

    /// Backward pass. `z`, `u`, `r` are the cached forward values; gradients
    /// go to `g` (canonical layer layout), input adjoints to `dz`.
    fn backward(&self, z: &[f64], u: &[f64], r: &[f64], d_out: &[f64], g: &mut [f64], dz: Option<&mut [f64]>) {
        let phi_n = self.phi.num_params();
        let psi_n = self.psi.num_params();
        let kp = self.resid_dim();

        // KST path: psi, then phi.
        let mut du = vec![0.0; self.inner_dim()];
        let (g_phi, rest) = g.split_at_mut(phi_n);
        let (g_psi, rest) = rest.split_at_mut(psi_n);
        let (g_wphi, g_wpsi) = rest.split_at_mut(self.w_phi.len());

        self.psi.backward(u, d_out, g_psi, Some(&mut du));
        let mut dz_local = vec![0.0; self.in_dim()];
        self.phi.backward(z, &du, g_phi, Some(&mut dz_local));

        // Residual path.
        let mut dr = vec![0.0; kp];
        for (i, &di) in d_out.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            let row = &self.w_psi[i * kp..(i + 1) * kp];
            let grow = &mut g_wpsi[i * kp..(i + 1) * kp];
            for k in 0..kp {
                if r[k] > 0.0 {
                    grow[k] += r[k] * di;
                    dr[k] += row[k] * di;
                }
            }
        }
        for (j, &zj) in z.iter().enumerate() {
            let row = &self.w_phi[j * kp..(j + 1) * kp];
            let grow = &mut g_wphi[j * kp..(j + 1) * kp];
            let mut acc = 0.0;
            for k in 0..kp {
                grow[k] += zj * dr[k];
                acc += row[k] * dr[k];
            }
            dz_local[j] += acc;
        }

        if let Some(dz) = dz {
            for (d, s) in dz.iter_mut().zip(dz_local.iter()) {
                *d += s;
            }
        }
    }

    fn eval_tape<'t>(
        &self,
        tape: &'t Tape,
        z: &[Expr<'t>],
        params: Option<&[Expr<'t>]>,
    ) -> Vec<Expr<'t>> {
        let phi_n = self.phi.num_params();
        let psi_n = self.psi.num_params();
        let (p_phi, p_psi, p_wphi, p_wpsi) = match params {
            Some(p) => {
                let (a, rest) = p.split_at(phi_n);
                let (b, rest) = rest.split_at(psi_n);
                let (c, d) = rest.split_at(self.w_phi.len());
                (Some(a), Some(b), Some(c), Some(d))
            }
            None => (None, None, None, None),
        };
        let u = self.phi.eval_tape(tape, z, p_phi);
        let mut out = self.psi.eval_tape(tape, &u, p_psi);

        let kp = self.resid_dim();
        let zero = tape.constant(0.0);
        let mut r = vec![zero; kp];
        for (j, &zj) in z.iter().enumerate() {
            for k in 0..kp {
                let w = match p_wphi {
                    Some(p) => p[j * kp + k],
                    None => tape.constant(self.w_phi[j * kp + k]),
                };
                r[k] = r[k] + w * zj;
            }
        }
        let s: Vec<Expr<'t>> = r.iter().map(|&rk| rk.max0()).collect();
        for (i, o) in out.iter_mut().enumerate() {
            for k in 0..kp {
                let w = match p_wpsi {
                    Some(p) => p[i * kp + k],
                    None => tape.constant(self.w_psi[i * kp + k]),
                };
                *o = *o + w * s[k];
            }
        }
        out
    }

    fn write_params(&self, out: &mut [f64]) {
        let phi_n = self.phi.num_params();
        let psi_n = self.psi.num_params();
        self.phi.write_params(&mut out[..phi_n]);
        self.psi.write_params(&mut out[phi_n..phi_n + psi_n]);
        let off = phi_n + psi_n;
        out[off..off + self.w_phi.len()].copy_from_slice(&self.w_phi);
        out[off + self.w_phi.len()..off + self.w_phi.len() + self.w_psi.len()]
            .copy_from_slice(&self.w_psi);
    }

    fn read_params(&mut self, src: &[f64]) {
        let phi_n = self.phi.num_params();
        let psi_n = self.psi.num_params();
        self.phi.read_params(&src[..phi_n]);
        self.psi.read_params(&src[phi_n..phi_n + psi_n]);
        let off = phi_n + psi_n;
        let (wp, ws) = (self.w_phi.len(), self.w_psi.len());
        self.w_phi.copy_from_slice(&src[off..off + wp]);
        self.w_psi.copy_from_slice(&src[off + wp..off + wp + ws]);
    }
}

/// Forward evaluation of one superposition layer.
pub fn gksn_forward(layer: &GksnLayer, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != layer.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "layer expects {} inputs, got {}",
            layer.in_dim(),
            z.len()
        )));
    }
    layer.validate()?;
    let mut u = vec![0.0; layer.inner_dim()];
    let mut r = vec![0.0; layer.resid_dim()];
    let mut out = vec![0.0; layer.out_dim()];
    layer.forward_into(z, &mut u, &mut r, &mut out);
    Ok(out)
}

/// Affine layer with optional rectification (MLP baseline building block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major out_dim × in_dim.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub relu: bool,
}

impl AffineLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, relu: bool) -> Self {
        AffineLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            relu,
        }
    }

    fn init(&mut self, rng: &mut ChaCha8Rng) {
        let std = (2.0 / self.in_dim as f64).sqrt();
        for w in &mut self.weights {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        // biases start at zero
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn forward_into(&self, z: &[f64], pre: &mut [f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, zj) in row.iter().zip(z.iter()) {
                acc += w * zj;
            }
            pre[o] = acc;
            out[o] = if self.relu { acc.max0() } else { acc };
        }
    }

    fn backward(&self, z: &[f64], pre: &[f64], d_out: &[f64], g: &mut [f64], dz: Option<&mut [f64]>) {
        let (g_w, g_b) = g.split_at_mut(self.weights.len());
        let mut dz_local = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let mut d = d_out[o];
            if self.relu && pre[o] <= 0.0 {
                d = 0.0;
            }
            if d == 0.0 {
                continue;
            }
            g_b[o] += d;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut g_w[o * self.in_dim..(o + 1) * self.in_dim];
            for j in 0..self.in_dim {
                grow[j] += z[j] * d;
                dz_local[j] += row[j] * d;
            }
        }
        if let Some(dz) = dz {
            for (d, s) in dz.iter_mut().zip(dz_local.iter()) {
                *d += s;
            }
        }
    }

    fn eval_tape<'t>(
        &self,
        tape: &'t Tape,
        z: &[Expr<'t>],
        params: Option<&[Expr<'t>]>,
    ) -> Vec<Expr<'t>> {
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let mut acc = match params {
                Some(p) => p[self.weights.len() + o],
                None => tape.constant(self.biases[o]),
            };
            for j in 0..self.in_dim {
                let w = match params {
                    Some(p) => p[o * self.in_dim + j],
                    None => tape.constant(self.weights[o * self.in_dim + j]),
                };
                acc = acc + w * z[j];
            }
            out.push(if self.relu { acc.max0() } else { acc });
        }
        out
    }

    fn write_params(&self, out: &mut [f64]) {
        out[..self.weights.len()].copy_from_slice(&self.weights);
        out[self.weights.len()..].copy_from_slice(&self.biases);
    }

    fn read_params(&mut self, src: &[f64]) {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.biases.copy_from_slice(&src[nw..]);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Gksn(GksnLayer),
    Affine(AffineLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Gksn(l) => l.in_dim(),
            Layer::Affine(l) => l.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Gksn(l) => l.out_dim(),
            Layer::Affine(l) => l.out_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Gksn(l) => l.num_params(),
            Layer::Affine(l) => l.num_params(),
        }
    }
}

/// Per-feature affine input normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit on rows of raw inputs; degenerate dimensions keep std 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(mean.iter()).zip(row.iter()) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(self.mean.iter().zip(self.std.iter()))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }
}

/// Min-max target normalization fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputScaler {
    pub min: f64,
    pub max: f64,
}

impl OutputScaler {
    pub fn identity() -> Self {
        OutputScaler { min: 0.0, max: 1.0 }
    }

    pub fn fit(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidConfig("cannot fit scaler on empty targets".into()));
        }
        let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::NonFinite("targets".into()));
        }
        Ok(OutputScaler { min, max })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (y - self.min) / span
        } else {
            0.5
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            y * span + self.min
        } else {
            self.min
        }
    }
}

/// Permutation-pooling front end: a shared bank of univariate functions
/// applied to every per-pair scalar and summed, so the head input no longer
/// depends on point order or count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermPool {
    pub bank: Vec<UnivariateFunction>,
    /// Scalar standardization (mean, std) of bank inputs.
    pub input_mean: f64,
    pub input_std: f64,
}

impl PermPool {
    pub fn width(&self) -> usize {
        self.bank.len()
    }

    pub fn num_params(&self) -> usize {
        self.bank.iter().map(|f| f.num_params()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kan,
    Mlp,
}

/// Architecture hyper-parameters independent of data shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: ModelKind,
    /// Hidden widths; the output width 1 is implicit.
    pub hidden: Vec<usize>,
    /// Basis functions per univariate function (KAN only).
    pub basis: usize,
    /// Bank width of the permutation-pooling front end, when enabled.
    pub perm_pool: Option<usize>,
}

impl NetworkConfig {
    pub fn kan() -> Self {
        NetworkConfig {
            kind: ModelKind::Kan,
            hidden: vec![16, 16],
            basis: 8,
            perm_pool: None,
        }
    }

    pub fn mlp() -> Self {
        NetworkConfig {
            kind: ModelKind::Mlp,
            hidden: vec![128, 128],
            basis: 8,
            perm_pool: None,
        }
    }

    pub fn with_perm_pool(mut self, width: usize) -> Self {
        self.perm_pool = Some(width);
        self
    }

    /// Size presets explored in the hyper-parameter search: hidden width per
    /// layer for (KAN, MLP).
    pub fn preset(kind: ModelKind, size: &str) -> Result<Self> {
        let (kan_w, mlp_w) = match size {
            "small" => (16, 128),
            "medium" => (32, 256),
            "large" => (64, 512),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown size preset '{other}' (small/medium/large)"
                )))
            }
        };
        let mut cfg = match kind {
            ModelKind::Kan => NetworkConfig::kan(),
            ModelKind::Mlp => NetworkConfig::mlp(),
        };
        let w = match kind {
            ModelKind::Kan => kan_w,
            ModelKind::Mlp => mlp_w,
        };
        cfg.hidden = vec![w, w];
        Ok(cfg)
    }
}

/// Default bank width for permutation pooling.
pub const DEFAULT_POOL_WIDTH: usize = 16;

/// A trainable energy model over invariant features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub layers: Vec<Layer>,
    pub perm_pool: Option<PermPool>,
    pub standardizer: Standardizer,
    pub output_scaler: OutputScaler,
    pub feature_config: FeatureConfig,
    pub metric: Metric,
}

impl Model {
    /// Build a randomly initialized model for frames with m points in n
    /// dimensions.
    pub fn build(
        m: usize,
        n: usize,
        feature_config: FeatureConfig,
        metric: Metric,
        net: &NetworkConfig,
        seed: u64,
    ) -> Result<Self> {
        feature_config.validate(m, n)?;
        metric.check_dim(n)?;
        if net.perm_pool.is_some() && feature_config.node_index {
            return Err(Error::InvalidConfig(
                "node_index breaks permutation invariance; disable it for pooled models".into(),
            ));
        }
        if net.basis == 0 {
            return Err(Error::InvalidConfig("basis must be >= 1".into()));
        }

        let mut rng = crate::rng::substream(seed, "init");

        let perm_pool = match net.perm_pool {
            None => None,
            Some(width) => {
                if width == 0 {
                    return Err(Error::InvalidConfig("pool width must be >= 1".into()));
                }
                let coeff_std = (2.0 / net.basis as f64).sqrt();
                let bank = (0..width)
                    .map(|_| UnivariateFunction {
                        knots: default_knots(net.basis),
                        coeffs: (0..net.basis)
                            .map(|_| coeff_std * rng.sample::<f64, _>(StandardNormal))
                            .collect(),
                        slope: 1.0,
                    })
                    .collect();
                Some(PermPool {
                    bank,
                    input_mean: 0.0,
                    input_std: 1.0,
                })
            }
        };

        let input_dim = match &perm_pool {
            Some(p) => p.width(),
            None => feature_config.feature_len(m, n),
        };

        let mut widths = Vec::with_capacity(net.hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(&net.hidden);
        widths.push(1);

        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (idx, w) in widths.windows(2).enumerate() {
            let layer = match net.kind {
                ModelKind::Kan => {
                    let mut l = GksnLayer::zeros(w[0], w[1], w[1], net.basis);
                    l.init(&mut rng);
                    Layer::Gksn(l)
                }
                ModelKind::Mlp => {
                    // hidden layers rectified, output layer linear
                    let mut l = AffineLayer::zeros(w[0], w[1], idx + 1 < n_layers);
                    l.init(&mut rng);
                    Layer::Affine(l)
                }
            };
            layers.push(layer);
        }

        let model = Model {
            kind: net.kind,
            layers,
            perm_pool,
            standardizer: Standardizer::identity(input_dim),
            output_scaler: OutputScaler::identity(),
            feature_config,
            metric,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let mut dim = self.input_dim();
        for layer in &self.layers {
            if layer.in_dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer expects {} inputs, previous width is {}",
                    layer.in_dim(),
                    dim
                )));
            }
            if let Layer::Gksn(l) = layer {
                l.validate()?;
            }
            dim = layer.out_dim();
        }
        if dim != 1 {
            return Err(Error::DimensionMismatch(format!(
                "model must end in one output, ends in {dim}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match &self.perm_pool {
            Some(p) => p.width(),
            None => self
                .layers
                .first()
                .map(|l| l.in_dim())
                .unwrap_or(0),
        }
    }

    /// Featurization config actually used: pooled models always pool over the
    /// quadratic pair grid, which is what makes them permutation invariant.
    pub fn effective_config(&self) -> FeatureConfig {
        let mut cfg = self.feature_config.clone();
        if self.perm_pool.is_some() {
            cfg.linear = false;
        }
        cfg
    }

    /// Exact count of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>()
            + self.perm_pool.as_ref().map_or(0, |p| p.num_params())
    }

    /// Flatten all learnable parameters in canonical order: pooling bank
    /// first, then layers in order (Φ grid, Ψ grid, Wφ, Wψ — each grid
    /// function-major, coefficients then slope).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        let mut off = 0;
        if let Some(pool) = &self.perm_pool {
            for f in &pool.bank {
                let b = f.coeffs.len();
                out[off..off + b].copy_from_slice(&f.coeffs);
                out[off + b] = f.slope;
                off += b + 1;
            }
        }
        for layer in &self.layers {
            let n = layer.num_params();
            match layer {
                Layer::Gksn(l) => l.write_params(&mut out[off..off + n]),
                Layer::Affine(l) => l.write_params(&mut out[off..off + n]),
            }
            off += n;
        }
        out
    }

    pub fn assign_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters provided for a model with {}",
                src.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        if let Some(pool) = &mut self.perm_pool {
            for f in &mut pool.bank {
                let b = f.coeffs.len();
                f.coeffs.copy_from_slice(&src[off..off + b]);
                f.slope = src[off + b];
                off += b + 1;
            }
        }
        for layer in &mut self.layers {
            let n = layer.num_params();
            match layer {
                Layer::Gksn(l) => l.read_params(&src[off..off + n]),
                Layer::Affine(l) => l.read_params(&src[off..off + n]),
            }
            off += n;
        }
        Ok(())
    }

    /// Pooled bank input: standardized per-pair scalars sorted by value.
    /// Sorting fixes the accumulation order independently of row order, which
    /// makes the pooled sums bit-stable under permutations.
    fn pool_scalars(&self, features: &[f64]) -> Vec<f64> {
        let pool = self.perm_pool.as_ref().expect("pooled model");
        let mut scalars: Vec<f64> = features
            .iter()
            .map(|&s| (s - pool.input_mean) / pool.input_std)
            .collect();
        scalars.sort_by(f64::total_cmp);
        scalars
    }

    fn pooled_vector(&self, sorted_scalars: &[f64]) -> Vec<f64> {
        let pool = self.perm_pool.as_ref().expect("pooled model");
        pool.bank
            .iter()
            .map(|f| {
                let mut acc = 0.0;
                for &s in sorted_scalars {
                    acc += univariate_eval(f, s);
                }
                acc
            })
            .collect()
    }

    /// Head input for a raw feature vector: the pooled bank image for pooled
    /// models, the features themselves otherwise.
    pub fn head_input(&self, features: &[f64]) -> Vec<f64> {
        match &self.perm_pool {
            Some(_) => {
                let sorted = self.pool_scalars(features);
                self.pooled_vector(&sorted)
            }
            None => features.to_vec(),
        }
    }

    /// Scalar output from a raw invariant feature vector (the output stays in
    /// normalized target space; see [`OutputScaler`]).
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if self.perm_pool.is_none() && features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        let head_input = self.head_input(features);
        let mut std_input = Vec::new();
        self.standardizer.apply(&head_input, &mut std_input);
        Ok(self.forward_layers(&std_input))
    }

    fn forward_layers(&self, std_input: &[f64]) -> f64 {
        let mut cur = std_input.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_dim()];
            match layer {
                Layer::Gksn(l) => {
                    let mut u = vec![0.0; l.inner_dim()];
                    let mut r = vec![0.0; l.resid_dim()];
                    l.forward_into(&cur, &mut u, &mut r, &mut out);
                }
                Layer::Affine(l) => {
                    let mut pre = vec![0.0; l.out_dim];
                    l.forward_into(&cur, &mut pre, &mut out);
                }
            }
            cur = out;
        }
        cur[0]
    }

    /// Scalar output for a frame: featurize (with the effective config), pool
    /// if configured, run the head.
    pub fn forward_frame(&self, frame: &Frame) -> Result<f64> {
        let feats = featurize(frame, &self.effective_config(), &self.metric)?;
        self.forward(&feats.values)
    }

    /// Tape forward from feature expressions. `params`, when given, must be
    /// leaf variables in canonical flat order (see [`Model::flatten_params`]).
    pub fn forward_tape<'t>(
        &self,
        tape: &'t Tape,
        features: &[Expr<'t>],
        params: Option<&[Expr<'t>]>,
    ) -> Expr<'t> {
        let mut off = 0;
        let head_input: Vec<Expr<'t>> = match &self.perm_pool {
            Some(pool) => {
                let inv_std = 1.0 / pool.input_std;
                let mut scalars: Vec<Expr<'t>> = features
                    .iter()
                    .map(|&s| (s - s.lift(pool.input_mean)) * s.lift(inv_std))
                    .collect();
                scalars.sort_by(|a, b| a.value().total_cmp(&b.value()));
                let b = pool.bank.first().map_or(0, |f| f.coeffs.len());
                let out = pool
                    .bank
                    .iter()
                    .enumerate()
                    .map(|(q, f)| {
                        let knots: Vec<Expr<'t>> =
                            f.knots.iter().map(|&k| tape.constant(k)).collect();
                        let base = q * (b + 1);
                        let slope = match params {
                            Some(p) => p[base + b],
                            None => tape.constant(f.slope),
                        };
                        let mut acc = tape.constant(0.0);
                        for &s in &scalars {
                            let mut v = s * slope;
                            for (bi, &kn) in knots.iter().enumerate() {
                                let c = match params {
                                    Some(p) => p[base + bi],
                                    None => tape.constant(f.coeffs[bi]),
                                };
                                v = v + (s - kn).max0() * c;
                            }
                            acc = acc + v;
                        }
                        acc
                    })
                    .collect();
                off += pool.num_params();
                out
            }
            None => features.to_vec(),
        };

        let mut cur: Vec<Expr<'t>> = head_input
            .iter()
            .zip(self.standardizer.mean.iter().zip(self.standardizer.std.iter()))
            .map(|(&v, (&m, &s))| (v - v.lift(m)) * v.lift(1.0 / s))
            .collect();

        for layer in &self.layers {
            let n = layer.num_params();
            let p = params.map(|p| &p[off..off + n]);
            cur = match layer {
                Layer::Gksn(l) => l.eval_tape(tape, &cur, p),
                Layer::Affine(l) => l.eval_tape(tape, &cur, p),
            };
            off += n;
        }
        cur[0]
    }

    /// Smallest distance from any univariate-function input to its nearest
    /// knot during a forward pass; used to re-sample kink collisions before
    /// finite-difference checks.
    pub fn min_knot_gap(&self, features: &[f64]) -> f64 {
        let mut gap = f64::INFINITY;
        let head_input = match &self.perm_pool {
            Some(pool) => {
                let sorted = self.pool_scalars(features);
                for f in &pool.bank {
                    for &s in &sorted {
                        for &k in &f.knots {
                            gap = gap.min((s - k).abs());
                        }
                    }
                }
                self.pooled_vector(&sorted)
            }
            None => features.to_vec(),
        };
        let mut std_input = Vec::new();
        self.standardizer.apply(&head_input, &mut std_input);
        let mut cur = std_input;
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_dim()];
            match layer {
                Layer::Gksn(l) => {
                    gap = gap.min(l.phi.min_knot_gap(&cur));
                    let mut u = vec![0.0; l.inner_dim()];
                    let mut r = vec![0.0; l.resid_dim()];
                    l.forward_into(&cur, &mut u, &mut r, &mut out);
                    gap = gap.min(l.psi.min_knot_gap(&u));
                    // residual kinks
                    for &rk in &r {
                        gap = gap.min(rk.abs());
                    }
                }
                Layer::Affine(l) => {
                    let mut pre = vec![0.0; l.out_dim];
                    l.forward_into(&cur, &mut pre, &mut out);
                    if l.relu {
                        for &p in &pre {
                            gap = gap.min(p.abs());
                        }
                    }
                }
            }
            cur = out;
        }
        gap
    }
}

/// Reusable buffers and cached activations for the analytic train-time
/// forward/backward pair.
pub struct Workspace {
    /// Input of each layer; acts[0] is the standardized head input.
    acts: Vec<Vec<f64>>,
    /// Inner sums u per GKSN layer (empty for affine; holds pre-activations
    /// for affine layers).
    inner: Vec<Vec<f64>>,
    /// Residual pre-activations per GKSN layer.
    resid: Vec<Vec<f64>>,
    d_cur: Vec<f64>,
    d_next: Vec<f64>,
    /// Sorted standardized bank input and pooled raw vector (pooled models).
    pool_scalars: Vec<f64>,
    pool_out: Vec<f64>,
    std_input: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &Model) -> Self {
        let mut acts = Vec::with_capacity(model.layers.len() + 1);
        acts.push(vec![0.0; model.input_dim()]);
        let mut inner = Vec::with_capacity(model.layers.len());
        let mut resid = Vec::with_capacity(model.layers.len());
        let mut max_w = model.input_dim();
        for layer in &model.layers {
            acts.push(vec![0.0; layer.out_dim()]);
            match layer {
                Layer::Gksn(l) => {
                    inner.push(vec![0.0; l.inner_dim()]);
                    resid.push(vec![0.0; l.resid_dim()]);
                }
                Layer::Affine(l) => {
                    inner.push(vec![0.0; l.out_dim]);
                    resid.push(Vec::new());
                }
            }
            max_w = max_w.max(layer.out_dim());
        }
        Workspace {
            acts,
            inner,
            resid,
            d_cur: vec![0.0; max_w],
            d_next: vec![0.0; max_w],
            pool_scalars: Vec::new(),
            pool_out: Vec::new(),
            std_input: Vec::new(),
        }
    }
}

impl Model {
    /// Forward pass caching intermediates for [`Model::backward`].
    ///
    /// `features` is the raw invariant feature vector of one sample.
    pub fn forward_cached(&self, features: &[f64], ws: &mut Workspace) -> f64 {
        let head_input: &[f64] = match &self.perm_pool {
            Some(_) => {
                ws.pool_scalars = self.pool_scalars(features);
                ws.pool_out = self.pooled_vector(&ws.pool_scalars);
                &ws.pool_out
            }
            None => features,
        };
        self.standardizer.apply(head_input, &mut ws.std_input);
        ws.acts[0].copy_from_slice(&ws.std_input);
        for (idx, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(idx + 1);
            let z = &head[idx];
            let out = &mut tail[0];
            match layer {
                Layer::Gksn(l) => {
                    l.forward_into(z, &mut ws.inner[idx], &mut ws.resid[idx], out);
                }
                Layer::Affine(l) => {
                    l.forward_into(z, &mut ws.inner[idx], out);
                }
            }
        }
        ws.acts[self.layers.len()][0]
    }

    /// Accumulate parameter gradients of `d_out * output` into `grads`
    /// (canonical flat layout). Must follow a [`Model::forward_cached`] call
    /// on the same workspace.
    pub fn backward(&self, ws: &mut Workspace, d_out: f64, grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.param_count());
        let n_layers = self.layers.len();
        ws.d_cur.fill(0.0);
        ws.d_cur[0] = d_out;

        // Layer parameter offsets (bank params first).
        let bank_n = self.perm_pool.as_ref().map_or(0, |p| p.num_params());
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = bank_n;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.num_params();
        }

        for idx in (0..n_layers).rev() {
            let layer = &self.layers[idx];
            let n = layer.num_params();
            let g = &mut grads[offsets[idx]..offsets[idx] + n];
            let z = &ws.acts[idx];
            let need_dz = idx > 0 || self.perm_pool.is_some();
            ws.d_next[..z.len()].iter_mut().for_each(|v| *v = 0.0);
            let d_out_slice = &ws.d_cur[..layer.out_dim()];
            {
                let dz = if need_dz {
                    Some(&mut ws.d_next[..z.len()])
                } else {
                    None
                };
                match layer {
                    Layer::Gksn(l) => {
                        l.backward(z, &ws.inner[idx], &ws.resid[idx], d_out_slice, g, dz)
                    }
                    Layer::Affine(l) => l.backward(z, &ws.inner[idx], d_out_slice, g, dz),
                }
            }
            std::mem::swap(&mut ws.d_cur, &mut ws.d_next);
        }

        // Through the head standardizer into the pooling bank.
        if let Some(pool) = &self.perm_pool {
            let width = pool.width();
            let d_pool: Vec<f64> = ws.d_cur[..width]
                .iter()
                .zip(self.standardizer.std.iter())
                .map(|(d, s)| d / s)
                .collect();
            let b = pool.bank.first().map_or(0, |f| f.coeffs.len());
            for (q, f) in pool.bank.iter().enumerate() {
                let dq = d_pool[q];
                if dq == 0.0 {
                    continue;
                }
                let base = q * (b + 1);
                for &s in &ws.pool_scalars {
                    grads[base + b] += s * dq;
                    for (bi, &kn) in f.knots.iter().enumerate() {
                        let d = s - kn;
                        if d > 0.0 {
                            grads[base + bi] += d * dq;
                        }
                    }
                }
            }
        }
    }
}

/// Permutation-pooled front-end features of a frame: for each bank entry q,
/// the sum of q applied to every per-pair scalar.
///
/// Requires `node_index = false`; the pair grid is always the quadratic one.
pub fn pooled_features(
    frame: &Frame,
    bank: &[UnivariateFunction],
    config: &FeatureConfig,
    metric: &Metric,
) -> Result<Vec<f64>> {
    if config.node_index {
        return Err(Error::InvalidConfig(
            "node_index breaks permutation invariance; disable it for pooling".into(),
        ));
    }
    let mut cfg = config.clone();
    cfg.linear = false;
    let feats = featurize(frame, &cfg, metric)?;
    let mut scalars = feats.values;
    scalars.sort_by(f64::total_cmp);
    Ok(bank
        .iter()
        .map(|f| {
            let mut acc = 0.0;
            for &s in &scalars {
                acc += univariate_eval(f, s);
            }
            acc
        })
        .collect())
}

/// Negated coordinate gradient of the model energy: forces are exactly
/// equivariant because the energy is built from invariants.
pub fn forces(model: &Model, frame: &Frame) -> Result<DMatrix<f64>> {
    let cfg = model.effective_config();
    let feats = featurize(frame, &cfg, &model.metric)?;
    if feats.degenerate {
        return Err(Error::Degenerate(
            "cos/sin featurization hit a zero-norm pair; forces undefined".into(),
        ));
    }
    let m = frame.num_points();
    let n = frame.dim();
    let tape = Tape::with_capacity(1 << 16);
    let rows: Vec<Vec<Expr<'_>>> = (0..m)
        .map(|i| (0..n).map(|j| tape.var(frame.coords()[(i, j)])).collect())
        .collect();
    let (feat_exprs, _) = featurize_rows(&rows, frame.types(), &cfg, &model.metric);
    let energy = model.forward_tape(&tape, &feat_exprs, None);
    let grads = tape.backward(energy)?;
    Ok(DMatrix::from_fn(m, n, |i, j| -grads.wrt(rows[i][j])))
}

/// Model naming mirroring the flag notation: symmetry prefix, kind, then
/// (node_index, linear) as T/F.
pub fn model_label(model: &Model) -> String {
    let sym = match model.metric {
        Metric::Minkowski => "O(1,n-1)",
        _ => "O(n)",
    };
    let pool = if model.perm_pool.is_some() { "pi " } else { "" };
    let kind = match model.kind {
        ModelKind::Kan => "KAN",
        ModelKind::Mlp => "MLP",
    };
    let flag = |b: bool| if b { "T" } else { "F" };
    format!(
        "{pool}{sym} {kind} ({},{})",
        flag(model.feature_config.node_index),
        flag(model.feature_config.linear)
    )
}

/// Versioned checkpoint container.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub label: String,
    pub model: Model,
    pub train_seed: Option<u64>,
    pub split: Option<String>,
    pub huber_delta: f64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        let label = model_label(&model);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            label,
            model,
            train_seed: None,
            split: None,
            huber_delta: 1.0,
        }
    }
}

/// Save a checkpoint; floating-point values round-trip exactly.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string_pretty(ckpt)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    ckpt.model.validate()?;
    Ok(ckpt)
}
