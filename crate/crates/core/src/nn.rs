//! Dense multilayer perceptrons with a fused forward-tangent pass.
//!
//! Every network in the model is a plain MLP whose parameters live in a flat
//! slice. Rows of an activation matrix are samples. A forward pass may carry
//! `K` tangent blocks after the value rows (row layout `[values; tangent_0;
//! ...; tangent_{K-1}]`, each block `N` rows tall). Tangents propagate the
//! input Jacobian through the network so that the spatial gradient of an
//! output is itself an output, and [`Mlp::backward`] differentiates through
//! both the values and the tangents. That second-order path is what lets the
//! eikonal term and the gradient-conditioned color heads train the SDF.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Floating point scalar usable by the networks.
pub trait Real:
    Float
    + FloatConst
    + Default
    + Debug
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping `m×k`,
    /// `k×n` and `m×n` regions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn lit(v: f64) -> f32 {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn lit(v: f64) -> f64 {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Horizontal concatenation `[self | other]`, each entry scaled by `scale`.
    pub fn hcat_scaled(&self, other: &Matrix<T>, scale: T) -> Matrix<T> {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            let dst = out.row_mut(r);
            for (d, &s) in dst[..self.cols].iter_mut().zip(self.row(r)) {
                *d = s * scale;
            }
            for (d, &s) in dst[self.cols..].iter_mut().zip(other.row(r)) {
                *d = s * scale;
            }
        }
        out
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = a · wᵀ` where `w` is `out.cols × a.cols`, row-major.
fn matmul_a_wt<T: Real>(a: &Matrix<T>, w: &[T], out: &mut Matrix<T>) {
    let (m, k, n) = (a.rows, a.cols, out.cols);
    assert_eq!(out.rows, m);
    assert_eq!(w.len(), n * k);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            T::zero(),
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `dw += dzᵀ · h`, `dw` is `dz.cols × h.cols`, row-major.
fn accumulate_dzt_h<T: Real>(dz: &Matrix<T>, h: &Matrix<T>, dw: &mut [T]) {
    let (m, k, n) = (dz.cols, dz.rows, h.cols);
    assert_eq!(h.rows, k);
    assert_eq!(dw.len(), m * n);
    if k == 0 {
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            dz.data.as_ptr(),
            1,
            m as isize,
            h.data.as_ptr(),
            n as isize,
            1,
            T::one(),
            dw.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = dz · w`, `w` is `dz.cols × out.cols`.
fn matmul_dz_w<T: Real>(dz: &Matrix<T>, w: &[T], out: &mut Matrix<T>) {
    let (m, k, n) = (dz.rows, dz.cols, out.cols);
    assert_eq!(out.rows, m);
    assert_eq!(w.len(), k * n);
    if m == 0 {
        return;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            dz.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            n as isize,
            1,
            T::zero(),
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    /// `ln(1 + e^{βx}) / β`; smooth, so second derivatives exist.
    Softplus { beta: f64 },
    Relu,
}

impl Activation {
    /// Returns `(f(z), f'(z), f''(z))` from a single exponential.
    #[inline]
    fn eval<T: Real>(self, z: T) -> (T, T, T) {
        match self {
            Activation::Softplus { beta } => {
                let b = T::lit(beta);
                let x = b * z;
                let e = (-x.abs()).exp();
                let inv = T::one() / (T::one() + e);
                let (pos, sig) = if x > T::zero() { (x, inv) } else { (T::zero(), e * inv) };
                // ln(1 + e) rounds to e below machine epsilon.
                let tail = if e < T::epsilon() { e } else { e.ln_1p() };
                // σ(1 - σ) = e / (1 + e)² for either sign.
                ((pos + tail) / b, sig, b * e * inv * inv)
            }
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
        }
    }
}

#[inline]
pub(crate) fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Shape of one MLP.
///
/// There are `hidden_layers + 1` linear layers. Layer `skip_layer` receives
/// the network input concatenated onto its hidden input (both scaled by
/// `1/√2`); the final layer additionally receives `late_input_dim` extra
/// features.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub skip_layer: Option<usize>,
    pub late_input_dim: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    /// Offset of the weight block; the bias follows it.
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.input * self.output
    }

    pub fn bias(&self) -> core::ops::Range<usize> {
        let start = self.offset + self.input * self.output;
        start..start + self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<LayerShape>,
    pub num_params: usize,
}

/// Activations cached by a forward pass for [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpTape<T> {
    inputs: Vec<Matrix<T>>,
    preacts: Vec<Matrix<T>>,
    /// `f'` and `f''` at the value rows of each hidden layer.
    slopes: Vec<(Vec<T>, Vec<T>)>,
    samples: usize,
    tangents: usize,
}

/// Result of [`Mlp::backward`].
pub struct MlpInputGrads<T> {
    /// Gradient with respect to the stacked network input (values and tangents).
    pub input: Matrix<T>,
    /// Gradient with respect to the late input (value rows only).
    pub late: Option<Matrix<T>>,
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

impl Mlp {
    pub fn new(spec: MlpSpec) -> Self {
        let mut layers = Vec::with_capacity(spec.hidden_layers + 1);
        let mut offset = 0;
        for l in 0..=spec.hidden_layers {
            let mut input = if l == 0 {
                spec.input_dim
            } else {
                spec.hidden_dim
            };
            if l > 0 && spec.skip_layer == Some(l) {
                input += spec.input_dim;
            }
            if l == spec.hidden_layers {
                input += spec.late_input_dim;
            }
            let output = if l == spec.hidden_layers {
                spec.output_dim
            } else {
                spec.hidden_dim
            };
            layers.push(LayerShape {
                input,
                output,
                offset,
            });
            offset += input * output + output;
        }
        Self {
            spec,
            layers,
            num_params: offset,
        }
    }

    /// PyTorch-style default initialization, `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init_default<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        assert_eq!(params.len(), self.num_params);
        for layer in &self.layers {
            let bound = 1.0 / (layer.input as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in &mut params[layer.weights()] {
                *v = T::lit(dist.sample(rng));
            }
            for v in &mut params[layer.bias()] {
                *v = T::lit(dist.sample(rng));
            }
        }
    }

    /// Geometric initialization: the first output approximates
    /// `‖x[0..3]‖ - radius`, assuming the first three inputs are the raw
    /// position. Remaining outputs start as small random features.
    pub fn init_geometric<T: Real, R: Rng>(&self, params: &mut [T], radius: f64, rng: &mut R) {
        assert_eq!(params.len(), self.num_params);
        let last = self.layers.len() - 1;
        let input_dim = self.spec.input_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &mut params[layer.weights()];
            if l == last {
                let mean = core::f64::consts::PI.sqrt() / (self.spec.hidden_dim as f64).sqrt();
                let sdf_row = Normal::new(mean, 1e-4).expect("valid normal");
                let feat = Normal::new(0.0, 1.0 / (layer.input as f64).sqrt()).expect("valid normal");
                for o in 0..layer.output {
                    for i in 0..layer.input {
                        let v = if i >= self.spec.hidden_dim {
                            0.0
                        } else if o == 0 {
                            sdf_row.sample(rng)
                        } else {
                            feat.sample(rng)
                        };
                        w[o * layer.input + i] = T::lit(v);
                    }
                }
                let b = &mut params[layer.bias()];
                for (o, v) in b.iter_mut().enumerate() {
                    *v = if o == 0 { T::lit(-radius) } else { T::zero() };
                }
                continue;
            }
            let std = 2f64.sqrt() / (layer.output as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            for o in 0..layer.output {
                for i in 0..layer.input {
                    // Only the raw position feeds the first layer and the
                    // skip concatenation at start.
                    let zeroed = if l == 0 {
                        i >= 3
                    } else if self.spec.skip_layer == Some(l) {
                        i >= self.spec.hidden_dim + 3 && i < self.spec.hidden_dim + input_dim
                    } else {
                        false
                    };
                    w[o * layer.input + i] = if zeroed {
                        T::zero()
                    } else {
                        T::lit(dist.sample(rng))
                    };
                }
            }
            for v in &mut params[layer.bias()] {
                *v = T::zero();
            }
        }
    }

    /// Zeroes the final linear layer.
    pub fn zero_output_layer<T: Real>(&self, params: &mut [T]) {
        let layer = self.layers[self.layers.len() - 1];
        for v in &mut params[layer.offset..layer.offset + layer.input * layer.output + layer.output] {
            *v = T::zero();
        }
    }

    /// Forward pass on `input` holding `(1 + tangents) · n` rows.
    ///
    /// `late` (value rows only, `n × late_input_dim`) is appended to the final
    /// layer's input; its tangents are taken as zero.
    pub fn forward<T: Real>(
        &self,
        params: &[T],
        input: &Matrix<T>,
        tangents: usize,
        late: Option<&Matrix<T>>,
        mut tape: Option<&mut MlpTape<T>>,
    ) -> Matrix<T> {
        assert_eq!(params.len(), self.num_params);
        assert_eq!(input.cols, self.spec.input_dim);
        assert_eq!(input.rows % (tangents + 1), 0);
        let n = input.rows / (tangents + 1);
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.clear();
            t.preacts.clear();
            t.slopes.clear();
            t.samples = n;
            t.tangents = tangents;
        }
        let last = self.layers.len() - 1;
        let mut h: Option<Matrix<T>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut layer_in = match h.take() {
                None => input.clone(),
                Some(prev) => {
                    if self.spec.skip_layer == Some(l) {
                        prev.hcat_scaled(input, T::lit(FRAC_1_SQRT_2))
                    } else {
                        prev
                    }
                }
            };
            if l == last && self.spec.late_input_dim > 0 {
                let late = late.expect("late input required by this network");
                assert_eq!(late.rows, n);
                assert_eq!(late.cols, self.spec.late_input_dim);
                let mut padded = Matrix::zeros(layer_in.rows, late.cols);
                padded.data[..late.data.len()].copy_from_slice(&late.data);
                layer_in = layer_in.hcat_scaled(&padded, T::one());
            }
            debug_assert_eq!(layer_in.cols, layer.input);
            let mut z = Matrix::zeros(layer_in.rows, layer.output);
            matmul_a_wt(&layer_in, &params[layer.weights()], &mut z);
            let bias = &params[layer.bias()];
            for r in 0..n {
                for (v, &b) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(layer_in);
            }
            if l == last {
                return z;
            }
            let mut a = Matrix::zeros(z.rows, z.cols);
            let width = z.cols;
            let mut slope = vec![T::zero(); n * width];
            let mut curv = vec![T::zero(); if tape.is_some() { n * width } else { 0 }];
            for i in 0..n * width {
                let (f, df, d2f) = self.spec.activation.eval(z.data[i]);
                a.data[i] = f;
                slope[i] = df;
                if let Some(c) = curv.get_mut(i) {
                    *c = d2f;
                }
            }
            for k in 1..=tangents {
                let block = k * n * width;
                let (zt, at) = (&z.data[block..block + n * width], &mut a.data[block..block + n * width]);
                for i in 0..n * width {
                    at[i] = slope[i] * zt[i];
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.preacts.push(z);
                t.slopes.push((slope, curv));
            }
            h = Some(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Backpropagates `d_out` (same stacked layout as the forward output),
    /// accumulating parameter gradients into `grads`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        tape: &MlpTape<T>,
        d_out: Matrix<T>,
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Option<MlpInputGrads<T>> {
        assert_eq!(grads.len(), self.num_params);
        let n = tape.samples;
        let k_tan = tape.tangents;
        let last = self.layers.len() - 1;
        assert_eq!(tape.inputs.len(), self.layers.len(), "tape was not recorded");
        let mut dz = d_out;
        let mut d_input_skip: Option<Matrix<T>> = None;
        let mut d_late = None;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let layer_in = &tape.inputs[l];
            accumulate_dzt_h(&dz, layer_in, &mut grads[layer.weights()]);
            {
                let gb = &mut grads[layer.bias()];
                for r in 0..n {
                    for (g, &d) in gb.iter_mut().zip(dz.row(r)) {
                        *g += d;
                    }
                }
            }
            if l == 0 && !need_input_grad {
                return None;
            }
            let mut d_in = Matrix::zeros(dz.rows, layer.input);
            matmul_dz_w(&dz, &params[layer.weights()], &mut d_in);
            if l == last && self.spec.late_input_dim > 0 {
                let keep = layer.input - self.spec.late_input_dim;
                let late = d_in.columns(keep, self.spec.late_input_dim);
                d_late = Some(Matrix::from_vec(
                    n,
                    self.spec.late_input_dim,
                    late.data[..n * self.spec.late_input_dim].to_vec(),
                ));
                d_in = d_in.columns(0, keep);
            }
            if l == 0 {
                let mut d = d_in;
                if let Some(extra) = d_input_skip.take() {
                    for (a, b) in d.data.iter_mut().zip(extra.data) {
                        *a += b;
                    }
                }
                return Some(MlpInputGrads {
                    input: d,
                    late: d_late,
                });
            }
            if self.spec.skip_layer == Some(l) {
                let s = T::lit(FRAC_1_SQRT_2);
                let hidden = self.spec.hidden_dim;
                let mut dh = d_in.columns(0, hidden);
                let mut dx = d_in.columns(hidden, self.spec.input_dim);
                dh.data.iter_mut().for_each(|v| *v *= s);
                dx.data.iter_mut().for_each(|v| *v *= s);
                d_input_skip = Some(dx);
                d_in = dh;
            }
            // Through the activation of layer l - 1.
            let z = &tape.preacts[l - 1];
            let (slope, curv) = &tape.slopes[l - 1];
            let m = n * z.cols;
            let mut dz_prev = d_in;
            let (vals, tans) = dz_prev.data.split_at_mut(m);
            for i in 0..m {
                vals[i] *= slope[i];
            }
            for k in 0..k_tan {
                let zt = &z.data[(k + 1) * m..(k + 2) * m];
                let dt = &mut tans[k * m..(k + 1) * m];
                for i in 0..m {
                    vals[i] += dt[i] * curv[i] * zt[i];
                    dt[i] *= slope[i];
                }
            }
            dz = dz_prev;
        }
        None
    }
}
