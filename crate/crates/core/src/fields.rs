//! The SDF network, the global color network, the relight network and the
//! view-dependent baseline color network, with their parameter store.
//!
//! Input layouts (documented here because they are not dictated elsewhere):
//!
//! * SDF net: `γ(p)` with 6 frequencies and the raw position passed through;
//!   `sdf_hidden_layers` softplus layers, the encoded input re-concatenated at
//!   `sdf_skip_layer`; outputs `[s, f]`.
//! * Global color net: `[p, g, f]` (raw position); ReLU hidden layers;
//!   sigmoid head gives `c_g`.
//! * Relight net: `[p, γ(d), g]` (or `[p, γ(d)]` with the gradient ablation);
//!   `c_g` is concatenated onto the input of the final linear layer, whose
//!   weights start at zero so `c_r ≡ 0` at initialization.
//! * Baseline color net: `[p, γ(d), g, f]`; sigmoid head.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::EncodingSpec;
use crate::nn::{logistic, Activation, Matrix, Mlp, MlpSpec, MlpTape, Real};
use crate::renderer::{compose_color, compose_color_backward, Composition};

/// `α = exp(ALPHA_LOG_SCALE · a)` for the stored scalar `a`.
pub const ALPHA_LOG_SCALE: f64 = 10.0;

/// Initial density width `1/α`.
pub const INITIAL_INV_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Global color plus relight residual.
    ColorNeus,
    /// Global color only.
    Naive,
    /// A single view-dependent color network.
    NeusBaseline,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ColorNeus => "color_neus",
            Variant::Naive => "naive",
            Variant::NeusBaseline => "neus_baseline",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "color_neus" => Some(Variant::ColorNeus),
            "naive" => Some(Variant::Naive),
            "neus_baseline" => Some(Variant::NeusBaseline),
            _ => None,
        }
    }
}

/// Network sizes. [`Default`] gives the full-size model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Architecture {
    pub sdf_hidden_dim: usize,
    pub sdf_hidden_layers: usize,
    pub sdf_skip_layer: Option<usize>,
    pub feature_dim: usize,
    pub color_hidden_dim: usize,
    pub color_hidden_layers: usize,
    pub relight_hidden_dim: usize,
    pub relight_hidden_layers: usize,
    pub position_frequencies: usize,
    pub direction_frequencies: usize,
    pub softplus_beta: f64,
    /// Radius of the sphere the SDF approximates after initialization.
    pub init_radius: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            sdf_hidden_dim: 256,
            sdf_hidden_layers: 8,
            sdf_skip_layer: Some(4),
            feature_dim: 256,
            color_hidden_dim: 256,
            color_hidden_layers: 4,
            relight_hidden_dim: 256,
            relight_hidden_layers: 4,
            position_frequencies: 6,
            direction_frequencies: 4,
            softplus_beta: 100.0,
            init_radius: 1.0,
        }
    }
}

impl Architecture {
    /// A reduced network sized for CPU experiments on synthetic scenes.
    pub fn compact() -> Self {
        Self {
            sdf_hidden_dim: 64,
            sdf_hidden_layers: 4,
            sdf_skip_layer: Some(2),
            feature_dim: 32,
            color_hidden_dim: 64,
            color_hidden_layers: 2,
            relight_hidden_dim: 64,
            relight_hidden_layers: 2,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub variant: Variant,
    pub relight_uses_gradient: bool,
    pub composition: Composition,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ColorNeus,
            relight_uses_gradient: true,
            composition: Composition::Sigmoid,
            architecture: Architecture::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("{op} is not available for the {variant} variant")]
    WrongVariant {
        op: &'static str,
        variant: &'static str,
    },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("parameter vector has {got} entries, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub sdf: Range<usize>,
    pub color: Range<usize>,
    pub relight: Range<usize>,
    pub log_alpha: usize,
    pub background: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    /// Named tensors in declared order.
    pub fn tensors(&self) -> [(&'static str, Range<usize>); 5] {
        [
            ("sdf", self.sdf.clone()),
            ("color", self.color.clone()),
            ("relight", self.relight.clone()),
            ("log_alpha", self.log_alpha..self.log_alpha + 1),
            ("background", self.background.clone()),
        ]
    }
}

/// Network structure derived from a [`ModelConfig`]; holds no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub config: ModelConfig,
    pub sdf: Mlp,
    pub color: Mlp,
    pub relight: Option<Mlp>,
    pub position_encoding: EncodingSpec,
    pub direction_encoding: EncodingSpec,
    pub layout: ParamLayout,
}

impl Field {
    pub fn new(config: ModelConfig) -> Self {
        let a = &config.architecture;
        let position_encoding = EncodingSpec {
            num_frequencies: a.position_frequencies,
            include_input: true,
        };
        let direction_encoding = EncodingSpec {
            num_frequencies: a.direction_frequencies,
            include_input: true,
        };
        let enc_dir = direction_encoding.output_dim(3);
        let sdf = Mlp::new(MlpSpec {
            input_dim: position_encoding.output_dim(3),
            hidden_dim: a.sdf_hidden_dim,
            hidden_layers: a.sdf_hidden_layers,
            output_dim: 1 + a.feature_dim,
            skip_layer: a.sdf_skip_layer.filter(|&l| l > 0 && l < a.sdf_hidden_layers),
            late_input_dim: 0,
            activation: Activation::Softplus {
                beta: a.softplus_beta,
            },
        });
        let color_input = match config.variant {
            Variant::NeusBaseline => 3 + enc_dir + 3 + a.feature_dim,
            Variant::ColorNeus | Variant::Naive => 3 + 3 + a.feature_dim,
        };
        let color = Mlp::new(MlpSpec {
            input_dim: color_input,
            hidden_dim: a.color_hidden_dim,
            hidden_layers: a.color_hidden_layers,
            output_dim: 3,
            skip_layer: None,
            late_input_dim: 0,
            activation: Activation::Relu,
        });
        let relight = (config.variant == Variant::ColorNeus).then(|| {
            let grad_dims = if config.relight_uses_gradient { 3 } else { 0 };
            Mlp::new(MlpSpec {
                input_dim: 3 + enc_dir + grad_dims,
                hidden_dim: a.relight_hidden_dim,
                hidden_layers: a.relight_hidden_layers,
                output_dim: 3,
                skip_layer: None,
                late_input_dim: 3,
                activation: Activation::Relu,
            })
        });
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        let sdf_r = take(sdf.num_params);
        let color_r = take(color.num_params);
        let relight_r = take(relight.as_ref().map_or(0, |m| m.num_params));
        let alpha_r = take(1);
        let bg_r = take(3);
        let layout = ParamLayout {
            sdf: sdf_r,
            color: color_r,
            relight: relight_r,
            log_alpha: alpha_r.start,
            background: bg_r,
            total: offset,
        };
        Self {
            config,
            sdf,
            color,
            relight,
            position_encoding,
            direction_encoding,
            layout,
        }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn alpha<T: Real>(&self, params: &[T]) -> T {
        (T::lit(ALPHA_LOG_SCALE) * params[self.layout.log_alpha]).exp()
    }

    /// Learned background color (used when rays are not composited over black).
    pub fn background<T: Real>(&self, params: &[T]) -> [T; 3] {
        let b = &params[self.layout.background.clone()];
        [logistic(b[0]), logistic(b[1]), logistic(b[2])]
    }

    fn encode_points<T: Real>(&self, points: &Matrix<T>, tangents: bool) -> Matrix<T> {
        let n = points.rows;
        let dim = self.position_encoding.output_dim(3);
        let blocks = if tangents { 4 } else { 1 };
        let mut x = Matrix::zeros(n * blocks, dim);
        let mut j0 = vec![T::zero(); dim];
        let mut j1 = vec![T::zero(); dim];
        let mut j2 = vec![T::zero(); dim];
        for r in 0..n {
            let p = points.row(r);
            if tangents {
                let mut out = vec![T::zero(); dim];
                self.position_encoding
                    .encode_with_jacobian(p, &mut out, &mut [&mut j0, &mut j1, &mut j2]);
                x.row_mut(r).copy_from_slice(&out);
                x.row_mut(n + r).copy_from_slice(&j0);
                x.row_mut(2 * n + r).copy_from_slice(&j1);
                x.row_mut(3 * n + r).copy_from_slice(&j2);
            } else {
                self.position_encoding.encode_into(p, x.row_mut(r));
            }
        }
        x
    }

    /// Evaluates the SDF network on `points` (`N × 3`). With `gradients`,
    /// the spatial gradient `g = ∇s` is produced by forward tangents and is
    /// differentiable by [`Field::sdf_backward`].
    pub fn sdf_forward<T: Real>(
        &self,
        params: &[T],
        points: &Matrix<T>,
        gradients: bool,
        record: bool,
    ) -> SdfBatch<T> {
        let n = points.rows;
        let x = self.encode_points(points, gradients);
        let mut tape = MlpTape::default();
        let tangents = if gradients { 3 } else { 0 };
        let out = self.sdf.forward(
            &params[self.layout.sdf.clone()],
            &x,
            tangents,
            None,
            record.then_some(&mut tape),
        );
        let fdim = self.config.architecture.feature_dim;
        let mut s = Vec::with_capacity(n);
        let mut features = Matrix::zeros(n, fdim);
        for r in 0..n {
            let row = out.row(r);
            s.push(row[0]);
            features.row_mut(r).copy_from_slice(&row[1..]);
        }
        let mut grad = Matrix::zeros(n, 3);
        if gradients {
            for r in 0..n {
                for k in 0..3 {
                    grad.set(r, k, out.get((k + 1) * n + r, 0));
                }
            }
        }
        SdfBatch {
            points: points.clone(),
            s,
            features,
            gradients: grad,
            has_gradients: gradients,
            tape: record.then_some(tape),
        }
    }

    /// Accumulates parameter gradients of a loss given its gradient with
    /// respect to `s`, `f` and `g`. Returns `dL/dp` when `point_grads`.
    pub fn sdf_backward<T: Real>(
        &self,
        params: &[T],
        batch: &SdfBatch<T>,
        d_s: &[T],
        d_features: Option<&Matrix<T>>,
        d_gradients: Option<&Matrix<T>>,
        grads: &mut [T],
        point_grads: bool,
    ) -> Option<Matrix<T>> {
        let tape = batch.tape.as_ref().expect("sdf forward was not recorded");
        let n = batch.s.len();
        let blocks = if batch.has_gradients { 4 } else { 1 };
        let out_dim = 1 + self.config.architecture.feature_dim;
        let mut d_out = Matrix::zeros(n * blocks, out_dim);
        for r in 0..n {
            d_out.set(r, 0, d_s[r]);
            if let Some(df) = d_features {
                d_out.row_mut(r)[1..].copy_from_slice(df.row(r));
            }
        }
        if let Some(dg) = d_gradients {
            assert!(batch.has_gradients, "gradient outputs were not computed");
            for r in 0..n {
                for k in 0..3 {
                    d_out.set((k + 1) * n + r, 0, dg.get(r, k));
                }
            }
        }
        let sdf_params = &params[self.layout.sdf.clone()];
        let back = self.sdf.backward(
            sdf_params,
            tape,
            d_out,
            &mut grads[self.layout.sdf.clone()],
            point_grads,
        )?;
        let dim = self.position_encoding.output_dim(3);
        let mut dp = Matrix::zeros(n, 3);
        for r in 0..n {
            let p = batch.points.row(r);
            let d_enc = back.input.row(r);
            let dj: Vec<&[T]> = if batch.has_gradients {
                (0..3).map(|k| back.input.row((k + 1) * n + r)).collect()
            } else {
                Vec::new()
            };
            debug_assert_eq!(d_enc.len(), dim);
            let g = self.position_encoding.backward(p, d_enc, &dj);
            dp.row_mut(r).copy_from_slice(&g);
        }
        Some(dp)
    }

    fn direction_block<T: Real>(&self, dirs: &Matrix<T>) -> Matrix<T> {
        let dim = self.direction_encoding.output_dim(3);
        let mut out = Matrix::zeros(dirs.rows, dim);
        for r in 0..dirs.rows {
            self.direction_encoding.encode_into(dirs.row(r), out.row_mut(r));
        }
        out
    }

    /// Colors for a batch of samples. `dirs` are unit viewing directions; they
    /// are ignored by the global color path.
    pub fn color_forward<T: Real>(
        &self,
        params: &[T],
        points: &Matrix<T>,
        dirs: &Matrix<T>,
        sdf: &SdfBatch<T>,
        record: bool,
    ) -> ColorBatch<T> {
        let n = points.rows;
        let cparams = &params[self.layout.color.clone()];
        let mut color_tape = MlpTape::default();
        match self.variant() {
            Variant::NeusBaseline => {
                let denc = self.direction_block(dirs);
                let input = concat(&[points, &denc, &sdf.gradients, &sdf.features]);
                let logits =
                    self.color.forward(cparams, &input, 0, None, record.then_some(&mut color_tape));
                let color = map(&logits, logistic);
                ColorBatch {
                    global: None,
                    residual: None,
                    color,
                    color_tape: record.then_some(color_tape),
                    relight_tape: None,
                    dir_encoded: Some(denc),
                }
            }
            Variant::Naive | Variant::ColorNeus => {
                let input = concat(&[points, &sdf.gradients, &sdf.features]);
                let logits =
                    self.color.forward(cparams, &input, 0, None, record.then_some(&mut color_tape));
                let global = map(&logits, logistic);
                if self.variant() == Variant::Naive {
                    return ColorBatch {
                        global: Some(global.clone()),
                        residual: None,
                        color: global,
                        color_tape: record.then_some(color_tape),
                        relight_tape: None,
                        dir_encoded: None,
                    };
                }
                let relight = self.relight.as_ref().expect("color_neus has a relight net");
                let denc = self.direction_block(dirs);
                let rin = if self.config.relight_uses_gradient {
                    concat(&[points, &denc, &sdf.gradients])
                } else {
                    concat(&[points, &denc])
                };
                let mut rtape = MlpTape::default();
                let residual = relight.forward(
                    &params[self.layout.relight.clone()],
                    &rin,
                    0,
                    Some(&global),
                    record.then_some(&mut rtape),
                );
                let mode = self.config.composition;
                let mut color = Matrix::zeros(n, 3);
                for i in 0..n * 3 {
                    color.data[i] = compose_color(global.data[i], residual.data[i], mode);
                }
                ColorBatch {
                    global: Some(global),
                    residual: Some(residual),
                    color,
                    color_tape: record.then_some(color_tape),
                    relight_tape: record.then_some(rtape),
                    dir_encoded: Some(denc),
                }
            }
        }
    }

    /// Backpropagates `d_color` (and an extra direct gradient on the relight
    /// residual) through the color networks. Returns gradients with respect
    /// to points, directions, SDF gradients and features.
    #[allow(clippy::too_many_arguments)]
    pub fn color_backward<T: Real>(
        &self,
        params: &[T],
        points: &Matrix<T>,
        dirs: &Matrix<T>,
        sdf: &SdfBatch<T>,
        colors: &ColorBatch<T>,
        d_color: &Matrix<T>,
        d_residual: Option<&Matrix<T>>,
        grads: &mut [T],
    ) -> ColorInputGrads<T> {
        let n = points.rows;
        let fdim = self.config.architecture.feature_dim;
        let denc_dim = self.direction_encoding.output_dim(3);
        let mut out = ColorInputGrads {
            points: Matrix::zeros(n, 3),
            dirs: Matrix::zeros(n, 3),
            gradients: Matrix::zeros(n, 3),
            features: Matrix::zeros(n, fdim),
        };
        let cparams = &params[self.layout.color.clone()];
        let ctape = colors.color_tape.as_ref().expect("color forward was not recorded");
        let mut d_global = match self.variant() {
            Variant::NeusBaseline => {
                let mut d_logits = Matrix::zeros(n, 3);
                for i in 0..n * 3 {
                    let c = colors.color.data[i];
                    d_logits.data[i] = d_color.data[i] * c * (T::one() - c);
                }
                let back = self
                    .color
                    .backward(cparams, ctape, d_logits, &mut grads[self.layout.color.clone()], true)
                    .expect("input gradients requested");
                let denc = colors.dir_encoded.as_ref().expect("encoded directions");
                for r in 0..n {
                    let row = back.input.row(r);
                    out.points.row_mut(r).copy_from_slice(&row[..3]);
                    let dd = self.direction_encoding.backward(dirs.row(r), &row[3..3 + denc_dim], &[]);
                    out.dirs.row_mut(r).copy_from_slice(&dd);
                    let o = 3 + denc_dim;
                    out.gradients.row_mut(r).copy_from_slice(&row[o..o + 3]);
                    out.features.row_mut(r).copy_from_slice(&row[o + 3..o + 3 + fdim]);
                }
                debug_assert_eq!(denc.cols, denc_dim);
                return out;
            }
            Variant::Naive => d_color.clone(),
            Variant::ColorNeus => {
                let global = colors.global.as_ref().expect("global color");
                let residual = colors.residual.as_ref().expect("residual");
                let mode = self.config.composition;
                let mut d_global = Matrix::zeros(n, 3);
                let mut d_res = Matrix::zeros(n, 3);
                for i in 0..n * 3 {
                    let (dg, dr) = compose_color_backward(global.data[i], residual.data[i], mode);
                    d_global.data[i] = d_color.data[i] * dg;
                    d_res.data[i] = d_color.data[i] * dr;
                }
                if let Some(extra) = d_residual {
                    for (a, &b) in d_res.data.iter_mut().zip(&extra.data) {
                        *a += b;
                    }
                }
                let relight = self.relight.as_ref().expect("relight net");
                let rtape = colors.relight_tape.as_ref().expect("relight forward was not recorded");
                let back = relight
                    .backward(
                        &params[self.layout.relight.clone()],
                        rtape,
                        d_res,
                        &mut grads[self.layout.relight.clone()],
                        true,
                    )
                    .expect("input gradients requested");
                for r in 0..n {
                    let row = back.input.row(r);
                    out.points.row_mut(r).copy_from_slice(&row[..3]);
                    let dd = self.direction_encoding.backward(dirs.row(r), &row[3..3 + denc_dim], &[]);
                    out.dirs.row_mut(r).copy_from_slice(&dd);
                    if self.config.relight_uses_gradient {
                        let o = 3 + denc_dim;
                        out.gradients.row_mut(r).copy_from_slice(&row[o..o + 3]);
                    }
                }
                if let Some(late) = back.late {
                    for (a, &b) in d_global.data.iter_mut().zip(&late.data) {
                        *a += b;
                    }
                }
                d_global
            }
        };
        let global = colors.global.as_ref().expect("global color");
        for i in 0..n * 3 {
            let c = global.data[i];
            d_global.data[i] *= c * (T::one() - c);
        }
        let back = self
            .color
            .backward(cparams, ctape, d_global, &mut grads[self.layout.color.clone()], true)
            .expect("input gradients requested");
        for r in 0..n {
            let row = back.input.row(r);
            for k in 0..3 {
                let p = out.points.get(r, k);
                out.points.set(r, k, p + row[k]);
                let g = out.gradients.get(r, k);
                out.gradients.set(r, k, g + row[3 + k]);
            }
            out.features.row_mut(r).copy_from_slice(&row[6..6 + fdim]);
        }
        let _ = sdf;
        out
    }
}

/// Output of [`Field::sdf_forward`].
#[derive(Debug, Clone)]
pub struct SdfBatch<T> {
    pub points: Matrix<T>,
    pub s: Vec<T>,
    pub features: Matrix<T>,
    /// `∇s` per point (zeros unless requested).
    pub gradients: Matrix<T>,
    pub has_gradients: bool,
    tape: Option<MlpTape<T>>,
}

/// Output of [`Field::color_forward`].
#[derive(Debug, Clone)]
pub struct ColorBatch<T> {
    pub global: Option<Matrix<T>>,
    pub residual: Option<Matrix<T>>,
    pub color: Matrix<T>,
    color_tape: Option<MlpTape<T>>,
    relight_tape: Option<MlpTape<T>>,
    dir_encoded: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct ColorInputGrads<T> {
    pub points: Matrix<T>,
    pub dirs: Matrix<T>,
    pub gradients: Matrix<T>,
    pub features: Matrix<T>,
}

fn concat<T: Real>(parts: &[&Matrix<T>]) -> Matrix<T> {
    let rows = parts[0].rows;
    let cols: usize = parts.iter().map(|m| m.cols).sum();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let dst = out.row_mut(r);
        let mut o = 0;
        for m in parts {
            dst[o..o + m.cols].copy_from_slice(m.row(r));
            o += m.cols;
        }
    }
    out
}

fn map<T: Real>(m: &Matrix<T>, f: impl Fn(T) -> T) -> Matrix<T> {
    Matrix::from_vec(m.rows, m.cols, m.data.iter().map(|&v| f(v)).collect())
}

/// All trainable network parameters `Θ` plus the density sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub field: Field,
    pub values: Vec<T>,
}

impl<T: Real> ParamStore<T> {
    /// Builds the networks for `config` and initializes them deterministically.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let field = Field::new(config);
        let mut values = vec![T::zero(); field.layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = field.config.architecture.init_radius;
        field
            .sdf
            .init_geometric(&mut values[field.layout.sdf.clone()], radius, &mut rng);
        field
            .color
            .init_default(&mut values[field.layout.color.clone()], &mut rng);
        if let Some(relight) = &field.relight {
            let slot = &mut values[field.layout.relight.clone()];
            relight.init_default(slot, &mut rng);
            relight.zero_output_layer(slot);
        }
        values[field.layout.log_alpha] = T::lit(num_traits::Float::ln(1.0 / INITIAL_INV_ALPHA) / ALPHA_LOG_SCALE);
        Self { field, values }
    }

    pub fn from_values(config: ModelConfig, values: Vec<T>) -> Result<Self, FieldError> {
        let field = Field::new(config);
        if values.len() != field.layout.total {
            return Err(FieldError::ParamCount {
                expected: field.layout.total,
                got: values.len(),
            });
        }
        Ok(Self { field, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.field.config
    }

    pub fn alpha(&self) -> T {
        self.field.alpha(&self.values)
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.field
            .layout
            .tensors()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| &self.values[r])
    }

    /// SDF value, feature and spatial gradient at one point.
    pub fn sdf_eval(&self, p: [T; 3]) -> FieldSample<T> {
        let b = self
            .field
            .sdf_forward(&self.values, &Matrix::from_vec(1, 3, p.to_vec()), true, false);
        FieldSample {
            s: b.s[0],
            f: b.features.row(0).to_vec(),
            g: [b.gradients.get(0, 0), b.gradients.get(0, 1), b.gradients.get(0, 2)],
        }
    }

    fn single_sdf(&self, p: [T; 3], f: &[T], g: [T; 3]) -> SdfBatch<T> {
        SdfBatch {
            points: Matrix::from_vec(1, 3, p.to_vec()),
            s: vec![T::zero()],
            features: Matrix::from_vec(1, f.len(), f.to_vec()),
            gradients: Matrix::from_vec(1, 3, g.to_vec()),
            has_gradients: true,
            tape: None,
        }
    }

    /// `c_g = M_g(p, f, g)`. Takes no viewing direction.
    pub fn global_color_eval(&self, p: [T; 3], f: &[T], g: [T; 3]) -> Result<[T; 3], FieldError> {
        if self.field.variant() == Variant::NeusBaseline {
            return Err(FieldError::WrongVariant {
                op: "global_color_eval",
                variant: self.field.variant().name(),
            });
        }
        let sdf = self.single_sdf(p, f, g);
        let input = concat(&[&sdf.points, &sdf.gradients, &sdf.features]);
        let logits = self
            .field
            .color
            .forward(&self.values[self.field.layout.color.clone()], &input, 0, None, None);
        Ok([logistic(logits.data[0]), logistic(logits.data[1]), logistic(logits.data[2])])
    }

    /// Relight residual `c_r = R_g(c_g, p, d, g)`.
    pub fn relight_eval(&self, c_g: [T; 3], p: [T; 3], d: [T; 3], g: [T; 3]) -> Result<[T; 3], FieldError> {
        let relight = self.field.relight.as_ref().ok_or(FieldError::WrongVariant {
            op: "relight_eval",
            variant: self.field.variant().name(),
        })?;
        let pm = Matrix::from_vec(1, 3, p.to_vec());
        let denc = self.field.direction_block(&Matrix::from_vec(1, 3, d.to_vec()));
        let gm = Matrix::from_vec(1, 3, g.to_vec());
        let input = if self.field.config.relight_uses_gradient {
            concat(&[&pm, &denc, &gm])
        } else {
            concat(&[&pm, &denc])
        };
        let late = Matrix::from_vec(1, 3, c_g.to_vec());
        let out = relight.forward(
            &self.values[self.field.layout.relight.clone()],
            &input,
            0,
            Some(&late),
            None,
        );
        Ok([out.data[0], out.data[1], out.data[2]])
    }

    /// View-dependent color `M(p, d, f, g)` of the baseline variant.
    pub fn baseline_color_eval(&self, p: [T; 3], d: [T; 3], f: &[T], g: [T; 3]) -> Result<[T; 3], FieldError> {
        if self.field.variant() != Variant::NeusBaseline {
            return Err(FieldError::WrongVariant {
                op: "baseline_color_eval",
                variant: self.field.variant().name(),
            });
        }
        let sdf = self.single_sdf(p, f, g);
        let dirs = Matrix::from_vec(1, 3, d.to_vec());
        let c = self
            .field
            .color_forward(&self.values, &sdf.points, &dirs, &sdf, false);
        Ok([c.color.data[0], c.color.data[1], c.color.data[2]])
    }
}

/// `s(p)`, `f(p)` and `g(p) = ∇s(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<T> {
    pub s: T,
    pub f: Vec<T>,
    pub g: [T; 3],
}

/// Per-point loss gradients handed back by a [`loss_gradients`] objective.
pub struct PointLossGrads<T> {
    pub d_s: Vec<T>,
    pub d_features: Option<Matrix<T>>,
    pub d_gradients: Option<Matrix<T>>,
}

/// Gradient of a scalar objective of SDF outputs at `points` with respect to
/// every parameter, differentiating through `g = ∇s`.
pub fn loss_gradients<T: Real>(
    params: &ParamStore<T>,
    points: &Matrix<T>,
    objective: impl Fn(&SdfBatch<T>) -> (T, PointLossGrads<T>),
) -> Result<(T, Vec<T>), FieldError> {
    let field = &params.field;
    let batch = field.sdf_forward(&params.values, points, true, true);
    check_finite("sdf values", &batch.s)?;
    check_finite("sdf gradients", &batch.gradients.data)?;
    let (loss, upstream) = objective(&batch);
    if !loss.is_finite() {
        return Err(FieldError::NonFinite("loss".into()));
    }
    let mut grads = vec![T::zero(); params.values.len()];
    field.sdf_backward(
        &params.values,
        &batch,
        &upstream.d_s,
        upstream.d_features.as_ref(),
        upstream.d_gradients.as_ref(),
        &mut grads,
        false,
    );
    check_finite("parameter gradients", &grads)?;
    Ok((loss, grads))
}

pub fn check_finite<T: Real>(name: &str, values: &[T]) -> Result<(), FieldError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::NonFinite(name.into()))
    }
}
