//! Ray sampling, logistic density, alpha-compositing quadrature and the
//! batched differentiable ray renderer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::{ColorBatch, Field, SdfBatch, ALPHA_LOG_SCALE};
use crate::geometry::{ray_from_pixel, scene_interval, CameraPose, Ray, Vec3};
use crate::nn::{logistic, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Composition {
    /// `Ψ(Ψ⁻¹(c_g) + c_r)`.
    Sigmoid,
    /// `clamp(c_g + Ψ(c_r) − 0.5, 0, 1)`.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SamplingMode {
    /// Jittered samples, one per bin.
    Stratified,
    /// Bin midpoints and evenly spaced CDF quantiles.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Background {
    Black,
    /// A learnable constant color weighted by the residual transmittance.
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_importance: usize,
    pub sampling: SamplingMode,
    pub background: Background,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_importance: 64,
            sampling: SamplingMode::Stratified,
            background: Background::Black,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("non-finite {what} on ray {ray}")]
    NonFinite { what: String, ray: usize },
}

/// Logistic density `σ = α e^{−αs} / (1 + e^{−αs})²`.
pub fn density<T: Real>(s: T, alpha: T) -> T {
    density_partials(s, alpha).0
}

/// `(σ, ∂σ/∂s, ∂σ/∂α)`, evaluated on `|αs|` so evenness is exact.
fn density_partials<T: Real>(s: T, alpha: T) -> (T, T, T) {
    let x = alpha * s;
    let e = (-x.abs()).exp();
    let phi = e / ((T::one() + e) * (T::one() + e));
    // φ'(x) = φ (1 − 2Ψ(x))
    let odd = (T::one() - e) / (T::one() + e);
    let dphi = if x > T::zero() { -phi * odd } else { phi * odd };
    (alpha * phi, alpha * alpha * dphi, phi + x * dphi)
}

/// Quadrature weights `w_i = a_i Π_{j<i}(1 − a_j)` with `a_i = 1 − exp(−σ_i δ_i)`,
/// and the accumulated opacity `Ô = Σ w_i`.
pub fn render_weights<T: Real>(sigmas: &[T], deltas: &[T]) -> (Vec<T>, T) {
    let a: Vec<T> = sigmas
        .iter()
        .zip(deltas)
        .map(|(&s, &d)| opacity(s, d))
        .collect();
    let w = weights_from_opacity(&a);
    let total = w.iter().copied().sum();
    (w, total)
}

fn opacity<T: Real>(sigma: T, delta: T) -> T {
    -(-(sigma * delta)).exp_m1()
}

fn weights_from_opacity<T: Real>(a: &[T]) -> Vec<T> {
    let mut t = T::one();
    a.iter()
        .map(|&ai| {
            let w = ai * t;
            t = t * (T::one() - ai);
            w
        })
        .collect()
}

/// Given `g_i = ∂L/∂w_i`, returns `∂L/∂a_i = T_i (g_i − R_{i+1})` where
/// `R_i = g_i a_i + (1 − a_i) R_{i+1}` is the downstream contribution.
fn weights_backward<T: Real>(a: &[T], g: &[T]) -> Vec<T> {
    let m = a.len();
    let mut trans = Vec::with_capacity(m);
    let mut t = T::one();
    for &ai in a {
        trans.push(t);
        t = t * (T::one() - ai);
    }
    let mut out = vec![T::zero(); m];
    let mut r = T::zero();
    for i in (0..m).rev() {
        out[i] = trans[i] * (g[i] - r);
        r = g[i] * a[i] + (T::one() - a[i]) * r;
    }
    out
}

const COMPOSE_EPS: f64 = 1e-6;

/// Fuses the global color and the relight residual for one channel.
pub fn compose_color<T: Real>(c_g: T, c_r: T, mode: Composition) -> T {
    match mode {
        Composition::Sigmoid => {
            if c_r == T::zero() {
                return c_g;
            }
            let g = clamp_open(c_g);
            if c_r > T::zero() {
                g / (g + (T::one() - g) * (-c_r).exp())
            } else {
                let e = c_r.exp();
                g * e / (g * e + (T::one() - g))
            }
        }
        Composition::Clamp => {
            let v = c_g + (logistic(c_r) - T::lit(0.5));
            v.max(T::zero()).min(T::one())
        }
    }
}

/// `(∂c/∂c_g, ∂c/∂c_r)` for one channel.
pub fn compose_color_backward<T: Real>(c_g: T, c_r: T, mode: Composition) -> (T, T) {
    match mode {
        Composition::Sigmoid => {
            let g = clamp_open(c_g);
            let c = compose_color(g, c_r, mode);
            let dc_dr = c * (T::one() - c);
            (dc_dr / (g * (T::one() - g)), dc_dr)
        }
        Composition::Clamp => {
            let psi = logistic(c_r);
            let v = c_g + (psi - T::lit(0.5));
            if v > T::zero() && v < T::one() {
                (T::one(), psi * (T::one() - psi))
            } else {
                (T::zero(), T::zero())
            }
        }
    }
}

fn clamp_open<T: Real>(c: T) -> T {
    let eps = T::lit(COMPOSE_EPS);
    c.max(eps).min(T::one() - eps)
}

/// Ordered samples along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub z_values: Vec<f64>,
    pub points: Vec<Vec3>,
    /// Length of the interval each sample represents; the cells tile `[near, far]`.
    pub deltas: Vec<f64>,
}

impl RaySamples {
    pub fn from_z(ray: &Ray, z_values: Vec<f64>) -> Self {
        let n = z_values.len();
        let mut deltas = Vec::with_capacity(n);
        for i in 0..n {
            let lo = if i == 0 { ray.near } else { 0.5 * (z_values[i - 1] + z_values[i]) };
            let hi = if i + 1 == n { ray.far } else { 0.5 * (z_values[i] + z_values[i + 1]) };
            deltas.push((hi - lo).max(1e-10));
        }
        let points = z_values.iter().map(|&z| ray.at(z)).collect();
        Self { z_values, points, deltas }
    }

    pub fn len(&self) -> usize {
        self.z_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_values.is_empty()
    }
}

/// `n` samples, one per equal bin of `[near, far]`.
pub fn stratified_z<R: Rng + ?Sized>(near: f64, far: f64, n: usize, mode: SamplingMode, rng: &mut R) -> Vec<f64> {
    let step = (far - near) / n as f64;
    (0..n)
        .map(|i| {
            let u = match mode {
                SamplingMode::Midpoint => 0.5,
                SamplingMode::Stratified => rng.random::<f64>(),
            };
            near + (i as f64 + u) * step
        })
        .collect()
}

/// Draws `n` samples from the piecewise-constant density with bin `edges`
/// (`weights.len() + 1` ascending values) and per-bin `weights`.
pub fn sample_pdf<R: Rng + ?Sized>(
    edges: &[f64],
    weights: &[f64],
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1);
    let pad = 1e-5;
    let total: f64 = weights.iter().map(|w| w.max(0.0) + pad).sum();
    let mut cdf = Vec::with_capacity(edges.len());
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += (w.max(0.0) + pad) / total;
        cdf.push(acc);
    }
    let mut us: Vec<f64> = match mode {
        SamplingMode::Midpoint => (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect(),
        SamplingMode::Stratified => (0..n).map(|k| (k as f64 + rng.random::<f64>()) / n as f64).collect(),
    };
    for u in &mut us {
        *u = u.min(acc);
    }
    us.iter()
        .map(|&u| {
            let bin = cdf[1..].partition_point(|&c| c < u).min(weights.len() - 1);
            let width = cdf[bin + 1] - cdf[bin];
            let t = if width > 0.0 { ((u - cdf[bin]) / width).clamp(0.0, 1.0) } else { 0.5 };
            edges[bin] + t * (edges[bin + 1] - edges[bin])
        })
        .collect()
}

/// Coarse samples, then (given a field) importance samples from the coarse
/// weights, merged and sorted.
pub fn sample_ray<T: Real, R: Rng + ?Sized>(
    ray: &Ray,
    cfg: &RenderConfig,
    rng: &mut R,
    field: Option<(&Field, &[T])>,
) -> RaySamples {
    assert!(cfg.n_coarse >= 1, "at least one coarse sample is required");
    let coarse = stratified_z(ray.near, ray.far, cfg.n_coarse, cfg.sampling, rng);
    let Some((field, params)) = field.filter(|_| cfg.n_importance > 0) else {
        return RaySamples::from_z(ray, coarse);
    };
    let samples = RaySamples::from_z(ray, coarse);
    let pts = points_matrix::<T>(&samples.points);
    let sdf = field.sdf_forward(params, &pts, false, false);
    let alpha = field.alpha(params);
    let sig: Vec<T> = sdf.s.iter().map(|&s| density(s, alpha)).collect();
    let del: Vec<T> = samples.deltas.iter().map(|&d| T::lit(d)).collect();
    let (w, _) = render_weights(&sig, &del);
    let w: Vec<f64> = w.iter().map(|v| v.as_f64()).collect();
    let mut edges = Vec::with_capacity(samples.len() + 1);
    edges.push(ray.near);
    let mut acc = ray.near;
    for d in &samples.deltas {
        acc += d;
        edges.push(acc);
    }
    *edges.last_mut().expect("non-empty") = ray.far;
    let mut z = samples.z_values;
    z.extend(sample_pdf(&edges, &w, cfg.n_importance, cfg.sampling, rng));
    z.sort_by(f64::total_cmp);
    RaySamples::from_z(ray, z)
}

fn points_matrix<T: Real>(points: &[Vec3]) -> Matrix<T> {
    let mut m = Matrix::zeros(points.len(), 3);
    for (r, p) in points.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&[T::lit(p.x), T::lit(p.y), T::lit(p.z)]);
    }
    m
}

/// Composites precomputed per-sample SDF values and colors. Useful for
/// plugging in analytic fields.
pub fn composite<T: Real>(s: &[T], colors: &[[T; 3]], deltas: &[T], alpha: T, z: &[T]) -> RenderOutput<T> {
    let sig: Vec<T> = s.iter().map(|&v| density(v, alpha)).collect();
    let (weights, opacity) = render_weights(&sig, deltas);
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    for (i, w) in weights.iter().enumerate() {
        for k in 0..3 {
            color[k] += *w * colors[i][k];
        }
        depth += *w * z[i];
    }
    RenderOutput {
        color,
        opacity,
        depth: if opacity > T::zero() { depth / opacity } else { T::zero() },
        weights,
    }
}

/// Result for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub opacity: T,
    /// Expected `z` under the normalized weights.
    pub depth: T,
    pub weights: Vec<T>,
}

/// Per-ray results for a batch, plus everything backward needs.
#[derive(Debug, Clone)]
pub struct RenderBatch<T> {
    pub outputs: Vec<RenderOutput<T>>,
    /// Sample index range of each ray in the flattened per-sample arrays.
    pub ranges: Vec<core::ops::Range<usize>>,
    pub samples: Vec<RaySamples>,
    pub directions: Vec<Vec3>,
    /// Per-sample `∇s`.
    pub gradients: Matrix<T>,
    /// Per-sample relight residual `c_r` (color_neus only).
    pub residuals: Option<Matrix<T>>,
    pub background: [T; 3],
    learned_background: bool,
    cache: Option<RenderCache<T>>,
}

impl<T: Real> RenderBatch<T> {
    pub fn num_samples(&self) -> usize {
        self.gradients.rows
    }
}

#[derive(Debug, Clone)]
struct RenderCache<T> {
    points: Matrix<T>,
    dirs: Matrix<T>,
    sdf: SdfBatch<T>,
    colors: ColorBatch<T>,
    /// Per-sample `(a, ∂σ/∂s, ∂σ/∂α, δ)`.
    terms: Vec<[T; 4]>,
}

/// Renders `rays`; `None` entries miss the scene and see only background.
pub fn render_rays<T: Real, R: Rng + ?Sized>(
    field: &Field,
    params: &[T],
    rays: &[Option<Ray>],
    cfg: &RenderConfig,
    rng: &mut R,
    record: bool,
) -> Result<RenderBatch<T>, RenderError> {
    let mut samples = Vec::with_capacity(rays.len());
    let mut ranges = Vec::with_capacity(rays.len());
    let mut directions = Vec::with_capacity(rays.len());
    let mut all_points = Vec::new();
    let mut dir_rows = Vec::new();
    for ray in rays {
        let start = all_points.len();
        match ray {
            Some(ray) => {
                let s = sample_ray(ray, cfg, rng, Some((field, params)));
                all_points.extend_from_slice(&s.points);
                dir_rows.extend(core::iter::repeat_n(ray.direction, s.len()));
                directions.push(ray.direction);
                samples.push(s);
            }
            None => {
                directions.push(Vec3::zeros());
                samples.push(RaySamples { z_values: Vec::new(), points: Vec::new(), deltas: Vec::new() });
            }
        }
        ranges.push(start..all_points.len());
    }
    let points = points_matrix::<T>(&all_points);
    let dirs = points_matrix::<T>(&dir_rows);
    let sdf = field.sdf_forward(params, &points, true, record);
    let colors = field.color_forward(params, &points, &dirs, &sdf, record);
    let alpha = field.alpha(params);
    let background = match cfg.background {
        Background::Black => [T::zero(); 3],
        Background::Learned => field.background(params),
    };

    let mut terms = Vec::with_capacity(points.rows);
    let mut outputs = Vec::with_capacity(rays.len());
    for (ray_idx, range) in ranges.iter().enumerate() {
        let mut a = Vec::with_capacity(range.len());
        for i in range.clone() {
            let s = sdf.s[i];
            if !s.is_finite() || !sdf.gradients.row(i).iter().all(|v| v.is_finite()) {
                return Err(RenderError::NonFinite { what: "sdf".into(), ray: ray_idx });
            }
            if !colors.color.row(i).iter().all(|v| v.is_finite()) {
                return Err(RenderError::NonFinite { what: "color".into(), ray: ray_idx });
            }
            let delta = T::lit(samples[ray_idx].deltas[i - range.start]);
            let (sig, ds, dalpha) = density_partials(s, alpha);
            let ai = opacity(sig, delta);
            a.push(ai);
            terms.push([ai, ds, dalpha, delta]);
        }
        let weights = weights_from_opacity(&a);
        let mut color = [T::zero(); 3];
        let mut depth = T::zero();
        let mut opacity = T::zero();
        for (j, &w) in weights.iter().enumerate() {
            let row = colors.color.row(range.start + j);
            for k in 0..3 {
                color[k] += w * row[k];
            }
            depth += w * T::lit(samples[ray_idx].z_values[j]);
            opacity += w;
        }
        for k in 0..3 {
            color[k] += (T::one() - opacity) * background[k];
        }
        outputs.push(RenderOutput {
            color,
            opacity,
            depth: if opacity > T::zero() { depth / opacity } else { T::zero() },
            weights,
        });
    }
    Ok(RenderBatch {
        outputs,
        ranges,
        samples,
        directions,
        gradients: sdf.gradients.clone(),
        residuals: colors.residual.clone(),
        background,
        learned_background: cfg.background == Background::Learned,
        cache: record.then_some(RenderCache { points, dirs, sdf, colors, terms }),
    })
}

/// Upstream gradients for [`render_backward`].
pub struct RenderUpstream<'a, T> {
    pub d_color: &'a [[T; 3]],
    pub d_opacity: &'a [T],
    /// Per-sample gradient with respect to `∇s` (eikonal term).
    pub d_gradients: Option<&'a Matrix<T>>,
    /// Per-sample gradient with respect to `c_r` (relight term).
    pub d_residuals: Option<&'a Matrix<T>>,
}

/// Gradient of the loss with respect to a ray's origin and direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayGrad {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// Accumulates parameter gradients into `grads`; with `ray_grads`, also
/// returns per-ray origin/direction gradients (sample depths held fixed).
pub fn render_backward<T: Real>(
    field: &Field,
    params: &[T],
    batch: &RenderBatch<T>,
    up: &RenderUpstream<'_, T>,
    grads: &mut [T],
    ray_grads: bool,
) -> Option<Vec<RayGrad>> {
    let cache = batch.cache.as_ref().expect("render was not recorded");
    let n = cache.points.rows;
    let alpha = field.alpha(params);
    let mut d_sample_color = Matrix::zeros(n, 3);
    let mut d_s = vec![T::zero(); n];
    let mut d_alpha = T::zero();
    let mut d_bg = [T::zero(); 3];
    for (r, range) in batch.ranges.iter().enumerate() {
        let dc = up.d_color[r];
        let out = &batch.outputs[r];
        for k in 0..3 {
            d_bg[k] += dc[k] * (T::one() - out.opacity);
        }
        let bg_term: T = (0..3).map(|k| dc[k] * batch.background[k]).sum();
        let mut g = Vec::with_capacity(range.len());
        for (j, i) in range.clone().enumerate() {
            let row = cache.colors.color.row(i);
            let w = out.weights[j];
            let mut gi = up.d_opacity[r] - bg_term;
            for k in 0..3 {
                gi += dc[k] * row[k];
                d_sample_color.set(i, k, dc[k] * w);
            }
            g.push(gi);
        }
        let a: Vec<T> = range.clone().map(|i| cache.terms[i][0]).collect();
        let da = weights_backward(&a, &g);
        for (j, i) in range.clone().enumerate() {
            let [ai, ds, dalpha, delta] = cache.terms[i];
            let d_sigma = da[j] * delta * (T::one() - ai);
            d_s[i] = d_sigma * ds;
            d_alpha += d_sigma * dalpha;
        }
    }
    let la = field.layout.log_alpha;
    grads[la] += d_alpha * alpha * T::lit(ALPHA_LOG_SCALE);
    if batch.learned_background {
        let bg_params = &params[field.layout.background.clone()];
        for k in 0..3 {
            let b = logistic(bg_params[k]);
            grads[field.layout.background.start + k] += d_bg[k] * b * (T::one() - b);
        }
    }

    let cg = field.color_backward(
        params,
        &cache.points,
        &cache.dirs,
        &cache.sdf,
        &cache.colors,
        &d_sample_color,
        up.d_residuals,
        grads,
    );
    let mut d_grad = cg.gradients;
    if let Some(extra) = up.d_gradients {
        for (a, &b) in d_grad.data.iter_mut().zip(&extra.data) {
            *a += b;
        }
    }
    let dp = field.sdf_backward(
        params,
        &cache.sdf,
        &d_s,
        Some(&cg.features),
        Some(&d_grad),
        grads,
        ray_grads,
    );
    let dp = dp?;
    let mut out = Vec::with_capacity(batch.ranges.len());
    for (r, range) in batch.ranges.iter().enumerate() {
        let mut g = RayGrad { origin: Vec3::zeros(), direction: Vec3::zeros() };
        for (j, i) in range.clone().enumerate() {
            let z = batch.samples[r].z_values[j];
            for k in 0..3 {
                let p = (dp.get(i, k) + cg.points.get(i, k)).as_f64();
                g.origin[k] += p;
                g.direction[k] += z * p + cg.dirs.get(i, k).as_f64();
            }
        }
        out.push(g);
    }
    Some(out)
}

/// A rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
}

const IMAGE_CHUNK: usize = 512;

/// Renders every pixel center of a `width × height` view.
pub fn render_image<T: Real>(
    field: &Field,
    params: &[T],
    pose: &CameraPose,
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<RenderedImage, RenderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rays = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let probe = ray_from_pixel(pose, [x as f64 + 0.5, y as f64 + 0.5], 0.0, 1.0)
                .map_err(|e| RenderError::NonFinite { what: format!("camera ({e})"), ray: y * width + x })?;
            rays.push(scene_interval(&probe.origin, &probe.direction).map(|(near, far)| Ray { near, far, ..probe }));
        }
    }
    let mut out = RenderedImage {
        width,
        height,
        color: Vec::with_capacity(rays.len()),
        opacity: Vec::with_capacity(rays.len()),
    };
    for (c, chunk) in rays.chunks(IMAGE_CHUNK).enumerate() {
        let b = render_rays(field, params, chunk, cfg, &mut rng, false).map_err(|e| match e {
            RenderError::NonFinite { what, ray } => RenderError::NonFinite { what, ray: ray + c * IMAGE_CHUNK },
        })?;
        for o in b.outputs {
            out.color.push(o.color.map(|v| v.as_f64().clamp(0.0, 1.0)));
            out.opacity.push(o.opacity.as_f64());
        }
    }
    Ok(out)
}
