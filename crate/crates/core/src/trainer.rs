//! Ray batching, the training step and the training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::fields::{ModelConfig, ParamStore};
use crate::geometry::{ray_from_pixel, ray_from_pixel_backward, scene_interval, CameraPose, Ray, Vec3};
use crate::losses::{color_loss, eikonal_loss, mask_loss, relight_loss, total_loss, LossBreakdown, LossWeights, RelightPenalty};
use crate::nn::Matrix;
use crate::optim::{lr_schedule, mask_fraction, Adam};
use crate::renderer::{render_backward, render_rays, Background, RenderConfig, RenderUpstream, SamplingMode};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub total_iters: u64,
    pub rays_per_batch: usize,
    pub images_per_batch: usize,
    pub warmup_iters: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub loss: LossWeights,
    pub relight_penalty: RelightPenalty,
    pub optimize_poses: bool,
    /// Pose learning rate as a multiple of the network learning rate.
    pub pose_lr_scale: f64,
    /// Poses stay frozen before this iteration.
    pub pose_delay_iters: u64,
    pub mask_frac_start: f64,
    pub mask_frac_end: f64,
    pub seed: u64,
    pub render: RenderConfig,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 100_000,
            rays_per_batch: 1024,
            images_per_batch: 8,
            warmup_iters: 5000,
            lr_max: 5e-4,
            lr_min: 2.5e-5,
            loss: LossWeights::default(),
            relight_penalty: RelightPenalty::Abs,
            optimize_poses: false,
            pose_lr_scale: 0.1,
            pose_delay_iters: 0,
            mask_frac_start: 0.5,
            mask_frac_end: 0.8,
            seed: 0,
            render: RenderConfig::default(),
            checkpoint_every: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { what: String, iter: u64 },
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.total_iters == 0 || self.warmup_iters >= self.total_iters {
            return bad("need warmup_iters < total_iters");
        }
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return bad("need 0 <= lr_min < lr_max");
        }
        if !(0.0 <= self.mask_frac_start && self.mask_frac_start <= self.mask_frac_end && self.mask_frac_end <= 1.0) {
            return bad("need 0 <= mask_frac_start <= mask_frac_end <= 1");
        }
        if self.rays_per_batch == 0 || self.images_per_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if self.render.n_coarse == 0 {
            return bad("n_coarse must be at least 1");
        }
        let w = &self.loss;
        if [w.lambda_c, w.lambda_e, w.lambda_r, w.lambda_m].iter().any(|&l| !(l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }

    pub fn lr(&self, iter: u64) -> f64 {
        lr_schedule(iter, self.total_iters, self.warmup_iters, self.lr_max, self.lr_min)
    }

    pub fn mask_fraction(&self, iter: u64) -> f64 {
        mask_fraction(iter, self.total_iters, self.mask_frac_start, self.mask_frac_end)
    }
}

/// Per-image camera poses `Π` (6D rotation and translation each).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStore {
    pub poses: Vec<CameraPose>,
    pub trainable: bool,
}

impl PoseStore {
    pub const PARAMS_PER_POSE: usize = 9;

    pub fn new(poses: Vec<CameraPose>, trainable: bool) -> Self {
        Self { poses, trainable }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.poses
            .iter()
            .flat_map(|p| p.rot6d.iter().copied().chain(p.translation.iter().copied()))
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        for (pose, chunk) in self.poses.iter_mut().zip(flat.chunks(Self::PARAMS_PER_POSE)) {
            pose.rot6d.copy_from_slice(&chunk[..6]);
            pose.translation = Vec3::new(chunk[6], chunk[7], chunk[8]);
        }
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub poses: PoseStore,
    pub adam: Adam<f32>,
    pub pose_adam: Adam<f64>,
    pub iter: u64,
}

impl TrainState {
    pub fn new(model: ModelConfig, config: &TrainConfig, poses: Vec<CameraPose>) -> Self {
        let params = ParamStore::init(model, config.seed);
        let n = params.values.len();
        let np = poses.len() * PoseStore::PARAMS_PER_POSE;
        Self {
            params,
            poses: PoseStore::new(poses, config.optimize_poses),
            adam: Adam::new(n),
            pose_adam: Adam::new(np),
            iter: 0,
        }
    }
}

/// One supervised ray.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRay {
    pub image: usize,
    /// Continuous pixel coordinate (pixel centers at `+0.5`).
    pub pixel: [f64; 2],
    pub ray: Option<Ray>,
    pub color: [f32; 3],
    pub mask: Option<bool>,
}

/// Counters and losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iter: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub alpha: f64,
    /// Mean `|c_r|` over the batch samples (0 without a relight network).
    pub mean_abs_residual: f64,
    pub mean_opacity: f64,
}

pub enum TrainEvent<'a> {
    Step(&'a StepReport),
    /// Emitted every `checkpoint_every` iterations and after the last one.
    Checkpoint(&'a TrainState),
}

/// Binds a dataset to a training configuration.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pixel_sets: Vec<(Vec<u32>, Vec<u32>)>,
    use_masks: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, mut config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(TrainError::Dataset("no images".into()));
        }
        if dataset.poses.len() != dataset.images.len() {
            return Err(TrainError::Dataset(format!(
                "{} images but {} cameras",
                dataset.images.len(),
                dataset.poses.len()
            )));
        }
        let use_masks = dataset.has_masks();
        if !use_masks {
            config.loss.lambda_m = 0.0;
            config.render.background = Background::Learned;
        }
        let pixel_sets = dataset
            .images
            .iter()
            .map(|img| {
                let mut inside = Vec::new();
                let mut outside = Vec::new();
                for i in 0..img.pixels.len() {
                    match &img.mask {
                        Some(m) if m[i] => inside.push(i as u32),
                        Some(_) => outside.push(i as u32),
                        None => inside.push(i as u32),
                    }
                }
                (inside, outside)
            })
            .collect();
        Ok(Self {
            dataset,
            config,
            pixel_sets,
            use_masks,
        })
    }

    pub fn uses_masks(&self) -> bool {
        self.use_masks
    }

    pub fn init_state(&self, model: ModelConfig) -> TrainState {
        TrainState::new(model, &self.config, self.dataset.poses.clone())
    }

    /// The RNG for a given iteration; independent of history, so resumed
    /// runs draw the same batches.
    pub fn rng_for(&self, iter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iter);
        rng
    }

    /// Picks images and pixels; in-mask pixels are drawn with probability
    /// `mask_fraction(iter)` when masks exist.
    pub fn sample_ray_batch<R: Rng + ?Sized>(&self, poses: &PoseStore, iter: u64, rng: &mut R) -> Result<Vec<BatchRay>, TrainError> {
        let n_img = self.dataset.len();
        let k = self.config.images_per_batch.min(n_img);
        let chosen = index::sample(rng, n_img, k).into_vec();
        let frac = self.config.mask_fraction(iter);
        let total = self.config.rays_per_batch;
        let mut out = Vec::with_capacity(total);
        for (slot, &img_idx) in chosen.iter().enumerate() {
            let count = total / k + usize::from(slot < total % k);
            let img = &self.dataset.images[img_idx];
            let pose = poses
                .poses
                .get(img_idx)
                .ok_or_else(|| TrainError::Dataset(format!("image {img_idx} has no camera")))?;
            let (inside, outside) = &self.pixel_sets[img_idx];
            for _ in 0..count {
                let want_inside = !self.use_masks || rng.random::<f64>() < frac;
                let set = match (want_inside, inside.is_empty(), outside.is_empty()) {
                    (true, false, _) | (false, false, true) => inside,
                    _ => outside,
                };
                let p = set[rng.random_range(0..set.len())] as usize;
                let (x, y) = (p % img.width, p / img.width);
                let pixel = [x as f64 + 0.5, y as f64 + 0.5];
                let probe = ray_from_pixel(pose, pixel, 0.0, 1.0).map_err(|e| TrainError::Dataset(format!("camera {img_idx}: {e}")))?;
                let ray = scene_interval(&probe.origin, &probe.direction)
                    .map(|(near, far)| Ray { near, far, ..probe });
                out.push(BatchRay {
                    image: img_idx,
                    pixel,
                    ray,
                    color: img.color(x, y),
                    mask: img.mask.as_ref().map(|m| m[p]),
                });
            }
        }
        Ok(out)
    }

    /// Renders a batch, backpropagates the weighted loss and applies Adam.
    /// On error the state is left untouched.
    pub fn step(&self, state: &mut TrainState) -> Result<StepReport, TrainError> {
        let iter = state.iter;
        let mut rng = self.rng_for(iter);
        let batch = self.sample_ray_batch(&state.poses, iter, &mut rng)?;
        let (report, grads, pose_grads) = self.evaluate(state, &batch, &mut rng, true)?;
        let lr = report.lr;
        state.adam.step(&mut state.params.values, &grads, lr);
        if let Some(pg) = pose_grads {
            let mut flat = state.poses.to_flat();
            state.pose_adam.step(&mut flat, &pg, lr * self.config.pose_lr_scale);
            state.poses.set_flat(&flat);
        }
        state.iter += 1;
        Ok(report)
    }

    fn pose_active(&self, state: &TrainState) -> bool {
        state.poses.trainable && self.config.optimize_poses && state.iter >= self.config.pose_delay_iters
    }

    /// Loss and gradients of `batch` at the current state without updating it.
    #[allow(clippy::type_complexity)]
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        state: &TrainState,
        batch: &[BatchRay],
        rng: &mut R,
        with_grads: bool,
    ) -> Result<(StepReport, Vec<f32>, Option<Vec<f64>>), TrainError> {
        let iter = state.iter;
        let field = &state.params.field;
        let values = &state.params.values;
        let rays: Vec<Option<Ray>> = batch.iter().map(|b| b.ray).collect();
        let rendered = render_rays(field, values, &rays, &self.config.render, rng, with_grads)
            .map_err(|e| TrainError::NonFinite { what: format!("{e}"), iter })?;
        let w = &self.config.loss;
        let pred: Vec<[f32; 3]> = rendered.outputs.iter().map(|o| o.color).collect();
        let gt: Vec<[f32; 3]> = batch.iter().map(|b| b.color).collect();
        let (lc, mut dc) = color_loss(&pred, &gt);
        let (le, mut de) = eikonal_loss(&rendered.gradients);
        let (lr_loss, mut dr, abs_res) = match &rendered.residuals {
            Some(r) => {
                let (l, d) = relight_loss(r, self.config.relight_penalty);
                let abs = if r.data.is_empty() {
                    0.0
                } else {
                    r.data.iter().map(|v| v.abs() as f64).sum::<f64>() / r.data.len() as f64
                };
                (l, Some(d), abs)
            }
            None => (0.0, None, 0.0),
        };
        let opacity: Vec<f32> = rendered.outputs.iter().map(|o| o.opacity).collect();
        let (lm, mut dm) = if self.use_masks {
            let bits: Vec<bool> = batch.iter().map(|b| b.mask.unwrap_or(false)).collect();
            mask_loss(&bits, &opacity)
        } else {
            (0.0, vec![0.0; opacity.len()])
        };
        let breakdown = total_loss(lc as f64, le as f64, lr_loss as f64, lm as f64, w)
            .map_err(|e| TrainError::NonFinite { what: format!("{e}"), iter })?;
        let report = StepReport {
            iter,
            loss: breakdown,
            lr: self.config.lr(iter),
            alpha: state.params.alpha() as f64,
            mean_abs_residual: abs_res,
            mean_opacity: opacity.iter().map(|&o| o as f64).sum::<f64>() / opacity.len().max(1) as f64,
        };
        if !with_grads {
            return Ok((report, Vec::new(), None));
        }
        scale_rgb(&mut dc, w.lambda_c as f32);
        scale(&mut de, w.lambda_e as f32);
        if let Some(d) = dr.as_mut() {
            scale(d, w.lambda_r as f32);
        }
        dm.iter_mut().for_each(|v| *v *= w.lambda_m as f32);
        let mut grads = vec![0.0f32; values.len()];
        let pose_on = self.pose_active(state);
        let up = RenderUpstream {
            d_color: &dc,
            d_opacity: &dm,
            d_gradients: Some(&de),
            d_residuals: dr.as_ref(),
        };
        let ray_grads = render_backward(field, values, &rendered, &up, &mut grads, pose_on);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { what: "parameter gradient".into(), iter });
        }
        let pose_grads = match ray_grads {
            Some(rg) if pose_on => {
                let mut pg = vec![0.0f64; state.poses.poses.len() * PoseStore::PARAMS_PER_POSE];
                for (b, g) in batch.iter().zip(&rg) {
                    if b.ray.is_none() {
                        continue;
                    }
                    let pose = &state.poses.poses[b.image];
                    let (dr6, dt) = ray_from_pixel_backward(pose, b.pixel, &g.origin, &g.direction)
                        .map_err(|e| TrainError::NonFinite { what: format!("pose gradient: {e}"), iter })?;
                    let o = b.image * PoseStore::PARAMS_PER_POSE;
                    for k in 0..6 {
                        pg[o + k] += dr6[k];
                    }
                    for k in 0..3 {
                        pg[o + 6 + k] += dt[k];
                    }
                }
                Some(pg)
            }
            _ => None,
        };
        Ok((report, grads, pose_grads))
    }

    /// Runs until `state.iter == until` (capped at `total_iters`), reporting
    /// every step. The callback may stop early with `ControlFlow::Break`.
    pub fn run(
        &self,
        state: &mut TrainState,
        until: u64,
        mut on_event: impl FnMut(TrainEvent<'_>) -> ControlFlow<()>,
    ) -> Result<(), TrainError> {
        let end = until.min(self.config.total_iters);
        while state.iter < end {
            let report = self.step(state)?;
            if on_event(TrainEvent::Step(&report)).is_break() {
                return Ok(());
            }
            let at_cadence = self.config.checkpoint_every > 0 && state.iter % self.config.checkpoint_every == 0;
            if (at_cadence || state.iter == self.config.total_iters) && on_event(TrainEvent::Checkpoint(state)).is_break() {
                return Ok(());
            }
        }
        Ok(())
    }
}

fn scale(m: &mut Matrix<f32>, s: f32) {
    m.data.iter_mut().for_each(|v| *v *= s);
}

fn scale_rgb(v: &mut [[f32; 3]], s: f32) {
    v.iter_mut().flatten().for_each(|x| *x *= s);
}

/// Deterministic render settings for evaluation: midpoint sampling.
pub fn eval_render_config(train: &RenderConfig) -> RenderConfig {
    RenderConfig {
        sampling: SamplingMode::Midpoint,
        ..train.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Architecture, Variant};
    use crate::synth::{generate, CameraRig, SceneSpec};

    fn scene(count: usize, size: usize) -> Dataset {
        let spec = SceneSpec {
            cameras: CameraRig {
                count,
                test_count: 1,
                width: size,
                height: size,
                ..CameraRig::default()
            },
            ..SceneSpec::default()
        };
        generate(&spec).unwrap().train
    }

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            architecture: Architecture {
                sdf_hidden_dim: 16,
                sdf_hidden_layers: 3,
                sdf_skip_layer: Some(2),
                feature_dim: 8,
                color_hidden_dim: 16,
                color_hidden_layers: 2,
                relight_hidden_dim: 16,
                relight_hidden_layers: 2,
                position_frequencies: 2,
                direction_frequencies: 2,
                softplus_beta: 10.0,
                init_radius: 0.6,
            },
            ..ModelConfig::default()
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            total_iters: 200,
            rays_per_batch: 16,
            images_per_batch: 2,
            warmup_iters: 10,
            lr_max: 1e-3,
            lr_min: 1e-4,
            render: RenderConfig {
                n_coarse: 8,
                n_importance: 4,
                ..RenderConfig::default()
            },
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(c.lr(0), 0.0);
        assert!((c.lr(5000) - 5e-4).abs() < 1e-15);
        assert!((c.lr(100_000) - 2.5e-5).abs() < 1e-15);
        assert!((c.lr(52_500) - 2.625e-4).abs() < 1e-12);
        assert_eq!(c.mask_fraction(0), 0.5);
        assert!((c.mask_fraction(100_000) - 0.8).abs() < 1e-15);
        assert!((c.mask_fraction(50_000) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let cases = [
            TrainConfig { warmup_iters: 100_000, ..ok.clone() },
            TrainConfig { lr_min: 1e-3, ..ok.clone() },
            TrainConfig { mask_frac_start: 0.9, ..ok.clone() },
            TrainConfig { mask_frac_end: 1.5, ..ok.clone() },
            TrainConfig { rays_per_batch: 0, ..ok.clone() },
            TrainConfig {
                loss: LossWeights { lambda_e: -1.0, ..LossWeights::default() },
                ..ok.clone()
            },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(TrainError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset::default();
        assert!(matches!(Trainer::new(&ds, quick_config()), Err(TrainError::Dataset(_))));
    }

    #[test]
    fn default_batch_has_1024_rays() {
        let ds = scene(10, 16);
        let t = Trainer::new(&ds, TrainConfig::default()).unwrap();
        let poses = PoseStore::new(ds.poses.clone(), false);
        let batch = t.sample_ray_batch(&poses, 0, &mut t.rng_for(0)).unwrap();
        assert_eq!(batch.len(), 1024);
        let mut images: Vec<usize> = batch.iter().map(|b| b.image).collect();
        images.dedup();
        assert_eq!(images.len(), 8);
    }

    #[test]
    fn in_mask_share_follows_the_schedule() {
        let ds = scene(4, 32);
        assert!(ds.has_masks());
        let cfg = TrainConfig {
            rays_per_batch: 10_000,
            images_per_batch: 4,
            total_iters: 1000,
            warmup_iters: 10,
            ..TrainConfig::default()
        };
        let t = Trainer::new(&ds, cfg).unwrap();
        let poses = PoseStore::new(ds.poses.clone(), false);
        let batch = t.sample_ray_batch(&poses, 500, &mut t.rng_for(500)).unwrap();
        let share = batch.iter().filter(|b| b.mask == Some(true)).count() as f64 / batch.len() as f64;
        assert!((0.62..=0.68).contains(&share), "share {share}");

        let all_in = TrainConfig {
            mask_frac_start: 1.0,
            mask_frac_end: 1.0,
            rays_per_batch: 2000,
            ..TrainConfig::default()
        };
        let t = Trainer::new(&ds, all_in).unwrap();
        let batch = t.sample_ray_batch(&poses, 7, &mut t.rng_for(7)).unwrap();
        assert!(batch.iter().all(|b| b.mask == Some(true)));
    }

    #[test]
    fn zero_loss_weights_leave_parameters_unchanged() {
        let ds = scene(3, 12);
        let cfg = TrainConfig {
            loss: LossWeights {
                lambda_c: 0.0,
                lambda_e: 0.0,
                lambda_r: 0.0,
                lambda_m: 0.0,
            },
            ..quick_config()
        };
        let t = Trainer::new(&ds, cfg).unwrap();
        let mut state = t.init_state(tiny(Variant::ColorNeus));
        let before = state.params.values.clone();
        for _ in 0..15 {
            t.step(&mut state).unwrap();
        }
        assert_eq!(state.params.values, before);
        assert_eq!(state.iter, 15);
    }

    #[test]
    fn single_ray_step_descends() {
        let ds = scene(3, 12);
        let cfg = TrainConfig { rays_per_batch: 1, images_per_batch: 1, ..quick_config() };
        let t = Trainer::new(&ds, cfg).unwrap();
        let mut state = t.init_state(tiny(Variant::ColorNeus));
        // Centre pixel of the first view: looks straight at the sphere.
        let pose = &ds.poses[0];
        let pixel = [6.0, 6.0];
        let probe = ray_from_pixel(pose, pixel, 0.0, 1.0).unwrap();
        let (near, far) = scene_interval(&probe.origin, &probe.direction).unwrap();
        let batch = [BatchRay {
            image: 0,
            pixel,
            ray: Some(Ray { near, far, ..probe }),
            color: ds.images[0].color(6, 6),
            mask: Some(true),
        }];
        let rng = t.rng_for(3);
        let (before, grads, _) = t.evaluate(&state, &batch, &mut rng.clone(), true).unwrap();
        state.adam.step(&mut state.params.values, &grads, 1e-6);
        let (after, _, _) = t.evaluate(&state, &batch, &mut rng.clone(), false).unwrap();
        assert!(after.loss.total < before.loss.total, "{} -> {}", before.loss.total, after.loss.total);
    }

    fn losses(t: &Trainer<'_>, model: ModelConfig, iters: u64) -> (Vec<LossBreakdown>, TrainState) {
        let mut state = t.init_state(model);
        let mut out = Vec::new();
        t.run(&mut state, iters, |ev| {
            if let TrainEvent::Step(r) = ev {
                out.push(r.loss);
            }
            ControlFlow::Continue(())
        })
        .unwrap();
        (out, state)
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let ds = scene(3, 12);
        let t = Trainer::new(&ds, quick_config()).unwrap();
        let (a, sa) = losses(&t, tiny(Variant::ColorNeus), 100);
        let (b, sb) = losses(&t, tiny(Variant::ColorNeus), 100);
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn resumed_state_matches_uninterrupted_run() {
        let ds = scene(3, 12);
        let t = Trainer::new(&ds, TrainConfig { optimize_poses: true, ..quick_config() }).unwrap();
        let (_, full) = losses(&t, tiny(Variant::ColorNeus), 25);
        let (_, mut part) = losses(&t, tiny(Variant::ColorNeus), 15);
        let mut resumed = part.clone();
        t.run(&mut resumed, 25, |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(resumed, full);
        // A stop request leaves the state at the requested iteration.
        t.run(&mut part, 17, |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(part.iter, 17);
    }

    #[test]
    fn frozen_poses_stay_bitwise_constant() {
        let ds = scene(3, 12);
        let t = Trainer::new(&ds, quick_config()).unwrap();
        let (_, state) = losses(&t, tiny(Variant::ColorNeus), 20);
        let bits = |ps: &[CameraPose]| -> Vec<u64> {
            ps.iter()
                .flat_map(|p| p.rot6d.iter().chain(p.translation.iter()).map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&state.poses.poses), bits(&ds.poses));
        assert!(state.pose_adam.m.iter().all(|&m| m == 0.0));

        let t = Trainer::new(&ds, TrainConfig { optimize_poses: true, ..quick_config() }).unwrap();
        let (_, state) = losses(&t, tiny(Variant::ColorNeus), 20);
        assert_ne!(bits(&state.poses.poses), bits(&ds.poses));
    }

    #[test]
    fn naive_variant_has_no_relight() {
        let ds = scene(3, 12);
        let t = Trainer::new(&ds, quick_config()).unwrap();
        let mut state = t.init_state(tiny(Variant::Naive));
        assert!(state.params.field.relight.is_none());
        assert!(state.params.field.layout.relight.is_empty());
        let n = state.params.values.len();
        for _ in 0..5 {
            let r = t.step(&mut state).unwrap();
            assert_eq!(r.loss.relight, 0.0);
            assert_eq!(r.mean_abs_residual, 0.0);
        }
        assert_eq!(state.params.values.len(), n);
    }

    #[test]
    fn missing_masks_disable_the_mask_loss() {
        let mut ds = scene(3, 12);
        ds.images[1].mask = None;
        let t = Trainer::new(&ds, quick_config()).unwrap();
        assert!(!t.uses_masks());
        assert_eq!(t.config.loss.lambda_m, 0.0);
        assert_eq!(t.config.render.background, Background::Learned);
        let mut state = t.init_state(tiny(Variant::ColorNeus));
        assert_eq!(t.step(&mut state).unwrap().loss.mask, 0.0);
    }
}
