//! Image metrics and analytic-gradient fitting of the color and opacity planes.
//!
//! The objective is the mean squared error between rendered and target views,
//! averaged over views, plus an optional pluggable perceptual term. Geometry
//! is held fixed, so each view is projected once and only splat colors and
//! alphas change between iterations.
//!
//! Gradients through front-to-back compositing at a pixel with contributions
//! `k = 0..K` and leftover transmittance `T_K`:
//!
//! ```text
//! ∂C/∂cₖ  = α'ₖ Tₖ
//! ∂C/∂α'ₖ = cₖ Tₖ − (Σ_{j>k} cⱼ α'ⱼ Tⱼ + T_K · bg) / (1 − α'ₖ)
//! ∂α'ₖ/∂αₖ = gₖ   (0 where the 0.99 clamp is active)
//! ```

use crate::avatar::Avatar;
use crate::renderer::{
    composite_pixel, project, Camera, Contribution, Image, PixelResult, Splat2D, SplatScene,
};
use crate::template::Pose;
use crate::uvgauss::GaussianAttributeMaps;
use crate::Result;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("image size mismatch: {expected:?} vs {got:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },
}

fn check_dims(a: &Image, b: &Image) -> Result<(), FitError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(FitError::DimensionMismatch {
            expected: (a.width, a.height),
            got: (b.width, b.height),
        })
    }
}

/// Mean over pixels and channels of the squared difference.
pub fn mse(a: &Image, b: &Image) -> Result<f64, FitError> {
    check_dims(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log₁₀(1/mse)`, capped at 99 dB for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, FitError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Extra image-space loss added to the MSE term.
pub trait PerceptualLoss: Send + Sync {
    /// Loss value and its gradient with respect to every channel of `rendered`
    /// (same layout as `Image::data`).
    fn evaluate(&self, rendered: &Image, target: &Image) -> (f64, Vec<f64>);
}

/// Per-splat gradients for one view.
#[derive(Clone, Debug)]
pub struct SplatGradient {
    pub loss: f64,
    pub mse: f64,
    pub image: Image,
    pub color: Vec<[f64; 3]>,
    /// Empty unless opacity gradients were requested.
    pub alpha: Vec<f64>,
}

/// `∂L/∂C` of the MSE term for every channel.
pub fn mse_pixel_grad(rendered: &Image, target: &Image) -> Vec<f64> {
    let n = rendered.data.len() as f64;
    rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(c, t)| 2.0 * (c - t) / n)
        .collect()
}

/// Backpropagate pixel gradients `dl_dc` through compositing to splat colors
/// (and alphas when `with_alpha`). Per-tile partial sums are reduced in tile
/// order, so the result is deterministic.
pub fn composite_backward(
    scene: &SplatScene,
    background: [f64; 3],
    dl_dc: &[f64],
    with_alpha: bool,
) -> (Vec<[f64; 3]>, Vec<f64>) {
    let width = scene.width as usize;
    let splats = scene.splats;
    let partials: Vec<Vec<[f64; 4]>> = (0..scene.tiles.len())
        .into_par_iter()
        .map(|t| {
            let list = &scene.tiles[t];
            let mut local = vec![[0.0f64; 4]; list.len()];
            if list.is_empty() {
                return local;
            }
            let slot: HashMap<u32, usize> = list.iter().enumerate().map(|(p, &s)| (s, p)).collect();
            let (x0, y0, x1, y1) = scene.tile_rect(t);
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = 3 * (y as usize * width + x as usize);
                    let g = [dl_dc[i], dl_dc[i + 1], dl_dc[i + 2]];
                    if g == [0.0; 3] {
                        continue;
                    }
                    contribs.clear();
                    let res: PixelResult = composite_pixel(
                        splats,
                        list.iter().copied(),
                        x as f64,
                        y as f64,
                        background,
                        true,
                        |c| contribs.push(c),
                    );
                    let mut suffix = background.map(|b| b * res.transmittance);
                    for c in contribs.iter().rev() {
                        let s = &splats[c.splat as usize];
                        let w = c.hit.alpha * c.transmittance;
                        let acc = &mut local[slot[&c.splat]];
                        for ch in 0..3 {
                            acc[ch] += g[ch] * w;
                        }
                        if with_alpha && !c.hit.clamped {
                            let inv = 1.0 / (1.0 - c.hit.alpha);
                            let d: f64 = (0..3)
                                .map(|ch| g[ch] * (s.color[ch] * c.transmittance - suffix[ch] * inv))
                                .sum();
                            acc[3] += d * c.hit.footprint;
                        }
                        for ch in 0..3 {
                            suffix[ch] += s.color[ch] * w;
                        }
                    }
                }
            }
            local
        })
        .collect();
    let mut color = vec![[0.0; 3]; splats.len()];
    let mut alpha = if with_alpha { vec![0.0; splats.len()] } else { Vec::new() };
    for (t, local) in partials.into_iter().enumerate() {
        for (&s, g) in scene.tiles[t].iter().zip(local) {
            let c = &mut color[s as usize];
            for ch in 0..3 {
                c[ch] += g[ch];
            }
            if with_alpha {
                alpha[s as usize] += g[3];
            }
        }
    }
    (color, alpha)
}

fn render_scene(scene: &SplatScene, background: [f64; 3]) -> Image {
    let pixels = scene.render(background);
    let mut data = Vec::with_capacity(pixels.len() * 3);
    for p in &pixels {
        data.extend_from_slice(&p.color);
    }
    Image { width: scene.width, height: scene.height, data }
}

/// Loss and per-splat gradients of one view.
pub fn splat_backward(
    splats: &[Splat2D],
    camera: &Camera,
    target: &Image,
    background: [f64; 3],
    with_alpha: bool,
    perceptual: Option<(&dyn PerceptualLoss, f64)>,
) -> Result<SplatGradient, FitError> {
    let scene = SplatScene::new(splats, camera.width, camera.height);
    let image = render_scene(&scene, background);
    check_dims(target, &image)?;
    let mse_value = mse(&image, target)?;
    let mut loss = mse_value;
    let mut dl_dc = mse_pixel_grad(&image, target);
    if let Some((plugin, lambda)) = perceptual {
        if lambda != 0.0 {
            let (pl, pg) = plugin.evaluate(&image, target);
            loss += lambda * pl;
            for (d, g) in dl_dc.iter_mut().zip(pg) {
                *d += lambda * g;
            }
        }
    }
    let (color, alpha) = composite_backward(&scene, background, &dl_dc, with_alpha);
    Ok(SplatGradient { loss, mse: mse_value, image, color, alpha })
}

/// Gradients with respect to attribute-map texels.
#[derive(Clone, Debug)]
pub struct TexelGradient {
    pub loss: f64,
    /// One entry per texel, row-major.
    pub color: Vec<[f64; 3]>,
    pub opacity: Option<Vec<f64>>,
}

impl TexelGradient {
    pub fn max_abs(&self) -> f64 {
        let c = self.color.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        let o = self.opacity.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        c.max(o)
    }
}

/// Gradient of the MSE between the avatar's render and `target`.
pub fn color_backward(
    avatar: &Avatar,
    pose: &Pose,
    camera: &Camera,
    target: &Image,
    background: [f64; 3],
    with_opacity: bool,
) -> Result<TexelGradient> {
    let projection = avatar.project_posed(pose, camera)?;
    let g = splat_backward(&projection.splats, camera, target, background, with_opacity, None)?;
    let texels = avatar.maps.texel_count();
    let mut color = vec![[0.0; 3]; texels];
    let mut opacity = with_opacity.then(|| vec![0.0; texels]);
    for (k, s) in projection.splats.iter().enumerate() {
        let t = avatar.anchors().anchors[s.source].texel as usize;
        color[t] = g.color[k];
        if let Some(o) = opacity.as_mut() {
            o[t] = g.alpha[k];
        }
    }
    Ok(TexelGradient { loss: g.loss, color, opacity })
}

/// One fitting view.
#[derive(Clone, Debug)]
pub struct FitView {
    pub camera: Camera,
    pub target: Image,
    pub pose: Pose,
}

#[derive(Clone)]
pub struct FitConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub views: Vec<FitView>,
    pub optimize_opacity: bool,
    pub background: [f64; 3],
    /// Weight of the perceptual term; defaults to 1 when a plugin is attached.
    pub lambda_perceptual: Option<f64>,
    pub perceptual: Option<Arc<dyn PerceptualLoss>>,
}

impl std::fmt::Debug for FitConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FitConfig")
            .field("iterations", &self.iterations)
            .field("step_size", &self.step_size)
            .field("beta1", &self.beta1)
            .field("beta2", &self.beta2)
            .field("epsilon", &self.epsilon)
            .field("views", &self.views.len())
            .field("optimize_opacity", &self.optimize_opacity)
            .field("lambda_perceptual", &self.lambda())
            .finish()
    }
}

impl FitConfig {
    pub fn new(views: Vec<FitView>) -> Self {
        FitConfig {
            iterations: 200,
            step_size: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            views,
            optimize_opacity: false,
            background: [0.0; 3],
            lambda_perceptual: None,
            perceptual: None,
        }
    }

    pub fn lambda(&self) -> f64 {
        match (&self.perceptual, self.lambda_perceptual) {
            (None, _) => 0.0,
            (Some(_), Some(l)) => l,
            (Some(_), None) => 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad("step size must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment coefficients must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.views.is_empty() {
            return bad("at least one view is required");
        }
        for v in &self.views {
            if (v.camera.width, v.camera.height) != (v.target.width, v.target.height) {
                return Err(FitError::DimensionMismatch {
                    expected: (v.camera.width, v.camera.height),
                    got: (v.target.width, v.target.height),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub maps: GaussianAttributeMaps,
    /// Objective before each step and after the last: `iterations + 1` entries.
    pub trace: Vec<f64>,
    /// View-averaged MSE alongside `trace`.
    pub mse_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Update `params` in place; values are clamped to `[0, 1]`.
    fn step(&mut self, params: &mut [f32], grad: &[f64], cfg: &FitConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            if self.m[i] == 0.0 {
                continue;
            }
            let update = cfg.step_size * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + cfg.epsilon);
            params[i] = (params[i] as f64 - update).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Adam on the color (and optionally opacity) planes, full batch over views.
pub fn fit_color(avatar: &Avatar, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let canonical = avatar.canonical_gaussians()?;
    let anchors = avatar.anchors();
    let mut views = Vec::with_capacity(config.views.len());
    for v in &config.views {
        v.camera.validate()?;
        let (posed, _) = avatar.pose_gaussians(&canonical, &v.pose)?;
        let splats = project(&v.camera, &posed).splats;
        let texels: Vec<usize> = splats.iter().map(|s| anchors.anchors[s.source].texel as usize).collect();
        views.push((splats, texels));
    }

    let mut maps = avatar.maps.clone();
    let texel_count = maps.texel_count();
    let mut colors: Vec<f32> = maps.color.iter().flatten().copied().collect();
    let mut color_adam = Adam::new(colors.len());
    let mut opacity_adam = Adam::new(texel_count);
    let lambda = config.lambda();
    let plugin = config.perceptual.as_deref().map(|p| (p, lambda));
    let n_views = views.len() as f64;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut mse_trace = Vec::with_capacity(config.iterations + 1);

    for iteration in 0..=config.iterations {
        let mut loss = 0.0;
        let mut mse_sum = 0.0;
        let mut color_grad = vec![0.0; colors.len()];
        let mut opacity_grad = vec![0.0; texel_count];
        for ((splats, texels), view) in views.iter_mut().zip(&config.views) {
            for (s, &t) in splats.iter_mut().zip(texels.iter()) {
                s.color = [colors[3 * t] as f64, colors[3 * t + 1] as f64, colors[3 * t + 2] as f64];
                s.alpha = maps.opacity[t] as f64;
            }
            let g = splat_backward(splats, &view.camera, &view.target, config.background, config.optimize_opacity, plugin)?;
            loss += g.loss / n_views;
            mse_sum += g.mse / n_views;
            for (k, &t) in texels.iter().enumerate() {
                for ch in 0..3 {
                    color_grad[3 * t + ch] += g.color[k][ch] / n_views;
                }
                if config.optimize_opacity {
                    opacity_grad[t] += g.alpha[k] / n_views;
                }
            }
        }
        trace.push(loss);
        mse_trace.push(mse_sum);
        if !loss.is_finite() {
            return Err(FitError::NonFiniteLoss { iteration, trace }.into());
        }
        log::debug!("fit iteration {iteration}: loss {loss:.6e}");
        if iteration == config.iterations {
            break;
        }
        color_adam.step(&mut colors, &color_grad, config);
        if config.optimize_opacity {
            opacity_adam.step(&mut maps.opacity, &opacity_grad, config);
        }
    }
    for (t, c) in maps.color.iter_mut().enumerate() {
        *c = [colors[3 * t], colors[3 * t + 1], colors[3 * t + 2]];
    }
    Ok(FitResult { maps, trace, mse_trace })
}
