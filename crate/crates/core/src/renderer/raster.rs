use super::project::{Splat2D, ALPHA_SKIP};
use super::{Camera, Image};
use rayon::prelude::*;

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
/// A pixel stops compositing once its transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-5;

/// Opacity of splat `s` at pixel center `(px, py)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatHit {
    /// `min(0.99, α·g)`.
    pub alpha: f64,
    /// Footprint factor `g = exp(-½ dᵀ Σ⁻¹ d)`.
    pub footprint: f64,
    /// True when the 0.99 clamp was active.
    pub clamped: bool,
}

/// Evaluate one splat at one pixel; `None` below the skip threshold.
#[inline]
pub fn splat_hit(s: &Splat2D, px: f64, py: f64) -> Option<SplatHit> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    let footprint = (-0.5 * q).exp();
    let raw = s.alpha * footprint;
    if !(raw >= ALPHA_SKIP) {
        return None;
    }
    Some(if raw > ALPHA_MAX {
        SplatHit { alpha: ALPHA_MAX, footprint, clamped: true }
    } else {
        SplatHit { alpha: raw, footprint, clamped: false }
    })
}

/// Result of compositing one pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelResult {
    pub color: [f64; 3],
    /// Transmittance left for the background.
    pub transmittance: f64,
    /// `Σ α'ₖ Tₖ` over composited splats.
    pub weight: f64,
    pub contributors: u32,
}

/// One composited splat at a pixel, in front-to-back order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index into the splat slice.
    pub splat: u32,
    pub hit: SplatHit,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

/// Front-to-back compositing over `order` with early termination.
/// `visit` sees each composited splat.
#[inline]
pub fn composite_pixel(
    splats: &[Splat2D],
    order: impl IntoIterator<Item = u32>,
    px: f64,
    py: f64,
    background: [f64; 3],
    terminate: bool,
    mut visit: impl FnMut(Contribution),
) -> PixelResult {
    let mut out = PixelResult { transmittance: 1.0, ..Default::default() };
    for i in order {
        let s = &splats[i as usize];
        let Some(hit) = splat_hit(s, px, py) else { continue };
        let t = out.transmittance;
        let w = hit.alpha * t;
        for c in 0..3 {
            out.color[c] += s.color[c] * w;
        }
        out.weight += w;
        out.contributors += 1;
        visit(Contribution { splat: i, hit, transmittance: t });
        out.transmittance = t * (1.0 - hit.alpha);
        if terminate && out.transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    for c in 0..3 {
        out.color[c] += out.transmittance * background[c];
    }
    out
}

/// Splats sorted front to back and binned into 16×16 tiles.
pub struct SplatScene<'a> {
    pub splats: &'a [Splat2D],
    pub width: u32,
    pub height: u32,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per tile, the overlapping splat indices in global depth order.
    pub tiles: Vec<Vec<u32>>,
}

/// Sort key for compositing order. Depths are compared after rounding to
/// f32 so that splats tied in exact arithmetic stay tied (and fall back to
/// slice order) when roundoff perturbs them differently, e.g. when the same
/// scene is reached through a rotated body instead of a rotated camera.
#[inline]
pub fn depth_key(depth: f64) -> f32 {
    depth as f32
}

/// Indices sorted by [`depth_key`], ties by position in the slice.
pub fn depth_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| depth_key(splats[a as usize].depth).total_cmp(&depth_key(splats[b as usize].depth)));
    order
}

impl<'a> SplatScene<'a> {
    pub fn new(splats: &'a [Splat2D], width: u32, height: u32) -> Self {
        let tiles_x = (width as usize).div_ceil(TILE_SIZE);
        let tiles_y = (height as usize).div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for i in depth_order(splats) {
            let s = &splats[i as usize];
            let r = s.screen_radius();
            if r <= 0.0 {
                continue;
            }
            let Some((x0, x1)) = pixel_span(s.mean[0] - r, s.mean[0] + r, width) else { continue };
            let Some((y0, y1)) = pixel_span(s.mean[1] - r, s.mean[1] + r, height) else { continue };
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tiles[ty * tiles_x + tx].push(i);
                }
            }
        }
        SplatScene { splats, width, height, tiles_x, tiles_y, tiles }
    }

    /// Pixel bounds `(x0, y0, x1, y1)` of a tile, exclusive upper.
    pub fn tile_rect(&self, tile: usize) -> (u32, u32, u32, u32) {
        let tx = (tile % self.tiles_x) * TILE_SIZE;
        let ty = (tile / self.tiles_x) * TILE_SIZE;
        (
            tx as u32,
            ty as u32,
            ((tx + TILE_SIZE) as u32).min(self.width),
            ((ty + TILE_SIZE) as u32).min(self.height),
        )
    }

    /// Composite every tile in parallel; returns per-pixel results in row-major order.
    pub fn render(&self, background: [f64; 3]) -> Vec<PixelResult> {
        let per_tile: Vec<Vec<PixelResult>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = self.tile_rect(t);
                let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
                for y in y0..y1 {
                    for x in x0..x1 {
                        out.push(composite_pixel(
                            self.splats,
                            self.tiles[t].iter().copied(),
                            x as f64,
                            y as f64,
                            background,
                            true,
                            |_| {},
                        ));
                    }
                }
                out
            })
            .collect();
        let mut pixels = vec![PixelResult::default(); self.width as usize * self.height as usize];
        for (t, results) in per_tile.into_iter().enumerate() {
            let (x0, y0, x1, _) = self.tile_rect(t);
            let w = (x1 - x0) as usize;
            for (k, r) in results.into_iter().enumerate() {
                let (x, y) = (x0 as usize + k % w, y0 as usize + k / w);
                pixels[y * self.width as usize + x] = r;
            }
        }
        pixels
    }
}

/// Integer pixel coordinates within `[lo, hi]`, clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(usize, usize)> {
    let a = lo.ceil().max(0.0);
    let b = hi.floor().min(n as f64 - 1.0);
    (a <= b && a.is_finite() && b.is_finite()).then_some((a as usize, b as usize))
}

/// Image plus per-pixel compositing statistics.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pub transmittance: Vec<f64>,
    pub weight: Vec<f64>,
    pub contributors: Vec<u32>,
}

pub fn rasterize_detailed(splats: &[Splat2D], camera: &Camera, background: [f64; 3]) -> RenderOutput {
    let scene = SplatScene::new(splats, camera.width, camera.height);
    let pixels = scene.render(background);
    let mut image = Image::filled(camera.width, camera.height, [0.0; 3]);
    for (i, p) in pixels.iter().enumerate() {
        image.data[3 * i..3 * i + 3].copy_from_slice(&p.color);
    }
    RenderOutput {
        image,
        transmittance: pixels.iter().map(|p| p.transmittance).collect(),
        weight: pixels.iter().map(|p| p.weight).collect(),
        contributors: pixels.iter().map(|p| p.contributors).collect(),
    }
}

/// Tiled front-to-back rasterizer.
pub fn rasterize(splats: &[Splat2D], camera: &Camera, background: [f64; 3]) -> Image {
    rasterize_detailed(splats, camera, background).image
}

/// Reference renderer: every splat evaluated at every pixel, sorted per
/// pixel, no tiles, no screen bound, no early termination.
pub fn brute_force_render(splats: &[Splat2D], camera: &Camera, background: [f64; 3]) -> Image {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(3 * w);
            let mut hits: Vec<(f32, usize, f64)> = Vec::new();
            for x in 0..w {
                hits.clear();
                for (k, s) in splats.iter().enumerate() {
                    if let Some(hit) = splat_hit(s, x as f64, y as f64) {
                        hits.push((depth_key(s.depth), k, hit.alpha));
                    }
                }
                hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut color = [0.0; 3];
                let mut t = 1.0;
                for &(_, k, a) in &hits {
                    for c in 0..3 {
                        color[c] += splats[k].color[c] * a * t;
                    }
                    t *= 1.0 - a;
                }
                for c in 0..3 {
                    row.push(color[c] + t * background[c]);
                }
            }
            row
        })
        .collect();
    Image {
        width: camera.width,
        height: camera.height,
        data: rows.concat(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat4;
    use crate::renderer::camera::Intrinsics;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: u32, h: u32) -> Camera {
        Camera::new(
            Intrinsics { fx: 50.0, fy: 50.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0, width: w, height: h, near: 0.01 },
            Mat4::identity(),
        )
    }

    fn splat(mean: [f64; 2], sigma: f64, depth: f64, color: [f64; 3], alpha: f64, source: usize) -> Splat2D {
        Splat2D::new(mean, [sigma * sigma, 0.0, sigma * sigma], depth, color, alpha, source).unwrap()
    }

    pub(crate) fn random_splats(rng: &mut ChaCha8Rng, n: usize, w: u32, h: u32) -> Vec<Splat2D> {
        (0..n)
            .map(|k| {
                let a: f64 = rng.random_range(0.5..60.0);
                let c: f64 = rng.random_range(0.5..60.0);
                let b = rng.random_range(-0.9..0.9) * (a * c).sqrt();
                Splat2D::new(
                    [rng.random_range(-4.0..w as f64 + 4.0), rng.random_range(-4.0..h as f64 + 4.0)],
                    [a, b, c],
                    rng.random_range(0.5..5.0),
                    [rng.random(), rng.random(), rng.random()],
                    rng.random_range(0.0..1.0),
                    k,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_scene_is_background() {
        let bg = [0.1, 0.2, 0.3];
        let img = rasterize(&[], &cam(20, 17), bg);
        assert_eq!(img, Image::filled(20, 17, bg));
        assert_eq!(brute_force_render(&[], &cam(20, 17), bg), img);
    }

    #[test]
    fn opaque_centered_splat_hits_clamp() {
        let bg = [0.0, 0.0, 1.0];
        let s = [splat([5.0, 7.0], 1.0, 1.0, [1.0, 0.0, 0.0], 1.0, 0)];
        let img = rasterize(&s, &cam(16, 16), bg);
        let p = img.pixel(5, 7);
        assert!((p[0] - 0.99).abs() < 1e-15 && (p[2] - 0.01).abs() < 1e-15);
        assert_eq!(brute_force_render(&s, &cam(16, 16), bg), img);
    }

    #[test]
    fn front_to_back_order_and_ties() {
        let bg = [0.0; 3];
        let near = splat([8.0, 8.0], 2.0, 1.0, [1.0, 0.0, 0.0], 0.5, 0);
        let far = splat([8.0, 8.0], 2.0, 2.0, [0.0, 1.0, 0.0], 0.5, 1);
        let img = rasterize(&[far.clone(), near.clone()], &cam(16, 16), bg);
        let p = img.pixel(8, 8);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        // Equal depth: the earlier slice entry is in front.
        let tie_a = splat([8.0, 8.0], 2.0, 1.0, [1.0, 0.0, 0.0], 0.5, 0);
        let tie_b = splat([8.0, 8.0], 2.0, 1.0, [0.0, 1.0, 0.0], 0.5, 1);
        let p = rasterize(&[tie_a.clone(), tie_b.clone()], &cam(16, 16), bg).pixel(8, 8);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        // Roundoff-sized depth differences do not reorder a tie.
        let mut nudged = tie_b;
        nudged.depth = 1.0 - 4.0 * f64::EPSILON;
        let q = rasterize(&[tie_a, nudged], &cam(16, 16), bg).pixel(8, 8);
        assert_eq!(p, q);
    }

    #[test]
    fn splat_spanning_tile_seams() {
        let s = [splat([15.5, 15.5], 3.0, 1.0, [0.3, 0.6, 0.9], 0.9, 0)];
        let c = cam(40, 40);
        let tiled = rasterize(&s, &c, [0.0; 3]);
        let brute = brute_force_render(&s, &c, [0.0; 3]);
        assert_eq!(tiled, brute);
    }

    #[test]
    fn disjoint_splats_match_oracle() {
        let s: Vec<Splat2D> = (0..4)
            .map(|k| splat([8.0 + 16.0 * k as f64, 8.0], 1.5, 1.0 + k as f64, [0.2 * k as f64, 0.5, 0.7], 0.8, k))
            .collect();
        let c = cam(64, 16);
        let d = rasterize(&s, &c, [1.0; 3]).max_abs_diff(&brute_force_render(&s, &c, [1.0; 3])).unwrap();
        assert!(d <= 1e-6);
    }

    #[test]
    fn random_scenes_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let s = random_splats(&mut rng, 300, 48, 40);
            let c = cam(48, 40);
            let bg = [0.3, 0.6, 0.1];
            let d = rasterize(&s, &c, bg).max_abs_diff(&brute_force_render(&s, &c, bg)).unwrap();
            assert!(d <= 1e-5, "max diff {d}");
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_splats(&mut rng, 200, 64, 64);
        let a = rasterize(&s, &cam(64, 64), [0.0; 3]);
        let b = rasterize(&s, &cam(64, 64), [0.0; 3]);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn weight_partition_and_monotone_transmittance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_splats(&mut rng, 120, 32, 32);
            let out = rasterize_detailed(&s, &cam(32, 32), [0.5; 3]);
            for (w, t) in out.weight.iter().zip(&out.transmittance) {
                prop_assert!((w + t - 1.0).abs() < 1e-6);
            }
            let scene = SplatScene::new(&s, 32, 32);
            for (tile, list) in scene.tiles.iter().enumerate() {
                let (x0, y0, _, _) = scene.tile_rect(tile);
                let mut last = 1.0;
                composite_pixel(&s, list.iter().copied(), x0 as f64, y0 as f64, [0.0; 3], true, |c| {
                    assert!(c.transmittance <= last);
                    last = c.transmittance;
                });
            }
        }
    }
}
