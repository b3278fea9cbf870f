//! Deterministic CPU splatting renderer.
//!
//! Both renderers share the projection step ([`project_splats`]) and the per-pixel
//! compositing arithmetic; they differ only in how candidate splats are found for a
//! pixel. The tiled renderer bins splats into screen tiles using a footprint bound and
//! skips contributions below [`RenderOptions::alpha_min`]; the brute-force renderer
//! visits every splat for every pixel.

use nalgebra::{Matrix2, Matrix3, Matrix2x3};
use rayon::prelude::*;

use crate::image::{GrayImage, Image, RgbImage};
use crate::model::{covariance, CameraPose, GaussianKind, GaussianMap, Vec3};

pub const TILE_SIZE: usize = 4;
/// The projection Jacobian is evaluated with `x/z` and `y/z` clamped to this multiple of
/// the half field of view.
pub const JACOBIAN_GUARD: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Tiled path: contributions with `alpha < alpha_min` are skipped and the footprint is
    /// bounded where `opacity · G = alpha_min`.
    pub alpha_min: f64,
    /// Compositing stops once transmittance falls below this value.
    pub transmittance_min: f64,
    /// Projected covariances with a larger condition number are skipped.
    pub max_condition: f64,
    /// Splats closer than this camera depth are culled.
    pub near: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            alpha_min: 1e-9,
            transmittance_min: 1e-4,
            max_condition: 1e8,
            near: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Splats skipped because their screen covariance was degenerate.
    pub degenerate: usize,
    /// Splats behind the near plane.
    pub behind: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViews {
    pub color: RgbImage,
    /// Alpha-weighted expected camera depth; `0` where nothing was hit.
    pub depth: GrayImage,
    /// Accumulated alpha `1 − Π(1 − α)`.
    pub opacity: GrayImage,
    /// Alpha-weighted flat normal facing the camera; `None` without flat contributions.
    pub normal: Image<Option<[f64; 3]>>,
    pub stats: RenderStats,
}

impl RenderedViews {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// A Gaussian projected into one camera.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub max_eigen: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub normal: Option<[f64; 3]>,
}

impl Splat {
    /// Gaussian falloff `exp(-½ dᵀ Σ'⁻¹ d)` at image coordinates `(u, v)`.
    #[inline]
    pub fn falloff(&self, u: f64, v: f64) -> f64 {
        let dx = u - self.mean[0];
        let dy = v - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy);
        if power > 0.0 {
            // only reachable through rounding on a positive definite conic
            1.0
        } else {
            power.exp()
        }
    }

    /// Pixel radius outside of which the falloff is below `g_min`.
    pub fn radius_for_falloff(&self, g_min: f64) -> f64 {
        if g_min <= 0.0 {
            return f64::INFINITY;
        }
        if g_min >= 1.0 {
            return 0.0;
        }
        (2.0 * (1.0 / g_min).ln() * self.max_eigen).sqrt()
    }
}

/// Projects every Gaussian and returns the splats sorted front to back (ties by index).
pub(crate) fn project_splats(map: &GaussianMap, cam: &CameraPose, opts: &RenderOptions) -> (Vec<Splat>, RenderStats) {
    let k = &cam.intrinsics;
    let r_wc = cam.rotation.to_rotation_matrix().into_inner();
    let r_cw = r_wc.transpose();
    let cam_center = cam.center();
    let mut stats = RenderStats::default();

    let projected: Vec<Option<Result<Splat, bool>>> = map
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(index, g)| {
            let pc = r_cw * (g.position - cam_center);
            if pc.z <= opts.near {
                return Some(Err(true));
            }
            let cov_c: Matrix3<f64> = r_cw * covariance(g) * r_wc;
            let (x, y, z) = (pc.x, pc.y, pc.z);
            // off-screen splats near the image plane would get unbounded footprints
            let lim_x = JACOBIAN_GUARD * (k.width as f64 * 0.5) / k.fx;
            let lim_y = JACOBIAN_GUARD * (k.height as f64 * 0.5) / k.fy;
            let jx = (x / z).clamp(-lim_x, lim_x) * z;
            let jy = (y / z).clamp(-lim_y, lim_y) * z;
            let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * jx / (z * z), 0.0, k.fy / z, -k.fy * jy / (z * z));
            let cov2: Matrix2<f64> = j * cov_c * j.transpose();
            let a = cov2[(0, 0)];
            let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
            let c = cov2[(1, 1)];
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let l_max = half_tr + disc;
            let l_min = half_tr - disc;
            if !(l_min > 0.0) || !(l_max / l_min <= opts.max_condition) {
                return Some(Err(false));
            }
            let det = a * c - b * b;
            if !(det > 0.0) {
                return Some(Err(false));
            }
            let normal = match g.kind {
                GaussianKind::Flat2D => {
                    let mut n = g.normal();
                    if n.dot(&(g.position - cam_center)) > 0.0 {
                        n = -n;
                    }
                    Some([n.x, n.y, n.z])
                }
                GaussianKind::Isotropic3D => None,
            };
            Some(Ok(Splat {
                index,
                depth: z,
                mean: [k.fx * x / z + k.cx, k.fy * y / z + k.cy],
                conic: [c / det, -b / det, a / det],
                max_eigen: l_max,
                opacity: g.opacity,
                color: g.color,
                normal,
            }))
        })
        .collect();

    let mut splats = Vec::with_capacity(projected.len());
    for p in projected.into_iter().flatten() {
        match p {
            Ok(s) => splats.push(s),
            Err(true) => stats.behind += 1,
            Err(false) => stats.degenerate += 1,
        }
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    (splats, stats)
}

/// Per-pixel compositing state shared by both renderers.
struct PixelAccum {
    color: [f64; 3],
    depth: f64,
    normal: Vec3,
    has_normal: bool,
    transmittance: f64,
    done: bool,
}

impl PixelAccum {
    fn new() -> Self {
        Self {
            color: [0.0; 3],
            depth: 0.0,
            normal: Vec3::zeros(),
            has_normal: false,
            transmittance: 1.0,
            done: false,
        }
    }

    #[inline]
    fn add(&mut self, s: &Splat, alpha: f64, t_min: f64) {
        let w = alpha * self.transmittance;
        for c in 0..3 {
            self.color[c] += s.color[c] * w;
        }
        self.depth += s.depth * w;
        if let Some(n) = s.normal {
            self.normal += Vec3::new(n[0], n[1], n[2]) * w;
            self.has_normal = true;
        }
        self.transmittance *= 1.0 - alpha;
        if self.transmittance < t_min {
            self.done = true;
        }
    }

    fn finish(self, background: [f64; 3]) -> ([f64; 3], f64, f64, Option<[f64; 3]>) {
        let t = self.transmittance;
        let acc = 1.0 - t;
        let color = [
            self.color[0] + t * background[0],
            self.color[1] + t * background[1],
            self.color[2] + t * background[2],
        ];
        if acc <= 0.0 {
            return (background, 0.0, 0.0, None);
        }
        let depth = (self.depth / acc).max(0.0);
        let normal = if self.has_normal && self.normal.norm() > 1e-12 {
            let n = self.normal.normalize();
            Some([n.x, n.y, n.z])
        } else {
            None
        };
        (color, depth, acc.clamp(0.0, 1.0), normal)
    }
}

fn empty_views(cam: &CameraPose, background: [f64; 3], stats: RenderStats) -> RenderedViews {
    let (w, h) = (cam.width(), cam.height());
    RenderedViews {
        color: Image::new(w, h, background),
        depth: Image::new(w, h, 0.0),
        opacity: Image::new(w, h, 0.0),
        normal: Image::new(w, h, None),
        stats,
    }
}

/// Tiled renderer.
pub fn render(map: &GaussianMap, cam: &CameraPose, background: [f64; 3]) -> RenderedViews {
    render_with(map, cam, background, &RenderOptions::default())
}

pub fn render_with(map: &GaussianMap, cam: &CameraPose, background: [f64; 3], opts: &RenderOptions) -> RenderedViews {
    let (splats, stats) = project_splats(map, cam, opts);
    let (w, h) = (cam.width(), cam.height());
    let mut out = empty_views(cam, background, stats);
    if splats.is_empty() || w == 0 || h == 0 {
        return out;
    }
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        if s.opacity <= opts.alpha_min {
            continue;
        }
        let r = s.radius_for_falloff(opts.alpha_min / s.opacity);
        let Some((x0, x1, y0, y1)) = pixel_bounds(s.mean, r, w, h) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    let tiles: Vec<_> = bins
        .par_iter()
        .enumerate()
        .map(|(ti, bin)| {
            let tx = ti % tiles_x;
            let ty = ti / tiles_x;
            let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w);
            let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h);
            let mut pixels = Vec::with_capacity(xs.len() * ys.len());
            for y in ys.clone() {
                for x in xs.clone() {
                    let mut acc = PixelAccum::new();
                    for &si in bin {
                        let s = &splats[si as usize];
                        let alpha = s.opacity * s.falloff(x as f64, y as f64);
                        if alpha < opts.alpha_min {
                            continue;
                        }
                        acc.add(s, alpha, opts.transmittance_min);
                        if acc.done {
                            break;
                        }
                    }
                    pixels.push((x, y, acc.finish(background)));
                }
            }
            pixels
        })
        .collect();

    for tile in tiles {
        for (x, y, (c, d, o, n)) in tile {
            out.color.set(x, y, c);
            out.depth.set(x, y, d);
            out.opacity.set(x, y, o);
            out.normal.set(x, y, n);
        }
    }
    out
}

/// Inclusive pixel bounds of a disc, or `None` when it misses the image.
pub(crate) fn pixel_bounds(mean: [f64; 2], r: f64, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    if !r.is_finite() {
        return Some((0, w - 1, 0, h - 1));
    }
    let x0 = (mean[0] - r).ceil().max(0.0);
    let x1 = (mean[0] + r).floor().min(w as f64 - 1.0);
    let y0 = (mean[1] - r).ceil().max(0.0);
    let y1 = (mean[1] + r).floor().min(h as f64 - 1.0);
    if x0 > x1 || y0 > y1 || !x0.is_finite() || !y0.is_finite() {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Naive reference renderer: every pixel visits every projected splat in depth order.
pub fn render_bruteforce(map: &GaussianMap, cam: &CameraPose, background: [f64; 3]) -> RenderedViews {
    let opts = RenderOptions::default();
    let (splats, stats) = project_splats(map, cam, &opts);
    let mut out = empty_views(cam, background, stats);
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let mut acc = PixelAccum::new();
            for s in &splats {
                let alpha = s.opacity * s.falloff(x as f64, y as f64);
                acc.add(s, alpha, opts.transmittance_min);
                if acc.done {
                    break;
                }
            }
            let (c, d, o, n) = acc.finish(background);
            out.color.set(x, y, c);
            out.depth.set(x, y, d);
            out.opacity.set(x, y, o);
            out.normal.set(x, y, n);
        }
    }
    out
}
