//! Image and geometry quality metrics and the loss terms used for evaluation and refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhance::{virtual_loss, PseudoGT};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image, Mask, RgbImage};
use crate::model::{CameraPose, FrameRgbd, GaussianMap, Vec3};
use crate::render::{render, RenderedViews};

pub const PSNR_CAP_DB: f64 = 99.0;
const PSNR_CAP_MSE: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Depth disagreement above which a pixel is treated as an edge and left out of the normal loss.
pub const NORMAL_EDGE_THRESHOLD: f64 = 0.1;
pub const BACKGROUND: [f64; 3] = [0.0; 3];

fn check_shape<A: Copy, B: Copy>(a: &Image<A>, b: &Image<B>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: a.width * a.height,
            found: b.width * b.height,
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shape(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / (3 * a.len()) as f64)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m < PSNR_CAP_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean absolute difference over pixels and channels.
pub fn l1(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shape(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum();
    Ok(s / (3 * a.len()) as f64)
}

/// Per-pixel L1 averaged over channels.
pub fn l1_map(a: &RgbImage, b: &RgbImage) -> Result<GrayImage> {
    check_shape(a, b)?;
    Ok(Image {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(p, q)| ((p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()) / 3.0)
            .collect(),
    })
}

pub fn depth_l1(da: &GrayImage, db: &GrayImage, valid: &Mask) -> Result<f64> {
    check_shape(da, db)?;
    check_shape(da, valid)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..da.len() {
        if valid.data[i] {
            sum += (da.data[i] - db.data[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("no valid depth pixels".into()));
    }
    Ok(sum / n as f64)
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Window size used for an image: 11, or the largest odd size that fits.
pub fn ssim_window_size(width: usize, height: usize) -> usize {
    let m = SSIM_WINDOW.min(width).min(height);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

/// Valid-region separable filtering.
fn filter_valid(img: &[f64], w: usize, h: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = win.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * img[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Gaussian-window SSIM (σ = 1.5, `k1 = 0.01`, `k2 = 0.03`, unit data range) over the valid
/// region, averaged over channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shape(a, b)?;
    let n = ssim_window_size(a.width, a.height);
    if n == 0 {
        return Err(Error::InvalidInput("image too small for SSIM".into()));
    }
    let win = gaussian_window(n, SSIM_SIGMA);
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ow, oh) = filter_valid(&x, w, h, &win);
        let (my, _, _) = filter_valid(&y, w, h, &win);
        let (sxx, _, _) = filter_valid(&xx, w, h, &win);
        let (syy, _, _) = filter_valid(&yy, w, h, &win);
        let (sxy, _, _) = filter_valid(&xy, w, h, &win);
        let mut s = 0.0;
        for i in 0..ow * oh {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cxy = sxy[i] - mx[i] * my[i];
            s += ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += s / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Unit normals of a depth image from central differences of back-projected points,
/// oriented towards the camera. `None` where a neighbor has no depth.
pub fn depth_normals(depth: &GrayImage, cam: &CameraPose) -> Image<Option<[f64; 3]>> {
    let (w, h) = (depth.width, depth.height);
    let lift = |x: usize, y: usize| -> Option<Vec3> {
        let d = depth.get(x, y);
        (d > 0.0).then(|| cam.lift_pixel(x as f64, y as f64, d))
    };
    let center = cam.center();
    Image::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return None;
        }
        let p = lift(x, y)?;
        let dx = lift(x + 1, y)? - lift(x - 1, y)?;
        let dy = lift(x, y + 1)? - lift(x, y - 1)?;
        let n = dx.cross(&dy);
        let len = n.norm();
        if !(len > 0.0) {
            return None;
        }
        let mut n = n / len;
        if n.dot(&(center - p)) < 0.0 {
            n = -n;
        }
        Some([n.x, n.y, n.z])
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalLoss {
    pub value: f64,
    pub valid_pixels: usize,
}

impl NormalLoss {
    /// `false` when no pixel qualified and the value defaulted to 0.
    pub fn is_valid(&self) -> bool {
        self.valid_pixels > 0
    }
}

/// Mean `1 − ⟨n_rendered, n_gt⟩` over pixels with both normals and a depth disagreement of
/// at most `edge_threshold`.
pub fn normal_loss(rendered: &RenderedViews, gt_depth: &GrayImage, cam: &CameraPose, edge_threshold: f64) -> Result<NormalLoss> {
    check_shape(&rendered.depth, gt_depth)?;
    if !(edge_threshold > 0.0) {
        return Err(Error::InvalidInput("edge threshold must be positive".into()));
    }
    let gt = depth_normals(gt_depth, cam);
    normal_loss_with(rendered, gt_depth, &gt, edge_threshold)
}

pub(crate) fn normal_loss_with(
    rendered: &RenderedViews,
    gt_depth: &GrayImage,
    gt_normals: &Image<Option<[f64; 3]>>,
    edge_threshold: f64,
) -> Result<NormalLoss> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..gt_depth.len() {
        let (Some(nr), Some(ng)) = (rendered.normal.data[i], gt_normals.data[i]) else {
            continue;
        };
        if (rendered.depth.data[i] - gt_depth.data[i]).abs() > edge_threshold {
            continue;
        }
        sum += 1.0 - (nr[0] * ng[0] + nr[1] * ng[1] + nr[2] * ng[2]);
        n += 1;
    }
    Ok(NormalLoss {
        value: if n > 0 { sum / n as f64 } else { 0.0 },
        valid_pixels: n,
    })
}

/// Mean over Gaussians of the product of the two largest scale components.
pub fn scale_regularization(map: &GaussianMap) -> f64 {
    if map.is_empty() {
        return 0.0;
    }
    let s: f64 = map
        .gaussians
        .iter()
        .map(|g| {
            let mut v = [g.scale.x, g.scale.y, g.scale.z];
            v.sort_by(f64::total_cmp);
            v[1] * v[2]
        })
        .sum();
    s / map.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_obs: f64,
    pub w_ssim: f64,
    pub w_reg: f64,
    pub w_depth: f64,
    pub w_normal: f64,
    pub w_total_t: f64,
    pub w_total_v: f64,
    pub lambda_q: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_obs: 1.0,
            w_ssim: 0.05,
            w_reg: 0.1,
            w_depth: 1.0,
            w_normal: 0.1,
            w_total_t: 1.0,
            w_total_v: 0.1,
            lambda_q: 0.0025,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_obs: 0.0,
            w_ssim: 0.0,
            w_reg: 0.0,
            w_depth: 0.0,
            w_normal: 0.0,
            w_total_t: 0.0,
            w_total_v: 0.0,
            lambda_q: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.w_obs,
            self.w_ssim,
            self.w_reg,
            self.w_depth,
            self.w_normal,
            self.w_total_t,
            self.w_total_v,
            self.lambda_q,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted terms of the training-view loss, each averaged over frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub reg: f64,
    pub depth: f64,
    pub normal: f64,
}

impl LossBreakdown {
    pub fn weighted(&self, w: &LossWeights) -> [f64; 5] {
        [
            w.w_obs * self.l1,
            w.w_ssim * self.ssim,
            w.w_reg * self.reg,
            w.w_depth * self.depth,
            w.w_normal * self.normal,
        ]
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        self.weighted(w).iter().sum()
    }
}

/// Sum that does not depend on the input order.
fn order_free_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Per-frame image terms: `(l1, 1 − ssim, depth L1, normal loss)`.
fn frame_terms(map: &GaussianMap, frame: &FrameRgbd) -> Result<[f64; 4]> {
    let r = render(map, &frame.pose, BACKGROUND);
    let l = l1(&r.color, &frame.color)?;
    let s = 1.0 - ssim(&r.color, &frame.color)?;
    let valid = frame.depth.map(|d| d > 0.0);
    let d = if valid.count() > 0 {
        depth_l1(&r.depth, &frame.depth, &valid)?
    } else {
        0.0
    };
    let n = normal_loss(&r, &frame.depth, &frame.pose, NORMAL_EDGE_THRESHOLD)?.value;
    Ok([l, s, d, n])
}

/// Training-view loss terms averaged over `frames`.
pub fn training_loss(map: &GaussianMap, frames: &[FrameRgbd], weights: &LossWeights) -> Result<(f64, LossBreakdown)> {
    weights.check()?;
    if frames.is_empty() {
        return Err(Error::InsufficientData("training loss needs at least one frame".into()));
    }
    let per: Vec<[f64; 4]> = frames.par_iter().map(|f| frame_terms(map, f)).collect::<Result<_>>()?;
    let n = frames.len() as f64;
    let col = |i: usize| order_free_sum(per.iter().map(|t| t[i]).collect()) / n;
    let b = LossBreakdown {
        l1: col(0),
        ssim: col(1),
        reg: scale_regularization(map),
        depth: col(2),
        normal: col(3),
    };
    Ok((b.total(weights), b))
}

/// `w_t · L^t + w_v · mean virtual loss`.
pub fn total_loss(map: &GaussianMap, frames: &[FrameRgbd], pseudo: &[PseudoGT], weights: &LossWeights) -> Result<f64> {
    let (lt, _) = training_loss(map, frames, weights)?;
    Ok(weights.w_total_t * lt + weights.w_total_v * mean_virtual_loss(map, pseudo)?)
}

pub fn mean_virtual_loss(map: &GaussianMap, pseudo: &[PseudoGT]) -> Result<f64> {
    if pseudo.is_empty() {
        return Ok(0.0);
    }
    let per: Vec<f64> = pseudo
        .par_iter()
        .map(|p| virtual_loss(&render(map, &p.pose, BACKGROUND).color, p))
        .collect::<Result<_>>()?;
    Ok(order_free_sum(per) / pseudo.len() as f64)
}

pub fn update_objective(bits: f64, distortion: f64, lambda_q: f64) -> f64 {
    lambda_q * bits + distortion
}

/// Zeroes the opacity of Gaussians below `threshold`; their slots stay in place so the
/// anchor layout is unchanged. Returns the map and the number of pruned Gaussians.
pub fn prune_by_opacity(map: &GaussianMap, threshold: f64) -> (GaussianMap, usize) {
    let mut out = map.clone();
    let mut pruned = 0;
    for g in &mut out.gaussians {
        if g.opacity < threshold {
            g.opacity = 0.0;
            pruned += 1;
        }
    }
    (out, pruned)
}

/// Mean quality of a map over a set of ground-truth views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub depth_l1_m: f64,
    pub views: usize,
}

pub fn evaluate_views(map: &GaussianMap, views: &[FrameRgbd]) -> Result<EvalSummary> {
    if views.is_empty() {
        return Ok(EvalSummary::default());
    }
    let per: Vec<[f64; 3]> = views
        .par_iter()
        .map(|v| {
            let r = render(map, &v.pose, BACKGROUND);
            let valid = v.depth.map(|d| d > 0.0);
            let d = if valid.count() > 0 {
                depth_l1(&r.depth, &v.depth, &valid)?
            } else {
                0.0
            };
            Ok([psnr(&r.color, &v.color)?, ssim(&r.color, &v.color)?, d])
        })
        .collect::<Result<_>>()?;
    let n = views.len() as f64;
    Ok(EvalSummary {
        psnr_db: per.iter().map(|p| p[0]).sum::<f64>() / n,
        ssim: per.iter().map(|p| p[1]).sum::<f64>() / n,
        depth_l1_m: per.iter().map(|p| p[2]).sum::<f64>() / n,
        views: views.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gaussian, Intrinsics, Quat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RgbImage {
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn ssim_reference(a: &RgbImage, b: &RgbImage) -> f64 {
        let n = ssim_window_size(a.width, a.height);
        let g = gaussian_window(n, SSIM_SIGMA);
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for oy in 0..=a.height - n {
                for ox in 0..=a.width - n {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..n {
                        for i in 0..n {
                            let w = g[i] * g[j];
                            let x = a.get(ox + i, oy + j)[c];
                            let y = b.get(ox + i, oy + j)[c];
                            mx += w * x;
                            my += w * y;
                            xx += w * x * x;
                            yy += w * y * y;
                            xy += w * x * y;
                        }
                    }
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cv + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(20, 16, &mut rng);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = Image::new(8, 8, [0.5; 3]);
        let b = Image::new(8, 8, [0.6; 3]);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_scalar_reference_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let a = random_image(24, 18, &mut rng);
            let b = random_image(24, 18, &mut rng);
            let s = ssim(&a, &b).unwrap();
            assert!((s - ssim_reference(&a, &b)).abs() < 1e-9);
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
            let m: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum::<f64>()
                / (3.0 * a.len() as f64);
            assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_and_empty_mask() {
        let a = Image::new(4, 4, [0.0; 3]);
        let b = Image::new(4, 5, [0.0; 3]);
        assert!(psnr(&a, &b).is_err());
        let d = Image::new(4, 4, 1.0);
        assert!(depth_l1(&d, &d, &Image::new(4, 4, false)).is_err());
    }

    #[test]
    fn scale_reg_examples() {
        let mut m = GaussianMap::empty(1, 0.03);
        m.push_anchor([0, 0, 0], vec![Gaussian::isotropic(Vec3::zeros(), 0.0, 1.0, [0.0; 3])]).unwrap();
        assert_eq!(scale_regularization(&m), 0.0);
        let mut m = GaussianMap::empty(1, 0.03);
        m.push_anchor([0, 0, 0], vec![Gaussian::isotropic(Vec3::zeros(), 0.2, 1.0, [0.0; 3])]).unwrap();
        assert!((scale_regularization(&m) - 0.04).abs() < 1e-15);
        let mut m = GaussianMap::empty(1, 0.03);
        m.push_anchor([0, 0, 0], vec![Gaussian::flat(Vec3::zeros(), [0.1, 0.3], Quat::identity(), 1.0, [0.0; 3])]).unwrap();
        let v = scale_regularization(&m);
        m.gaussians[0].scale *= 2.0;
        assert!((scale_regularization(&m) - 4.0 * v).abs() < 1e-15);
    }

    #[test]
    fn update_objective_examples() {
        assert_eq!(update_objective(0.0, 0.7, 0.0025), 0.7);
        assert_eq!(update_objective(123.0, 0.7, 0.0), 0.7);
        assert!((update_objective(1000.0, 0.5, 0.0025) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn prune_examples() {
        let mut m = GaussianMap::empty(2, 0.03);
        let g = |o| Gaussian::flat(Vec3::new(0.0, 0.0, 1.0), [0.01, 0.01], Quat::identity(), o, [0.5; 3]);
        m.push_anchor([0, 0, 33], vec![g(0.3), g(0.9)]).unwrap();
        assert_eq!(prune_by_opacity(&m, 0.0).0, m);
        let (p, n) = prune_by_opacity(&m, 1.0);
        assert_eq!(n, 2);
        assert_eq!(p.len(), 2);
        assert!(p.gaussians.iter().all(|g| g.opacity == 0.0));
    }

    fn plane_setup() -> (CameraPose, GrayImage) {
        let k = Intrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: 7.5,
            cy: 5.5,
            width: 16,
            height: 12,
        };
        let cam = CameraPose::new(Quat::identity(), Vec3::zeros(), k);
        (cam, Image::new(16, 12, 2.0))
    }

    fn fake_render(depth: &GrayImage, normal: [f64; 3]) -> RenderedViews {
        RenderedViews {
            color: Image::new(depth.width, depth.height, [0.0; 3]),
            depth: depth.clone(),
            opacity: Image::new(depth.width, depth.height, 1.0),
            normal: Image::new(depth.width, depth.height, Some(normal)),
            stats: Default::default(),
        }
    }

    #[test]
    fn normal_loss_examples() {
        let (cam, depth) = plane_setup();
        let gt = depth_normals(&depth, &cam);
        let interior = gt.data.iter().filter(|n| n.is_some()).count();
        assert_eq!(interior, 14 * 10);
        for n in gt.data.iter().flatten() {
            assert!((n[2] + 1.0).abs() < 1e-12);
        }
        let same = normal_loss(&fake_render(&depth, [0.0, 0.0, -1.0]), &depth, &cam, 0.1).unwrap();
        assert!(same.value.abs() < 1e-12);
        let anti = normal_loss(&fake_render(&depth, [0.0, 0.0, 1.0]), &depth, &cam, 0.1).unwrap();
        assert!((anti.value - 2.0).abs() < 1e-12);
        let none = normal_loss(&fake_render(&Image::new(16, 12, 0.0), [0.0, 0.0, 1.0]), &Image::new(16, 12, 0.0), &cam, 0.1).unwrap();
        assert!(!none.is_valid());
    }

    #[test]
    fn normal_loss_edge_filter_matches_manual_mask() {
        let (cam, depth) = plane_setup();
        let mut r = fake_render(&depth, [0.0, 0.6, -0.8]);
        r.depth.set(5, 5, 2.2);
        let filtered = normal_loss(&r, &depth, &cam, 0.1).unwrap();
        let mut manual = fake_render(&depth, [0.0, 0.6, -0.8]);
        manual.normal.set(5, 5, None);
        let masked = normal_loss(&manual, &depth, &cam, 0.1).unwrap();
        assert_eq!(filtered, masked);
        assert_eq!(filtered.valid_pixels, 139);
    }
}
