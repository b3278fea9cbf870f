//! Pseudo ground truth from the virtual map: virtual pose sampling, hole detection and
//! filling, the confidence predictor and the virtual-view loss.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Image, Mask, RgbImage};
use crate::metrics::{l1_map, BACKGROUND};
use crate::model::{pose_distance, CameraPose, GaussianMap, Intrinsics, Vec3};
use crate::render::{render, RenderedViews};

/// Rotation difference (degrees) below which a pose counts as close to an input pose.
pub const CLOSE_ROTATION_DEG: f64 = 10.0;
/// Translation (meters) below which a pose counts as close to an input pose.
pub const CLOSE_TRANSLATION_M: f64 = 0.3;
pub const HOLE_THRESHOLD: f64 = 0.5;
/// Filled pixels with less rendered opacity than this get zero confidence.
pub const UNRECOVERABLE_OPACITY: f64 = 0.1;
pub const INPAINT_MAX_ITERS: usize = 20_000;
pub const INPAINT_TOL: f64 = 1e-6;
pub const RIDGE_LAMBDA: f64 = 1e-3;
const SOR_OMEGA: f64 = 1.9;
/// Distance-to-hole feature saturates here (pixels).
const HOLE_DISTANCE_CAP: f64 = 8.0;
pub const N_FEATURES: usize = 5;

/// Both thresholds undercut: the pose is an interpolation of `b`.
pub fn is_close(a: &CameraPose, b: &CameraPose) -> bool {
    let (deg, m) = pose_distance(a, b);
    deg < CLOSE_ROTATION_DEG && m < CLOSE_TRANSLATION_M
}

/// `true` iff `pose` is not close to any input pose.
pub fn is_extrapolated(pose: &CameraPose, inputs: &[CameraPose]) -> bool {
    inputs.iter().all(|p| !is_close(pose, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualPoses {
    pub poses: Vec<CameraPose>,
    /// Fewer than the requested number of poses could be found.
    pub shortfall: bool,
}

/// Random camera looking horizontally-ish from a uniform position inside `bounds`.
pub fn random_pose(rng: &mut impl Rng, bounds: (Vec3, Vec3), k: Intrinsics) -> CameraPose {
    let (lo, hi) = bounds;
    let eye = Vec3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), rng.random_range(lo.z..=hi.z));
    let yaw: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let pitch: f64 = rng.random_range(-0.5..0.3);
    let dir = Vec3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    CameraPose::look_at(eye, eye + dir, Vec3::z(), k)
}

/// Samples `n` poses far from every input pose (rotation ≥ 10° or translation ≥ 0.3 m),
/// with positions inside `bounds` accepted by `free`. Gives up after `100·n` attempts.
pub fn sample_virtual_poses(
    bounds: (Vec3, Vec3),
    inputs: &[CameraPose],
    n: usize,
    seed: u64,
    intrinsics: Intrinsics,
    free: impl Fn(&Vec3) -> bool,
) -> Result<VirtualPoses> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one virtual pose".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(n);
    for _ in 0..100 * n {
        if poses.len() == n {
            break;
        }
        let p = random_pose(&mut rng, bounds, intrinsics);
        if free(&p.translation) && is_extrapolated(&p, inputs) {
            poses.push(p);
        }
    }
    let shortfall = poses.len() < n;
    if shortfall {
        warn!("only {} of {n} virtual poses satisfy the distance predicate", poses.len());
    }
    Ok(VirtualPoses { poses, shortfall })
}

pub fn detect_holes(opacity: &GrayImage, threshold: f64) -> Mask {
    opacity.map(|o| o < threshold)
}

/// Harmonic fill of the masked pixels of a multi-channel image.
///
/// Off-mask pixels are copied unchanged. Masked pixels are relaxed by successive
/// over-relaxation towards the mean of their in-image 4-neighbors until every masked
/// residual is at most `tol` or `max_iters` sweeps have run.
pub fn inpaint<const C: usize>(image: &Image<[f64; C]>, mask: &Mask, max_iters: usize, tol: f64) -> Result<Image<[f64; C]>> {
    if !image.same_shape(mask) {
        return Err(Error::DimensionMismatch {
            expected: image.len(),
            found: mask.len(),
        });
    }
    let known = mask.data.iter().filter(|m| !**m).count();
    if known == 0 {
        return Err(Error::NoBoundary);
    }
    let mut out = image.clone();
    let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask.data[i]).collect();
    if masked.is_empty() {
        return Ok(out);
    }
    let (w, h) = (image.width, image.height);
    // start from the nearest known value (breadth-first) so the relaxation starts close
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    for i in 0..mask.len() {
        if !mask.data[i] {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i, w, h).into_iter().flatten() {
            if !seen[j] {
                seen[j] = true;
                out.data[j] = out.data[i];
                queue.push_back(j);
            }
        }
    }
    for _ in 0..max_iters {
        for &i in &masked {
            let mean = neighbor_mean(&out.data, i, w, h);
            for c in 0..C {
                let v = out.data[i][c];
                out.data[i][c] = v + SOR_OMEGA * (mean[c] - v);
            }
        }
        if max_residual(&out.data, &masked, w, h) <= tol {
            return Ok(out);
        }
    }
    warn!("inpainting stopped after {max_iters} sweeps above tolerance {tol}");
    Ok(out)
}

/// Largest `|p − mean(neighbors)|` over the given pixels and channels.
pub fn max_residual<const C: usize>(data: &[[f64; C]], pixels: &[usize], w: usize, h: usize) -> f64 {
    pixels
        .iter()
        .map(|&i| {
            let m = neighbor_mean(data, i, w, h);
            (0..C).map(|c| (data[i][c] - m[c]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[inline]
fn neighbors(i: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
}

#[inline]
fn neighbor_mean<const C: usize>(data: &[[f64; C]], i: usize, w: usize, h: usize) -> [f64; C] {
    let mut s = [0.0; C];
    let mut n = 0.0;
    for j in neighbors(i, w, h).into_iter().flatten() {
        for c in 0..C {
            s[c] += data[j][c];
        }
        n += 1.0;
    }
    if n > 0.0 {
        s.iter_mut().for_each(|v| *v /= n);
    }
    s
}

/// Inpaints a single-channel image.
pub fn inpaint_gray(image: &GrayImage, mask: &Mask, max_iters: usize, tol: f64) -> Result<GrayImage> {
    Ok(inpaint(&image.map(|v| [v]), mask, max_iters, tol)?.map(|v| v[0]))
}

/// `(τ − L1)/τ` per pixel, clamped to `[0, 1]`.
pub fn compute_confidence_target(calib: &RgbImage, observed: &RgbImage, tau: f64) -> Result<GrayImage> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    Ok(l1_map(calib, observed)?.map(|e| ((tau - e) / tau).clamp(0.0, 1.0)))
}

/// A virtual render after hole filling.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualView {
    pub image: RgbImage,
    pub depth: GrayImage,
    pub opacity: GrayImage,
    pub holes: Mask,
}

/// Detects holes and fills color and depth.
pub fn prepare_view(r: &RenderedViews, hole_threshold: f64) -> Result<VirtualView> {
    let holes = detect_holes(&r.opacity, hole_threshold);
    let image = inpaint(&r.color, &holes, INPAINT_MAX_ITERS, INPAINT_TOL)?;
    let depth = inpaint_gray(&r.depth, &holes, INPAINT_MAX_ITERS, INPAINT_TOL)?;
    Ok(VirtualView {
        image,
        depth,
        opacity: r.opacity.clone(),
        holes,
    })
}

/// Breadth-first 4-connected distance to the nearest hole pixel, capped.
fn hole_distance(holes: &Mask) -> GrayImage {
    let (w, h) = (holes.width, holes.height);
    let mut dist = vec![f64::INFINITY; holes.len()];
    let mut queue = VecDeque::new();
    for i in 0..holes.len() {
        if holes.data[i] {
            dist[i] = 0.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i, w, h).into_iter().flatten() {
            if dist[j] > dist[i] + 1.0 {
                dist[j] = dist[i] + 1.0;
                queue.push_back(j);
            }
        }
    }
    Image {
        width: w,
        height: h,
        data: dist.into_iter().map(|d| d.min(HOLE_DISTANCE_CAP) / HOLE_DISTANCE_CAP).collect(),
    }
}

/// Per-pixel features: local 5×5 luma mean and variance, rendered opacity, depth-gradient
/// magnitude and normalized distance to the nearest hole.
pub fn pixel_features(view: &VirtualView) -> Vec<[f64; N_FEATURES]> {
    let (w, h) = (view.image.width, view.image.height);
    let gray = view.image.to_gray();
    let dist = hole_distance(&view.holes);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for yy in y.saturating_sub(2)..(y + 3).min(h) {
                for xx in x.saturating_sub(2)..(x + 3).min(w) {
                    let v = gray.get(xx, yy);
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            let d = |xx: usize, yy: usize| view.depth.get(xx, yy);
            let gx = if w > 1 { (d((x + 1).min(w - 1), y) - d(x.saturating_sub(1), y)) / 2.0 } else { 0.0 };
            let gy = if h > 1 { (d(x, (y + 1).min(h - 1)) - d(x, y.saturating_sub(1))) / 2.0 } else { 0.0 };
            let grad = (gx * gx + gy * gy).sqrt().min(1.0);
            out.push([mean, var, view.opacity.get(x, y), grad, dist.get(x, y)]);
        }
    }
    out
}

/// Ridge regressor over standardized pixel features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePredictor {
    pub intercept: f64,
    pub weights: [f64; N_FEATURES],
    pub feature_mean: [f64; N_FEATURES],
    /// Zero for features without variance; such features are ignored.
    pub feature_scale: [f64; N_FEATURES],
    /// Largest per-pixel calibration L1.
    pub tau: f64,
}

impl ConfidencePredictor {
    pub fn constant(value: f64, tau: f64) -> Self {
        Self {
            intercept: value,
            weights: [0.0; N_FEATURES],
            feature_mean: [0.0; N_FEATURES],
            feature_scale: [0.0; N_FEATURES],
            tau,
        }
    }

    pub fn predict_pixel(&self, f: &[f64; N_FEATURES]) -> f64 {
        let mut y = self.intercept;
        for j in 0..N_FEATURES {
            if self.feature_scale[j] > 0.0 {
                y += self.weights[j] * (f[j] - self.feature_mean[j]) / self.feature_scale[j];
            }
        }
        if y.is_nan() {
            0.0
        } else {
            y.clamp(0.0, 1.0)
        }
    }
}

/// Ridge fit (λ = [`RIDGE_LAMBDA`], unpenalized intercept) of targets on features.
pub fn fit_ridge(features: &[[f64; N_FEATURES]], targets: &[f64], tau: f64) -> Result<ConfidencePredictor> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::InsufficientData("no calibration pixels".into()));
    }
    let n = features.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;
    let mut mean = [0.0; N_FEATURES];
    let mut scale = [0.0; N_FEATURES];
    for j in 0..N_FEATURES {
        mean[j] = features.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
        scale[j] = if var > 1e-18 { var.sqrt() } else { 0.0 };
    }
    let active: Vec<usize> = (0..N_FEATURES).filter(|&j| scale[j] > 0.0).collect();
    if active.is_empty() {
        return Ok(ConfidencePredictor::constant(y_mean, tau));
    }
    let p = active.len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (f, &y) in features.iter().zip(targets) {
        let z: Vec<f64> = active.iter().map(|&j| (f[j] - mean[j]) / scale[j]).collect();
        for a in 0..p {
            xty[a] += z[a] * (y - y_mean);
            for b in 0..p {
                xtx[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..p {
        xtx[(a, a)] += RIDGE_LAMBDA * n;
    }
    let sol = xtx
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("ridge system is not positive definite".into()))?
        .solve(&xty);
    let mut weights = [0.0; N_FEATURES];
    for (a, &j) in active.iter().enumerate() {
        weights[j] = sol[a];
    }
    Ok(ConfidencePredictor {
        intercept: y_mean,
        weights,
        feature_mean: mean,
        feature_scale: scale,
        tau,
    })
}

/// Fits the predictor on `(virtual view at a training pose, observed image)` pairs; τ is
/// the largest per-pixel L1 over all pairs.
pub fn fit_confidence_predictor(pairs: &[(VirtualView, RgbImage)]) -> Result<ConfidencePredictor> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no calibration pairs".into()));
    }
    let errors: Vec<GrayImage> = pairs.iter().map(|(v, o)| l1_map(&v.image, o)).collect::<Result<_>>()?;
    let tau = errors.iter().flat_map(|e| e.data.iter().copied()).fold(0.0, f64::max);
    if !(tau > 0.0) {
        return Ok(ConfidencePredictor::constant(1.0, f64::MIN_POSITIVE));
    }
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    for (v, o) in pairs {
        feats.extend(pixel_features(v));
        targets.extend(compute_confidence_target(&v.image, o, tau)?.data);
    }
    fit_ridge(&feats, &targets, tau)
}

pub fn predict_confidence(pred: &ConfidencePredictor, view: &VirtualView) -> GrayImage {
    let f = pixel_features(view);
    Image {
        width: view.image.width,
        height: view.image.height,
        data: f.iter().map(|x| pred.predict_pixel(x)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGT {
    pub pose: CameraPose,
    pub image: RgbImage,
    pub depth: GrayImage,
    pub confidence: GrayImage,
    pub holes: Mask,
}

impl PseudoGT {
    pub fn check(&self) -> Result<()> {
        let (w, h) = (self.pose.width(), self.pose.height());
        let shape_ok = |a: usize, b: usize| a == w && b == h;
        if !shape_ok(self.image.width, self.image.height)
            || !shape_ok(self.depth.width, self.depth.height)
            || !shape_ok(self.confidence.width, self.confidence.height)
        {
            return Err(Error::InvalidInput("pseudo ground truth buffers do not match the pose".into()));
        }
        if self.confidence.data.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("confidence outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Mean over pixels of per-pixel L1 times confidence.
pub fn virtual_loss(global_render: &RgbImage, pseudo: &PseudoGT) -> Result<f64> {
    let e = l1_map(global_render, &pseudo.image)?;
    if !e.same_shape(&pseudo.confidence) {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            found: pseudo.confidence.len(),
        });
    }
    Ok(e.data.iter().zip(&pseudo.confidence.data).map(|(a, b)| a * b).sum::<f64>() / e.len() as f64)
}

/// Renders the virtual map at each pose, fills holes and attaches predicted confidence.
/// Poses whose render is entirely hole are skipped; their indices are returned.
pub fn make_pseudo_gt(
    virtual_map: &GaussianMap,
    poses: &[CameraPose],
    pred: &ConfidencePredictor,
    hole_threshold: f64,
) -> Result<(Vec<PseudoGT>, Vec<usize>)> {
    if virtual_map.is_empty() {
        return Err(Error::InsufficientData("virtual map is empty".into()));
    }
    let results: Vec<Result<PseudoGT>> = poses
        .par_iter()
        .map(|pose| {
            let r = render(virtual_map, pose, BACKGROUND);
            let view = prepare_view(&r, hole_threshold)?;
            let mut confidence = predict_confidence(pred, &view);
            for i in 0..confidence.len() {
                if view.holes.data[i] && view.opacity.data[i] < UNRECOVERABLE_OPACITY {
                    confidence.data[i] = 0.0;
                }
            }
            Ok(PseudoGT {
                pose: *pose,
                image: view.image,
                depth: view.depth,
                confidence,
                holes: view.holes,
            })
        })
        .collect();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => out.push(p),
            Err(Error::NoBoundary) => {
                warn!("virtual pose {i} sees no geometry; skipped");
                skipped.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Quat;

    fn cam_at(p: Vec3, yaw_deg: f64) -> CameraPose {
        let r = Quat::from_axis_angle(&Vec3::z_axis(), yaw_deg.to_radians());
        CameraPose::new(r, p, Intrinsics::desk_default())
    }

    #[test]
    fn closeness_predicate() {
        let a = cam_at(Vec3::zeros(), 0.0);
        assert!(!is_extrapolated(&a, &[a]));
        assert!(is_extrapolated(&cam_at(Vec3::zeros(), 90.0), &[a]));
        assert!(is_extrapolated(&cam_at(Vec3::new(0.5, 0.0, 0.0), 0.0), &[a]));
        assert!(!is_extrapolated(&cam_at(Vec3::new(0.1, 0.0, 0.0), 5.0), &[a]));
    }

    #[test]
    fn sampled_poses_respect_predicate() {
        let inputs: Vec<CameraPose> = (0..5).map(|i| cam_at(Vec3::new(i as f64 * 0.3, 0.5, 0.8), i as f64 * 40.0)).collect();
        let bounds = (Vec3::new(0.0, 0.0, 0.5), Vec3::new(2.0, 1.5, 1.2));
        let s = sample_virtual_poses(bounds, &inputs, 500, 3, Intrinsics::desk_default(), |_| true).unwrap();
        assert_eq!(s.poses.len(), 500);
        for p in &s.poses {
            assert!(is_extrapolated(p, &inputs));
            let t = p.translation;
            assert!(t.x >= 0.0 && t.x <= 2.0 && t.z >= 0.5 && t.z <= 1.2);
        }
        let again = sample_virtual_poses(bounds, &inputs, 500, 3, Intrinsics::desk_default(), |_| true).unwrap();
        assert_eq!(again, s);
        let none = sample_virtual_poses(bounds, &inputs, 3, 3, Intrinsics::desk_default(), |_| false).unwrap();
        assert!(none.shortfall && none.poses.is_empty());
    }

    #[test]
    fn hole_detection() {
        assert_eq!(detect_holes(&Image::new(4, 3, 1.0), 0.5).count(), 0);
        assert_eq!(detect_holes(&Image::new(4, 3, 0.0), 0.5).count(), 12);
        let checker = Image::from_fn(6, 4, |x, y| ((x + y) % 2) as f64);
        let m = detect_holes(&checker, 0.5);
        assert!((0..24).all(|i| m.data[i] == (checker.data[i] == 0.0)));
    }

    #[test]
    fn inpaint_examples() {
        let img = Image::from_fn(10, 3, |x, _| [x as f64 / 9.0; 3]);
        assert_eq!(inpaint(&img, &Image::new(10, 3, false), 10, 1e-9).unwrap(), img);
        let strip = Image::from_fn(10, 3, |x, _| if x == 9 { [1.0; 3] } else { [0.0; 3] });
        let mask = Image::from_fn(10, 3, |x, _| x > 0 && x < 9);
        let out = inpaint(&strip, &mask, 50_000, 1e-10).unwrap();
        for y in 0..3 {
            for x in 0..10 {
                assert!((out.get(x, y)[0] - x as f64 / 9.0).abs() < 1e-6, "{x} {y}");
            }
        }
        let c = 0.37;
        let disk = Image::from_fn(21, 21, |x, y| (x as f64 - 10.0).hypot(y as f64 - 10.0) < 6.0);
        let base = Image::from_fn(21, 21, |x, y| if disk.get(x, y) { [0.9, 0.1, 0.5] } else { [c; 3] });
        let out = inpaint(&base, &disk, 50_000, 1e-9).unwrap();
        for i in 0..out.len() {
            assert!(out.data[i].iter().all(|v| (v - c).abs() < 1e-6));
        }
        assert!(matches!(inpaint(&base, &Image::new(21, 21, true), 10, 1e-6), Err(Error::NoBoundary)));
    }

    #[test]
    fn confidence_target_examples() {
        let a = Image::new(4, 4, [0.2; 3]);
        assert!(compute_confidence_target(&a, &a, 0.5).unwrap().data.iter().all(|v| *v == 1.0));
        let b = Image::new(4, 4, [0.7; 3]);
        assert!(compute_confidence_target(&a, &b, 0.5).unwrap().data.iter().all(|v| v.abs() < 1e-12));
        assert!(compute_confidence_target(&a, &b, 0.0).is_err());
    }

    #[test]
    fn constant_targets_give_constant_predictor() {
        let feats: Vec<[f64; N_FEATURES]> = (0..200).map(|i| [i as f64, (i * 7 % 13) as f64, 0.5, 0.0, 1.0]).collect();
        let p = fit_ridge(&feats, &vec![0.5; 200], 1.0).unwrap();
        for f in &feats {
            assert!((p.predict_pixel(f) - 0.5).abs() < 1e-6);
        }
        let flat: Vec<[f64; N_FEATURES]> = vec![[0.3; N_FEATURES]; 10];
        let q = fit_ridge(&flat, &(0..10).map(|i| i as f64 / 10.0).collect::<Vec<_>>(), 1.0).unwrap();
        assert_eq!(q.weights, [0.0; N_FEATURES]);
        assert!((q.intercept - 0.45).abs() < 1e-12);
    }

    #[test]
    fn virtual_loss_examples() {
        let pose = cam_at(Vec3::zeros(), 0.0);
        let (w, h) = (pose.width(), pose.height());
        let p = PseudoGT {
            pose,
            image: Image::new(w, h, [0.5; 3]),
            depth: Image::new(w, h, 1.0),
            confidence: Image::new(w, h, 1.0),
            holes: Image::new(w, h, false),
        };
        assert_eq!(virtual_loss(&p.image, &p).unwrap(), 0.0);
        let other = Image::new(w, h, [0.7; 3]);
        assert!((virtual_loss(&other, &p).unwrap() - 0.2).abs() < 1e-12);
        let zero = PseudoGT {
            confidence: Image::new(w, h, 0.0),
            ..p.clone()
        };
        assert_eq!(virtual_loss(&other, &zero).unwrap(), 0.0);
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
