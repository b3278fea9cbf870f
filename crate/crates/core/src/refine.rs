//! Color and opacity refinement with geometry frozen.
//!
//! Geometry does not change during refinement, so the depth-sorted list of
//! `(Gaussian, falloff)` fragments per pixel is computed once per view
//! ([`ViewFragments`]). Forward compositing and the analytic backward pass then only
//! touch the cached fragments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhance::PseudoGT;
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image, RgbImage};
use crate::metrics::{LossWeights, BACKGROUND};
use crate::model::{CameraPose, FrameRgbd, GaussianMap};
use crate::render::{pixel_bounds, project_splats, RenderOptions};

/// Smoothing of the L1 penalty `sqrt(r² + ε²)`.
pub const CHARBONNIER_EPS: f64 = 1e-6;
/// Fragments whose falloff is below this are not cached.
pub const FRAGMENT_MIN_FALLOFF: f64 = 1e-4;
/// Compositing stops after the fragment that takes transmittance below this, as in the
/// renderer.
pub const STOP_TRANSMITTANCE: f64 = 1e-4;
/// Cached lists extend until the reference transmittance falls below this.
pub const KEEP_TRANSMITTANCE: f64 = 1e-6;
/// Cuts are computed for opacities scaled by this factor, so small decreases keep the
/// cache fresh.
const REFERENCE_SCALE: f64 = 0.5;
/// Iterations between recomputing the list cuts.
const RECUT_EVERY: usize = 10;
pub const DEFAULT_ITERS: usize = 200;
pub const DEFAULT_STEP: f64 = 0.05;
pub const MAX_BACKTRACKS: usize = 20;
const RMS_DECAY: f64 = 0.9;
/// Step growth after an iteration that needed no backtracking.
const STEP_GROWTH: f64 = 1.5;
const RMS_FLOOR: f64 = 1e-12;
/// Views processed together before their gradients are reduced in order.
const VIEW_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    /// Smoothed absolute error.
    Charbonnier,
    Squared,
}

impl Penalty {
    #[inline]
    fn value(self, r: f64) -> f64 {
        match self {
            Penalty::Charbonnier => (r * r + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt(),
            Penalty::Squared => r * r,
        }
    }

    #[inline]
    fn derivative(self, r: f64) -> f64 {
        match self {
            Penalty::Charbonnier => r / (r * r + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt(),
            Penalty::Squared => 2.0 * r,
        }
    }
}

/// Depth-sorted fragments of one view in compressed row layout.
///
/// A pixel's list ends early once the transmittance under the reference opacities used
/// at build time drops below [`KEEP_TRANSMITTANCE`]. Evaluations that need fragments
/// past such a cut report the cache as stale.
#[derive(Clone, Debug)]
pub struct ViewFragments {
    pub width: usize,
    pub height: usize,
    /// Fragments of pixel `p` are `offsets[p]..offsets[p + 1]`.
    offsets: Vec<u32>,
    /// Index into `touched` and falloff of each fragment.
    frags: Vec<(u32, f32)>,
    /// Sorted Gaussian indices appearing in this view.
    touched: Vec<u32>,
    /// Pixels whose list was cut.
    cut: Vec<bool>,
}

impl ViewFragments {
    /// Full fragment lists, valid for any opacities.
    pub fn build(map: &GaussianMap, cam: &CameraPose) -> Self {
        Self::build_truncated(map, cam, None)
    }

    /// Fragment lists cut where the transmittance under `reference` opacities falls below
    /// [`KEEP_TRANSMITTANCE`].
    pub fn build_truncated(map: &GaussianMap, cam: &CameraPose, reference: Option<&[f64]>) -> Self {
        let (splats, _) = project_splats(map, cam, &RenderOptions::default());
        let (w, h) = (cam.width(), cam.height());
        let mut lists: Vec<Vec<(u32, f32)>> = vec![Vec::new(); w * h];
        let mut t_ref = vec![1.0f64; w * h];
        let mut cut = vec![false; w * h];
        for s in &splats {
            let r = s.radius_for_falloff(FRAGMENT_MIN_FALLOFF);
            let Some((x0, x1, y0, y1)) = pixel_bounds(s.mean, r, w, h) else {
                continue;
            };
            let o = reference.map(|o| o[s.index] * REFERENCE_SCALE);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let g = s.falloff(x as f64, y as f64);
                    if g < FRAGMENT_MIN_FALLOFF {
                        continue;
                    }
                    let p = y * w + x;
                    if t_ref[p] < KEEP_TRANSMITTANCE {
                        cut[p] = true;
                        continue;
                    }
                    lists[p].push((s.index as u32, g as f32));
                    if let Some(o) = o {
                        t_ref[p] *= 1.0 - o * g;
                    }
                }
            }
        }
        let total = lists.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(w * h + 1);
        let mut touched: Vec<u32> = lists.iter().flatten().map(|&(id, _)| id).collect();
        touched.sort_unstable();
        touched.dedup();
        let mut frags = Vec::with_capacity(total);
        offsets.push(0u32);
        for l in &lists {
            for &(id, g) in l {
                frags.push((touched.binary_search(&id).expect("id is in touched") as u32, g));
            }
            offsets.push(frags.len() as u32);
        }
        Self {
            width: w,
            height: h,
            offsets,
            frags,
            touched,
            cut,
        }
    }

    pub fn fragment_count(&self) -> usize {
        self.frags.len()
    }

    /// Fragments used at pixel `p` and the final transmittance; `None` if the list was cut
    /// before compositing stopped.
    #[inline]
    fn used(&self, p: usize, opacity: &[f64]) -> Option<(std::ops::Range<usize>, f64)> {
        let start = self.offsets[p] as usize;
        let end = self.offsets[p + 1] as usize;
        let mut t = 1.0;
        for f in start..end {
            let (li, g) = self.frags[f];
            t *= 1.0 - opacity[self.touched[li as usize] as usize] * g as f64;
            if t < STOP_TRANSMITTANCE {
                return Some((start..f + 1, t));
            }
        }
        (!self.cut[p]).then_some((start..end, t))
    }

    /// Composited color per pixel, or `None` if the cache is stale for these opacities.
    pub fn composite(&self, colors: &[[f64; 3]], opacity: &[f64]) -> Option<RgbImage> {
        let mut data = Vec::with_capacity(self.width * self.height);
        for p in 0..self.width * self.height {
            let (range, _) = self.used(p, opacity)?;
            let mut c = [0.0; 3];
            let mut t = 1.0;
            for f in range {
                let (li, g) = self.frags[f];
                let id = self.touched[li as usize] as usize;
                let a = opacity[id] * g as f64;
                for ch in 0..3 {
                    c[ch] += colors[id][ch] * a * t;
                }
                t *= 1.0 - a;
            }
            for ch in 0..3 {
                c[ch] += t * BACKGROUND[ch];
            }
            data.push(c);
        }
        Some(Image {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Objective `Σ_p weight_p Σ_ch penalty(C − target)` and, if requested, its gradient
    /// as `[∂c_r, ∂c_g, ∂c_b, ∂opacity]` per touched index. `None` if stale.
    fn evaluate(&self, view: &ViewTarget, colors: &[[f64; 3]], opacity: &[f64], penalty: Penalty, with_grad: bool) -> Option<(f64, Vec<[f64; 4]>)> {
        // parameters of the touched Gaussians, packed for locality
        let params: Vec<[f64; 4]> = self
            .touched
            .iter()
            .map(|&id| {
                let c = colors[id as usize];
                [c[0], c[1], c[2], opacity[id as usize]]
            })
            .collect();
        let mut grad = if with_grad { vec![[0.0; 4]; self.touched.len()] } else { Vec::new() };
        let mut loss = 0.0;
        let longest = self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0) as usize;
        let mut trans = vec![0.0; longest];
        for p in 0..self.width * self.height {
            let wpx = view.weight.data[p];
            if wpx == 0.0 {
                continue;
            }
            let start = self.offsets[p] as usize;
            let mut end = self.offsets[p + 1] as usize;
            let mut c = [0.0; 3];
            let mut t = 1.0;
            let mut stopped = false;
            for f in start..end {
                let (li, g) = self.frags[f];
                let q = &params[li as usize];
                let a = q[3] * g as f64;
                trans[f - start] = t;
                c[0] += q[0] * a * t;
                c[1] += q[1] * a * t;
                c[2] += q[2] * a * t;
                t *= 1.0 - a;
                if t < STOP_TRANSMITTANCE {
                    end = f + 1;
                    stopped = true;
                    break;
                }
            }
            if !stopped && self.cut[p] {
                return None;
            }
            let target = view.target.data[p];
            let mut dl = [0.0; 3];
            for ch in 0..3 {
                c[ch] += t * BACKGROUND[ch];
                let r = c[ch] - target[ch];
                loss += wpx * penalty.value(r);
                dl[ch] = wpx * penalty.derivative(r);
            }
            if !with_grad {
                continue;
            }
            // color seen behind fragment k, accumulated from the back
            let mut behind = BACKGROUND;
            for (k, f) in (start..end).enumerate().rev() {
                let (li, g) = self.frags[f];
                let li = li as usize;
                let q = &params[li];
                let g = g as f64;
                let a = q[3] * g;
                let tk = trans[k];
                let gl = &mut grad[li];
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    gl[ch] += dl[ch] * a * tk;
                    d_alpha += dl[ch] * tk * (q[ch] - behind[ch]);
                    behind[ch] = q[ch] * a + (1.0 - a) * behind[ch];
                }
                gl[3] += d_alpha * g;
            }
        }
        Some((loss, grad))
    }
}

/// A view with its target image and per-pixel weight.
#[derive(Clone, Debug)]
pub struct ViewTarget {
    pub target: RgbImage,
    pub weight: GrayImage,
}

/// Fragments and targets for every view that enters the descent objective.
pub struct FragmentCache {
    map: GaussianMap,
    cameras: Vec<CameraPose>,
    views: Vec<(ViewFragments, ViewTarget)>,
    rebuilds: usize,
    evaluations: std::cell::Cell<usize>,
}

impl FragmentCache {
    /// Cache valid for any opacities.
    pub fn new(map: &GaussianMap, views: Vec<(CameraPose, ViewTarget)>) -> Result<Self> {
        Self::with_reference(map, views, None)
    }

    fn with_reference(map: &GaussianMap, views: Vec<(CameraPose, ViewTarget)>, reference: Option<&[f64]>) -> Result<Self> {
        for (cam, v) in &views {
            if v.target.width != cam.width() || v.target.height != cam.height() || !v.target.same_shape(&v.weight) {
                return Err(Error::DimensionMismatch {
                    expected: cam.width() * cam.height(),
                    found: v.target.len(),
                });
            }
        }
        let cameras: Vec<CameraPose> = views.iter().map(|(c, _)| *c).collect();
        let views = views
            .into_par_iter()
            .map(|(cam, v)| (ViewFragments::build_truncated(map, &cam, reference), v))
            .collect();
        Ok(Self {
            map: map.clone(),
            cameras,
            views,
            rebuilds: 0,
            evaluations: std::cell::Cell::new(0),
        })
    }

    /// Training frames weighted `w_t · w_obs / (3 · pixels · frames)` and pseudo views
    /// weighted `w_v · confidence / (3 · pixels · views)`. Lists are cut for the map's
    /// current opacities.
    pub fn for_refinement(map: &GaussianMap, frames: &[FrameRgbd], pseudo: &[PseudoGT], weights: &LossWeights) -> Result<Self> {
        let mut views = Vec::with_capacity(frames.len() + pseudo.len());
        for f in frames {
            let n = (3 * f.color.len() * frames.len()) as f64;
            let w = weights.w_total_t * weights.w_obs / n;
            views.push((
                f.pose,
                ViewTarget {
                    target: f.color.clone(),
                    weight: f.color.map(|_| w),
                },
            ));
        }
        if weights.w_total_v > 0.0 {
            for p in pseudo {
                p.check()?;
                let n = (3 * p.image.len() * pseudo.len()) as f64;
                views.push((
                    p.pose,
                    ViewTarget {
                        target: p.image.clone(),
                        weight: p.confidence.map(|c| weights.w_total_v * c / n),
                    },
                ));
            }
        }
        let (_, opacity) = split_params(map);
        Self::with_reference(map, views, Some(&opacity))
    }

    /// Recomputes the cut for new reference opacities.
    pub fn rebuild(&mut self, reference: &[f64]) {
        let map = &self.map;
        self.views
            .par_iter_mut()
            .zip(self.cameras.par_iter())
            .for_each(|((frags, _), cam)| *frags = ViewFragments::build_truncated(map, cam, Some(reference)));
        self.rebuilds += 1;
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn fragment_count(&self) -> usize {
        self.views.iter().map(|(f, _)| f.fragment_count()).sum()
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    /// Objective and dense gradient, or `None` if the cache is stale for `opacity`. Views
    /// are reduced in order, so the result does not depend on the thread count.
    pub fn objective(&self, colors: &[[f64; 3]], opacity: &[f64], penalty: Penalty, with_grad: bool) -> Option<(f64, Vec<[f64; 4]>)> {
        let mut grad = if with_grad { vec![[0.0; 4]; self.map.len()] } else { Vec::new() };
        let mut loss = 0.0;
        self.evaluations.set(self.evaluations.get() + 1);
        for chunk in self.views.chunks(VIEW_CHUNK) {
            let parts: Vec<Option<(f64, Vec<[f64; 4]>)>> = chunk
                .par_iter()
                .map(|(frags, target)| frags.evaluate(target, colors, opacity, penalty, with_grad))
                .collect();
            for ((frags, _), part) in chunk.iter().zip(parts) {
                let (l, g) = part?;
                loss += l;
                for (li, gv) in g.iter().enumerate() {
                    let dst = &mut grad[frags.touched[li] as usize];
                    for j in 0..4 {
                        dst[j] += gv[j];
                    }
                }
            }
        }
        Some((loss, grad))
    }

    /// Like [`Self::objective`], rebuilding first if the cache is stale. `also` lists
    /// opacities that must stay valid after a rebuild.
    fn objective_fresh(&mut self, colors: &[[f64; 3]], opacity: &[f64], also: &[f64], penalty: Penalty) -> (f64, Vec<[f64; 4]>) {
        if let Some(r) = self.objective(colors, opacity, penalty, true) {
            return r;
        }
        let reference: Vec<f64> = opacity.iter().zip(also).map(|(a, b)| a.min(*b)).collect();
        self.rebuild(&reference);
        self.objective(colors, opacity, penalty, true)
            .expect("cache built for these opacities is fresh")
    }
}

fn split_params(map: &GaussianMap) -> (Vec<[f64; 3]>, Vec<f64>) {
    (map.gaussians.iter().map(|g| g.color).collect(), map.gaussians.iter().map(|g| g.opacity).collect())
}

/// Per-pixel weighted objective of one view and the gradient with respect to every
/// Gaussian's color and opacity. `confidence` defaults to 1 everywhere.
pub fn grad_color_opacity(
    map: &GaussianMap,
    target: &RgbImage,
    confidence: Option<&GrayImage>,
    cam: &CameraPose,
    penalty: Penalty,
) -> Result<(f64, Vec<[f64; 4]>)> {
    let weight = match confidence {
        Some(c) => c.clone(),
        None => target.map(|_| 1.0),
    };
    let cache = FragmentCache::new(
        map,
        vec![(
            *cam,
            ViewTarget {
                target: target.clone(),
                weight,
            },
        )],
    )?;
    let (colors, opacity) = split_params(map);
    Ok(cache.objective(&colors, &opacity, penalty, true).expect("uncut cache is never stale"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub iters: usize,
    pub step_size: f64,
    pub max_backtracks: usize,
    pub penalty: Penalty,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_ITERS,
            step_size: DEFAULT_STEP,
            max_backtracks: MAX_BACKTRACKS,
            penalty: Penalty::Charbonnier,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    pub map: GaussianMap,
    /// Descent objective before the first iteration and after each iteration.
    pub trace: Vec<f64>,
    /// Iterations whose step was rejected after all backtracks.
    pub rejected: usize,
}

/// Projected descent on colors and opacities.
///
/// Each iteration scales the gradient by a running RMS of past gradients, takes a step,
/// clamps to `[0, 1]` and halves the step while the objective increases. A step that
/// still increases the objective after `max_backtracks` halvings is discarded, so the
/// trace never increases.
pub fn refine_map(
    map: &GaussianMap,
    frames: &[FrameRgbd],
    pseudo: &[PseudoGT],
    weights: &LossWeights,
    opts: &RefineOptions,
) -> Result<RefineResult> {
    weights.check()?;
    if !(opts.step_size > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {}", opts.step_size)));
    }
    if frames.is_empty() && pseudo.is_empty() {
        return Err(Error::InsufficientData("refinement needs at least one view".into()));
    }
    let mut cache = FragmentCache::for_refinement(map, frames, pseudo, weights)?;
    let (mut colors, mut opacity) = split_params(map);
    let (mut loss, mut grad) = cache.objective_fresh(&colors, &opacity, &opacity.clone(), opts.penalty);
    let mut trace = vec![loss];
    let mut rms = vec![[0.0; 4]; map.len()];
    let mut step = opts.step_size;
    let mut rejected = 0;
    for it in 0..opts.iters {
        if it > 0 && it % RECUT_EVERY == 0 {
            // shorter lists once opacities have grown; the objective value is unchanged
            cache.rebuild(&opacity);
        }
        let mut dir = vec![[0.0; 4]; map.len()];
        for i in 0..map.len() {
            for j in 0..4 {
                rms[i][j] = RMS_DECAY * rms[i][j] + (1.0 - RMS_DECAY) * grad[i][j] * grad[i][j];
                dir[i][j] = grad[i][j] / (rms[i][j].sqrt() + RMS_FLOOR);
            }
        }
        let mut accepted = None;
        let mut backtracked = false;
        for b in 0..=opts.max_backtracks {
            backtracked = b > 0;
            let mut c2 = colors.clone();
            let mut o2 = opacity.clone();
            for i in 0..map.len() {
                for ch in 0..3 {
                    c2[i][ch] = (colors[i][ch] - step * dir[i][ch]).clamp(0.0, 1.0);
                }
                o2[i] = (opacity[i] - step * dir[i][3]).clamp(0.0, 1.0);
            }
            let (l2, g2) = cache.objective_fresh(&c2, &o2, &opacity, opts.penalty);
            if l2 <= loss {
                accepted = Some((c2, o2, l2, g2));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((c2, o2, l2, g2)) => {
                colors = c2;
                opacity = o2;
                loss = l2;
                grad = g2;
                if !backtracked {
                    step = (step * STEP_GROWTH).min(opts.step_size);
                }
            }
            None => {
                rejected += 1;
                step = opts.step_size;
            }
        }
        trace.push(loss);
    }
    log::debug!(
        "refine: {} iterations, {} evaluations, {} rejected, {} cache rebuilds, {} fragments at exit",
        opts.iters,
        cache.evaluations.get(),
        rejected,
        cache.rebuilds(),
        cache.fragment_count()
    );
    let mut out = map.clone();
    for (g, (c, o)) in out.gaussians.iter_mut().zip(colors.iter().zip(&opacity)) {
        g.color = *c;
        g.opacity = *o;
    }
    Ok(RefineResult { map: out, trace, rejected })
}

/// Loss trace as CSV with columns `iteration,loss`.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l:.12e}\n"));
    }
    s
}
