//! Staged sharing experiment: one contributor per stage, map refinement with and without
//! pseudo ground truth, full or incremental transmission, and evaluation on
//! interpolated and extrapolated views.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::build::{
    init_anchors, init_global_map, lift_frames, virtual_map_from_cloud, voxelize, ColoredPointCloud, VoxelGrid, DEFAULT_EPSILON,
    DEFAULT_GAUSSIANS_PER_ANCHOR,
};
use crate::codec::rd::{candidate_steps, rd_select_step, RdPoint};
use crate::codec::{decode_full_map, fit_full_map, serialize_full, Bitstream, DEFAULT_EMBED_STEP};
use crate::enhance::{fit_confidence_predictor, make_pseudo_gt, prepare_view, sample_virtual_poses, PseudoGT, HOLE_THRESHOLD};
use crate::error::{Error, Result};
use crate::increment::{MetricsSnapshot, StageDb, StageRecord};
use crate::knn::KdTree;
use crate::metrics::{evaluate_views, l1, prune_by_opacity, EvalSummary, LossWeights, BACKGROUND};
use crate::model::{FrameRgbd, GaussianMap, Intrinsics, Vec3};
use crate::protocol::{catch_up, full_embed_dim, ClientState, ServerState};
use crate::refine::{refine_map, RefineOptions};
use crate::render::render;
use crate::scene::{generate_eval_views, generate_trajectories, EvalViews, SceneConfig, SyntheticScene};

/// λ_q schedule of the rate-distortion sweep.
pub fn default_lambdas() -> Vec<f64> {
    (0..11).map(|i| 0.0005 + 0.002 * i as f64).collect()
}

/// Virtual cameras keep at least this distance from every lifted point.
const VIRTUAL_CLEARANCE: f64 = 0.15;
/// Training views used to render the distortion term of the rate-distortion choice.
const RD_VIEWS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Training views only; every stage retransmits the whole map.
    #[serde(rename = "baseline")]
    Baseline,
    /// Adds pseudo ground truth from the virtual map; full retransmission.
    #[serde(rename = "+virt")]
    Virt,
    /// Pseudo ground truth and increment transmission.
    #[serde(rename = "+incr")]
    Incr,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Virt, Variant::Incr];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Virt => "+virt",
            Variant::Incr => "+incr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().trim_start_matches('+') == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}")))
    }

    fn uses_pseudo(self) -> bool {
        self != Variant::Baseline
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub intrinsics: Intrinsics,
    pub contributors: usize,
    pub frames_per_contributor: usize,
    /// Stages to run; at most `contributors`.
    pub stages: usize,
    pub eval_positions: usize,
    pub eval_rotations: usize,
    pub epsilon: f64,
    pub gaussians_per_anchor: usize,
    pub lift_stride: usize,
    pub virtual_stride: usize,
    pub virtual_views: usize,
    pub weights: LossWeights,
    pub refine: RefineOptions,
    pub embed_step: f64,
    pub prune_threshold: f64,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            intrinsics: Intrinsics::desk_default(),
            contributors: 3,
            frames_per_contributor: 25,
            stages: 3,
            eval_positions: 20,
            eval_rotations: 5,
            epsilon: DEFAULT_EPSILON,
            gaussians_per_anchor: DEFAULT_GAUSSIANS_PER_ANCHOR,
            lift_stride: 2,
            virtual_stride: 2,
            virtual_views: 20,
            weights: LossWeights::default(),
            refine: RefineOptions { iters: 40, ..RefineOptions::default() },
            embed_step: DEFAULT_EMBED_STEP,
            prune_threshold: 1e-3,
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        self.weights.check()?;
        self.intrinsics.check()?;
        let positive = [self.epsilon, self.embed_step, self.refine.step_size];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("epsilon, embed_step and step_size must be positive".into()));
        }
        if self.contributors == 0 || self.frames_per_contributor == 0 || self.stages == 0 || self.stages > self.contributors {
            return Err(Error::InvalidInput("need 1 ≤ stages ≤ contributors and at least one frame each".into()));
        }
        if self.gaussians_per_anchor == 0 || self.gaussians_per_anchor > 255 || self.lift_stride == 0 || self.virtual_stride == 0 {
            return Err(Error::InvalidInput("K must be in 1..=255 and strides positive".into()));
        }
        if !(0.0..=1.0).contains(&self.prune_threshold) {
            return Err(Error::InvalidInput("prune threshold must be in [0, 1]".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidInput("no variants selected".into()));
        }
        Ok(())
    }
}

/// Scene, contributor frames and evaluation views of one experiment.
pub struct Dataset {
    pub scene: SyntheticScene,
    pub frames: Vec<FrameRgbd>,
    pub eval: EvalViews,
}

impl Dataset {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let scene = SyntheticScene::generate(&cfg.scene, cfg.seed)?;
        Self::from_scene(scene, cfg)
    }

    pub fn from_scene(scene: SyntheticScene, cfg: &ExperimentConfig) -> Result<Self> {
        scene.check()?;
        let frames = generate_trajectories(&scene, cfg.contributors, cfg.frames_per_contributor, cfg.seed ^ 0x7472_616A, cfg.intrinsics)?;
        let poses: Vec<_> = frames.iter().map(|f| f.pose).collect();
        let eval = generate_eval_views(&scene, cfg.eval_positions, cfg.eval_rotations, cfg.seed ^ 0x6576_616C, &poses, cfg.intrinsics)?;
        Ok(Self { scene, frames, eval })
    }

    pub fn frames_through(&self, stage: usize) -> Vec<FrameRgbd> {
        self.frames.iter().filter(|f| (f.contributor_id as usize) <= stage).cloned().collect()
    }
}

/// Keeps the anchors of `prev` in order and appends anchors for newly occupied voxels.
pub fn extend_map(prev: Option<&GaussianMap>, frames: &[FrameRgbd], cfg: &ExperimentConfig) -> Result<GaussianMap> {
    let cloud = lift_frames(frames, cfg.lift_stride);
    let grid = voxelize(&cloud, cfg.epsilon)?;
    let centers: Vec<Vec3> = frames.iter().map(|f| f.pose.center()).collect();
    let known: BTreeSet<[i32; 3]> = prev.map(|m| m.anchors.iter().copied().collect()).unwrap_or_default();
    let fresh = VoxelGrid {
        epsilon: grid.epsilon,
        occupied: grid.occupied.difference(&known).copied().collect(),
    };
    let new = init_global_map(init_anchors(&fresh, &cloud, cfg.gaussians_per_anchor, &centers)?, cfg.gaussians_per_anchor, cfg.epsilon)?;
    match prev {
        None => Ok(new),
        Some(p) => {
            let mut m = p.clone();
            m.append(new)?;
            Ok(m)
        }
    }
}

/// Pseudo ground truth for one stage: virtual map from the frames so far, confidence
/// predictor calibrated on the training poses, virtual poses clear of the lifted points.
pub fn pseudo_ground_truth(frames: &[FrameRgbd], cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<PseudoGT>, f64)> {
    if cfg.virtual_views == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let cloud = lift_frames(frames, cfg.virtual_stride);
    let virtual_map = virtual_map_from_cloud(&cloud, cfg.epsilon)?;
    let pairs = frames
        .iter()
        .map(|f| Ok((prepare_view(&render(&virtual_map, &f.pose, BACKGROUND), HOLE_THRESHOLD)?, f.color.clone())))
        .collect::<Result<Vec<_>>>()?;
    let predictor = fit_confidence_predictor(&pairs)?;
    let (bounds, free) = clearance(&cloud);
    // poses that see no geometry are dropped, so twice as many are drawn
    let inputs: Vec<_> = frames.iter().map(|f| f.pose).collect();
    let poses = sample_virtual_poses(bounds, &inputs, 2 * cfg.virtual_views, seed, cfg.intrinsics, free)?;
    let mut set = make_pseudo_gt(&virtual_map, &poses.poses, &predictor, HOLE_THRESHOLD)?.0;
    set.truncate(cfg.virtual_views);
    Ok((set, predictor.tau))
}

/// Sampling box inside the cloud's bounding box and a clearance test against the points.
fn clearance(cloud: &ColoredPointCloud) -> ((Vec3, Vec3), impl Fn(&Vec3) -> bool + '_) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in &cloud.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let m = VIRTUAL_CLEARANCE;
    let z_lo = lo.z + 0.3 * (hi.z - lo.z);
    let bounds = (Vec3::new(lo.x + m, lo.y + m, z_lo.max(lo.z + m)), Vec3::new(hi.x - m, hi.y - m, hi.z - m));
    let tree = KdTree::new(&cloud.points);
    let free = move |p: &Vec3| tree.nearest(p, 1, None).first().is_some_and(|(_, d)| *d >= m);
    (bounds, free)
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub stage: u32,
    pub variant: String,
    pub set: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub depth_l1_cm: f64,
    pub bytes: u64,
    pub cum_bytes: u64,
    /// Explicit size of the stage map over the bytes sent for this stage.
    pub compression_ratio: f64,
    /// Explicit size of the stage map over all bytes sent so far.
    pub cum_compression_ratio: f64,
}

pub const CSV_HEADER: &str = "stage,variant,set,psnr_db,ssim,depth_l1_cm,bytes,cum_bytes,compression_ratio,cum_compression_ratio";

/// Fixed-precision CSV so equal runs give equal bytes.
pub fn rows_to_csv(rows: &[CsvRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{},{},{:.6},{:.6}",
            r.stage,
            r.variant,
            r.set,
            r.psnr_db,
            r.ssim,
            r.depth_l1_cm,
            r.bytes,
            r.cum_bytes,
            r.compression_ratio,
            r.cum_compression_ratio
        );
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidInput("unexpected CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 10 {
                return Err(Error::InvalidInput(format!("bad CSV row {l:?}")));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::InvalidInput(format!("column {i}: {e}")));
            let int = |i: usize| f[i].parse::<u64>().map_err(|e| Error::InvalidInput(format!("column {i}: {e}")));
            Ok(CsvRow {
                stage: int(0)? as u32,
                variant: f[1].to_string(),
                set: f[2].to_string(),
                psnr_db: num(3)?,
                ssim: num(4)?,
                depth_l1_cm: num(5)?,
                bytes: int(6)?,
                cum_bytes: int(7)?,
                compression_ratio: num(8)?,
                cum_compression_ratio: num(9)?,
            })
        })
        .collect()
}

/// Everything a run produces besides the CSV text.
pub struct ExperimentResult {
    pub rows: Vec<CsvRow>,
    pub databases: Vec<(Variant, StageDb)>,
    /// Server-side published maps of the increment path.
    pub server: Option<ServerState>,
    /// Whether the simulated client matched the server byte for byte at every stage.
    pub client_converged: bool,
    /// Final server-side map of each refinement chain.
    pub final_maps: Vec<(Variant, GaussianMap)>,
    /// Loss traces per stage and chain.
    pub traces: Vec<(u32, Variant, Vec<f64>)>,
}

impl ExperimentResult {
    pub fn csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn row(&self, stage: u32, variant: Variant, set: &str) -> Option<&CsvRow> {
        self.rows.iter().find(|r| r.stage == stage && r.variant == variant.name() && r.set == set)
    }
}

fn snapshot(set: &str, e: &EvalSummary) -> MetricsSnapshot {
    MetricsSnapshot {
        set: set.to_string(),
        psnr_db: e.psnr_db,
        ssim: e.ssim,
        depth_l1_m: e.depth_l1_m,
    }
}

/// Refinement chain shared by variants with the same training data.
struct Chain {
    pseudo: bool,
    map: Option<GaussianMap>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.check()?;
    let data = Dataset::generate(cfg)?;
    run_on_dataset(cfg, &data)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    cfg.check()?;
    let variants: Vec<Variant> = cfg.variants.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut chains: Vec<Chain> = Vec::new();
    if variants.contains(&Variant::Baseline) {
        chains.push(Chain { pseudo: false, map: None });
    }
    if variants.iter().any(|v| v.uses_pseudo()) {
        chains.push(Chain { pseudo: true, map: None });
    }
    let mut server = variants.contains(&Variant::Incr).then(ServerState::new);
    let mut client = ClientState::new();
    let mut converged = true;
    let mut dbs: Vec<(Variant, StageDb)> = variants.iter().map(|v| (*v, StageDb::new())).collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let chain_variant = |pseudo: bool| if pseudo { Variant::Virt } else { Variant::Baseline };

    for stage in 0..cfg.stages {
        let t0 = Instant::now();
        let stage_id = stage as u32;
        let frames = data.frames_through(stage);
        let new_frames: Vec<FrameRgbd> = frames.iter().filter(|f| f.contributor_id as usize == stage).cloned().collect();
        if let Some(s) = server.as_mut() {
            s.add_frames(&new_frames);
        }
        let pseudo = if chains.iter().any(|c| c.pseudo) && cfg.weights.w_total_v > 0.0 {
            pseudo_ground_truth(&frames, cfg, cfg.seed.wrapping_mul(31).wrapping_add(stage as u64))?.0
        } else {
            Vec::new()
        };
        info!("stage {stage}: pseudo ground truth after {:.1}s", t0.elapsed().as_secs_f64());
        for chain in &mut chains {
            let init = extend_map(chain.map.as_ref(), &frames, cfg)?;
            let ps: &[PseudoGT] = if chain.pseudo { &pseudo } else { &[] };
            let r = refine_map(&init, &frames, ps, &cfg.weights, &cfg.refine)?;
            info!(
                "stage {stage}: refined {} Gaussians ({}) after {:.1}s",
                init.len(),
                chain_variant(chain.pseudo).name(),
                t0.elapsed().as_secs_f64()
            );
            if r.trace.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidInput(format!("stage {stage}: refinement loss increased")));
            }
            let (mut m, _) = prune_by_opacity(&r.map, cfg.prune_threshold);
            m.stage_id = stage_id;
            traces.push((stage_id, chain_variant(chain.pseudo), r.trace));
            chain.map = Some(m);
        }
        let chain_map = |pseudo: bool| chains.iter().find(|c| c.pseudo == pseudo).and_then(|c| c.map.clone());

        for (variant, db) in dbs.iter_mut() {
            let target = chain_map(variant.uses_pseudo()).expect("chain exists for every variant");
            let d = full_embed_dim(target.gaussians_per_anchor);
            let (client_map, full_bytes, sent) = match variant {
                Variant::Incr => {
                    let s = server.as_mut().expect("server exists for the increment variant");
                    let p = s.publish(&target, cfg.embed_step)?;
                    let (full, sent) = (p.full_bytes, p.increment_bytes);
                    catch_up(&mut client, None, |m| Ok(s.handle(m)))?;
                    let server_map = s.latest_map().expect("stage was just published");
                    converged &= client.canonical_bytes() == Some(server_map.canonical_bytes());
                    (client.map.clone().expect("client has a map after catching up"), full, sent)
                }
                _ => {
                    let bytes = serialize_full(&fit_full_map(&target, d)?, cfg.embed_step)?.to_bytes();
                    let m = decode_full_map(&Bitstream::from_bytes(&bytes)?)?;
                    (m, bytes.len() as u64, bytes.len() as u64)
                }
            };
            info!("stage {stage}: {} transmitted after {:.1}s", variant.name(), t0.elapsed().as_secs_f64());
            let interp = evaluate_views(&client_map, &data.eval.interp)?;
            let extrap = evaluate_views(&client_map, &data.eval.extrap)?;
            db.put(StageRecord {
                stage_id,
                full_bytes,
                increment_bytes: if *variant == Variant::Incr { sent } else { full_bytes },
                metrics: vec![snapshot("interp", &interp), snapshot("extrap", &extrap)],
            })?;
            let cum = if *variant == Variant::Incr { db.cumulative_bytes() } else { db.cumulative_full_bytes() };
            for (set, e) in [("interp", &interp), ("extrap", &extrap)] {
                rows.push(CsvRow {
                    stage: stage_id,
                    variant: variant.name().to_string(),
                    set: set.to_string(),
                    psnr_db: e.psnr_db,
                    ssim: e.ssim,
                    depth_l1_cm: e.depth_l1_m * 100.0,
                    bytes: sent,
                    cum_bytes: cum,
                    compression_ratio: client_map.explicit_size_bytes() as f64 / sent.max(1) as f64,
                    cum_compression_ratio: client_map.explicit_size_bytes() as f64 / cum.max(1) as f64,
                });
            }
        }
        info!(
            "stage {stage}: {} frames, {} pseudo views, {:.1}s",
            frames.len(),
            pseudo.len(),
            t0.elapsed().as_secs_f64()
        );
    }
    let final_maps = chains
        .into_iter()
        .filter_map(|c| c.map.map(|m| (chain_variant(c.pseudo), m)))
        .collect();
    Ok(ExperimentResult {
        rows,
        databases: dbs,
        server,
        client_converged: converged,
        final_maps,
        traces,
    })
}

/// One point of the rate-distortion sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RdRow {
    pub lambda_q: f64,
    pub step: f64,
    pub bytes: u64,
    pub psnr_db: f64,
    pub compression_ratio: f64,
}

pub const RD_HEADER: &str = "lambda_q,embed_step,bytes,psnr_db,compression_ratio";

pub fn rd_rows_to_csv(rows: &[RdRow]) -> String {
    let mut s = String::from(RD_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{:.4},{:.6},{},{:.6},{:.6}", r.lambda_q, r.step, r.bytes, r.psnr_db, r.compression_ratio);
    }
    s
}

/// Candidate embedding steps of the sweep.
pub fn rd_candidates() -> Vec<f64> {
    candidate_steps(0.002, 0.5, 12)
}

/// Codes `map` once per λ_q with the rate-distortion choice of embedding step. Distortion
/// is the mean L1 between renders of the decoded and the uncoded map at `views`.
pub fn rd_sweep_map(map: &GaussianMap, views: &[FrameRgbd], eval: &[FrameRgbd], lambdas: &[f64]) -> Result<(Vec<RdRow>, Vec<Vec<RdPoint>>)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("no λ values".into()));
    }
    let d = full_embed_dim(map.gaussians_per_anchor);
    let fit = fit_full_map(map, d)?;
    let emb = fit.embeddings();
    let cols = emb.ncols();
    let flat: Vec<f64> = emb.transpose().iter().copied().collect();
    let reference: Vec<_> = views.iter().map(|v| render(map, &v.pose, BACKGROUND).color).collect();
    // distortion depends only on the step, so it is computed once per candidate
    let mut cache: Vec<(f64, f64)> = Vec::new();
    let mut distortion = |q: &[f64], step: f64| -> Result<f64> {
        if let Some((_, d)) = cache.iter().find(|(s, _)| *s == step) {
            return Ok(*d);
        }
        let m = nalgebra::DMatrix::from_row_slice(emb.nrows(), cols, q);
        let decoded = fit.decode_with_embeddings(&m)?;
        let mut total = 0.0;
        for (v, r) in views.iter().zip(&reference) {
            total += l1(&render(&decoded, &v.pose, BACKGROUND).color, r)?;
        }
        let d = total / views.len().max(1) as f64;
        cache.push((step, d));
        Ok(d)
    };
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &lambda in lambdas {
        let (spec, pts) = rd_select_step(&flat, cols, &rd_candidates(), &mut distortion, lambda)?;
        let step = spec.steps[0];
        let bytes = serialize_full(&fit, step)?.to_bytes();
        let decoded = decode_full_map(&Bitstream::from_bytes(&bytes)?)?;
        let psnr = evaluate_views(&decoded, eval)?.psnr_db;
        rows.push(RdRow {
            lambda_q: lambda,
            step,
            bytes: bytes.len() as u64,
            psnr_db: psnr,
            compression_ratio: map.explicit_size_bytes() as f64 / bytes.len() as f64,
        });
        points.push(pts);
    }
    Ok((rows, points))
}

/// Builds the final pseudo-GT-refined map of a run and sweeps λ_q over it.
pub fn rd_sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<RdRow>> {
    let mut c = cfg.clone();
    c.variants = vec![Variant::Virt];
    let data = Dataset::generate(&c)?;
    let res = run_on_dataset(&c, &data)?;
    let map = &res.final_maps[0].1;
    let frames = data.frames_through(c.stages - 1);
    let stride = (frames.len() / RD_VIEWS).max(1);
    let views: Vec<FrameRgbd> = frames.iter().step_by(stride).take(RD_VIEWS).cloned().collect();
    Ok(rd_sweep_map(map, &views, &data.eval.extrap, lambdas)?.0)
}

/// Number of adjacent pairs where `v` moves against the expected direction by more than
/// `slack`.
pub fn inversions(v: &[f64], non_increasing: bool, slack: f64) -> usize {
    v.windows(2)
        .filter(|w| if non_increasing { w[1] > w[0] + slack } else { w[1] < w[0] - slack })
        .count()
}

/// Minimal SVG line chart.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#, H / 2.0, H / 2.0, escape(y_label));
    for (i, t) in [0.0, 0.5, 1.0].iter().enumerate() {
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.4}</text>"#, sx(xv), H - M + 16.0, xv);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, M - 4.0, sy(yv) + 4.0, yv);
        let _ = i;
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - M - 100.0, M + 16.0 * i as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Extrapolated PSNR per stage for each variant.
pub fn stage_plot(rows: &[CsvRow]) -> String {
    let mut series = Vec::new();
    for v in Variant::ALL {
        let p: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.variant == v.name() && r.set == "extrap")
            .map(|r| (r.stage as f64, r.psnr_db))
            .collect();
        if !p.is_empty() {
            series.push((v.name().to_string(), p));
        }
    }
    svg_line_plot("Extrapolated PSNR per stage", "stage", "PSNR [dB]", &series)
}

/// PSNR against coded size.
pub fn rd_plot(rows: &[RdRow]) -> String {
    let p = rows.iter().map(|r| (r.bytes as f64 / 1024.0, r.psnr_db)).collect();
    svg_line_plot("Size vs PSNR", "size [KiB]", "PSNR [dB]", &[("λ_q sweep".to_string(), p)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            intrinsics: Intrinsics::desk_default(),
            frames_per_contributor: 3,
            contributors: 2,
            stages: 2,
            eval_positions: 2,
            eval_rotations: 2,
            virtual_views: 2,
            lift_stride: 8,
            virtual_stride: 8,
            refine: RefineOptions {
                iters: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert_eq!(Variant::parse("virt").unwrap(), Variant::Virt);
        assert!(Variant::parse("nope").is_err());
    }

    #[test]
    fn csv_round_trip_and_inversions() {
        let r = run_experiment(&tiny()).unwrap();
        let text = r.csv();
        assert_eq!(rows_to_csv(&parse_csv(&text).unwrap()), text);
        assert_eq!(r.rows.len(), 2 * 3 * 2);
        assert!(r.client_converged);
        assert_eq!(inversions(&[3.0, 2.0, 2.5, 1.0], true, 0.0), 1);
        assert_eq!(inversions(&[1.0, 2.0, 2.0], false, 0.0), 0);
    }

    #[test]
    fn single_stage_cumulative_is_full_stream() {
        let cfg = ExperimentConfig {
            stages: 1,
            variants: vec![Variant::Baseline],
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        let row = r.row(0, Variant::Baseline, "extrap").unwrap();
        assert_eq!(row.cum_bytes, row.bytes);
        let map = &r.final_maps[0].1;
        let full = serialize_full(&fit_full_map(map, full_embed_dim(map.gaussians_per_anchor)).unwrap(), cfg.embed_step).unwrap();
        assert_eq!(row.bytes, full.to_bytes().len() as u64);
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_line_plot("t", "x", "y", &[("a<b".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
