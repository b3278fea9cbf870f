//! `gsshare`: build, code, share and evaluate anchor-based Gaussian maps.

use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn, LevelFilter};

use gsshare::codec::{deserialize, encode_full_map, Decoded};
use gsshare::harness::{
    default_lambdas, extend_map, pseudo_ground_truth, rd_candidates, rd_plot, rd_rows_to_csv, rd_sweep, rd_sweep_map,
    run_on_dataset, stage_plot, Dataset, ExperimentConfig, Variant,
};
use gsshare::increment::{apply_increment, compute_increment, decode_increment, encode_increment, encode_increment_rd};
use gsshare::io::{load_frames, load_poses, map_points, read_png_rgb, save_frames, save_json, save_pseudo_gt, save_rendered, write_ply};
use gsshare::metrics::{evaluate_views, l1, prune_by_opacity, psnr, ssim, BACKGROUND};
use gsshare::model::{FrameRgbd, GaussianMap};
use gsshare::protocol::{fetch, full_embed_dim, serve_loop, Message, ServerState};
use gsshare::refine::{refine_map, trace_csv};
use gsshare::render::render;

#[derive(Parser)]
#[command(name = "gsshare", version, about = "Anchor-based Gaussian map construction, coding and sharing")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration, TOML or JSON (by extension).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with contributor frames and evaluation views.
    GenScene,
    /// Build an initial global map from RGB-D frames and write it as a `.gsb` stream.
    BuildMap {
        /// Directory written by `gen-scene` (its `frames/`) or any frame bundle.
        #[arg(long)]
        frames: PathBuf,
        /// Only use contributors up to this stage.
        #[arg(long)]
        stage: Option<u32>,
        /// Previous stage map to extend; its anchors stay first and in order.
        #[arg(long)]
        prev: Option<PathBuf>,
        /// Also write the Gaussian centers as a PLY point cloud.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Re-encode a full map, or an increment against `--prev`.
    Encode {
        #[arg(long)]
        map: PathBuf,
        /// Previous stage; the output becomes an increment.
        #[arg(long)]
        prev: Option<PathBuf>,
        /// Embedding quantization step.
        #[arg(long, conflicts_with = "lambda")]
        step: Option<f64>,
        /// Select the step by rate-distortion with this λ_q (needs `--views`).
        #[arg(long, requires = "views")]
        lambda: Option<f64>,
        /// Frames used as the distortion reference.
        #[arg(long)]
        views: Option<PathBuf>,
    },
    /// Decode a `.gsb` stream and print its contents.
    Decode {
        input: PathBuf,
        /// Previous map to apply an increment to.
        #[arg(long)]
        prev: Option<PathBuf>,
    },
    /// Render a map from one or more poses.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// JSON pose or list of poses.
        #[arg(long)]
        pose: PathBuf,
        /// Write depth and opacity as PFM instead of normalized PNG.
        #[arg(long)]
        pfm: bool,
    },
    /// Produce a virtual-view pseudo ground-truth bundle from frames.
    Enhance {
        #[arg(long)]
        frames: PathBuf,
        /// Number of virtual views.
        #[arg(long)]
        views: Option<usize>,
    },
    /// Refine colors and opacities of a map against frames and optional virtual views.
    Refine {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Number of virtual views to add as pseudo ground truth.
        #[arg(long = "virtual", default_value_t = 0)]
        virtual_views: usize,
        #[arg(long)]
        iters: Option<usize>,
        /// Write the objective trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Serve published stages to clients over TCP.
    Serve {
        /// Directory of `stage_NNNN.msg` messages or `stage_NNNN.gsb` maps, plus optional `frames/`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Port to listen on; 0 picks a free one.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Publish stages up to this one only.
        #[arg(long)]
        stage: Option<u32>,
        /// Exit after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
    },
    /// Fetch the latest map from a server, caching stages one at a time.
    Fetch {
        #[arg(long)]
        addr: String,
        /// Stop at this stage.
        #[arg(long)]
        stage: Option<u32>,
    },
    /// Run the staged experiment and write CSV, plot and server messages.
    RunExperiment {
        /// Variants to run (baseline, +virt, +incr); all when omitted.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Sweep λ_q over the final refined map and write size and PSNR per λ.
    RdSweep {
        /// Comma-separated λ_q values.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Image quality of a map on frames, or between two PNG images.
    Metrics {
        #[arg(long, requires = "views")]
        map: Option<PathBuf>,
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long, requires = "b", conflicts_with = "map")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.common.quiet, cli.common.verbose) {
        (true, _) => LevelFilter::Warn,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    match cli.command {
        Command::GenScene => gen_scene(&cfg, out_path(c)?),
        Command::BuildMap { frames, stage, prev, ply } => build_map(&cfg, &frames, stage, prev.as_deref(), out_path(c)?, ply.as_deref()),
        Command::Encode { map, prev, step, lambda, views } => encode(&cfg, &map, prev.as_deref(), step, lambda, views.as_deref(), out_path(c)?),
        Command::Decode { input, prev } => decode(&input, prev.as_deref(), c.out.as_deref()),
        Command::Render { map, pose, pfm } => render_cmd(&map, &pose, pfm, out_path(c)?),
        Command::Enhance { frames, views } => enhance(&cfg, &frames, views, out_path(c)?),
        Command::Refine {
            map,
            frames,
            virtual_views,
            iters,
            trace,
        } => refine(&cfg, &map, &frames, virtual_views, iters, trace.as_deref(), out_path(c)?),
        Command::Serve {
            scene,
            host,
            port,
            stage,
            max_connections,
        } => serve(&cfg, &scene, &host, port, stage, max_connections),
        Command::Fetch { addr, stage } => fetch_cmd(&addr, stage, c.out.as_deref()),
        Command::RunExperiment { variants } => run_experiment(cfg, &variants, out_path(c)?),
        Command::RdSweep { lambdas } => rd(&cfg, lambdas, out_path(c)?),
        Command::Metrics { map, views, a, b } => metrics(map.as_deref(), views.as_deref(), a.as_deref(), b.as_deref(), c.out.as_deref()),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &c.config {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            } else {
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
        }
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.check().context("invalid configuration")?;
    Ok(cfg)
}

fn out_path(c: &Common) -> Result<&Path> {
    c.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
}

fn read_map(path: &Path) -> Result<GaussianMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match deserialize(&bytes).with_context(|| format!("decoding {}", path.display()))? {
        Decoded::Map(m) => Ok(m),
        Decoded::Increment(_) => bail!("{} holds an increment, not a full map", path.display()),
    }
}

fn write_map(path: &Path, map: &GaussianMap, step: f64) -> Result<usize> {
    let bytes = encode_full_map(map, full_embed_dim(map.gaussians_per_anchor), step)?.to_bytes();
    write_file(path, &bytes)?;
    Ok(bytes.len())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_frames(dir: &Path) -> Result<Vec<FrameRgbd>> {
    let frames = load_frames(dir).with_context(|| format!("loading frames from {}", dir.display()))?;
    if frames.is_empty() {
        bail!("no frames in {}", dir.display());
    }
    Ok(frames)
}

fn summary(map: &GaussianMap) -> String {
    format!(
        "stage {}, {} anchors, {} Gaussians ({} per anchor), epsilon {:.4} m",
        map.stage_id,
        map.anchor_count(),
        map.len(),
        map.gaussians_per_anchor,
        map.epsilon
    )
}

fn gen_scene(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = Dataset::generate(cfg)?;
    fs::create_dir_all(out)?;
    save_json(&out.join("scene.json"), &data.scene)?;
    save_json(&out.join("config.json"), cfg)?;
    save_frames(&out.join("frames"), &data.frames)?;
    save_frames(&out.join("eval/interp"), &data.eval.interp)?;
    save_frames(&out.join("eval/extrap"), &data.eval.extrap)?;
    println!(
        "{} frames from {} contributors, {} interpolated and {} extrapolated evaluation views",
        data.frames.len(),
        cfg.contributors,
        data.eval.interp.len(),
        data.eval.extrap.len()
    );
    Ok(())
}

fn build_map(cfg: &ExperimentConfig, frames: &Path, stage: Option<u32>, prev: Option<&Path>, out: &Path, ply: Option<&Path>) -> Result<()> {
    let mut frames = read_frames(frames)?;
    if let Some(s) = stage {
        frames.retain(|f| f.contributor_id <= s);
        if frames.is_empty() {
            bail!("no frames from contributors up to stage {s}");
        }
    }
    let prev = prev.map(read_map).transpose()?;
    let mut map = extend_map(prev.as_ref(), &frames, cfg)?;
    map.stage_id = stage.unwrap_or_else(|| frames.iter().map(|f| f.contributor_id).max().unwrap_or(0));
    let bytes = write_map(out, &map, cfg.embed_step)?;
    if let Some(p) = ply {
        write_ply(p, &map_points(&map))?;
    }
    println!("{}; {} bytes", summary(&map), bytes);
    Ok(())
}

fn mean_render_l1(map: &GaussianMap, views: &[FrameRgbd]) -> gsshare::Result<f64> {
    let mut total = 0.0;
    for v in views {
        total += l1(&render(map, &v.pose, BACKGROUND).color, &v.color)?;
    }
    Ok(total / views.len() as f64)
}

fn encode(
    cfg: &ExperimentConfig,
    map: &Path,
    prev: Option<&Path>,
    step: Option<f64>,
    lambda: Option<f64>,
    views: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let target = read_map(map)?;
    let views = views.map(read_frames).transpose()?;
    let Some(prev_path) = prev else {
        let step = match lambda {
            Some(l) => {
                let views = views.as_deref().expect("clap enforces --views");
                rd_sweep_map(&target, views, views, &[l])?.0[0].step
            }
            None => step.unwrap_or(cfg.embed_step),
        };
        let bytes = write_map(out, &target, step)?;
        println!("full map, step {step:.6}: {bytes} bytes, ratio {:.2}", target.explicit_size_bytes() as f64 / bytes as f64);
        return Ok(());
    };
    let prev = read_map(prev_path)?;
    let n = prev.anchor_count();
    if target.anchor_count() < n {
        bail!("map has {} anchors, fewer than the {n} of the previous stage", target.anchor_count());
    }
    let seen = target.prefix(n);
    let inc = compute_increment(&seen, &prev)?;
    let (bs, step) = match lambda {
        Some(l) => {
            let views = views.as_deref().expect("clap enforces --views");
            let (bs, points) = encode_increment_rd(&inc, &rd_candidates(), l, |i| mean_render_l1(&apply_increment(&prev, i)?, views))?;
            let step = bs.steps.first().copied().unwrap_or_default() as f64;
            info!("evaluated {} candidate steps", points.len());
            (bs, step)
        }
        None => {
            let step = step.unwrap_or(cfg.embed_step);
            (encode_increment(&inc, step)?, step)
        }
    };
    let bytes = bs.to_bytes();
    write_file(out, &bytes)?;
    println!("increment for {n} anchors, step {step:.6}: {} bytes", bytes.len());
    if target.anchor_count() > n {
        let seg_path = out.with_extension("segment.gsb");
        let seg = write_map(&seg_path, &target.suffix(n), step)?;
        println!("{} new anchors as a full-map segment in {}: {seg} bytes", target.anchor_count() - n, seg_path.display());
    }
    Ok(())
}

fn decode(input: &Path, prev: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let decoded = deserialize(&bytes).with_context(|| format!("decoding {}", input.display()))?;
    let map = match decoded {
        Decoded::Map(m) => {
            println!("full map: {}; {} bytes, ratio {:.2}", summary(&m), bytes.len(), m.explicit_size_bytes() as f64 / bytes.len() as f64);
            Some(m)
        }
        Decoded::Increment(inc) => {
            println!("increment: {} bytes", bytes.len());
            match prev {
                Some(p) => {
                    let m = apply_increment(&read_map(p)?, &inc)?;
                    println!("applied: {}", summary(&m));
                    Some(m)
                }
                None => {
                    let bs = gsshare::codec::Bitstream::from_bytes(&bytes)?;
                    let check = decode_increment(&bs)?;
                    debug_assert_eq!(check, inc);
                    println!("stage {}, {} anchors; pass --prev to apply", bs.stage_id, bs.anchor_count);
                    None
                }
            }
        }
    };
    if let Some(out) = out {
        let m = map.ok_or_else(|| anyhow!("nothing to write without --prev"))?;
        write_ply(out, &map_points(&m))?;
    }
    Ok(())
}

fn render_cmd(map: &Path, pose: &Path, pfm: bool, out: &Path) -> Result<()> {
    let map = read_map(map)?;
    let poses = load_poses(pose).with_context(|| format!("loading poses from {}", pose.display()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let stem = out.with_extension("");
    for (i, p) in poses.iter().enumerate() {
        let views = render(&map, p, BACKGROUND);
        let target = if poses.len() == 1 {
            stem.clone()
        } else {
            stem.with_file_name(format!("{}_{i:04}", stem.file_name().and_then(|s| s.to_str()).unwrap_or("render")))
        };
        save_rendered(&target, &views, pfm)?;
    }
    println!("rendered {} view(s) of {} Gaussians", poses.len(), map.len());
    Ok(())
}

fn enhance(cfg: &ExperimentConfig, frames: &Path, views: Option<usize>, out: &Path) -> Result<()> {
    let frames = read_frames(frames)?;
    let mut cfg = cfg.clone();
    if let Some(v) = views {
        cfg.virtual_views = v;
    }
    let (set, tau) = pseudo_ground_truth(&frames, &cfg, cfg.seed)?;
    save_pseudo_gt(out, &set, tau, &[])?;
    println!("{} pseudo ground-truth views, tau {tau:.4}", set.len());
    Ok(())
}

fn refine(
    cfg: &ExperimentConfig,
    map: &Path,
    frames: &Path,
    virtual_views: usize,
    iters: Option<usize>,
    trace: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let map = read_map(map)?;
    let frames = read_frames(frames)?;
    let mut c = cfg.clone();
    c.virtual_views = virtual_views;
    let pseudo = pseudo_ground_truth(&frames, &c, c.seed)?.0;
    let mut opts = cfg.refine;
    if let Some(n) = iters {
        opts.iters = n;
    }
    let res = refine_map(&map, &frames, &pseudo, &cfg.weights, &opts)?;
    let (refined, pruned) = prune_by_opacity(&res.map, cfg.prune_threshold);
    if let Some(p) = trace {
        write_file(p, trace_csv(&res.trace).as_bytes())?;
    }
    let bytes = write_map(out, &refined, cfg.embed_step)?;
    let (first, last) = (res.trace[0], *res.trace.last().unwrap());
    println!(
        "objective {first:.6} -> {last:.6} over {} iterations ({} rejected); {pruned} Gaussians pruned; {bytes} bytes",
        res.trace.len() - 1,
        res.rejected
    );
    Ok(())
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == ext) && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("stage_"))
        })
        .collect();
    v.sort();
    Ok(v)
}

fn load_server(cfg: &ExperimentConfig, dir: &Path, until: Option<u32>) -> Result<ServerState> {
    let keep = |i: usize| until.is_none_or(|s| i as u32 <= s);
    let msgs = sorted_entries(dir, "msg")?;
    let mut server = if !msgs.is_empty() {
        let messages = msgs
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, p)| Message::from_bytes(&fs::read(p)?).with_context(|| format!("parsing {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        ServerState::from_messages(messages)?
    } else {
        let maps = sorted_entries(dir, "gsb")?;
        if maps.is_empty() {
            bail!("no stage_*.msg or stage_*.gsb files in {}", dir.display());
        }
        let mut s = ServerState::new();
        for (i, p) in maps.iter().enumerate().filter(|(i, _)| keep(*i)) {
            s.publish(&read_map(p)?, cfg.embed_step).with_context(|| format!("publishing stage {i} from {}", p.display()))?;
        }
        s
    };
    let frames_dir = dir.join("frames");
    if frames_dir.is_dir() {
        server.add_frames(&read_frames(&frames_dir)?);
    }
    Ok(server)
}

fn serve(cfg: &ExperimentConfig, scene: &Path, host: &str, port: u16, stage: Option<u32>, max: Option<usize>) -> Result<()> {
    let server = load_server(cfg, scene, stage)?;
    let stages = server.stages().len();
    let listener = TcpListener::bind((host, port)).with_context(|| format!("binding {host}:{port}"))?;
    println!("listening on {} with {stages} stage(s)", listener.local_addr()?);
    std::io::stdout().flush()?;
    serve_loop(listener, Arc::new(RwLock::new(server)), max)?;
    Ok(())
}

fn fetch_cmd(addr: &str, stage: Option<u32>, out: Option<&Path>) -> Result<()> {
    let client = fetch(addr, stage).with_context(|| format!("fetching from {addr}"))?;
    let map = client.map.as_ref().ok_or_else(|| anyhow!("server sent no map"))?;
    println!("cached {}", summary(map));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("map.bin"), &map.canonical_bytes())?;
        write_ply(&dir.join("map.ply"), &map_points(map))?;
    }
    Ok(())
}

fn run_experiment(mut cfg: ExperimentConfig, variants: &[String], out: &Path) -> Result<()> {
    if !variants.is_empty() {
        cfg.variants = variants
            .iter()
            .map(|v| Ok(Variant::parse(v)?))
            .collect::<Result<_>>()?;
    }
    let data = Dataset::generate(&cfg)?;
    let res = run_on_dataset(&cfg, &data)?;
    fs::create_dir_all(out)?;
    write_file(&out.join("results.csv"), res.csv().as_bytes())?;
    write_file(&out.join("stage_psnr.svg"), stage_plot(&res.rows).as_bytes())?;
    if let Some(server) = &res.server {
        let dir = out.join("server");
        fs::create_dir_all(&dir)?;
        for s in server.stages() {
            write_file(&dir.join(format!("stage_{:04}.msg", s.stage_id)), &s.message.to_bytes()?)?;
        }
        save_frames(&dir.join("frames"), server.frames())?;
        if !res.client_converged {
            warn!("simulated client did not converge to the server map");
        }
        println!("client converged: {}", res.client_converged);
    }
    for (variant, db) in &res.databases {
        println!(
            "{}: {} bytes cumulative, {} bytes as full maps",
            variant.name(),
            db.cumulative_bytes(),
            db.cumulative_full_bytes()
        );
    }
    print!("{}", res.csv());
    Ok(())
}

fn rd(cfg: &ExperimentConfig, lambdas: Option<Vec<f64>>, out: &Path) -> Result<()> {
    let lambdas = lambdas.unwrap_or_else(default_lambdas);
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        bail!("λ_q values must be non-negative");
    }
    let rows = rd_sweep(cfg, &lambdas)?;
    fs::create_dir_all(out)?;
    write_file(&out.join("rd.csv"), rd_rows_to_csv(&rows).as_bytes())?;
    write_file(&out.join("rd.svg"), rd_plot(&rows).as_bytes())?;
    print!("{}", rd_rows_to_csv(&rows));
    Ok(())
}

fn metrics(map: Option<&Path>, views: Option<&Path>, a: Option<&Path>, b: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let value = match (map, a, b) {
        (Some(m), _, _) => {
            let map = read_map(m)?;
            let views = read_frames(views.expect("clap enforces --views"))?;
            let e = evaluate_views(&map, &views)?;
            serde_json::json!({
                "views": e.views,
                "psnr_db": e.psnr_db,
                "ssim": e.ssim,
                "depth_l1_cm": e.depth_l1_m * 100.0,
            })
        }
        (None, Some(a), Some(b)) => {
            let (ia, ib) = (read_png_rgb(a)?, read_png_rgb(b)?);
            serde_json::json!({
                "psnr_db": psnr(&ia, &ib)?,
                "ssim": ssim(&ia, &ib)?,
                "l1": l1(&ia, &ib)?,
            })
        }
        _ => bail!("pass --map with --views, or --a with --b"),
    };
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    if let Some(p) = out {
        write_file(p, text.as_bytes())?;
    }
    Ok(())
}
