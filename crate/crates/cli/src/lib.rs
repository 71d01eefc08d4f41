//! `goembed` command-line surface tying the pipeline together.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use goembed_core::datagen::{random_scene_spec, render_dataset, CameraRing};
use goembed_core::diffusion::{
    fusion_train_step, make_schedule, pseudo_deterministic_recon, sample, FusionConfig,
    ScheduleKind,
};
use goembed_core::fields::{DecoderHead, DecoderSpec, FieldSpec};
use goembed_core::geometry::SampleStrategy;
use goembed_core::goembed::{goembed_encode, Aggregate, GOEmbedConfig, ScaleMode};
use goembed_core::io;
use goembed_core::renderer::{render, RenderConfig};
use goembed_core::rng::{indexed_seed, pick_index};
use goembed_core::tokens::{TokenBackbone, TokenDenoiser};
use goembed_core::training::{
    eval_views, fit_sso, psnr, ssim, train_goembed_recon, train_plenoptic_encoder, AdamState,
    MetricRecord, PeConfig, ReconConfig, SceneDataset, SsoConfig,
};

#[derive(Parser)]
#[command(
    name = "goembed",
    about = "Gradient-origin embeddings for radiance fields",
    version
)]
struct Cli {
    /// Cap on worker threads (falls back to GOEMBED_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-view scene datasets.
    Datagen(DatagenArgs),
    /// Overfit one field + decoder to a single scene.
    FitSso(FitSsoArgs),
    /// Encode context views into a field-shaped embedding.
    Encode(EncodeArgs),
    /// Train the shared plenoptic-encoding decoder.
    TrainPe(TrainPeArgs),
    /// Train the reconstruction backbone over embeddings.
    TrainRecon(TrainReconArgs),
    /// Train the diffusion pipeline.
    TrainFusion(TrainFusionArgs),
    /// Draw a field sample from a trained denoiser.
    Sample(SampleArgs),
    /// Render a checkpoint from stored or turntable cameras.
    Render(RenderArgs),
    /// Compare two image directories (prints JSON {"psnr", "ssim"}).
    Metrics(MetricsArgs),
}

pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("GOEMBED_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore the error: the global pool can only be set once per process
        // (relevant when run() is called repeatedly from tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let result = match cli.command {
        Command::Datagen(args) => cmd_datagen(args),
        Command::FitSso(args) => cmd_fit_sso(args),
        Command::Encode(args) => cmd_encode(args),
        Command::TrainPe(args) => cmd_train_pe(args),
        Command::TrainRecon(args) => cmd_train_recon(args),
        Command::TrainFusion(args) => cmd_train_fusion(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Render(args) => cmd_render(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

// ------------------------------------------------------------- helpers --

/// "voxel:R:C", "triplane:P:C", or "mlp:W1,W2[,...]" field spec strings.
fn parse_field_spec(s: &str) -> Result<FieldSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["voxel", r, c] => Ok(FieldSpec::voxel(r.parse()?, c.parse()?)),
        ["triplane", p, c] => Ok(FieldSpec::triplane(p.parse()?, c.parse()?)),
        ["mlp", widths] => {
            let hidden = widths
                .split(',')
                .map(|w| w.parse().map_err(anyhow::Error::from))
                .collect::<Result<Vec<usize>>>()?;
            Ok(FieldSpec::mlp(hidden, goembed_core::nn::Activation::Tanh))
        }
        _ => bail!("bad field spec '{s}' (expected voxel:R:C, triplane:P:C, or mlp:W1,W2)"),
    }
}

fn parse_scale_mode(s: &str) -> Result<ScaleMode> {
    if s == "none" {
        Ok(ScaleMode::None)
    } else if s == "std" {
        Ok(ScaleMode::PerTensorStd)
    } else if let Some(g) = s.strip_prefix("gain:") {
        Ok(ScaleMode::FixedGain(g.parse()?))
    } else {
        bail!("bad scale mode '{s}' (expected none, std, or gain:G)")
    }
}

fn parse_schedule_kind(s: &str) -> Result<ScheduleKind> {
    match s {
        "linear" => Ok(ScheduleKind::Linear),
        "cosine" => Ok(ScheduleKind::Cosine),
        _ => bail!("bad schedule kind '{s}' (expected linear or cosine)"),
    }
}

/// Flat key=value config file; explicit flags take precedence over it.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArg {
    /// Flat key=value config file supplying defaults for unset flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<BTreeMap<String, String>> {
        match &self.config {
            Some(path) => Ok(io::load_config(path)?),
            None => Ok(BTreeMap::new()),
        }
    }
}

fn cfg_get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| anyhow!("config key '{key}' = '{v}': {e}")),
        None => Ok(None),
    }
}

/// Flag value, else config value, else default.
fn resolve<T: std::str::FromStr + Clone>(
    flag: &Option<T>,
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v.clone());
    }
    Ok(cfg_get(map, key)?.unwrap_or(default))
}

fn render_config(samples: usize, seed: u64) -> RenderConfig {
    RenderConfig {
        n_samples: samples,
        strategy: SampleStrategy::Midpoint,
        background: [1.0, 1.0, 1.0],
        density_bias: -2.0,
        seed,
    }
}

fn load_split_dataset(dir: &Path, k: usize, l: usize) -> Result<SceneDataset> {
    let mut data = io::load_dataset(dir)?;
    data.assign_splits(k, l)?;
    Ok(data)
}

fn save_log(path: &Option<PathBuf>, records: &[MetricRecord]) -> Result<()> {
    if let Some(p) = path {
        io::write_metrics_jsonl(p, records)?;
    }
    Ok(())
}

fn turntable_views(n: usize, res: usize, radius: f64) -> Vec<goembed_core::geometry::CameraView> {
    let ring = CameraRing {
        n_views: n,
        radius,
        elevation_range: (0.5, 0.500001),
        resolution: res,
        seed: 0,
    };
    // Spread azimuths evenly instead of the seeded draws.
    let mut views = goembed_core::datagen::hemisphere_cameras(&ring);
    for (i, view) in views.iter_mut().enumerate() {
        let az = i as f64 / n as f64 * std::f64::consts::TAU;
        let el = 0.5f64;
        let eye = [
            radius * el.cos() * az.cos(),
            radius * el.cos() * az.sin(),
            radius * el.sin(),
        ];
        view.cam2world = goembed_core::geometry::look_at_pose(eye, [0.0; 3], [0.0, 0.0, 1.0]);
    }
    views
}

// ------------------------------------------------------------ commands --

#[derive(Args)]
struct DatagenArgs {
    /// Output dataset directory (one subdirectory per scene).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    #[arg(long, default_value_t = 48)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_datagen(args: DatagenArgs) -> Result<()> {
    for i in 0..args.scenes {
        let ring = CameraRing {
            n_views: args.views,
            radius: args.radius,
            resolution: args.res,
            seed: indexed_seed(args.seed, "ring", i as u64),
            ..Default::default()
        };
        let spec = random_scene_spec(indexed_seed(args.seed, "scene", i as u64), ring);
        let render_cfg = render_config(args.samples, 0);
        let dir = args.out.join(format!("scene_{i:04}"));
        render_dataset(&spec, &render_cfg, &dir)?;
        println!("wrote {} ({} views)", dir.display(), args.views);
    }
    Ok(())
}

#[derive(Args)]
struct FitSsoArgs {
    /// Scene directory (PNGs + cameras.json).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "voxel:32:4")]
    spec: String,
    /// Output GOEM checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Held-out views taken from the end of the scene's view list.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr_field: Option<f64>,
    #[arg(long)]
    lr_decoder: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON-lines metric log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

fn cmd_fit_sso(args: FitSsoArgs) -> Result<()> {
    let kv = args.config.load()?;
    let mut scene = io::load_scene(&args.scene)?;
    let n = scene.views.len();
    if args.holdout >= n {
        bail!("holdout {} leaves no training views of {n}", args.holdout);
    }
    scene.context = (0..n - args.holdout).collect();
    scene.target = (n - args.holdout..n).collect();

    let spec = parse_field_spec(&args.spec)?;
    let seed = resolve(&args.seed, &kv, "seed", 0)?;
    let cfg = SsoConfig {
        steps: resolve(&args.steps, &kv, "steps", 1500)?,
        lr_field: resolve(&args.lr_field, &kv, "lr_field", 1e-2)?,
        lr_decoder: resolve(&args.lr_decoder, &kv, "lr_decoder", 1e-3)?,
        rays_per_step: resolve(&args.rays, &kv, "rays", 512)?,
        render: render_config(resolve(&args.samples, &kv, "samples", 48)?, seed),
        decoder_hidden: cfg_get(&kv, "decoder_hidden")?.unwrap_or(128),
        eval_every: cfg_get(&kv, "eval_every")?.unwrap_or(0),
        seed,
    };
    let (params, decoder, records) = fit_sso(&scene, &spec, &cfg)?;
    io::save_checkpoint(&args.out, &params, &decoder)?;
    save_log(&args.log, &records)?;
    let last = records.last().context("no metric records")?;
    println!(
        "fit-sso done: loss={:.6} psnr={:.3} ssim={:.4} -> {}",
        last.loss,
        last.psnr,
        last.ssim,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct EncodeArgs {
    /// Scene directory with the context views.
    #[arg(long)]
    views: PathBuf,
    #[arg(long, default_value = "voxel:32:4")]
    spec: String,
    /// Output GOEM checkpoint holding the embedding + decoder.
    #[arg(long)]
    out: PathBuf,
    /// Encode only the first K views (0 = all).
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Decoder checkpoint; a seeded fresh decoder is used when absent.
    #[arg(long)]
    decoder: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    scale: String,
    #[arg(long, default_value = "sum")]
    aggregate: String,
    #[arg(long, default_value_t = 48)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let spec = parse_field_spec(&args.spec)?;
    let scene = io::load_scene(&args.views)?;
    let k = if args.k == 0 { scene.views.len() } else { args.k };
    if k > scene.views.len() {
        bail!("asked for {k} context views, scene has {}", scene.views.len());
    }
    let decoder = match &args.decoder {
        Some(path) => io::load_checkpoint(path)?.1,
        None => {
            let channels = spec
                .feature_channels()
                .context("mlp specs need --decoder for consistency with training")?;
            DecoderHead::new(DecoderSpec::new(channels), args.seed)?
        }
    };
    let cfg = GOEmbedConfig {
        scale_mode: parse_scale_mode(&args.scale)?,
        aggregate: match args.aggregate.as_str() {
            "sum" => Aggregate::Sum,
            "mean" => Aggregate::Mean,
            other => bail!("bad aggregate '{other}'"),
        },
        render: render_config(args.samples, args.seed),
    };
    let ctxt: Vec<&goembed_core::geometry::CameraView> = scene.views.iter().take(k).collect();
    let embedding = goembed_encode(&spec, &decoder, &ctxt, &cfg, args.seed)?;
    io::save_checkpoint(&args.out, &embedding, &decoder)?;
    println!("encoded {k} views -> {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct TrainPeArgs {
    /// Dataset directory (one subdirectory per scene).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "triplane:16:4")]
    spec: String,
    /// Output GOEM checkpoint (zero origin + trained decoder).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

fn cmd_train_pe(args: TrainPeArgs) -> Result<()> {
    let kv = args.config.load()?;
    let spec = parse_field_spec(&args.spec)?;
    let k = resolve(&args.k, &kv, "k", 4)?;
    let l = resolve(&args.l, &kv, "l", 2)?;
    let data = load_split_dataset(&args.data, k, l)?;
    let seed = resolve(&args.seed, &kv, "seed", 0)?;
    let cfg = PeConfig {
        steps: resolve(&args.steps, &kv, "steps", 400)?,
        lr_decoder: resolve(&args.lr, &kv, "lr", 1e-3)?,
        goembed: GOEmbedConfig {
            scale_mode: parse_scale_mode(&resolve(&args.scale, &kv, "scale", "std".to_string())?)?,
            aggregate: Aggregate::Sum,
            render: render_config(resolve(&args.samples, &kv, "samples", 16)?, seed),
        },
        decoder_hidden: cfg_get(&kv, "decoder_hidden")?.unwrap_or(128),
        rays_per_loss_view: resolve(&args.rays, &kv, "rays", 0)?,
        eval_every: cfg_get(&kv, "eval_every")?.unwrap_or(0),
        seed,
        origin_seed: cfg_get(&kv, "origin_seed")?.unwrap_or(0),
        init_decoder: None,
    };
    let (decoder, records) = train_plenoptic_encoder(&data, &spec, &cfg)?;
    let origin = goembed_core::fields::zero_origin(&spec, cfg.origin_seed)?;
    io::save_checkpoint(&args.out, &origin, &decoder)?;
    save_log(&args.log, &records)?;
    let last = records.last().context("no metric records")?;
    println!(
        "train-pe done: loss={:.6} target psnr={:.3} -> {}",
        last.loss,
        last.psnr,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainReconArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "triplane:16:4")]
    spec: String,
    /// Warm-start decoder checkpoint (e.g. from train-pe).
    #[arg(long)]
    init_decoder: Option<PathBuf>,
    #[arg(long)]
    out_backbone: PathBuf,
    #[arg(long)]
    out_decoder: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long, default_value_t = 8)]
    token_dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

fn cmd_train_recon(args: TrainReconArgs) -> Result<()> {
    let kv = args.config.load()?;
    let spec = parse_field_spec(&args.spec)?;
    let k = resolve(&args.k, &kv, "k", 4)?;
    let l = resolve(&args.l, &kv, "l", 2)?;
    let data = load_split_dataset(&args.data, k, l)?;
    let seed = resolve(&args.seed, &kv, "seed", 0)?;

    let decoder = match &args.init_decoder {
        Some(path) => io::load_checkpoint(path)?.1,
        None => {
            let channels = spec.feature_channels().context("recon needs a grid field kind")?;
            DecoderHead::new(
                DecoderSpec::new(channels).with_hidden(cfg_get(&kv, "decoder_hidden")?.unwrap_or(128)),
                indexed_seed(seed, "recon_decoder", 0),
            )?
        }
    };
    let backbone = TokenBackbone::new(
        spec.clone(),
        args.token_dim,
        args.hidden,
        args.embed_dim,
        indexed_seed(seed, "backbone", 0),
    )?;
    let lr = resolve(&args.lr, &kv, "lr", 1e-3)?;
    let cfg = ReconConfig {
        steps: resolve(&args.steps, &kv, "steps", 400)?,
        lr_backbone: lr,
        lr_decoder: lr,
        goembed: GOEmbedConfig {
            scale_mode: parse_scale_mode(&resolve(&args.scale, &kv, "scale", "std".to_string())?)?,
            aggregate: Aggregate::Sum,
            render: render_config(resolve(&args.samples, &kv, "samples", 16)?, seed),
        },
        rays_per_loss_view: resolve(&args.rays, &kv, "rays", 0)?,
        eval_every: cfg_get(&kv, "eval_every")?.unwrap_or(0),
        seed,
        origin_seed: cfg_get(&kv, "origin_seed")?.unwrap_or(0),
    };
    let (backbone, decoder, records) = train_goembed_recon(&data, backbone, decoder, &spec, &cfg)?;
    io::save_backbone(&args.out_backbone, &backbone)?;
    let origin = goembed_core::fields::zero_origin(&spec, cfg.origin_seed)?;
    io::save_checkpoint(&args.out_decoder, &origin, &decoder)?;
    save_log(&args.log, &records)?;
    let last = records.last().context("no metric records")?;
    println!(
        "train-recon done: loss={:.6} target psnr={:.3} -> {}",
        last.loss,
        last.psnr,
        args.out_backbone.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainFusionArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "triplane:16:4")]
    spec: String,
    #[arg(long)]
    out_denoiser: PathBuf,
    #[arg(long)]
    out_decoder: PathBuf,
    #[arg(long)]
    init_decoder: Option<PathBuf>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 8)]
    token_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

fn cmd_train_fusion(args: TrainFusionArgs) -> Result<()> {
    let kv = args.config.load()?;
    let spec = parse_field_spec(&args.spec)?;
    let k = resolve(&args.k, &kv, "k", 4)?;
    let l = resolve(&args.l, &kv, "l", 2)?;
    let data = load_split_dataset(&args.data, k, l)?;
    let seed = resolve(&args.seed, &kv, "seed", 0)?;

    let kind = parse_schedule_kind(&resolve(
        &args.schedule,
        &kv,
        "schedule",
        "cosine".to_string(),
    )?)?;
    let t_max = resolve(&args.t_max, &kv, "t_max", 1000)?;
    let sched = make_schedule(kind, t_max)?;

    let mut decoder = match &args.init_decoder {
        Some(path) => io::load_checkpoint(path)?.1,
        None => {
            let channels = spec.feature_channels().context("fusion needs a grid field kind")?;
            DecoderHead::new(
                DecoderSpec::new(channels).with_hidden(cfg_get(&kv, "decoder_hidden")?.unwrap_or(96)),
                indexed_seed(seed, "fusion_decoder", 0),
            )?
        }
    };
    let mut denoiser = TokenDenoiser::new(
        spec.clone(),
        args.token_dim,
        args.hidden,
        args.embed_dim,
        indexed_seed(seed, "denoiser", 0),
    )?;
    let lr = resolve(&args.lr, &kv, "lr", 5e-5)?;
    let steps = resolve(&args.steps, &kv, "steps", 2000)?;
    let cfg = FusionConfig {
        dropout_p: resolve(&args.dropout, &kv, "dropout_p", 0.5)?,
        aggregate: Aggregate::Sum,
        render: render_config(resolve(&args.samples, &kv, "samples", 12)?, seed),
        cond_scale: ScaleMode::PerTensorStd,
        rays_per_loss_view: resolve(&args.rays, &kv, "rays", 0)?,
        origin_seed: cfg_get(&kv, "origin_seed")?.unwrap_or(0),
    };

    let mut opt_denoiser = AdamState::new(denoiser.param_count(), lr);
    let mut opt_decoder = AdamState::new(decoder.params.len(), lr);
    let eval_every: usize = cfg_get(&kv, "eval_every")?.unwrap_or(0);
    let mut records = Vec::new();

    for step in 0..steps {
        let scene_idx = pick_index(seed, "fusion_scene", step as u64, data.scenes.len());
        let scene = &data.scenes[scene_idx];
        let losses = fusion_train_step(
            &scene.context_views(),
            &scene.target_views(),
            &mut denoiser,
            &mut decoder,
            &mut opt_denoiser,
            &mut opt_decoder,
            &sched,
            &cfg,
            indexed_seed(seed, "fusion_step", step as u64),
        )?;
        let record_now = eval_every > 0 && (step + 1) % eval_every == 0;
        if record_now || step + 1 == steps {
            let scene0 = &data.scenes[0];
            let cond = goembed_encode(
                &spec,
                &decoder,
                &scene0.context_views(),
                &GOEmbedConfig {
                    scale_mode: cfg.cond_scale,
                    aggregate: cfg.aggregate,
                    render: cfg.render,
                },
                cfg.origin_seed,
            )?;
            let recon = pseudo_deterministic_recon(&denoiser, &cond, &sched, seed)?;
            let (p, s) = eval_views(&recon, &decoder, &scene0.target_views(), &cfg.render)?;
            records.push(MetricRecord {
                step: (step + 1) as u64,
                loss: losses.total,
                psnr: p,
                ssim: s,
            });
            println!(
                "step {:>5}: total={:.5} fusion={:.5} pse_det={:.5} goembed={:.5} recon_psnr={:.2}",
                step + 1,
                losses.total,
                losses.fusion,
                losses.pse_det,
                losses.goembed,
                p
            );
        }
    }

    io::save_denoiser(&args.out_denoiser, &denoiser)?;
    let origin = goembed_core::fields::zero_origin(&spec, cfg.origin_seed)?;
    io::save_checkpoint(&args.out_decoder, &origin, &decoder)?;
    save_log(&args.log, &records)?;
    println!("train-fusion done -> {}", args.out_denoiser.display());
    Ok(())
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    denoiser: PathBuf,
    #[arg(long)]
    decoder: PathBuf,
    #[arg(long, default_value = "cosine")]
    schedule: String,
    #[arg(long, default_value_t = 1000)]
    t_max: usize,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    /// Scene directory supplying conditioning views (unconditional if absent).
    #[arg(long)]
    cond_views: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 48)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output GOEM checkpoint for the sampled field.
    #[arg(long)]
    out: PathBuf,
    /// Directory for turntable renders of the sample.
    #[arg(long)]
    turntable: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let denoiser = io::load_denoiser(&args.denoiser)?;
    let (_, decoder) = io::load_checkpoint(&args.decoder)?;
    let sched = make_schedule(parse_schedule_kind(&args.schedule)?, args.t_max)?;
    let spec = denoiser.field_spec.clone();
    let render_cfg = render_config(args.samples, args.seed);

    let cond = match &args.cond_views {
        Some(dir) => {
            let scene = io::load_scene(dir)?;
            if scene.views.len() < args.k {
                bail!("need {} conditioning views, scene has {}", args.k, scene.views.len());
            }
            let ctxt: Vec<&goembed_core::geometry::CameraView> =
                scene.views.iter().take(args.k).collect();
            let enc = goembed_encode(
                &spec,
                &decoder,
                &ctxt,
                &GOEmbedConfig {
                    scale_mode: ScaleMode::PerTensorStd,
                    aggregate: Aggregate::Sum,
                    render: render_cfg,
                },
                0,
            )?;
            Some(enc)
        }
        None => None,
    };

    let field = sample(&denoiser, &sched, args.guidance, cond.as_ref(), args.seed)?;
    io::save_checkpoint(&args.out, &field, &decoder)?;
    println!("sampled field -> {}", args.out.display());

    if let Some(dir) = &args.turntable {
        std::fs::create_dir_all(dir)?;
        for (i, view) in turntable_views(args.frames, args.res, 3.0).iter().enumerate() {
            let out = render(&field, &decoder, view, &render_cfg)?;
            io::write_png(&dir.join(format!("{i:04}.png")), &out.image)?;
        }
        println!("turntable ({} frames) -> {}", args.frames, dir.display());
    }
    Ok(())
}

#[derive(Args)]
struct RenderArgs {
    /// GOEM checkpoint to render.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// cameras.json to take poses from (renders one frame per entry).
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Number of turntable frames when no camera file is given.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 48)]
    samples: usize,
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let (params, decoder) = io::load_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out)?;
    let render_cfg = render_config(args.samples, 0);

    let views = match &args.cameras {
        Some(path) => {
            let entries = io::load_cameras(path)?;
            entries
                .iter()
                .map(|e| {
                    let mut cam2world = [0.0; 16];
                    if e.cam2world.len() != 16 {
                        bail!("cam2world must have 16 entries");
                    }
                    cam2world.copy_from_slice(&e.cam2world);
                    Ok(goembed_core::geometry::CameraView {
                        image: goembed_core::Image::new(args.res, args.res),
                        cam2world,
                        fx: e.fx,
                        fy: e.fy,
                        cx: e.cx,
                        cy: e.cy,
                        near: e.near,
                        far: e.far,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => turntable_views(args.frames, args.res, 3.0),
    };

    for (i, view) in views.iter().enumerate() {
        let out = render(&params, &decoder, view, &render_cfg)?;
        io::write_png(&args.out.join(format!("{i:04}.png")), &out.image)?;
    }
    println!("rendered {} frames -> {}", views.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct MetricsArgs {
    dir_a: PathBuf,
    dir_b: PathBuf,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let a_files = png_files(&args.dir_a)?;
    let b_files = png_files(&args.dir_b)?;
    if a_files.is_empty() || a_files.len() != b_files.len() {
        bail!(
            "directories must hold the same non-zero number of PNGs ({} vs {})",
            a_files.len(),
            b_files.len()
        );
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (fa, fb) in a_files.iter().zip(&b_files) {
        let ia = io::read_png(fa)?;
        let ib = io::read_png(fb)?;
        p += psnr(&ia, &ib)?;
        s += ssim(&ia, &ib)?;
    }
    let n = a_files.len() as f64;
    println!(
        "{}",
        serde_json::json!({ "psnr": p / n, "ssim": s / n })
    );
    Ok(())
}
