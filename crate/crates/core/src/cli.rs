//! Subcommand implementations behind the `xraypipe` binary.
//!
//! Every command resolves its seed the same way: `--seed`, then the
//! `XRAYPIPE_SEED` environment variable, then the seed in the config or plan
//! file, then 0.

use std::ffi::OsString;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::compress::{compress, CompressConfig, CompressedPayload};
use crate::degrade::{apply_plan, DegradationPlan};
use crate::error::{Error, Result};
use crate::imaging::{read_image, resize, write_image, BitDepth, GrayImage, ResampleFilter};
use crate::inference::{run_discriminator, NetworkGraph, WeightStore};
use crate::metrics::{composite_loss, compression_ratio, LossWeights, PerceptualExtractor, QualityReport};
use crate::phantom::{phantom, PhantomSpec, DEFAULT_SIZE};
use crate::report::{bar_chart_svg, bench_csv, psnr_table, quality_csv, BenchRow, QualityRow};
use crate::restore::{Backend, Denoiser, RestoreConfig, Restorer};
use crate::rng::mix;
use crate::transport::{frame_decode, send_frames, serve, simulate_transfer, Frame, LinkSpec, RecvOptions, SendOptions};

pub const SEED_ENV: &str = "XRAYPIPE_SEED";

/// `flag`, else `XRAYPIPE_SEED`, else `config`, else 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(config.unwrap_or(0)),
    }
}

/// Manifest and weight file of a loadable network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub manifest: PathBuf,
    pub weights: PathBuf,
}

impl ModelPaths {
    fn load(&self) -> Result<(NetworkGraph, WeightStore)> {
        let graph = NetworkGraph::load(&self.manifest)?;
        let weights = WeightStore::load(&self.weights)?;
        graph.validate(&weights)?;
        Ok((graph, weights))
    }
}

/// Synthetic corpus used when no input directory is configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSet {
    pub count: usize,
    pub size: usize,
    pub noise: f64,
}

impl Default for PhantomSet {
    fn default() -> Self {
        Self {
            count: 20,
            size: 512,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestoreSettings {
    pub backends: Vec<Backend>,
    pub denoiser: Denoiser,
    pub tile: Option<usize>,
}

impl Default for RestoreSettings {
    fn default() -> Self {
        Self {
            backends: Backend::CLASSICAL.to_vec(),
            denoiser: Denoiser::default(),
            tile: None,
        }
    }
}

/// JSON run configuration shared by `pipeline` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of `.pgm`/`.png` inputs; phantoms are generated when absent.
    #[serde(default)]
    pub input_dir: Option<PathBuf>,
    #[serde(default)]
    pub phantoms: PhantomSet,
    #[serde(default)]
    pub degradation_plan: Option<PathBuf>,
    #[serde(default)]
    pub compress: CompressConfig,
    #[serde(default)]
    pub restore: RestoreSettings,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub perceptual: Option<ModelPaths>,
    #[serde(default)]
    pub discriminator: Option<ModelPaths>,
    #[serde(default)]
    pub link: LinkSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("xraypipe-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `.pgm`/`.png` files of `dir`, sorted by name, keyed by file stem.
pub fn load_inputs(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            read_image(&p).map(|img| (id, img))
        })
        .collect()
}

fn gather_inputs(cfg: &RunConfig, seed: u64) -> Result<Vec<(String, GrayImage)>> {
    match &cfg.input_dir {
        Some(dir) => load_inputs(dir),
        None => (0..cfg.phantoms.count)
            .map(|i| {
                let spec = PhantomSpec::new(cfg.phantoms.size, seed.wrapping_add(i as u64)).with_noise(cfg.phantoms.noise);
                phantom(&spec).map(|img| (format!("phantom_{i:03}"), img))
            })
            .collect(),
    }
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct ManifestEntry {
    id: String,
    status: String,
    payload_bytes: Option<usize>,
    transfer_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    seed: u64,
    complete: bool,
    error: Option<String>,
    entries: Vec<ManifestEntry>,
}

/// Per-(image, backend) rows plus the backend ranking by mean PSNR.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub rows: Vec<QualityRow>,
    pub summary: Vec<(String, f64)>,
}

struct PipelineState {
    rows: Vec<QualityRow>,
    entries: Vec<ManifestEntry>,
}

fn write_pipeline_outputs(out: &Path, seed: u64, state: &PipelineState, summary: &[(String, f64)], error: Option<&Error>) -> Result<()> {
    fs::write(out.join("results.csv"), quality_csv(&state.rows))?;
    fs::write(out.join("summary.txt"), psnr_table(summary))?;
    let manifest = RunManifest {
        seed,
        complete: error.is_none(),
        error: error.map(|e| e.to_string()),
        entries: state.entries.clone(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn summarize(rows: &[QualityRow], backends: &[String]) -> Vec<(String, f64)> {
    let mut summary: Vec<(String, f64)> = backends
        .iter()
        .filter_map(|b| {
            let vals: Vec<f64> = rows.iter().filter(|r| &r.backend == b).map(|r| r.report.psnr_db).collect();
            (!vals.is_empty()).then(|| (b.clone(), vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect();
    summary.sort_by(|a, b| b.1.total_cmp(&a.1));
    summary
}

/// Degrade (optional), compress, frame, simulate the link, restore with every
/// configured backend and score against the clean input.
///
/// Writes `results.csv`, `summary.txt`, `manifest.json` and
/// `restored/<id>_<backend>.png` under the output directory. On failure the
/// manifest is still written with `complete: false`.
pub fn cmd_pipeline(cfg: &RunConfig, seed: u64) -> Result<PipelineOutcome> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("restored"))?;
    let mut state = PipelineState {
        rows: Vec::new(),
        entries: Vec::new(),
    };
    let names: Vec<String> = cfg.restore.backends.iter().map(|b| b.name().to_owned()).collect();
    match run_pipeline(cfg, seed, &mut state) {
        Ok(()) => {
            let summary = summarize(&state.rows, &names);
            write_pipeline_outputs(out, seed, &state, &summary, None)?;
            Ok(PipelineOutcome {
                rows: state.rows,
                summary,
            })
        }
        Err(e) => {
            let summary = summarize(&state.rows, &names);
            write_pipeline_outputs(out, seed, &state, &summary, Some(&e))?;
            Err(e)
        }
    }
}

fn run_pipeline(cfg: &RunConfig, seed: u64, state: &mut PipelineState) -> Result<()> {
    cfg.compress.validate()?;
    cfg.link.validate()?;
    cfg.loss_weights.validate()?;
    if cfg.restore.backends.is_empty() {
        return Err(Error::Config("at least one restore backend is required".into()));
    }
    let plan = cfg.degradation_plan.as_deref().map(DegradationPlan::load).transpose()?;
    let mut restorers = Vec::new();
    for b in &cfg.restore.backends {
        let rc = RestoreConfig {
            backend: b.clone(),
            denoiser: cfg.restore.denoiser,
            tile: cfg.restore.tile,
        };
        restorers.push((b.name().to_owned(), Restorer::new(&rc)?));
    }
    let extractor = match &cfg.perceptual {
        Some(m) => PerceptualExtractor::load(&m.manifest, &m.weights)?,
        None => PerceptualExtractor::PyramidProxy,
    };
    let discriminator = cfg.discriminator.as_ref().map(ModelPaths::load).transpose()?;

    let inputs = gather_inputs(cfg, seed)?;
    if inputs.is_empty() {
        eprintln!("warning: no input images found; writing empty results");
    }
    for (index, (id, clean)) in inputs.iter().enumerate() {
        let entry = ManifestEntry {
            id: id.clone(),
            status: "failed".into(),
            payload_bytes: None,
            transfer_seconds: None,
        };
        state.entries.push(entry);
        let entry = state.entries.last_mut().unwrap();

        let source = match &plan {
            Some(p) => {
                let mut p = p.clone();
                p.seed = mix(&[seed, p.seed, index as u64]);
                let degraded = apply_plan(clean, &p)?;
                if degraded.dims() == clean.dims() {
                    degraded
                } else {
                    resize(&degraded, clean.width(), clean.height(), ResampleFilter::Bicubic)?
                }
            }
            None => clean.clone(),
        };
        let payload = compress(&source, &cfg.compress)?;
        let wire = Frame::new(id.clone(), payload).encode();
        let received = frame_decode(&wire)?.payload;
        let seconds = simulate_transfer(wire.len() as u64, &cfg.link);
        entry.payload_bytes = Some(received.byte_len());
        entry.transfer_seconds = Some(seconds);

        for (name, restorer) in &restorers {
            let restored = restorer.restore(&received)?;
            let logits = match &discriminator {
                Some((g, w)) => run_discriminator(g, w, &restored)?.data().to_vec(),
                None => vec![0.0],
            };
            let terms = composite_loss(&restored, clean, &logits, &cfg.loss_weights, &extractor)?;
            let report = QualityReport::new(&restored, clean, terms, received.byte_len(), received.raw_bytes())?;
            let file = cfg.output_dir.join("restored").join(format!("{}_{name}.png", safe_name(id)));
            write_image(&file, &restored, BitDepth::Eight)?;
            state.rows.push(QualityRow {
                id: id.clone(),
                backend: name.clone(),
                report,
            });
        }
        state.entries.last_mut().unwrap().status = "ok".into();
    }
    Ok(())
}

/// Compressed-vs-raw transfer comparison per image plus a `mean` row.
/// Writes `bench.csv` and `bench.svg`.
pub fn cmd_bench(cfg: &RunConfig, seed: u64) -> Result<Vec<BenchRow>> {
    cfg.link.validate()?;
    cfg.compress.validate()?;
    let inputs = gather_inputs(cfg, seed)?;
    if inputs.is_empty() {
        eprintln!("warning: no input images found; writing empty results");
    }
    let mut rows = Vec::with_capacity(inputs.len() + 1);
    for (id, img) in &inputs {
        let p = compress(img, &cfg.compress)?;
        let raw = img.width() * img.height();
        let sent = p.byte_len();
        rows.push(BenchRow {
            id: id.clone(),
            raw_bytes: raw as f64,
            payload_bytes: sent as f64,
            ratio: compression_ratio(raw, sent),
            raw_seconds: simulate_transfer(raw as u64, &cfg.link),
            compressed_seconds: simulate_transfer(sent as u64, &cfg.link),
        });
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        rows.push(BenchRow {
            id: "mean".into(),
            raw_bytes: mean(|r| r.raw_bytes),
            payload_bytes: mean(|r| r.payload_bytes),
            ratio: mean(|r| r.ratio),
            raw_seconds: mean(|r| r.raw_seconds),
            compressed_seconds: mean(|r| r.compressed_seconds),
        });
    }
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("bench.csv"), bench_csv(&rows))?;
    let bars = match rows.last() {
        Some(m) => vec![("raw".to_owned(), m.raw_seconds), ("compressed".to_owned(), m.compressed_seconds)],
        None => Vec::new(),
    };
    fs::write(
        cfg.output_dir.join("bench.svg"),
        bar_chart_svg("Mean simulated transfer time", "s", &bars),
    )?;
    Ok(rows)
}

/// Writes `count` phantoms as `phantom_NNN.png` (or `.pgm`).
pub fn cmd_phantom(count: usize, size: usize, seed: u64, noise: f64, out: &Path, pgm: bool) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::arg("phantom count must be >= 1"));
    }
    fs::create_dir_all(out)?;
    let ext = if pgm { "pgm" } else { "png" };
    (0..count)
        .map(|i| {
            let img = phantom(&PhantomSpec::new(size, seed.wrapping_add(i as u64)).with_noise(noise))?;
            let path = out.join(format!("phantom_{i:03}.{ext}"));
            write_image(&path, &img, BitDepth::Eight)?;
            Ok(path)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "xraypipe", version, about = "Radiograph degradation, compression, transfer and restoration")]
pub struct Cli {
    /// Seed for every random draw; falls back to $XRAYPIPE_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic chest phantoms.
    Phantom(PhantomArgs),
    /// Apply a degradation plan to an image.
    Degrade(DegradeArgs),
    /// Downscale and encode an image into a payload file.
    Compress(CompressArgs),
    /// Decode a payload and restore it to the original resolution.
    Restore(RestoreArgs),
    /// Score a restored image against its reference.
    Metrics(MetricsArgs),
    /// Run the end-to-end pipeline over a corpus.
    Pipeline(RunArgs),
    /// Compare raw and compressed transfer times.
    Bench(RunArgs),
    /// Send payload files to a receiver.
    Send(SendArgs),
    /// Receive payload files.
    Recv(RecvArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write PGM instead of PNG.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON degradation plan; without it a classical chain is built from the flags below.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub factor: u32,
    #[arg(long, default_value_t = 0.02)]
    pub tau: f64,
    #[arg(long, default_value_t = 75)]
    pub quality: u8,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON compress config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Transmission size as WxH.
    #[arg(long, value_parser = parse_dims)]
    pub target: Option<(usize, usize)>,
    #[arg(long)]
    pub quality_min: Option<u8>,
    #[arg(long)]
    pub quality_max: Option<u8>,
    /// Upper bound on coefficient bytes.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "bicubic")]
    pub backend: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// none, median, gaussian:SIGMA, bilateral or bilateral:SIGMA_S,SIGMA_R
    #[arg(long, default_value = "bilateral")]
    pub denoiser: String,
    #[arg(long)]
    pub tile: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub restored: PathBuf,
    /// Payload the restored image came from, for byte counts.
    #[arg(long)]
    pub payload: Option<PathBuf>,
    #[arg(long)]
    pub disc_manifest: Option<PathBuf>,
    #[arg(long)]
    pub disc_weights: Option<PathBuf>,
    #[arg(long, default_value = "image")]
    pub id: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Phantom count when no input directory is given.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SendArgs {
    /// Receiver as host:port.
    #[arg(long)]
    pub to: String,
    /// Payload files, sent in order.
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub attempts: u32,
}

#[derive(Debug, Args)]
pub struct RecvArgs {
    /// Port, or host:port, to listen on.
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Exit after this many frames.
    #[arg(long)]
    pub count: Option<usize>,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension `{v}`"));
    Ok((p(w)?, p(h)?))
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.input_dir {
        cfg.input_dir = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = args.count {
        cfg.phantoms.count = c;
    }
    if let Some(s) = args.size {
        cfg.phantoms.size = s;
    }
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Argument(e.to_string()))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => {
            let seed = resolve_seed(cli.seed, None)?;
            for p in cmd_phantom(a.count, a.size, seed, a.noise, &a.out, a.pgm)? {
                println!("{}", p.display());
            }
        }
        Command::Degrade(a) => {
            let mut plan = match &a.plan {
                Some(p) => DegradationPlan::load(p)?,
                None => DegradationPlan::classical(a.order, a.sigma, a.factor, a.tau, a.quality, 0),
            };
            plan.seed = resolve_seed(cli.seed, Some(plan.seed))?;
            let img = read_image(&a.input)?;
            let out = apply_plan(&img, &plan)?;
            write_image(&a.out, &out, img.source_depth())?;
            println!("{}x{} -> {}x{}", img.width(), img.height(), out.width(), out.height());
        }
        Command::Compress(a) => {
            let mut cfg = match &a.config {
                Some(p) => serde_json::from_str::<CompressConfig>(&fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => CompressConfig::default(),
            };
            if let Some(t) = a.target {
                cfg.target = t;
            }
            if let Some(q) = a.quality_min {
                cfg.quality_range.0 = q;
            }
            if let Some(q) = a.quality_max {
                cfg.quality_range.1 = q;
            }
            if a.budget.is_some() {
                cfg.size_budget = a.budget;
            }
            let img = read_image(&a.input)?;
            let p = compress(&img, &cfg)?;
            fs::write(&a.out, p.to_bytes())?;
            println!(
                "q={} {}x{} -> {}x{} {} bytes (ratio {:.2}){}{}",
                p.quality,
                img.width(),
                img.height(),
                p.downscaled.0,
                p.downscaled.1,
                p.byte_len(),
                compression_ratio(p.raw_bytes(), p.byte_len()),
                if p.preprocessed { " preprocessed" } else { "" },
                if p.over_budget { " over-budget" } else { "" }
            );
        }
        Command::Restore(a) => {
            let backend = Backend::parse(&a.backend, a.manifest, a.weights)?;
            let denoiser: Denoiser = a.denoiser.parse()?;
            let cfg = RestoreConfig {
                backend,
                denoiser,
                tile: a.tile,
            };
            let p = CompressedPayload::from_bytes(&fs::read(&a.input)?)?;
            let out = Restorer::new(&cfg)?.restore(&p)?;
            write_image(&a.out, &out, BitDepth::Eight)?;
            println!("{}x{}", out.width(), out.height());
        }
        Command::Metrics(a) => {
            let reference = read_image(&a.reference)?;
            let restored = read_image(&a.restored)?;
            let logits = match (a.disc_manifest, a.disc_weights) {
                (Some(manifest), Some(weights)) => {
                    let (g, w) = ModelPaths { manifest, weights }.load()?;
                    run_discriminator(&g, &w, &restored)?.data().to_vec()
                }
                (None, None) => vec![0.0],
                _ => return Err(Error::arg("discriminator needs both --disc-manifest and --disc-weights")),
            };
            let terms = composite_loss(
                &restored,
                &reference,
                &logits,
                &LossWeights::default(),
                &PerceptualExtractor::PyramidProxy,
            )?;
            let (payload_bytes, raw_bytes) = match &a.payload {
                Some(p) => {
                    let p = CompressedPayload::from_bytes(&fs::read(p)?)?;
                    (p.byte_len(), p.raw_bytes())
                }
                None => {
                    let raw = reference.width() * reference.height();
                    (raw, raw)
                }
            };
            let report = QualityReport::new(&restored, &reference, terms, payload_bytes, raw_bytes)?;
            let csv = quality_csv(&[QualityRow {
                id: a.id,
                backend: "-".into(),
                report,
            }]);
            match a.csv {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Pipeline(a) => {
            let cfg = run_config(&a)?;
            let seed = resolve_seed(cli.seed, cfg.seed)?;
            let outcome = cmd_pipeline(&cfg, seed)?;
            print!("{}", psnr_table(&outcome.summary));
        }
        Command::Bench(a) => {
            let cfg = run_config(&a)?;
            let seed = resolve_seed(cli.seed, cfg.seed)?;
            let rows = cmd_bench(&cfg, seed)?;
            print!("{}", bench_csv(&rows));
        }
        Command::Send(a) => {
            let frames = a
                .input
                .iter()
                .map(|path| {
                    let p = CompressedPayload::from_bytes(&fs::read(path)?)?;
                    let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    Ok(Frame::new(id, p).encode())
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = SendOptions {
                attempts: a.attempts,
                ..Default::default()
            };
            for (path, crc) in a.input.iter().zip(send_frames(&a.to, &frames, &opts)?) {
                println!("{} acked crc={crc:08x}", path.display());
            }
        }
        Command::Recv(a) => {
            let addr = if a.listen.contains(':') {
                a.listen.clone()
            } else {
                format!("0.0.0.0:{}", a.listen)
            };
            let listener = TcpListener::bind(&addr)?;
            fs::create_dir_all(&a.out)?;
            let opts = RecvOptions {
                max_frames: a.count,
                ..Default::default()
            };
            let out = a.out.clone();
            let stats = serve(&listener, &opts, |frame| {
                let path = out.join(format!("{}.xrcp", safe_name(&frame.meta.image_id)));
                fs::write(&path, frame.payload.to_bytes())?;
                println!("{}", path.display());
                Ok(())
            })?;
            eprintln!("received {} frame(s), rejected {}", stats.accepted, stats.rejected);
        }
    }
    Ok(())
}

/// Binary entry point: runs the command, reports errors on stderr.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
