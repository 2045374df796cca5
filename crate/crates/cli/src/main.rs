use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ppdet_core::harness::{ProtocolKind, TransportKind};
use ppdet_core::pipeline::bench::{bench_beaver_mul, bench_grr_mul, bench_protocol, stage_rows, BenchRow};
use ppdet_core::pipeline::{
    compare, compare_detections, dealer_requirements, dealer_serve, oracle_infer, privacy_checks, read_detections,
    reconstruct_image, secure_infer, share_histograms, split_image, stage_errors, write_detections, Engine, Image,
    Model, PipelineConfig,
};
use ppdet_core::stats::{byte_histogram, chi_square_uniform_p};

#[derive(Parser)]
#[command(name = "ppdet", version, about = "Two-party secret-shared object detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    transport: Option<Transport>,
    /// Base seed; dealer, sharing and weights seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
    /// Suppression threshold.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Beaver,
    Grr3,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into two share images (mod 256) and test their histograms.
    Share { image: PathBuf },
    /// Write both parties' dealer bundles for one inference.
    Dealer,
    /// Plaintext fixed-point inference.
    Oracle { image: PathBuf },
    /// Secure two-party inference, checked against the oracle.
    Infer { image: PathBuf },
    /// Cost and runtime per protocol and size.
    Bench {
        /// Comma-separated protocol names, or `all`.
        #[arg(long, default_value = "comp,exp,divi,silu,sigmoid,ds,nms")]
        protocols: String,
        /// Comma-separated input sizes.
        #[arg(long, default_value = "1000,10000")]
        sizes: String,
        /// Also run one inference and report its stages.
        #[arg(long)]
        stages: bool,
    },
    /// Compare two detection files.
    Compare { left: PathBuf, right: PathBuf },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = g.transport {
        cfg.transport = match t {
            Transport::Inproc => TransportKind::Inproc,
            Transport::Tcp => TransportKind::Tcp,
        };
    }
    if let Some(s) = g.seed {
        cfg.dealer_seed = s;
        cfg.share_seed = s.wrapping_add(1);
        cfg.weights_seed = s.wrapping_add(2);
    }
    if let Some(e) = g.engine {
        cfg.engine = match e {
            EngineArg::Beaver => Engine::Beaver,
            EngineArg::Grr3 => Engine::Grr3,
        };
    }
    if let Some(eta) = g.eta {
        cfg.eta = eta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_input(path: &Path, model: &Model) -> Result<Image> {
    let [c, h, w] = model.backbone.input_shape();
    let img = Image::load(path, c).with_context(|| format!("reading {}", path.display()))?;
    Ok(if (img.width, img.height) == (w, h) {
        img
    } else {
        log::info!("resizing {}x{} to {w}x{h}", img.width, img.height);
        img.resized(w, h)
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn share(g: &Global, image: &Path) -> Result<()> {
    let img = Image::load_native(image)?;
    let seed = g.seed.unwrap_or(0);
    let (s1, s2) = split_image(&img, &mut ChaCha20Rng::seed_from_u64(seed));
    if reconstruct_image(&s1, &s2)? != img {
        bail!("share images do not reconstruct the input");
    }
    let ext = if img.channels == 1 { "pgm" } else { "ppm" };
    s1.save_pnm(&g.out.join(format!("share1.{ext}")))?;
    s2.save_pnm(&g.out.join(format!("share2.{ext}")))?;
    let mut w = csv::Writer::from_path(g.out.join("share_histograms.csv"))?;
    w.write_record(["share", "pixels", "p_value"])?;
    for (name, s) in [("share1", &s1), ("share2", &s2)] {
        let p = chi_square_uniform_p(&byte_histogram(&s.pixels));
        w.write_record([name, &s.pixels.len().to_string(), &format!("{p:.6}")])?;
        println!("{name}: chi-square p = {p:.4}");
    }
    w.flush()?;
    Ok(())
}

fn dealer(g: &Global, cfg: &PipelineConfig) -> Result<()> {
    let model = cfg.model()?;
    let [c, h, w] = model.backbone.input_shape();
    // the protocols are data-oblivious, so a blank image measures the demand
    let blank = Image::new(w, h, c, vec![0; w * h * c])?;
    let counts = dealer_requirements(&blank, &model, cfg)?;
    let paths = dealer_serve(cfg.dealer_seed, cfg.codec, counts, &g.out)?;
    write_json(&g.out.join("dealer_counts.json"), &counts)?;
    println!("{:?}", counts);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn oracle(g: &Global, cfg: &PipelineConfig, image: &Path) -> Result<()> {
    let model = cfg.model()?;
    let img = load_input(image, &model)?;
    let out = oracle_infer(&img, &model, cfg)?;
    write_detections(&g.out.join("oracle.jsonl"), &out.detections)?;
    model.save(&g.out.join("weights.bin"))?;
    println!("{} detections", out.detections.len());
    Ok(())
}

fn infer(g: &Global, cfg: &PipelineConfig, image: &Path) -> Result<()> {
    let model = cfg.model()?;
    let img = load_input(image, &model)?;
    let report = secure_infer(&img, &model, cfg)?;
    let oracle = oracle_infer(&img, &model, cfg)?;
    write_detections(&g.out.join("detections.jsonl"), &report.inference.detections)?;
    fs::write(g.out.join("transcript.json"), report.transcript.to_json())?;
    write_csv(
        &g.out.join("stage_errors.csv"),
        &stage_errors(&report.inference, &oracle),
    )?;
    write_csv(
        &g.out.join("metrics.csv"),
        &stage_rows(&report.transcript, &report.timings),
    )?;
    write_csv(&g.out.join("share_histograms.csv"), &share_histograms(&report.shares))?;
    write_csv(
        &g.out.join("privacy.csv"),
        &privacy_checks(&report.shares, &oracle, cfg.share_seed),
    )?;
    let agree = compare(&report.inference, &oracle);
    write_json(&g.out.join("agreement.json"), &agree)?;
    println!(
        "{} detections, {} rounds, {} bytes; class agreement {:.4}, max relative deviation {:.2e}",
        report.inference.detections.len(),
        report.transcript.total_rounds(),
        report.transcript.total_bytes(),
        agree.class_rate(),
        agree.max_rel_dev
    );
    Ok(())
}

fn parse_list<T>(text: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn bench(g: &Global, cfg: &PipelineConfig, protocols: &str, sizes: &str, stages: bool) -> Result<()> {
    let sizes = parse_list(sizes, |s| s.parse::<usize>().with_context(|| format!("bad size `{s}`")))?;
    let seed = g.seed.unwrap_or(0);
    let mut rows: Vec<BenchRow> = Vec::new();
    match cfg.engine {
        Engine::Grr3 => {
            for &n in &sizes {
                rows.push(bench_grr_mul(n, seed)?.0);
                rows.push(bench_beaver_mul(n, &cfg.session(), seed)?.0);
            }
        }
        Engine::Beaver => {
            let kinds = if protocols.trim() == "all" {
                ProtocolKind::ALL.to_vec()
            } else {
                parse_list(protocols, |s| Ok(ProtocolKind::parse(s)?))?
            };
            for kind in kinds {
                for &n in &sizes {
                    log::info!("{} at {n}", kind.scope());
                    rows.push(bench_protocol(kind, n, &cfg.session(), seed)?);
                }
            }
        }
    }
    if stages {
        let model = cfg.model()?;
        let [c, h, w] = model.backbone.input_shape();
        let img = Image::new(w, h, c, (0..w * h * c).map(|i| (i * 37 % 256) as u8).collect())?;
        let report = secure_infer(&img, &model, cfg)?;
        rows.extend(stage_rows(&report.transcript, &report.timings));
    }
    let path = g.out.join("bench.csv");
    write_csv(&path, &rows)?;
    for r in &rows {
        println!(
            "{:<14} {:>8} {:>10.1} ms {:>6} rounds {:>12} bytes",
            r.protocol, r.n, r.wall_ms, r.rounds, r.bytes
        );
    }
    Ok(())
}

fn compare_files(g: &Global, left: &Path, right: &Path) -> Result<()> {
    let a = read_detections(left)?;
    let b = read_detections(right)?;
    let agree = compare_detections(&a, &b);
    write_json(&g.out.join("compare.json"), &agree)?;
    println!("{}", serde_json::to_string_pretty(&agree)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    match &cli.command {
        Command::Share { image } => share(g, image),
        Command::Dealer => dealer(g, &load_config(g)?),
        Command::Oracle { image } => oracle(g, &load_config(g)?, image),
        Command::Infer { image } => infer(g, &load_config(g)?, image),
        Command::Bench {
            protocols,
            sizes,
            stages,
        } => bench(g, &load_config(g)?, protocols, sizes, *stages),
        Command::Compare { left, right } => compare_files(g, left, right),
    }
}
