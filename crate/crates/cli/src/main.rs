use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bitrec::baselines::Baseline;
use bitrec::bitcore::{quantize, ImageTensor, RecoveryRange};
use bitrec::io::{generate_synthetic_with_channels, load_image, save_image, DatasetManifest, ManifestEntry, Split};
use bitrec::net::gradcheck::standard_suite;
use bitrec::pipeline::{evaluate, recover, train_all, BundleModels, DataSource, ModelBundle, TrainJob};

/// Bit-depth recovery by sequential bitplane prediction.
#[derive(Parser)]
#[command(name = "bitrec", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zero the low bits of every code, keeping the top `--bits`.
    Quantize {
        #[arg(long)]
        bits: u32,
        input: PathBuf,
        output: PathBuf,
    },
    /// Expand a quantized image with a closed-form baseline.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        /// Effective bits of the input.
        #[arg(long)]
        from: u32,
        /// Output depth when the input is stored at its effective depth.
        #[arg(long)]
        to: Option<u32>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train a bundle from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore the missing planes of a quantized image with a bundle.
    Recover {
        #[arg(long)]
        bundle: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score a bundle and the baselines on a dataset manifest.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        report: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Images to score (default: the test split if tagged, else all).
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Comma-separated baselines to include.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "zp,mig,br")]
        baselines: Vec<Method>,
    },
    /// Finite-difference check of every layer and of a small network.
    Gradcheck,
    /// Write a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, value_enum, default_value = "png")]
        format: ImageFormat,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a bundle that reads the missing planes from ground truth.
    /// Only `eval` can use it.
    OracleBundle {
        #[arg(long)]
        from: u32,
        #[arg(long)]
        to: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Zp,
    Mig,
    Br,
}

impl From<Method> for Baseline {
    fn from(m: Method) -> Self {
        match m {
            Method::Zp => Baseline::ZeroPad,
            Method::Mig => Baseline::IdealGain,
            Method::Br => Baseline::BitReplicate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Png,
    Pnm,
}

/// Refuses to overwrite an input file.
fn distinct_output(input: &Path, output: &Path) -> Result<()> {
    if let (Ok(a), Ok(b)) = (fs::canonicalize(input), fs::canonicalize(output)) {
        if a == b {
            return Err(bitrec::Error::InvalidArgument(format!(
                "output {} would overwrite the input",
                output.display()
            ))
            .into());
        }
    }
    Ok(())
}

/// Loads `path` as a `q`-bit image in an `n`-bit container. A file stored at
/// `q` bits is shifted up; one stored at `n` bits must already be quantized.
fn load_quantized(path: &Path, q: u32, n: Option<u32>) -> Result<ImageTensor> {
    let img = load_image(path).with_context(|| format!("reading {}", path.display()))?;
    let n = n.unwrap_or(img.container_bits());
    let stored = img.container_bits();
    let out = if stored == n {
        img.into_quantized(q)
    } else if stored == q && q < n {
        let shape = img.shape();
        let codes = img.into_codes().into_iter().map(|c| c << (n - q)).collect();
        ImageTensor::quantized(shape, codes, n, q)
    } else {
        Err(bitrec::Error::InvalidArgument(format!(
            "{} holds {stored}-bit codes, expected {q} or {n}",
            path.display()
        )))
    };
    out.with_context(|| format!("reading {} as a {q}-bit image", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn log_file_name(bundle: &ModelBundle, index: usize) -> String {
    match bundle.models() {
        BundleModels::SingleShot(_) => "train_log_residual.csv".to_string(),
        _ => format!("train_log_plane{}.csv", bundle.range().plane_indices()[index]),
    }
}

fn train(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let job = TrainJob::parse(&text, base).with_context(|| format!("parsing {}", config.display()))?;
    let range = RecoveryRange::new(job.source_bits, job.target_bits)?;
    let corpus: Vec<ImageTensor> = match &job.data {
        DataSource::Manifest(path) => {
            let manifest = DatasetManifest::load(path).with_context(|| format!("loading {}", path.display()))?;
            let tagged = manifest.images.iter().any(|e| e.split == Some(Split::Train));
            manifest
                .load_images(tagged.then_some(Split::Train))?
                .into_iter()
                .map(|e| e.image)
                .collect()
        }
        DataSource::Synthetic { count, size, seed, channels } => {
            generate_synthetic_with_channels(*count, *size, job.target_bits, *seed, *channels)?
        }
    };
    log::info!("training {}-to-{}-bit bundle on {} images", job.source_bits, job.target_bits, corpus.len());
    let (bundle, logs) = train_all(&corpus, range, &job.config)?;
    bundle.save(out).with_context(|| format!("writing bundle to {}", out.display()))?;
    for (i, log) in logs.iter().enumerate() {
        fs::write(out.join(log_file_name(&bundle, i)), log.to_csv())?;
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn eval(
    bundle: &Path,
    manifest: &Path,
    format: ReportFormat,
    out: Option<&Path>,
    split: Option<SplitArg>,
    baselines: &[Method],
) -> Result<()> {
    let bundle = ModelBundle::load(bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
    let manifest = DatasetManifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let split = match split {
        Some(SplitArg::Train) => Some(Split::Train),
        Some(SplitArg::Val) => Some(Split::Val),
        Some(SplitArg::Test) => Some(Split::Test),
        Some(SplitArg::All) => None,
        None => manifest.images.iter().any(|e| e.split == Some(Split::Test)).then_some(Split::Test),
    };
    let corpus = manifest.load_images(split)?;
    let baselines: Vec<Baseline> = baselines.iter().map(|&m| m.into()).collect();
    let report = evaluate(&corpus, &bundle, &baselines)?;
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    write_output(out, &text)
}

fn synth(
    count: usize,
    size: usize,
    bits: u32,
    seed: u64,
    channels: usize,
    format: ImageFormat,
    out_dir: &Path,
) -> Result<()> {
    let images = generate_synthetic_with_channels(count, size, bits, seed, channels)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ext = match (format, channels) {
        (ImageFormat::Png, _) => "png",
        (ImageFormat::Pnm, 1) => "pgm",
        (ImageFormat::Pnm, _) => "ppm",
    };
    let mut entries = Vec::with_capacity(count);
    for (i, img) in images.iter().enumerate() {
        let name = format!("synth_{i:04}.{ext}");
        save_image(img, &out_dir.join(&name))?;
        entries.push(ManifestEntry { path: name.into(), split: None });
    }
    DatasetManifest::new(bits, entries, out_dir).save(&out_dir.join("manifest.json"))?;
    log::info!("wrote {count} images to {}", out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(bitrec::Error::InvalidArgument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Quantize { bits, input, output } => {
            distinct_output(&input, &output)?;
            let img = load_image(&input).with_context(|| format!("reading {}", input.display()))?;
            save_image(&quantize(&img, bits)?, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Baseline { method, from, to, input, output } => {
            distinct_output(&input, &output)?;
            let iq = load_quantized(&input, from, to)?;
            let out = Baseline::from(method).apply(&iq)?;
            save_image(&out, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Train { config, out } => train(&config, &out)?,
        Command::Recover { bundle, input, output } => {
            distinct_output(&input, &output)?;
            let bundle = ModelBundle::load(&bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
            let range = bundle.range();
            let iq = load_quantized(&input, range.source_bits(), Some(range.target_bits()))?;
            let out = recover(&iq, &bundle)?;
            save_image(&out, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Eval { bundle, manifest, report, out, split, baselines } => {
            eval(&bundle, &manifest, report, out.as_deref(), split, &baselines)?
        }
        Command::Gradcheck => {
            let reports = standard_suite()?;
            for r in &reports {
                println!("{r}");
            }
            if !reports.iter().all(|r| r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Synth { count, size, bits, seed, channels, format, out_dir } => {
            synth(count, size, bits, seed, channels, format, &out_dir)?
        }
        Command::OracleBundle { from, to, out } => {
            ModelBundle::oracle(RecoveryRange::new(from, to)?)
                .save(&out)
                .with_context(|| format!("writing bundle to {}", out.display()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 2 usage, 3 data or format, 4 contract violation.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<bitrec::Error>() {
            return match e {
                bitrec::Error::InvalidArgument(_) => 2,
                bitrec::Error::ContractViolation(_) => 4,
                bitrec::Error::Format { .. } | bitrec::Error::UnsupportedImage(_) | bitrec::Error::Io(_) => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

