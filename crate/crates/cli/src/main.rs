mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use helm_core::attention::kv_cache_report;
use helm_core::io::write_atomic;
use helm_core::model::{checkpoint, generate, probe, tokenizer, ModelConfig, Variant};
use helm_core::ricci::{parse_embeddings, CurvatureReport};
use helm_core::{diagnostics, verify, Error};

#[derive(Parser)]
#[command(name = "helm", version, about = "Hyperbolic transformer toolkit on the Lorentz model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    MicroD,
    MicroMice,
    SmallD,
    SmallMice,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::MicroD => ModelConfig::micro(Variant::HelmD),
            Preset::MicroMice => ModelConfig::micro(Variant::HelmMice),
            Preset::SmallD => ModelConfig::small(Variant::HelmD),
            Preset::SmallMice => ModelConfig::small(Variant::HelmMice),
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// JSON model configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl ConfigSource {
    fn load(&self) -> Result<ModelConfig> {
        match (&self.config, self.preset) {
            (Some(p), _) => ModelConfig::load(p).with_context(|| format!("loading {}", p.display())),
            (None, Some(p)) => Ok(p.config()),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints and a manifest.
    Train(run::TrainArgs),
    /// Greedy decoding from a checkpoint.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        /// Number of tokens to generate.
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Recompute the full context at every step.
        #[arg(long)]
        no_cache: bool,
        /// Print token ids instead of text.
        #[arg(long)]
        ids: bool,
    },
    /// Numerical checks of the positional and normalisation guarantees.
    Verify {
        /// Single proposition (1 to 5).
        #[arg(long, conflicts_with = "all")]
        prop: Option<u8>,
        /// Run every check (the default).
        #[arg(long)]
        all: bool,
        /// Target distance for proposition 3.
        #[arg(long, requires = "prop")]
        r: Option<usize>,
    },
    /// Key/value cache sizes per layer, full attention against latent attention.
    BenchCache {
        #[command(flatten)]
        source: ConfigSource,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ollivier-Ricci curvature of a k-nearest-neighbour graph of embeddings.
    Ricci {
        /// Text file (one vector per line) or checkpoint.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Edge CSV; the histogram goes to `<stem>.hist.csv` alongside.
        #[arg(long)]
        out: PathBuf,
        /// Tensor to analyse when the input is a checkpoint.
        #[arg(long, default_value = "embed")]
        tensor: String,
    },
    /// Final-layer norm statistics for groups of words.
    NormProbe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Lines of the form `group: word, word`.
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration and tensor table of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

/// Failure that maps to a specific exit status.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(c)) = err.downcast_ref::<Exit>() {
        return *c;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFiniteLoss { .. } | Error::ManifoldViolation { .. }) => 1,
        _ => 2,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(ckpt: &Path, prompt: &str, n: usize, no_cache: bool, ids: bool) -> Result<()> {
    let model = checkpoint::load(ckpt)
        .with_context(|| format!("loading {}", ckpt.display()))?
        .model()?;
    let toks = generate(&model, &tokenizer::encode(prompt), n, !no_cache)?;
    if ids {
        let s: Vec<String> = toks.iter().map(u32::to_string).collect();
        println!("{}", s.join(" "));
    } else {
        println!("{}{}", prompt, tokenizer::decode(&toks));
    }
    Ok(())
}

fn cmd_verify(prop: Option<u8>, r: Option<usize>) -> Result<()> {
    let checks = match (prop, r) {
        (Some(3), Some(r)) => verify::prop3(&[r], 100)?,
        (Some(_), Some(_)) => bail!(Error::InvalidArgument("--r applies to --prop 3 only".into())),
        (Some(p), None) => verify::run(p)?,
        (None, _) => verify::run_all()?,
    };
    let mut failed = 0;
    for c in &checks {
        println!("{c}");
        failed += usize::from(!c.pass);
    }
    println!("{} checks, {} failed", checks.len(), failed);
    if failed > 0 {
        return Err(Exit(1).into());
    }
    Ok(())
}

fn cmd_bench_cache(source: &ConfigSource, out: Option<&Path>) -> Result<()> {
    let cfg = source.load()?;
    let h = cfg
        .hmla
        .ok_or_else(|| Error::Config("bench-cache needs a configuration with `hmla` sizes".into()))?;
    let report = kv_cache_report(cfg.layers, cfg.heads, cfg.head_dim, h.kv_latent, h.rope_dim);
    emit(out, &report.to_csv())
}

fn load_points(input: &Path, tensor: &str) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    if bytes.starts_with(checkpoint::MAGIC) {
        let ck = checkpoint::decode(&bytes)?;
        let (_, t) = ck
            .parameters()
            .find(|(n, _)| n == tensor)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no tensor {tensor:?}")))?;
        return Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect());
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        line: 0,
        message: "input is neither a checkpoint nor UTF-8 text".into(),
    })?;
    Ok(parse_embeddings(&text)?)
}

fn hist_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.hist.csv"))
}

fn cmd_ricci(input: &Path, k: usize, bins: usize, out: &Path, tensor: &str) -> Result<()> {
    let points = load_points(input, tensor)?;
    let report = CurvatureReport::from_points(&points, k)?;
    for (i, j) in &report.skipped {
        eprintln!("warning: skipped disconnected pair ({i}, {j})");
    }
    let hist = report.histogram(bins)?;
    write_atomic(out, report.edges_csv().as_bytes())?;
    write_atomic(&hist_path(out), hist.to_csv().as_bytes())?;
    println!("nodes={} k={} {}", report.nodes, k, report.summary());
    Ok(())
}

fn cmd_norm_probe(ckpt: &Path, words: &Path, out: Option<&Path>) -> Result<()> {
    let model = checkpoint::load(ckpt)?.model()?;
    let text = std::fs::read_to_string(words).with_context(|| format!("reading {}", words.display()))?;
    let groups = probe::parse_groups(&text)?;
    let stats = probe::norm_probe(&model, &groups)?;
    emit(out, &probe::stats_csv(&stats))
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let ck = checkpoint::load(path)?;
    println!("step: {}", ck.step);
    println!("optimizer steps: {}", ck.adam_steps);
    println!("config: {}", ck.config.to_json());
    let mut params = 0;
    for (name, t) in &ck.tensors {
        if !name.starts_with("adam.") {
            params += t.len();
        }
        println!("{name}\t{}x{}", t.rows(), t.cols());
    }
    println!("parameters: {params}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => run::train(&args),
        Command::Generate {
            ckpt,
            prompt,
            n,
            no_cache,
            ids,
        } => cmd_generate(&ckpt, &prompt, n, no_cache, ids),
        Command::Verify { prop, all: _, r } => cmd_verify(prop, r),
        Command::BenchCache { source, out } => cmd_bench_cache(&source, out.as_deref()),
        Command::Ricci {
            input,
            k,
            bins,
            out,
            tensor,
        } => cmd_ricci(&input, k, bins, &out, &tensor),
        Command::NormProbe { ckpt, words, out } => cmd_norm_probe(&ckpt, &words, out.as_deref()),
        Command::InspectCheckpoint { path } => cmd_inspect(&path),
    }
}

fn main() -> ExitCode {
    diagnostics::init_from_env();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
