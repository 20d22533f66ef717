//! The `train` subcommand and its run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};

use helm_core::io::write_atomic;
use helm_core::model::{checkpoint, corpus, Model, ModelConfig, StepMetrics, TokenStream, Trainer};
use helm_core::Error;

use crate::ConfigSource;

/// Metrics are rewritten atomically this often, and at every checkpoint.
const FLUSH_EVERY: usize = 50;

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Text file or directory of text files.
    #[arg(long)]
    corpus: PathBuf,
    /// Overrides `train.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `train.checkpoint_every`.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    /// Run directory name; defaults to the config file stem.
    #[arg(long)]
    name: Option<String>,
    /// Continue from a checkpoint in the run directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Serialize)]
struct CorpusInfo {
    path: String,
    files: usize,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ModelConfig,
    seed: u64,
    corpus: CorpusInfo,
    created: String,
    tool_version: &'static str,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style blob digest: `sha256("blob <len>\0" ++ content)`.
fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

/// A single file hashes as a blob; a directory hashes the list of
/// `<blob> <relative path>` lines in ingestion order.
fn corpus_info(path: &Path) -> Result<CorpusInfo> {
    let files = corpus::corpus_files(path)?;
    let mut bytes = 0;
    let mut listing = String::new();
    let mut single = None;
    for f in &files {
        let content = fs::read(f)?;
        bytes += content.len() as u64;
        let rel = f.strip_prefix(path).unwrap_or(f);
        let digest = blob_hash(&content);
        listing.push_str(&format!("{digest} {}\n", rel.display()));
        single = Some(digest);
    }
    let sha256 = if path.is_dir() {
        blob_hash(listing.as_bytes())
    } else {
        single.unwrap_or_default()
    };
    Ok(CorpusInfo {
        path: path.display().to_string(),
        files: files.len(),
        bytes,
        sha256,
    })
}

fn run_name(args: &TrainArgs) -> String {
    if let Some(n) = &args.name {
        return n.clone();
    }
    if let Some(p) = &args.source.config {
        if let Some(stem) = p.file_stem() {
            return stem.to_string_lossy().into_owned();
        }
    }
    "run".into()
}

/// Existing metrics rows for steps before `step`.
fn kept_rows(path: &Path, header: &str, step: usize) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Config(format!("{} has a different header", path.display())).into());
    }
    Ok(lines
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s < step)
        })
        .map(String::from)
        .collect())
}

fn write_metrics(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let data = TokenStream::load(&args.corpus)
        .with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let dir = args.runs.join(run_name(args));
    fs::create_dir_all(&dir)?;

    let mut trainer = match &args.resume {
        Some(ck) => {
            let ck = checkpoint::load(ck).with_context(|| format!("loading {}", ck.display()))?;
            Trainer::resume(&ck, data)?
        }
        None => {
            let mut cfg = args.source.load()?;
            if let Some(s) = args.steps {
                cfg.train.steps = s;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(c) = args.checkpoint_every {
                cfg.train.checkpoint_every = c;
            }
            cfg.validate()?;
            let manifest_path = dir.join("manifest.json");
            let manifest = Manifest {
                config: &cfg,
                seed: cfg.seed,
                corpus: corpus_info(&args.corpus)?,
                created: chrono::Utc::now().to_rfc3339(),
                tool_version: env!("CARGO_PKG_VERSION"),
            };
            write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
            Trainer::new(Model::new(cfg)?, data)?
        }
    };
    trainer.dump_dir = Some(dir.clone());

    let total = trainer.model.cfg.train.steps;
    let every = trainer.model.cfg.train.checkpoint_every;
    let header = StepMetrics::csv_header(&trainer.model);
    let metrics_path = dir.join("metrics.csv");
    let mut rows = kept_rows(&metrics_path, &header, trainer.step)?;
    let save = |t: &Trainer| -> Result<()> {
        let p = dir.join(format!("ckpt-{}.bin", t.step));
        Ok(write_atomic(&p, &t.checkpoint_bytes())?)
    };

    while trainer.step < total {
        let m = match trainer.train_step() {
            Ok(m) => m,
            Err(e) => {
                write_metrics(&metrics_path, &header, &rows)?;
                return Err(e.into());
            }
        };
        rows.push(m.csv_row());
        let done = trainer.step;
        let at_ckpt = every > 0 && done % every == 0;
        if at_ckpt || done % FLUSH_EVERY == 0 || done == total {
            write_metrics(&metrics_path, &header, &rows)?;
        }
        if at_ckpt && done != total {
            save(&trainer)?;
        }
        if done % 100 == 0 || done == total {
            eprintln!(
                "step {done}/{total} loss {:.4} lr {:.3e} violation {:.2e}",
                m.loss, m.lr, m.max_manifold_violation
            );
        }
    }
    write_metrics(&metrics_path, &header, &rows)?;
    save(&trainer)?;
    println!("{}", dir.display());
    Ok(())
}
