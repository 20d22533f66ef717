//! Corpus loading and batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::tokenizer::{encode_document, PAD};
use crate::error::{Error, Result};

/// Concatenated token stream of every document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<u32>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files making up a corpus: the file itself, or every file under a
/// directory in lexicographic path order.
pub fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("corpus not found: {}", path.display()),
        )));
    }
    let mut files = Vec::new();
    if path.is_dir() {
        collect_files(path, &mut files)?;
    } else {
        files.push(path.to_path_buf());
    }
    Ok(files)
}

impl TokenStream {
    pub fn from_documents<S: AsRef<str>>(docs: &[S]) -> Self {
        let tokens = docs
            .iter()
            .flat_map(|d| encode_document(d.as_ref()))
            .collect();
        Self { tokens }
    }

    /// Reads one file, or every file under a directory, as UTF-8 documents.
    pub fn load(path: &Path) -> Result<Self> {
        let mut docs = Vec::new();
        for f in corpus_files(path)? {
            let bytes = fs::read(&f)?;
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::InvalidArgument(format!("{} is not UTF-8: {e}", f.display()))
            })?;
            docs.push(text);
        }
        if docs.iter().all(|d| d.is_empty()) {
            return Err(Error::EmptyInput("corpus"));
        }
        Ok(Self::from_documents(&docs))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `batch` windows of `seq_len + 1` tokens at random offsets. Streams
    /// shorter than a window are padded, and padded targets are ignored.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, seq_len: usize, rng: &mut R) -> Batch {
        let window = seq_len + 1;
        let mut inputs = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        for _ in 0..batch {
            let start = if self.tokens.len() > window {
                rng.random_range(0..=self.tokens.len() - window)
            } else {
                0
            };
            let mut w: Vec<u32> = self.tokens[start..(start + window).min(self.tokens.len())].to_vec();
            w.resize(window, PAD);
            inputs.push(w[..seq_len].to_vec());
            targets.push(
                w[1..]
                    .iter()
                    .map(|&t| (t != PAD).then_some(t as usize))
                    .collect(),
            );
        }
        Batch { inputs, targets }
    }
}

/// Equal-length input sequences and their shifted targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<Option<usize>>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn flat_targets(&self) -> Vec<Option<usize>> {
        self.targets.iter().flatten().copied().collect()
    }
}
