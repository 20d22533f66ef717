//! Training loop.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;

use super::checkpoint::{self, Checkpoint};
use super::corpus::{Batch, TokenStream};
use super::network::{Ffn, Model};
use super::{component_rng, STREAM_DATA};
use crate::autodiff::{AdamW, CosineSchedule, Graph};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    /// Zero-based index of the step just taken.
    pub step: usize,
    /// Training objective: cross-entropy plus balance loss.
    pub loss: f64,
    pub nll: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub max_manifold_violation: f64,
    /// Routed-expert token counts, MiCE layers in order.
    pub expert_load: Vec<Vec<usize>>,
}

impl StepMetrics {
    pub fn csv_header(model: &Model) -> String {
        let mut h = String::from("step,loss,lr,grad_norm,max_manifold_violation");
        let loads: usize = model.mice_layers().map(|m| m.cfg.routed).sum();
        for i in 0..loads {
            write!(h, ",expert_load_{i}").unwrap();
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{:e}",
            self.step, self.loss, self.lr, self.grad_norm, self.max_manifold_violation
        );
        for c in self.expert_load.iter().flatten() {
            write!(r, ",{c}").unwrap();
        }
        r
    }

    /// Largest over mean routed load, per MiCE layer.
    pub fn load_imbalance(&self) -> Vec<f64> {
        self.expert_load
            .iter()
            .map(|c| {
                let mean = c.iter().sum::<usize>() as f64 / c.len() as f64;
                let max = c.iter().copied().max().unwrap_or(0) as f64;
                if mean > 0.0 {
                    max / mean
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Owns the model, optimizer, schedule and data generator of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub opt: AdamW,
    pub schedule: CosineSchedule,
    pub rng: ChaCha8Rng,
    /// Steps completed.
    pub step: usize,
    pub data: TokenStream,
    /// Where a batch that produced a non-finite loss is written.
    pub dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: Model, data: TokenStream) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("corpus"));
        }
        if let Some(&t) = data.tokens.iter().find(|&&t| t as usize >= model.cfg.vocab) {
            return Err(Error::Config(format!(
                "corpus token {t} does not fit vocab {}",
                model.cfg.vocab
            )));
        }
        let t = model.cfg.train;
        let schedule = CosineSchedule::new(t.lr, t.steps.max(1), t.warmup_frac, t.final_lr_ratio);
        let rng = component_rng(model.cfg.seed, STREAM_DATA);
        Ok(Self {
            opt: AdamW::new(t.adamw()),
            schedule,
            rng,
            step: 0,
            data,
            dump_dir: None,
            model,
        })
    }

    /// Continues a run from a checkpoint.
    pub fn resume(ck: &Checkpoint, data: TokenStream) -> Result<Self> {
        let model = ck.model()?;
        let opt = ck.optimizer(&model)?;
        let mut tr = Self::new(model, data)?;
        tr.opt = opt;
        tr.rng = ck.rng()?;
        tr.step = ck.step;
        Ok(tr)
    }

    fn dump(&self, batch: &Batch) -> Option<PathBuf> {
        let dir = self.dump_dir.as_ref()?;
        let path = dir.join(format!("nan-step-{}.json", self.step));
        let body = serde_json::json!({
            "step": self.step,
            "inputs": batch.inputs,
            "targets": batch.targets,
        });
        write_atomic(&path, body.to_string().as_bytes()).ok()?;
        Some(path)
    }

    /// One optimizer step on a freshly sampled batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let t = self.model.cfg.train;
        let batch = self.data.sample(t.batch_size, self.model.cfg.seq_len, &mut self.rng);
        self.step_on(&batch)
    }

    /// One optimizer step on `batch`.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let lr = self.schedule.lr(self.step);
        self.opt.set_lr(lr);
        let g = Graph::new();
        let forward = self.model.loss(&g, batch, None);
        let (total, nll, out) = match forward {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    dump: self.dump(batch),
                })
            }
            Err(e) => return Err(e),
        };
        let loss = total.item();
        let nll = nll.item();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                dump: self.dump(batch),
            });
        }
        let max_violation = out.max_violation;
        let routing = out.routing;
        let grads = g.backward(total)?;
        grads.accumulate_into(&mut self.model.store)?;
        let grad_norm = match self.model.cfg.train.grad_clip.filter(|c| *c > 0.0) {
            Some(c) => self.model.store.clip_grad_norm(c),
            None => self.model.store.grad_norm(),
        };
        self.opt.step(&mut self.model.store)?;

        let mut loads = Vec::with_capacity(routing.len());
        let mut r = routing.iter();
        for b in &self.model.blocks {
            if let Ffn::Mice(m) = &b.ffn {
                let counts = r.next().expect("one routing per MiCE layer").counts(m.cfg.routed);
                m.update_bias(&mut self.model.store, &counts);
                loads.push(counts);
            }
        }
        let metrics = StepMetrics {
            step: self.step,
            loss,
            nll,
            lr,
            grad_norm,
            max_manifold_violation: max_violation,
            expert_load: loads,
        };
        self.step += 1;
        Ok(metrics)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.model, &self.opt, self.step, &self.rng)
    }
}
