mod common;

use helm_core::model::{checkpoint, Model, ModelConfig, TokenStream, Trainer, Variant};
use helm_core::Error;

fn config(variant: Variant, steps: usize) -> ModelConfig {
    let mut cfg = ModelConfig::micro(variant);
    cfg.seq_len = 24;
    cfg.train.steps = steps;
    cfg.seed = 5;
    cfg
}

#[test]
fn overfits_two_sentences() {
    let data = TokenStream::from_documents(&["the cat sat on the mat.", "a dog ran to the red door."]);
    let mut cfg = config(Variant::HelmD, 500);
    cfg.train.warmup_frac = 0.02;
    let mut t = Trainer::new(Model::new(cfg).unwrap(), data).unwrap();
    let mut best = f64::INFINITY;
    for _ in 0..500 {
        best = best.min(t.train_step().unwrap().nll);
    }
    assert!(best < 0.1, "best loss {best}");
}

#[test]
fn resume_from_disk_is_bit_exact() {
    let text = common::synthetic_corpus(20_000, 1);
    for variant in [Variant::HelmD, Variant::HelmMice] {
        let data = TokenStream::from_documents(&[text.as_str()]);
        let mut a = Trainer::new(Model::new(config(variant, 40)).unwrap(), data.clone()).unwrap();
        for _ in 0..20 {
            a.train_step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        checkpoint::save(&path, &a.model, &a.opt, a.step, &a.rng).unwrap();
        let rest_a: Vec<String> = (0..20).map(|_| a.train_step().unwrap().csv_row()).collect();

        let ck = checkpoint::load(&path).unwrap();
        assert_eq!(ck.step, 20);
        let mut b = Trainer::resume(&ck, data).unwrap();
        let rest_b: Vec<String> = (0..20).map(|_| b.train_step().unwrap().csv_row()).collect();
        assert_eq!(rest_a, rest_b, "{variant:?}");
        assert_eq!(a.checkpoint_bytes(), b.checkpoint_bytes());
    }
}

#[test]
fn non_finite_loss_stops_with_a_dump() {
    let data = TokenStream::from_documents(&["abcabcabcabcabcabcabcabc"]);
    let mut t = Trainer::new(Model::new(config(Variant::HelmD, 10)).unwrap(), data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.dump_dir = Some(dir.path().to_path_buf());
    t.train_step().unwrap();
    let head = t.model.head;
    t.model.store.get_mut(head).data_mut()[0] = f64::NAN;
    match t.train_step() {
        Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|m| m.loss)),
    }
    let dumps: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(dumps.len(), 1);
}

#[test]
fn rejects_tokens_outside_the_vocabulary() {
    let mut cfg = config(Variant::HelmD, 10);
    cfg.vocab = 4;
    let data = TokenStream::from_documents(&["hello"]);
    assert!(Trainer::new(Model::new(cfg).unwrap(), data).is_err());
}

#[test]
fn balance_bias_spreads_expert_load() {
    let text = common::synthetic_corpus(50_000, 2);
    let data = TokenStream::from_documents(&[text.as_str()]);
    let mut cfg = config(Variant::HelmMice, 200);
    if let Some(m) = &mut cfg.mice {
        m.bias_step = 0.01;
    }
    let mut t = Trainer::new(Model::new(cfg).unwrap(), data).unwrap();
    let mut late = Vec::new();
    for s in 0..200 {
        let m = t.train_step().unwrap();
        if s >= 150 {
            late.extend(m.load_imbalance());
        }
    }
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    assert!(mean <= 2.0, "mean max/mean load {mean}");
}
