use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gridworld::{generate_dataset, DatasetConfig, Split, BALANCED_MIX, TRAIN_MIX};
use crate::model::{generate, Model};

fn data(n: usize, seed: u64, vt: VtType) -> (Vocabulary, Vec<Example>) {
    let vocab = Vocabulary::standard();
    let recs = generate_dataset(
        &DatasetConfig {
            split: Split::Id,
            count: n,
            seed,
            mix: TRAIN_MIX,
        },
        &vocab,
    )
    .unwrap();
    let ex = encode_examples(&recs, vt, &vocab).unwrap();
    (vocab, ex)
}

fn tiny(vt: VtType, steps: u64) -> TrainConfig {
    TrainConfig {
        vt_type: vt,
        layers: 1,
        heads: 2,
        dim: 16,
        steps,
        batch: 2,
        lr_warmup: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn none_with_vdrop_is_rejected() {
    let cfg = TrainConfig {
        vt_type: VtType::None,
        vdrop: Some(VDropConfig::default()),
        ..TrainConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (vocab, ex) = data(4, 1, VtType::Panoramic);
    let cfg = tiny(VtType::Panoramic, 1);
    let mut model = Model::init(cfg.model_config(vocab.len())).unwrap();
    let before = model.params.clone();
    let mut adam = Adam::new(&model.params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<_> = ex.iter().collect();
    let vd = VDropConfig {
        s_w: 0,
        s_a: 0,
        ..VDropConfig::default()
    };
    let rep = train_step(&mut model, &mut adam, &batch, 0, 0.0, Some(&vd), &mut rng).unwrap();
    assert_eq!(rep.masked, 4);
    let bits = |p: &crate::numerics::ParamStore| {
        p.tensors()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&model.params), bits(&before));
}

#[test]
fn loss_ignores_input_span_predictions() {
    let (vocab, ex) = data(1, 2, VtType::Topdown);
    let model = Model::init(tiny(VtType::Topdown, 1).model_config(vocab.len())).unwrap();
    let e = &ex[0];
    let mut tape = Tape::new();
    let pv = model.leaf_params(&mut tape, true).unwrap();
    let mask = base_causal_mask(&e.layout, e.layout.len);
    let (logits, _) = model
        .forward_tape(&mut tape, &pv, &e.tokens, &e.layout, &mask, false)
        .unwrap();
    let (rows, targets) = supervised_targets(&e.tokens, &e.layout);
    let sel = tape.select_rows(logits, &rows).unwrap();
    let loss = tape.cross_entropy(sel, &targets).unwrap();
    let g = tape.backward(loss).unwrap().dense(logits);
    let v = model.cfg.vocab;
    for r in 0..e.layout.len {
        let nonzero = g[r * v..(r + 1) * v].iter().any(|&x| x != 0.0);
        assert_eq!(nonzero, rows.contains(&r), "row {r}");
    }
    // input spans never supervised
    for r in e
        .layout
        .v1
        .clone()
        .chain(e.layout.v2.clone())
        .chain(e.layout.q.clone())
    {
        assert!(!rows.contains(&r));
    }
}

#[test]
fn warmup_steps_mask_nothing() {
    let (vocab, ex) = data(8, 3, VtType::Panoramic);
    let cfg = TrainConfig {
        vdrop: Some(VDropConfig {
            s_w: 10,
            s_a: 5,
            ..VDropConfig::default()
        }),
        ..tiny(VtType::Panoramic, 20)
    };
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path()).unwrap();
    let out = train(&cfg, &ex, &vocab, None, Some(&run)).unwrap();
    let audit = crate::vdrop::read_audit(&run.path("audit.jsonl")).unwrap();
    assert_eq!(audit.len(), 40);
    assert!(audit
        .iter()
        .filter(|r| r.step < 10)
        .all(|r| !r.masked && r.p_mask == 0.0));
    assert!(audit.iter().filter(|r| r.step >= 15).all(|r| r.masked));
    assert!(out.history[..10].iter().all(|h| h.masked == 0));
    assert!(run.path("final.vtck").exists());
    assert!(run.path("loss.csv").exists());
}

#[test]
fn runs_are_deterministic() {
    let (vocab, ex) = data(6, 4, VtType::PointMatching);
    let cfg = TrainConfig {
        vdrop: Some(VDropConfig {
            s_w: 2,
            s_a: 3,
            ..VDropConfig::default()
        }),
        ..tiny(VtType::PointMatching, 8)
    };
    let a = train(&cfg, &ex, &vocab, None, None).unwrap();
    let b = train(&cfg, &ex, &vocab, None, None).unwrap();
    assert_eq!(a.checkpoint_sha256, b.checkpoint_sha256);
    let c = train(&TrainConfig { seed: 1, ..cfg }, &ex, &vocab, None, None).unwrap();
    assert_ne!(a.checkpoint_sha256, c.checkpoint_sha256);
}

#[test]
fn single_example_is_memorized() {
    let (vocab, ex) = data(1, 5, VtType::Panoramic);
    let cfg = TrainConfig {
        layers: 1,
        heads: 2,
        dim: 32,
        steps: 500,
        batch: 1,
        lr: 3e-3,
        lr_warmup: 20,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &ex, &vocab, None, None).unwrap();
    let last = out.history.last().unwrap().loss;
    assert!(last < 0.01, "final loss {last}");
    let e = &ex[0];
    let g = generate(
        &out.model,
        &vocab,
        &e.tokens[..e.layout.prompt_len()],
        &e.layout,
    )
    .unwrap();
    assert_eq!(g.vt, e.tokens[e.layout.vt.clone()].to_vec());
    let rep = evaluate(&out.model, &vocab, &ex, Condition::Standard, 0).unwrap();
    assert_eq!(rep.accuracy(), 1.0);
    assert_eq!(rep.vt_match_rate(), Some(1.0));
}

#[test]
fn untrained_model_is_at_chance_and_order_free() {
    let vocab = Vocabulary::standard();
    let recs = generate_dataset(
        &DatasetConfig {
            split: Split::Id,
            count: 400,
            seed: 6,
            mix: BALANCED_MIX,
        },
        &vocab,
    )
    .unwrap();
    let ex = encode_examples(&recs, VtType::None, &vocab).unwrap();
    let model = Model::init(tiny(VtType::None, 1).model_config(vocab.len())).unwrap();
    let a = evaluate(&model, &vocab, &ex, Condition::MaskedInput, 9).unwrap();
    assert!((a.accuracy() - 0.25).abs() <= 0.05, "{}", a.accuracy());
    let mut rev = ex.clone();
    rev.reverse();
    let b = evaluate(&model, &vocab, &rev, Condition::MaskedInput, 9).unwrap();
    assert_eq!(a.correct, b.correct);
    assert_eq!(a.total, b.total);
}

#[test]
fn non_finite_loss_reports_step_and_samples() {
    let (vocab, ex) = data(2, 7, VtType::None);
    let cfg = tiny(VtType::None, 1);
    let mut model = Model::init(cfg.model_config(vocab.len())).unwrap();
    let i = model.params.index_of("head.b").unwrap();
    model.params.tensor_mut(i).data_mut()[0] = f64::INFINITY;
    let mut adam = Adam::new(&model.params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<_> = ex.iter().collect();
    match train_step(&mut model, &mut adam, &batch, 42, 1e-3, None, &mut rng) {
        Err(Error::Diverged { step, samples }) => {
            assert_eq!(step, 42);
            assert_eq!(samples, vec![0, 1]);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.loss)),
    }
}
