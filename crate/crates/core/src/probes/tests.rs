use super::*;
use crate::gridworld::{generate_dataset, DatasetConfig, Split, BALANCED_MIX};
use crate::model::ModelConfig;
use crate::sequence::{Role, ANS};
use crate::training::TrainConfig;

fn records(n: usize, seed: u64) -> Vec<TraceRecord> {
    let vocab = Vocabulary::standard();
    generate_dataset(
        &DatasetConfig {
            split: Split::Id,
            count: n,
            seed,
            mix: BALANCED_MIX,
        },
        &vocab,
    )
    .unwrap()
}

fn set(model: &mut Model, name: &str, row: usize, col: usize, v: f64) {
    let i = model.params.index_of(name).unwrap();
    let t = model.params.tensor_mut(i);
    let cols = t.cols();
    t.data_mut()[row * cols + col] = v;
}

/// One layer, one head. Every role embedding carries -e3+e5 except the
/// thinking span's +e3-e5; ANS queries (dim 0) match keys on dim 3, so the
/// answer row reads the thinking span when it can see it. The head scores
/// A by h3-h5 and B by h5-h3.
fn routing_model(vocab: &Vocabulary) -> Model {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        dim: 8,
        vocab: vocab.len(),
        max_len: 160,
        seed: 0,
    };
    let mut m = Model::init(cfg).unwrap();
    for t in m.params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    for g in ["layer0.ln1.g", "layer0.ln2.g", "lnf.g"] {
        let i = m.params.index_of(g).unwrap();
        m.params.tensor_mut(i).data_mut().fill(1.0);
    }
    set(&mut m, "tok_emb", ANS.idx(), 0, 1.0);
    set(&mut m, "tok_emb", ANS.idx(), 1, -1.0);
    for r in 0..Role::COUNT {
        let s = if r == Role::Thinking as usize {
            1.0
        } else {
            -1.0
        };
        set(&mut m, "seg_emb", r, 3, s);
        set(&mut m, "seg_emb", r, 5, -s);
    }
    set(&mut m, "layer0.wq", 0, 7, 10.0);
    set(&mut m, "layer0.wk", 3, 7, 1.0);
    for d in [3, 5] {
        set(&mut m, "layer0.wv", d, d, 1.0);
        set(&mut m, "layer0.wo", d, d, 1.0);
    }
    let [a, b, ..] = vocab.letters();
    set(&mut m, "head", 3, a.idx(), 1.0);
    set(&mut m, "head", 5, a.idx(), -1.0);
    set(&mut m, "head", 3, b.idx(), -1.0);
    set(&mut m, "head", 5, b.idx(), 1.0);
    m
}

#[test]
fn constructed_routing_model_flips_when_blinded() {
    let vocab = Vocabulary::standard();
    let model = routing_model(&vocab);
    let exs = encode_examples(&records(6, 3), VtType::Panoramic, &vocab).unwrap();
    for ex in &exs {
        let item = generate_then_blind(&model, &vocab, ex).unwrap();
        assert_eq!((item.pair.unblinded, item.pair.blinded), (0, 1));
        let shares = item_shares(&item.attention, &ex.layout).unwrap();
        assert!(shares[0].unwrap() > 0.99, "{shares:?}");
    }
}

#[test]
fn blinding_without_thinking_span_changes_nothing() {
    let vocab = Vocabulary::standard();
    let cfg = TrainConfig {
        vt_type: VtType::None,
        layers: 1,
        dim: 16,
        heads: 2,
        ..TrainConfig::default()
    };
    let model = Model::init(cfg.model_config(vocab.len())).unwrap();
    let exs = encode_examples(&records(40, 4), VtType::None, &vocab).unwrap();
    let probe = probe_model(&model, &vocab, &exs).unwrap();
    assert!(probe.pairs.iter().all(|p| p.unblinded == p.blinded));
    assert_eq!(probe.blind.drop, 0.0);
    // no thinking span, so all visual mass is on the views
    assert!(probe.attention.layers.iter().all(|l| l.mean == 0.0));
}

#[test]
fn pairs_share_the_generated_context() {
    let vocab = Vocabulary::standard();
    let cfg = TrainConfig {
        vt_type: VtType::Topdown,
        layers: 1,
        dim: 16,
        heads: 2,
        ..TrainConfig::default()
    };
    let model = Model::init(cfg.model_config(vocab.len())).unwrap();
    let exs = encode_examples(&records(4, 5), VtType::Topdown, &vocab).unwrap();
    for ex in &exs {
        let a = generate_then_blind(&model, &vocab, ex).unwrap();
        let b = generate_then_blind(&model, &vocab, ex).unwrap();
        assert_eq!(a.pair, b.pair);
        assert_eq!(a.vt.len(), 81);
        let mut ctx = ex.tokens[..ex.layout.prompt_len()].to_vec();
        ctx.extend(&a.vt);
        ctx.push(crate::sequence::SEP);
        assert_eq!(a.pair.context_hash, token_hash(&ctx));
    }
}

#[test]
fn share_of_substituted_masses() {
    let m = SpanMass {
        v1: 0.2,
        v2: 0.2,
        vt: 0.6,
        other: 0.0,
    };
    assert!((m.share().unwrap() - 0.6).abs() < 1e-12);
    let blind = SpanMass {
        vt: 0.0,
        other: 0.4,
        ..m
    };
    assert_eq!(blind.share(), Some(0.0));
    let none = SpanMass {
        v1: 0.0,
        v2: 0.0,
        vt: 0.0,
        other: 1.0,
    };
    assert_eq!(none.share(), None);
}

#[test]
fn blinded_answer_row_has_zero_share() {
    let vocab = Vocabulary::standard();
    let cfg = TrainConfig {
        layers: 2,
        dim: 16,
        heads: 2,
        ..TrainConfig::default()
    };
    let model = Model::init(cfg.model_config(vocab.len())).unwrap();
    let ex = &encode_examples(&records(1, 6), VtType::Panoramic, &vocab).unwrap()[0];
    let l = &ex.layout;
    let mut s = Session::prefill(&model, &vocab, &ex.tokens[..l.prompt_len()], l).unwrap();
    s.decode_vt().unwrap();
    let mask = blind_vt(&base_causal_mask(l, l.len), l);
    let a = s.answer(Some(&mask), true).unwrap();
    let shares = item_shares(&a.attention.unwrap(), l).unwrap();
    assert_eq!(shares, vec![Some(0.0), Some(0.0)]);
}

#[test]
fn mass_check_rejects_unnormalized_rows() {
    let vocab = Vocabulary::standard();
    let ex = &encode_examples(&records(1, 7), VtType::Panoramic, &vocab).unwrap()[0];
    let n = ex.layout.answer_rows().start + 1;
    let bad = vec![vec![vec![0.5 / n as f64; n]]];
    assert!(matches!(
        item_shares(&bad, &ex.layout),
        Err(Error::Probe(_))
    ));
}

#[test]
fn profile_counts_exclusions_and_bands() {
    let items: Vec<Vec<Option<f64>>> = vec![
        vec![Some(0.0), Some(1.0)],
        vec![Some(0.25), None],
        vec![Some(0.5), Some(0.5)],
        vec![Some(0.75), Some(0.0)],
        vec![Some(1.0), None],
    ];
    let p = attention_profile(&items);
    assert_eq!(p.layers[0].n, 5);
    assert_eq!(p.layers[0].excluded, 0);
    assert_eq!(
        (p.layers[0].q1, p.layers[0].median, p.layers[0].q3),
        (0.25, 0.5, 0.75)
    );
    assert_eq!((p.layers[1].n, p.layers[1].excluded), (3, 2));
    assert_eq!(p.layers[1].mean, 0.5);
    assert_eq!(p.mean_share, 0.5);
}

#[test]
fn paired_delta_mean_and_stderr() {
    let (m, se) = paired_delta(&[1.0, 0.0, 1.0, 0.0]);
    assert_eq!(m, 0.5);
    assert!((se - (1.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    assert_eq!(paired_delta(&[]), (0.0, 0.0));
}

#[test]
fn ablation_grid_has_24_distinct_cells() {
    let cells = ablation_cells();
    assert_eq!(cells.len(), 2 * 2 * 3 * 2);
    let labels: std::collections::BTreeSet<_> = cells.iter().map(|c| c.label()).collect();
    assert_eq!(labels.len(), 24);
    let c = cells.iter().find(|c| !c.warmup).unwrap();
    let v = c.vdrop(&crate::vdrop::VDropConfig::default());
    assert_eq!((v.s_w, v.s_a), (0, 0));
}

#[test]
fn tiny_ablation_run_emits_reference_and_cells() {
    let vocab = Vocabulary::standard();
    let recs = records(8, 8);
    let exs = encode_examples(&recs, VtType::Panoramic, &vocab).unwrap();
    let base = TrainConfig {
        layers: 1,
        dim: 8,
        heads: 2,
        steps: 2,
        batch: 2,
        lr_warmup: 1,
        ..TrainConfig::default()
    };
    let cells = &ablation_cells()[..2];
    let rows =
        run_ablation_grid(&base, cells, true, &[0, 1], &exs, &exs[..4], &vocab, None).unwrap();
    assert_eq!(rows.len(), 6);
    let csv = ablation_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0]
        .starts_with("config,strategy,scope,rho,warmup,seeds,id_acc,masked_acc,blind_drop,rho_vt"));
    assert!(lines[1].starts_with("no_vdrop,-,-,0,-,2,"));
    for r in &rows {
        assert!((-1.0..=1.0).contains(&r.metrics.blind_drop));
        assert!((0.0..=1.0).contains(&r.metrics.rho_vt));
    }
}
