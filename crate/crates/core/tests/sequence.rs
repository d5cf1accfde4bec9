use proptest::prelude::*;
use vtlab::gridworld::{
    generate_dataset, DatasetConfig, GridKind, Split, TokenGrid, VisualToken, TRAIN_MIX,
};
use vtlab::sequence::*;

fn grid(kind: GridKind, cells: &[u16]) -> TokenGrid {
    let (r, c) = kind.shape();
    TokenGrid::new(
        r,
        c,
        cells
            .iter()
            .take(r * c)
            .map(|&t| VisualToken(t % 57))
            .collect(),
    )
    .unwrap()
}

fn arb_trace(vt_type: VtType) -> impl Strategy<Value = Trace> {
    let vocab_len = Vocabulary::standard().len() as u32;
    (
        prop::collection::vec(0u16..57, 20),
        prop::collection::vec(0u16..57, 20),
        prop::collection::vec(0u32..vocab_len, 1..14),
        prop::collection::vec(0u16..57, 81),
        prop::collection::vec(0u32..vocab_len, TEXT_STUB_LEN),
        0usize..4,
    )
        .prop_map(move |(a, b, q, vt, text, answer)| Trace {
            v1: grid(GridKind::Egocentric, &a),
            v2: grid(GridKind::Egocentric, &b),
            question: q.into_iter().map(TokenId).collect(),
            vt: match vt_type {
                VtType::None => None,
                VtType::TextStub => {
                    Some(ThinkingImage::Text(text.into_iter().map(TokenId).collect()))
                }
                v => Some(ThinkingImage::Grid(grid(v.grid_kind().unwrap(), &vt))),
            },
            answer,
        })
}

fn arb_vt_trace() -> impl Strategy<Value = (VtType, Trace)> {
    prop::sample::select(VtType::ALL.to_vec())
        .prop_flat_map(|v| arb_trace(v).prop_map(move |t| (v, t)))
}

proptest! {
    #[test]
    fn encode_decode_round_trip((vt_type, trace) in arb_vt_trace()) {
        let vocab = Vocabulary::standard();
        let (ids, layout) = encode_trace(&trace, vt_type, &vocab).unwrap();
        prop_assert_eq!(ids.len(), layout.len);
        let (back, layout2) = decode_trace(&ids, vt_type, &vocab).unwrap();
        prop_assert_eq!(back, trace);
        prop_assert_eq!(layout2, layout);
    }

    #[test]
    fn layout_roles_partition_positions((vt_type, trace) in arb_vt_trace()) {
        let vocab = Vocabulary::standard();
        let (_, l) = encode_trace(&trace, vt_type, &vocab).unwrap();
        let mut owner = vec![0u8; l.len];
        for r in [&l.v1, &l.v2, &l.q, &l.vt, &l.a] {
            for p in r.clone() {
                owner[p] += 1;
            }
        }
        // spans are disjoint; everything else is a control token
        prop_assert!(owner.iter().all(|&n| n <= 1));
        for (p, &n) in owner.iter().enumerate() {
            prop_assert_eq!(n == 0, l.roles[p] == Role::Control);
        }
        // visual cells map to distinct coordinates within each grid span
        for r in [&l.v1, &l.v2] {
            let mut seen = std::collections::BTreeSet::new();
            for p in r.clone() {
                prop_assert!(seen.insert(l.coords[p].unwrap()));
            }
            prop_assert_eq!(seen.len(), 20);
        }
    }
}

#[test]
fn panoramic_thinking_span_is_54_tokens() {
    let l = SpanLayout::new(VtType::Panoramic, 9);
    assert_eq!(l.vt.len(), 54);
    assert_eq!(l.vt_shape, (6, 9));
}

#[test]
fn topdown_length_formula() {
    for q in [1, 7, 12] {
        let l = SpanLayout::new(VtType::Topdown, q);
        assert_eq!(l.len, 1 + 20 + 1 + 20 + 1 + q + 1 + 1 + 81 + 1 + 1 + 1 + 1);
        let none = SpanLayout::new(VtType::None, q);
        assert_eq!(none.len, 1 + 20 + 1 + 20 + 1 + q + 1 + 1 + 1 + 1);
        assert!(none.vt.is_empty());
    }
}

#[test]
fn causal_mask_matches_brute_force() {
    let l = SpanLayout::new(VtType::PointMatching, 8);
    let m = base_causal_mask(&l, l.len);
    for i in 0..l.len {
        for j in 0..l.len {
            assert_eq!(m.is_blocked(i, j), j > i, "({i},{j})");
        }
    }
}

#[test]
fn dataset_traces_round_trip_for_every_vt_type() {
    let vocab = Vocabulary::standard();
    let cfg = DatasetConfig {
        split: Split::Id,
        count: 60,
        seed: 3,
        mix: TRAIN_MIX,
    };
    for rec in generate_dataset(&cfg, &vocab).unwrap() {
        for vt in VtType::ALL {
            let t = Trace::from_record(&rec, vt);
            let (ids, layout) = encode_trace(&t, vt, &vocab).unwrap();
            assert_eq!(decode_trace(&ids, vt, &vocab).unwrap().0, t);
            assert_eq!(ids[layout.a.start], vocab.letter(rec.gold_index));
            assert_eq!(ids[layout.answer_rows().start], ANS);
        }
    }
}

#[test]
fn wrong_thinking_image_is_rejected() {
    let vocab = Vocabulary::standard();
    let cfg = DatasetConfig {
        split: Split::Id,
        count: 1,
        seed: 5,
        mix: TRAIN_MIX,
    };
    let rec = &generate_dataset(&cfg, &vocab).unwrap()[0];
    let t = Trace::from_record(rec, VtType::Topdown);
    assert!(encode_trace(&t, VtType::Panoramic, &vocab).is_err());
    assert!(encode_trace(&t, VtType::None, &vocab).is_err());
}
