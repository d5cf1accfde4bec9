mod common;

use common::oracle;
use vtlab::gridworld::*;
use vtlab::probes::*;
use vtlab::sequence::{Vocabulary, VtType};
use vtlab::Error;

fn dataset(n: usize, seed: u64, split: Split) -> Vec<TraceRecord> {
    let vocab = Vocabulary::standard();
    generate_dataset(
        &DatasetConfig {
            split,
            count: n,
            seed,
            mix: BALANCED_MIX,
        },
        &vocab,
    )
    .unwrap()
}

/// Whether `answer` is correct according to the trigonometric oracle.
fn oracle_says(rec: &TraceRecord, answer: usize) -> bool {
    let scene = generate_scene(rec.scene_seed, &SceneParams::for_split(rec.split)).unwrap();
    let item = rec.item();
    oracle::check_item(&scene, &item).unwrap();
    oracle::option_correct(&scene, &item, &item.options[answer]).unwrap()
}

#[test]
fn point_matching_anchor_is_always_correct() {
    let recs: Vec<_> = dataset(2000, 11, Split::Id)
        .into_iter()
        .filter(|r| r.qtype == QType::Anchor)
        .take(500)
        .collect();
    assert_eq!(recs.len(), 500);
    for r in &recs {
        let a = oracle_reader(r, Some((&r.point_matching, GridKind::PointMatching)), 0).unwrap();
        assert!(oracle_says(r, a), "seed {}", r.scene_seed);
    }
}

#[test]
fn topdown_relational_answers_are_always_correct() {
    let recs = dataset(1200, 12, Split::Id);
    let mut seen = [0usize; 2];
    for r in recs
        .iter()
        .filter(|r| matches!(r.qtype, QType::RelDirection | QType::RelDistance))
    {
        let a = oracle_reader(r, Some((&r.topdown, GridKind::TopDown)), 0).unwrap();
        assert!(oracle_says(r, a), "{:?} seed {}", r.qtype, r.scene_seed);
        seen[usize::from(r.qtype == QType::RelDirection)] += 1;
    }
    assert!(seen.iter().all(|&n| n > 200), "{seen:?}");
}

#[test]
fn panorama_relative_distance_is_always_correct() {
    for r in dataset(800, 13, Split::Id)
        .iter()
        .filter(|r| r.qtype == QType::RelDistance)
    {
        let a = oracle_reader(r, Some((&r.panorama, GridKind::Panorama)), 0).unwrap();
        assert!(oracle_says(r, a), "seed {}", r.scene_seed);
    }
}

#[test]
fn reader_answers_are_oracle_consistent_on_500_items() {
    // anchor and counting never need cross-view geometry, so every tier,
    // including no image at all, must agree with the oracle on them
    let recs = dataset(500, 14, Split::Id);
    let mut checked = 0;
    for r in recs
        .iter()
        .filter(|r| matches!(r.qtype, QType::Anchor | QType::Counting))
    {
        let tiers = [
            None,
            Some((&r.point_matching, GridKind::PointMatching)),
            Some((&r.panorama, GridKind::Panorama)),
            Some((&r.topdown, GridKind::TopDown)),
        ];
        for img in tiers {
            let a = oracle_reader(r, img, 1).unwrap();
            assert!(
                oracle_says(r, a),
                "{:?} with {:?} seed {}",
                r.qtype,
                img.map(|i| i.1),
                r.scene_seed
            );
        }
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn blind_reader_guesses_relative_direction_at_chance() {
    let recs: Vec<_> = dataset(4000, 15, Split::Id)
        .into_iter()
        .filter(|r| r.qtype == QType::RelDirection)
        .collect();
    assert!(recs.len() > 800);
    let hits = recs
        .iter()
        .filter(|r| oracle_reader(r, None, 2).unwrap() == r.gold_index)
        .count();
    let acc = hits as f64 / recs.len() as f64;
    assert!((acc - 0.25).abs() < 0.05, "{acc}");
}

#[test]
fn reader_is_deterministic_and_checks_frames() {
    let recs = dataset(60, 16, Split::Id);
    for r in &recs {
        for seed in [0, 9] {
            assert_eq!(
                oracle_reader(r, None, seed).unwrap(),
                oracle_reader(r, None, seed).unwrap()
            );
            let img = Some((&r.panorama, GridKind::Panorama));
            assert_eq!(
                oracle_reader(r, img, seed).unwrap(),
                oracle_reader(r, img, seed).unwrap()
            );
        }
    }
    let r = &recs[0];
    assert!(matches!(
        oracle_reader(r, Some((&r.topdown, GridKind::Panorama)), 0),
        Err(Error::FrameMismatch(_))
    ));
    assert!(matches!(
        oracle_reader(r, Some((&r.v1, GridKind::Egocentric)), 0),
        Err(Error::FrameMismatch(_))
    ));
}

#[test]
fn informativeness_of_layout_images_and_marks() {
    let recs = dataset(2000, 17, Split::Id);
    let pano = measure_informativeness(&recs, VtType::Panoramic, 0).unwrap();
    let top = measure_informativeness(&recs, VtType::Topdown, 0).unwrap();
    let pm = measure_informativeness(&recs, VtType::PointMatching, 0).unwrap();
    let none = measure_informativeness(&recs, VtType::None, 0).unwrap();
    for q in [QType::RelDistance, QType::RelDirection] {
        assert!(top.delta(q).unwrap() > 0.0);
        assert!(pano.delta(q).unwrap() > 0.0);
        assert!(pm.delta(q).unwrap().abs() < 0.03);
    }
    assert_eq!(none.overall, 0.0);
    // anchor is solved from the views alone, so no image can help or hurt it
    for t in [&pano, &top, &pm] {
        assert_eq!(t.delta(QType::Anchor), Some(0.0));
    }
    assert!(matches!(
        measure_informativeness(&recs, VtType::TextStub, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn learnability_of_ground_truth_equals_informativeness() {
    let recs = dataset(600, 18, Split::Id);
    for vt in [VtType::Panoramic, VtType::Topdown, VtType::PointMatching] {
        let truth: Vec<TokenGrid> = recs
            .iter()
            .map(|r| thinking_image(r, vt).unwrap().unwrap().0.clone())
            .collect();
        let l = measure_learnability_from_grids(&recs, vt, &truth, 3).unwrap();
        assert_eq!(l.token_match_rate, 1.0);
        assert_eq!(l.uplift, measure_informativeness(&recs, vt, 3).unwrap());
    }
}

#[test]
fn corrupted_images_do_not_beat_ground_truth() {
    use rand::{Rng, SeedableRng};
    let recs = dataset(1500, 19, Split::Id);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let palette: Vec<VisualToken> = VisualToken::all().collect();
    for vt in [VtType::Panoramic, VtType::Topdown] {
        let noisy: Vec<TokenGrid> = recs
            .iter()
            .map(|r| {
                let mut g = thinking_image(r, vt).unwrap().unwrap().0.clone();
                for c in g.cells.iter_mut() {
                    if rng.gen_bool(0.2) {
                        *c = palette[rng.gen_range(0..palette.len())];
                    }
                }
                g
            })
            .collect();
        let l = measure_learnability_from_grids(&recs, vt, &noisy, 0).unwrap();
        let info = measure_informativeness(&recs, vt, 0).unwrap();
        assert!(l.token_match_rate < 0.85);
        for (q, u) in &l.uplift.per_type {
            let bound = info.per_type[q].delta + 2.0 * (u.stderr + info.per_type[q].stderr);
            assert!(
                u.delta <= bound,
                "{vt:?} {q}: {} vs {}",
                u.delta,
                info.per_type[q].delta
            );
        }
    }
}

#[test]
fn uniform_random_images_match_at_chance() {
    use rand::{Rng, SeedableRng};
    let recs = dataset(300, 20, Split::Id);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let grids: Vec<TokenGrid> = recs
        .iter()
        .map(|_| {
            let cells = (0..81)
                .map(|_| VisualToken(rng.gen_range(0..VisualToken::COUNT as u16)))
                .collect();
            TokenGrid::new(9, 9, cells).unwrap()
        })
        .collect();
    let l = measure_learnability_from_grids(&recs, VtType::Topdown, &grids, 0).unwrap();
    let chance = 1.0 / VisualToken::COUNT as f64;
    assert!(
        (l.token_match_rate - chance).abs() < 0.005,
        "{}",
        l.token_match_rate
    );
}

#[test]
fn ood_reader_runs_on_larger_rooms() {
    let recs = dataset(400, 21, Split::Ood);
    let top = measure_informativeness(&recs, VtType::Topdown, 0).unwrap();
    assert!(top.overall > 0.0);
}
