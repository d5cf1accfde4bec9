//! Rule-based reader standing in for a frozen vision-language model.
//!
//! Capability tiers:
//! - views only: object identities per view. Anchor by intersecting the two
//!   views' object sets, counting by their union (kinds are unique per scene).
//!   No cross-view geometry, so relational items get a seeded uniform guess.
//! - point matching: marks give correspondences (same anchor and counting
//!   answers) but no new geometry, so relational items get the same guess.
//! - panorama / top-down: object positions in one frame give exact
//!   distances; the second camera's pose is recovered by registering view 2
//!   against the map. Answers that stay ambiguous are drawn among the
//!   consistent ones.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{
    direction_from, AnswerOption, Camera, Category, Cell, Direction, GridKind, Heading, ObjectKind,
    Query, SceneParams, TokenGrid, TraceRecord, VisualToken, DISTANCE_MARGIN,
};
use crate::harness::derive_seed;
use crate::{Error, Result};

fn object_kinds(g: &TokenGrid) -> BTreeSet<ObjectKind> {
    g.cells.iter().filter_map(|t| t.as_object()).collect()
}

/// Object positions in a map's own frame (row down, col right).
fn locate(g: &TokenGrid, k: ObjectKind) -> Option<Cell> {
    g.find(VisualToken::object(k))
        .first()
        .map(|&(r, c)| Cell::new(r as i32, c as i32))
}

fn option_index(options: &[AnswerOption], want: &AnswerOption) -> Option<usize> {
    options.iter().position(|o| o == want)
}

/// Picks among `candidates` (option indices), uniformly at random when
/// more than one remains, and among all options when none does.
fn choose(candidates: &[usize], n_options: usize, rng: &mut ChaCha8Rng) -> usize {
    match candidates {
        [one] => *one,
        [] => rng.gen_range(0..n_options),
        many => *many.choose(rng).expect("non-empty"),
    }
}

/// Map used for registration: a grid whose cells are either known tokens or
/// `None` (outside the known region).
struct Map<'a> {
    grid: &'a TokenGrid,
    /// Cells in this region are known; anything outside is unknown unless
    /// `outside_is_wall`.
    known_rows: usize,
    known_cols: usize,
    outside_is_wall: bool,
}

impl Map<'_> {
    fn token(&self, c: Cell) -> Option<VisualToken> {
        if c.row < 0
            || c.col < 0
            || c.row as usize >= self.known_rows
            || c.col as usize >= self.known_cols
        {
            return None;
        }
        let t = self.grid.get(c.row as usize, c.col as usize);
        // camera markers stand on empty floor; OOB inside a map is off-room
        Some(match t {
            VisualToken::CAM1 | VisualToken::CAM2 => VisualToken::EMPTY,
            VisualToken::OOB => VisualToken::WALL,
            t => t,
        })
    }

    /// Whether `view` is what camera `cam` (in map coordinates) would see.
    fn consistent(&self, cam: &Camera, view: &TokenGrid) -> bool {
        for r in 0..view.rows {
            for c in 0..view.cols {
                let seen = view.get(r, c);
                match self.token(cam.cell_at(r, c)) {
                    Some(t) => {
                        if t != seen {
                            return false;
                        }
                    }
                    None => {
                        if self.outside_is_wall && seen != VisualToken::WALL {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

fn crop_extent(g: &TokenGrid) -> (usize, usize) {
    let rows = (0..g.rows)
        .take_while(|&r| g.get(r, 0) != VisualToken::OOB)
        .count();
    let cols = (0..g.cols)
        .take_while(|&c| g.get(0, c) != VisualToken::OOB)
        .count();
    (rows, cols)
}

/// Poses of camera 2 (in the map's frame) consistent with view 2.
fn second_camera_poses(rec: &TraceRecord, grid: &TokenGrid, kind: GridKind) -> Vec<Camera> {
    match kind {
        GridKind::TopDown => {
            // a room that fits the window is drawn whole, so beyond it is wall
            let room = SceneParams::for_split(rec.split);
            let map = Map {
                grid,
                known_rows: grid.rows,
                known_cols: grid.cols,
                outside_is_wall: room.height <= grid.rows && room.width <= grid.cols,
            };
            let Some(&(r, c)) = grid.find(VisualToken::CAM2).first() else {
                return Vec::new();
            };
            Heading::ALL
                .iter()
                .map(|&heading| Camera {
                    cell: Cell::new(r as i32, c as i32),
                    heading,
                })
                .filter(|cam| map.consistent(cam, &rec.v2))
                .collect()
        }
        GridKind::Panorama => {
            // The crop covers every in-room cell either camera sees, so a
            // view-2 cell maps inside the crop exactly when it is not wall.
            let (rows, cols) = crop_extent(grid);
            let map = Map {
                grid,
                known_rows: rows,
                known_cols: cols,
                outside_is_wall: true,
            };
            let mut out = Vec::new();
            for r in -6..rows as i32 + 6 {
                for c in -6..cols as i32 + 6 {
                    for &heading in &Heading::ALL {
                        let cam = Camera {
                            cell: Cell::new(r, c),
                            heading,
                        };
                        if map.consistent(&cam, &rec.v2) {
                            out.push(cam);
                        }
                    }
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

fn answer_anchor(rec: &TraceRecord, rng: &mut ChaCha8Rng) -> usize {
    let both: BTreeSet<_> = object_kinds(&rec.v1)
        .intersection(&object_kinds(&rec.v2))
        .copied()
        .collect();
    let hits: Vec<usize> = rec
        .options
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o, AnswerOption::Object(k) if both.contains(k)))
        .map(|(i, _)| i)
        .collect();
    choose(&hits, rec.options.len(), rng)
}

fn answer_counting(
    rec: &TraceRecord,
    map: Option<&TokenGrid>,
    category: Category,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut union: BTreeSet<_> = object_kinds(&rec.v1)
        .union(&object_kinds(&rec.v2))
        .copied()
        .collect();
    if let Some(m) = map {
        union.extend(object_kinds(m));
    }
    let n = union.iter().filter(|k| k.category == category).count() as u32;
    let hits: Vec<usize> = option_index(&rec.options, &AnswerOption::Count(n))
        .into_iter()
        .collect();
    choose(&hits, rec.options.len(), rng)
}

fn answer_distance(
    rec: &TraceRecord,
    map: &TokenGrid,
    reference: ObjectKind,
    farthest: bool,
    rng: &mut ChaCha8Rng,
) -> usize {
    let Some(rc) = locate(map, reference) else {
        return rng.gen_range(0..rec.options.len());
    };
    let mut scored = Vec::new();
    for (i, o) in rec.options.iter().enumerate() {
        if let AnswerOption::Object(k) = o {
            if let Some(c) = locate(map, *k) {
                scored.push((i, c.dist(rc)));
            }
        }
    }
    if scored.is_empty() {
        return rng.gen_range(0..rec.options.len());
    }
    let best = if farthest {
        scored.iter().map(|s| s.1).fold(f64::MIN, f64::max)
    } else {
        scored.iter().map(|s| s.1).fold(f64::MAX, f64::min)
    };
    let hits: Vec<usize> = scored
        .iter()
        .filter(|s| (s.1 - best).abs() < DISTANCE_MARGIN)
        .map(|s| s.0)
        .collect();
    choose(&hits, rec.options.len(), rng)
}

fn answer_direction(
    rec: &TraceRecord,
    map: &TokenGrid,
    kind: GridKind,
    target: ObjectKind,
    rng: &mut ChaCha8Rng,
) -> usize {
    let Some(tc) = locate(map, target) else {
        return rng.gen_range(0..rec.options.len());
    };
    let mut dirs: Vec<Direction> = Vec::new();
    for d in second_camera_poses(rec, map, kind)
        .iter()
        .filter_map(|cam| direction_from(cam, tc))
    {
        if !dirs.contains(&d) {
            dirs.push(d);
        }
    }
    let hits: Vec<usize> = dirs
        .iter()
        .filter_map(|&d| option_index(&rec.options, &AnswerOption::Direction(d)))
        .collect();
    choose(&hits, rec.options.len(), rng)
}

/// Answers `rec` from its two views plus an optional extra image of the
/// declared kind. Deterministic in (record, image, kind, seed).
pub fn oracle_reader(
    rec: &TraceRecord,
    extra: Option<(&TokenGrid, GridKind)>,
    seed: u64,
) -> Result<usize> {
    if let Some((g, kind)) = extra {
        if kind == GridKind::Egocentric {
            return Err(Error::FrameMismatch(
                "an egocentric view is not a thinking-image".into(),
            ));
        }
        g.check_kind(kind)?;
    }
    // keyed only by the item, so tiers without new geometry guess identically
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("reader/{}", rec.key())));
    let geometric = extra.filter(|(_, k)| matches!(k, GridKind::Panorama | GridKind::TopDown));
    Ok(match (rec.query, geometric) {
        (Query::Anchor, _) => answer_anchor(rec, &mut rng),
        (Query::Counting { category }, g) => {
            answer_counting(rec, g.map(|x| x.0), category, &mut rng)
        }
        (
            Query::RelDistance {
                reference,
                farthest,
            },
            Some((g, _)),
        ) => answer_distance(rec, g, reference, farthest, &mut rng),
        (Query::RelDirection { target }, Some((g, kind))) => {
            answer_direction(rec, g, kind, target, &mut rng)
        }
        (_, None) => rng.gen_range(0..rec.options.len()),
    })
}
