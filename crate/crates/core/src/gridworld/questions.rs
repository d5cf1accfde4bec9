use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::HELD_OUT_KINDS;
use super::types::{Camera, Category, Cell, ObjectKind, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QType {
    Anchor,
    Counting,
    RelDistance,
    RelDirection,
}

impl QType {
    pub const ALL: [QType; 4] = [
        QType::Anchor,
        QType::Counting,
        QType::RelDistance,
        QType::RelDirection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QType::Anchor => "anchor",
            QType::Counting => "counting",
            QType::RelDistance => "rel_distance",
            QType::RelDirection => "rel_direction",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Front,
    Behind,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Left,
        Direction::Right,
        Direction::Front,
        Direction::Behind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Front => "front",
            Direction::Behind => "behind",
        }
    }
}

/// Direction of `cell` as seen from `cam`, or `None` unless one axis of the
/// camera-frame offset is at least twice the other.
pub fn direction_from(cam: &Camera, cell: Cell) -> Option<Direction> {
    let (f, l) = cam.to_frame(cell);
    if f != 0 && f.abs() >= 2 * l.abs() {
        Some(if f > 0 {
            Direction::Front
        } else {
            Direction::Behind
        })
    } else if l != 0 && l.abs() >= 2 * f.abs() {
        Some(if l > 0 {
            Direction::Right
        } else {
            Direction::Left
        })
    } else {
        None
    }
}

/// Minimum gap between the best and runner-up candidate distance.
pub const DISTANCE_MARGIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerOption {
    Object(ObjectKind),
    Count(u32),
    Direction(Direction),
}

impl fmt::Display for AnswerOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerOption::Object(k) => write!(f, "{k}"),
            AnswerOption::Count(n) => write!(f, "{n}"),
            AnswerOption::Direction(d) => f.write_str(d.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Query {
    Anchor,
    Counting {
        category: Category,
    },
    RelDistance {
        reference: ObjectKind,
        farthest: bool,
    },
    RelDirection {
        target: ObjectKind,
    },
}

impl Query {
    pub fn qtype(&self) -> QType {
        match self {
            Query::Anchor => QType::Anchor,
            Query::Counting { .. } => QType::Counting,
            Query::RelDistance { .. } => QType::RelDistance,
            Query::RelDirection { .. } => QType::RelDirection,
        }
    }

    pub fn text(&self) -> String {
        match self {
            Query::Anchor => "Which object appears in both views?".into(),
            Query::Counting { category } => {
                format!("How many {} are in the scene?", category.plural())
            }
            Query::RelDistance {
                reference,
                farthest,
            } => format!(
                "Which object is {} to the {reference}?",
                if *farthest { "farthest" } else { "closest" }
            ),
            Query::RelDirection { target } => format!(
                "From the viewpoint of the second image, in which direction is the {target}?"
            ),
        }
    }
}

/// Ids and geometric quantities behind a gold answer, for auditing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub object_ids: Vec<usize>,
    pub quantities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub qtype: QType,
    pub query: Query,
    pub text: String,
    pub options: Vec<AnswerOption>,
    pub gold: usize,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default)]
pub struct QuestionSet {
    pub items: Vec<QAItem>,
    /// Types that could not be made unambiguous for the scene.
    pub skipped: Vec<QType>,
}

impl QuestionSet {
    pub fn get(&self, qtype: QType) -> Option<&QAItem> {
        self.items.iter().find(|q| q.qtype == qtype)
    }
}

fn finish<R: Rng>(
    rng: &mut R,
    query: Query,
    gold: AnswerOption,
    distractors: Vec<AnswerOption>,
    provenance: Provenance,
) -> QAItem {
    debug_assert_eq!(distractors.len(), 3);
    let mut options = distractors;
    options.push(gold);
    options.shuffle(rng);
    let gold = options
        .iter()
        .position(|o| *o == gold)
        .expect("gold present");
    QAItem {
        qtype: query.qtype(),
        text: query.text(),
        query,
        options,
        gold,
        provenance,
    }
}

/// Builds at most one item per question type; unanswerable types are skipped.
pub fn make_questions<R: Rng>(scene: &Scene, rng: &mut R) -> QuestionSet {
    let mut set = QuestionSet::default();
    let builders: [(QType, fn(&Scene, &mut R) -> Option<QAItem>); 4] = [
        (QType::Anchor, anchor),
        (QType::Counting, counting),
        (QType::RelDistance, rel_distance),
        (QType::RelDirection, rel_direction),
    ];
    for (qtype, build) in builders {
        match build(scene, rng) {
            Some(item) => set.items.push(item),
            None => set.skipped.push(qtype),
        }
    }
    set
}

fn anchor<R: Rng>(scene: &Scene, rng: &mut R) -> Option<QAItem> {
    let gold = **scene.covisible().choose(rng)?;
    let mut pool: Vec<ObjectKind> = scene.singly_visible().iter().map(|o| o.kind).collect();
    pool.shuffle(rng);
    pool.truncate(3);
    if pool.len() < 3 {
        let mut absent: Vec<ObjectKind> = ObjectKind::all()
            .filter(|k| scene.object_by_kind(*k).is_none() && !HELD_OUT_KINDS.contains(k))
            .collect();
        absent.shuffle(rng);
        let need = 3 - pool.len();
        pool.extend(absent.into_iter().take(need));
    }
    let provenance = Provenance {
        object_ids: vec![gold.id],
        quantities: vec![],
    };
    Some(finish(
        rng,
        Query::Anchor,
        AnswerOption::Object(gold.kind),
        pool.into_iter().map(AnswerOption::Object).collect(),
        provenance,
    ))
}

fn counting<R: Rng>(scene: &Scene, rng: &mut R) -> Option<QAItem> {
    let mut present: Vec<Category> = scene.objects.iter().map(|o| o.kind.category).collect();
    present.sort();
    present.dedup();
    let category = *present.choose(rng)?;
    let ids: Vec<usize> = scene
        .objects
        .iter()
        .filter(|o| o.kind.category == category)
        .map(|o| o.id)
        .collect();
    let gold = ids.len() as u32;
    let mut distractors: Vec<u32> = [-2i64, -1, 1, 2]
        .iter()
        .map(|d| (gold as i64 + d).max(0) as u32)
        .filter(|&v| v != gold)
        .collect();
    distractors.sort();
    distractors.dedup();
    distractors.shuffle(rng);
    distractors.truncate(3);
    Some(finish(
        rng,
        Query::Counting { category },
        AnswerOption::Count(gold),
        distractors.into_iter().map(AnswerOption::Count).collect(),
        Provenance {
            object_ids: ids,
            quantities: vec![gold as f64],
        },
    ))
}

fn rel_distance<R: Rng>(scene: &Scene, rng: &mut R) -> Option<QAItem> {
    let singles = scene.singly_visible();
    if singles.len() < 4 {
        return None;
    }
    let farthest = rng.gen_bool(0.5);
    let mut refs = scene.covisible();
    refs.shuffle(rng);
    for reference in refs {
        let picks: Vec<_> = singles.choose_multiple(rng, 4).copied().collect();
        let mut ranked: Vec<(f64, usize)> = picks
            .iter()
            .enumerate()
            .map(|(i, o)| (reference.cell.dist(o.cell), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        if farthest {
            ranked.reverse();
        }
        if (ranked[0].0 - ranked[1].0).abs() < DISTANCE_MARGIN {
            continue;
        }
        let winner = picks[ranked[0].1];
        let distractors = picks
            .iter()
            .filter(|o| o.id != winner.id)
            .map(|o| AnswerOption::Object(o.kind))
            .collect();
        let mut object_ids = vec![reference.id];
        object_ids.extend(picks.iter().map(|o| o.id));
        let quantities = picks.iter().map(|o| reference.cell.dist(o.cell)).collect();
        return Some(finish(
            rng,
            Query::RelDistance {
                reference: reference.kind,
                farthest,
            },
            AnswerOption::Object(winner.kind),
            distractors,
            Provenance {
                object_ids,
                quantities,
            },
        ));
    }
    None
}

fn rel_direction<R: Rng>(scene: &Scene, rng: &mut R) -> Option<QAItem> {
    let cam2 = scene.cameras[1];
    let candidates: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| scene.visible_in(o, 0) && !scene.visible_in(o, 1))
        .filter_map(|o| direction_from(&cam2, o.cell).map(|d| (o, d)))
        .collect();
    let &(target, dir) = candidates.choose(rng)?;
    let (f, l) = cam2.to_frame(target.cell);
    let distractors = Direction::ALL
        .iter()
        .filter(|&&d| d != dir)
        .map(|&d| AnswerOption::Direction(d))
        .collect();
    Some(finish(
        rng,
        Query::RelDirection {
            target: target.kind,
        },
        AnswerOption::Direction(dir),
        distractors,
        Provenance {
            object_ids: vec![target.id],
            quantities: vec![f as f64, l as f64],
        },
    ))
}
