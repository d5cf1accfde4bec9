//! Brute-force geometry recomputed from a `Scene` with trigonometric frame
//! rotations, independent of the library's lookup-table camera transforms.

use vtlab::gridworld::{
    AnswerOption, Cell, Direction, Heading, QAItem, Query, Scene, TokenGrid, VisualToken,
};

/// Unit (forward, right) vectors in (col, row) coordinates from the heading angle.
fn basis(h: Heading) -> ((i32, i32), (i32, i32)) {
    let k = match h {
        Heading::N => 0.0,
        Heading::E => 1.0,
        Heading::S => 2.0,
        Heading::W => 3.0,
    };
    let theta = k * std::f64::consts::FRAC_PI_2;
    let fwd = (theta.sin().round() as i32, -theta.cos().round() as i32);
    let right = (theta.cos().round() as i32, theta.sin().round() as i32);
    (fwd, right)
}

/// (forward, right) coordinates of `cell` relative to camera `cam`.
pub fn camera_coords(scene: &Scene, cam: usize, cell: Cell) -> (i32, i32) {
    let c = scene.cameras[cam];
    let (fwd, right) = basis(c.heading);
    let dx = cell.col - c.cell.col;
    let dy = cell.row - c.cell.row;
    (dx * fwd.0 + dy * fwd.1, dx * right.0 + dy * right.1)
}

pub fn visible(scene: &Scene, cam: usize, cell: Cell) -> bool {
    let (f, r) = camera_coords(scene, cam, cell);
    (1..=4).contains(&f) && (-2..=2).contains(&r)
}

/// View render by scanning a generous world window and projecting every cell.
pub fn render_view(scene: &Scene, cam: usize) -> Vec<VisualToken> {
    let mut out = vec![VisualToken(u16::MAX); 20];
    for row in -6..scene.height as i32 + 6 {
        for col in -6..scene.width as i32 + 6 {
            let cell = Cell::new(row, col);
            let (f, r) = camera_coords(scene, cam, cell);
            if !((1..=4).contains(&f) && (-2..=2).contains(&r)) {
                continue;
            }
            let inside =
                row >= 0 && col >= 0 && row < scene.height as i32 && col < scene.width as i32;
            let tok = if !inside {
                VisualToken::WALL
            } else if let Some(o) = scene.objects.iter().find(|o| o.cell == cell) {
                VisualToken::object(o.kind)
            } else {
                VisualToken::EMPTY
            };
            out[((f - 1) * 5 + (r + 2)) as usize] = tok;
        }
    }
    out
}

fn classify(f: i32, r: i32) -> Option<Direction> {
    let (af, ar) = (f.abs() as f64, r.abs() as f64);
    if af > 0.0 && af >= 2.0 * ar {
        Some(if f > 0 {
            Direction::Front
        } else {
            Direction::Behind
        })
    } else if ar > 0.0 && ar >= 2.0 * af {
        Some(if r > 0 {
            Direction::Right
        } else {
            Direction::Left
        })
    } else {
        None
    }
}

pub fn direction_from_second(scene: &Scene, cell: Cell) -> Option<Direction> {
    let (f, r) = camera_coords(scene, 1, cell);
    classify(f, r)
}

fn euclid(a: Cell, b: Cell) -> f64 {
    (((a.row - b.row).pow(2) + (a.col - b.col).pow(2)) as f64).sqrt()
}

/// Whether option `o` is a correct answer to `item` under the scene's geometry.
pub fn option_correct(scene: &Scene, item: &QAItem, o: &AnswerOption) -> Result<bool, String> {
    let find = |k| scene.objects.iter().find(|x| x.kind == k);
    match (&item.query, o) {
        (Query::Anchor, AnswerOption::Object(k)) => Ok(find(*k)
            .map(|x| visible(scene, 0, x.cell) && visible(scene, 1, x.cell))
            .unwrap_or(false)),
        (Query::Counting { category }, AnswerOption::Count(n)) => Ok(scene
            .objects
            .iter()
            .filter(|x| x.kind.category == *category)
            .count() as u32
            == *n),
        (
            Query::RelDistance {
                reference,
                farthest,
            },
            AnswerOption::Object(k),
        ) => {
            let r = find(*reference).ok_or("reference missing")?;
            if !(visible(scene, 0, r.cell) && visible(scene, 1, r.cell)) {
                return Err("reference not co-visible".into());
            }
            let mut ds = Vec::new();
            for opt in &item.options {
                let AnswerOption::Object(ok) = opt else {
                    return Err("non-object option".into());
                };
                let x = find(*ok).ok_or("candidate missing")?;
                if visible(scene, 0, x.cell) == visible(scene, 1, x.cell) {
                    return Err("candidate not visible in exactly one view".into());
                }
                ds.push((*ok, euclid(r.cell, x.cell)));
            }
            let best = if *farthest {
                ds.iter().map(|d| d.1).fold(f64::MIN, f64::max)
            } else {
                ds.iter().map(|d| d.1).fold(f64::MAX, f64::min)
            };
            let mine = ds
                .iter()
                .find(|d| d.0 == *k)
                .ok_or("option not among candidates")?
                .1;
            let others_close = ds
                .iter()
                .filter(|d| d.0 != *k)
                .any(|d| (d.1 - best).abs() < 0.5);
            Ok(mine == best && !others_close)
        }
        (Query::RelDirection { target }, AnswerOption::Direction(d)) => {
            let t = find(*target).ok_or("target missing")?;
            if !(visible(scene, 0, t.cell) && !visible(scene, 1, t.cell)) {
                return Err("target must be visible only in view 1".into());
            }
            let dir = direction_from_second(scene, t.cell).ok_or("ambiguous direction")?;
            Ok(dir == *d)
        }
        _ => Err(format!("option {o:?} does not fit query {:?}", item.query)),
    }
}

/// Gold is correct and every distractor is wrong.
pub fn check_item(scene: &Scene, item: &QAItem) -> Result<(), String> {
    if item.options.len() != 4 {
        return Err("need 4 options".into());
    }
    for (i, o) in item.options.iter().enumerate() {
        let ok = option_correct(scene, item, o)?;
        if ok != (i == item.gold) {
            return Err(format!(
                "option {i} ({o}) correctness {ok}, gold {}",
                item.gold
            ));
        }
    }
    Ok(())
}

pub fn tokens(g: &TokenGrid) -> &[VisualToken] {
    &g.cells
}
