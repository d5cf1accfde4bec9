use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scope, Strategy, VDropConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in self.top..self.top + self.height {
            for c in self.left..self.left + self.width {
                out.push((r, c));
            }
        }
        out
    }
}

/// Dropped cells of one view (0 = V1, 1 = V2).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDrop {
    pub view: usize,
    pub cells: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<Rect>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRegion {
    pub views: Vec<ViewDrop>,
    /// round(rho * cells); `area` differs only when no rectangle of this size fits.
    pub target_area: usize,
    pub area: usize,
}

impl DropRegion {
    pub fn empty() -> Self {
        Self {
            views: Vec::new(),
            target_area: 0,
            area: 0,
        }
    }

    pub fn quantized(&self) -> bool {
        self.area != self.target_area
    }
}

/// Every placement of every rectangle shape with exactly `area` cells.
pub fn rectangles(rows: usize, cols: usize, area: usize) -> Vec<Rect> {
    let mut out = Vec::new();
    for height in 1..=rows {
        if !area.is_multiple_of(height) || area / height > cols {
            continue;
        }
        let width = area / height;
        for top in 0..=rows - height {
            for left in 0..=cols - width {
                out.push(Rect {
                    top,
                    left,
                    height,
                    width,
                });
            }
        }
    }
    out
}

fn target_area(view_shape: (usize, usize), rho: f64) -> Result<usize> {
    let n = view_shape.0 * view_shape.1;
    let target = (rho * n as f64).round() as usize;
    if target == 0 {
        return Err(Error::Config(format!(
            "rho {rho} drops no cell of a {n}-cell view"
        )));
    }
    Ok(target.min(n))
}

/// Rectangles of the target area, or of the nearest area within two cells
/// (smaller preferred) when none fits.
fn candidate_rects(view_shape: (usize, usize), target: usize) -> Result<(usize, Vec<Rect>)> {
    let (rows, cols) = view_shape;
    for delta in 0..=2usize {
        let mut tries = vec![target.checked_sub(delta)];
        if delta > 0 {
            tries.push(Some(target + delta));
        }
        for area in tries.into_iter().flatten() {
            if area == 0 || area > rows * cols {
                continue;
            }
            let rects = rectangles(rows, cols, area);
            if !rects.is_empty() {
                return Ok((area, rects));
            }
        }
    }
    Err(Error::Config(format!(
        "no rectangle within 2 cells of area {target} fits a {rows}x{cols} view"
    )))
}

fn sample_one<R: Rng>(
    view: usize,
    view_shape: (usize, usize),
    strategy: Strategy,
    target: usize,
    rng: &mut R,
) -> Result<(usize, ViewDrop)> {
    match strategy {
        Strategy::Region => {
            let (area, rects) = candidate_rects(view_shape, target)?;
            let rect = *rects.choose(rng).expect("non-empty candidate list");
            Ok((
                area,
                ViewDrop {
                    view,
                    cells: rect.cells(),
                    rect: Some(rect),
                },
            ))
        }
        Strategy::Random => {
            let n = view_shape.0 * view_shape.1;
            let mut picked = index::sample(rng, n, target).into_vec();
            picked.sort_unstable();
            let cells = picked
                .into_iter()
                .map(|i| (i / view_shape.1, i % view_shape.1))
                .collect();
            Ok((
                target,
                ViewDrop {
                    view,
                    cells,
                    rect: None,
                },
            ))
        }
    }
}

pub fn sample_drop_region<R: Rng>(
    view_shape: (usize, usize),
    cfg: &VDropConfig,
    rng: &mut R,
) -> Result<DropRegion> {
    cfg.validate()?;
    let target = target_area(view_shape, cfg.rho)?;
    let views: Vec<usize> = match cfg.scope {
        Scope::OneView => vec![rng.gen_range(0..2)],
        Scope::TwoViews => vec![0, 1],
    };
    let mut out = DropRegion {
        views: Vec::new(),
        target_area: target,
        area: 0,
    };
    for v in views {
        let (area, vd) = sample_one(v, view_shape, cfg.strategy, target, rng)?;
        out.area = area;
        out.views.push(vd);
    }
    Ok(out)
}
