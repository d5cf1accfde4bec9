use super::grid::{GridKind, TokenGrid, VisualToken};
use super::types::{Camera, Cell, Scene, VIEW_COLS, VIEW_ROWS};

/// Placement of the panorama crop in camera 1's frame.
///
/// Panorama cell (r, c) shows the world cell at forward offset `f_max - r`
/// and lateral offset `l_min + c` from camera 1; cells past the crop are OOB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PanoramaFrame {
    pub anchor: Camera,
    pub f_max: i32,
    pub l_min: i32,
    pub rows: usize,
    pub cols: usize,
}

impl PanoramaFrame {
    /// Bounding box of both frustums' in-room cells in camera 1's frame;
    /// `None` when the box exceeds the 6×9 panorama.
    pub fn fit(cams: &[Camera; 2], width: usize, height: usize) -> Option<Self> {
        let inside = |c: Cell| {
            c.row >= 0 && c.col >= 0 && (c.row as usize) < height && (c.col as usize) < width
        };
        let anchor = cams[0];
        let coords: Vec<(i32, i32)> = cams
            .iter()
            .flat_map(|c| c.frustum().collect::<Vec<_>>())
            .filter(|&c| inside(c))
            .map(|c| anchor.to_frame(c))
            .collect();
        let f_min = coords.iter().map(|p| p.0).min()?;
        let f_max = coords.iter().map(|p| p.0).max()?;
        let l_min = coords.iter().map(|p| p.1).min()?;
        let l_max = coords.iter().map(|p| p.1).max()?;
        let rows = (f_max - f_min + 1) as usize;
        let cols = (l_max - l_min + 1) as usize;
        let (max_r, max_c) = GridKind::Panorama.shape();
        (rows <= max_r && cols <= max_c).then_some(Self {
            anchor,
            f_max,
            l_min,
            rows,
            cols,
        })
    }

    pub fn world_cell(&self, row: usize, col: usize) -> Cell {
        let f = self.f_max - row as i32;
        let l = self.l_min + col as i32;
        let (fr, fc) = self.anchor.heading.step();
        let (rr, rc) = self.anchor.heading.right().step();
        Cell::new(
            self.anchor.cell.row + f * fr + l * rr,
            self.anchor.cell.col + f * fc + l * rc,
        )
    }

    pub fn grid_pos(&self, cell: Cell) -> Option<(usize, usize)> {
        let (f, l) = self.anchor.to_frame(cell);
        let r = self.f_max - f;
        let c = l - self.l_min;
        (r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then_some((r as usize, c as usize))
    }
}

fn world_token(scene: &Scene, cell: Cell) -> VisualToken {
    if !scene.in_room(cell) {
        return VisualToken::WALL;
    }
    scene
        .object_at(cell)
        .map_or(VisualToken::EMPTY, |o| VisualToken::object(o.kind))
}

/// Egocentric 4×5 view from `camera_index`; row 0 is the nearest depth.
pub fn render_view(scene: &Scene, camera_index: usize) -> TokenGrid {
    let cam = scene.cameras[camera_index];
    let mut g = TokenGrid::filled(GridKind::Egocentric, VisualToken::EMPTY);
    for r in 0..VIEW_ROWS {
        for c in 0..VIEW_COLS {
            g.set(r, c, world_token(scene, cam.cell_at(r, c)));
        }
    }
    g
}

/// Crop of the room covering both frustums, camera 1's heading up, OOB-padded to 6×9.
///
/// Scenes from `generate_scene` always fit; a hand-built scene whose frustum
/// union does not fit renders as all OOB.
pub fn render_panorama(scene: &Scene) -> TokenGrid {
    let mut g = TokenGrid::filled(GridKind::Panorama, VisualToken::OOB);
    if let Some(frame) = PanoramaFrame::fit(&scene.cameras, scene.width, scene.height) {
        for r in 0..frame.rows {
            for c in 0..frame.cols {
                g.set(r, c, world_token(scene, frame.world_cell(r, c)));
            }
        }
    }
    g
}

/// Top-left corner of the 9×9 top-down window in world coordinates.
pub fn topdown_origin(scene: &Scene) -> Cell {
    let (wr, wc) = GridKind::TopDown.shape();
    let mut min_r = i32::MAX;
    let mut min_c = i32::MAX;
    for cam in &scene.cameras {
        for cell in cam.frustum().filter(|&c| scene.in_room(c)) {
            min_r = min_r.min(cell.row);
            min_c = min_c.min(cell.col);
        }
    }
    let place = |min: i32, extent: usize, window: usize| -> i32 {
        if extent <= window {
            0
        } else {
            min.min((extent - window) as i32).max(0)
        }
    };
    Cell::new(
        place(min_r, scene.height, wr),
        place(min_c, scene.width, wc),
    )
}

/// Allocentric room map (north up) with CAM1/CAM2 at the camera cells.
pub fn render_topdown(scene: &Scene) -> TokenGrid {
    let mut g = TokenGrid::filled(GridKind::TopDown, VisualToken::OOB);
    let origin = topdown_origin(scene);
    for r in 0..g.rows {
        for c in 0..g.cols {
            let cell = Cell::new(origin.row + r as i32, origin.col + c as i32);
            if !scene.in_room(cell) {
                continue;
            }
            let t = if cell == scene.cameras[0].cell {
                VisualToken::CAM1
            } else if cell == scene.cameras[1].cell {
                VisualToken::CAM2
            } else {
                world_token(scene, cell)
            };
            g.set(r, c, t);
        }
    }
    g
}

/// Column index of the separator between the two panes.
pub const PM_SEPARATOR: usize = VIEW_COLS;

/// Both views side by side with co-visible objects replaced by MARK_k
/// (k by ascending object id, at most four marks).
pub fn render_point_matching(scene: &Scene) -> TokenGrid {
    let views = [render_view(scene, 0), render_view(scene, 1)];
    let mut g = TokenGrid::filled(GridKind::PointMatching, VisualToken::OOB);
    for (pane, view) in views.iter().enumerate() {
        let offset = pane * (PM_SEPARATOR + 1);
        for r in 0..VIEW_ROWS {
            for c in 0..VIEW_COLS {
                g.set(r, offset + c, view.get(r, c));
            }
        }
    }
    let mut shared = scene.covisible();
    shared.sort_by_key(|o| o.id);
    for (k, obj) in shared.iter().take(VisualToken::MAX_MARKS).enumerate() {
        for pane in 0..2 {
            let (r, c) = scene.cameras[pane]
                .view_pos(obj.cell)
                .expect("co-visible object is inside both frustums");
            g.set(r, pane * (PM_SEPARATOR + 1) + c, VisualToken::mark(k + 1));
        }
    }
    g
}
