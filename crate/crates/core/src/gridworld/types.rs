use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Cabinet,
    Bed,
    Desk,
    Lamp,
    Chair,
    Plant,
    Sofa,
    Door,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Cabinet,
        Category::Bed,
        Category::Desk,
        Category::Lamp,
        Category::Chair,
        Category::Plant,
        Category::Sofa,
        Category::Door,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Cabinet => "cabinet",
            Category::Bed => "bed",
            Category::Desk => "desk",
            Category::Lamp => "lamp",
            Category::Chair => "chair",
            Category::Plant => "plant",
            Category::Sofa => "sofa",
            Category::Door => "door",
        }
    }

    pub fn plural(self) -> String {
        format!("{}s", self.name())
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    White,
    Black,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::White,
        Color::Black,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Black => "black",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A (category, color) pair; unique within a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKind {
    pub category: Category,
    pub color: Color,
}

impl ObjectKind {
    pub const COUNT: usize = 48;

    pub fn index(self) -> usize {
        self.category.index() * Color::ALL.len() + self.color.index()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then(|| Self {
            category: Category::ALL[i / Color::ALL.len()],
            color: Color::ALL[i % Color::ALL.len()],
        })
    }

    pub fn all() -> impl Iterator<Item = ObjectKind> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.category.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Unit step as (d_row, d_col); row grows southward.
    pub fn step(self) -> (i32, i32) {
        match self {
            Heading::N => (-1, 0),
            Heading::E => (0, 1),
            Heading::S => (1, 0),
            Heading::W => (0, -1),
        }
    }

    /// The heading a quarter turn clockwise (the camera's right-hand side).
    pub fn right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn dist(self, other: Cell) -> f64 {
        let dr = (self.row - other.row) as f64;
        let dc = (self.col - other.col) as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Object {
    pub id: usize,
    pub kind: ObjectKind,
    pub cell: Cell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Camera {
    pub cell: Cell,
    pub heading: Heading,
}

/// Egocentric frustum: depth 1..=4 ahead, lateral offset -2..=2.
pub const VIEW_DEPTH: i32 = 4;
pub const VIEW_HALF_WIDTH: i32 = 2;
pub const VIEW_ROWS: usize = VIEW_DEPTH as usize;
pub const VIEW_COLS: usize = (2 * VIEW_HALF_WIDTH + 1) as usize;

impl Camera {
    /// World cell seen at (view row, view col).
    pub fn cell_at(&self, row: usize, col: usize) -> Cell {
        let depth = row as i32 + 1;
        let lateral = col as i32 - VIEW_HALF_WIDTH;
        let (fr, fc) = self.heading.step();
        let (rr, rc) = self.heading.right().step();
        Cell::new(
            self.cell.row + depth * fr + lateral * rr,
            self.cell.col + depth * fc + lateral * rc,
        )
    }

    /// (forward, lateral) offset of `cell` in this camera's frame.
    pub fn to_frame(&self, cell: Cell) -> (i32, i32) {
        let (dr, dc) = (cell.row - self.cell.row, cell.col - self.cell.col);
        let (fr, fc) = self.heading.step();
        let (rr, rc) = self.heading.right().step();
        (dr * fr + dc * fc, dr * rr + dc * rc)
    }

    /// View (row, col) of `cell` if it lies inside the frustum.
    pub fn view_pos(&self, cell: Cell) -> Option<(usize, usize)> {
        let (f, l) = self.to_frame(cell);
        ((1..=VIEW_DEPTH).contains(&f) && l.abs() <= VIEW_HALF_WIDTH)
            .then(|| ((f - 1) as usize, (l + VIEW_HALF_WIDTH) as usize))
    }

    pub fn sees(&self, cell: Cell) -> bool {
        self.view_pos(cell).is_some()
    }

    pub fn frustum(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..VIEW_ROWS).flat_map(move |r| (0..VIEW_COLS).map(move |c| self.cell_at(r, c)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<Object>,
    pub cameras: [Camera; 2],
    pub seed: u64,
}

impl Scene {
    pub fn in_room(&self, cell: Cell) -> bool {
        cell.row >= 0
            && cell.col >= 0
            && (cell.row as usize) < self.height
            && (cell.col as usize) < self.width
    }

    pub fn object_at(&self, cell: Cell) -> Option<&Object> {
        self.objects.iter().find(|o| o.cell == cell)
    }

    pub fn object_by_kind(&self, kind: ObjectKind) -> Option<&Object> {
        self.objects.iter().find(|o| o.kind == kind)
    }

    pub fn visible_in(&self, obj: &Object, view: usize) -> bool {
        self.cameras[view].sees(obj.cell)
    }

    pub fn covisible(&self) -> Vec<&Object> {
        self.objects
            .iter()
            .filter(|o| self.visible_in(o, 0) && self.visible_in(o, 1))
            .collect()
    }

    /// Objects seen by exactly one camera.
    pub fn singly_visible(&self) -> Vec<&Object> {
        self.objects
            .iter()
            .filter(|o| self.visible_in(o, 0) != self.visible_in(o, 1))
            .collect()
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("scene serializes")
    }
}
