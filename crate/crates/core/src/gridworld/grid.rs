use serde::{Deserialize, Serialize};

use super::types::ObjectKind;
use crate::error::{Error, Result};

/// Discrete visual token: an object kind or one of the structural markers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisualToken(pub u16);

impl VisualToken {
    pub const EMPTY: VisualToken = VisualToken(48);
    pub const WALL: VisualToken = VisualToken(49);
    pub const OOB: VisualToken = VisualToken(50);
    pub const CAM1: VisualToken = VisualToken(51);
    pub const CAM2: VisualToken = VisualToken(52);
    pub const MARK_BASE: u16 = 53;
    pub const MAX_MARKS: usize = 4;
    pub const COUNT: usize = 57;

    pub fn object(kind: ObjectKind) -> Self {
        VisualToken(kind.index() as u16)
    }

    pub fn mark(k: usize) -> Self {
        assert!((1..=Self::MAX_MARKS).contains(&k), "mark index {k}");
        VisualToken(Self::MARK_BASE + k as u16 - 1)
    }

    pub fn as_object(self) -> Option<ObjectKind> {
        ObjectKind::from_index(self.0 as usize)
    }

    /// 1-based mark index, if this is a MARK token.
    pub fn as_mark(self) -> Option<usize> {
        (Self::MARK_BASE..Self::MARK_BASE + Self::MAX_MARKS as u16)
            .contains(&self.0)
            .then(|| (self.0 - Self::MARK_BASE) as usize + 1)
    }

    pub fn is_valid(self) -> bool {
        (self.0 as usize) < Self::COUNT
    }

    pub fn all() -> impl Iterator<Item = VisualToken> {
        (0..Self::COUNT as u16).map(VisualToken)
    }

    pub fn name(self) -> String {
        if let Some(kind) = self.as_object() {
            return format!("{}_{}", kind.color.name(), kind.category.name());
        }
        if let Some(k) = self.as_mark() {
            return format!("MARK_{k}");
        }
        match self {
            Self::EMPTY => "EMPTY".into(),
            Self::WALL => "WALL".into(),
            Self::OOB => "OOB".into(),
            Self::CAM1 => "CAM1".into(),
            Self::CAM2 => "CAM2".into(),
            _ => format!("INVALID_{}", self.0),
        }
    }

    /// Two-character glyph for the ASCII sidecar.
    pub fn glyph(self) -> String {
        if let Some(kind) = self.as_object() {
            let c = kind
                .category
                .name()
                .chars()
                .next()
                .unwrap()
                .to_ascii_uppercase();
            let k = kind.color.name().chars().next().unwrap();
            let k = if kind.color == super::types::Color::Black {
                'k'
            } else {
                k
            };
            return format!("{c}{k}");
        }
        if let Some(k) = self.as_mark() {
            return format!("#{k}");
        }
        match self {
            Self::EMPTY => " .".into(),
            Self::WALL => "##".into(),
            Self::OOB => "  ".into(),
            Self::CAM1 => "C1".into(),
            Self::CAM2 => "C2".into(),
            _ => "??".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Egocentric,
    Panorama,
    TopDown,
    PointMatching,
}

impl GridKind {
    pub fn shape(self) -> (usize, usize) {
        match self {
            GridKind::Egocentric => (4, 5),
            GridKind::Panorama => (6, 9),
            GridKind::TopDown => (9, 9),
            GridKind::PointMatching => (4, 11),
        }
    }
}

/// Fixed-shape raster of visual tokens, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<VisualToken>,
}

impl TokenGrid {
    pub fn filled(kind: GridKind, token: VisualToken) -> Self {
        let (rows, cols) = kind.shape();
        Self {
            rows,
            cols,
            cells: vec![token; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, cells: Vec<VisualToken>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} grid with {} cells",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|t| !t.is_valid()) {
            return Err(Error::UnknownToken(format!("visual token {}", bad.0)));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn get(&self, row: usize, col: usize) -> VisualToken {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, t: VisualToken) {
        self.cells[row * self.cols + col] = t;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn check_kind(&self, kind: GridKind) -> Result<()> {
        if self.shape() != kind.shape() {
            return Err(Error::FrameMismatch(format!(
                "{kind:?} grid must be {:?}, got {:?}",
                kind.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Positions of `t`, row-major.
    pub fn find(&self, t: VisualToken) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == t)
            .map(|(i, _)| (i / self.cols, i % self.cols))
            .collect()
    }

    pub fn count(&self, pred: impl Fn(VisualToken) -> bool) -> usize {
        self.cells.iter().filter(|&&t| pred(t)).count()
    }

    pub fn ascii(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push_str(&self.get(r, c).glyph());
                s.push(' ');
            }
            s.truncate(s.trim_end().len());
            s.push('\n');
        }
        s
    }
}
