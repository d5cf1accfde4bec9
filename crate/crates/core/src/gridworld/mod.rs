//! Procedural two-camera grid rooms, their renders, and cross-view questions.

pub mod dataset;
pub mod grid;
pub mod questions;
pub mod render;
pub mod scene;
pub mod types;

pub use dataset::{
    ascii_sidecar, generate_dataset, read_jsonl, write_jsonl, DatasetConfig, TraceRecord,
    BALANCED_MIX, TRAIN_MIX,
};
pub use grid::{GridKind, TokenGrid, VisualToken};
pub use questions::{
    direction_from, make_questions, AnswerOption, Direction, Provenance, QAItem, QType, Query,
    QuestionSet, DISTANCE_MARGIN,
};
pub use render::{
    render_panorama, render_point_matching, render_topdown, render_view, PanoramaFrame,
};
pub use scene::{generate_scene, SceneParams, Split, HELD_OUT_KINDS};
pub use types::{Camera, Category, Cell, Color, Heading, Object, ObjectKind, Scene};
