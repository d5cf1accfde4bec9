use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::{
    TokenId, Vocabulary, ANS, BOS, EOS, SEP, VT_PANO, VT_POINT, VT_TEXT, VT_TOPDOWN,
};
use crate::error::{Error, Result};
use crate::gridworld::{GridKind, TokenGrid, TraceRecord};

/// Which thinking-image (if any) sits between the question and the answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VtType {
    Panoramic,
    Topdown,
    PointMatching,
    None,
    TextStub,
}

/// Length of the text-stub rationale span.
pub const TEXT_STUB_LEN: usize = 6;

impl VtType {
    pub const ALL: [VtType; 5] = [
        VtType::Panoramic,
        VtType::Topdown,
        VtType::PointMatching,
        VtType::None,
        VtType::TextStub,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VtType::Panoramic => "panoramic",
            VtType::Topdown => "topdown",
            VtType::PointMatching => "point_matching",
            VtType::None => "none",
            VtType::TextStub => "text_stub",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown vt_type {s}")))
    }

    pub fn grid_kind(self) -> Option<GridKind> {
        match self {
            VtType::Panoramic => Some(GridKind::Panorama),
            VtType::Topdown => Some(GridKind::TopDown),
            VtType::PointMatching => Some(GridKind::PointMatching),
            VtType::None | VtType::TextStub => None,
        }
    }

    pub fn tag(self) -> Option<TokenId> {
        match self {
            VtType::Panoramic => Some(VT_PANO),
            VtType::Topdown => Some(VT_TOPDOWN),
            VtType::PointMatching => Some(VT_POINT),
            VtType::TextStub => Some(VT_TEXT),
            VtType::None => None,
        }
    }

    /// Number of thinking-image positions.
    pub fn vt_len(self) -> usize {
        match self {
            VtType::None => 0,
            VtType::TextStub => TEXT_STUB_LEN,
            v => {
                let (r, c) = v.grid_kind().expect("grid type").shape();
                r * c
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ThinkingImage {
    Grid(TokenGrid),
    Text(Vec<TokenId>),
}

/// (V1, V2, question, thinking-image, answer letter index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub v1: TokenGrid,
    pub v2: TokenGrid,
    pub question: Vec<TokenId>,
    pub vt: Option<ThinkingImage>,
    pub answer: usize,
}

impl Trace {
    pub fn from_record(rec: &TraceRecord, vt_type: VtType) -> Self {
        let vt = match vt_type {
            VtType::Panoramic => Some(ThinkingImage::Grid(rec.panorama.clone())),
            VtType::Topdown => Some(ThinkingImage::Grid(rec.topdown.clone())),
            VtType::PointMatching => Some(ThinkingImage::Grid(rec.point_matching.clone())),
            VtType::TextStub => Some(ThinkingImage::Text(rec.rationale_tokens.clone())),
            VtType::None => None,
        };
        Self {
            v1: rec.v1.clone(),
            v2: rec.v2.clone(),
            question: rec.question_tokens.clone(),
            vt,
            answer: rec.gold_index,
        }
    }
}

/// Position role; doubles as the segment-embedding index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Control = 0,
    V1 = 1,
    V2 = 2,
    Question = 3,
    Thinking = 4,
    Answer = 5,
}

impl Role {
    pub const COUNT: usize = 6;

    pub fn name(self) -> &'static str {
        match self {
            Role::Control => "control",
            Role::V1 => "v1",
            Role::V2 => "v2",
            Role::Question => "question",
            Role::Thinking => "vt",
            Role::Answer => "answer",
        }
    }
}

/// Role ranges and visual-cell coordinates of an encoded trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanLayout {
    pub vt_type: VtType,
    pub v1: Range<usize>,
    pub v2: Range<usize>,
    pub q: Range<usize>,
    pub vt: Range<usize>,
    pub a: Range<usize>,
    pub len: usize,
    pub roles: Vec<Role>,
    /// (row, col) of each visual position.
    pub coords: Vec<Option<(u8, u8)>>,
    /// Answer-option slot per position: 1..=4 on option k's letter and
    /// token (the question's trailing `letter option` pairs), else 0.
    pub slots: Vec<u8>,
    pub vt_shape: (usize, usize),
}

/// Option-slot embedding rows: "none" plus one per answer option.
pub const OPTION_SLOTS: usize = 5;

const VIEW_SHAPE: (usize, usize) = (4, 5);

impl SpanLayout {
    pub fn new(vt_type: VtType, q_len: usize) -> Self {
        let view = VIEW_SHAPE.0 * VIEW_SHAPE.1;
        let v1 = 1..1 + view;
        let v2 = v1.end + 1..v1.end + 1 + view;
        let q = v2.end + 1..v2.end + 1 + q_len;
        // after Q: SEP, then (tag, VT, SEP) when a thinking span exists
        let vt = if vt_type == VtType::None {
            q.end + 1..q.end + 1
        } else {
            q.end + 2..q.end + 2 + vt_type.vt_len()
        };
        let ans_tag = if vt_type == VtType::None {
            vt.end
        } else {
            vt.end + 1
        };
        let a = ans_tag + 1..ans_tag + 2;
        let len = a.end + 1;

        let mut roles = vec![Role::Control; len];
        let mut coords = vec![None; len];
        let vt_shape = vt_type
            .grid_kind()
            .map_or((1, vt_type.vt_len()), GridKind::shape);
        for (range, role, shape, grid) in [
            (&v1, Role::V1, VIEW_SHAPE, true),
            (&v2, Role::V2, VIEW_SHAPE, true),
            (&q, Role::Question, (1, q_len), false),
            (&vt, Role::Thinking, vt_shape, vt_type.grid_kind().is_some()),
            (&a, Role::Answer, (1, 1), false),
        ] {
            for (k, p) in range.clone().enumerate() {
                roles[p] = role;
                if grid {
                    coords[p] = Some(((k / shape.1) as u8, (k % shape.1) as u8));
                }
            }
        }
        let mut slots = vec![0u8; len];
        if q.len() >= 2 * (OPTION_SLOTS - 1) {
            let first = q.end - 2 * (OPTION_SLOTS - 1);
            for (k, s) in slots[first..q.end].iter_mut().enumerate() {
                *s = (k / 2 + 1) as u8;
            }
        }
        Self {
            vt_type,
            v1,
            v2,
            q,
            vt,
            a,
            len,
            roles,
            coords,
            slots,
            vt_shape,
        }
    }

    /// Token count of everything except the question.
    pub fn fixed_len(vt_type: VtType) -> usize {
        Self::new(vt_type, 0).len
    }

    pub fn from_len(vt_type: VtType, seq_len: usize) -> Result<Self> {
        let fixed = Self::fixed_len(vt_type);
        if seq_len < fixed {
            return Err(Error::Shape(format!(
                "{} tokens is shorter than the {fixed}-token frame of {}",
                seq_len,
                vt_type.name()
            )));
        }
        Ok(Self::new(vt_type, seq_len - fixed))
    }

    /// Input view `i` (0 or 1).
    pub fn view(&self, i: usize) -> &Range<usize> {
        if i == 0 {
            &self.v1
        } else {
            &self.v2
        }
    }

    /// Position of cell (row, col) of view `i`.
    pub fn view_position(&self, i: usize, row: usize, col: usize) -> Option<usize> {
        (row < VIEW_SHAPE.0 && col < VIEW_SHAPE.1)
            .then(|| self.view(i).start + row * VIEW_SHAPE.1 + col)
    }

    /// Query rows whose next-token prediction emits the answer (the ANS tag).
    pub fn answer_rows(&self) -> Range<usize> {
        self.a.start - 1..self.a.end - 1
    }

    /// Positions whose next-token prediction is supervised (VT and answer).
    pub fn loss_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.vt.clone().map(|p| p - 1).collect();
        rows.extend(self.answer_rows());
        rows
    }

    /// Length of the generation prompt: through the VT tag, or through the
    /// SEP after the question when there is no thinking span.
    pub fn prompt_len(&self) -> usize {
        self.vt.start
    }

    pub fn segment_ids(&self) -> Vec<usize> {
        self.roles.iter().map(|&r| r as usize).collect()
    }

    pub fn slot_ids(&self) -> Vec<usize> {
        self.slots.iter().map(|&s| s as usize).collect()
    }

    /// Row and column embedding indices (0 = no coordinate).
    pub fn coord_ids(&self) -> (Vec<usize>, Vec<usize>) {
        self.coords
            .iter()
            .map(|c| c.map_or((0, 0), |(r, c)| (r as usize + 1, c as usize + 1)))
            .unzip()
    }
}

fn push_grid(out: &mut Vec<TokenId>, g: &TokenGrid, vocab: &Vocabulary) {
    out.extend(g.cells.iter().map(|&t| vocab.visual(t)));
}

fn check_grid(g: &TokenGrid, shape: (usize, usize), what: &str) -> Result<()> {
    if g.shape() != shape || g.cells.len() != shape.0 * shape.1 {
        return Err(Error::Shape(format!(
            "{what} must be {shape:?}, got {:?}",
            g.shape()
        )));
    }
    if let Some(bad) = g.cells.iter().find(|t| !t.is_valid()) {
        return Err(Error::UnknownToken(format!(
            "{what} visual token {}",
            bad.0
        )));
    }
    Ok(())
}

/// `BOS V1 SEP V2 SEP Q SEP [tag VT SEP] ANS letter EOS`.
pub fn encode_trace(
    trace: &Trace,
    vt_type: VtType,
    vocab: &Vocabulary,
) -> Result<(Vec<TokenId>, SpanLayout)> {
    check_grid(&trace.v1, VIEW_SHAPE, "view 1")?;
    check_grid(&trace.v2, VIEW_SHAPE, "view 2")?;
    if trace.answer >= 4 {
        return Err(Error::Shape(format!("answer index {}", trace.answer)));
    }
    if let Some(bad) = trace.question.iter().find(|t| t.idx() >= vocab.len()) {
        return Err(Error::UnknownToken(format!("question token {bad}")));
    }
    let layout = SpanLayout::new(vt_type, trace.question.len());
    let mut out = Vec::with_capacity(layout.len);
    out.push(BOS);
    push_grid(&mut out, &trace.v1, vocab);
    out.push(SEP);
    push_grid(&mut out, &trace.v2, vocab);
    out.push(SEP);
    out.extend_from_slice(&trace.question);
    out.push(SEP);
    match (vt_type, &trace.vt) {
        (VtType::None, None) => {}
        (VtType::TextStub, Some(ThinkingImage::Text(words))) => {
            if words.len() != TEXT_STUB_LEN {
                return Err(Error::Shape(format!("rationale of {} tokens", words.len())));
            }
            out.push(VT_TEXT);
            out.extend_from_slice(words);
            out.push(SEP);
        }
        (v, Some(ThinkingImage::Grid(g))) if v.grid_kind().is_some() => {
            check_grid(g, layout.vt_shape, "thinking-image")?;
            out.push(v.tag().expect("grid types are tagged"));
            push_grid(&mut out, g, vocab);
            out.push(SEP);
        }
        (v, _) => {
            return Err(Error::Shape(format!(
                "thinking-image does not match vt_type {}",
                v.name()
            )))
        }
    }
    out.push(ANS);
    out.push(vocab.letter(trace.answer));
    out.push(EOS);
    debug_assert_eq!(out.len(), layout.len);
    Ok((out, layout))
}

fn expect(tokens: &[TokenId], pos: usize, want: TokenId, vocab: &Vocabulary) -> Result<()> {
    if tokens[pos] != want {
        return Err(Error::UnknownToken(format!(
            "position {pos}: expected {}, found {}",
            vocab.name(want).unwrap_or("?"),
            vocab.name(tokens[pos]).unwrap_or("?")
        )));
    }
    Ok(())
}

fn read_grid(
    tokens: &[TokenId],
    range: &Range<usize>,
    shape: (usize, usize),
    vocab: &Vocabulary,
) -> Result<TokenGrid> {
    let cells = tokens[range.clone()]
        .iter()
        .map(|&t| {
            vocab
                .as_visual(t)
                .ok_or_else(|| Error::UnknownToken(format!("non-visual token {t} in grid span")))
        })
        .collect::<Result<Vec<_>>>()?;
    TokenGrid::new(shape.0, shape.1, cells)
}

/// Inverse of [`encode_trace`].
pub fn decode_trace(
    tokens: &[TokenId],
    vt_type: VtType,
    vocab: &Vocabulary,
) -> Result<(Trace, SpanLayout)> {
    let layout = SpanLayout::from_len(vt_type, tokens.len())?;
    expect(tokens, 0, BOS, vocab)?;
    expect(tokens, layout.v1.end, SEP, vocab)?;
    expect(tokens, layout.v2.end, SEP, vocab)?;
    expect(tokens, layout.q.end, SEP, vocab)?;
    if let Some(tag) = vt_type.tag() {
        expect(tokens, layout.vt.start - 1, tag, vocab)?;
        expect(tokens, layout.vt.end, SEP, vocab)?;
    }
    expect(tokens, layout.a.start - 1, ANS, vocab)?;
    expect(tokens, layout.len - 1, EOS, vocab)?;
    let answer = vocab
        .letter_index(tokens[layout.a.start])
        .ok_or_else(|| Error::UnknownToken("answer is not an option letter".into()))?;
    let vt = match vt_type {
        VtType::None => None,
        VtType::TextStub => Some(ThinkingImage::Text(tokens[layout.vt.clone()].to_vec())),
        _ => Some(ThinkingImage::Grid(read_grid(
            tokens,
            &layout.vt,
            layout.vt_shape,
            vocab,
        )?)),
    };
    let trace = Trace {
        v1: read_grid(tokens, &layout.v1, VIEW_SHAPE, vocab)?,
        v2: read_grid(tokens, &layout.v2, VIEW_SHAPE, vocab)?,
        question: tokens[layout.q.clone()].to_vec(),
        vt,
        answer,
    };
    Ok((trace, layout))
}
