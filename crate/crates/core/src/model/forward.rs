use serde::Serialize;

use super::Model;
use crate::numerics::{is_blocked, Tape, Tensor, Var};
use crate::sequence::{AttnMask, SpanLayout, TokenId};
use crate::{Error, Result};

pub struct ForwardOutput {
    /// `seq_len × vocab` next-token logits.
    pub logits: Tensor,
    /// `[layer][head]` attention matrices, when captured.
    pub attention: Option<Vec<Vec<Tensor>>>,
}

/// Per-position embedding indices for the first `n` positions of `layout`.
pub(crate) fn position_ids(layout: &SpanLayout, n: usize) -> [Vec<usize>; 4] {
    let seg = layout.segment_ids()[..n].to_vec();
    let (rows, cols) = layout.coord_ids();
    let slots = layout.slot_ids()[..n].to_vec();
    [seg, rows[..n].to_vec(), cols[..n].to_vec(), slots]
}

fn check_inputs(
    model: &Model,
    tokens: &[TokenId],
    layout: &SpanLayout,
    mask: &AttnMask,
) -> Result<()> {
    let n = tokens.len();
    if n == 0 || n > layout.len {
        return Err(Error::Shape(format!(
            "{n} tokens for a layout of {}",
            layout.len
        )));
    }
    if n > model.cfg.max_len {
        return Err(Error::Shape(format!(
            "{n} tokens exceed max_len {}",
            model.cfg.max_len
        )));
    }
    if mask.size() != n {
        return Err(Error::Shape(format!(
            "mask is {0}x{0} for {n} tokens",
            mask.size()
        )));
    }
    if let Some(t) = tokens.iter().find(|t| t.idx() >= model.cfg.vocab) {
        return Err(Error::UnknownToken(format!(
            "token id {t} outside vocabulary"
        )));
    }
    for q in 0..n {
        if let Some(k) = (q + 1..n).find(|&k| !is_blocked(mask.row(q)[k])) {
            return Err(Error::Shape(format!(
                "mask lets position {q} attend to future position {k}"
            )));
        }
    }
    Ok(())
}

impl Model {
    /// Puts every parameter on `tape` (trainable or constant), in store order.
    pub fn leaf_params(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Records one sample's forward pass. Returns the logits node and, when
    /// `capture` is set, the `[layer][head]` attention nodes.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        tokens: &[TokenId],
        layout: &SpanLayout,
        mask: &AttnMask,
        capture: bool,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        check_inputs(self, tokens, layout, mask)?;
        let n = tokens.len();
        let cfg = &self.cfg;
        let ix = &self.idx;
        let ids: Vec<usize> = tokens.iter().map(|t| t.idx()).collect();
        let positions: Vec<usize> = (0..n).collect();
        let [seg, rows, cols, slots] = position_ids(layout, n);

        let mut x = tape.gather(pv[ix.tok], &ids)?;
        for (table, idx) in [
            (ix.pos, &positions),
            (ix.seg, &seg),
            (ix.row, &rows),
            (ix.col, &cols),
            (ix.slot, &slots),
        ] {
            let e = tape.gather(pv[table], idx)?;
            x = tape.add(x, e)?;
        }

        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut captured = Vec::new();
        for li in &ix.layers {
            let h = tape.layer_norm(x, pv[li.ln1_g], pv[li.ln1_b])?;
            let q = tape.matmul(h, pv[li.wq], false)?;
            let k = tape.matmul(h, pv[li.wk], false)?;
            let v = tape.matmul(h, pv[li.wv], false)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            let mut layer_attn = Vec::new();
            for hd in 0..cfg.heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let s = tape.matmul(qh, kh, true)?;
                let s = tape.scale(s, scale)?;
                let a = tape.masked_softmax(s, mask.data())?;
                if capture {
                    layer_attn.push(a);
                }
                heads.push(tape.matmul(a, vh, false)?);
            }
            captured.push(layer_attn);
            let cat = tape.concat_cols(&heads)?;
            let o = tape.matmul(cat, pv[li.wo], false)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x, pv[li.ln2_g], pv[li.ln2_b])?;
            let u = tape.matmul(h, pv[li.w1], false)?;
            let u = tape.add_row(u, pv[li.b1])?;
            let u = tape.gelu(u)?;
            let o = tape.matmul(u, pv[li.w2], false)?;
            let o = tape.add_row(o, pv[li.b2])?;
            x = tape.add(x, o)?;
        }
        let h = tape.layer_norm(x, pv[ix.lnf_g], pv[ix.lnf_b])?;
        let logits = tape.matmul(h, pv[ix.head], false)?;
        let logits = tape.add_row(logits, pv[ix.head_b])?;
        if !capture {
            captured.clear();
        }
        Ok((logits, captured))
    }

    /// Non-differentiable forward pass over a whole (prefix of a) sequence.
    pub fn forward(
        &self,
        tokens: &[TokenId],
        layout: &SpanLayout,
        mask: &AttnMask,
        capture_attention: bool,
    ) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let pv = self.leaf_params(&mut tape, false)?;
        let (logits, attn) =
            self.forward_tape(&mut tape, &pv, tokens, layout, mask, capture_attention)?;
        let attention = capture_attention.then(|| {
            attn.iter()
                .map(|l| l.iter().map(|&a| tape.value(a).clone()).collect())
                .collect()
        });
        Ok(ForwardOutput {
            logits: tape.value(logits).clone(),
            attention,
        })
    }
}

#[derive(Serialize)]
struct AttentionExport<'a> {
    seq_len: usize,
    layers: usize,
    heads: usize,
    roles: Vec<&'static str>,
    /// `[layer][head][query][key]`
    weights: Vec<Vec<Vec<&'a [f64]>>>,
}

/// Serializes captured attention for offline analysis.
pub fn attention_json(layout: &SpanLayout, attention: &[Vec<Tensor>]) -> Result<String> {
    let seq_len = attention
        .first()
        .and_then(|l| l.first())
        .map_or(0, |t| t.rows());
    let export = AttentionExport {
        seq_len,
        layers: attention.len(),
        heads: attention.first().map_or(0, Vec::len),
        roles: layout.roles[..seq_len].iter().map(|r| r.name()).collect(),
        weights: attention
            .iter()
            .map(|l| {
                l.iter()
                    .map(|t| (0..t.rows()).map(|r| t.row(r)).collect())
                    .collect()
            })
            .collect(),
    };
    Ok(serde_json::to_string(&export)?)
}

/// Supervised rows (thinking-image and answer predictions) and their next-token targets.
pub fn supervised_targets(tokens: &[TokenId], layout: &SpanLayout) -> (Vec<usize>, Vec<usize>) {
    let rows = layout.loss_rows();
    let targets = rows.iter().map(|&r| tokens[r + 1].idx()).collect();
    (rows, targets)
}
