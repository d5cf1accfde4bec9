use super::Model;
use crate::gridworld::VisualToken;
use crate::numerics::softmax::softmax_row_into;
use crate::numerics::tape::{gelu, LN_EPS};
use crate::numerics::tensor::gemm;
use crate::sequence::{AttnMask, SpanLayout, TokenId, Vocabulary, VtType, ANS, SEP};
use crate::{Error, Result};

/// Incremental inference with per-layer key/value caches.
pub struct Decoder<'a> {
    model: &'a Model,
    layout: SpanLayout,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    tokens: Vec<TokenId>,
}

pub struct StepOutput {
    pub logits: Vec<f64>,
    /// `[layer][head][key]` weights of this query row, when captured.
    pub attention: Option<Vec<Vec<Vec<f64>>>>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    let rs = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(g)
        .zip(b)
        .map(|((v, g), b)| (v - mean) * rs * g + b)
        .collect()
}

fn vec_mat(x: &[f64], w: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_dim];
    gemm(x, false, w, false, &mut out, 1, x.len(), out_dim, false);
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a Model, layout: &SpanLayout) -> Self {
        Self {
            model,
            layout: layout.clone(),
            keys: vec![Vec::new(); model.cfg.layers],
            values: vec![Vec::new(); model.cfg.layers],
            tokens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn layout(&self) -> &SpanLayout {
        &self.layout
    }

    /// Drops cached positions from `len` on.
    pub fn truncate(&mut self, len: usize) {
        let d = self.model.cfg.dim;
        self.tokens.truncate(len);
        for (k, v) in self.keys.iter_mut().zip(&mut self.values) {
            k.truncate(len * d);
            v.truncate(len * d);
        }
    }

    /// Appends `token` at the next position. `mask_row` (additive, covering
    /// positions `0..=pos`) defaults to full causal visibility.
    pub fn push(
        &mut self,
        token: TokenId,
        mask_row: Option<&[f64]>,
        capture: bool,
    ) -> Result<StepOutput> {
        let m = self.model;
        let cfg = &m.cfg;
        let ix = &m.idx;
        let pos = self.tokens.len();
        if pos >= self.layout.len || pos >= cfg.max_len {
            return Err(Error::Shape(format!(
                "position {pos} beyond the sequence layout"
            )));
        }
        if token.idx() >= cfg.vocab {
            return Err(Error::UnknownToken(format!(
                "token id {token} outside vocabulary"
            )));
        }
        let open = vec![0.0; pos + 1];
        let mask_row = match mask_row {
            Some(r) if r.len() < pos + 1 => {
                return Err(Error::Shape(format!(
                    "mask row of {} for position {pos}",
                    r.len()
                )))
            }
            Some(r) => &r[..pos + 1],
            None => &open[..],
        };
        let d = cfg.dim;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let seg = self.layout.roles[pos] as usize;
        let (row, col) =
            self.layout.coords[pos].map_or((0, 0), |(r, c)| (r as usize + 1, c as usize + 1));

        let mut x: Vec<f64> = m.p(ix.tok).row(token.idx()).to_vec();
        let slot = self.layout.slots[pos] as usize;
        for (table, i) in [
            (ix.pos, pos),
            (ix.seg, seg),
            (ix.row, row),
            (ix.col, col),
            (ix.slot, slot),
        ] {
            for (a, b) in x.iter_mut().zip(m.p(table).row(i)) {
                *a += b;
            }
        }

        let mut attention = capture.then(Vec::new);
        let mut weights = vec![0.0; pos + 1];
        let mut scores = vec![0.0; pos + 1];
        for (l, li) in ix.layers.iter().enumerate() {
            let h = layer_norm(&x, m.p(li.ln1_g).data(), m.p(li.ln1_b).data());
            let q = vec_mat(&h, m.p(li.wq).data(), d);
            let k = vec_mat(&h, m.p(li.wk).data(), d);
            let v = vec_mat(&h, m.p(li.wv).data(), d);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut cat = vec![0.0; d];
            let mut layer_attn = Vec::new();
            for hd in 0..cfg.heads {
                let qh = &q[hd * dh..(hd + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + hd * dh..j * d + (hd + 1) * dh];
                    *s = qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_row_into(&scores, mask_row, &mut weights)
                    .map_err(|_| Error::DegenerateAttention { row: pos })?;
                let out = &mut cat[hd * dh..(hd + 1) * dh];
                for (j, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let vj = &values[j * d + hd * dh..j * d + (hd + 1) * dh];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
                if capture {
                    layer_attn.push(weights.clone());
                }
            }
            if let Some(a) = attention.as_mut() {
                a.push(layer_attn);
            }
            let o = vec_mat(&cat, m.p(li.wo).data(), d);
            for (a, b) in x.iter_mut().zip(&o) {
                *a += b;
            }
            let h = layer_norm(&x, m.p(li.ln2_g).data(), m.p(li.ln2_b).data());
            let mut u = vec_mat(&h, m.p(li.w1).data(), cfg.mlp_dim());
            for (a, b) in u.iter_mut().zip(m.p(li.b1).data()) {
                *a = gelu(*a + b);
            }
            let o = vec_mat(&u, m.p(li.w2).data(), d);
            for ((a, b), c) in x.iter_mut().zip(&o).zip(m.p(li.b2).data()) {
                *a += b + c;
            }
        }
        let h = layer_norm(&x, m.p(ix.lnf_g).data(), m.p(ix.lnf_b).data());
        let mut logits = vec_mat(&h, m.p(ix.head).data(), cfg.vocab);
        for (a, b) in logits.iter_mut().zip(m.p(ix.head_b).data()) {
            *a += b;
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits at position {pos}")));
        }
        self.tokens.push(token);
        Ok(StepOutput { logits, attention })
    }
}

/// Answer-letter prediction read at the ANS position.
#[derive(Clone, Debug)]
pub struct AnswerOutput {
    /// Option index 0..4 (A..D).
    pub letter: usize,
    pub letter_logits: [f64; 4],
    /// `[layer][head][key]` weights of the answer query row.
    pub attention: Option<Vec<Vec<Vec<f64>>>>,
}

/// Greedy generation state: prompt, thinking-image, then answer queries that
/// can be repeated under different answer-row masks.
pub struct Session<'a> {
    dec: Decoder<'a>,
    vocab: &'a Vocabulary,
    last_logits: Vec<f64>,
    malformed: usize,
}

impl<'a> Session<'a> {
    /// Runs the prompt (through the thinking-image tag, or through the SEP
    /// after the question when there is no thinking span).
    pub fn prefill(
        model: &'a Model,
        vocab: &'a Vocabulary,
        prefix: &[TokenId],
        layout: &SpanLayout,
    ) -> Result<Self> {
        if prefix.len() != layout.prompt_len() {
            return Err(Error::Shape(format!(
                "prompt of {} tokens, layout expects {}",
                prefix.len(),
                layout.prompt_len()
            )));
        }
        let mut dec = Decoder::new(model, layout);
        let mut last = Vec::new();
        for &t in prefix {
            last = dec.push(t, None, false)?.logits;
        }
        Ok(Self {
            dec,
            vocab,
            last_logits: last,
            malformed: 0,
        })
    }

    pub fn decoder(&self) -> &Decoder<'a> {
        &self.dec
    }

    pub fn malformed(&self) -> usize {
        self.malformed
    }

    fn vt_range(&self) -> std::ops::Range<usize> {
        self.dec.layout.vt.clone()
    }

    /// Greedily decodes the thinking-image span (exactly its declared length)
    /// and appends the closing SEP. Non-visual tokens in a grid span become
    /// EMPTY and count as malformed.
    pub fn decode_vt(&mut self) -> Result<Vec<TokenId>> {
        let grid = self.dec.layout.vt_type.grid_kind().is_some();
        let empty = self.vocab.visual(VisualToken::EMPTY);
        let mut out = Vec::with_capacity(self.vt_range().len());
        for _ in self.vt_range() {
            let mut t = TokenId(argmax(&self.last_logits) as u32);
            if grid && self.vocab.as_visual(t).is_none() {
                t = empty;
                self.malformed += 1;
            }
            self.last_logits = self.dec.push(t, None, false)?.logits;
            out.push(t);
        }
        self.close_vt()?;
        Ok(out)
    }

    /// Teacher-forces a given thinking-image span.
    pub fn force_vt(&mut self, vt: &[TokenId]) -> Result<()> {
        if vt.len() != self.vt_range().len() {
            return Err(Error::Shape(format!(
                "thinking-image of {} tokens, span holds {}",
                vt.len(),
                self.vt_range().len()
            )));
        }
        for &t in vt {
            self.last_logits = self.dec.push(t, None, false)?.logits;
        }
        self.close_vt()
    }

    fn close_vt(&mut self) -> Result<()> {
        if self.dec.layout.vt_type != VtType::None {
            self.last_logits = self.dec.push(SEP, None, false)?.logits;
        }
        Ok(())
    }

    /// Predicts the answer letter at the ANS position. `mask` (full
    /// sequence size) supplies the answer row; the cache is left unchanged so
    /// the call can be repeated under other masks.
    pub fn answer(&mut self, mask: Option<&AttnMask>, capture: bool) -> Result<AnswerOutput> {
        let pos = self.dec.layout.answer_rows().start;
        if self.dec.len() != pos {
            return Err(Error::Shape(format!(
                "answer requested at position {} but the ANS slot is {pos}",
                self.dec.len()
            )));
        }
        let row = mask.map(|m| m.row(pos));
        let step = self.dec.push(ANS, row, capture)?;
        self.dec.truncate(pos);
        let letters = self.vocab.letters();
        let letter_logits = letters.map(|t| step.logits[t.idx()]);
        Ok(AnswerOutput {
            letter: argmax(&letter_logits),
            letter_logits,
            attention: step.attention,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub vt: Vec<TokenId>,
    pub malformed: usize,
    pub answer: usize,
    pub letter_logits: [f64; 4],
}

/// Thinking-image then constrained answer letter, greedy, unmasked.
pub fn generate(
    model: &Model,
    vocab: &Vocabulary,
    prefix: &[TokenId],
    layout: &SpanLayout,
) -> Result<Generation> {
    let mut s = Session::prefill(model, vocab, prefix, layout)?;
    let vt = s.decode_vt()?;
    let a = s.answer(None, false)?;
    Ok(Generation {
        vt,
        malformed: s.malformed(),
        answer: a.letter,
        letter_logits: a.letter_logits,
    })
}
