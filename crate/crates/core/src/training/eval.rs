use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::gridworld::QType;
use crate::harness::derive_seed;
use crate::model::{Model, Session};
use crate::sequence::{base_causal_mask, Vocabulary};
use crate::vdrop::{apply_vdrop, sample_drop_region, VDropConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Standard,
    /// A fresh rho = 0.5 region of one view is hidden from the answer row;
    /// the thinking-image is still generated from the full views.
    MaskedInput,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Standard => "standard",
            Condition::MaskedInput => "masked_input",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "masked_input" => Ok(Self::MaskedInput),
            _ => Err(Error::Config(format!("unknown eval condition `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub n: usize,
    pub correct: [usize; 4],
    pub total: [usize; 4],
    /// Non-visual tokens decoded inside grid thinking-image spans.
    pub malformed: usize,
    pub vt_tokens: usize,
    pub vt_matches: usize,
    /// Predicted option index per example, in input order.
    pub predictions: Vec<usize>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        let c: usize = self.correct.iter().sum();
        c as f64 / self.n.max(1) as f64
    }

    pub fn type_accuracy(&self, q: QType) -> Option<f64> {
        let i = q.index();
        (self.total[i] > 0).then(|| self.correct[i] as f64 / self.total[i] as f64)
    }

    /// Fraction of generated thinking-image tokens equal to the ground truth.
    pub fn vt_match_rate(&self) -> Option<f64> {
        (self.vt_tokens > 0).then(|| self.vt_matches as f64 / self.vt_tokens as f64)
    }
}

/// Greedy generation then constrained answer for every example.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    examples: &[Example],
    condition: Condition,
    seed: u64,
) -> Result<EvalReport> {
    let region_cfg = VDropConfig::default();
    let mut rep = EvalReport {
        condition,
        n: examples.len(),
        correct: [0; 4],
        total: [0; 4],
        malformed: 0,
        vt_tokens: 0,
        vt_matches: 0,
        predictions: Vec::with_capacity(examples.len()),
    };
    for ex in examples {
        let l = &ex.layout;
        let mut s = Session::prefill(model, vocab, &ex.tokens[..l.prompt_len()], l)?;
        let vt = s.decode_vt()?;
        rep.malformed += s.malformed();
        rep.vt_tokens += vt.len();
        rep.vt_matches += vt
            .iter()
            .zip(&ex.tokens[l.vt.clone()])
            .filter(|(a, b)| a == b)
            .count();
        let mask = match condition {
            Condition::Standard => None,
            Condition::MaskedInput => {
                // keyed by item, so results do not depend on dataset order
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    &format!("masked-input/{}", ex.key),
                ));
                let region = sample_drop_region((4, 5), &region_cfg, &mut rng)?;
                Some(apply_vdrop(&base_causal_mask(l, l.len), l, &region)?)
            }
        };
        let a = s.answer(mask.as_ref(), false)?;
        rep.predictions.push(a.letter);
        rep.total[ex.qtype.index()] += 1;
        if a.letter == ex.gold {
            rep.correct[ex.qtype.index()] += 1;
        }
    }
    Ok(rep)
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub condition: String,
    pub n: usize,
    pub overall: f64,
    pub per_type: BTreeMap<String, f64>,
    pub malformed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vt_match_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl MetricsRecord {
    pub fn new(step: u64, r: &EvalReport) -> Self {
        Self {
            step,
            condition: r.condition.name().into(),
            n: r.n,
            overall: r.accuracy(),
            per_type: QType::ALL
                .iter()
                .filter_map(|&q| r.type_accuracy(q).map(|a| (q.name().to_string(), a)))
                .collect(),
            malformed: r.malformed,
            vt_match_rate: r.vt_match_rate(),
            manifest: None,
        }
    }
}
