use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{AnswerOption, Category, Direction, ObjectKind, QAItem, Query, VisualToken};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const BOS: TokenId = TokenId(0);
pub const SEP: TokenId = TokenId(1);
pub const VT_PANO: TokenId = TokenId(2);
pub const VT_TOPDOWN: TokenId = TokenId(3);
pub const VT_POINT: TokenId = TokenId(4);
pub const VT_TEXT: TokenId = TokenId(5);
pub const ANS: TokenId = TokenId(6);
pub const EOS: TokenId = TokenId(7);

const CONTROL: [&str; 8] = [
    "<bos>",
    "<sep>",
    "<vt_pano>",
    "<vt_topdown>",
    "<vt_point>",
    "<vt_text>",
    "<ans>",
    "<eos>",
];
const VISUAL_BASE: u32 = CONTROL.len() as u32;

const WORDS: [&str; 26] = [
    "which",
    "object",
    "appears",
    "in",
    "both",
    "views",
    "?",
    "how",
    "many",
    "are",
    "the",
    "scene",
    "is",
    "closest",
    "farthest",
    "to",
    "direction",
    "from",
    "view",
    "two",
    "shared",
    "none",
    "total",
    "left",
    "right",
    "front",
];
const MORE_WORDS: [&str; 1] = ["behind"];
const LETTERS: [&str; 4] = ["A", "B", "C", "D"];
/// Count tokens cover every reachable option value (≤ 9 objects + 2).
pub const MAX_COUNT: u32 = 12;

/// Dense, stable token table shared by text, visual, and control tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut names: Vec<String> = CONTROL.iter().map(|s| s.to_string()).collect();
        names.extend(VisualToken::all().map(|v| format!("v:{}", v.name())));
        names.extend(WORDS.iter().chain(&MORE_WORDS).map(|w| format!("w:{w}")));
        names.extend(Category::ALL.iter().map(|c| format!("w:{}", c.plural())));
        names.extend(LETTERS.iter().map(|l| format!("opt:{l}")));
        names.extend((0..=MAX_COUNT).map(|n| format!("n:{n}")));
        Self::from_names(names).expect("standard vocabulary is well formed")
    }

    fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::Config(format!("duplicate token {n}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id.idx()).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Result<TokenId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownToken(name.to_string()))
    }

    fn word(&self, w: &str) -> TokenId {
        self.index[&format!("w:{w}")]
    }

    pub fn visual(&self, v: VisualToken) -> TokenId {
        TokenId(VISUAL_BASE + v.0 as u32)
    }

    pub fn as_visual(&self, id: TokenId) -> Option<VisualToken> {
        (VISUAL_BASE..VISUAL_BASE + VisualToken::COUNT as u32)
            .contains(&id.0)
            .then(|| VisualToken((id.0 - VISUAL_BASE) as u16))
    }

    pub fn visual_ids(&self) -> std::ops::Range<u32> {
        VISUAL_BASE..VISUAL_BASE + VisualToken::COUNT as u32
    }

    pub fn letter(&self, i: usize) -> TokenId {
        self.index[&format!("opt:{}", LETTERS[i])]
    }

    pub fn letters(&self) -> [TokenId; 4] {
        [0, 1, 2, 3].map(|i| self.letter(i))
    }

    pub fn letter_index(&self, id: TokenId) -> Option<usize> {
        self.letters().iter().position(|&l| l == id)
    }

    pub fn count(&self, n: u32) -> Result<TokenId> {
        self.id(&format!("n:{n}"))
    }

    fn object(&self, k: ObjectKind) -> TokenId {
        self.visual(VisualToken::object(k))
    }

    fn option(&self, o: &AnswerOption) -> Result<TokenId> {
        match o {
            AnswerOption::Object(k) => Ok(self.object(*k)),
            AnswerOption::Count(n) => self.count(*n),
            AnswerOption::Direction(d) => Ok(self.word(d.name())),
        }
    }

    /// Templated question words followed by `A <opt> B <opt> C <opt> D <opt>`.
    pub fn question_tokens(&self, item: &QAItem) -> Result<Vec<TokenId>> {
        let w = |s: &str| self.word(s);
        let mut out: Vec<TokenId> = match item.query {
            Query::Anchor => ["which", "object", "appears", "in", "both", "views", "?"]
                .map(w)
                .to_vec(),
            Query::Counting { category } => vec![
                w("how"),
                w("many"),
                self.index[&format!("w:{}", category.plural())],
                w("are"),
                w("in"),
                w("the"),
                w("scene"),
                w("?"),
            ],
            Query::RelDistance {
                reference,
                farthest,
            } => vec![
                w("which"),
                w("object"),
                w("is"),
                w(if farthest { "farthest" } else { "closest" }),
                w("to"),
                self.object(reference),
                w("?"),
            ],
            Query::RelDirection { target } => vec![
                w("in"),
                w("which"),
                w("direction"),
                w("is"),
                self.object(target),
                w("from"),
                w("view"),
                w("two"),
                w("?"),
            ],
        };
        for (i, o) in item.options.iter().enumerate() {
            out.push(self.letter(i));
            out.push(self.option(o)?);
        }
        Ok(out)
    }

    /// Fixed-length textual rationale used by the text-stub baseline:
    /// `shared o1 o2 o3 total n`, unused object slots filled with `none`.
    pub fn rationale_tokens(&self, shared: &[ObjectKind], total: usize) -> Result<Vec<TokenId>> {
        let mut out = vec![self.word("shared")];
        for i in 0..3 {
            out.push(shared.get(i).map_or(self.word("none"), |&k| self.object(k)));
        }
        out.push(self.word("total"));
        out.push(self.count(total as u32)?);
        Ok(out)
    }

    pub fn direction_token(&self, d: Direction) -> TokenId {
        self.word(d.name())
    }

    /// One `id<TAB>name` line per token.
    pub fn to_manifest(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{i}\t{n}\n"))
            .collect()
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.starts_with('#') {
                continue;
            }
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("vocab line {}: missing tab", line_no + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Config(format!("vocab line {}: bad id", line_no + 1)))?;
            if id != names.len() {
                return Err(Error::Config(format!("vocab ids must be dense, got {id}")));
            }
            names.push(name.to_string());
        }
        Self::from_names(names)
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.name(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_small() {
        let v = Vocabulary::standard();
        assert!(v.len() < 512);
        for i in 0..v.len() {
            let name = v.name(TokenId(i as u32)).unwrap();
            assert_eq!(v.id(name).unwrap(), TokenId(i as u32));
        }
        assert_eq!(v.name(BOS), Some("<bos>"));
        assert_eq!(v.name(EOS), Some("<eos>"));
        assert_eq!(v, Vocabulary::standard());
    }

    #[test]
    fn manifest_round_trips_bit_exactly() {
        let v = Vocabulary::standard();
        let text = v.to_manifest();
        let back = Vocabulary::from_manifest(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_manifest(), text);
    }

    #[test]
    fn visual_ids_map_both_ways() {
        let v = Vocabulary::standard();
        for t in VisualToken::all() {
            assert_eq!(v.as_visual(v.visual(t)), Some(t));
        }
        assert_eq!(v.as_visual(SEP), None);
        assert_eq!(v.as_visual(v.letter(0)), None);
    }

    #[test]
    fn corrupt_manifest_is_rejected() {
        assert!(Vocabulary::from_manifest("0\t<bos>\n2\t<sep>\n").is_err());
        assert!(Vocabulary::from_manifest("0 <bos>\n").is_err());
        assert!(Vocabulary::from_manifest("0\ta\n1\ta\n").is_err());
    }
}
