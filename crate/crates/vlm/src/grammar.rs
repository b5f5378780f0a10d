//! The offline mini-grammar: clauses joined by `;`, each
//! `<verb phrase> the <ordinal|side> <noun> [from the <side>] <rest>`.

use serde::{Deserialize, Serialize};

use mirage_core::BoundingBox;

use crate::error::{Result, VlmError};

/// One `(referring expression, sub-instruction)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub refer: String,
    pub edit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Decomposition {
    pub pairs: Vec<Pair>,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every referent is copied verbatim from `instruction`.
    pub fn referents_are_spans_of(&self, instruction: &str) -> bool {
        self.pairs.iter().all(|p| !p.refer.is_empty() && instruction.contains(&p.refer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    /// Zero-based rank along the axis.
    Rank(usize),
    Last,
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Referent {
    pub position: Position,
    pub axis: Axis,
    pub noun: String,
}

fn position_word(w: &str) -> Option<(Position, Option<Axis>)> {
    use Axis::*;
    use Position::*;
    Some(match w {
        "first" => (Rank(0), None),
        "second" => (Rank(1), None),
        "third" => (Rank(2), None),
        "fourth" => (Rank(3), None),
        "fifth" => (Rank(4), None),
        "last" => (Last, None),
        "middle" | "center" | "central" => (Middle, None),
        "leftmost" | "left" => (Rank(0), Some(LeftToRight)),
        "rightmost" | "right" => (Rank(0), Some(RightToLeft)),
        "topmost" | "top" => (Rank(0), Some(TopToBottom)),
        "bottommost" | "bottom" => (Rank(0), Some(BottomToTop)),
        _ => return None,
    })
}

fn from_side(w: &str) -> Option<Axis> {
    Some(match w {
        "left" => Axis::LeftToRight,
        "right" => Axis::RightToLeft,
        "top" => Axis::TopToBottom,
        "bottom" => Axis::BottomToTop,
        _ => return None,
    })
}

fn is_noun(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_alphabetic() || c == '-')
}

const DANGLING: [&str; 7] = ["to", "on", "onto", "of", "in", "from", "for"];

/// Whitespace tokens with their byte spans.
fn tokens(s: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(b)) => {
                out.push((b, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push((b, s.len()));
    }
    out
}

/// Parses a referring expression of the grammar.
pub fn parse_referent(text: &str) -> Option<Referent> {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let (referent, used) = referent_at(&words, 0)?;
    (used == words.len()).then_some(referent)
}

/// Referent starting at `words[i]` (which must be "the"); returns it and the
/// number of words consumed.
fn referent_at(words: &[String], i: usize) -> Option<(Referent, usize)> {
    if words.get(i)? != "the" {
        return None;
    }
    let (position, side_axis) = position_word(words.get(i + 1)?)?;
    let noun = words.get(i + 2)?;
    if !is_noun(noun) {
        return None;
    }
    let mut used = 3;
    let mut axis = side_axis.unwrap_or(Axis::LeftToRight);
    if side_axis.is_none()
        && words.get(i + 3).map(String::as_str) == Some("from")
        && words.get(i + 4).map(String::as_str) == Some("the")
    {
        if let Some(a) = words.get(i + 5).and_then(|w| from_side(w)) {
            axis = a;
            used = 6;
        }
    }
    Some((
        Referent {
            position,
            axis,
            noun: noun.clone(),
        },
        used,
    ))
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn parse_clause(instruction: &str, offset: usize, clause: &str, index: usize) -> Result<Pair> {
    let spans: Vec<(usize, usize)> = tokens(clause);
    let words: Vec<String> = spans
        .iter()
        .map(|&(a, b)| clause[a..b].trim_end_matches(['.', ',']).to_lowercase())
        .collect();
    let grammar = |message: String| VlmError::Grammar { clause: index, message };
    if words.is_empty() {
        return Err(grammar("empty clause".into()));
    }
    let (start, (_, used)) = (1..words.len())
        .find_map(|i| referent_at(&words, i).map(|r| (i, r)))
        .ok_or_else(|| grammar(format!("no \"the <ordinal|side> <noun>\" referent in {clause:?}")))?;
    let end = start + used;
    let (a, _) = spans[start];
    let (_, mut b) = spans[end - 1];
    // Trailing punctuation belongs to the sentence, not the referent.
    while clause[..b].ends_with(['.', ',']) {
        b -= 1;
    }
    let refer = &instruction[offset + a..offset + b];

    let raw = |r: std::ops::Range<usize>| -> Vec<&str> {
        spans[r].iter().map(|&(a, b)| clause[a..b].trim_end_matches(['.', ','])).filter(|w| !w.is_empty()).collect()
    };
    let mut verb = raw(0..start);
    let rest = raw(end..spans.len());
    if rest.is_empty() {
        while verb.len() > 1 && DANGLING.contains(&verb[verb.len() - 1].to_lowercase().as_str()) {
            verb.pop();
        }
    }
    let edit = lower_first(&verb.into_iter().chain(rest).collect::<Vec<_>>().join(" "));
    Ok(Pair {
        refer: refer.to_string(),
        edit,
    })
}

/// Deterministic decomposition of a mini-grammar instruction.
pub fn stub_decompose(instruction: &str) -> Result<Decomposition> {
    if instruction.trim().is_empty() {
        return Err(VlmError::Empty("instruction".into()));
    }
    let mut pairs = Vec::new();
    let mut offset = 0;
    for (index, clause) in instruction.split(';').enumerate() {
        if !clause.trim().is_empty() {
            pairs.push(parse_clause(instruction, offset, clause, index)?);
        }
        offset += clause.len() + 1;
    }
    if pairs.is_empty() {
        return Err(VlmError::Empty("instruction has no clauses".into()));
    }
    Ok(Decomposition { pairs })
}

/// A detectable object: optional category plus its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub category: Option<String>,
    pub bbox: BoundingBox,
}

fn singular(w: &str) -> &str {
    w.strip_suffix('s').filter(|s| s.len() > 1).unwrap_or(w)
}

/// Index of the object the referent picks out. Candidates without a category
/// match any noun.
pub fn resolve(referent: &Referent, candidates: &[Candidate]) -> Option<usize> {
    let noun = singular(&referent.noun);
    let mut pool: Vec<usize> = (0..candidates.len())
        .filter(|&i| match &candidates[i].category {
            Some(c) => singular(&c.to_lowercase()) == noun,
            None => true,
        })
        .collect();
    let key = |i: usize| {
        let b = &candidates[i].bbox;
        let (cx, cy) = (b.x0 + b.x1, b.y0 + b.y1);
        match referent.axis {
            Axis::LeftToRight => (cx as i64, cy as i64),
            Axis::RightToLeft => (-(cx as i64), cy as i64),
            Axis::TopToBottom => (cy as i64, cx as i64),
            Axis::BottomToTop => (-(cy as i64), cx as i64),
        }
    };
    pool.sort_by_key(|&i| key(i));
    let n = pool.len();
    let rank = match referent.position {
        Position::Rank(k) => k,
        Position::Last => n.checked_sub(1)?,
        Position::Middle if n % 2 == 1 => n / 2,
        Position::Middle => return None,
    };
    pool.get(rank).copied()
}

pub const ORDINALS: [&str; 5] = ["first", "second", "third", "fourth", "fifth"];
