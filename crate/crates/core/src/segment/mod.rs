//! Splitting captions into detail units.
//!
//! Boundaries are proposed at the start of every sentence after the first,
//! before every prepositional phrase, before every verb group and before
//! coordinating conjunctions that follow a phrase. Three rules then remove
//! proposals, trading missed splits for fewer wrong ones:
//!
//! - `initial_the`: a sentence-initial noun phrase opened by "The" is never
//!   split from what follows it;
//! - `pp_attach`: `of`-phrases always stay with their noun, and the first
//!   other prepositional phrase after a noun phrase or verb stays attached;
//!   later phrases in the same run start new units;
//! - `pp_lead`: a unit opening with a preposition and containing no verb is
//!   merged with the next unit of the same sentence.
//!
//! Finally, units without a noun, adjective or verb are merged into their
//! successor (their predecessor, for the last unit). Rules only ever remove
//! boundaries, and joining the units with single spaces always gives back the
//! whitespace-normalized caption.

pub mod chunker;
pub mod tagger;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use chunker::{chunk, Chunk, Label};
pub use tagger::{align, tag, SuppliedToken, TaggedToken};

use crate::error::{Error, Result};
use chunker::Node;

/// One detail unit of a caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetailUnit {
    pub text: String,
    /// Range of whitespace-delimited words of the normalized caption.
    pub words: Range<usize>,
    /// 1-based position in the caption.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedCaption {
    pub image_id: String,
    pub source: String,
    pub units: Vec<DetailUnit>,
}

impl SegmentedCaption {
    /// Builds a caption from pre-split unit strings.
    pub fn from_units(image_id: impl Into<String>, units: &[impl AsRef<str>]) -> Result<Self> {
        let mut next = 0;
        let mut out = Vec::with_capacity(units.len());
        for (i, unit) in units.iter().enumerate() {
            let text = normalize(unit.as_ref());
            if text.is_empty() {
                return Err(Error::EmptyInput);
            }
            let n = text.split(' ').count();
            out.push(DetailUnit { text, words: next..next + n, index: i + 1 });
            next += n;
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        let source = out.iter().map(|u| u.text.as_str()).collect::<Vec<_>>().join(" ");
        Ok(Self { image_id: image_id.into(), source, units: out })
    }

    pub fn unit_texts(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(|u| u.text.as_str())
    }
}

/// Input line of the segmentation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<SuppliedToken>>,
}

/// Output line of the segmentation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub image_id: String,
    pub caption: String,
    pub units: Vec<String>,
}

impl From<&SegmentedCaption> for SegmentRecord {
    fn from(seg: &SegmentedCaption) -> Self {
        Self {
            image_id: seg.image_id.clone(),
            caption: seg.source.clone(),
            units: seg.unit_texts().map(str::to_owned).collect(),
        }
    }
}

impl TryFrom<&SegmentRecord> for SegmentedCaption {
    type Error = Error;

    fn try_from(record: &SegmentRecord) -> Result<Self> {
        let mut seg = SegmentedCaption::from_units(record.image_id.clone(), &record.units)?;
        seg.source = record.caption.clone();
        Ok(seg)
    }
}

pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Switches for the boundary-suppression rules; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRules {
    pub initial_the: bool,
    pub pp_attach: bool,
    pub pp_lead: bool,
}

impl Default for SegmentRules {
    fn default() -> Self {
        Self { initial_the: true, pp_attach: true, pp_lead: true }
    }
}

impl SegmentRules {
    pub const NONE: Self = Self { initial_the: false, pp_attach: false, pp_lead: false };
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Segmenter {
    pub rules: SegmentRules,
}

impl Segmenter {
    pub fn new(rules: SegmentRules) -> Self {
        Self { rules }
    }

    /// Segments a caption record, using its supplied tags when present.
    pub fn segment_record(&self, record: &CaptionRecord) -> Result<SegmentedCaption> {
        let tokens = match &record.tokens {
            Some(supplied) => align(&record.caption, supplied)?,
            None => tag(&record.caption)?,
        };
        self.segment_tagged(&record.image_id, &record.caption, &tokens)
    }

    pub fn segment(&self, image_id: &str, caption: &str) -> Result<SegmentedCaption> {
        self.segment_tagged(image_id, caption, &tag(caption)?)
    }

    pub fn segment_tagged(&self, image_id: &str, caption: &str, tokens: &[TaggedToken]) -> Result<SegmentedCaption> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut word_cursor = 0;
        let units = self
            .segment_ranges(tokens)
            .into_iter()
            .enumerate()
            .map(|(i, seg)| {
                let (start, end) = (tokens[seg.start].span.0, tokens[seg.end - 1].span.1);
                let text = normalize(&caption[start..end]);
                let n = text.split(' ').count();
                let words = word_cursor..word_cursor + n;
                word_cursor += n;
                DetailUnit { text, words, index: i + 1 }
            })
            .collect();
        Ok(SegmentedCaption { image_id: image_id.to_owned(), source: caption.to_owned(), units })
    }

    /// Token ranges of the detail units.
    fn segment_ranges(&self, tokens: &[TaggedToken]) -> Vec<Range<usize>> {
        let sentences = chunker::sentences(tokens);
        let sentence_starts: BTreeSet<usize> = sentences.iter().map(|s| s.start).collect();

        let mut boundaries = BTreeSet::new();
        for (si, sentence) in sentences.iter().enumerate() {
            let forest = chunker::parse_sentence(sentence.clone(), tokens);
            let mut atoms = Vec::new();
            flatten(&forest, tokens, &mut atoms);
            if si > 0 {
                boundaries.insert(sentence.start);
            }
            boundaries.extend(self.propose(&atoms, tokens));
        }

        let aligned: BTreeSet<usize> = boundaries.into_iter().filter_map(|b| align_to_whitespace(b, tokens)).collect();
        let mut segments = split(0..tokens.len(), &aligned);
        if self.rules.pp_lead {
            segments = merge_pp_led(segments, tokens, &sentence_starts);
        }
        merge_contentless(segments, tokens)
    }

    /// Boundary proposals inside one sentence, after `initial_the` and
    /// `pp_attach` suppression.
    fn propose(&self, atoms: &[Atom], tokens: &[TaggedToken]) -> Vec<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Head {
            None,
            Fresh,
            Attached,
        }
        let mut out = Vec::new();
        let mut head = Head::None;
        let tag = |atom: &Atom| tokens[atom.tokens.start].pos.as_str();
        for (ai, atom) in atoms.iter().enumerate() {
            let prev = ai.checked_sub(1).map(|p| &atoms[p]);
            match atom.kind {
                AtomKind::Np => head = Head::Fresh,
                AtomKind::Pp { of } => {
                    let keep = if !self.rules.pp_attach {
                        true
                    } else if of {
                        false
                    } else if head == Head::Fresh {
                        head = Head::Attached;
                        false
                    } else {
                        true
                    };
                    if keep && ai > 0 {
                        out.push(atom.tokens.start);
                    }
                }
                AtomKind::Leaf if tag(atom).starts_with("VB") => {
                    let continues_group = prev.is_some_and(|p| {
                        p.kind == AtomKind::Leaf && ["VB", "RB", "MD", "TO"].iter().any(|t| tag(p).starts_with(t))
                    });
                    if !continues_group {
                        let mut at = ai;
                        while at > 0
                            && atoms[at - 1].kind == AtomKind::Leaf
                            && matches!(tag(&atoms[at - 1]), "EX" | "WDT" | "WP" | "PRP" | "MD" | "RB")
                        {
                            at -= 1;
                        }
                        if at > 0 {
                            out.push(atoms[at].tokens.start);
                        }
                    }
                    head = Head::Fresh;
                }
                AtomKind::Leaf if tag(atom) == "CC" => {
                    if prev.is_some_and(|p| p.kind != AtomKind::Leaf || tag(p) == ",") {
                        out.push(atom.tokens.start);
                    }
                    head = Head::None;
                }
                AtomKind::Leaf if tag(atom).starts_with("RB") || tag(atom) == "POS" => {}
                AtomKind::Leaf => head = Head::None,
            }
        }
        if self.rules.initial_the {
            if let Some(first) = atoms.first().filter(|a| a.kind == AtomKind::Np) {
                if tokens[first.tokens.start].text.eq_ignore_ascii_case("the") {
                    out.retain(|&b| b != first.tokens.end);
                }
            }
        }
        out
    }
}

/// Segments a caption record with the default rules.
pub fn segment(record: &CaptionRecord) -> Result<SegmentedCaption> {
    Segmenter::default().segment_record(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AtomKind {
    Np,
    Pp { of: bool },
    Leaf,
}

#[derive(Debug, Clone)]
struct Atom {
    kind: AtomKind,
    tokens: Range<usize>,
}

/// Reduces a chunk forest to noun phrases, prepositional phrases and bare
/// tokens; the structural labels (VP, CLAUSE, CONJ) are opened up.
fn flatten(nodes: &[Node], tokens: &[TaggedToken], out: &mut Vec<Atom>) {
    for node in nodes {
        match node {
            Node::Token(i) => out.push(Atom { kind: AtomKind::Leaf, tokens: *i..*i + 1 }),
            Node::Phrase { label: Label::NP, tokens: range, .. } => {
                out.push(Atom { kind: AtomKind::Np, tokens: range.clone() })
            }
            Node::Phrase { label: Label::PP, tokens: range, .. } => {
                let of = tokens[range.start].text.eq_ignore_ascii_case("of");
                out.push(Atom { kind: AtomKind::Pp { of }, tokens: range.clone() })
            }
            Node::Phrase { children, .. } => flatten(children, tokens, out),
        }
    }
}

/// Moves a boundary left until it sits on whitespace, so that units can be
/// rejoined with single spaces.
fn align_to_whitespace(mut at: usize, tokens: &[TaggedToken]) -> Option<usize> {
    while at > 0 && tokens[at - 1].span.1 == tokens[at].span.0 {
        at -= 1;
    }
    (at > 0).then_some(at)
}

fn split(range: Range<usize>, boundaries: &BTreeSet<usize>) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = range.start;
    for &b in boundaries.range(range.start + 1..range.end) {
        out.push(start..b);
        start = b;
    }
    out.push(start..range.end);
    out
}

fn merge_pp_led(
    segments: Vec<Range<usize>>,
    tokens: &[TaggedToken],
    sentence_starts: &BTreeSet<usize>,
) -> Vec<Range<usize>> {
    let pp_led = |seg: &Range<usize>| {
        tokens[seg.clone()].iter().find(|t| !t.is_punct()).is_some_and(|t| t.pos == "IN" || t.pos == "TO")
            && !tokens[seg.clone()].iter().any(TaggedToken::is_verb)
    };
    let mut out: Vec<Range<usize>> = Vec::with_capacity(segments.len());
    let mut absorb = false;
    for seg in segments {
        match out.last_mut() {
            Some(last) if absorb && !sentence_starts.contains(&seg.start) => last.end = seg.end,
            _ => out.push(seg),
        }
        absorb = pp_led(out.last().expect("pushed"));
    }
    out
}

fn merge_contentless(segments: Vec<Range<usize>>, tokens: &[TaggedToken]) -> Vec<Range<usize>> {
    let has_content = |seg: &Range<usize>| tokens[seg.clone()].iter().any(TaggedToken::is_content);
    let mut out: Vec<Range<usize>> = Vec::with_capacity(segments.len());
    let mut pending: Option<usize> = None;
    for seg in segments {
        let seg = pending.take().map_or(seg.clone(), |start| start..seg.end);
        if has_content(&seg) {
            out.push(seg);
        } else {
            pending = Some(seg.start);
        }
    }
    if let Some(start) = pending {
        match out.last_mut() {
            Some(last) => last.end = tokens.len(),
            None => out.push(start..tokens.len()),
        }
    }
    out
}
