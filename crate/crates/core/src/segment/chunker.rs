//! Cascaded regular-expression chunking over POS tags.
//!
//! The grammar, in order:
//!
//! ```text
//! NP:     {<DT>?<JJ.*>*<NN.*>+}
//! VP:     {<VB.*><NP|PP|CLAUSE>+$}
//! PP:     {<IN><NP>}
//! CLAUSE: {<NP><VP>}
//! CONJ:   {<CC><NP|VP|PP|CLAUSE>}
//! ```
//!
//! Rules refer to chunks produced by later rules, so all five are applied
//! repeatedly, leftmost-longest, until a full round changes nothing. `$`
//! anchors to the end of the sentence, ignoring trailing punctuation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tagger::TaggedToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NP,
    VP,
    PP,
    #[serde(rename = "CLAUSE")]
    Clause,
    #[serde(rename = "CONJ")]
    Conj,
    O,
}

/// A top-level chunk; consecutive chunks tile the token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub label: Label,
    pub tokens: Range<usize>,
}

/// A node of the chunk forest: either a single token or a labeled phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Token(usize),
    Phrase { label: Label, tokens: Range<usize>, children: Vec<Node> },
}

impl Node {
    pub fn tokens(&self) -> Range<usize> {
        match self {
            Node::Token(i) => *i..*i + 1,
            Node::Phrase { tokens, .. } => tokens.clone(),
        }
    }

    pub fn label(&self) -> Option<Label> {
        match self {
            Node::Token(_) => None,
            Node::Phrase { label, .. } => Some(*label),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Symbol {
    Tag(&'static str),
    TagPrefix(&'static str),
    Phrase(&'static [Label]),
}

#[derive(Debug, Clone, Copy)]
enum Repeat {
    One,
    Optional,
    Star,
    Plus,
}

struct Rule {
    label: Label,
    pattern: &'static [(Symbol, Repeat)],
    anchored_end: bool,
}

use Repeat::*;
use Symbol::*;

const RULES: &[Rule] = &[
    Rule {
        label: Label::NP,
        pattern: &[(Tag("DT"), Optional), (TagPrefix("JJ"), Star), (TagPrefix("NN"), Plus)],
        anchored_end: false,
    },
    Rule {
        label: Label::VP,
        pattern: &[(TagPrefix("VB"), One), (Phrase(&[Label::NP, Label::PP, Label::Clause]), Plus)],
        anchored_end: true,
    },
    Rule { label: Label::PP, pattern: &[(Tag("IN"), One), (Phrase(&[Label::NP]), One)], anchored_end: false },
    Rule {
        label: Label::Clause,
        pattern: &[(Phrase(&[Label::NP]), One), (Phrase(&[Label::VP]), One)],
        anchored_end: false,
    },
    Rule {
        label: Label::Conj,
        pattern: &[(Tag("CC"), One), (Phrase(&[Label::NP, Label::VP, Label::PP, Label::Clause]), One)],
        anchored_end: false,
    },
];

fn symbol_matches(symbol: Symbol, node: &Node, tokens: &[TaggedToken]) -> bool {
    match (symbol, node) {
        (Tag(tag), Node::Token(i)) => tokens[*i].pos == tag,
        (TagPrefix(prefix), Node::Token(i)) => tokens[*i].pos.starts_with(prefix),
        (Phrase(labels), Node::Phrase { label, .. }) => labels.contains(label),
        _ => false,
    }
}

/// Longest match of `pattern` against `nodes[at..]`; returns the end index.
fn longest_match(
    pattern: &[(Symbol, Repeat)],
    nodes: &[Node],
    at: usize,
    tokens: &[TaggedToken],
    anchored_end: bool,
) -> Option<usize> {
    let Some((&(symbol, repeat), rest)) = pattern.split_first() else {
        return (!anchored_end || at == nodes.len()).then_some(at);
    };
    let run = nodes[at..].iter().take_while(|n| symbol_matches(symbol, n, tokens)).count();
    let (min, max) = match repeat {
        One => (1, 1),
        Optional => (0, 1),
        Star => (0, run),
        Plus => (1, run),
    };
    (min..=max.min(run)).rev().find_map(|k| longest_match(rest, nodes, at + k, tokens, anchored_end))
}

fn apply_rule(rule: &Rule, nodes: Vec<Node>, tokens: &[TaggedToken]) -> (Vec<Node>, bool) {
    let mut out = Vec::with_capacity(nodes.len());
    let mut changed = false;
    let mut at = 0;
    while at < nodes.len() {
        match longest_match(rule.pattern, &nodes, at, tokens, rule.anchored_end) {
            Some(end) if end > at => {
                let children = nodes[at..end].to_vec();
                let range = children[0].tokens().start..children[end - at - 1].tokens().end;
                out.push(Node::Phrase { label: rule.label, tokens: range, children });
                changed = true;
                at = end;
            }
            _ => {
                out.push(nodes[at].clone());
                at += 1;
            }
        }
    }
    (out, changed)
}

fn cascade(range: Range<usize>, tokens: &[TaggedToken]) -> Vec<Node> {
    let mut nodes: Vec<Node> = range.map(Node::Token).collect();
    loop {
        let mut any = false;
        for rule in RULES {
            let (next, changed) = apply_rule(rule, nodes, tokens);
            nodes = next;
            any |= changed;
        }
        if !any {
            return nodes;
        }
    }
}

/// Token ranges of the sentences in `tokens`; each ends after a `.`-tagged token.
pub fn sentences(tokens: &[TaggedToken]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.pos == "." {
            // closing quotes/brackets right after the terminator stay with it
            out.push(start..i + 1);
            start = i + 1;
        } else if start == i && matches!(t.pos.as_str(), "''" | "-RRB-") && !out.is_empty() {
            let last: &mut Range<usize> = out.last_mut().expect("non-empty");
            last.end = i + 1;
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(start..tokens.len());
    }
    out
}

/// Builds the chunk forest of one sentence.
pub fn parse_sentence(sentence: Range<usize>, tokens: &[TaggedToken]) -> Vec<Node> {
    let core_end =
        (sentence.start..sentence.end).rev().find(|&i| !tokens[i].is_punct()).map_or(sentence.start, |i| i + 1);
    let mut nodes = cascade(sentence.start..core_end, tokens);
    nodes.extend((core_end..sentence.end).map(Node::Token));
    nodes
}

/// Chunk forest for a whole caption, sentence by sentence.
pub fn parse(tokens: &[TaggedToken]) -> Vec<Vec<Node>> {
    sentences(tokens).into_iter().map(|s| parse_sentence(s, tokens)).collect()
}

/// Top-level chunks; tokens not covered by any rule become `O` chunks.
pub fn chunk(tokens: &[TaggedToken]) -> Vec<Chunk> {
    parse(tokens)
        .into_iter()
        .flatten()
        .map(|node| Chunk { label: node.label().unwrap_or(Label::O), tokens: node.tokens() })
        .collect()
}
