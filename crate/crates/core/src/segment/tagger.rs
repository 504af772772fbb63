//! Tokenizer and a small lexicon + suffix part-of-speech tagger.
//!
//! The tagger emits Penn Treebank tags. It knows the closed word classes,
//! a few hundred frequent caption words and a handful of suffix and context
//! rules; everything else defaults to `NN`. Callers holding gold tags should
//! pass them through [`align`] instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub text: String,
    pub pos: String,
    /// Byte range `[start, end)` in the source caption.
    pub span: (usize, usize),
}

impl TaggedToken {
    pub fn is_verb(&self) -> bool {
        self.pos.starts_with("VB")
    }

    pub fn is_content(&self) -> bool {
        ["NN", "JJ", "VB"].iter().any(|p| self.pos.starts_with(p))
    }

    pub fn is_punct(&self) -> bool {
        matches!(self.pos.as_str(), "-LRB-" | "-RRB-") || !self.pos.chars().any(|c| c.is_ascii_alphabetic())
    }
}

/// A token with an externally supplied tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuppliedToken {
    pub text: String,
    pub pos: String,
}

const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')', '[', ']', '{', '}', '\u{201c}', '\u{201d}'];

/// Splits a caption into byte spans: whitespace-separated words with leading
/// and trailing punctuation peeled off as separate tokens, and a possessive
/// `'s` split from its noun.
pub fn tokenize(caption: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start = None;
    for (idx, ch) in caption.char_indices().chain(std::iter::once((caption.len(), ' '))) {
        match (ch.is_whitespace(), word_start) {
            (true, Some(start)) => {
                split_word(caption, start, idx, &mut spans);
                word_start = None;
            }
            (false, None) => word_start = Some(idx),
            _ => {}
        }
    }
    spans
}

fn split_word(caption: &str, mut start: usize, mut end: usize, spans: &mut Vec<(usize, usize)>) {
    let mut trailing = Vec::new();
    while let Some(ch) = caption[start..end].chars().next().filter(|c| PUNCT.contains(c)) {
        spans.push((start, start + ch.len_utf8()));
        start += ch.len_utf8();
    }
    while let Some(ch) = caption[start..end].chars().next_back().filter(|c| PUNCT.contains(c)) {
        end -= ch.len_utf8();
        trailing.push((end, end + ch.len_utf8()));
    }
    if start < end {
        let word = &caption[start..end];
        if word.len() > 2 && (word.ends_with("'s") || word.ends_with("\u{2019}s")) {
            let cut = end - if word.ends_with("'s") { 2 } else { 4 };
            spans.push((start, cut));
            spans.push((cut, end));
        } else {
            spans.push((start, end));
        }
    }
    spans.extend(trailing.into_iter().rev());
}

/// Tokenizes and tags a caption with the built-in tagger.
pub fn tag(caption: &str) -> Result<Vec<TaggedToken>> {
    if caption.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let spans = tokenize(caption);
    let words: Vec<&str> = spans.iter().map(|&(s, e)| &caption[s..e]).collect();
    let tags = tag_words(&words);
    Ok(spans
        .into_iter()
        .zip(words)
        .zip(tags)
        .map(|((span, text), pos)| TaggedToken { text: text.to_owned(), pos, span })
        .collect())
}

/// Locates externally tagged tokens in the caption, in order.
///
/// Every non-whitespace byte of the caption must be covered by exactly one
/// supplied token.
pub fn align(caption: &str, supplied: &[SuppliedToken]) -> Result<Vec<TaggedToken>> {
    if caption.trim().is_empty() || supplied.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(supplied.len());
    for token in supplied {
        let rest = &caption[offset..];
        let skipped = rest.len() - rest.trim_start().len();
        let start = offset + skipped;
        if token.text.is_empty() || !caption[start..].starts_with(&token.text) {
            return Err(Error::TokenMismatch { token: token.text.clone(), offset });
        }
        if token.pos.is_empty() || token.pos.chars().any(|c| c.is_lowercase()) {
            return Err(Error::InvalidConfig(format!(
                "tag {:?} for token {:?} is not a Penn Treebank tag",
                token.pos, token.text
            )));
        }
        offset = start + token.text.len();
        out.push(TaggedToken { text: token.text.clone(), pos: token.pos.clone(), span: (start, offset) });
    }
    let rest = caption[offset..].trim();
    if !rest.is_empty() {
        return Err(Error::TokenMismatch { token: rest.to_owned(), offset });
    }
    Ok(out)
}

fn lexicon(word: &str) -> Option<&'static str> {
    let tag = match word {
        "a" | "an" | "the" | "this" | "these" | "those" | "each" | "every" | "some" | "any" | "no" | "another"
        | "either" | "neither" | "all" | "both" => "DT",
        "of" | "in" | "on" | "at" | "with" | "by" | "for" | "from" | "under" | "over" | "above" | "below"
        | "behind" | "beside" | "besides" | "near" | "across" | "along" | "alongside" | "around" | "through"
        | "into" | "onto" | "upon" | "between" | "among" | "against" | "inside" | "outside" | "atop" | "beneath"
        | "underneath" | "toward" | "towards" | "during" | "like" | "without" | "within" | "about" | "off" | "as"
        | "than" | "via" | "amid" | "amidst" | "throughout" | "beyond" | "despite" | "while" | "because" | "if"
        | "although" | "whereas" => "IN",
        "to" => "TO",
        "and" | "or" | "but" | "nor" | "&" => "CC",
        "i" | "you" | "he" | "she" | "it" | "we" | "they" | "me" | "him" | "us" | "them" | "itself" | "themselves"
        | "himself" | "herself" => "PRP",
        "my" | "your" | "his" | "its" | "our" | "their" | "her" => "PRP$",
        "which" | "whatever" | "that" => "WDT",
        "who" | "whom" | "what" => "WP",
        "whose" => "WP$",
        "where" | "when" | "how" | "why" => "WRB",
        "can" | "could" | "may" | "might" | "will" | "would" | "shall" | "should" | "must" => "MD",
        "not" | "n't" | "very" | "also" | "too" | "quite" | "rather" | "just" | "only" | "almost" | "often"
        | "always" | "never" | "still" | "even" | "here" | "there" | "up" | "down" | "out" | "away" | "together"
        | "back" | "slightly" | "partially" => "RB",
        "is" | "'s" | "has" | "does" | "seems" | "appears" => "VBZ",
        "are" | "am" | "have" | "do" => "VBP",
        "was" | "were" | "had" | "did" => "VBD",
        "be" => "VB",
        "been" | "worn" | "seen" | "shown" | "made" | "held" | "built" | "taken" | "written" | "drawn" | "hung"
        | "lit" | "placed" | "known" | "grown" => "VBN",
        "being" | "having" => "VBG",
        "sit" | "stand" | "hold" | "wear" | "look" | "lie" | "play" | "walk" | "run" | "ride" | "show" | "see"
        | "eat" | "carry" | "contain" | "feature" | "depict" => "VB",
        "sits" | "stands" | "holds" | "wears" | "looks" | "lies" | "plays" | "walks" | "runs" | "rides" | "shows"
        | "eats" | "carries" | "contains" | "features" | "depicts" | "hangs" | "rests" | "leans" => "VBZ",
        "sat" | "stood" | "wore" | "lay" | "ran" | "rode" | "saw" | "ate" => "VBD",
        "red" | "blue" | "green" | "white" | "black" | "yellow" | "brown" | "gray" | "grey" | "orange" | "pink"
        | "purple" | "silver" | "golden" | "beige" | "tan" | "dark" | "light" | "bright" | "pale" | "small"
        | "large" | "big" | "little" | "tiny" | "huge" | "tall" | "short" | "long" | "wide" | "narrow" | "old"
        | "young" | "new" | "modern" | "vintage" | "wooden" | "metallic" | "plastic" | "round" | "square"
        | "rectangular" | "circular" | "empty" | "full" | "open" | "clear" | "cloudy" | "sunny" | "several"
        | "many" | "few" | "other" | "same" | "different" | "various" | "multiple" | "single" | "double" | "fluffy"
        | "soft" | "striped" | "cozy" | "calm" | "busy" | "blurry" | "distant" | "visible" | "lush" | "dry" | "wet"
        | "hot" | "cold" | "warm" | "cool" | "happy" | "pretty" | "clean" | "dirty" => "JJ",
        "one" | "two" | "three" | "four" | "five" | "six" | "seven" | "eight" | "nine" | "ten" | "eleven"
        | "twelve" | "twenty" | "hundred" | "thousand" | "dozen" => "CD",
        _ => return None,
    };
    Some(tag)
}

fn punct_tag(word: &str) -> Option<&'static str> {
    let tag = match word {
        "." | "!" | "?" => ".",
        "," => ",",
        ";" | ":" | "-" | "--" | "..." => ":",
        "(" | "[" | "{" => "-LRB-",
        ")" | "]" | "}" => "-RRB-",
        "\"" | "\u{201c}" => "``",
        "\u{201d}" => "''",
        "'s" | "\u{2019}s" => "POS",
        _ => return None,
    };
    Some(tag)
}

fn suffix_tag(lower: &str) -> &'static str {
    let n = lower.chars().count();
    if lower.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        "CD"
    } else if n > 4 && lower.ends_with("ing") {
        "VBG"
    } else if n > 3 && lower.ends_with("ed") {
        "VBN"
    } else if n > 4 && lower.ends_with("ly") && !matches!(lower, "family" | "belly" | "jelly") {
        "RB"
    } else if ["ous", "ful", "less", "able", "ible"].iter().any(|s| n > s.len() + 2 && lower.ends_with(s)) {
        "JJ"
    } else if n > 3 && lower.ends_with('s') && !["ss", "us", "is"].iter().any(|s| lower.ends_with(s)) {
        "NNS"
    } else {
        "NN"
    }
}

const BE_FORMS: &[&str] = &["is", "are", "was", "were", "'s", "seems", "appears", "be"];

fn tag_words(words: &[&str]) -> Vec<String> {
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    // (tag, from_suffix)
    let mut tags: Vec<(&'static str, bool)> = words
        .iter()
        .zip(&lower)
        .enumerate()
        .map(|(i, (word, low))| {
            if let Some(t) = punct_tag(word) {
                return (t, false);
            }
            if let Some(t) = lexicon(low) {
                return (t, false);
            }
            let sentence_start = i == 0 || matches!(punct_tag(words[i - 1]), Some("."));
            if !sentence_start && word.chars().next().is_some_and(char::is_uppercase) {
                return ("NNP", false);
            }
            (suffix_tag(low), true)
        })
        .collect();

    let is_nominal = |t: &str| t.starts_with("NN") || t.starts_with("JJ") || t == "CD";
    for i in 0..words.len() {
        let next = tags.get(i + 1).map(|t| t.0);
        let prev = i.checked_sub(1).map(|p| tags[p].0);
        let (tag, from_suffix) = tags[i];
        let new = match lower[i].as_str() {
            "that" if next.is_some_and(is_nominal) => Some("DT"),
            "her" if !next.is_some_and(is_nominal) => Some("PRP"),
            "there" if lower.get(i + 1).is_some_and(|n| BE_FORMS.contains(&n.as_str())) => Some("EX"),
            _ if from_suffix => retag_open_class(tag, prev, next, lower.get(i + 1)),
            _ => None,
        };
        if let Some(t) = new {
            tags[i] = (t, false);
        }
    }
    tags.into_iter().map(|(t, _)| t.to_owned()).collect()
}

/// Context corrections for words tagged by suffix alone.
fn retag_open_class(
    tag: &'static str,
    prev: Option<&str>,
    next: Option<&str>,
    next_word: Option<&String>,
) -> Option<&'static str> {
    let modifier_slot =
        prev.is_none_or(|p| matches!(p, "DT" | "PRP$" | "JJ" | "IN" | "CC" | "CD" | "," | "POS" | "RB"));
    let next_is_noun = next.is_some_and(|n| n.starts_with("NN"));
    match tag {
        // "a sleeping cat", "with fringed edges"
        "VBG" | "VBN" if next_is_noun && modifier_slot => Some("JJ"),
        // "a dog runs across the field"
        "NNS"
            if prev.is_some_and(|p| matches!(p, "NN" | "NNP" | "PRP" | "WDT" | "WP"))
                && next.is_none_or(|n| {
                    matches!(n, "DT" | "IN" | "TO" | "RB" | "PRP$" | "CD" | "JJ" | "." | "," | "VBG")
                }) =>
        {
            Some("VBZ")
        }
        "NN" if prev.is_some_and(|p| p == "TO" || p == "MD") && !next_word.is_some_and(|w| w == "of") => Some("VB"),
        "NN" if prev.is_some_and(|p| matches!(p, "NNS" | "PRP"))
            && next.is_some_and(|n| matches!(n, "DT" | "IN" | "RB" | "PRP$" | "TO")) =>
        {
            Some("VBP")
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(caption: &str) -> Vec<(String, String)> {
        tag(caption).unwrap().into_iter().map(|t| (t.text, t.pos)).collect()
    }

    fn owned(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(pairs("a blanket"), owned(&[("a", "DT"), ("blanket", "NN")]));
        assert_eq!(pairs("in a park"), owned(&[("in", "IN"), ("a", "DT"), ("park", "NN")]));
        assert_eq!(
            pairs("The cat is sleeping"),
            owned(&[("The", "DT"), ("cat", "NN"), ("is", "VBZ"), ("sleeping", "VBG")])
        );
    }

    #[test]
    fn punctuation_is_split_off() {
        let caption = "A dog (brown), in a park.";
        let spans = tokenize(caption);
        let words: Vec<&str> = spans.iter().map(|&(s, e)| &caption[s..e]).collect();
        assert_eq!(words, ["A", "dog", "(", "brown", ")", ",", "in", "a", "park", "."]);
    }

    #[test]
    fn possessive_split() {
        let tokens = pairs("the dog's collar");
        assert_eq!(tokens[1], ("dog".into(), "NN".into()));
        assert_eq!(tokens[2], ("'s".into(), "POS".into()));
    }

    #[test]
    fn context_rules() {
        let t = pairs("a blanket with fringed edges");
        assert_eq!(t[3].1, "JJ");
        let t = pairs("A dog chases the ball");
        assert_eq!(t[2].1, "VBZ");
        let t = pairs("two dogs near a tree");
        assert_eq!(t[1].1, "NNS");
        let t = pairs("there is a box over there");
        assert_eq!(t[0].1, "EX");
        assert_eq!(t[5].1, "RB");
    }

    #[test]
    fn empty_caption_is_rejected() {
        assert!(matches!(tag("   \t"), Err(Error::EmptyInput)));
    }

    #[test]
    fn spans_are_ordered_and_in_bounds() {
        let caption = "  Une   café, très \"chaud\".  ";
        let tokens = tag(caption).unwrap();
        let mut last = 0;
        for t in &tokens {
            assert!(t.span.0 >= last && t.span.1 <= caption.len() && t.span.0 < t.span.1);
            assert_eq!(&caption[t.span.0..t.span.1], t.text);
            last = t.span.1;
        }
    }

    #[test]
    fn align_supplied_tags() {
        let supplied = vec![
            SuppliedToken { text: "A".into(), pos: "DT".into() },
            SuppliedToken { text: "cat".into(), pos: "NN".into() },
            SuppliedToken { text: ".".into(), pos: ".".into() },
        ];
        let tokens = align("A  cat.", &supplied).unwrap();
        assert_eq!(tokens[1].span, (3, 6));
        assert_eq!(tokens[2].span, (6, 7));

        let short = &supplied[..2];
        assert!(matches!(align("A cat.", short), Err(Error::TokenMismatch { .. })));
        let wrong = vec![SuppliedToken { text: "dog".into(), pos: "NN".into() }];
        assert!(matches!(align("cat", &wrong), Err(Error::TokenMismatch { .. })));
    }
}
