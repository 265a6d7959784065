use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{AliasTable, CharacterId};
use crate::corpus::{SentId, Sentence};
use crate::text::{parse_char_id, strip_possessive, tokenize};

/// A `CHARn` occurrence in canonicalized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharMention {
    pub id: CharacterId,
    pub span: Range<usize>,
}

/// Sentence text with every alias replaced by its character id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSentence {
    pub sent_id: SentId,
    pub text: String,
    pub mentions: Vec<CharMention>,
}

impl CanonicalSentence {
    /// Character mentions found by scanning `text` for `CHARn` tokens.
    pub fn from_text(sent_id: SentId, text: String) -> Self {
        let mentions = tokenize(&text)
            .into_iter()
            .filter(|t| t.is_word())
            .filter_map(|t| {
                let word = strip_possessive(t.text);
                parse_char_id(word).map(|n| CharMention { id: CharacterId(n), span: t.span.start..t.span.start + word.len() })
            })
            .collect();
        Self { sent_id, text, mentions }
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Replaces whole-word alias occurrences with `CHARn`, trying longer
/// surfaces first so that `Harry Potter` wins over `Harry`.
pub fn canonicalize(sentences: &[Sentence], table: &AliasTable) -> Vec<CanonicalSentence> {
    let mut by_first: HashMap<char, Vec<(&str, CharacterId)>> = HashMap::new();
    for (surface, id) in table.surface_index() {
        if let Some(c) = surface.chars().next() {
            by_first.entry(c).or_default().push((surface, id));
        }
    }
    for candidates in by_first.values_mut() {
        candidates.sort_by(|(a, _), (b, _)| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
    }

    sentences
        .iter()
        .map(|s| {
            let text = replace_aliases(&s.text, &by_first);
            CanonicalSentence::from_text(s.sent_id.clone(), text)
        })
        .collect()
}

fn replace_aliases(text: &str, by_first: &HashMap<char, Vec<(&str, CharacterId)>>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut pos = 0;
    'scan: while pos < text.len() {
        let rest = &text[pos..];
        let c = rest.chars().next().unwrap_or_default();
        if !is_word_char(prev) {
            if let Some(candidates) = by_first.get(&c) {
                for (surface, id) in candidates {
                    if rest.starts_with(surface) && !is_word_char(rest[surface.len()..].chars().next()) {
                        out.push_str(&id.to_string());
                        pos += surface.len();
                        prev = surface.chars().last();
                        continue 'scan;
                    }
                }
            }
        }
        out.push(c);
        prev = Some(c);
        pos += c.len_utf8();
    }
    out
}
