use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{SentId, Sentence};
use crate::provider::ProviderError;
use crate::text::{parse_char_id, strip_possessive, tokenize, Token, TokenKind};

/// A maximal run of person tokens in one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub sent_id: SentId,
    /// Half-open token range over the sentence's tokens.
    pub token_span: Range<usize>,
    pub surface: String,
    /// Byte range of `surface` inside the sentence text.
    pub byte_span: Range<usize>,
}

/// Known person names. Multi-word entries contribute each of their tokens.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    tokens: HashSet<String>,
}

impl Gazetteer {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut g = Self::default();
        g.extend(names);
        g
    }

    pub fn extend<I, S>(&mut self, names: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for name in names {
            self.tokens.extend(name.as_ref().split_whitespace().map(str::to_owned));
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// External person tagger. Returns byte ranges of person tokens in `text`.
pub trait PersonTagger {
    fn tag_persons(&mut self, text: &str) -> Result<Vec<Range<usize>>, ProviderError>;
}

/// Capitalized words that are never names on their own.
const NOT_NAMES: &[&str] = &[
    "A", "About", "After", "All", "Also", "An", "And", "Another", "Any", "As", "At", "Aunt", "Be",
    "Because", "Before", "But", "By", "Captain", "Chapter", "Come", "Dad", "Dear", "Did", "Do",
    "Don't", "Dr", "Each", "Even", "Every", "Father", "For", "From", "Go", "God", "Good", "Had",
    "Has", "Have", "He", "Her", "Here", "Hers", "Him", "His", "How", "I", "I'd", "I'll", "I'm",
    "I've", "If", "In", "Into", "Is", "It", "It's", "Its", "Just", "Lady", "Let", "Lord", "Madam",
    "Master", "Me", "Miss", "Mother", "Mr", "Mrs", "Ms", "Mum", "My", "No", "Not", "Now", "O",
    "Of", "Oh", "OK", "On", "One", "Only", "Or", "Our", "Please", "Prof", "Professor", "Saint",
    "See", "She", "Sir", "So", "Some", "St", "Still", "Such", "Than", "Thank", "Thanks", "That",
    "The", "Their", "Them", "Then", "There", "These", "They", "This", "Those", "Though", "To",
    "Too", "Two", "Uncle", "Up", "Us", "Very", "Was", "We", "Well", "Were", "What", "When",
    "Where", "Which", "While", "Who", "Why", "Will", "With", "Yes", "Yet", "You", "Your",
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday", "January",
    "February", "March", "April", "June", "July", "August", "September", "October", "November",
    "December", "Christmas", "English", "French",
];

/// Lowercased words that often open a clause before a name ("Later Harry").
const OPENERS: &[&str] = &[
    "above", "across", "afterwards", "again", "along", "among", "around", "behind", "below",
    "beside", "beyond", "during", "except", "finally", "inside", "instead", "later", "little",
    "meanwhile", "near", "next", "old", "once", "outside", "perhaps", "poor", "since", "soon",
    "through", "today", "tomorrow", "tonight", "toward", "towards", "under", "until", "upon",
    "within", "without", "yesterday", "young",
];

const TITLES: &[&str] = &["Mr", "Mrs", "Ms", "Dr", "St", "Prof"];

fn bare(token: &str) -> &str {
    let t = strip_possessive(token);
    // "I." at a sentence end is not an initial
    if t.len() == 2 && t.ends_with('.') && NOT_NAMES.contains(&&t[..1]) {
        &t[..1]
    } else {
        t
    }
}

fn name_like(token: &Token<'_>) -> bool {
    let word = bare(token.text);
    token.is_word()
        && token.is_capitalized()
        && parse_char_id(word).is_none()
        && word.chars().any(char::is_alphabetic)
        && !NOT_NAMES.contains(&word)
}

fn may_open_name(token: &Token<'_>) -> bool {
    let lower = token.text.to_lowercase();
    name_like(token) && !lower.ends_with("ly") && !OPENERS.contains(&lower.as_str())
}

/// Whether the word at `i` opens a clause, where capitalization says
/// nothing about being a name.
fn clause_initial(tokens: &[Token<'_>], i: usize) -> bool {
    let Some(prev) = i.checked_sub(1).map(|p| &tokens[p]) else {
        return true;
    };
    if prev.kind == TokenKind::Word {
        return false;
    }
    match prev.text {
        "." => {
            // "Mr. Darcy" continues the clause
            let before = i.checked_sub(2).map(|p| tokens[p].text);
            !before.is_some_and(|w| TITLES.contains(&w))
        }
        "!" | "?" | ":" | ";" | "\u{201C}" | "\u{2018}" | "\u{2014}" => true,
        "\"" | "'" => {
            // straight quote opening dialogue, or closing one after a terminator
            i < 2 || tokens[i - 2].kind == TokenKind::Punct
        }
        _ => false,
    }
}

/// Detects person mentions in a sentence.
///
/// With a tagger, tokens overlapping the tagger's person ranges are person
/// tokens. Otherwise capitalized words that do not open a clause are, as are
/// gazetteer hits anywhere. A capitalized word opening a clause also counts
/// when a person token follows it directly (`Harry James Potter smiled`).
/// Adjacent person tokens merge into one mention; a trailing possessive is
/// excluded from the surface.
pub fn detect_mentions(
    sentence: &Sentence,
    gazetteer: Option<&Gazetteer>,
    tagger: Option<&mut dyn PersonTagger>,
) -> Result<Vec<Mention>, ProviderError> {
    let tokens = tokenize(&sentence.text);
    let mut person = vec![false; tokens.len()];
    if let Some(tagger) = tagger {
        let ranges = tagger.tag_persons(&sentence.text)?;
        for (flag, t) in person.iter_mut().zip(&tokens) {
            *flag = t.is_word() && ranges.iter().any(|r| r.start < t.span.end && t.span.start < r.end);
        }
    } else {
        for (i, t) in tokens.iter().enumerate() {
            let in_gazetteer = gazetteer.is_some_and(|g| g.contains(bare(t.text)));
            person[i] = in_gazetteer || (name_like(t) && !clause_initial(&tokens, i));
        }
        for i in (0..tokens.len()).rev() {
            if !person[i] && i + 1 < tokens.len() && person[i + 1] && may_open_name(&tokens[i]) {
                person[i] = true;
            }
        }
    }

    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !person[i] {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        // a possessive ends the run: "Henry's Ron" is two people
        while j < tokens.len() && person[j] && strip_possessive(tokens[j - 1].text) == tokens[j - 1].text {
            j += 1;
        }
        let start = tokens[i].span.start;
        let last = &tokens[j - 1];
        let end = last.span.start + bare_len(last.text);
        mentions.push(Mention {
            sent_id: sentence.sent_id.clone(),
            token_span: i..j,
            surface: sentence.text[start..end].to_owned(),
            byte_span: start..end,
        });
        i = j;
    }
    Ok(mentions)
}

fn bare_len(token: &str) -> usize {
    strip_possessive(token).len()
}
