//! Word-level tokenization shared by the entity, relation and labeling stages.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokenKind {
    Word,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token<'a> {
    pub text: &'a str,
    pub span: Range<usize>,
    pub kind: TokenKind,
}

impl Token<'_> {
    pub fn is_word(&self) -> bool {
        self.kind == TokenKind::Word
    }

    pub fn is_capitalized(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_uppercase)
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits `text` into word and punctuation tokens with byte spans.
///
/// Words are alphanumeric runs that may contain inner apostrophes and
/// hyphens. A single uppercase letter followed by `.` keeps the period so
/// that initials such as `H.` stay one token.
pub(crate) fn tokenize(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !is_word_char(c) {
            let end = start + c.len_utf8();
            tokens.push(Token { text: &text[start..end], span: start..end, kind: TokenKind::Punct });
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() {
            let cj = chars[j].1;
            if is_word_char(cj) {
                j += 1;
            } else if (is_apostrophe(cj) || cj == '-')
                && j + 1 < chars.len()
                && is_word_char(chars[j + 1].1)
            {
                j += 2;
            } else {
                break;
            }
        }
        // initial: "H."
        if j == i + 1 && c.is_uppercase() && j < chars.len() && chars[j].1 == '.' {
            j += 1;
        }
        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        tokens.push(Token { text: &text[start..end], span: start..end, kind: TokenKind::Word });
        i = j;
    }
    tokens
}

/// Strips a trailing possessive `'s` from a word, returning the bare stem.
pub(crate) fn strip_possessive(word: &str) -> &str {
    for suffix in ["'s", "\u{2019}s"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if !stem.is_empty() {
                return stem;
            }
        }
    }
    word
}

/// Parses a `CHARn` token into `n`.
pub(crate) fn parse_char_id(word: &str) -> Option<u32> {
    let digits = word.strip_prefix("CHAR")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<&str> {
        tokenize(text).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(words("Harry, I am Harry Potter."), ["Harry", ",", "I", "am", "Harry", "Potter", "."]);
    }

    #[test]
    fn keeps_initials_and_possessives() {
        assert_eq!(words("H. Potter saw Henry's face"), ["H.", "Potter", "saw", "Henry's", "face"]);
        assert_eq!(strip_possessive("Henry's"), "Henry");
        assert_eq!(strip_possessive("CHAR0\u{2019}s"), "CHAR0");
        assert_eq!(strip_possessive("'s"), "'s");
    }

    #[test]
    fn sentence_final_period_is_not_an_initial_for_words() {
        assert_eq!(words("Ron left."), ["Ron", "left", "."]);
        assert_eq!(words("I."), ["I.",]);
    }

    #[test]
    fn char_ids() {
        assert_eq!(parse_char_id("CHAR59"), Some(59));
        assert_eq!(parse_char_id("CHAR0"), Some(0));
        assert_eq!(parse_char_id("CHAR"), None);
        assert_eq!(parse_char_id("CHAR01"), None);
        assert_eq!(parse_char_id("CHARx"), None);
    }

    #[test]
    fn spans_slice_back_to_text() {
        let text = "Mrs. O'Neil — well-known — smiled.";
        for t in tokenize(text) {
            assert_eq!(&text[t.span.clone()], t.text);
        }
    }
}
