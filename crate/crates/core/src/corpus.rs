//! Loading novels and splitting them into sentences.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} contains no text")]
    Empty { path: PathBuf },
    #[error("sentence table line {line}: {reason}")]
    Table { line: usize, reason: String },
}

/// One loaded text file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    /// NFC-normalized text with paragraph-internal line breaks collapsed.
    pub raw_text: String,
    pub source_path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

/// Stable sentence identifier: document plus ordinal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentId {
    pub doc_id: String,
    pub index: usize,
}

impl SentId {
    pub fn new(doc_id: impl Into<String>, index: usize) -> Self {
        Self { doc_id: doc_id.into(), index }
    }
}

impl fmt::Display for SentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.doc_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: SentId,
    pub text: String,
    /// Byte offsets into the document's `raw_text`.
    pub char_span: Range<usize>,
}

/// Loads every path as one document, in input order.
pub fn load_corpus<P: AsRef<Path>>(paths: &[P]) -> Result<Corpus, CorpusError> {
    let mut used = HashSet::new();
    let mut documents = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "document".to_owned());
        let doc_id = unique_id(&title, &mut used);
        let document = document_from_text(doc_id, title, &raw, path.to_string_lossy().into_owned())
            .ok_or_else(|| CorpusError::Empty { path: path.to_path_buf() })?;
        documents.push(document);
    }
    Ok(Corpus { documents })
}

fn unique_id(title: &str, used: &mut HashSet<String>) -> String {
    let base: String = title
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let base = if base.is_empty() { "doc".to_owned() } else { base };
    let mut candidate = base.clone();
    let mut n = 2;
    while !used.insert(candidate.clone()) {
        candidate = format!("{base}_{n}");
        n += 1;
    }
    candidate
}

/// Builds a document from in-memory text. Returns `None` when the text is
/// blank after normalization.
pub fn document_from_text(
    doc_id: impl Into<String>,
    title: impl Into<String>,
    text: &str,
    source_path: impl Into<String>,
) -> Option<Document> {
    let raw_text = normalize_text(text);
    if raw_text.is_empty() {
        return None;
    }
    Some(Document { doc_id: doc_id.into(), title: title.into(), raw_text, source_path: source_path.into() })
}

/// NFC normalization; lines within a paragraph are joined by one space and
/// paragraphs are separated by a blank line. Tabs become spaces.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let nfc = nfc.replace("\r\n", "\n").replace(['\r', '\t'], " ");
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in nfc.split('\n') {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join(" "));
    }
    paragraphs.join("\n\n")
}

const ABBREVIATIONS: &[&str] = &["Mr", "Mrs", "Ms", "Dr", "St", "Prof"];

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}')
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// True when the `.` at byte `dot` ends an abbreviation or an initial.
fn is_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .char_indices()
        .rev()
        .find(|(_, c)| !c.is_alphabetic())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let word = &before[word_start..];
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

/// Splits a document into sentences.
///
/// A boundary is a run of `.`, `!` or `?` followed by whitespace and then an
/// uppercase letter or an opening quote, unless the period closes one of
/// the known abbreviations or a single-capital initial. Paragraph breaks
/// always end a sentence. Quotes and dashes never split.
pub fn segment_sentences(document: &Document) -> Vec<Sentence> {
    let text = &document.raw_text;
    let mut spans: Vec<Range<usize>> = Vec::new();
    let mut offset = 0;
    for paragraph in text.split("\n\n") {
        segment_paragraph(paragraph, offset, &mut spans);
        offset += paragraph.len() + 2;
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(index, span)| Sentence {
            sent_id: SentId::new(document.doc_id.clone(), index),
            text: text[span.clone()].to_owned(),
            char_span: span,
        })
        .collect()
}

fn segment_paragraph(paragraph: &str, offset: usize, spans: &mut Vec<Range<usize>>) {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(pos);
        }
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let run_end = if j < chars.len() { chars[j].0 } else { paragraph.len() };
        let single_period = j == i + 1 && c == '.';
        let guarded = single_period && is_abbreviation(paragraph, pos);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let followed = k > j
            && k < chars.len()
            && (chars[k].1.is_uppercase() || is_opening_quote(chars[k].1));
        if followed && !guarded {
            if let Some(s) = start.take() {
                spans.push(offset + s..offset + run_end);
            }
        }
        i = j;
    }
    if let Some(s) = start {
        let trimmed = paragraph[s..].trim_end();
        if !trimmed.is_empty() {
            spans.push(offset + s..offset + s + trimmed.len());
        }
    }
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Segments every document; document order, then sentence order.
    pub fn sentences(&self) -> Vec<Sentence> {
        self.documents
            .par_iter()
            .map(segment_sentences)
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Renders `doc_id<TAB>index<TAB>text` lines.
pub fn sentence_table(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&format!("{}\t{}\t{}\n", s.sent_id.doc_id, s.sent_id.index, s.text));
    }
    out
}

/// Parses the output of [`sentence_table`] into `(SentId, text)` pairs.
pub fn parse_sentence_table(table: &str) -> Result<Vec<(SentId, String)>, CorpusError> {
    table
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let mut parts = line.splitn(3, '\t');
            let (Some(doc), Some(index), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(CorpusError::Table { line: n + 1, reason: "expected three columns".into() });
            };
            let index = index
                .parse()
                .map_err(|_| CorpusError::Table { line: n + 1, reason: format!("bad index {index:?}") })?;
            Ok((SentId::new(doc, index), text.to_owned()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> Document {
        Document { doc_id: "d".into(), title: "d".into(), raw_text: text.into(), source_path: String::new() }
    }

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(&doc(text)).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn empty_document_has_no_sentences() {
        assert!(texts("").is_empty());
    }

    #[test]
    fn two_simple_sentences() {
        assert_eq!(texts("Harry smiled. Ron laughed."), ["Harry smiled.", "Ron laughed."]);
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(texts("Mr. Darcy spoke to Mrs. Bennet."), ["Mr. Darcy spoke to Mrs. Bennet."]);
        assert_eq!(texts("H. Potter waved. Prof. Snape did not."), ["H. Potter waved.", "Prof. Snape did not."]);
    }

    #[test]
    fn dialogue_stays_intact() {
        assert_eq!(
            texts("\"Go away!\" said Ron. \"No,\" Harry replied \u{2014} firmly."),
            ["\"Go away!\" said Ron.", "\"No,\" Harry replied \u{2014} firmly."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("Wait... and then? nothing."), ["Wait... and then? nothing."]);
    }

    #[test]
    fn paragraph_break_ends_sentence() {
        let d = doc("Chapter One\n\nHarry smiled.");
        let s = segment_sentences(&d);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].text, "Harry smiled.");
        assert_eq!(&d.raw_text[s[1].char_span.clone()], "Harry smiled.");
        assert_eq!(s[1].sent_id, SentId::new("d", 1));
    }

    #[test]
    fn normalization_collapses_lines_and_composes() {
        let text = "Harry\r\n  met Ron.\n\n\n  Cafe\u{301} time.\t \n";
        assert_eq!(normalize_text(text), "Harry met Ron.\n\nCaf\u{e9} time.");
    }

    #[test]
    fn load_reports_missing_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.txt");
        let err = load_corpus(&[&missing]).unwrap_err();
        assert!(err.to_string().contains("nope.txt"));

        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, " \n\n ").unwrap();
        assert!(matches!(load_corpus(&[&empty]), Err(CorpusError::Empty { .. })));
    }

    #[test]
    fn load_keeps_input_order_and_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("novel.txt");
        let sub = dir.path().join("sub");
        std::fs::create_dir(&sub).unwrap();
        let b = sub.join("novel.txt");
        std::fs::write(&a, "Harry met Ron.").unwrap();
        std::fs::write(&b, "Meg met Jo.").unwrap();
        let corpus = load_corpus(&[&a, &b]).unwrap();
        let ids: Vec<_> = corpus.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["novel", "novel_2"]);
        assert_eq!(corpus.documents[1].raw_text, "Meg met Jo.");
        assert!(load_corpus::<&Path>(&[]).unwrap().is_empty());
    }

    #[test]
    fn table_round_trip() {
        let s = segment_sentences(&doc("Harry smiled. Ron laughed."));
        let table = sentence_table(&s);
        assert_eq!(table, "d\t0\tHarry smiled.\nd\t1\tRon laughed.\n");
        let parsed = parse_sentence_table(&table).unwrap();
        assert_eq!(parsed[1], (SentId::new("d", 1), "Ron laughed.".to_owned()));
        assert!(parse_sentence_table("d\tx\tHi").is_err());
    }

    fn prose() -> impl Strategy<Value = String> {
        let word = prop_oneof![
            Just("Harry"), Just("ron"), Just("Mr."), Just("H."), Just("smiled."), Just("\"Yes!\""),
            Just("and"), Just("Why?"), Just("\u{2014}"), Just("Prof."), Just("end."), Just("\n\n"),
        ];
        proptest::collection::vec(word, 0..30).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn spans_cover_every_visible_char(text in prose()) {
            let d = doc(&normalize_text(&text));
            let sentences = segment_sentences(&d);
            let mut covered = vec![false; d.raw_text.len()];
            let mut last_end = 0;
            for (i, s) in sentences.iter().enumerate() {
                prop_assert_eq!(s.sent_id.index, i);
                prop_assert!(s.char_span.start >= last_end);
                prop_assert_eq!(&d.raw_text[s.char_span.clone()], s.text.as_str());
                last_end = s.char_span.end;
                for b in s.char_span.clone() { covered[b] = true; }
            }
            for (i, c) in d.raw_text.char_indices() {
                if !c.is_whitespace() { prop_assert!(covered[i]); }
            }
            // Restoring the gaps reconstructs the text.
            let mut rebuilt = String::new();
            let mut pos = 0;
            for s in &sentences {
                rebuilt.push_str(&d.raw_text[pos..s.char_span.start]);
                rebuilt.push_str(&s.text);
                pos = s.char_span.end;
            }
            rebuilt.push_str(&d.raw_text[pos..]);
            prop_assert_eq!(rebuilt, d.raw_text.clone());
        }

        #[test]
        fn single_sentences_are_fixed_points(text in prose()) {
            let d = doc(&normalize_text(&text));
            for s in segment_sentences(&d) {
                let again = segment_sentences(&doc(&s.text));
                prop_assert_eq!(again.len(), 1);
                prop_assert_eq!(&again[0].text, &s.text);
            }
        }
    }
}
