//! Generated corpora with known relation types, for tests and demos.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentId;

/// A relation type and the verb lemma its label must carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub lemma: &'static str,
    aux: &'static str,
    verb: &'static str,
    particle: &'static str,
}

pub const TEMPLATES: [Template; 4] = [
    Template { name: "smiling", lemma: "smile", aux: "", verb: "smiled", particle: "at" },
    Template { name: "talking", lemma: "talk", aux: "was", verb: "talking", particle: "to" },
    Template { name: "looking", lemma: "look", aux: "", verb: "looked", particle: "at" },
    Template { name: "walking", lemma: "walk", aux: "", verb: "walked", particle: "with" },
];

/// All initials differ, first and last.
const CAST: [(&str, &str); 8] = [
    ("Augustus", "Vane"),
    ("Bertram", "Quill"),
    ("Cordelia", "Lusk"),
    ("Dorothea", "Pratt"),
    ("Evangeline", "Orme"),
    ("Frederick", "Sloane"),
    ("Gwendolyn", "Kemp"),
    ("Harriet", "Nye"),
];

const ADVERBS: [&str; 8] = ["", "quietly", "briefly", "again", "warmly", "suddenly", "gravely", "shyly"];
const TAILS: [&str; 8] = ["", "", "", "", "", "", " that evening", " by the window"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCharacter {
    pub first: String,
    pub last: String,
}

impl SynthCharacter {
    pub fn full(&self) -> String {
        format!("{} {}", self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSentence {
    pub sent_id: SentId,
    pub text: String,
    pub template: usize,
    /// Cast indices.
    pub subject: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub per_template: usize,
    pub held_out_per_template: usize,
    /// Two documents with disjoint halves of the cast.
    pub two_casts: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 7, per_template: 15, held_out_per_template: 5, two_casts: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub characters: Vec<SynthCharacter>,
    pub documents: Vec<SynthDocument>,
    /// Ground truth for every corpus sentence, in document order.
    pub sentences: Vec<SynthSentence>,
    /// Extra sentences not in any document.
    pub held_out: Vec<SynthSentence>,
}

fn name_form(rng: &mut ChaCha8Rng, c: &SynthCharacter, subject: bool) -> String {
    // surnames alone stay out of subject position, where they would open the
    // sentence and be taken for a common word
    match rng.gen_range(0..if subject { 2 } else { 3 }) {
        0 => c.full(),
        1 => c.first.clone(),
        _ => c.last.clone(),
    }
}

fn sentence(rng: &mut ChaCha8Rng, cast: &[SynthCharacter], members: &[usize], template: usize) -> (String, usize, usize) {
    let s = *members.choose(rng).expect("non-empty cast");
    let o = loop {
        let o = *members.choose(rng).expect("non-empty cast");
        if o != s {
            break o;
        }
    };
    let t = &TEMPLATES[template];
    let adverb = ADVERBS.choose(rng).copied().unwrap_or_default();
    let tail = TAILS.choose(rng).copied().unwrap_or_default();
    let middle = [t.aux, adverb, t.verb, t.particle].iter().filter(|w| !w.is_empty()).copied().collect::<Vec<_>>().join(" ");
    let text = format!("{} {middle} {}{tail}.", name_form(rng, &cast[s], true), name_form(rng, &cast[o], false));
    (text, s, o)
}

/// Deterministic for a given config.
pub fn generate(config: &SynthConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let characters: Vec<SynthCharacter> =
        CAST.iter().map(|(f, l)| SynthCharacter { first: (*f).into(), last: (*l).into() }).collect();
    let casts: Vec<(String, Vec<usize>)> = if config.two_casts {
        vec![("north".into(), (0..4).collect()), ("south".into(), (4..8).collect())]
    } else {
        vec![("synthetic".into(), (0..8).collect())]
    };

    let mut plan: Vec<usize> = (0..TEMPLATES.len()).flat_map(|t| std::iter::repeat_n(t, config.per_template)).collect();
    plan.shuffle(&mut rng);

    let mut documents = Vec::new();
    let mut sentences = Vec::new();
    let share = plan.len().div_ceil(casts.len());
    for (chunk, (doc_id, members)) in plan.chunks(share.max(1)).zip(&casts) {
        let mut texts = Vec::new();
        for (index, &template) in chunk.iter().enumerate() {
            let (text, subject, object) = sentence(&mut rng, &characters, members, template);
            texts.push(text.clone());
            sentences.push(SynthSentence { sent_id: SentId::new(doc_id.clone(), index), text, template, subject, object });
        }
        // a paragraph per five sentences
        let text = texts.chunks(5).map(|p| p.join(" ")).collect::<Vec<_>>().join("\n\n") + "\n";
        documents.push(SynthDocument { doc_id: doc_id.clone(), text });
    }

    let mut held_out = Vec::new();
    let all: Vec<usize> = (0..characters.len()).collect();
    for template in 0..TEMPLATES.len() {
        for _ in 0..config.held_out_per_template {
            let (text, subject, object) = sentence(&mut rng, &characters, &all, template);
            held_out.push(SynthSentence { sent_id: SentId::new("held_out", held_out.len()), text, template, subject, object });
        }
    }
    SyntheticCorpus { characters, documents, sentences, held_out }
}

impl SyntheticCorpus {
    /// Writes `<doc_id>.txt` per document plus `truth.jsonl` and
    /// `held_out.jsonl`; returns the document paths.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for d in &self.documents {
            let path = dir.join(format!("{}.txt", d.doc_id));
            fs::write(&path, &d.text)?;
            paths.push(path);
        }
        let encode = |rows: &[SynthSentence]| crate::jsonl::to_string(rows).map_err(std::io::Error::other);
        fs::write(dir.join("truth.jsonl"), encode(&self.sentences)?)?;
        fs::write(dir.join("held_out.jsonl"), encode(&self.held_out)?)?;
        Ok(paths)
    }
}
