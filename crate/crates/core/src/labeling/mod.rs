//! Cluster summaries and verb-based relation labels.

mod lexicon;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use lexicon::{is_verb_form, lemmatize, AUXILIARIES, DETERMINERS, PARTICLES};

use crate::clustering::RelationCluster;
use crate::entities::{AliasTable, CanonicalSentence};
use crate::provider::Provider;
use crate::relations::RelationalInstance;
use crate::text::{parse_char_id, tokenize, TokenKind};

/// Label given to clusters whose phrase holds no verb.
pub const UNLABELED: &str = "UNLABELED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarySource {
    Medoid,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub summary_text: String,
    pub source: SummarySource,
    /// Member the summary was taken from, for extractive summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_instance_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationLabel {
    pub cluster_id: usize,
    pub label: String,
    pub lemmas: Vec<String>,
}

impl RelationLabel {
    pub fn unlabeled(cluster_id: usize) -> Self {
        Self { cluster_id, label: UNLABELED.to_owned(), lemmas: Vec::new() }
    }

    /// No verb was found, so the cluster needs a human label.
    pub fn is_unlabeled(&self) -> bool {
        self.label == UNLABELED
    }
}

fn member_texts(cluster: &RelationCluster<impl Sized>, instances: &HashMap<&str, &RelationalInstance>) -> Vec<String> {
    let mut seen = HashSet::new();
    cluster
        .members
        .iter()
        .filter_map(|id| instances.get(id.as_str()))
        .filter(|i| seen.insert(&i.sent_id))
        .map(|i| i.full_text.clone())
        .collect()
}

fn medoid_summary<T>(cluster: &RelationCluster<T>, instances: &HashMap<&str, &RelationalInstance>) -> ClusterSummary {
    let text = instances.get(cluster.medoid.as_str()).map(|i| i.full_text.clone()).unwrap_or_default();
    ClusterSummary {
        cluster_id: cluster.cluster_id,
        summary_text: text,
        source: SummarySource::Medoid,
        source_instance_id: Some(cluster.medoid.clone()),
    }
}

/// Summary from the provider when one is given, else the medoid sentence.
/// Provider failures fall back to the medoid.
pub fn summarize_cluster<'p, T>(
    cluster: &RelationCluster<T>,
    instances: &HashMap<&str, &RelationalInstance>,
    provider: Option<&mut (dyn Provider + 'p)>,
) -> ClusterSummary {
    let Some(provider) = provider else {
        return medoid_summary(cluster, instances);
    };
    match provider.summarize(&member_texts(cluster, instances)) {
        Ok(text) if !text.trim().is_empty() => ClusterSummary {
            cluster_id: cluster.cluster_id,
            summary_text: text.trim().to_owned(),
            source: SummarySource::Provider,
            source_instance_id: None,
        },
        Ok(_) => {
            log::warn!("cluster {}: provider returned an empty summary, using the medoid", cluster.cluster_id);
            medoid_summary(cluster, instances)
        }
        Err(e) => {
            log::warn!("cluster {}: summarization failed ({e}), using the medoid", cluster.cluster_id);
            medoid_summary(cluster, instances)
        }
    }
}

/// Text between the first occurrences of the first two distinct characters.
fn phrase_between(text: &str) -> Option<String> {
    let sentence = CanonicalSentence::from_text(crate::corpus::SentId::new("", 0), text.to_owned());
    let first = sentence.mentions.first()?;
    let second = sentence.mentions.iter().find(|m| m.id != first.id)?;
    Some(text[first.span.end..second.span.start].to_owned())
}

/// Verb lemmas and label of a phrase, `None` when it holds no verb.
///
/// Auxiliaries are dropped unless they are the only verbs. A particle that
/// directly follows the last verb and ends the phrase is appended; an
/// `-ing` verb carrying such a particle keeps its surface form.
pub fn label_phrase(phrase: &str) -> Option<(Vec<String>, String)> {
    let tokens = tokenize(phrase);
    let mut verbs: Vec<(usize, String, String)> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Word || parse_char_id(t.text).is_some() {
            continue;
        }
        let lower = t.text.to_lowercase();
        let after_determiner = i > 0
            && tokens[i - 1].kind == TokenKind::Word
            && DETERMINERS.contains(&tokens[i - 1].text.to_lowercase().as_str());
        if after_determiner || !lower.bytes().all(|b| b.is_ascii_lowercase()) || !is_verb_form(&lower) {
            continue;
        }
        let lemma = lemmatize(&lower);
        verbs.push((i, lower, lemma));
    }
    let content: Vec<_> = verbs.iter().filter(|(_, _, l)| !AUXILIARIES.contains(&l.as_str())).cloned().collect();
    let kept = if content.is_empty() { verbs } else { content };
    let (last_idx, last_surface, _) = kept.last()?.clone();

    let particle = tokens.get(last_idx + 1).and_then(|t| {
        let lower = t.text.to_lowercase();
        let trailing_only_punct = tokens[last_idx + 2..].iter().all(|t| t.kind != TokenKind::Word);
        (t.kind == TokenKind::Word && PARTICLES.contains(&lower.as_str()) && trailing_only_punct).then_some(lower)
    });

    let mut lemmas: Vec<String> = Vec::new();
    let mut parts: Vec<String> = Vec::new();
    for (i, (_, surface, lemma)) in kept.iter().enumerate() {
        if lemmas.contains(lemma) {
            continue;
        }
        lemmas.push(lemma.clone());
        let is_last = i + 1 == kept.len();
        if is_last && particle.is_some() && last_surface.ends_with("ing") {
            parts.push(surface.clone());
        } else {
            parts.push(lemma.clone());
        }
    }
    parts.extend(particle);
    Some((lemmas, parts.join("_")))
}

/// Derives the label from the summary sentence, anchoring on the medoid
/// instance when the summary is the medoid itself or lacks two characters.
pub fn extract_label(summary: &ClusterSummary, medoid: &RelationalInstance) -> RelationLabel {
    let from_medoid = summary.source_instance_id.as_deref() == Some(medoid.instance_id.as_str());
    let phrase = if from_medoid {
        medoid.inter_text.clone()
    } else {
        phrase_between(&summary.summary_text).unwrap_or_else(|| medoid.inter_text.clone())
    };
    match label_phrase(&phrase) {
        Some((lemmas, label)) => RelationLabel { cluster_id: summary.cluster_id, label, lemmas },
        None => RelationLabel::unlabeled(summary.cluster_id),
    }
}

/// Summary plus label for every cluster.
pub fn label_clusters<'p, T>(
    clusters: &[RelationCluster<T>],
    instances: &[RelationalInstance],
    mut provider: Option<&mut (dyn Provider + 'p)>,
) -> Vec<(ClusterSummary, RelationLabel)> {
    let index: HashMap<&str, &RelationalInstance> = instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    clusters
        .iter()
        .map(|c| {
            let summary = summarize_cluster(c, &index, provider.as_deref_mut());
            let label = match index.get(c.medoid.as_str()) {
                Some(medoid) => extract_label(&summary, medoid),
                None => RelationLabel::unlabeled(c.cluster_id),
            };
            (summary, label)
        })
        .collect()
}

/// Replaces `CHARn` ids with canonical names for display.
pub fn render_names(text: &str, aliases: &AliasTable) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for t in tokenize(text) {
        let word = crate::text::strip_possessive(t.text);
        if let Some(n) = parse_char_id(word) {
            if let Some(name) = aliases.canonical.get(&crate::entities::CharacterId(n)) {
                out.push_str(&text[last..t.span.start]);
                out.push_str(name);
                last = t.span.start + word.len();
            }
        }
    }
    out.push_str(&text[last..]);
    out
}

fn one_line(s: &str) -> String {
    s.split(['\t', '\n', '\r']).collect::<Vec<_>>().join(" ")
}

/// `cluster_id<TAB>label<TAB>summary`, with a header row.
pub fn write_labels_tsv<W: Write>(mut out: W, rows: &[(ClusterSummary, RelationLabel)]) -> std::io::Result<()> {
    writeln!(out, "cluster_id\tlabel\tsummary")?;
    for (summary, label) in rows {
        writeln!(out, "{}\t{}\t{}", label.cluster_id, label.label, one_line(&summary.summary_text))?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum LabelTableError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a table written by [`write_labels_tsv`] as
/// `(cluster_id, label, summary)` rows.
pub fn read_labels_tsv<R: BufRead>(input: R) -> Result<Vec<(usize, String, String)>, LabelTableError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(label), summary) = (fields.next(), fields.next(), fields.next()) else {
            return Err(LabelTableError::Format { line: i + 1, reason: "expected three fields".into() });
        };
        let id = id.parse().map_err(|_| LabelTableError::Format { line: i + 1, reason: format!("bad cluster id {id:?}") })?;
        rows.push((id, label.to_owned(), summary.unwrap_or_default().to_owned()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentId;
    use crate::embeddings::Vector;
    use crate::entities::CharacterId;
    use crate::provider::ProviderError;
    use crate::relations::find_relational;

    fn instances(texts: &[&str]) -> Vec<RelationalInstance> {
        let sentences: Vec<_> =
            texts.iter().enumerate().map(|(i, t)| CanonicalSentence::from_text(SentId::new("d", i), t.to_string())).collect();
        find_relational(&sentences)
    }

    fn cluster(members: &[&RelationalInstance], medoid: usize) -> RelationCluster<f64> {
        RelationCluster {
            cluster_id: 3,
            members: members.iter().map(|i| i.instance_id.clone()).collect(),
            centroid: Vector::zeros(2),
            medoid: members[medoid].instance_id.clone(),
            medoid_vector: Vector::zeros(2),
        }
    }

    struct Lead(bool);

    impl Provider for Lead {
        fn id(&self) -> String {
            "lead".into()
        }
        fn dim(&mut self) -> Result<usize, ProviderError> {
            Ok(2)
        }
        fn embed(&mut self, _: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Err(ProviderError::Unsupported("embed".into()))
        }
        fn summarize(&mut self, sentences: &[String]) -> Result<String, ProviderError> {
            if self.0 {
                Ok(sentences[0].clone())
            } else {
                Err(ProviderError::Unavailable("down".into()))
            }
        }
        fn tag(&mut self, _: &str) -> Result<Vec<std::ops::Range<usize>>, ProviderError> {
            Ok(Vec::new())
        }
    }

    const SMILE: [&str; 4] = [
        "CHAR1 smiled at the look of amazement on CHAR0's face",
        "CHAR2 grinned at CHAR0",
        "CHAR7 smiling at CHAR8 as if everything had become possible him now",
        "CHAR0 stared as CHAR1 sidled back into the picture ... gave him a small smile",
    ];

    #[test]
    fn smile_cluster_labels_smile() {
        let inst = instances(&SMILE);
        let refs: Vec<_> = inst.iter().collect();
        let c = cluster(&refs, 0);
        let rows = label_clusters(&[c.clone()], &inst, Some(&mut Lead(true)));
        assert_eq!(rows[0].0.summary_text, SMILE[0]);
        assert_eq!(rows[0].0.source, SummarySource::Provider);
        assert_eq!(rows[0].1.label, "smile");
        assert_eq!(rows[0].1.lemmas, ["smile"]);

        let rows = label_clusters(&[c], &inst, None);
        assert_eq!(rows[0].0.source_instance_id.as_deref(), Some(inst[0].instance_id.as_str()));
        assert_eq!(rows[0].1.label, "smile");
    }

    #[test]
    fn talking_to_keeps_surface() {
        assert_eq!(label_phrase(" was talking to ").unwrap().1, "talking_to");
        assert_eq!(label_phrase(" looked at ").unwrap().1, "look_at");
        assert_eq!(label_phrase(" grinned at the sight of ").unwrap().1, "grin");
        assert_eq!(label_phrase(" was ").unwrap().1, "be");
        assert_eq!(label_phrase(" turned and looked at, ").unwrap().1, "turn_look_at");
    }

    #[test]
    fn no_verb_is_unlabeled() {
        assert!(label_phrase(" and ").is_none());
        let inst = instances(&["CHAR0 and CHAR1 were having good time"]);
        let refs: Vec<_> = inst.iter().collect();
        let rows = label_clusters(&[cluster(&refs, 0)], &inst, None);
        assert!(rows[0].1.is_unlabeled());
        assert_eq!(rows[0].1.label, UNLABELED);
    }

    #[test]
    fn singleton_and_failed_provider_use_medoid() {
        let inst = instances(&["CHAR4 waved at CHAR5."]);
        let refs: Vec<_> = inst.iter().collect();
        let rows = label_clusters(&[cluster(&refs, 0)], &inst, Some(&mut Lead(false)));
        assert_eq!(rows[0].0.summary_text, "CHAR4 waved at CHAR5.");
        assert_eq!(rows[0].0.source, SummarySource::Medoid);
        assert_eq!(rows[0].1.label, "wave_at");
    }

    #[test]
    fn labels_have_no_ids_or_punctuation() {
        for text in SMILE.iter().chain(&["CHAR1 told CHAR2 -- that's it!", "CHAR1, looking up at CHAR2"]) {
            for i in instances(&[text]) {
                if let Some((_, label)) = label_phrase(&i.inter_text) {
                    assert!(label.bytes().all(|b| b.is_ascii_lowercase() || b == b'_'), "{label}");
                }
            }
        }
    }

    #[test]
    fn renders_canonical_names() {
        let mut aliases = AliasTable::default();
        aliases.canonical.insert(CharacterId(1), "Dumbledore".into());
        aliases.canonical.insert(CharacterId(0), "Henry".into());
        assert_eq!(render_names(SMILE[0], &aliases), "Dumbledore smiled at the look of amazement on Henry's face");
    }

    #[test]
    fn tsv_round_trip() {
        let rows = vec![(
            ClusterSummary { cluster_id: 0, summary_text: "a\tb".into(), source: SummarySource::Medoid, source_instance_id: None },
            RelationLabel { cluster_id: 0, label: "smile".into(), lemmas: vec!["smile".into()] },
        )];
        let mut buf = Vec::new();
        write_labels_tsv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "cluster_id\tlabel\tsummary\n0\tsmile\ta b\n");
        assert_eq!(read_labels_tsv(&buf[..]).unwrap(), [(0, "smile".to_string(), "a b".to_string())]);
    }
}
