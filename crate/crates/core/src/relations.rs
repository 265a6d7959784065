//! Relational sentence identification and symmetric expansion.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SentId;
use crate::entities::{CanonicalSentence, CharacterId};
use crate::text::tokenize;

/// Tokens that may sit between two mentions of a symmetric proposition.
pub const COORDINATORS: &[&str] = &["and", "or", "nor", ",", "&", "with"];

/// One directed (subject, object) reading of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalInstance {
    pub instance_id: String,
    pub sent_id: SentId,
    pub subject: CharacterId,
    pub object: CharacterId,
    /// Exact text between the first mentions of the two characters.
    pub inter_text: String,
    pub symmetric: bool,
    /// Canonicalized sentence text.
    pub full_text: String,
}

pub fn instance_id(sent_id: &SentId, subject: CharacterId, object: CharacterId) -> String {
    format!("{sent_id}:{subject}>{object}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

/// Symmetric when the text between the mentions holds nothing but
/// coordination tokens once surrounding punctuation is trimmed.
pub fn classify_text(inter_text: &str) -> Symmetry {
    let trimmed = inter_text.trim_matches(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '&' && c != ','));
    let symmetric = tokenize(trimmed).iter().all(|t| {
        let lower = t.text.to_lowercase();
        COORDINATORS.contains(&lower.as_str())
    });
    if symmetric {
        Symmetry::Symmetric
    } else {
        Symmetry::Asymmetric
    }
}

pub fn classify_symmetry(instance: &RelationalInstance) -> Symmetry {
    classify_text(&instance.inter_text)
}

/// Builds the instance of a sentence with exactly two distinct characters.
///
/// The first occurrence of each id defines the pair; the earlier one is the
/// subject.
pub fn relational_instance(sentence: &CanonicalSentence) -> Option<RelationalInstance> {
    let mut firsts = Vec::with_capacity(2);
    for m in &sentence.mentions {
        if firsts.iter().all(|f: &&crate::entities::CharMention| f.id != m.id) {
            firsts.push(m);
            if firsts.len() > 2 {
                return None;
            }
        }
    }
    let [a, b] = firsts[..] else { return None };
    let inter_text = sentence.text[a.span.end..b.span.start].to_string();
    let symmetric = classify_text(&inter_text) == Symmetry::Symmetric;
    Some(RelationalInstance {
        instance_id: instance_id(&sentence.sent_id, a.id, b.id),
        sent_id: sentence.sent_id.clone(),
        subject: a.id,
        object: b.id,
        inter_text,
        symmetric,
        full_text: sentence.text.clone(),
    })
}

/// Keeps sentences naming exactly two distinct characters.
pub fn find_relational(sentences: &[CanonicalSentence]) -> Vec<RelationalInstance> {
    sentences.par_iter().filter_map(relational_instance).collect()
}

/// Symmetric instances yield both directions; asymmetric ones are returned
/// unchanged.
pub fn expand(instance: &RelationalInstance) -> Vec<RelationalInstance> {
    if !instance.symmetric {
        return vec![instance.clone()];
    }
    let reversed = RelationalInstance {
        instance_id: instance_id(&instance.sent_id, instance.object, instance.subject),
        subject: instance.object,
        object: instance.subject,
        ..instance.clone()
    };
    vec![instance.clone(), reversed]
}

/// Expands every instance and drops repeated ids, keeping first-seen order.
pub fn expand_all(instances: &[RelationalInstance]) -> Vec<RelationalInstance> {
    let mut seen = HashSet::new();
    instances
        .iter()
        .flat_map(expand)
        .filter(|i| seen.insert(i.instance_id.clone()))
        .collect()
}

/// Counts used by the run report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationStats {
    pub relational_sentences: usize,
    pub symmetric: usize,
    pub asymmetric: usize,
    pub instances: usize,
}

pub fn stats(found: &[RelationalInstance], expanded: &[RelationalInstance]) -> RelationStats {
    let symmetric = found.iter().filter(|i| i.symmetric).count();
    RelationStats {
        relational_sentences: found.len(),
        symmetric,
        asymmetric: found.len() - symmetric,
        instances: expanded.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(i: usize, text: &str) -> CanonicalSentence {
        CanonicalSentence::from_text(SentId::new("d", i), text.to_string())
    }

    #[test]
    fn self_relation_is_excluded() {
        assert!(find_relational(&[sent(0, "CHAR0, I am CHAR0")]).is_empty());
    }

    #[test]
    fn three_characters_are_excluded() {
        assert!(find_relational(&[sent(0, "CHAR0 told CHAR1 about CHAR2.")]).is_empty());
        assert!(find_relational(&[sent(0, "CHAR0 slept.")]).is_empty());
    }

    #[test]
    fn looked_at_is_asymmetric() {
        let found = find_relational(&[sent(4, "CHAR0 looked at CHAR1")]);
        assert_eq!(found.len(), 1);
        let i = &found[0];
        assert_eq!((i.subject, i.object), (CharacterId(0), CharacterId(1)));
        assert_eq!(i.inter_text, " looked at ");
        assert_eq!(i.instance_id, "d:4:CHAR0>CHAR1");
        assert_eq!(classify_symmetry(i), Symmetry::Asymmetric);
        assert_eq!(expand(i), [i.clone()]);
    }

    #[test]
    fn coordination_is_symmetric() {
        let found = find_relational(&[sent(0, "CHAR0 and CHAR1 were having good time")]);
        assert!(found[0].symmetric);
        let out = expand(&found[0]);
        assert_eq!(out.len(), 2);
        assert_eq!((out[1].subject, out[1].object), (CharacterId(1), CharacterId(0)));
        assert_eq!(out[1].sent_id, out[0].sent_id);
        assert_eq!(out[1].full_text, out[0].full_text);
        assert_eq!(out[1].instance_id, "d:0:CHAR1>CHAR0");
    }

    #[test]
    fn symmetry_rule_cases() {
        assert_eq!(classify_text(", "), Symmetry::Symmetric);
        assert_eq!(classify_text(""), Symmetry::Symmetric);
        assert_eq!(classify_text(" & "), Symmetry::Symmetric);
        assert_eq!(classify_text(" AND "), Symmetry::Symmetric);
        assert_eq!(classify_text(" walked with "), Symmetry::Asymmetric);
        assert_eq!(classify_text("'s friend "), Symmetry::Asymmetric);
    }

    #[test]
    fn repeated_character_uses_first_occurrences() {
        let found = find_relational(&[sent(0, "CHAR3 waved at CHAR7 and CHAR3 laughed.")]);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].inter_text, " waved at ");
    }

    proptest! {
        #[test]
        fn expansion_counts_and_idempotence(spec in proptest::collection::vec((0u32..4, 0u32..4, proptest::bool::ANY), 0..20)) {
            let sentences: Vec<_> = spec
                .iter()
                .enumerate()
                .map(|(i, (a, b, and))| sent(i, &format!("CHAR{a} {} CHAR{b} left.", if *and { "and" } else { "met" })))
                .collect();
            let found = find_relational(&sentences);
            for f in &found {
                let ids: HashSet<_> = sentences[f.sent_id.index].mentions.iter().map(|m| m.id).collect();
                prop_assert_eq!(ids.len(), 2);
                prop_assert_ne!(f.subject, f.object);
            }
            let once = expand_all(&found);
            let s = stats(&found, &once);
            prop_assert_eq!(s.instances, s.asymmetric + 2 * s.symmetric);
            prop_assert_eq!(expand_all(&once), once);
        }
    }
}
