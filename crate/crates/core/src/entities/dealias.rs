use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::distance::name_distance;
use super::mentions::Mention;
use super::CharacterId;
use crate::clustering::dbscan_with;

#[derive(Debug, thiserror::Error)]
pub enum DealiasError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("min_pts must be at least 1")]
    MinPts,
    #[error("attach_threshold must lie in [0, 1], got {0}")]
    AttachThreshold(f64),
    #[error("override line {line}: {reason}")]
    Override { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DealiasConfig {
    pub epsilon: f64,
    pub min_pts: usize,
    pub attach_threshold: f64,
}

impl Default for DealiasConfig {
    fn default() -> Self {
        Self { epsilon: 0.3, min_pts: 2, attach_threshold: 0.3 }
    }
}

impl DealiasConfig {
    pub fn validate(&self) -> Result<(), DealiasError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(DealiasError::Epsilon(self.epsilon));
        }
        if self.min_pts == 0 {
            return Err(DealiasError::MinPts);
        }
        if !(0.0..=1.0).contains(&self.attach_threshold) {
            return Err(DealiasError::AttachThreshold(self.attach_threshold));
        }
        Ok(())
    }
}

/// Partition of name surfaces into characters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    pub clusters: BTreeMap<CharacterId, BTreeSet<String>>,
    pub canonical: BTreeMap<CharacterId, String>,
    /// Occurrences per surface.
    pub frequency: BTreeMap<String, usize>,
}

/// One character in the exported alias table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub canonical: String,
    pub aliases: Vec<String>,
    pub count: usize,
}

impl AliasTable {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn character_of(&self, surface: &str) -> Option<CharacterId> {
        self.clusters.iter().find(|(_, s)| s.contains(surface)).map(|(id, _)| *id)
    }

    /// Surface → character lookup for every alias.
    pub fn surface_index(&self) -> BTreeMap<&str, CharacterId> {
        self.clusters
            .iter()
            .flat_map(|(id, surfaces)| surfaces.iter().map(move |s| (s.as_str(), *id)))
            .collect()
    }

    pub fn count(&self, id: CharacterId) -> usize {
        self.clusters
            .get(&id)
            .map(|s| s.iter().map(|a| self.frequency.get(a).copied().unwrap_or(0)).sum())
            .unwrap_or(0)
    }

    /// `{CHARn: {canonical, aliases, count}}` view used for export.
    pub fn export(&self) -> BTreeMap<CharacterId, AliasEntry> {
        self.clusters
            .iter()
            .map(|(id, surfaces)| {
                let entry = AliasEntry {
                    canonical: self.canonical.get(id).cloned().unwrap_or_default(),
                    aliases: surfaces.iter().cloned().collect(),
                    count: self.count(*id),
                };
                (*id, entry)
            })
            .collect()
    }

    /// Rebuilds a table from its export plus per-surface frequencies.
    pub fn from_export(entries: BTreeMap<CharacterId, AliasEntry>, frequency: BTreeMap<String, usize>) -> Self {
        let mut table = AliasTable { frequency, ..Default::default() };
        for (id, entry) in entries {
            table.clusters.insert(id, entry.aliases.into_iter().collect());
            table.canonical.insert(id, entry.canonical);
        }
        table
    }
}

fn tokens(surface: &str) -> BTreeSet<&str> {
    surface.split_whitespace().collect()
}

fn first_letter(surface: &str) -> char {
    surface.chars().next().map(|c| c.to_uppercase().next().unwrap_or(c)).unwrap_or(' ')
}

/// Longest member whose tokens include those of the most frequent surface.
fn canonical_of(members: &BTreeSet<String>, frequency: &BTreeMap<String, usize>) -> String {
    let freq = |s: &String| frequency.get(s).copied().unwrap_or(0);
    let Some(top) = members.iter().max_by(|a, b| freq(a).cmp(&freq(b)).then_with(|| b.cmp(a))) else {
        return String::new();
    };
    let top_tokens = tokens(top);
    members
        .iter()
        .filter(|m| tokens(m).is_superset(&top_tokens))
        .max_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| b.cmp(a)))
        .cloned()
        .unwrap_or_else(|| top.clone())
}

/// Clusters mention surfaces into characters.
///
/// Phase 1 runs DBSCAN over [`name_distance`] separately for surfaces that
/// share a first letter. Phase 2 attaches each leftover surface to a
/// phase-1 cluster with a member containing all of its tokens (ties go to
/// the more frequent cluster), otherwise to the cluster with the closest
/// member within `attach_threshold`. Phase 3 makes singletons of the rest.
/// Ids are handed out by descending total frequency, `CHAR0` first.
pub fn dealias(mentions: &[Mention], config: &DealiasConfig) -> AliasTable {
    let mut frequency: BTreeMap<String, usize> = BTreeMap::new();
    for m in mentions {
        *frequency.entry(m.surface.clone()).or_default() += 1;
    }
    let surfaces: Vec<&str> = frequency.keys().map(String::as_str).collect();

    let mut partitions: BTreeMap<char, Vec<&str>> = BTreeMap::new();
    for s in &surfaces {
        partitions.entry(first_letter(s)).or_default().push(s);
    }

    let mut phase1: Vec<Vec<&str>> = Vec::new();
    let mut leftovers: Vec<&str> = Vec::new();
    for members in partitions.values() {
        let labels = dbscan_with(members.len(), config.min_pts, |i, j| {
            name_distance(members[i], members[j]) <= config.epsilon
        });
        let base = phase1.len();
        for (surface, label) in members.iter().zip(labels) {
            match label {
                Some(c) => {
                    if phase1.len() <= base + c {
                        phase1.resize_with(base + c + 1, Vec::new);
                    }
                    phase1[base + c].push(surface);
                }
                None => leftovers.push(surface),
            }
        }
    }

    let freq = |s: &str| frequency.get(s).copied().unwrap_or(0);
    let cluster_freq: Vec<usize> = phase1.iter().map(|c| c.iter().map(|s| freq(s)).sum()).collect();

    let mut attached: Vec<Vec<&str>> = vec![Vec::new(); phase1.len()];
    let mut singletons: Vec<&str> = Vec::new();
    for surface in leftovers {
        let own = tokens(surface);
        let by_tokens = phase1
            .iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|m| tokens(m).is_superset(&own)))
            .max_by(|(a, _), (b, _)| cluster_freq[*a].cmp(&cluster_freq[*b]).then_with(|| b.cmp(a)))
            .map(|(i, _)| i);
        let target = by_tokens.or_else(|| {
            phase1
                .iter()
                .enumerate()
                .filter_map(|(i, c)| {
                    let d = c.iter().map(|m| name_distance(surface, m)).fold(f64::INFINITY, f64::min);
                    (d <= config.attach_threshold).then_some((i, d))
                })
                .min_by(|(ia, da), (ib, db)| da.total_cmp(db).then_with(|| ia.cmp(ib)))
                .map(|(i, _)| i)
        });
        match target {
            Some(i) => attached[i].push(surface),
            None => singletons.push(surface),
        }
    }

    let mut groups: Vec<BTreeSet<String>> = phase1
        .into_iter()
        .zip(attached)
        .map(|(c, a)| c.into_iter().chain(a).map(str::to_owned).collect())
        .collect();
    groups.extend(singletons.into_iter().map(|s| BTreeSet::from([s.to_owned()])));

    let total = |g: &BTreeSet<String>| g.iter().map(|s| freq(s)).sum::<usize>();
    groups.sort_by(|a, b| total(b).cmp(&total(a)).then_with(|| a.first().cmp(&b.first())));

    let mut table = AliasTable { frequency: frequency.clone(), ..Default::default() };
    for (n, members) in groups.into_iter().enumerate() {
        let id = CharacterId(n as u32);
        table.canonical.insert(id, canonical_of(&members, &frequency));
        table.clusters.insert(id, members);
    }
    table
}

/// Parses `surface<TAB>CHARn` override lines. Blank lines and `#` comments
/// are skipped.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, CharacterId)>, DealiasError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((surface, id)) = line.split_once('\t') else {
            return Err(DealiasError::Override { line: n + 1, reason: "expected surface<TAB>CHARn".into() });
        };
        let id = id
            .trim()
            .parse()
            .map_err(|e: super::ParseCharacterIdError| DealiasError::Override { line: n + 1, reason: e.to_string() })?;
        out.push((surface.to_owned(), id));
    }
    Ok(out)
}

/// Moves surfaces to the given characters. Ids are kept stable; clusters
/// emptied by a move disappear and new ids are created on demand.
pub fn apply_overrides(table: &mut AliasTable, overrides: &[(String, CharacterId)]) {
    let mut touched = HashSet::new();
    for (surface, target) in overrides {
        for (id, members) in table.clusters.iter_mut() {
            if members.remove(surface) {
                touched.insert(*id);
            }
        }
        table.clusters.entry(*target).or_default().insert(surface.clone());
        table.frequency.entry(surface.clone()).or_insert(0);
        touched.insert(*target);
    }
    table.clusters.retain(|_, members| !members.is_empty());
    table.canonical.retain(|id, _| table.clusters.contains_key(id));
    for id in touched {
        if let Some(members) = table.clusters.get(&id) {
            table.canonical.insert(id, canonical_of(members, &table.frequency));
        }
    }
}
