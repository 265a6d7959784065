//! Knowledge graph assembly and export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::corpus::SentId;
use crate::entities::{AliasTable, CharacterId};
use crate::relations::RelationalInstance;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KgError {
    #[error("cluster {0} has no label")]
    MissingLabel(usize),
    #[error("assignment covers {labels} instances but {instances} were given")]
    LengthMismatch { labels: usize, instances: usize },
    #[error("unknown graph format {0:?} (expected tsv, json or dot)")]
    UnknownFormat(String),
    #[error("invalid graph json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub sent_id: SentId,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: CharacterId,
    pub relation: String,
    pub object: CharacterId,
    pub provenance: Vec<Provenance>,
    /// Number of supporting instances.
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: BTreeMap<CharacterId, Node>,
    /// Sorted by subject, relation, object.
    pub edges: Vec<Triplet>,
}

/// Graph plus what was left out of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltGraph {
    pub graph: KnowledgeGraph,
    pub noise: usize,
}

/// One edge per `(subject, label, object)`; noise instances are counted and
/// skipped. `assignment` is aligned with `instances`.
pub fn build_graph(
    instances: &[RelationalInstance],
    assignment: &ClusterAssignment,
    labels: &BTreeMap<usize, String>,
    aliases: &AliasTable,
) -> Result<BuiltGraph, KgError> {
    if assignment.labels.len() != instances.len() {
        return Err(KgError::LengthMismatch { labels: assignment.labels.len(), instances: instances.len() });
    }
    let mut edges: BTreeMap<(CharacterId, String, CharacterId), Vec<Provenance>> = BTreeMap::new();
    let mut noise = 0;
    for (instance, cluster) in instances.iter().zip(&assignment.labels) {
        let Some(cluster) = cluster else {
            noise += 1;
            continue;
        };
        let label = labels.get(cluster).ok_or(KgError::MissingLabel(*cluster))?;
        edges.entry((instance.subject, label.clone(), instance.object)).or_default().push(Provenance {
            sent_id: instance.sent_id.clone(),
            instance_id: instance.instance_id.clone(),
        });
    }

    let mut nodes = BTreeMap::new();
    let mut triplets = Vec::with_capacity(edges.len());
    for ((subject, relation, object), mut provenance) in edges {
        for id in [subject, object] {
            nodes.entry(id).or_insert_with(|| node(id, aliases));
        }
        provenance.sort();
        triplets.push(Triplet { subject, relation, object, weight: provenance.len(), provenance });
    }
    Ok(BuiltGraph { graph: KnowledgeGraph { nodes, edges: triplets }, noise })
}

fn node(id: CharacterId, aliases: &AliasTable) -> Node {
    Node {
        name: aliases.canonical.get(&id).cloned().unwrap_or_else(|| id.to_string()),
        aliases: aliases.clusters.get(&id).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
    }
}

impl KnowledgeGraph {
    pub fn total_weight(&self) -> usize {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Undirected components ordered by smallest id; isolated nodes form
    /// their own component.
    pub fn connected_components(&self) -> Vec<BTreeSet<CharacterId>> {
        let ids: Vec<CharacterId> = self.nodes.keys().copied().collect();
        let index: BTreeMap<CharacterId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(&e.subject), index.get(&e.object)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<CharacterId>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().insert(*id);
        }
        let mut components: Vec<_> = groups.into_values().collect();
        components.sort_by_key(|c| *c.first().expect("non-empty"));
        components
    }

    pub fn from_json(text: &str) -> Result<Self, KgError> {
        serde_json::from_str(text).map_err(|e| KgError::Json(e.to_string()))
    }
}

pub fn connected_components(kg: &KnowledgeGraph) -> Vec<BTreeSet<CharacterId>> {
    kg.connected_components()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Tsv,
    Json,
    Dot,
}

impl GraphFormat {
    pub const ALL: [GraphFormat; 3] = [GraphFormat::Tsv, GraphFormat::Json, GraphFormat::Dot];

    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::Tsv => "tsv",
            GraphFormat::Json => "json",
            GraphFormat::Dot => "dot",
        }
    }
}

impl FromStr for GraphFormat {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" | "triples-tsv" => Ok(GraphFormat::Tsv),
            "json" => Ok(GraphFormat::Json),
            "dot" => Ok(GraphFormat::Dot),
            other => Err(KgError::UnknownFormat(other.to_owned())),
        }
    }
}

/// `subject<TAB>relation<TAB>object<TAB>weight` rows after a header, in
/// lexicographic order.
pub fn to_tsv(kg: &KnowledgeGraph) -> String {
    let mut rows: Vec<String> =
        kg.edges.iter().map(|e| format!("{}\t{}\t{}\t{}", e.subject, e.relation, e.object, e.weight)).collect();
    rows.sort();
    let mut out = String::from("subject\trelation\tobject\tweight\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn to_json(kg: &KnowledgeGraph) -> String {
    let mut s = serde_json::to_string_pretty(kg).expect("graph serializes");
    s.push('\n');
    s
}

fn dot_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Directed graph with canonical names as node labels and relations as edge
/// labels.
pub fn to_dot(kg: &KnowledgeGraph) -> String {
    let mut out = String::from("digraph kg {\n");
    for (id, node) in &kg.nodes {
        let _ = writeln!(out, "  {} [label={}];", dot_quote(&id.to_string()), dot_quote(&node.name));
    }
    for e in &kg.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [label={}, weight={}];",
            dot_quote(&e.subject.to_string()),
            dot_quote(&e.object.to_string()),
            dot_quote(&e.relation),
            e.weight
        );
    }
    out.push_str("}\n");
    out
}

pub fn export(kg: &KnowledgeGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Tsv => to_tsv(kg),
        GraphFormat::Json => to_json(kg),
        GraphFormat::Dot => to_dot(kg),
    }
}

/// Export by format name.
pub fn export_as(kg: &KnowledgeGraph, format: &str) -> Result<String, KgError> {
    Ok(export(kg, format.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Algorithm;
    use crate::embeddings::Metric;

    fn inst(doc_index: usize, s: u32, o: u32) -> RelationalInstance {
        let sent_id = SentId::new("d", doc_index);
        RelationalInstance {
            instance_id: crate::relations::instance_id(&sent_id, CharacterId(s), CharacterId(o)),
            sent_id,
            subject: CharacterId(s),
            object: CharacterId(o),
            inter_text: " x ".into(),
            symmetric: false,
            full_text: String::new(),
        }
    }

    fn assignment(labels: Vec<Option<usize>>) -> ClusterAssignment {
        let k = labels.iter().flatten().map(|c| c + 1).max().unwrap_or(0);
        ClusterAssignment { labels, k, algorithm: Algorithm::Kmeans, metric: Metric::Cosine, seed: 0 }
    }

    fn labels(names: &[&str]) -> BTreeMap<usize, String> {
        names.iter().enumerate().map(|(i, n)| (i, n.to_string())).collect()
    }

    fn aliases(names: &[(u32, &str)]) -> AliasTable {
        let mut t = AliasTable::default();
        for (id, name) in names {
            t.canonical.insert(CharacterId(*id), name.to_string());
            t.clusters.insert(CharacterId(*id), [name.to_string()].into());
        }
        t
    }

    #[test]
    fn empty_graph() {
        let built = build_graph(&[], &assignment(vec![]), &BTreeMap::new(), &AliasTable::default()).unwrap();
        assert!(built.graph.nodes.is_empty());
        assert_eq!(to_tsv(&built.graph), "subject\trelation\tobject\tweight\n");
        assert!(connected_components(&built.graph).is_empty());
    }

    #[test]
    fn duplicates_merge_into_weight() {
        let i = [inst(0, 1, 2), inst(1, 1, 2)];
        let built = build_graph(&i, &assignment(vec![Some(0), Some(0)]), &labels(&["smile"]), &AliasTable::default()).unwrap();
        assert_eq!(built.graph.edges.len(), 1);
        assert_eq!(built.graph.edges[0].weight, 2);
        assert_eq!(built.graph.edges[0].provenance.len(), 2);
    }

    #[test]
    fn single_edge_tsv_line() {
        let i = [inst(0, 59, 0)];
        let built = build_graph(&i, &assignment(vec![Some(0)]), &labels(&["talking_to"]), &AliasTable::default()).unwrap();
        assert_eq!(to_tsv(&built.graph), "subject\trelation\tobject\tweight\nCHAR59\ttalking_to\tCHAR0\t1\n");
    }

    #[test]
    fn eight_instance_fixture_matches_aggregation() {
        let i = [inst(0, 0, 1), inst(1, 0, 1), inst(2, 1, 0), inst(3, 2, 3), inst(4, 2, 3), inst(5, 0, 1), inst(6, 3, 2), inst(7, 0, 2)];
        let a = assignment(vec![Some(0), Some(1), Some(0), Some(1), Some(1), Some(0), None, Some(2)]);
        let l = labels(&["smile", "talking_to", "UNLABELED"]);
        let built = build_graph(&i, &a, &l, &AliasTable::default()).unwrap();

        // oracle: count every labelled (s, label, o) triple by hand-rolled scan
        let mut want: Vec<(u32, &str, u32, usize)> = Vec::new();
        for (x, c) in i.iter().zip(&a.labels) {
            let Some(c) = c else { continue };
            let key = (x.subject.0, l[c].as_str(), x.object.0);
            match want.iter_mut().find(|w| (w.0, w.1, w.2) == key) {
                Some(w) => w.3 += 1,
                None => want.push((key.0, key.1, key.2, 1)),
            }
        }
        want.sort();
        let got: Vec<_> = built.graph.edges.iter().map(|e| (e.subject.0, e.relation.as_str(), e.object.0, e.weight)).collect();
        assert_eq!(got, want);
        assert_eq!(built.noise, 1);
        assert_eq!(built.graph.total_weight() + built.noise, i.len());
    }

    #[test]
    fn missing_label_is_an_error() {
        let i = [inst(0, 0, 1)];
        assert_eq!(build_graph(&i, &assignment(vec![Some(4)]), &labels(&["a"]), &AliasTable::default()), Err(KgError::MissingLabel(4)));
    }

    #[test]
    fn components() {
        let i = [inst(0, 0, 1), inst(1, 1, 2), inst(2, 5, 6)];
        let built = build_graph(&i, &assignment(vec![Some(0); 3]), &labels(&["meet"]), &AliasTable::default()).unwrap();
        let comps = built.graph.connected_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], [0, 1, 2].map(CharacterId).into());
        assert_eq!(comps[1], [5, 6].map(CharacterId).into());
        let all: BTreeSet<_> = comps.iter().flatten().copied().collect();
        assert_eq!(all, built.graph.nodes.keys().copied().collect());
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let i = [inst(0, 0, 1), inst(1, 1, 0)];
        let built =
            build_graph(&i, &assignment(vec![Some(0), Some(1)]), &labels(&["say \"hi\"", "wave"]), &aliases(&[(0, "Ann"), (1, "Bo")]))
                .unwrap();
        let json = to_json(&built.graph);
        let back = KnowledgeGraph::from_json(&json).unwrap();
        assert_eq!(to_json(&back), json);
        assert!(matches!(export_as(&back, "svg"), Err(KgError::UnknownFormat(_))));
    }

    /// Recursive-descent check of the DOT grammar subset:
    /// `digraph ID { (node_stmt | edge_stmt) [;] ... }` with attribute lists.
    fn check_dot(src: &str) -> Result<(), String> {
        #[derive(Debug, PartialEq)]
        enum Tok {
            Id(String),
            Sym(char),
            Arrow,
        }
        let mut toks = Vec::new();
        let mut chars = src.chars().peekable();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c == '"' {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('\\') => s.push(chars.next().ok_or("dangling escape")?),
                        Some('"') => break,
                        Some('\n') | None => return Err("unterminated string".into()),
                        Some(c) => s.push(c),
                    }
                }
                toks.push(Tok::Id(s));
            } else if c.is_alphanumeric() || c == '_' {
                let mut s = String::new();
                while let Some(&c) = chars.peek().filter(|c| c.is_alphanumeric() || **c == '_' || **c == '.') {
                    s.push(c);
                    chars.next();
                }
                toks.push(Tok::Id(s));
            } else if c == '-' {
                chars.next();
                if chars.next() != Some('>') {
                    return Err("expected ->".into());
                }
                toks.push(Tok::Arrow);
            } else if "{}[]=;,".contains(c) {
                toks.push(Tok::Sym(c));
                chars.next();
            } else {
                return Err(format!("unexpected {c:?}"));
            }
        }
        let mut p = 0;
        let id = |p: &mut usize| match toks.get(*p) {
            Some(Tok::Id(_)) => {
                *p += 1;
                Ok(())
            }
            t => Err(format!("expected id, got {t:?}")),
        };
        let sym = |p: &mut usize, c: char| {
            if toks.get(*p) == Some(&Tok::Sym(c)) {
                *p += 1;
                Ok(())
            } else {
                Err(format!("expected {c:?} at {p}"))
            }
        };
        if toks.first() != Some(&Tok::Id("digraph".into())) {
            return Err("expected digraph".into());
        }
        p += 1;
        if matches!(toks.get(p), Some(Tok::Id(_))) {
            p += 1;
        }
        sym(&mut p, '{')?;
        while toks.get(p) != Some(&Tok::Sym('}')) {
            id(&mut p)?;
            while toks.get(p) == Some(&Tok::Arrow) {
                p += 1;
                id(&mut p)?;
            }
            if toks.get(p) == Some(&Tok::Sym('[')) {
                p += 1;
                while toks.get(p) != Some(&Tok::Sym(']')) {
                    id(&mut p)?;
                    sym(&mut p, '=')?;
                    id(&mut p)?;
                    if toks.get(p) == Some(&Tok::Sym(',')) || toks.get(p) == Some(&Tok::Sym(';')) {
                        p += 1;
                    }
                }
                p += 1;
            }
            if toks.get(p) == Some(&Tok::Sym(';')) {
                p += 1;
            }
            if p >= toks.len() {
                return Err("unclosed graph".into());
            }
        }
        p += 1;
        if p != toks.len() {
            return Err("trailing tokens".into());
        }
        Ok(())
    }

    #[test]
    fn dot_is_well_formed() {
        let i = [inst(0, 0, 1)];
        let built = build_graph(&i, &assignment(vec![Some(0)]), &labels(&["talking_to"]), &aliases(&[(0, "Albus \"the\" D"), (1, "Minerva")]))
            .unwrap();
        let dot = to_dot(&built.graph);
        check_dot(&dot).unwrap();
        assert!(dot.contains("\"CHAR0\" -> \"CHAR1\" [label=\"talking_to\", weight=1];"));
        assert!(dot.contains("[label=\"Albus \\\"the\\\" D\"]"));
        assert!(check_dot("digraph { a -> }").is_err());
        assert!(check_dot("digraph { \"a\" [label=\"x] }").is_err());
    }
}
