//! Rhetorical relations and EDU dependency graphs.
//!
//! Edges point from head to dependent. [`expand_graph`] turns a validated
//! graph into per-channel neighbour lists for message passing: a node
//! receives from the sources of its in-edges in each channel.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Document;
use crate::segmenter::{is_verb_like, EduSeq};

/// Edge label. The first 19 variants are the rhetorical relation taxonomy;
/// [`Relation::Generic`] labels the untyped edges of a fully connected graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    TopicComment,
    TopicChange,
    Textual,
    Temporal,
    Summary,
    SameUnit,
    MannerMeans,
    Joint,
    Explanation,
    Evaluation,
    Root,
    Enablement,
    Elaboration,
    Contrast,
    Condition,
    Comparison,
    Cause,
    Background,
    Attribution,
    Generic,
}

impl Relation {
    /// The 19 rhetorical relations in report order.
    pub const TAXONOMY: [Relation; 19] = [
        Relation::TopicComment,
        Relation::TopicChange,
        Relation::Textual,
        Relation::Temporal,
        Relation::Summary,
        Relation::SameUnit,
        Relation::MannerMeans,
        Relation::Joint,
        Relation::Explanation,
        Relation::Evaluation,
        Relation::Root,
        Relation::Enablement,
        Relation::Elaboration,
        Relation::Contrast,
        Relation::Condition,
        Relation::Comparison,
        Relation::Cause,
        Relation::Background,
        Relation::Attribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::TopicComment => "Topic-comment",
            Relation::TopicChange => "Topic-change",
            Relation::Textual => "Textual",
            Relation::Temporal => "Temporal",
            Relation::Summary => "Summary",
            Relation::SameUnit => "Same-unit",
            Relation::MannerMeans => "Manner-means",
            Relation::Joint => "Joint",
            Relation::Explanation => "Explanation",
            Relation::Evaluation => "Evaluation",
            Relation::Root => "Root",
            Relation::Enablement => "Enablement",
            Relation::Elaboration => "Elaboration",
            Relation::Contrast => "Contrast",
            Relation::Condition => "Condition",
            Relation::Comparison => "Comparison",
            Relation::Cause => "Cause",
            Relation::Background => "Background",
            Relation::Attribution => "Attribution",
            Relation::Generic => "Generic",
        }
    }

    pub fn is_taxonomy(self) -> bool {
        self != Relation::Generic
    }

    /// Position in [`Relation::TAXONOMY`]; `Generic` sorts last.
    pub fn order(self) -> usize {
        Relation::TAXONOMY
            .iter()
            .position(|&r| r == self)
            .unwrap_or(Relation::TAXONOMY.len())
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown relation name {0:?}")]
pub struct UnknownRelation(pub String);

impl FromStr for Relation {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::TAXONOMY
            .iter()
            .chain(std::iter::once(&Relation::Generic))
            .find(|r| r.name() == s)
            .copied()
            .ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub dep: usize,
    pub rel: Relation,
}

impl Edge {
    pub fn new(head: usize, dep: usize, rel: Relation) -> Self {
        Self { head, dep, rel }
    }
}

/// EDU nodes plus labelled head-to-dependent edges. Serializes as
/// `{"n_nodes": .., "edges": [{"head", "dep", "rel"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscourseGraph {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Provided,
    Heuristic,
    Complete,
}

impl FromStr for GraphMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "provided" => Ok(GraphMode::Provided),
            "heuristic" => Ok(GraphMode::Heuristic),
            "complete" => Ok(GraphMode::Complete),
            other => Err(format!("unknown graph mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    IndexOutOfRange { head: usize, dep: usize, n_nodes: usize },
    SelfEdge(usize),
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIssue {
    pub position: usize,
    pub kind: IssueKind,
}

impl fmt::Display for GraphIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::IndexOutOfRange { head, dep, n_nodes } => write!(
                f,
                "edge {}: ({head}, {dep}) out of range for {n_nodes} nodes",
                self.position
            ),
            IssueKind::SelfEdge(u) => write!(f, "edge {}: self edge on node {u}", self.position),
            IssueKind::Duplicate => write!(f, "edge {}: duplicate edge", self.position),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<GraphIssue>,
    pub warnings: Vec<GraphIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("document {0}: provided graph mode requires gold edges")]
    MissingEdges(String),
    #[error("document {doc}: invalid graph: {issues}")]
    Invalid { doc: String, issues: String },
    #[error("root index {root} out of range for {n_nodes} nodes")]
    RootOutOfRange { root: usize, n_nodes: usize },
    #[error("document {doc}: graph has {graph} nodes but segmentation has {edus} EDUs")]
    NodeCount {
        doc: String,
        graph: usize,
        edus: usize,
    },
    #[error("graph needs at least 2 EDUs, got {0}")]
    TooFewEdus(usize),
}

/// Checks bounds and self edges (errors) and duplicates (warnings).
/// Relation membership is enforced by the [`Relation`] type at parse time.
pub fn validate_graph(graph: &DiscourseGraph, n_edus: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    for (position, e) in graph.edges.iter().enumerate() {
        if e.head >= n_edus || e.dep >= n_edus {
            report.errors.push(GraphIssue {
                position,
                kind: IssueKind::IndexOutOfRange {
                    head: e.head,
                    dep: e.dep,
                    n_nodes: n_edus,
                },
            });
        } else if e.head == e.dep {
            report.errors.push(GraphIssue {
                position,
                kind: IssueKind::SelfEdge(e.head),
            });
        } else if !seen.insert((e.head, e.dep, e.rel)) {
            report.warnings.push(GraphIssue {
                position,
                kind: IssueKind::Duplicate,
            });
        }
    }
    report
}

/// Drops repeated `(head, dep, rel)` triples, keeping first occurrences.
pub fn dedup_edges(graph: &mut DiscourseGraph) -> usize {
    let mut seen = BTreeSet::new();
    let before = graph.edges.len();
    graph.edges.retain(|e| seen.insert((e.head, e.dep, e.rel)));
    before - graph.edges.len()
}

/// Deletes node `root` and its incident edges, compacting later indices.
pub fn remove_root(graph: &DiscourseGraph, root: usize) -> Result<DiscourseGraph, GraphError> {
    if root >= graph.n_nodes {
        return Err(GraphError::RootOutOfRange {
            root,
            n_nodes: graph.n_nodes,
        });
    }
    let shift = |i: usize| if i > root { i - 1 } else { i };
    let edges = graph
        .edges
        .iter()
        .filter(|e| e.head != root && e.dep != root)
        .map(|e| Edge::new(shift(e.head), shift(e.dep), e.rel))
        .collect();
    Ok(DiscourseGraph {
        n_nodes: graph.n_nodes - 1,
        edges,
    })
}

fn lead_tokens(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .skip_while(|t| t.chars().all(|c| !c.is_alphanumeric()))
        .take(3)
        .map(|t| t.to_lowercase())
        .collect()
}

/// Labels a dependent EDU from its leading tokens; first matching rule wins.
pub fn heuristic_label(dep_edu: &[String], _head_edu: &[String]) -> Relation {
    let lead = lead_tokens(dep_edu);
    let first = lead.first().map(String::as_str).unwrap_or("");
    let second = lead.get(1).map(String::as_str).unwrap_or("");
    let third = lead.get(2).map(String::as_str).unwrap_or("");
    let starts = |a: &str, b: &str| first == a && second == b;

    if matches!(first, "because" | "since" | "as") {
        Relation::Cause
    } else if matches!(first, "if" | "unless") {
        Relation::Condition
    } else if matches!(first, "but" | "however" | "although" | "yet" | "whereas") {
        Relation::Contrast
    } else if matches!(first, "when" | "while" | "after" | "before" | "until" | "then") {
        Relation::Temporal
    } else if (first == "to" && lead.len() > 1 && is_verb_like(second))
        || (starts("in", "order") && third == "to")
    {
        Relation::Enablement
    } else if matches!(first, "said" | "says" | "say" | "according" | "reported" | "told") {
        Relation::Attribution
    } else if matches!(first, "and" | "also" | "moreover" | "additionally") {
        Relation::Joint
    } else if starts("for", "example") || starts("such", "as") {
        Relation::Explanation
    } else if starts("in", "summary") || first == "overall" {
        Relation::Summary
    } else if matches!(first, "than" | "compared" | "like") {
        Relation::Comparison
    } else {
        Relation::Elaboration
    }
}

/// Builds the dependency graph for a segmented document.
///
/// * `Provided` validates the gold edges, removes a flagged root and
///   deduplicates repeated edges.
/// * `Heuristic` attaches every non-initial EDU of a sentence to the
///   sentence's first EDU and each sentence's first EDU to the previous
///   sentence's first EDU.
/// * `Complete` connects every ordered pair with [`Relation::Generic`].
pub fn build_graph(
    doc: &Document,
    seq: &EduSeq,
    mode: GraphMode,
) -> Result<(DiscourseGraph, ValidationReport), GraphError> {
    let n = seq.len();
    match mode {
        GraphMode::Provided => {
            let edges = doc
                .graph
                .as_ref()
                .ok_or_else(|| GraphError::MissingEdges(doc.id.clone()))?;
            let raw_nodes = doc.edus.as_ref().map_or(n, Vec::len);
            let raw = DiscourseGraph {
                n_nodes: raw_nodes,
                edges: edges.clone(),
            };
            let report = validate_graph(&raw, raw_nodes);
            if !report.is_ok() {
                let issues = report
                    .errors
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ");
                return Err(GraphError::Invalid {
                    doc: doc.id.clone(),
                    issues,
                });
            }
            let mut graph = match doc.root {
                Some(root) => remove_root(&raw, root)?,
                None => raw,
            };
            dedup_edges(&mut graph);
            if graph.n_nodes != n {
                return Err(GraphError::NodeCount {
                    doc: doc.id.clone(),
                    graph: graph.n_nodes,
                    edus: n,
                });
            }
            Ok((graph, report))
        }
        GraphMode::Heuristic => {
            if n < 2 {
                return Err(GraphError::TooFewEdus(n));
            }
            Ok((heuristic_graph(seq), ValidationReport::default()))
        }
        GraphMode::Complete => {
            if n < 2 {
                return Err(GraphError::TooFewEdus(n));
            }
            Ok((complete_graph(n), ValidationReport::default()))
        }
    }
}

pub fn heuristic_graph(seq: &EduSeq) -> DiscourseGraph {
    let n = seq.len();
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut sentence_head: Option<usize> = None;
    for i in 0..n {
        let starts_sentence = i == 0 || seq.sentence_ids[i] != seq.sentence_ids[i - 1];
        if starts_sentence {
            if let Some(h) = sentence_head {
                edges.push(Edge::new(h, i, heuristic_label(&seq.edus[i], &seq.edus[h])));
            }
            sentence_head = Some(i);
        } else if let Some(h) = sentence_head {
            edges.push(Edge::new(h, i, heuristic_label(&seq.edus[i], &seq.edus[h])));
        }
    }
    DiscourseGraph { n_nodes: n, edges }
}

pub fn complete_graph(n: usize) -> DiscourseGraph {
    let edges = (0..n)
        .flat_map(|h| (0..n).filter(move |&d| d != h).map(move |d| Edge::new(h, d, Relation::Generic)))
        .collect();
    DiscourseGraph { n_nodes: n, edges }
}

/// A message-passing channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Forward(Relation),
    Inverse(Relation),
    SelfLoop,
}

impl Channel {
    fn rank(self) -> (usize, usize) {
        match self {
            Channel::Forward(r) => (0, r.order()),
            Channel::Inverse(r) => (1, r.order()),
            Channel::SelfLoop => (2, 0),
        }
    }

    pub fn name(self) -> String {
        match self {
            Channel::Forward(r) => r.name().to_string(),
            Channel::Inverse(r) => format!("{}_inv", r.name()),
            Channel::SelfLoop => "SELF".to_string(),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// The fixed, ordered channel universe a model is parameterised over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpace {
    channels: Vec<Channel>,
}

impl ChannelSpace {
    /// `relations` in taxonomy order, then their inverses, then SELF.
    pub fn new(relations: &[Relation], add_inverse: bool, add_self: bool) -> Self {
        let mut rels = relations.to_vec();
        rels.sort_by_key(|r| r.order());
        rels.dedup();
        let mut channels: Vec<Channel> = rels.iter().map(|&r| Channel::Forward(r)).collect();
        if add_inverse {
            channels.extend(rels.iter().map(|&r| Channel::Inverse(r)));
        }
        if add_self {
            channels.push(Channel::SelfLoop);
        }
        Self { channels }
    }

    pub fn taxonomy(add_inverse: bool, add_self: bool) -> Self {
        Self::new(&Relation::TAXONOMY, add_inverse, add_self)
    }

    pub fn generic(add_inverse: bool, add_self: bool) -> Self {
        Self::new(&[Relation::Generic], add_inverse, add_self)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn index_of(&self, c: Channel) -> Option<usize> {
        self.channels.iter().position(|&x| x == c)
    }
}

/// One active channel of an expanded graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelEdges {
    pub channel: Channel,
    /// `(source, target)` pairs; the target aggregates from the source.
    pub edges: Vec<(usize, usize)>,
    /// `neighbors[u]`: sources feeding node `u`, ascending and unique.
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedGraph {
    pub base: DiscourseGraph,
    /// Present channels in fixed order: base relations by taxonomy order,
    /// then inverses, then SELF.
    pub channels: Vec<ChannelEdges>,
}

impl ExpandedGraph {
    pub fn n_nodes(&self) -> usize {
        self.base.n_nodes
    }
}

pub fn expand_graph(graph: &DiscourseGraph, add_inverse: bool, add_self: bool) -> ExpandedGraph {
    let n = graph.n_nodes;
    let mut present: Vec<Relation> = graph.edges.iter().map(|e| e.rel).collect();
    present.sort_by_key(|r| r.order());
    present.dedup();

    let mut pairs: Vec<(Channel, Vec<(usize, usize)>)> = Vec::new();
    for &r in &present {
        let edges = graph
            .edges
            .iter()
            .filter(|e| e.rel == r)
            .map(|e| (e.head, e.dep))
            .collect();
        pairs.push((Channel::Forward(r), edges));
    }
    if add_inverse {
        for &r in &present {
            let edges = graph
                .edges
                .iter()
                .filter(|e| e.rel == r)
                .map(|e| (e.dep, e.head))
                .collect();
            pairs.push((Channel::Inverse(r), edges));
        }
    }
    if add_self && n > 0 {
        pairs.push((Channel::SelfLoop, (0..n).map(|u| (u, u)).collect()));
    }
    pairs.sort_by_key(|(c, _)| c.rank());

    let channels = pairs
        .into_iter()
        .map(|(channel, edges)| {
            let mut neighbors = vec![Vec::new(); n];
            for &(s, t) in &edges {
                neighbors[t].push(s);
            }
            for list in &mut neighbors {
                list.sort_unstable();
                list.dedup();
            }
            ChannelEdges {
                channel,
                edges,
                neighbors,
            }
        })
        .collect();
    ExpandedGraph {
        base: graph.clone(),
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::segmenter::{segment_edus, CueLexicon, SegmentMode};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn relation_names_round_trip_and_are_closed() {
        assert_eq!(Relation::TAXONOMY.len(), 19);
        for r in Relation::TAXONOMY {
            assert_eq!(r.name().parse::<Relation>().unwrap(), r);
        }
        assert!("Foo".parse::<Relation>().is_err());
        let names: BTreeSet<_> = Relation::TAXONOMY.iter().map(|r| r.name()).collect();
        assert_eq!(names.len(), 19);
    }

    #[test]
    fn heuristic_labels() {
        assert_eq!(heuristic_label(&toks("because it rained"), &[]), Relation::Cause);
        assert_eq!(
            heuristic_label(&toks("the committee members"), &[]),
            Relation::Elaboration
        );
        assert_eq!(
            heuristic_label(&toks("but critics disagreed"), &[]),
            Relation::Contrast
        );
        assert_eq!(heuristic_label(&toks("to win the vote"), &[]), Relation::Enablement);
        assert_eq!(heuristic_label(&toks("in order to win"), &[]), Relation::Enablement);
        assert_eq!(heuristic_label(&toks("to the city"), &[]), Relation::Elaboration);
        assert_eq!(heuristic_label(&toks("For example , cats"), &[]), Relation::Explanation);
        assert_eq!(heuristic_label(&toks("\" If so"), &[]), Relation::Condition);
        assert_eq!(heuristic_label(&toks("overall it worked"), &[]), Relation::Summary);
        assert_eq!(heuristic_label(&toks("than ever"), &[]), Relation::Comparison);
        assert_eq!(heuristic_label(&toks("according to police"), &[]), Relation::Attribution);
        assert_eq!(heuristic_label(&toks("and then"), &[]), Relation::Joint);
        assert_eq!(heuristic_label(&toks("then and"), &[]), Relation::Temporal);
    }

    #[test]
    fn remove_root_examples() {
        let g = DiscourseGraph {
            n_nodes: 3,
            edges: vec![
                Edge::new(0, 1, Relation::Root),
                Edge::new(0, 2, Relation::Root),
            ],
        };
        let r = remove_root(&g, 0).unwrap();
        assert_eq!(r.n_nodes, 2);
        assert!(r.edges.is_empty());

        let g = DiscourseGraph {
            n_nodes: 3,
            edges: vec![
                Edge::new(0, 1, Relation::Root),
                Edge::new(1, 2, Relation::Cause),
            ],
        };
        let r = remove_root(&g, 0).unwrap();
        assert_eq!(r.edges, vec![Edge::new(0, 1, Relation::Cause)]);
        assert!(remove_root(&g, 3).is_err());
    }

    #[test]
    fn validate_examples() {
        let g = DiscourseGraph {
            n_nodes: 3,
            edges: vec![Edge::new(0, 5, Relation::Cause)],
        };
        let rep = validate_graph(&g, 3);
        assert!(matches!(
            rep.errors[0].kind,
            IssueKind::IndexOutOfRange { dep: 5, .. }
        ));

        let mut g = DiscourseGraph {
            n_nodes: 2,
            edges: vec![Edge::new(0, 1, Relation::Cause), Edge::new(0, 1, Relation::Cause)],
        };
        let rep = validate_graph(&g, 2);
        assert!(rep.is_ok());
        assert_eq!(rep.warnings.len(), 1);
        assert_eq!(dedup_edges(&mut g), 1);
        assert_eq!(g.edges.len(), 1);

        let g = DiscourseGraph {
            n_nodes: 2,
            edges: vec![Edge::new(1, 1, Relation::Joint)],
        };
        assert_eq!(validate_graph(&g, 2).errors[0].kind, IssueKind::SelfEdge(1));
    }

    fn gold_doc(edus: &[&str], edges: Vec<Edge>, root: Option<usize>) -> Document {
        Document {
            id: "d".into(),
            text: edus.join(" "),
            label: Label::Real,
            edus: Some(edus.iter().map(|s| s.to_string()).collect()),
            graph: Some(edges),
            root,
        }
    }

    #[test]
    fn provided_mode_removes_flagged_root() {
        let doc = gold_doc(
            &["ROOT", "first part", "second part"],
            vec![
                Edge::new(0, 1, Relation::Root),
                Edge::new(1, 2, Relation::Elaboration),
            ],
            Some(0),
        );
        let seq = segment_edus(&doc, SegmentMode::Gold, 200, &CueLexicon::default()).unwrap();
        let (g, _) = build_graph(&doc, &seq, GraphMode::Provided).unwrap();
        assert_eq!(g.n_nodes, 2);
        assert_eq!(g.edges, vec![Edge::new(0, 1, Relation::Elaboration)]);
        assert!(g.edges.iter().all(|e| e.rel != Relation::Root));
    }

    #[test]
    fn provided_mode_errors() {
        let mut doc = gold_doc(&["a b", "c d"], vec![Edge::new(0, 4, Relation::Cause)], None);
        let seq = segment_edus(&doc, SegmentMode::Gold, 200, &CueLexicon::default()).unwrap();
        assert!(matches!(
            build_graph(&doc, &seq, GraphMode::Provided),
            Err(GraphError::Invalid { .. })
        ));
        doc.graph = None;
        assert!(matches!(
            build_graph(&doc, &seq, GraphMode::Provided),
            Err(GraphError::MissingEdges(_))
        ));
    }

    #[test]
    fn heuristic_two_sentences() {
        let doc = Document::new("d", "X happened. This elaborates it.", Label::Real);
        let seq = segment_edus(&doc, SegmentMode::Rule, 200, &CueLexicon::default()).unwrap();
        assert_eq!(seq.len(), 2);
        let (g, _) = build_graph(&doc, &seq, GraphMode::Heuristic).unwrap();
        assert_eq!(g.edges, vec![Edge::new(0, 1, Relation::Elaboration)]);
    }

    #[test]
    fn heuristic_attachment_is_a_tree() {
        let doc = Document::new(
            "d",
            "We stayed home because it rained. The roads flooded, but the town was calm. \
             Officials said that the storm would pass.",
            Label::Real,
        );
        let seq = segment_edus(&doc, SegmentMode::Rule, 200, &CueLexicon::default()).unwrap();
        let (g, _) = build_graph(&doc, &seq, GraphMode::Heuristic).unwrap();
        assert_eq!(g.edges.len(), seq.len() - 1);
        // sentence heads: 0, 2, 4
        assert_eq!(
            g.edges,
            vec![
                Edge::new(0, 1, Relation::Cause),
                Edge::new(0, 2, Relation::Elaboration),
                Edge::new(2, 3, Relation::Contrast),
                Edge::new(2, 4, Relation::Elaboration),
                Edge::new(4, 5, Relation::Elaboration),
            ]
        );
    }

    #[test]
    fn complete_mode_pairs() {
        let g = complete_graph(3);
        assert_eq!(g.edges.len(), 6);
        assert!(g.edges.iter().all(|e| e.rel == Relation::Generic && e.head != e.dep));
    }

    #[test]
    fn expand_examples() {
        let g = DiscourseGraph {
            n_nodes: 2,
            edges: vec![Edge::new(0, 1, Relation::Cause)],
        };
        let x = expand_graph(&g, true, true);
        let got: Vec<(Channel, Vec<(usize, usize)>)> =
            x.channels.iter().map(|c| (c.channel, c.edges.clone())).collect();
        assert_eq!(
            got,
            vec![
                (Channel::Forward(Relation::Cause), vec![(0, 1)]),
                (Channel::Inverse(Relation::Cause), vec![(1, 0)]),
                (Channel::SelfLoop, vec![(0, 0), (1, 1)]),
            ]
        );
        assert_eq!(x.channels[0].neighbors, vec![vec![], vec![0]]);

        let plain = expand_graph(&g, false, false);
        assert_eq!(plain.channels.len(), 1);
        assert_eq!(plain.channels[0].edges, vec![(0, 1)]);

        let iso = DiscourseGraph {
            n_nodes: 3,
            edges: vec![Edge::new(0, 1, Relation::Cause)],
        };
        let x = expand_graph(&iso, false, true);
        let selfc = x.channels.last().unwrap();
        assert_eq!(selfc.channel, Channel::SelfLoop);
        assert_eq!(selfc.neighbors[2], vec![2]);
    }

    #[test]
    fn channel_order_is_taxonomy_then_inverse_then_self() {
        let g = DiscourseGraph {
            n_nodes: 3,
            edges: vec![
                Edge::new(0, 1, Relation::Cause),
                Edge::new(0, 2, Relation::Elaboration),
            ],
        };
        let names: Vec<String> = expand_graph(&g, true, true)
            .channels
            .iter()
            .map(|c| c.channel.name())
            .collect();
        assert_eq!(
            names,
            ["Elaboration", "Cause", "Elaboration_inv", "Cause_inv", "SELF"]
        );
        let space = ChannelSpace::taxonomy(true, true);
        assert_eq!(space.len(), 39);
        let idx: Vec<usize> = expand_graph(&g, true, true)
            .channels
            .iter()
            .map(|c| space.index_of(c.channel).unwrap())
            .collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn graph_strategy() -> impl Strategy<Value = DiscourseGraph> {
            (2usize..7).prop_flat_map(|n| {
                let edge = (0..n, 0..n, 0usize..19).prop_filter_map("self edge", |(h, d, r)| {
                    (h != d).then(|| Edge::new(h, d, Relation::TAXONOMY[r]))
                });
                proptest::collection::vec(edge, 0..12)
                    .prop_map(move |edges| DiscourseGraph { n_nodes: n, edges })
            })
        }

        proptest! {
            #[test]
            fn neighbor_lists_match_brute_force(g in graph_strategy(), inv: bool, slf: bool) {
                let x = expand_graph(&g, inv, slf);
                for ch in &x.channels {
                    for u in 0..g.n_nodes {
                        let mut expect: Vec<usize> = g.edges.iter().filter_map(|e| match ch.channel {
                            Channel::Forward(r) if e.rel == r && e.dep == u => Some(e.head),
                            Channel::Inverse(r) if e.rel == r && e.head == u => Some(e.dep),
                            _ => None,
                        }).collect();
                        if ch.channel == Channel::SelfLoop { expect.push(u); }
                        expect.sort_unstable();
                        expect.dedup();
                        prop_assert_eq!(&ch.neighbors[u], &expect);
                    }
                }
            }

            #[test]
            fn expansion_without_flags_is_identity(g in graph_strategy()) {
                let x = expand_graph(&g, false, false);
                let mut got: Vec<(usize, usize, Relation)> = x.channels.iter().flat_map(|c| {
                    let Channel::Forward(r) = c.channel else { unreachable!() };
                    c.edges.iter().map(move |&(h, d)| (h, d, r)).collect::<Vec<_>>()
                }).collect();
                let mut want: Vec<_> = g.edges.iter().map(|e| (e.head, e.dep, e.rel)).collect();
                got.sort();
                want.sort();
                prop_assert_eq!(got, want);
            }

            #[test]
            fn root_removal_leaves_no_root_edges(g in graph_strategy(), root in 0usize..7) {
                prop_assume!(root < g.n_nodes);
                let mut g = g;
                for e in g.edges.iter_mut() {
                    if e.head == root { e.rel = Relation::Root; }
                }
                let r = remove_root(&g, root).unwrap();
                prop_assert!(r.edges.iter().all(|e| e.head < r.n_nodes && e.dep < r.n_nodes));
                prop_assert!(r.edges.iter().all(|e| e.rel != Relation::Root || g.edges.iter().any(|o| o.rel == Relation::Root && o.head != root)));
            }
        }
    }
}
