//! Temporally grounded action graphs.
//!
//! An [`ActionGraph`] holds the actions of one video in transcript order,
//! one [`Reference`] per entity pointing back to the action whose outcome the
//! entity denotes, and optionally one [`TemporalSpan`] per action. Action
//! indices are 1-based; index 0 is the auxiliary raw-ingredient node, which
//! every graph contains implicitly. Slots are 1-based as well, so entity
//! `(2, 1)` is the first argument of the second action.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SyntacticType {
    #[serde(rename = "DOBJ")]
    Dobj,
    #[serde(rename = "PP")]
    Pp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticType {
    Food,
    Location,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub syn: SyntacticType,
    pub sem: SemanticType,
    /// Surface tokens. Empty for an implicit entity.
    pub tokens: Vec<String>,
}

impl EntityNode {
    pub fn new(syn: SyntacticType, sem: SemanticType, tokens: &[&str]) -> Self {
        Self { syn, sem, tokens: tokens.iter().map(|t| t.to_string()).collect() }
    }

    pub fn is_implicit(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub action: usize,
    pub slot: usize,
}

impl EntityId {
    pub fn new(action: usize, slot: usize) -> Self {
        Self { action, slot }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e({},{})", self.action, self.slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionNode {
    pub predicate: String,
    pub entities: Vec<EntityNode>,
    /// Set when the action's outcome is a location (e.g. a preheated oven).
    pub yields_location: bool,
}

impl ActionNode {
    pub fn new(predicate: &str, entities: Vec<EntityNode>) -> Self {
        Self { predicate: predicate.to_string(), entities, yields_location: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reference {
    pub action: usize,
    pub slot: usize,
    pub origin: usize,
}

impl Reference {
    pub fn entity(&self) -> EntityId {
        EntityId::new(self.action, self.slot)
    }
}

/// Inclusive frame interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TemporalSpan {
    pub start: usize,
    pub end: usize,
}

impl TemporalSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame <= self.end
    }
}

/// Which origins an entity may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompatibilityRule {
    /// Origin 0 is always allowed; Location entities may otherwise only
    /// reference location-producing actions; Food and Other entities may
    /// reference any earlier action.
    #[default]
    Typed,
    /// Any earlier action.
    Unconstrained,
}

impl CompatibilityRule {
    pub fn allows(&self, actions: &[ActionNode], entity: &EntityNode, origin: usize) -> bool {
        if origin == 0 {
            return true;
        }
        match self {
            CompatibilityRule::Unconstrained => true,
            CompatibilityRule::Typed => match entity.sem {
                SemanticType::Location => actions.get(origin - 1).map(|a| a.yields_location).unwrap_or(false),
                SemanticType::Food | SemanticType::Other => true,
            },
        }
    }
}

/// The neighbourhood explored by local search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MoveSet {
    #[serde(rename = "swaps-only")]
    SwapsOnly,
    #[default]
    #[serde(rename = "swaps+reassign")]
    SwapsAndReassign,
}

impl MoveSet {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "swaps-only" => Some(MoveSet::SwapsOnly),
            "swaps+reassign" => Some(MoveSet::SwapsAndReassign),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MoveSet::SwapsOnly => "swaps-only",
            MoveSet::SwapsAndReassign => "swaps+reassign",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RefChange {
    pub entity: EntityId,
    pub old: usize,
    pub new: usize,
}

/// A reversible edit of one or two references.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Move {
    changes: Vec<RefChange>,
}

impl Move {
    pub fn swap(a: EntityId, origin_a: usize, b: EntityId, origin_b: usize) -> Self {
        Self {
            changes: vec![
                RefChange { entity: a, old: origin_a, new: origin_b },
                RefChange { entity: b, old: origin_b, new: origin_a },
            ],
        }
    }

    pub fn reassign(entity: EntityId, old: usize, new: usize) -> Self {
        Self { changes: vec![RefChange { entity, old, new }] }
    }

    pub fn changes(&self) -> &[RefChange] {
        &self.changes
    }

    pub fn is_swap(&self) -> bool {
        self.changes.len() == 2
    }

    pub fn reverse(&self) -> Move {
        Move { changes: self.changes.iter().map(|c| RefChange { entity: c.entity, old: c.new, new: c.old }).collect() }
    }

    /// Smallest action index touched by the move.
    pub fn first_action(&self) -> usize {
        self.changes.iter().map(|c| c.entity.action).min().unwrap_or(usize::MAX)
    }
}

/// A rule the graph breaks. Violations are data, not errors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyPredicate { action: usize },
    ForwardReference { entity: EntityId, origin: usize },
    MissingReference { entity: EntityId },
    DuplicateReference { entity: EntityId },
    DanglingReference { entity: EntityId },
    SpanCount { spans: usize, actions: usize },
    InvertedSpan { action: usize },
    OverlappingSpans { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPredicate { action } => write!(f, "empty predicate at action {action}"),
            Violation::ForwardReference { entity, origin } => {
                write!(f, "self-or-forward reference: {entity} -> {origin}")
            }
            Violation::MissingReference { entity } => write!(f, "missing reference for {entity}"),
            Violation::DuplicateReference { entity } => {
                write!(f, "duplicate reference for {entity}")
            }
            Violation::DanglingReference { entity } => {
                write!(f, "reference to nonexistent entity {entity}")
            }
            Violation::SpanCount { spans, actions } => {
                write!(f, "{spans} spans for {actions} actions")
            }
            Violation::InvertedSpan { action } => write!(f, "inverted span at action {action}"),
            Violation::OverlappingSpans { first, second } => {
                write!(f, "overlapping spans: actions {first} and {second}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionGraph {
    pub actions: Vec<ActionNode>,
    /// One reference per entity, kept sorted by `(action, slot)`.
    pub references: Vec<Reference>,
    pub spans: Option<Vec<TemporalSpan>>,
}

impl ActionGraph {
    /// Builds a graph from per-entity origins laid out like `actions`.
    pub fn from_origins(actions: Vec<ActionNode>, origins: &[Vec<usize>]) -> Self {
        let mut references = Vec::new();
        for (i, per_action) in origins.iter().enumerate() {
            for (j, &origin) in per_action.iter().enumerate() {
                references.push(Reference { action: i + 1, slot: j + 1, origin });
            }
        }
        references.sort();
        Self { actions, references, spans: None }
    }

    pub fn with_spans(mut self, spans: Vec<TemporalSpan>) -> Self {
        self.spans = Some(spans);
        self
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_entities(&self) -> usize {
        self.actions.iter().map(|a| a.entities.len()).sum()
    }

    pub fn action(&self, index: usize) -> Option<&ActionNode> {
        index.checked_sub(1).and_then(|i| self.actions.get(i))
    }

    pub fn entity(&self, id: EntityId) -> Option<&EntityNode> {
        self.action(id.action).and_then(|a| id.slot.checked_sub(1).and_then(|s| a.entities.get(s)))
    }

    /// Entity ids in `(action, slot)` order.
    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.actions
            .iter()
            .enumerate()
            .flat_map(|(i, a)| (1..=a.entities.len()).map(move |slot| EntityId::new(i + 1, slot)))
    }

    pub fn origin(&self, id: EntityId) -> Option<usize> {
        self.reference_position(id).map(|pos| self.references[pos].origin)
    }

    fn reference_position(&self, id: EntityId) -> Option<usize> {
        self.references.binary_search_by(|r| (r.action, r.slot).cmp(&(id.action, id.slot))).ok()
    }

    /// Origins laid out per action, in slot order.
    pub fn origins(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.actions.iter().map(|a| vec![0; a.entities.len()]).collect();
        for r in &self.references {
            if let Some(slot) = r
                .action
                .checked_sub(1)
                .and_then(|i| out.get_mut(i))
                .and_then(|v| r.slot.checked_sub(1).and_then(|s| v.get_mut(s)))
            {
                *slot = r.origin;
            }
        }
        out
    }

    /// Per-frame action labels; 0 is background.
    pub fn frame_labels(&self, frames: usize) -> Result<Vec<usize>> {
        let spans = self.spans.as_ref().ok_or(Error::Ungrounded)?;
        let mut labels = vec![0; frames];
        for (i, span) in spans.iter().enumerate() {
            if span.end >= frames {
                return Err(Error::SpanOutOfBounds { action: i + 1, span: (span.start, span.end), frames });
            }
            for label in &mut labels[span.start..=span.end] {
                *label = i + 1;
            }
        }
        Ok(labels)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, a) in self.actions.iter().enumerate() {
            if a.predicate.trim().is_empty() {
                out.push(Violation::EmptyPredicate { action: i + 1 });
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for r in &self.references {
            let id = r.entity();
            if self.entity(id).is_none() {
                out.push(Violation::DanglingReference { entity: id });
                continue;
            }
            if !seen.insert(id) {
                out.push(Violation::DuplicateReference { entity: id });
            }
            if r.origin >= r.action {
                out.push(Violation::ForwardReference { entity: id, origin: r.origin });
            }
        }
        for id in self.entity_ids() {
            if !seen.contains(&id) {
                out.push(Violation::MissingReference { entity: id });
            }
        }

        if let Some(spans) = &self.spans {
            if spans.len() != self.actions.len() {
                out.push(Violation::SpanCount { spans: spans.len(), actions: self.actions.len() });
            }
            for (i, s) in spans.iter().enumerate() {
                if s.end < s.start {
                    out.push(Violation::InvertedSpan { action: i + 1 });
                }
            }
            for (i, pair) in spans.windows(2).enumerate() {
                if pair[0].end >= pair[1].start {
                    out.push(Violation::OverlappingSpans { first: i + 1, second: i + 2 });
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// The prefix `(a_{1:i}, r_{1:i})`. `i = 0` is the empty background context.
    pub fn subgraph(&self, i: usize) -> Result<Subgraph<'_>> {
        if i > self.actions.len() {
            return Err(Error::ActionOutOfRange { index: i, len: self.actions.len() });
        }
        let refs = self.references.partition_point(|r| r.action <= i);
        Ok(Subgraph { graph: self, len: i, refs })
    }

    /// Every legal move, ordered by the first entity's `(action, slot)`:
    /// swaps first, then reassignments by ascending new origin.
    pub fn enumerate_moves(&self, compat: CompatibilityRule, set: MoveSet) -> Vec<Move> {
        let mut moves = Vec::new();
        let refs = &self.references;
        for (a, ra) in refs.iter().enumerate() {
            let Some(ea) = self.entity(ra.entity()) else {
                continue;
            };
            for rb in &refs[a + 1..] {
                let Some(eb) = self.entity(rb.entity()) else {
                    continue;
                };
                if ra.origin == rb.origin {
                    continue;
                }
                if rb.origin < ra.action
                    && ra.origin < rb.action
                    && compat.allows(&self.actions, ea, rb.origin)
                    && compat.allows(&self.actions, eb, ra.origin)
                {
                    moves.push(Move::swap(ra.entity(), ra.origin, rb.entity(), rb.origin));
                }
            }
        }
        if set == MoveSet::SwapsAndReassign {
            for r in refs {
                let Some(e) = self.entity(r.entity()) else {
                    continue;
                };
                for origin in 0..r.action {
                    if origin != r.origin && compat.allows(&self.actions, e, origin) {
                        moves.push(Move::reassign(r.entity(), r.origin, origin));
                    }
                }
            }
        }
        moves
    }

    pub fn apply_move(&self, mv: &Move) -> Result<ActionGraph> {
        let mut out = self.clone();
        out.apply_move_in_place(mv)?;
        Ok(out)
    }

    /// Applies `mv` or leaves the graph untouched on error.
    pub fn apply_move_in_place(&mut self, mv: &Move) -> Result<()> {
        let mut positions = Vec::with_capacity(mv.changes().len());
        for c in mv.changes() {
            let pos = self.reference_position(c.entity).ok_or(Error::UnknownEntity(c.entity))?;
            let found = self.references[pos].origin;
            if found != c.old {
                return Err(Error::StaleMove { entity: c.entity, expected: c.old, found });
            }
            if c.new >= c.entity.action {
                return Err(Error::IllegalMove { entity: c.entity, origin: c.new });
            }
            positions.push(pos);
        }
        for (c, pos) in mv.changes().iter().zip(positions) {
            self.references[pos].origin = c.new;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphDoc::from(self)).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// A prefix view of a graph.
#[derive(Clone, Copy, Debug)]
pub struct Subgraph<'a> {
    graph: &'a ActionGraph,
    len: usize,
    refs: usize,
}

impl<'a> Subgraph<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn actions(&self) -> &'a [ActionNode] {
        &self.graph.actions[..self.len]
    }

    pub fn references(&self) -> &'a [Reference] {
        &self.graph.references[..self.refs]
    }

    pub fn to_graph(&self) -> ActionGraph {
        ActionGraph {
            actions: self.actions().to_vec(),
            references: self.references().to_vec(),
            spans: self.graph.spans.as_ref().map(|s| s[..self.len.min(s.len())].to_vec()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EntityDoc {
    syn: SyntacticType,
    sem: SemanticType,
    tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ActionDoc {
    predicate: String,
    entities: Vec<EntityDoc>,
    span: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    yields_location: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    actions: Vec<ActionDoc>,
    references: Vec<Reference>,
}

impl From<&ActionGraph> for GraphDoc {
    fn from(g: &ActionGraph) -> Self {
        let actions = g
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| ActionDoc {
                predicate: a.predicate.clone(),
                entities: a
                    .entities
                    .iter()
                    .map(|e| EntityDoc { syn: e.syn, sem: e.sem, tokens: e.tokens.clone() })
                    .collect(),
                span: g.spans.as_ref().and_then(|s| s.get(i)).map(|s| [s.start, s.end]),
                yields_location: a.yields_location,
            })
            .collect();
        GraphDoc { actions, references: g.references.clone() }
    }
}

impl TryFrom<GraphDoc> for ActionGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        let grounded = doc.actions.iter().filter(|a| a.span.is_some()).count();
        if grounded != 0 && grounded != doc.actions.len() {
            return Err(Error::InvalidGraph(format!("{grounded} of {} actions carry a span", doc.actions.len())));
        }
        let spans = (grounded > 0)
            .then(|| doc.actions.iter().filter_map(|a| a.span.map(|[s, e]| TemporalSpan::new(s, e))).collect());
        let actions = doc
            .actions
            .into_iter()
            .map(|a| ActionNode {
                predicate: a.predicate,
                entities: a
                    .entities
                    .into_iter()
                    .map(|e| EntityNode { syn: e.syn, sem: e.sem, tokens: e.tokens })
                    .collect(),
                yields_location: a.yields_location,
            })
            .collect();
        let mut references = doc.references;
        references.sort();
        Ok(ActionGraph { actions, references, spans })
    }
}
