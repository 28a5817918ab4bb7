//! Feature spaces of the three model families and feature-space simulation
//! of dead-branch insertions.
//!
//! Node order in the graph views follows `BinaryFunction::blocks`, so dead
//! blocks appear after the live ones in materialization order. Guards belong
//! to their dead branch and are not counted in any node.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::asm::{categorize, normalize_for_sequence, GeminiCategory, Instruction, GMN_CLASSES};
use crate::embedding::Vocabulary;
use crate::function::{BinaryFunction, BlockId};
use crate::perturbation::{guard, Action, InsertionPlan};

/// Functions are truncated to this many tokens for the sequence model.
pub const SEQ_MAX_LEN: usize = 150;

/// Width of an ACFG node vector.
pub const ACFG_WIDTH: usize = 8;

/// ACFG component indices.
pub mod acfg {
    pub const INSTR: usize = 0;
    pub const ARITHMETIC: usize = 1;
    pub const TRANSFER: usize = 2;
    pub const CALL: usize = 3;
    pub const CONSTANT: usize = 4;
    pub const OUT_DEGREE: usize = 5;
    pub const IN_DEGREE: usize = 6;
    pub const NODES: usize = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "acfg-gnn")]
    AcfgGnn,
    #[serde(rename = "graph-matcher")]
    GraphMatcher,
    #[serde(rename = "seq-embed")]
    SeqEmbed,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::AcfgGnn, ModelFamily::GraphMatcher, ModelFamily::SeqEmbed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AcfgGnn => "acfg-gnn",
            Self::GraphMatcher => "graph-matcher",
            Self::SeqEmbed => "seq-embed",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

/// Node bookkeeping shared by the graph views.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphLayout {
    pub block_ids: Vec<BlockId>,
    /// Plan slot of every dead node, `None` for live nodes.
    pub dead_slots: Vec<Option<usize>>,
    /// Edges as node-index pairs, in the function's edge order.
    pub edges: Vec<(u32, u32)>,
}

impl GraphLayout {
    fn of(f: &BinaryFunction) -> Self {
        let idx = |id: BlockId| f.block_index(id).expect("valid edge") as u32;
        Self {
            block_ids: f.blocks.iter().map(|b| b.id).collect(),
            dead_slots: f.blocks.iter().map(|b| b.dead.as_ref().map(|d| d.slot)).collect(),
            edges: f.edges.iter().map(|e| (idx(e.src), idx(e.dst))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }

    pub fn node_of_slot(&self, slot: usize) -> Option<usize> {
        self.dead_slots.iter().position(|s| *s == Some(slot))
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.0 as usize == node).count()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.1 as usize == node).count()
    }

    /// Adds the dead node of `slot` if missing. Returns the node index and,
    /// when created, the `(anchor, successor)` nodes it was wired between.
    fn materialize(&mut self, plan: &InsertionPlan, slot: usize) -> (usize, Option<(usize, usize)>) {
        if let Some(n) = self.node_of_slot(slot) {
            return (n, None);
        }
        let anchor_id = plan.anchor(slot).expect("slot within plan");
        let anchor = self
            .block_ids
            .iter()
            .zip(&self.dead_slots)
            .position(|(id, d)| *id == anchor_id && d.is_none())
            .expect("anchor is a live node");
        let succ = self
            .edges
            .iter()
            .filter(|e| e.0 as usize == anchor)
            .map(|e| e.1 as usize)
            .find(|d| self.dead_slots[*d].is_none())
            .unwrap_or(anchor);
        let node = self.block_ids.len();
        self.block_ids.push(self.block_ids.iter().max().map_or(0, |m| m + 1));
        self.dead_slots.push(Some(slot));
        self.edges.push((anchor as u32, node as u32));
        self.edges.push((node as u32, succ as u32));
        (node, Some((anchor, succ)))
    }
}

/// Attributed CFG: per node `[instr, arithmetic, transfer, call, constant,
/// out-degree, in-degree, node count]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AcfgView {
    pub layout: GraphLayout,
    pub nodes: Vec<[u32; ACFG_WIDTH]>,
}

/// ACFG component incremented by an instruction of category `c`, besides the
/// instruction count.
pub fn acfg_component(c: GeminiCategory) -> Option<usize> {
    match c {
        GeminiCategory::Arithmetic => Some(acfg::ARITHMETIC),
        GeminiCategory::Transfer => Some(acfg::TRANSFER),
        GeminiCategory::Call => Some(acfg::CALL),
        GeminiCategory::Constant => Some(acfg::CONSTANT),
        GeminiCategory::Other => None,
    }
}

/// Contribution `u_c` of one category-`c` instruction to the five
/// instruction-dependent components.
pub fn acfg_unit(c: GeminiCategory) -> [u32; 5] {
    let mut u = [0; 5];
    u[acfg::INSTR] = 1;
    if let Some(k) = acfg_component(c) {
        u[k] = 1;
    }
    u
}

fn acfg_count(node: &mut [u32; ACFG_WIDTH], insn: &Instruction) {
    for (k, v) in acfg_unit(categorize(insn).gemini).iter().enumerate() {
        node[k] += v;
    }
}

/// Per-node bags of mnemonic-class counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BagView {
    pub layout: GraphLayout,
    pub bags: Vec<Vec<u32>>,
}

/// Token ids of the linearized function.
///
/// The full sequence is kept along with its block structure so insertions
/// land where the problem-space linearization puts them; models only see the
/// first [`SEQ_MAX_LEN`] tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeqView {
    full: Vec<u32>,
    groups: Vec<SeqGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SeqGroup {
    anchor: BlockId,
    live_len: usize,
    /// `(slot, body length)` of each dead branch after the live block.
    dead: Vec<(usize, usize)>,
}

/// Guard length in tokens.
const GUARD_LEN: usize = 2;

/// One position of a sequence-model input: a vocabulary id or a free vector
/// supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqItem {
    Token(u32),
    Free(usize),
}

impl SeqView {
    /// The model input: the first [`SEQ_MAX_LEN`] ids.
    pub fn tokens(&self) -> &[u32] {
        &self.full[..self.full.len().min(SEQ_MAX_LEN)]
    }

    pub fn full_len(&self) -> usize {
        self.full.len()
    }

    /// Offset just past the existing dead branches of `anchor`'s group, and
    /// the offset where slot `slot`'s body ends if it exists.
    fn offsets(&self, anchor: BlockId, slot: usize) -> (usize, Option<usize>) {
        let mut at = 0;
        let mut group_end = None;
        for g in &self.groups {
            at += g.live_len;
            for (s, len) in &g.dead {
                at += GUARD_LEN + len;
                if *s == slot {
                    return (at, Some(at));
                }
            }
            if g.anchor == anchor && group_end.is_none() {
                group_end = Some(at);
            }
        }
        (group_end.expect("anchor group exists"), None)
    }

    /// Sequence items with `per_slot` free positions appended to each listed
    /// slot's dead body (materializing empty branches where needed), truncated
    /// to [`SEQ_MAX_LEN`]. Free item `k * per_slot + j` is the `j`-th free
    /// vector of `slots[k]`.
    pub fn items_with_free(&self, plan: &InsertionPlan, slots: &[usize], per_slot: usize, guard_ids: &[u32]) -> Vec<SeqItem> {
        let mut groups = self.groups.clone();
        for &slot in slots {
            if !groups.iter().any(|g| g.dead.iter().any(|(s, _)| *s == slot)) {
                let anchor = plan.anchor(slot).expect("slot within plan");
                let g = groups.iter_mut().find(|g| g.anchor == anchor).expect("anchor group");
                g.dead.push((slot, usize::MAX));
            }
        }
        let mut out = Vec::new();
        let mut src = self.full.iter().copied();
        for g in &groups {
            out.extend(src.by_ref().take(g.live_len).map(SeqItem::Token));
            for (slot, len) in &g.dead {
                if *len == usize::MAX {
                    out.extend(guard_ids.iter().copied().map(SeqItem::Token));
                } else {
                    out.extend(src.by_ref().take(GUARD_LEN + len).map(SeqItem::Token));
                }
                if let Some(k) = slots.iter().position(|s| s == slot) {
                    out.extend((0..per_slot).map(|j| SeqItem::Free(k * per_slot + j)));
                }
            }
        }
        out.truncate(SEQ_MAX_LEN);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureView {
    Acfg(AcfgView),
    Bag(BagView),
    Seq(SeqView),
}

impl FeatureView {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Acfg(_) => ModelFamily::AcfgGnn,
            Self::Bag(_) => ModelFamily::GraphMatcher,
            Self::Seq(_) => ModelFamily::SeqEmbed,
        }
    }
}

/// The feature mapping of one model family.
#[derive(Debug, Clone)]
pub enum Extractor {
    Acfg,
    Bag,
    Seq(Arc<Vocabulary>),
}

impl Extractor {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Acfg => ModelFamily::AcfgGnn,
            Self::Bag => ModelFamily::GraphMatcher,
            Self::Seq(_) => ModelFamily::SeqEmbed,
        }
    }

    pub fn token_id(&self, insn: &Instruction) -> u32 {
        match self {
            Self::Seq(vocab) => vocab.id(&normalize_for_sequence(insn)),
            _ => panic!("token ids exist only for the sequence space"),
        }
    }

    /// Ids of the guard of `slot`.
    pub fn guard_ids(&self, slot: usize) -> Vec<u32> {
        guard(slot).iter().map(|i| self.token_id(i)).collect()
    }

    pub fn extract(&self, f: &BinaryFunction) -> FeatureView {
        match self {
            Self::Acfg => {
                let layout = GraphLayout::of(f);
                let n = layout.len() as u32;
                let nodes = f
                    .blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let mut v = [0u32; ACFG_WIDTH];
                        b.instructions.iter().for_each(|insn| acfg_count(&mut v, insn));
                        v[acfg::OUT_DEGREE] = layout.out_degree(i) as u32;
                        v[acfg::IN_DEGREE] = layout.in_degree(i) as u32;
                        v[acfg::NODES] = n;
                        v
                    })
                    .collect();
                FeatureView::Acfg(AcfgView { layout, nodes })
            }
            Self::Bag => {
                let bags = f
                    .blocks
                    .iter()
                    .map(|b| {
                        let mut bag = vec![0u32; GMN_CLASSES];
                        for insn in &b.instructions {
                            bag[categorize(insn).gmn_class as usize] += 1;
                        }
                        bag
                    })
                    .collect();
                FeatureView::Bag(BagView { layout: GraphLayout::of(f), bags })
            }
            Self::Seq(_) => {
                let full = f.linearize().into_iter().map(|i| self.token_id(i)).collect();
                let groups = f
                    .live_blocks()
                    .map(|live| SeqGroup {
                        anchor: live.id,
                        live_len: live.instructions.len(),
                        dead: f
                            .dead_blocks()
                            .filter_map(|d| d.dead.as_ref().filter(|info| info.anchor == live.id).map(|info| (info.slot, d.instructions.len())))
                            .collect(),
                    })
                    .collect();
                FeatureView::Seq(SeqView { full, groups })
            }
        }
    }

    /// The view of `apply_action(f, plan, a)` computed from the view of `f`.
    pub fn simulate(&self, view: &FeatureView, plan: &InsertionPlan, a: &Action) -> FeatureView {
        let mut out = view.clone();
        self.simulate_in_place(&mut out, plan, a);
        out
    }

    /// Adds an empty dead node for `slot` to a graph view if it has none and
    /// returns its node index. Sequence views have no nodes and return `None`.
    pub fn materialize_empty(view: &mut FeatureView, plan: &InsertionPlan, slot: usize) -> Option<usize> {
        match view {
            FeatureView::Acfg(v) => {
                let (node, created) = v.layout.materialize(plan, slot);
                if let Some((anchor, succ)) = created {
                    let n = v.layout.len() as u32;
                    for row in &mut v.nodes {
                        row[acfg::NODES] = n;
                    }
                    let mut row = [0u32; ACFG_WIDTH];
                    row[acfg::OUT_DEGREE] = 1;
                    row[acfg::IN_DEGREE] = 1;
                    row[acfg::NODES] = n;
                    v.nodes.push(row);
                    v.nodes[anchor][acfg::OUT_DEGREE] += 1;
                    v.nodes[succ][acfg::IN_DEGREE] += 1;
                }
                Some(node)
            }
            FeatureView::Bag(v) => {
                let (node, created) = v.layout.materialize(plan, slot);
                if created.is_some() {
                    v.bags.push(vec![0; GMN_CLASSES]);
                }
                Some(node)
            }
            FeatureView::Seq(_) => None,
        }
    }

    pub fn simulate_in_place(&self, view: &mut FeatureView, plan: &InsertionPlan, a: &Action) {
        match view {
            FeatureView::Acfg(_) => {
                let node = Self::materialize_empty(view, plan, a.position).expect("graph view");
                let FeatureView::Acfg(v) = view else { unreachable!() };
                acfg_count(&mut v.nodes[node], &a.instruction);
            }
            FeatureView::Bag(_) => {
                let node = Self::materialize_empty(view, plan, a.position).expect("graph view");
                let FeatureView::Bag(v) = view else { unreachable!() };
                v.bags[node][categorize(&a.instruction).gmn_class as usize] += 1;
            }
            FeatureView::Seq(v) => {
                let anchor = plan.anchor(a.position).expect("slot within plan");
                let id = self.token_id(&a.instruction);
                match v.offsets(anchor, a.position) {
                    (_, Some(end)) => {
                        v.full.insert(end, id);
                        let g = v.groups.iter_mut().flat_map(|g| g.dead.iter_mut()).find(|(s, _)| *s == a.position);
                        g.expect("slot group").1 += 1;
                    }
                    (at, None) => {
                        let mut ins = self.guard_ids(a.position);
                        ins.push(id);
                        v.full.splice(at..at, ins);
                        let g = v.groups.iter_mut().find(|g| g.anchor == anchor).expect("anchor group");
                        g.dead.push((a.position, 1));
                    }
                }
            }
        }
    }
}
