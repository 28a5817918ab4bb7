//! Binary functions as control-flow graphs of basic blocks.

mod corpus;
pub mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::asm::Instruction;

pub use corpus::{load_corpus, parse_corpus, read_corpus, write_corpus, CorpusError, MIN_INSTRUCTIONS};

pub type BlockId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Fallthrough,
    Taken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: BlockId,
    pub dst: BlockId,
    pub kind: EdgeKind,
}

/// Bookkeeping carried by a block inserted behind an always-false guard.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeadBranch {
    /// Index of the insertion position (in the plan) that created the block.
    pub slot: usize,
    /// Live block at whose end the guard sits.
    pub anchor: BlockId,
    /// `cmp r, r` followed by `jne` into the dead block.
    pub guard: Vec<Instruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instructions: Vec<Instruction>,
    /// Present only on dead-branch blocks.
    pub dead: Option<DeadBranch>,
}

impl BasicBlock {
    pub fn new(id: BlockId, instructions: Vec<Instruction>) -> Self {
        Self { id, instructions, dead: None }
    }

    pub fn is_dead_branch(&self) -> bool {
        self.dead.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryFunction {
    pub name: String,
    pub entry: BlockId,
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("function has no blocks")]
    Empty,
    #[error("duplicate block id {0}")]
    DuplicateBlock(BlockId),
    #[error("entry block {0} does not exist")]
    MissingEntry(BlockId),
    #[error("edge {0}->{1} references a missing block")]
    DanglingEdge(BlockId, BlockId),
    #[error("dead block {0} is malformed: {1}")]
    BadDeadBlock(BlockId, &'static str),
}

impl BinaryFunction {
    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn block_index(&self, id: BlockId) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.blocks.iter().filter(|b| !b.is_dead_branch())
    }

    pub fn dead_blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.blocks.iter().filter(|b| b.is_dead_branch())
    }

    pub fn dead_block_for_slot(&self, slot: usize) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.dead.as_ref().is_some_and(|d| d.slot == slot))
    }

    /// Instructions in layout order: every live block in turn, each followed
    /// by the guard and body of the dead branches anchored on it (in
    /// creation order).
    pub fn linearize(&self) -> Vec<&Instruction> {
        let mut out = Vec::with_capacity(self.instruction_count());
        for live in self.live_blocks() {
            out.extend(live.instructions.iter());
            for dead in self.dead_blocks() {
                let info = dead.dead.as_ref().expect("dead block");
                if info.anchor == live.id {
                    out.extend(info.guard.iter());
                    out.extend(dead.instructions.iter());
                }
            }
        }
        out
    }

    /// Checks the structural invariants every function must satisfy.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.blocks.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut ids = HashSet::new();
        for b in &self.blocks {
            if !ids.insert(b.id) {
                return Err(GraphError::DuplicateBlock(b.id));
            }
        }
        if !ids.contains(&self.entry) {
            return Err(GraphError::MissingEntry(self.entry));
        }
        for e in &self.edges {
            if !ids.contains(&e.src) || !ids.contains(&e.dst) {
                return Err(GraphError::DanglingEdge(e.src, e.dst));
            }
        }
        for b in self.dead_blocks() {
            let info = b.dead.as_ref().expect("dead block");
            if b.id == self.entry {
                return Err(GraphError::BadDeadBlock(b.id, "dead block is the entry"));
            }
            if !self.block(info.anchor).is_some_and(|a| !a.is_dead_branch()) {
                return Err(GraphError::BadDeadBlock(b.id, "anchor is not a live block"));
            }
            if info.guard.len() != 2 {
                return Err(GraphError::BadDeadBlock(b.id, "guard must have two instructions"));
            }
        }
        Ok(())
    }
}

/// Absolute differences in instruction and block counts of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub instr_diff: usize,
    pub cfg_node_diff: usize,
}

pub fn pair_stats(f1: &BinaryFunction, f2: &BinaryFunction) -> PairStats {
    PairStats {
        instr_diff: f1.instruction_count().abs_diff(f2.instruction_count()),
        cfg_node_diff: f1.blocks.len().abs_diff(f2.blocks.len()),
    }
}
