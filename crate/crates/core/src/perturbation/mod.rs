//! Dead-branch addition.
//!
//! An [`InsertionPlan`] fixes `B` live blocks. The first instruction inserted
//! at slot `s` materializes a dead block guarded by `cmp rax, rax` /
//! `jne .Ldead<s>` at the end of the slot's anchor block; later insertions at
//! the same slot append to that block. Live blocks are never touched.

mod safety;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asm::{parse_instruction, Instruction, Operand};
use crate::function::{BasicBlock, BinaryFunction, BlockId, DeadBranch, Edge, EdgeKind};
use crate::rng;

pub use safety::{check as check_safety, is_safe, UnsafeReason};

/// Register compared against itself by every guard.
pub const GUARD_REGISTER: &str = "rax";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("`{instruction}` is not allowed in a dead block: {reason}")]
    UnsafeInstruction { instruction: String, reason: UnsafeReason },
    #[error("insertion slot {slot} is outside the plan ({len} slots)")]
    InvalidSlot { slot: usize, len: usize },
    #[error("anchor block {0} is not a live block of the function")]
    MissingAnchor(BlockId),
}

/// The insertion positions of one attack, each "after live block X".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InsertionPlan {
    positions: Vec<BlockId>,
}

impl InsertionPlan {
    pub fn new(positions: Vec<BlockId>) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[BlockId] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn anchor(&self, slot: usize) -> Result<BlockId, PerturbError> {
        self.positions.get(slot).copied().ok_or(PerturbError::InvalidSlot { slot, len: self.positions.len() })
    }
}

/// Insert `instruction` into the dead block of plan slot `position`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub position: usize,
    pub instruction: Instruction,
}

/// Picks `b` anchors among the live blocks: distinct when there are at least
/// `b` of them, otherwise every block once plus random repeats.
pub fn get_positions(f: &BinaryFunction, b: usize, seed: u64) -> InsertionPlan {
    let live: Vec<BlockId> = f.live_blocks().map(|blk| blk.id).collect();
    assert!(!live.is_empty(), "function has no live blocks");
    let mut rng = rng::stream(seed, 0x706c_616e);
    let positions = if live.len() >= b {
        rand::seq::index::sample(&mut rng, live.len(), b).into_iter().map(|i| live[i]).collect()
    } else {
        let mut all = live.clone();
        all.shuffle(&mut rng);
        while all.len() < b {
            all.push(live[rng.gen_range(0..live.len())]);
        }
        all
    };
    InsertionPlan { positions }
}

pub fn dead_label(slot: usize) -> String {
    format!(".Ldead{slot}")
}

/// `cmp rax, rax` / `jne .Ldead<slot>`: equal operands never set ZF to zero.
pub fn guard(slot: usize) -> Vec<Instruction> {
    vec![
        parse_instruction(&format!("cmp {GUARD_REGISTER}, {GUARD_REGISTER}")).expect("guard compare"),
        parse_instruction(&format!("jne {}", dead_label(slot))).expect("guard jump"),
    ]
}

/// Block that execution would reach after the dead block: the anchor's first
/// live successor, or the anchor itself when it has none.
pub fn dead_successor(f: &BinaryFunction, anchor: BlockId) -> BlockId {
    f.edges
        .iter()
        .filter(|e| e.src == anchor)
        .map(|e| e.dst)
        .find(|d| f.block(*d).is_some_and(|b| !b.is_dead_branch()))
        .unwrap_or(anchor)
}

/// Next free block id.
pub fn next_block_id(f: &BinaryFunction) -> BlockId {
    f.blocks.iter().map(|b| b.id).max().map_or(0, |m| m + 1)
}

/// The guard, the empty dead block and its two edges for `slot`, without
/// modifying `f`.
pub fn make_dead_branch(
    f: &BinaryFunction,
    plan: &InsertionPlan,
    slot: usize,
) -> Result<(Vec<Instruction>, BasicBlock, Vec<Edge>), PerturbError> {
    let anchor = plan.anchor(slot)?;
    if !f.block(anchor).is_some_and(|b| !b.is_dead_branch()) {
        return Err(PerturbError::MissingAnchor(anchor));
    }
    let id = next_block_id(f);
    let guard = guard(slot);
    let block = BasicBlock {
        id,
        instructions: Vec::new(),
        dead: Some(DeadBranch { slot, anchor, guard: guard.clone() }),
    };
    let edges = vec![
        Edge { src: anchor, dst: id, kind: EdgeKind::Taken },
        Edge { src: id, dst: dead_successor(f, anchor), kind: EdgeKind::Fallthrough },
    ];
    Ok((guard, block, edges))
}

/// Adds the (empty) dead block of `slot` if it does not exist yet and returns
/// its index in `f.blocks`.
pub fn materialize(f: &mut BinaryFunction, plan: &InsertionPlan, slot: usize) -> Result<usize, PerturbError> {
    if let Some(i) = f.blocks.iter().position(|b| b.dead.as_ref().is_some_and(|d| d.slot == slot)) {
        return Ok(i);
    }
    let (_, block, edges) = make_dead_branch(f, plan, slot)?;
    f.blocks.push(block);
    f.edges.extend(edges);
    Ok(f.blocks.len() - 1)
}

pub fn apply_action(f: &BinaryFunction, plan: &InsertionPlan, a: &Action) -> Result<BinaryFunction, PerturbError> {
    let mut out = f.clone();
    apply_action_in_place(&mut out, plan, a)?;
    Ok(out)
}

pub fn apply_action_in_place(f: &mut BinaryFunction, plan: &InsertionPlan, a: &Action) -> Result<(), PerturbError> {
    check_safety(&a.instruction).map_err(|reason| PerturbError::UnsafeInstruction {
        instruction: a.instruction.to_string(),
        reason,
    })?;
    plan.anchor(a.position)?;
    let i = materialize(f, plan, a.position)?;
    f.blocks[i].instructions.push(a.instruction.clone());
    Ok(())
}

pub fn apply_actions<'a>(
    f: &BinaryFunction,
    plan: &InsertionPlan,
    actions: impl IntoIterator<Item = &'a Action>,
) -> Result<BinaryFunction, PerturbError> {
    let mut out = f.clone();
    for a in actions {
        apply_action_in_place(&mut out, plan, a)?;
    }
    Ok(out)
}

/// Number of instructions in dead blocks.
pub fn inserted_count(f: &BinaryFunction) -> usize {
    f.dead_blocks().map(|b| b.instructions.len()).sum()
}

fn is_never_taken_guard(guard: &[Instruction], slot: usize) -> bool {
    let [cmp, jump] = guard else { return false };
    let same_register = match cmp.operands() {
        [Operand::Reg(a), Operand::Reg(b)] => a == b && a.is_gp(),
        _ => false,
    };
    cmp.mnemonic().name() == "cmp"
        && same_register
        && jump.mnemonic().name() == "jne"
        && jump.operands() == [Operand::Label(dead_label(slot))]
}

/// Checks that `f_adv` is `f` plus guarded dead blocks holding only
/// filter-approved instructions.
pub fn verify_semantics_preserved(f: &BinaryFunction, f_adv: &BinaryFunction) -> bool {
    if f_adv.validate().is_err() || f.entry != f_adv.entry {
        return false;
    }
    let live: Vec<&BasicBlock> = f_adv.live_blocks().collect();
    if live.len() != f.blocks.len() || live.iter().zip(&f.blocks).any(|(a, b)| *a != b) {
        return false;
    }
    let is_dead = |id: BlockId| f_adv.block(id).is_some_and(BasicBlock::is_dead_branch);
    let live_edges: Vec<&Edge> = f_adv.edges.iter().filter(|e| !is_dead(e.src) && !is_dead(e.dst)).collect();
    if live_edges.len() != f.edges.len() || live_edges.iter().zip(&f.edges).any(|(a, b)| *a != b) {
        return false;
    }
    let mut slots = std::collections::HashSet::new();
    for d in f_adv.dead_blocks() {
        let info = d.dead.as_ref().expect("dead block");
        if !slots.insert(info.slot) || !is_never_taken_guard(&info.guard, info.slot) {
            return false;
        }
        let incoming: Vec<&Edge> = f_adv.edges.iter().filter(|e| e.dst == d.id).collect();
        let outgoing: Vec<&Edge> = f_adv.edges.iter().filter(|e| e.src == d.id).collect();
        let guarded = matches!(incoming[..], [e] if e.src == info.anchor && e.kind == EdgeKind::Taken);
        let rejoins = matches!(outgoing[..], [e] if !is_dead(e.dst) && e.kind == EdgeKind::Fallthrough);
        if !guarded || !rejoins || !d.instructions.iter().all(is_safe) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::synth::{generate, SynthConfig};
    use crate::function::tests::chain;
    use proptest::prelude::*;

    fn ten_blocks() -> BinaryFunction {
        let blocks: Vec<Vec<&str>> = (0..10).map(|_| vec!["add rax, 1", "xor rcx, rcx"]).collect();
        let refs: Vec<&[&str]> = blocks.iter().map(|v| v.as_slice()).collect();
        chain("ten", &refs)
    }

    fn act(position: usize, s: &str) -> Action {
        Action { position, instruction: parse_instruction(s).unwrap() }
    }

    #[test]
    fn positions_are_distinct_when_possible() {
        let f = ten_blocks();
        let plan = get_positions(&f, 5, 7);
        assert_eq!(plan.len(), 5);
        let mut ids = plan.positions().to_vec();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        assert_eq!(plan, get_positions(&f, 5, 7));
    }

    #[test]
    fn positions_repeat_on_small_functions() {
        let f = chain("two", &[&["add rax, 1"], &["ret"]]);
        let plan = get_positions(&f, 5, 7);
        assert_eq!(plan.len(), 5);
        assert!(plan.positions().contains(&0) && plan.positions().contains(&1));
    }

    #[test]
    fn dead_branch_structure() {
        let f = ten_blocks();
        let plan = get_positions(&f, 3, 1);
        let (guard, block, edges) = make_dead_branch(&f, &plan, 0).unwrap();
        assert_eq!(guard.iter().map(|i| i.to_string()).collect::<Vec<_>>(), ["cmp rax, rax", "jne .Ldead0"]);
        assert!(block.is_dead_branch() && block.instructions.is_empty());
        assert_eq!(edges.len(), 2);

        let g = apply_action(&f, &plan, &act(0, "add rax, 1")).unwrap();
        assert_eq!(g.blocks.len(), f.blocks.len() + 1);
        assert_eq!(g.edges.len(), f.edges.len() + 2);
        assert_eq!(inserted_count(&g), 1);
        let h = apply_action(&g, &plan, &act(0, "imul rcx, rdx")).unwrap();
        assert_eq!(h.blocks.len(), g.blocks.len());
        assert_eq!(h.edges.len(), g.edges.len());
        assert_eq!(inserted_count(&h), 2);
        h.validate().unwrap();
    }

    #[test]
    fn unsafe_and_out_of_range_actions_are_rejected() {
        let f = ten_blocks();
        let plan = get_positions(&f, 3, 1);
        assert!(matches!(
            apply_action(&f, &plan, &act(0, "ret")),
            Err(PerturbError::UnsafeInstruction { reason: UnsafeReason::Forbidden, .. })
        ));
        assert_eq!(
            apply_action(&f, &plan, &act(3, "nop")),
            Err(PerturbError::InvalidSlot { slot: 3, len: 3 })
        );
    }

    #[test]
    fn verify_detects_tampering() {
        let f = ten_blocks();
        assert!(verify_semantics_preserved(&f, &f));
        let plan = get_positions(&f, 3, 2);
        let g = apply_actions(&f, &plan, &[act(0, "add rax, 1"), act(2, "mov rbx, 5")]).unwrap();
        assert!(verify_semantics_preserved(&f, &g));

        let mut live_edit = g.clone();
        live_edit.blocks[0].instructions.push(parse_instruction("nop").unwrap());
        assert!(!verify_semantics_preserved(&f, &live_edit));

        let mut bad_guard = g.clone();
        let d = bad_guard.blocks.iter_mut().find(|b| b.is_dead_branch()).unwrap();
        d.dead.as_mut().unwrap().guard[0] = parse_instruction("cmp rax, rbx").unwrap();
        assert!(!verify_semantics_preserved(&f, &bad_guard));

        let mut bad_body = g.clone();
        let d = bad_body.blocks.iter_mut().find(|b| b.is_dead_branch()).unwrap();
        d.instructions.push(parse_instruction("ret").unwrap());
        assert!(!verify_semantics_preserved(&f, &bad_body));
    }

    fn safe_lines() -> Vec<&'static str> {
        vec!["add rax, 1", "mov rbx, [rbp-8]", "nop", "call helper", "jmp .Lself", "pxor xmm1, xmm2", "inc rcx"]
    }

    proptest! {
        #[test]
        fn random_action_sequences_preserve_live_code(
            seed in 0u64..500,
            b in 1usize..8,
            picks in proptest::collection::vec((0usize..8, 0usize..7), 0..25),
        ) {
            let corpus = generate(&SynthConfig { families: 2, variants: 1, seed, ..Default::default() });
            let f = &corpus[0];
            let plan = get_positions(f, b, seed);
            let lines = safe_lines();
            let actions: Vec<Action> = picks.iter().map(|(p, l)| act(p % b, lines[*l])).collect();
            let g = apply_actions(f, &plan, &actions).unwrap();
            prop_assert!(verify_semantics_preserved(f, &g));
            prop_assert_eq!(inserted_count(&g), actions.len());
            let live: Vec<&Instruction> = g.live_blocks().flat_map(|b| &b.instructions).collect();
            let orig: Vec<&Instruction> = f.blocks.iter().flat_map(|b| &b.instructions).collect();
            prop_assert_eq!(live, orig);
        }
    }
}
