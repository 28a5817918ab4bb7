//! Candidate instructions: the pool attacks draw from, the fixed gray-box
//! sets, and the Spatial Greedy refresh.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use super::AttackError;
use crate::asm::{
    categorize, denormalize, normalize_for_sequence, parse_instruction, BaseCategory, GeminiCategory, Instruction,
    Mnemonic, NormalizedToken, Operand, OperandForm, Register, GMN_CLASSES, SELF_LABEL,
};
use crate::embedding::{EmbeddingTable, Vocabulary, OOV_TOKEN};
use crate::features::ModelFamily;
use crate::function::BinaryFunction;
use crate::perturbation::is_safe;

/// The instructions an attack may insert, one per normalized token: tokens
/// that denormalize to a filter-approved instruction normalizing back to the
/// same token. Sorted by token.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    tokens: Vec<NormalizedToken>,
    instructions: Vec<Instruction>,
    index: HashMap<NormalizedToken, usize>,
}

impl Universe {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a NormalizedToken>) -> Self {
        let mut toks: Vec<&NormalizedToken> = tokens.into_iter().filter(|t| t.as_str() != OOV_TOKEN).collect();
        toks.sort();
        toks.dedup();
        let mut u = Self { tokens: Vec::new(), instructions: Vec::new(), index: HashMap::new() };
        for t in toks {
            let Some(insn) = denormalize(t) else { continue };
            if is_safe(&insn) && normalize_for_sequence(&insn) == *t {
                u.index.insert(t.clone(), u.tokens.len());
                u.tokens.push(t.clone());
                u.instructions.push(insn);
            }
        }
        u
    }

    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        Self::from_tokens(vocab.tokens())
    }

    /// Tokens of every instruction in `functions`.
    pub fn from_functions(functions: &[BinaryFunction]) -> Self {
        let toks: Vec<NormalizedToken> = functions
            .iter()
            .flat_map(|f| f.blocks.iter().flat_map(|b| b.instructions.iter().map(normalize_for_sequence)))
            .collect();
        Self::from_tokens(&toks)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &NormalizedToken {
        &self.tokens[i]
    }

    pub fn instruction(&self, i: usize) -> &Instruction {
        &self.instructions[i]
    }

    pub fn position(&self, token: &NormalizedToken) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// `n` distinct members drawn uniformly (all of them when `n ≥ len`),
    /// in draw order.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        sample(rng, self.len(), n.min(self.len())).into_vec()
    }
}

/// The instructions tried at every iteration of a greedy attack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub instructions: Vec<Instruction>,
}

impl CandidateSet {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Self { instructions }
    }

    /// `n` random members of `universe`.
    pub fn random(universe: &Universe, n: usize, rng: &mut impl Rng) -> Self {
        Self::new(universe.sample(n, rng).into_iter().map(|i| universe.instruction(i).clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

/// Operand choices tried for one operand form, most readable first.
fn operand_choices(form: OperandForm, first: bool, label: &str) -> Vec<Operand> {
    let mut out = Vec::new();
    let reg = if first { "rbx" } else { "rcx" };
    if form.contains(OperandForm::GP) {
        out.push(Operand::Reg(Register::named(reg)));
    }
    if form.contains(OperandForm::GP8) {
        out.push(Operand::Reg(Register::named(if first { "bl" } else { "cl" })));
    }
    if form.contains(OperandForm::XMM) {
        out.push(Operand::Reg(Register::named(if first { "xmm1" } else { "xmm2" })));
    }
    if form.contains(OperandForm::IMM) {
        out.push(Operand::Imm(1));
    }
    if form.contains(OperandForm::MEM) {
        out.push(Operand::Mem { base: Some(Register::named("rbp")), disp: -8 });
    }
    if form.contains(OperandForm::LABEL) {
        out.push(Operand::Label(label.to_string()));
    }
    out
}

/// A filter-approved instance of `m`, searching operand choices in order.
pub fn instantiate(m: Mnemonic) -> Option<Instruction> {
    let info = m.info();
    let label = if info.base == BaseCategory::Call { "callee" } else { SELF_LABEL };
    let choices: Vec<Vec<Operand>> =
        info.operands.iter().enumerate().map(|(i, f)| operand_choices(*f, i == 0, label)).collect();
    let mut idx = vec![0usize; choices.len()];
    loop {
        let ops = idx.iter().zip(&choices).map(|(i, c)| c[*i].clone()).collect();
        if let Ok(insn) = Instruction::new(m, ops) {
            if is_safe(&insn) {
                return Some(insn);
            }
        }
        let mut k = choices.len();
        loop {
            if k == 0 {
                return None;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// The restricted gray-box sets: one instruction per ACFG category, or one
/// per mnemonic class.
pub fn gray_box_candidates(family: ModelFamily) -> Result<CandidateSet, AttackError> {
    match family {
        ModelFamily::AcfgGnn => Ok(CandidateSet::new(acfg_representatives().to_vec())),
        ModelFamily::GraphMatcher => Ok(CandidateSet::new(class_representatives())),
        ModelFamily::SeqEmbed => Err(AttackError::UnsupportedFamily(family)),
    }
}

/// One instruction per [`GeminiCategory::ALL`] entry, in that order.
pub fn acfg_representatives() -> [Instruction; 5] {
    let p = |s: &str| parse_instruction(s).expect("representative parses");
    let reps = [p("mov rbx, 1"), p(&format!("jmp {SELF_LABEL}")), p("call callee"), p("add rbx, rcx"), p("mov rbx, rcx")];
    debug_assert!(reps.iter().zip(GeminiCategory::ALL).all(|(i, c)| categorize(i).gemini == c && is_safe(i)));
    reps
}

/// One filter-approved instruction per mnemonic class, indexed by class.
pub fn class_representatives() -> Vec<Instruction> {
    let mut reps: Vec<Option<Instruction>> = vec![None; GMN_CLASSES];
    for m in Mnemonic::all() {
        let c = m.info().gmn_class as usize;
        if reps[c].is_none() {
            reps[c] = instantiate(m);
        }
    }
    reps.into_iter()
        .enumerate()
        .map(|(c, r)| r.unwrap_or_else(|| panic!("class {c} has no safe instance")))
        .collect()
}

/// Candidate pool of a Spatial Greedy run: universe members that have an
/// embedding row.
#[derive(Debug, Clone)]
pub struct SpatialPool<'a> {
    pub universe: &'a Universe,
    pub table: &'a EmbeddingTable,
    ids: Vec<u32>,
    member: Vec<Option<usize>>,
}

impl<'a> SpatialPool<'a> {
    pub fn new(universe: &'a Universe, table: &'a EmbeddingTable) -> Self {
        let mut member = vec![None; table.len()];
        let ids = (0..universe.len())
            .map(|i| {
                let id = table.vocab().lookup(universe.token(i)).expect("universe built from the table vocabulary");
                member[id as usize] = Some(i);
                id
            })
            .collect();
        Self { universe, table, ids, member }
    }

    /// Universe index of vocabulary id `id`.
    pub fn member_of(&self, id: u32) -> Option<usize> {
        self.member.get(id as usize).copied().flatten()
    }

    pub fn vocab_id(&self, u: usize) -> u32 {
        self.ids[u]
    }

    /// The `m` universe members closest to member `u` in embedding space,
    /// excluding `u`.
    pub fn neighbors(&self, u: usize, m: usize) -> Vec<usize> {
        let id = self.ids[u];
        self.table
            .rank(self.table.row(id), m, |other| other != id && self.member[other as usize].is_some())
            .into_iter()
            .map(|(other, _)| self.member[other as usize].expect("kept members"))
            .collect()
    }

    /// Next candidate list of capacity `n`: `⌊c/k⌋` neighbours of every top
    /// member, then `⌊r·n⌋` fresh random members, then the best previous
    /// candidates (by `scores`, aligned with `prev`) until `n` are chosen.
    pub fn update(&self, prev: &[usize], scores: &[f64], top: &[usize], r: f64, c: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!top.is_empty(), "top-k is empty");
        let n = n.min(self.universe.len());
        let mut taken = vec![false; self.universe.len()];
        let mut out = Vec::with_capacity(n);
        let push = |u: usize, taken: &mut [bool], out: &mut Vec<usize>| {
            if !taken[u] && out.len() < n {
                taken[u] = true;
                out.push(u);
            }
        };
        let per = c / top.len();
        for &t in top {
            for u in self.neighbors(t, per) {
                push(u, &mut taken, &mut out);
            }
        }
        let fresh = ((r * n as f64).floor() as usize).min(n - out.len());
        let free: Vec<usize> = (0..self.universe.len()).filter(|u| !taken[*u]).collect();
        for i in sample(rng, free.len(), fresh.min(free.len())) {
            push(free[i], &mut taken, &mut out);
        }
        let mut order: Vec<usize> = (0..prev.len()).collect();
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
        for i in order {
            push(prev[i], &mut taken, &mut out);
        }
        for u in 0..self.universe.len() {
            push(u, &mut taken, &mut out);
        }
        out
    }
}
