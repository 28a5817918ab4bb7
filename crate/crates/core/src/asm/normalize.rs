//! Filtered instruction tokens for the sequence model and the instruction
//! embedding space.
//!
//! A token is the mnemonic followed by one `_`-separated part per operand:
//! register names stay, immediates with magnitude up to [`IMM_CUTOFF`] stay
//! literal, larger immediates become `IMM`, memory operands become `MEM` and
//! branch/call targets become `LBL`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BaseCategory, Instruction, Mnemonic, Operand, Register, SELF_LABEL};

/// Largest immediate magnitude kept literally.
pub const IMM_CUTOFF: i64 = 255;

/// Placeholders and the concrete operands [`denormalize`] maps them back to.
const IMM_TOKEN: &str = "IMM";
const MEM_TOKEN: &str = "MEM";
const LABEL_TOKEN: &str = "LBL";
const IMM_STAND_IN: i64 = 4096;
const CALL_STAND_IN: &str = "callee";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedToken(String);

impl NormalizedToken {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn normalize_for_sequence(insn: &Instruction) -> NormalizedToken {
    let mut s = String::from(insn.mnemonic().name());
    for op in insn.operands() {
        s.push('_');
        match op {
            Operand::Reg(r) => s.push_str(r.name()),
            Operand::Imm(v) if v.unsigned_abs() <= IMM_CUTOFF as u64 => s.push_str(&v.to_string()),
            Operand::Imm(_) => s.push_str(IMM_TOKEN),
            Operand::Mem { .. } => s.push_str(MEM_TOKEN),
            Operand::Label(_) => s.push_str(LABEL_TOKEN),
        }
    }
    NormalizedToken(s)
}

/// A concrete instruction whose normalized token is `token`, or `None` when
/// the token is not well formed for the table.
///
/// Placeholders map to fixed stand-ins: `IMM` to 4096, `MEM` to `[rbp-8]`,
/// `LBL` to the enclosing dead block for jumps and to `callee` for calls.
pub fn denormalize(token: &NormalizedToken) -> Option<Instruction> {
    let mut parts = token.0.split('_');
    let mnemonic = Mnemonic::lookup(parts.next()?)?;
    let operands = parts
        .map(|p| match p {
            IMM_TOKEN => Some(Operand::Imm(IMM_STAND_IN)),
            MEM_TOKEN => Some(Operand::Mem { base: Some(Register::named("rbp")), disp: -8 }),
            LABEL_TOKEN => Some(Operand::Label(match mnemonic.info().base {
                BaseCategory::Call => CALL_STAND_IN.to_string(),
                _ => SELF_LABEL.to_string(),
            })),
            _ => {
                if let Ok(v) = p.parse::<i64>() {
                    (v.unsigned_abs() <= IMM_CUTOFF as u64).then_some(Operand::Imm(v))
                } else {
                    Register::lookup(p).filter(|r| r.name() == p).map(Operand::Reg)
                }
            }
        })
        .collect::<Option<Vec<_>>>()?;
    Instruction::new(mnemonic, operands).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_instruction;
    use proptest::prelude::*;

    fn norm(s: &str) -> String {
        normalize_for_sequence(&parse_instruction(s).unwrap()).0
    }

    #[test]
    fn spec_examples() {
        assert_eq!(norm("mov rax, 4096"), "mov_rax_IMM");
        assert_eq!(norm("add rax, 1"), "add_rax_1");
        assert_eq!(norm("mov rax, [rbp-8]"), "mov_rax_MEM");
    }

    #[test]
    fn cutoff_boundary() {
        assert_eq!(norm("mov rax, 255"), "mov_rax_255");
        assert_eq!(norm("mov rax, -255"), "mov_rax_-255");
        assert_eq!(norm("mov rax, 256"), "mov_rax_IMM");
        assert_eq!(norm("jne .L7"), "jne_LBL");
        assert_eq!(norm("ret"), "ret");
    }

    #[test]
    fn denormalize_stand_ins() {
        let d = |t: &str| denormalize(&NormalizedToken::new(t)).map(|i| i.to_string());
        assert_eq!(d("mov_rax_IMM").as_deref(), Some("mov rax, 4096"));
        assert_eq!(d("mov_rax_MEM").as_deref(), Some("mov rax, [rbp-8]"));
        assert_eq!(d("jmp_LBL").as_deref(), Some("jmp .Lself"));
        assert_eq!(d("call_LBL").as_deref(), Some("call callee"));
        assert_eq!(d("mov_rax_300"), None);
        assert_eq!(d("mov_RAX_1"), None);
        assert_eq!(d("mov_rax"), None);
        assert_eq!(d("frob_rax"), None);
        assert_eq!(d("<unk>"), None);
    }

    proptest! {
        #[test]
        fn tokens_survive_denormalization(
            m in proptest::sample::select(vec!["mov", "add", "xor", "lea", "cmp"]),
            dst in proptest::sample::select(vec!["rax", "rcx", "r9", "eax"]),
            src in prop_oneof![
                any::<i64>().prop_map(|v| v.to_string()),
                Just("[rbp-16]".to_string()),
                Just("rdx".to_string()),
            ],
        ) {
            if let Ok(i) = parse_instruction(&format!("{m} {dst}, {src}")) {
                let t = normalize_for_sequence(&i);
                let back = denormalize(&t).expect("well-formed token");
                prop_assert_eq!(normalize_for_sequence(&back), t);
            }
        }
    }
}
