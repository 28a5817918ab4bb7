//! x86-64 instructions for a documented Intel-syntax subset.
//!
//! Instructions are parsed against the table in [`table`], rendered back to
//! a canonical text form, abstracted into sequence tokens and categorized for
//! the graph feature extractors.

mod normalize;
mod parse;
pub mod table;

use std::fmt;

pub use normalize::{denormalize, normalize_for_sequence, NormalizedToken, IMM_CUTOFF};
pub use parse::parse_instruction;
pub use table::{BaseCategory, Mnemonic, OperandForm, CATCH_ALL_CLASS, GMN_CLASSES};

/// Label that names the enclosing dead block. Jumps to it never leave the block.
pub const SELF_LABEL: &str = ".Lself";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("malformed operand `{0}`")]
    MalformedOperand(String),
    #[error("`{mnemonic}` takes {expected} operand(s), found {found}")]
    ArityMismatch { mnemonic: String, expected: usize, found: usize },
    #[error("operand `{operand}` not accepted at position {position} of `{mnemonic}`")]
    OperandMismatch { mnemonic: String, position: usize, operand: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegClass {
    Gp64,
    Gp32,
    Gp16,
    Gp8,
    Xmm,
    Rip,
}

const REGISTERS: &[(&str, RegClass)] = &[
    ("rax", RegClass::Gp64), ("rbx", RegClass::Gp64), ("rcx", RegClass::Gp64), ("rdx", RegClass::Gp64),
    ("rsi", RegClass::Gp64), ("rdi", RegClass::Gp64), ("rbp", RegClass::Gp64), ("rsp", RegClass::Gp64),
    ("r8", RegClass::Gp64), ("r9", RegClass::Gp64), ("r10", RegClass::Gp64), ("r11", RegClass::Gp64),
    ("r12", RegClass::Gp64), ("r13", RegClass::Gp64), ("r14", RegClass::Gp64), ("r15", RegClass::Gp64),
    ("eax", RegClass::Gp32), ("ebx", RegClass::Gp32), ("ecx", RegClass::Gp32), ("edx", RegClass::Gp32),
    ("esi", RegClass::Gp32), ("edi", RegClass::Gp32), ("ebp", RegClass::Gp32), ("esp", RegClass::Gp32),
    ("r8d", RegClass::Gp32), ("r9d", RegClass::Gp32), ("r10d", RegClass::Gp32), ("r11d", RegClass::Gp32),
    ("r12d", RegClass::Gp32), ("r13d", RegClass::Gp32), ("r14d", RegClass::Gp32), ("r15d", RegClass::Gp32),
    ("ax", RegClass::Gp16), ("bx", RegClass::Gp16), ("cx", RegClass::Gp16), ("dx", RegClass::Gp16),
    ("si", RegClass::Gp16), ("di", RegClass::Gp16), ("bp", RegClass::Gp16), ("sp", RegClass::Gp16),
    ("r8w", RegClass::Gp16), ("r9w", RegClass::Gp16), ("r10w", RegClass::Gp16), ("r11w", RegClass::Gp16),
    ("r12w", RegClass::Gp16), ("r13w", RegClass::Gp16), ("r14w", RegClass::Gp16), ("r15w", RegClass::Gp16),
    ("al", RegClass::Gp8), ("bl", RegClass::Gp8), ("cl", RegClass::Gp8), ("dl", RegClass::Gp8),
    ("sil", RegClass::Gp8), ("dil", RegClass::Gp8), ("bpl", RegClass::Gp8), ("spl", RegClass::Gp8),
    ("r8b", RegClass::Gp8), ("r9b", RegClass::Gp8), ("r10b", RegClass::Gp8), ("r11b", RegClass::Gp8),
    ("r12b", RegClass::Gp8), ("r13b", RegClass::Gp8), ("r14b", RegClass::Gp8), ("r15b", RegClass::Gp8),
    ("ah", RegClass::Gp8), ("bh", RegClass::Gp8), ("ch", RegClass::Gp8), ("dh", RegClass::Gp8),
    ("xmm0", RegClass::Xmm), ("xmm1", RegClass::Xmm), ("xmm2", RegClass::Xmm), ("xmm3", RegClass::Xmm),
    ("xmm4", RegClass::Xmm), ("xmm5", RegClass::Xmm), ("xmm6", RegClass::Xmm), ("xmm7", RegClass::Xmm),
    ("xmm8", RegClass::Xmm), ("xmm9", RegClass::Xmm), ("xmm10", RegClass::Xmm), ("xmm11", RegClass::Xmm),
    ("xmm12", RegClass::Xmm), ("xmm13", RegClass::Xmm), ("xmm14", RegClass::Xmm), ("xmm15", RegClass::Xmm),
    ("rip", RegClass::Rip),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Register(u8);

impl Register {
    pub fn lookup(name: &str) -> Option<Self> {
        REGISTERS
            .iter()
            .position(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|i| Register(i as u8))
    }

    /// Panics on names outside the register file; meant for literals.
    pub fn named(name: &str) -> Self {
        Self::lookup(name).unwrap_or_else(|| panic!("unknown register {name}"))
    }

    pub fn name(self) -> &'static str {
        REGISTERS[self.0 as usize].0
    }

    pub fn class(self) -> RegClass {
        REGISTERS[self.0 as usize].1
    }

    pub fn is_gp(self) -> bool {
        matches!(self.class(), RegClass::Gp64 | RegClass::Gp32 | RegClass::Gp16 | RegClass::Gp8)
    }

    /// Any alias of the stack pointer.
    pub fn is_stack_pointer(self) -> bool {
        matches!(self.name(), "rsp" | "esp" | "sp" | "spl")
    }

    pub fn all() -> impl Iterator<Item = Register> {
        (0..REGISTERS.len()).map(|i| Register(i as u8))
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Register),
    Imm(i64),
    /// `[base+disp]`; an absent base is an absolute address.
    Mem { base: Option<Register>, disp: i64 },
    /// Symbolic branch or call target.
    Label(String),
}

impl Operand {
    fn form(&self) -> OperandForm {
        match self {
            Operand::Reg(r) => match r.class() {
                RegClass::Xmm => OperandForm::XMM,
                RegClass::Gp8 => OperandForm::GP8,
                _ => OperandForm::GP,
            },
            Operand::Imm(_) => OperandForm::IMM,
            Operand::Mem { .. } => OperandForm::MEM,
            Operand::Label(_) => OperandForm::LABEL,
        }
    }

    /// Whether a table form admits this operand. 8-bit registers satisfy `g`.
    fn fits(&self, allowed: OperandForm) -> bool {
        if let Operand::Reg(r) = self {
            if r.class() == RegClass::Rip {
                return false;
            }
        }
        let form = self.form();
        allowed.contains(form) || (form == OperandForm::GP8 && allowed.contains(OperandForm::GP))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
            Operand::Mem { base: Some(b), disp: 0 } => write!(f, "[{b}]"),
            Operand::Mem { base: Some(b), disp } if *disp < 0 => write!(f, "[{b}-{}]", disp.unsigned_abs()),
            Operand::Mem { base: Some(b), disp } => write!(f, "[{b}+{disp}]"),
            Operand::Mem { base: None, disp } => write!(f, "[{disp}]"),
            Operand::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    mnemonic: Mnemonic,
    operands: Vec<Operand>,
}

impl Instruction {
    /// Builds an instruction, checking arity and operand forms against the table.
    pub fn new(mnemonic: Mnemonic, operands: Vec<Operand>) -> Result<Self, AsmError> {
        let info = mnemonic.info();
        if operands.len() != info.arity {
            return Err(AsmError::ArityMismatch {
                mnemonic: info.name.clone(),
                expected: info.arity,
                found: operands.len(),
            });
        }
        for (position, (op, form)) in operands.iter().zip(&info.operands).enumerate() {
            if !op.fits(*form) {
                return Err(AsmError::OperandMismatch {
                    mnemonic: info.name.clone(),
                    position,
                    operand: op.to_string(),
                });
            }
        }
        Ok(Self { mnemonic, operands })
    }

    pub fn mnemonic(&self) -> Mnemonic {
        self.mnemonic
    }

    pub fn operands(&self) -> &[Operand] {
        &self.operands
    }

    pub fn has_immediate(&self) -> bool {
        self.operands.iter().any(|o| matches!(o, Operand::Imm(_)))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic.name())?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Instruction {
    type Err = AsmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_instruction(s)
    }
}

/// The five instruction-dependent node features of an attributed CFG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeminiCategory {
    /// Carries a numeric constant and is otherwise plain.
    Constant,
    Transfer,
    Call,
    Arithmetic,
    Other,
}

impl GeminiCategory {
    pub const ALL: [GeminiCategory; 5] = [
        GeminiCategory::Constant,
        GeminiCategory::Transfer,
        GeminiCategory::Call,
        GeminiCategory::Arithmetic,
        GeminiCategory::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Transfer => "transfer",
            Self::Call => "call",
            Self::Arithmetic => "arithmetic",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InstructionCategory {
    pub gemini: GeminiCategory,
    pub gmn_class: u8,
}

/// Category of an instruction: call, transfer and arithmetic come from the
/// table; everything else is `Constant` when it carries an immediate.
pub fn categorize(insn: &Instruction) -> InstructionCategory {
    let info = insn.mnemonic.info();
    let gemini = match info.base {
        BaseCategory::Call => GeminiCategory::Call,
        BaseCategory::Transfer => GeminiCategory::Transfer,
        BaseCategory::Arithmetic => GeminiCategory::Arithmetic,
        BaseCategory::Other if insn.has_immediate() => GeminiCategory::Constant,
        BaseCategory::Other => GeminiCategory::Other,
    };
    InstructionCategory { gemini, gmn_class: info.gmn_class }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Instruction {
        parse_instruction(s).unwrap()
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(categorize(&p("jmp label")).gemini, GeminiCategory::Transfer);
        assert_eq!(categorize(&p("add rax, rbx")).gemini, GeminiCategory::Arithmetic);
        assert_eq!(categorize(&p("call foo")).gemini, GeminiCategory::Call);
        assert_eq!(categorize(&p("mov rax, 5")).gemini, GeminiCategory::Constant);
        assert_eq!(categorize(&p("mov rax, rbx")).gemini, GeminiCategory::Other);
        // arithmetic wins over the immediate
        assert_eq!(categorize(&p("add rax, 1")).gemini, GeminiCategory::Arithmetic);
        let add = Mnemonic::lookup("add").unwrap();
        assert_eq!(categorize(&p("add rax, rbx")).gmn_class, add.info().gmn_class);
    }

    #[test]
    fn operand_forms_are_checked() {
        assert!(matches!(parse_instruction("lea rax, rbx"), Err(AsmError::OperandMismatch { .. })));
        assert!(matches!(parse_instruction("addsd rax, xmm1"), Err(AsmError::OperandMismatch { .. })));
        assert!(matches!(parse_instruction("sete rax"), Err(AsmError::OperandMismatch { .. })));
        assert!(matches!(parse_instruction("mov rip, rax"), Err(AsmError::OperandMismatch { .. })));
        assert!(parse_instruction("sete al").is_ok());
        assert!(parse_instruction("mov al, 1").is_ok());
        assert!(parse_instruction("lea rax, [rip+16]").is_ok());
    }

    #[test]
    fn registers() {
        assert!(Register::named("rsp").is_stack_pointer());
        assert!(Register::named("spl").is_stack_pointer());
        assert!(!Register::named("rbp").is_stack_pointer());
        assert_eq!(Register::lookup("RAX"), Some(Register::named("rax")));
        assert_eq!(Register::named("xmm3").class(), RegClass::Xmm);
    }
}
