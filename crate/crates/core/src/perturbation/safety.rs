//! Syntactic filter for instructions placed in dead blocks.
//!
//! Dead blocks never execute, but keeping their contents free of memory
//! writes, stack-pointer writes and control transfers out of the block makes
//! semantic preservation checkable from the text alone.

use crate::asm::{BaseCategory, Instruction, Operand, SELF_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnsafeReason {
    /// Returns, stack push/pop, traps, string stores and system calls.
    Forbidden,
    /// Jump to a label other than the enclosing dead block.
    LeavesBlock,
    WritesMemory,
    WritesStackPointer,
}

impl std::fmt::Display for UnsafeReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Forbidden => "forbidden in dead code",
            Self::LeavesBlock => "transfers control out of the dead block",
            Self::WritesMemory => "writes memory",
            Self::WritesStackPointer => "writes the stack pointer",
        })
    }
}

const FORBIDDEN: &[&str] = &[
    "ret", "iretq", "push", "pop", "leave", "pushfq", "popfq", "int3", "hlt", "ud2", "movsb", "movsq",
    "stosb", "stosq", "enter", "syscall", "int",
];

/// Mnemonics whose first operand is only read.
const READS_FIRST: &[&str] = &[
    "cmp", "test", "bt", "ucomiss", "ucomisd", "comiss", "comisd", "ptest", "mul", "div", "idiv",
];

/// Mnemonics that write every register operand.
const WRITES_ALL: &[&str] = &["xchg", "xadd", "cmpxchg"];

pub fn check(insn: &Instruction) -> Result<(), UnsafeReason> {
    let name = insn.mnemonic().name();
    if FORBIDDEN.contains(&name) {
        return Err(UnsafeReason::Forbidden);
    }
    let ops = insn.operands();
    if insn.mnemonic().info().base == BaseCategory::Transfer {
        return match ops {
            [Operand::Label(l)] if l == SELF_LABEL => Ok(()),
            _ => Err(UnsafeReason::LeavesBlock),
        };
    }
    let writes_first = !READS_FIRST.contains(&name);
    match ops.first() {
        Some(Operand::Mem { .. }) if writes_first => return Err(UnsafeReason::WritesMemory),
        Some(Operand::Reg(r)) if writes_first && r.is_stack_pointer() => {
            return Err(UnsafeReason::WritesStackPointer)
        }
        _ => {}
    }
    if WRITES_ALL.contains(&name) && ops.iter().any(|o| matches!(o, Operand::Reg(r) if r.is_stack_pointer())) {
        return Err(UnsafeReason::WritesStackPointer);
    }
    Ok(())
}

pub fn is_safe(insn: &Instruction) -> bool {
    check(insn).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_instruction;

    fn reason(s: &str) -> Result<(), UnsafeReason> {
        check(&parse_instruction(s).unwrap())
    }

    #[test]
    fn classifies_examples() {
        assert_eq!(reason("add rax, 1"), Ok(()));
        assert_eq!(reason("mov rax, [rbp-8]"), Ok(()));
        assert_eq!(reason("cmp [rbp-8], rax"), Ok(()));
        assert_eq!(reason("call helper"), Ok(()));
        assert_eq!(reason("jne .Lself"), Ok(()));
        assert_eq!(reason("ret"), Err(UnsafeReason::Forbidden));
        assert_eq!(reason("push rax"), Err(UnsafeReason::Forbidden));
        assert_eq!(reason("jmp .L3"), Err(UnsafeReason::LeavesBlock));
        assert_eq!(reason("mov [rbp-8], rax"), Err(UnsafeReason::WritesMemory));
        assert_eq!(reason("inc qword ptr [rax]"), Err(UnsafeReason::WritesMemory));
        assert_eq!(reason("sub rsp, 8"), Err(UnsafeReason::WritesStackPointer));
        assert_eq!(reason("mov spl, 1"), Err(UnsafeReason::WritesStackPointer));
        assert_eq!(reason("xchg rax, rsp"), Err(UnsafeReason::WritesStackPointer));
        assert_eq!(reason("cmp rsp, 8"), Ok(()));
        assert_eq!(reason("mov rax, rsp"), Ok(()));
    }
}
