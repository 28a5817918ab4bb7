use super::{AsmError, Instruction, Mnemonic, Operand, Register};

/// Parses one Intel-syntax line such as `mov rax, [rbp-8]`.
///
/// Trailing `;` comments and `byte/word/dword/qword/xmmword ptr` size
/// prefixes are accepted and dropped. Immediates may be decimal or `0x` hex.
pub fn parse_instruction(text: &str) -> Result<Instruction, AsmError> {
    let line = text.split(';').next().unwrap_or("").trim();
    let (head, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], line[i..].trim()),
        None => (line, ""),
    };
    let name = head.to_ascii_lowercase();
    let mnemonic = Mnemonic::lookup(&name).ok_or_else(|| AsmError::UnknownMnemonic(head.to_string()))?;
    let operands = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(parse_operand).collect::<Result<Vec<_>, _>>()?
    };
    Instruction::new(mnemonic, operands)
}

fn parse_operand(token: &str) -> Result<Operand, AsmError> {
    let malformed = || AsmError::MalformedOperand(token.trim().to_string());
    let mut t = token.trim();
    let lower = t.to_ascii_lowercase();
    for prefix in ["byte", "word", "dword", "qword", "xmmword"] {
        if let Some(after) = lower.strip_prefix(prefix) {
            if let Some(after) = after.trim_start().strip_prefix("ptr") {
                t = &t[t.len() - after.len()..];
                t = t.trim();
                break;
            }
        }
    }
    if t.is_empty() {
        return Err(malformed());
    }
    if let Some(inner) = t.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(malformed)?;
        return parse_memory(inner).ok_or_else(malformed);
    }
    if let Some(v) = parse_int(t) {
        return Ok(Operand::Imm(v));
    }
    if let Some(r) = Register::lookup(t) {
        return Ok(Operand::Reg(r));
    }
    if is_label(t) {
        return Ok(Operand::Label(t.to_string()));
    }
    Err(malformed())
}

fn parse_memory(inner: &str) -> Option<Operand> {
    let s: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    if let Some(disp) = parse_int(&s) {
        return Some(Operand::Mem { base: None, disp });
    }
    let split = s.find(['+', '-']);
    let (reg, disp) = match split {
        Some(i) => {
            let magnitude = parse_int(&s[i + 1..])?;
            if s[i + 1..].starts_with(['+', '-']) {
                return None;
            }
            let disp = if &s[i..=i] == "-" { magnitude.checked_neg()? } else { magnitude };
            (&s[..i], disp)
        }
        None => (s.as_str(), 0),
    };
    let base = Register::lookup(reg)?;
    if !(base.class() == super::RegClass::Gp64 || base.class() == super::RegClass::Rip) {
        return None;
    }
    Some(Operand::Mem { base: Some(base), disp })
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    let magnitude = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        if hex.is_empty() || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        u64::from_str_radix(hex, 16).ok()? as i64
    } else {
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        digits.parse::<u64>().ok()? as i64
    };
    Some(if neg { magnitude.wrapping_neg() } else { magnitude })
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    let first_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || matches!(c, '_' | '.' | '$' | '@'));
    first_ok && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '@'))
}
