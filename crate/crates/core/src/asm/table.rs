//! The supported-mnemonic table.
//!
//! The table ships as `data/mnemonics.tsv` and is compiled into the binary.
//! Each row fixes a mnemonic's arity, its base instruction category, its
//! mnemonic class for bag-of-instruction features and the operand forms it
//! accepts.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

/// Raw TSV shipped with the crate.
pub const TABLE_TSV: &str = include_str!("../../data/mnemonics.tsv");

/// Number of mnemonic classes used by bag-of-instruction features.
pub const GMN_CLASSES: usize = 200;

/// Class that collects every mnemonic without a dedicated class.
pub const CATCH_ALL_CLASS: u8 = (GMN_CLASSES - 1) as u8;

/// Category recorded for a mnemonic in the table. The operand-dependent
/// "constant" category is derived later, see [`super::categorize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseCategory {
    Arithmetic,
    Transfer,
    Call,
    Other,
}

impl BaseCategory {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "arithmetic" => Self::Arithmetic,
            "transfer" => Self::Transfer,
            "call" => Self::Call,
            "other" => Self::Other,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Arithmetic => "arithmetic",
            Self::Transfer => "transfer",
            Self::Call => "call",
            Self::Other => "other",
        }
    }
}

/// Set of operand kinds accepted at one operand position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OperandForm(u8);

impl OperandForm {
    pub const GP: Self = Self(1);
    pub const GP8: Self = Self(1 << 1);
    pub const XMM: Self = Self(1 << 2);
    pub const MEM: Self = Self(1 << 3);
    pub const IMM: Self = Self(1 << 4);
    pub const LABEL: Self = Self(1 << 5);

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    fn parse(s: &str) -> Option<Self> {
        let mut bits = 0u8;
        for c in s.chars() {
            bits |= match c {
                'g' => Self::GP.0,
                'b' => Self::GP8.0,
                'x' => Self::XMM.0,
                'm' => Self::MEM.0,
                'i' => Self::IMM.0,
                'l' => Self::LABEL.0,
                _ => return None,
            };
        }
        (bits != 0).then_some(Self(bits))
    }
}

impl fmt::Display for OperandForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (flag, c) in [
            (Self::GP, 'g'),
            (Self::GP8, 'b'),
            (Self::XMM, 'x'),
            (Self::MEM, 'm'),
            (Self::IMM, 'i'),
            (Self::LABEL, 'l'),
        ] {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnemonicInfo {
    pub name: String,
    pub arity: usize,
    pub base: BaseCategory,
    pub gmn_class: u8,
    pub operands: Vec<OperandForm>,
}

/// Index of a mnemonic in the supported table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mnemonic(u16);

impl Mnemonic {
    pub fn lookup(name: &str) -> Option<Self> {
        table().by_name.get(name).copied()
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn info(self) -> &'static MnemonicInfo {
        &table().rows[self.0 as usize]
    }

    pub fn name(self) -> &'static str {
        &self.info().name
    }

    /// Every supported mnemonic in table order.
    pub fn all() -> impl Iterator<Item = Mnemonic> {
        (0..table().rows.len()).map(|i| Mnemonic(i as u16))
    }
}

impl fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub struct MnemonicTable {
    pub version: u32,
    pub rows: Vec<MnemonicInfo>,
    by_name: HashMap<String, Mnemonic>,
}

impl MnemonicTable {
    /// Parses the TSV format. Lines starting with `#` are comments; the first
    /// comment may carry `format version N`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut version = 0;
        let mut rows = Vec::new();
        let mut by_name = HashMap::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.split("format version").nth(1) {
                    version = v.trim().parse().map_err(|_| format!("line {}: bad version", lineno + 1))?;
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(format!("line {}: expected 5 columns, found {}", lineno + 1, cols.len()));
            }
            let bad = |what: &str| format!("line {}: bad {what}", lineno + 1);
            let arity: usize = cols[1].parse().map_err(|_| bad("arity"))?;
            let base = BaseCategory::parse(cols[2]).ok_or_else(|| bad("gemini_category"))?;
            let gmn_class: u8 = cols[3].parse().map_err(|_| bad("gmn_class"))?;
            if gmn_class as usize >= GMN_CLASSES {
                return Err(bad("gmn_class"));
            }
            let operands = if cols[4] == "-" {
                Vec::new()
            } else {
                cols[4]
                    .split(',')
                    .map(|s| OperandForm::parse(s).ok_or_else(|| bad("operands")))
                    .collect::<Result<Vec<_>, _>>()?
            };
            if operands.len() != arity {
                return Err(bad("arity/operands"));
            }
            let name = cols[0].to_string();
            let id = Mnemonic(rows.len() as u16);
            if by_name.insert(name.clone(), id).is_some() {
                return Err(format!("line {}: duplicate mnemonic {name}", lineno + 1));
            }
            rows.push(MnemonicInfo { name, arity, base, gmn_class, operands });
        }
        Ok(Self { version, rows, by_name })
    }

    /// First mnemonic (in table order) of every class.
    pub fn class_heads(&self) -> Vec<Option<Mnemonic>> {
        let mut heads = vec![None; GMN_CLASSES];
        for (i, row) in self.rows.iter().enumerate() {
            let slot = &mut heads[row.gmn_class as usize];
            if slot.is_none() {
                *slot = Some(Mnemonic(i as u16));
            }
        }
        heads
    }
}

/// The compiled-in table.
pub fn table() -> &'static MnemonicTable {
    static TABLE: OnceLock<MnemonicTable> = OnceLock::new();
    TABLE.get_or_init(|| MnemonicTable::parse(TABLE_TSV).expect("bundled mnemonic table is valid"))
}
