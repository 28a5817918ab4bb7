//! JSON-lines corpus files, one function per line.
//!
//! ```text
//! {"name": "f", "entry": 0, "blocks": [{"id": 0, "insns": ["mov rax, 1", ...]}], "edges": [[0, 1, "taken"]]}
//! ```
//!
//! Blocks created by dead-branch insertion additionally carry
//! `"dead": {"slot": 0, "anchor": 3, "guard": ["cmp rax, rax", "jne .Ldead0"]}`
//! so adversarial samples can be written out and read back.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BasicBlock, BinaryFunction, BlockId, DeadBranch, Edge, EdgeKind, GraphError};
use crate::asm::{parse_instruction, AsmError, Instruction};

/// Functions shorter than this are dropped when loading.
pub const MIN_INSTRUCTIONS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: AsmError },
    #[error("line {line}: {source}")]
    Graph { line: usize, source: GraphError },
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Io(_) => None,
            Self::Schema { line, .. } | Self::Parse { line, .. } | Self::Graph { line, .. } => Some(*line),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeadRecord {
    slot: usize,
    anchor: BlockId,
    guard: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRecord {
    id: BlockId,
    insns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dead: Option<DeadRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionRecord {
    name: String,
    entry: BlockId,
    blocks: Vec<BlockRecord>,
    edges: Vec<(BlockId, BlockId, EdgeKind)>,
}

fn parse_all(insns: &[String], line: usize) -> Result<Vec<Instruction>, CorpusError> {
    insns
        .iter()
        .map(|s| parse_instruction(s).map_err(|source| CorpusError::Parse { line, source }))
        .collect()
}

fn from_record(rec: FunctionRecord, line: usize) -> Result<BinaryFunction, CorpusError> {
    let blocks = rec
        .blocks
        .into_iter()
        .map(|b| {
            let dead = match b.dead {
                Some(d) => Some(DeadBranch { slot: d.slot, anchor: d.anchor, guard: parse_all(&d.guard, line)? }),
                None => None,
            };
            Ok(BasicBlock { id: b.id, instructions: parse_all(&b.insns, line)?, dead })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let edges = rec.edges.into_iter().map(|(src, dst, kind)| Edge { src, dst, kind }).collect();
    let f = BinaryFunction { name: rec.name, entry: rec.entry, blocks, edges };
    f.validate().map_err(|source| CorpusError::Graph { line, source })?;
    Ok(f)
}

fn to_record(f: &BinaryFunction) -> FunctionRecord {
    let render = |v: &[Instruction]| v.iter().map(|i| i.to_string()).collect();
    FunctionRecord {
        name: f.name.clone(),
        entry: f.entry,
        blocks: f
            .blocks
            .iter()
            .map(|b| BlockRecord {
                id: b.id,
                insns: render(&b.instructions),
                dead: b.dead.as_ref().map(|d| DeadRecord { slot: d.slot, anchor: d.anchor, guard: render(&d.guard) }),
            })
            .collect(),
        edges: f.edges.iter().map(|e| (e.src, e.dst, e.kind)).collect(),
    }
}

/// Reads every record, in file order, dropping functions with fewer than
/// [`MIN_INSTRUCTIONS`] instructions. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn read_corpus(reader: impl Read) -> Result<Vec<BinaryFunction>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FunctionRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Schema { line: line_no, message: e.to_string() })?;
        let f = from_record(rec, line_no)?;
        if f.instruction_count() >= MIN_INSTRUCTIONS {
            out.push(f);
        }
    }
    Ok(out)
}

pub fn parse_corpus(text: &str) -> Result<Vec<BinaryFunction>, CorpusError> {
    read_corpus(text.as_bytes())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<BinaryFunction>, CorpusError> {
    read_corpus(File::open(path)?)
}

pub fn write_corpus<'a>(
    mut writer: impl Write,
    functions: impl IntoIterator<Item = &'a BinaryFunction>,
) -> std::io::Result<()> {
    for f in functions {
        serde_json::to_writer(&mut writer, &to_record(f))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(name: &str, n: usize) -> String {
        let insns: Vec<String> = (0..n).map(|i| format!("\"add rax, {i}\"")).collect();
        format!(
            r#"{{"name": "{name}", "entry": 0, "blocks": [{{"id": 0, "insns": [{}]}}, {{"id": 1, "insns": ["ret"]}}], "edges": [[0, 1, "fallthrough"]]}}"#,
            insns.join(", ")
        )
    }

    #[test]
    fn keeps_functions_with_six_or_more_instructions() {
        assert_eq!(parse_corpus(&record("ten", 9)).unwrap().len(), 1);
        assert!(parse_corpus(&record("five", 4)).unwrap().is_empty());
        assert_eq!(parse_corpus(&record("six", 5)).unwrap().len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{}\n\n{{not json\n", record("a", 9));
        let err = parse_corpus(&text).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 3, .. }), "{err}");

        let bad = record("b", 9).replace("add rax, 3", "frob rax");
        let err = parse_corpus(&format!("{}\n{bad}", record("a", 9))).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, source: AsmError::UnknownMnemonic(_) }), "{err}");

        let dangling = record("c", 9).replace("[0, 1,", "[0, 5,");
        assert!(matches!(parse_corpus(&dangling).unwrap_err(), CorpusError::Graph { line: 1, .. }));
    }

    #[test]
    fn write_then_read_is_identity_and_ordered() {
        let text = [record("a", 9), record("b", 12), record("c", 7)].join("\n");
        let first = parse_corpus(&text).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &first).unwrap();
        let second = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(first, second);
        let names: Vec<&str> = second.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }
}
