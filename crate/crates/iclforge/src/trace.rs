//! Attention-trace export: one headerless `T x T` CSV matrix per
//! (layer, head) named `L<l>H<h>.csv`, plus `roles.csv` mapping positions
//! to token roles.

use std::fmt::Write as _;
use std::path::Path;

use iclforge_core::model::{AttentionTrace, TokenRole};

use crate::binio::{read_file, write_file};
use crate::{Error, Result};

pub const ROLE_FILE: &str = "roles.csv";

pub fn matrix_file(layer: usize, head: usize) -> String {
    format!("L{layer}H{head}.csv")
}

pub fn export_trace(trace: &AttentionTrace, dir: &Path) -> Result<()> {
    let t = trace.tokens();
    for l in 0..trace.layers() {
        for h in 0..trace.heads() {
            let mut s = String::with_capacity(t * t * 12);
            for row in trace.matrix(l, h).chunks(t) {
                for (j, v) in row.iter().enumerate() {
                    if j > 0 {
                        s.push(',');
                    }
                    let _ = write!(s, "{v}");
                }
                s.push('\n');
            }
            write_file(&dir.join(matrix_file(l, h)), s.as_bytes())?;
        }
    }
    let mut s = String::from("position,role\n");
    for (p, r) in trace.roles().iter().enumerate() {
        let _ = writeln!(s, "{p},{}", r.as_str());
    }
    write_file(&dir.join(ROLE_FILE), s.as_bytes())
}

fn line_error(path: &Path, line: usize, detail: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        what: "trace CSV line",
        offset: line as u64,
        detail,
    }
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|e| line_error(path, 0, e.to_string()))
}

/// Reads a trace written by [`export_trace`] with the given block and head
/// counts.
pub fn import_trace(dir: &Path, layers: usize, heads: usize) -> Result<AttentionTrace> {
    let role_path = dir.join(ROLE_FILE);
    let text = read_text(&role_path)?;
    let mut roles = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (pos, role) = line
            .split_once(',')
            .ok_or_else(|| line_error(&role_path, i + 1, format!("expected position,role: {line:?}")))?;
        if pos.parse::<usize>().ok() != Some(roles.len()) {
            return Err(line_error(&role_path, i + 1, format!("position {pos:?} out of order")));
        }
        roles.push(TokenRole::parse(role).ok_or_else(|| line_error(&role_path, i + 1, format!("role {role:?}")))?);
    }
    let t = roles.len();
    let mut weights = Vec::with_capacity(layers * heads * t * t);
    for l in 0..layers {
        for h in 0..heads {
            let path = dir.join(matrix_file(l, h));
            let text = read_text(&path)?;
            let mut rows = 0;
            for (i, line) in text.lines().enumerate() {
                let before = weights.len();
                for v in line.split(',') {
                    weights.push(
                        v.trim()
                            .parse::<f32>()
                            .map_err(|_| line_error(&path, i + 1, format!("bad value {v:?}")))?,
                    );
                }
                if weights.len() - before != t {
                    return Err(line_error(&path, i + 1, format!("{} columns, expected {t}", weights.len() - before)));
                }
                rows += 1;
            }
            if rows != t {
                return Err(line_error(&path, rows, format!("{rows} rows, expected {t}")));
            }
        }
    }
    Ok(AttentionTrace::new(layers, heads, roles, weights)?)
}
