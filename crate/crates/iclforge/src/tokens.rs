//! Token-id streams: packed little-endian `u32` or whitespace-separated
//! decimal text.

use std::path::Path;
use std::str::FromStr;

use crate::binio::read_file;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenFormat {
    BinaryU32,
    Text,
}

impl TokenFormat {
    /// `.txt` files are text, anything else packed binary.
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt")) {
            TokenFormat::Text
        } else {
            TokenFormat::BinaryU32
        }
    }
}

impl FromStr for TokenFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bin" | "u32" | "binary" => Ok(TokenFormat::BinaryU32),
            "text" | "txt" => Ok(TokenFormat::Text),
            _ => Err(format!("unknown token format {s:?} (bin or text)")),
        }
    }
}

fn format_error(path: &Path, offset: usize, detail: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        what: "token stream",
        offset: offset as u64,
        detail,
    }
}

pub fn decode_tokens(bytes: &[u8], format: TokenFormat, path: &Path) -> Result<Vec<u32>> {
    match format {
        TokenFormat::BinaryU32 => {
            let whole = bytes.len() / 4 * 4;
            if whole != bytes.len() {
                return Err(format_error(
                    path,
                    whole,
                    format!("partial word: {} trailing bytes", bytes.len() - whole),
                ));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect())
        }
        TokenFormat::Text => {
            let mut out = Vec::new();
            let mut i = 0;
            while i < bytes.len() {
                if bytes[i].is_ascii_whitespace() {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let word = &bytes[start..i];
                let v = std::str::from_utf8(word)
                    .ok()
                    .filter(|w| w.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|w| w.parse::<u32>().ok())
                    .ok_or_else(|| {
                        format_error(
                            path,
                            start,
                            format!("{:?} is not a u32 token id", String::from_utf8_lossy(word)),
                        )
                    })?;
                out.push(v);
            }
            Ok(out)
        }
    }
}

pub fn read_tokens(path: &Path, format: TokenFormat) -> Result<Vec<u32>> {
    decode_tokens(&read_file(path)?, format, path)
}

pub fn encode_tokens(tokens: &[u32], format: TokenFormat) -> Vec<u8> {
    match format {
        TokenFormat::BinaryU32 => tokens.iter().flat_map(|t| t.to_le_bytes()).collect(),
        TokenFormat::Text => {
            let mut s = String::with_capacity(tokens.len() * 6);
            for t in tokens {
                s.push_str(&t.to_string());
                s.push('\n');
            }
            s.into_bytes()
        }
    }
}
