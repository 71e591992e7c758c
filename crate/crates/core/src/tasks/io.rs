//! Token stream files.
//!
//! JSONL: one stream per line, `{tokens, targets, vocab_size, meta}` with
//! unscored targets written as `-1`.
//!
//! Binary: the magic `OVQT`, a u32 version, then per stream the vocab size,
//! the JSON-encoded meta, the tokens and the targets, each array prefixed by
//! its u32 length. Unscored targets are `u32::MAX`. All little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StreamMeta, TokenStream};
use crate::error::{OvqError, Result};

pub const BINARY_MAGIC: [u8; 4] = *b"OVQT";
pub const BINARY_VERSION: u32 = 1;
const IGNORE_BIN: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamFormat {
    #[default]
    Jsonl,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<u32>,
    targets: Vec<i64>,
    vocab_size: u32,
    meta: StreamMeta,
}

impl From<&TokenStream> for Record {
    fn from(s: &TokenStream) -> Self {
        Record {
            tokens: s.tokens.clone(),
            targets: s.targets.iter().map(|t| t.map_or(-1, i64::from)).collect(),
            vocab_size: s.vocab_size,
            meta: s.meta.clone(),
        }
    }
}

impl Record {
    fn into_stream(self, line: usize) -> Result<TokenStream> {
        let targets = self
            .targets
            .into_iter()
            .map(|t| match t {
                -1 => Ok(None),
                t => u32::try_from(t)
                    .map(Some)
                    .map_err(|_| OvqError::parse(line, format!("bad target {t}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        finish(self.tokens, targets, self.vocab_size, self.meta, line)
    }
}

fn finish(
    tokens: Vec<u32>,
    targets: Vec<Option<u32>>,
    vocab_size: u32,
    meta: StreamMeta,
    line: usize,
) -> Result<TokenStream> {
    let s = TokenStream {
        tokens,
        targets,
        vocab_size,
        meta,
    };
    s.validate().map_err(|e| OvqError::parse(line, e.to_string()))?;
    Ok(s)
}

pub fn write_streams(streams: &[TokenStream], path: impl AsRef<Path>, format: StreamFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        StreamFormat::Jsonl => {
            for s in streams {
                serde_json::to_writer(&mut w, &Record::from(s)).map_err(|e| OvqError::Internal(e.to_string()))?;
                w.write_all(b"\n")?;
            }
        }
        StreamFormat::Binary => {
            w.write_all(&BINARY_MAGIC)?;
            w.write_all(&BINARY_VERSION.to_le_bytes())?;
            for s in streams {
                w.write_all(&s.vocab_size.to_le_bytes())?;
                let meta = serde_json::to_vec(&s.meta).map_err(|e| OvqError::Internal(e.to_string()))?;
                w.write_all(&(meta.len() as u32).to_le_bytes())?;
                w.write_all(&meta)?;
                write_u32s(&mut w, &s.tokens)?;
                let targets: Vec<u32> = s.targets.iter().map(|t| t.unwrap_or(IGNORE_BIN)).collect();
                write_u32s(&mut w, &targets)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every stream in a file. A file without streams is an error.
pub fn read_streams(path: impl AsRef<Path>, format: StreamFormat) -> Result<Vec<TokenStream>> {
    let file = File::open(path)?;
    let streams = match format {
        StreamFormat::Jsonl => read_jsonl(BufReader::new(file))?,
        StreamFormat::Binary => read_binary(BufReader::new(file))?,
    };
    if streams.is_empty() {
        return Err(OvqError::parse(1, "file holds no token stream"));
    }
    Ok(streams)
}

pub fn stream_to_file(stream: &TokenStream, path: impl AsRef<Path>, format: StreamFormat) -> Result<()> {
    write_streams(std::slice::from_ref(stream), path, format)
}

/// Read the first stream of a file.
pub fn stream_from_file(path: impl AsRef<Path>, format: StreamFormat) -> Result<TokenStream> {
    Ok(read_streams(path, format)?.swap_remove(0))
}

fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TokenStream>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| OvqError::parse(i + 1, e.to_string()))?;
        out.push(rec.into_stream(i + 1)?);
    }
    Ok(out)
}

/// Binary records are numbered from 1 in parse errors.
fn read_binary<R: Read>(mut r: R) -> Result<Vec<TokenStream>> {
    let mut magic = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || magic != BINARY_MAGIC {
        return Err(OvqError::parse(1, "missing OVQT header"));
    }
    let version = read_u32(&mut r).map_err(|_| OvqError::parse(1, "truncated header"))?;
    if version != BINARY_VERSION {
        return Err(OvqError::parse(1, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let rec = out.len() + 1;
        let mut first = [0u8; 4];
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r
                .read_exact(&mut first[1..])
                .map_err(|_| OvqError::parse(rec, "truncated record"))?,
        }
        let vocab_size = u32::from_le_bytes(first);
        let truncated = |_| OvqError::parse(rec, "truncated record");
        let meta_len = read_u32(&mut r).map_err(truncated)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(truncated)?;
        let meta: StreamMeta = serde_json::from_slice(&meta).map_err(|e| OvqError::parse(rec, e.to_string()))?;
        let tokens = read_u32s(&mut r).map_err(truncated)?;
        let targets = read_u32s(&mut r)
            .map_err(truncated)?
            .into_iter()
            .map(|t| (t != IGNORE_BIN).then_some(t))
            .collect();
        out.push(finish(tokens, targets, vocab_size, meta, rec)?);
    }
    Ok(out)
}

fn write_u32s<W: Write>(w: &mut W, xs: &[u32]) -> std::io::Result<()> {
    w.write_all(&(xs.len() as u32).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u32s<R: Read>(r: &mut R) -> std::io::Result<Vec<u32>> {
    let n = read_u32(r)? as usize;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
