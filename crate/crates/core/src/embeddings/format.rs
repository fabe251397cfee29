//! JSON Lines and binary embedding files.
//!
//! Binary layout: `"TDTIEMB1"`, `u32` width, then records of `u16` id byte
//! length, UTF-8 id, `width` little-endian `f32` values. All little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, Modality};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"TDTIEMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Jsonl,
    Binary,
}

impl EmbeddingFormat {
    /// `.bin` / `.emb` select binary, anything else JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "emb") => Self::Binary,
            _ => Self::Jsonl,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    #[serde(borrow)]
    id: std::borrow::Cow<'a, str>,
    kind: Modality,
    vec: std::borrow::Cow<'a, [f64]>,
}

pub fn write_jsonl<W: Write>(store: &EmbeddingStore, mut w: W) -> Result<()> {
    for (id, v) in store.iter() {
        let line = Line {
            id: id.into(),
            kind: store.modality(),
            vec: v.into(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Records whose `kind` differs from `modality` are a format error.
pub fn read_jsonl<R: BufRead>(r: R, modality: Modality) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(modality);
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        if rec.kind != modality {
            return Err(Error::Format(format!(
                "'{}': kind {} in a {modality} file",
                rec.id, rec.kind
            )));
        }
        store.insert(rec.id.into_owned(), rec.vec.into_owned())?;
    }
    Ok(store)
}

/// Values are narrowed to `f32`; stores built from `f32` data round-trip
/// bit-exactly.
pub fn write_binary<W: Write>(store: &EmbeddingStore, mut w: W) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(store.width() as u32).to_le_bytes())?;
    let mut lossy = 0usize;
    for (id, v) in store.iter() {
        let len = u16::try_from(id.len()).map_err(|_| {
            Error::Format(format!(
                "id longer than 65535 bytes: '{}...'",
                id.chars().take(32).collect::<String>()
            ))
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for &x in v {
            let f = x as f32;
            if f as f64 != x {
                lossy += 1;
            }
            w.write_all(&f.to_le_bytes())?;
        }
    }
    if lossy > 0 {
        log::warn!("{lossy} values narrowed to f32 when writing binary embeddings");
    }
    w.flush()?;
    Ok(())
}

/// Streams `(id, vector)` records from a binary embedding file.
pub struct BinaryReader<R> {
    inner: R,
    width: usize,
    record: u64,
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; 12];
        inner
            .read_exact(&mut head)
            .map_err(|_| Error::Format("truncated embedding header".into()))?;
        if &head[..8] != BINARY_MAGIC {
            return Err(Error::Format("bad embedding magic".into()));
        }
        let width = u32::from_le_bytes(head[8..].try_into().expect("4 bytes")) as usize;
        Ok(Self {
            inner,
            width,
            record: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn next_record(&mut self) -> Result<Option<(String, Vec<f32>)>> {
        let mut len = [0u8; 2];
        // clean EOF only at a record boundary
        match self.inner.read(&mut len[..1])? {
            0 => return Ok(None),
            _ => self.fill(&mut len[1..])?,
        }
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        self.fill(&mut id)?;
        let id =
            String::from_utf8(id).map_err(|_| Error::Format(format!("record {}: id is not UTF-8", self.record)))?;
        let mut buf = vec![0u8; self.width * 4];
        self.fill(&mut buf)?;
        let v = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        self.record += 1;
        Ok(Some((id, v)))
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Format(format!("record {}: truncated", self.record)))
    }
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = Result<(String, Vec<f32>)>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

pub fn read_binary<R: Read>(r: R, modality: Modality) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(modality);
    for rec in BinaryReader::new(r)? {
        let (id, v) = rec?;
        store.insert(id, v.into_iter().map(f64::from).collect())?;
    }
    Ok(store)
}

/// Detects the format from the leading bytes.
pub fn load_embeddings(path: &Path, modality: Modality) -> Result<EmbeddingStore> {
    let mut r = BufReader::new(File::open(path)?);
    let binary = r.fill_buf()?.starts_with(BINARY_MAGIC);
    let store = if binary {
        read_binary(r, modality)?
    } else {
        read_jsonl(r, modality)?
    };
    if store.is_empty() {
        return Err(Error::Empty(format!("no {modality} embeddings in {}", path.display())));
    }
    Ok(store)
}

pub fn save_embeddings(store: &EmbeddingStore, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        EmbeddingFormat::Jsonl => write_jsonl(store, w),
        EmbeddingFormat::Binary => write_binary(store, w),
    }
}
