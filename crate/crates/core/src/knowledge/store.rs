//! On-disk layout: `manifest.json`, `entries.jsonl`, `vectors.bin`
//! (little-endian f32, row-major).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Index, KnowledgeEntry};
use crate::error::{Error, Result};

const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub knowledge_id: String,
    pub dim: usize,
    pub count: usize,
    pub next_seq: u64,
    #[serde(default)]
    pub fingerprint: Option<String>,
}

fn write_tmp(dir: &Path, name: &str, bytes: &[u8]) -> Result<std::path::PathBuf> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(tmp)
}

pub(crate) fn save_index(dir: &Path, knowledge_id: &str, index: &Index) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dim = index.dim.unwrap_or(0);
    let mut entries = Vec::new();
    let mut vectors = Vec::with_capacity(index.entries.len() * dim * 4);
    for e in &index.entries {
        entries.extend_from_slice(serde_json::to_string(e)?.as_bytes());
        entries.push(b'\n');
        for x in &e.embedding {
            vectors.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT,
        knowledge_id: knowledge_id.to_string(),
        dim,
        count: index.entries.len(),
        next_seq: index.next_seq,
        fingerprint: index.fingerprint.clone(),
    };
    let e_tmp = write_tmp(dir, "entries.jsonl", &entries)?;
    let v_tmp = write_tmp(dir, "vectors.bin", &vectors)?;
    let m_tmp = write_tmp(dir, "manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    std::fs::rename(e_tmp, dir.join("entries.jsonl"))?;
    std::fs::rename(v_tmp, dir.join("vectors.bin"))?;
    std::fs::rename(m_tmp, dir.join("manifest.json"))?;
    Ok(())
}

pub(crate) fn load_index(dir: &Path, knowledge_id: &str) -> Result<Index> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT || manifest.knowledge_id != knowledge_id {
        return Err(Error::validation(format!(
            "{}: manifest is for '{}' (format {})",
            dir.display(),
            manifest.knowledge_id,
            manifest.format
        )));
    }
    let reader = BufReader::new(std::fs::File::open(dir.join("entries.jsonl"))?);
    let mut entries: Vec<KnowledgeEntry> = Vec::with_capacity(manifest.count);
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    let bytes = std::fs::read(dir.join("vectors.bin"))?;
    if entries.len() != manifest.count || bytes.len() != manifest.count * manifest.dim * 4 {
        return Err(Error::validation(format!("{}: persisted index is inconsistent", dir.display())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    for (i, e) in entries.iter_mut().enumerate() {
        e.embedding = floats[i * manifest.dim..(i + 1) * manifest.dim].to_vec();
    }
    Ok(Index {
        entries,
        dim: (manifest.count > 0 || manifest.dim > 0).then_some(manifest.dim),
        next_seq: manifest.next_seq,
        fingerprint: manifest.fingerprint,
    })
}
