//! On-disk layout: `manifest.json`, `exemplars.jsonl` (one record per line)
//! and `embeddings.bin` (little-endian f32 rows, row i belongs to line i).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Exemplar, ExemplarMemory, MemoryError, MemorySkill};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXEMPLARS_FILE: &str = "exemplars.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub skill_id: MemorySkill,
    pub embedder_id: String,
    pub dimension: usize,
    pub count: usize,
    pub sealed: bool,
    /// Image root, relative to the store directory unless absolute.
    pub image_root: String,
}

fn store_err(path: &Path, message: impl ToString) -> MemoryError {
    MemoryError::Store {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl ExemplarMemory {
    pub fn manifest(&self, dir: &Path) -> MemoryManifest {
        let image_root = match self.image_root.strip_prefix(dir) {
            Ok(rel) if rel.as_os_str().is_empty() => ".".to_string(),
            Ok(rel) => rel.display().to_string(),
            Err(_) => std::path::absolute(&self.image_root)
                .unwrap_or_else(|_| self.image_root.clone())
                .display()
                .to_string(),
        };
        MemoryManifest {
            skill_id: self.skill,
            embedder_id: self.embedder_id.clone(),
            dimension: self.dimension,
            count: self.entries.len(),
            sealed: self.sealed,
            image_root,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), MemoryError> {
        std::fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
        let mut lines = Vec::new();
        let mut vectors = Vec::with_capacity(self.entries.len() * self.dimension * 4);
        for e in &self.entries {
            if e.embedding.len() != self.dimension {
                return Err(store_err(dir, format!("exemplar {} has no {}-dim embedding", e.id, self.dimension)));
            }
            serde_json::to_writer(&mut lines, e).map_err(|err| store_err(dir, err))?;
            lines.push(b'\n');
            for x in &e.embedding {
                vectors.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_file(&dir.join(EXEMPLARS_FILE), &lines)?;
        write_file(&dir.join(EMBEDDINGS_FILE), &vectors)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest(dir)).map_err(|e| store_err(dir, e))?;
        write_file(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self, MemoryError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| store_err(&p, e))
        };
        let manifest: MemoryManifest =
            serde_json::from_slice(&read(MANIFEST_FILE)?).map_err(|e| store_err(&dir.join(MANIFEST_FILE), e))?;
        let records = read(EXEMPLARS_FILE)?;
        let vectors = read(EMBEDDINGS_FILE)?;
        let row = manifest.dimension * 4;
        if vectors.len() != row * manifest.count {
            return Err(store_err(
                &dir.join(EMBEDDINGS_FILE),
                format!("expected {} bytes, found {}", row * manifest.count, vectors.len()),
            ));
        }
        let mut entries = Vec::with_capacity(manifest.count);
        for (i, line) in records.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
            let mut e: Exemplar = serde_json::from_slice(line)
                .map_err(|err| store_err(&dir.join(EXEMPLARS_FILE), format!("line {}: {err}", i + 1)))?;
            let bytes = vectors.get(i * row..(i + 1) * row).ok_or_else(|| {
                store_err(&dir.join(EXEMPLARS_FILE), format!("more records than the manifest count {}", manifest.count))
            })?;
            e.embedding = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(e);
        }
        if entries.len() != manifest.count {
            return Err(store_err(
                &dir.join(EXEMPLARS_FILE),
                format!("manifest says {} records, found {}", manifest.count, entries.len()),
            ));
        }
        let root = PathBuf::from(&manifest.image_root);
        Ok(Self {
            skill: manifest.skill_id,
            embedder_id: manifest.embedder_id,
            dimension: manifest.dimension,
            entries,
            sealed: manifest.sealed,
            image_root: if root.is_absolute() { root } else { dir.join(root) },
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), MemoryError> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| store_err(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| store_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| store_err(path, e))
}
