//! On-disk index directory.
//!
//! ```text
//! manifest.json      config, counts, sha256 of every other file
//! idf.f32            K_cw little-endian f32
//! centroids.f32      n_list × (m·dsub) f32
//! pq_codebooks.f32   m × ksub × dsub f32
//! postings.bin       per list: u32 list id, u32 count, count × (u32 segment id, m code bytes)
//! segments.jsonl     one SegmentRecord per line, in segment-id order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IndexConfig, PostingList, ProductQuantizer, SegmentRecord, SegmentStore, TfIdfIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub config: IndexConfig,
    pub k_cw: usize,
    pub doc_count: usize,
    pub n_list: usize,
    pub m: usize,
    pub ksub: usize,
    pub dsub: usize,
    pub checksums: BTreeMap<String, String>,
    /// Segment window and hop used to cut the tracks, seconds.
    #[serde(default)]
    pub segment_length: Option<f64>,
    #[serde(default)]
    pub segment_hop: Option<f64>,
    /// Sub-directory holding the tokenizer used to build the index.
    #[serde(default)]
    pub tokenizer_dir: Option<String>,
}

const FORMAT_VERSION: u32 = 1;

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn read_f32s(bytes: &[u8], what: &str) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Index(format!("{what}: truncated float array")));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write the index directory; `extra` fills the optional manifest fields.
pub fn save_index(
    dir: &Path,
    idx: &TfIdfIndex,
    store: &SegmentStore,
    extra: impl FnOnce(&mut IndexManifest),
) -> Result<IndexManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut postings = Vec::new();
    for (l, list) in idx.lists.iter().enumerate() {
        postings.extend((l as u32).to_le_bytes());
        postings.extend((list.ids.len() as u32).to_le_bytes());
        for (i, id) in list.ids.iter().enumerate() {
            postings.extend(id.to_le_bytes());
            postings.extend(&list.codes[i * idx.pq.m..(i + 1) * idx.pq.m]);
        }
    }
    let mut segments = Vec::new();
    for r in &store.records {
        serde_json::to_writer(&mut segments, r)?;
        segments.push(b'\n');
    }
    let files: [(&str, Vec<u8>); 5] = [
        ("idf.f32", f32_bytes(&idx.idf)),
        ("centroids.f32", f32_bytes(&idx.centroids)),
        ("pq_codebooks.f32", f32_bytes(&idx.pq.codebooks)),
        ("postings.bin", postings),
        ("segments.jsonl", segments),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        checksums.insert(name.to_string(), sha(bytes));
    }
    let mut manifest = IndexManifest {
        format_version: FORMAT_VERSION,
        config: idx.config.clone(),
        k_cw: idx.k_cw,
        doc_count: idx.doc_count,
        n_list: idx.lists.len(),
        m: idx.pq.m,
        ksub: idx.pq.ksub,
        dsub: idx.pq.dsub,
        checksums,
        segment_length: None,
        segment_hop: None,
        tokenizer_dir: None,
    };
    extra(&mut manifest);
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

pub fn load_index(dir: &Path) -> Result<(TfIdfIndex, SegmentStore, IndexManifest)> {
    let mp = dir.join("manifest.json");
    let manifest: IndexManifest =
        serde_json::from_slice(&fs::read(&mp).map_err(|e| Error::io(&mp, e))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Index(format!(
            "unsupported index format {}",
            manifest.format_version
        )));
    }
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        match manifest.checksums.get(name) {
            Some(sum) if *sum == sha(&bytes) => Ok(bytes),
            Some(_) => Err(Error::Index(format!("{name}: checksum mismatch"))),
            None => Err(Error::Index(format!("{name}: missing from manifest"))),
        }
    };
    let dim = manifest.m * manifest.dsub;
    let idf = read_f32s(&read("idf.f32")?, "idf")?;
    let centroids = read_f32s(&read("centroids.f32")?, "centroids")?;
    let codebooks = read_f32s(&read("pq_codebooks.f32")?, "pq codebooks")?;
    if idf.len() != manifest.k_cw
        || centroids.len() != manifest.n_list * dim
        || codebooks.len() != manifest.m * manifest.ksub * manifest.dsub
    {
        return Err(Error::Index("array sizes disagree with the manifest".into()));
    }

    let postings = read("postings.bin")?;
    let mut lists = vec![PostingList::default(); manifest.n_list];
    let mut pos = 0usize;
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let b = postings
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::Index("postings.bin truncated".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    while pos < postings.len() {
        let l = take_u32(&mut pos)? as usize;
        let count = take_u32(&mut pos)? as usize;
        let list = lists
            .get_mut(l)
            .ok_or_else(|| Error::Index(format!("posting list {l} out of range")))?;
        for _ in 0..count {
            list.ids.push(take_u32(&mut pos)?);
            let code = postings
                .get(pos..pos + manifest.m)
                .ok_or_else(|| Error::Index("postings.bin truncated".into()))?;
            list.codes.extend_from_slice(code);
            pos += manifest.m;
        }
    }

    let seg_bytes = read("segments.jsonl")?;
    let mut records = Vec::with_capacity(manifest.doc_count);
    for line in BufReader::new(&seg_bytes[..]).lines() {
        let line = line.map_err(|e| Error::io(dir.join("segments.jsonl"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str::<SegmentRecord>(&line)?);
    }
    if records.len() != manifest.doc_count {
        return Err(Error::Index(format!(
            "{} segment records for {} documents",
            records.len(),
            manifest.doc_count
        )));
    }
    let idx = TfIdfIndex {
        config: manifest.config.clone(),
        k_cw: manifest.k_cw,
        idf,
        doc_count: manifest.doc_count,
        centroids,
        lists,
        pq: ProductQuantizer {
            m: manifest.m,
            ksub: manifest.ksub,
            dsub: manifest.dsub,
            codebooks,
        },
    };
    Ok((idx, SegmentStore::new(records), manifest))
}
