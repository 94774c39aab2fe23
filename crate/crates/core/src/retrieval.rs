//! Category-partitioned exact visual retrieval index.
//!
//! Desk-scale stand-in for a curated image retrieval database: entities own a
//! handful of exemplar embeddings, queries run an exhaustive cosine scan
//! within one category, and the best entity's display name comes back with a
//! confidence score. Exact flat search keeps the oracle tests meaningful;
//! approximate structures are out of scope at this size.
//!
//! The index is immutable after build. [`upsert_entities`] returns a new
//! index value, leaving the original untouched.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::EmbedBackend;
use crate::tools::Category;

/// Map a cosine similarity in [-1, 1] to a reported confidence in [0, 1].
///
/// Single source of truth for the visual-search confidence; the tool layer
/// formats this value to two decimals.
pub fn confidence_from_cosine(s: f64) -> f64 {
    (s.clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// One retrieval unit: an identified entity with unit-norm exemplar vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    pub category: Category,
    /// Unit-norm embedding per exemplar image.
    pub exemplars: Vec<Vec<f32>>,
}

/// Manifest entity descriptor: exemplars are file paths. Paths ending in
/// `.json` are embedding files (a JSON array of numbers); anything else is
/// an image handed to the embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntity {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub exemplars: Vec<String>,
}

/// Line-delimited manifest: `{id, name, category, exemplars:[...]}` per line,
/// with one leading header line `{"embedding_dim":…, "version":…}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub embedding_dim: usize,
    pub version: String,
    pub entities: Vec<ManifestEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildWarning {
    pub entity_id: String,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate entity id: {0}")]
    DuplicateId(String),
    #[error("dimension mismatch for entity {entity}: expected {expected}, got {got}")]
    DimensionMismatch { entity: String, expected: usize, got: usize },
    #[error("manifest has no entities")]
    EmptyManifest,
    #[error("entity {entity} exemplar {exemplar} is a zero vector")]
    ZeroVector { entity: String, exemplar: usize },
    #[error("entity {entity}: failed to read exemplar {path}: {detail}")]
    ExemplarRead { entity: String, path: String, detail: String },
    #[error("embedding backend failure for entity {entity}: {detail}")]
    EmbedFailure { entity: String, detail: String },
    #[error("manifest parse error on line {line}: {detail}")]
    ManifestParse { line: usize, detail: String },
    #[error("serialized index corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("no exemplars indexed for category {0}")]
    EmptyIndexForCategory(Category),
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct StoredEntity {
    name: String,
    category: Category,
    vectors: Vec<Vec<f32>>,
}

/// Immutable flat index. Entities are keyed by id; queries scan the entities
/// of one category exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    version: String,
    entities: BTreeMap<String, StoredEntity>,
}

impl Index {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn vector_count(&self) -> usize {
        self.entities.values().map(|e| e.vectors.len()).sum()
    }

    pub fn categories(&self) -> Vec<Category> {
        let mut cats: Vec<Category> = self.entities.values().map(|e| e.category).collect();
        cats.sort_by_key(|c| c.as_str());
        cats.dedup();
        cats
    }

    pub fn entity_records(&self) -> Vec<EntityRecord> {
        self.entities
            .iter()
            .map(|(id, e)| EntityRecord {
                id: id.clone(),
                name: e.name.clone(),
                category: e.category,
                exemplars: e.vectors.clone(),
            })
            .collect()
    }
}

fn normalize(v: &mut [f32]) -> Result<(), ()> {
    let norm: f64 = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(());
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Parse the line-delimited manifest format.
pub fn parse_manifest(text: &str) -> Result<IndexManifest, IndexError> {
    #[derive(Deserialize)]
    struct Header {
        embedding_dim: usize,
        #[serde(default)]
        version: String,
    }

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, header_text) = lines.next().ok_or(IndexError::EmptyManifest)?;
    let header: Header = serde_json::from_str(header_text)
        .map_err(|e| IndexError::ManifestParse { line, detail: e.to_string() })?;
    let mut entities = Vec::new();
    for (line, l) in lines {
        let e: ManifestEntity = serde_json::from_str(l)
            .map_err(|e| IndexError::ManifestParse { line, detail: e.to_string() })?;
        entities.push(e);
    }
    Ok(IndexManifest {
        embedding_dim: header.embedding_dim,
        version: header.version,
        entities,
    })
}

/// Build an index from records whose embeddings are already materialized.
/// Vectors are re-normalized; exemplar counts outside [3, 10] produce
/// warnings, not errors.
pub fn build_from_records(
    dim: usize,
    version: &str,
    records: Vec<EntityRecord>,
) -> Result<(Index, Vec<BuildWarning>), IndexError> {
    if records.is_empty() {
        return Err(IndexError::EmptyManifest);
    }
    let mut entities = BTreeMap::new();
    let mut warnings = Vec::new();
    for rec in records {
        if entities.contains_key(&rec.id) {
            return Err(IndexError::DuplicateId(rec.id));
        }
        if rec.exemplars.is_empty() {
            return Err(IndexError::DimensionMismatch { entity: rec.id, expected: dim, got: 0 });
        }
        if rec.exemplars.len() < 3 || rec.exemplars.len() > 10 {
            warnings.push(BuildWarning {
                entity_id: rec.id.clone(),
                detail: format!(
                    "{} exemplars; retrieval units usually carry 3-10",
                    rec.exemplars.len()
                ),
            });
        }
        let mut vectors = Vec::with_capacity(rec.exemplars.len());
        for (i, mut v) in rec.exemplars.into_iter().enumerate() {
            if v.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    entity: rec.id,
                    expected: dim,
                    got: v.len(),
                });
            }
            normalize(&mut v)
                .map_err(|_| IndexError::ZeroVector { entity: rec.id.clone(), exemplar: i })?;
            vectors.push(v);
        }
        entities.insert(
            rec.id,
            StoredEntity { name: rec.name, category: rec.category, vectors },
        );
    }
    Ok((Index { dim, version: version.to_string(), entities }, warnings))
}

/// Build an index from a manifest, embedding image exemplars through the
/// backend and loading `.json` exemplars as raw vectors.
pub async fn build_index(
    manifest: &IndexManifest,
    embed: &dyn EmbedBackend,
) -> Result<(Index, Vec<BuildWarning>), IndexError> {
    let mut records = Vec::with_capacity(manifest.entities.len());
    for ent in &manifest.entities {
        let mut exemplars = Vec::with_capacity(ent.exemplars.len());
        for path in &ent.exemplars {
            let vector = if path.ends_with(".json") {
                let text = std::fs::read_to_string(path).map_err(|e| IndexError::ExemplarRead {
                    entity: ent.id.clone(),
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                serde_json::from_str::<Vec<f32>>(&text).map_err(|e| IndexError::ExemplarRead {
                    entity: ent.id.clone(),
                    path: path.clone(),
                    detail: e.to_string(),
                })?
            } else {
                let bytes = std::fs::read(path).map_err(|e| IndexError::ExemplarRead {
                    entity: ent.id.clone(),
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                embed.embed_image(&bytes).await.map_err(|e| IndexError::EmbedFailure {
                    entity: ent.id.clone(),
                    detail: e.to_string(),
                })?
            };
            exemplars.push(vector);
        }
        records.push(EntityRecord {
            id: ent.id.clone(),
            name: ent.name.clone(),
            category: ent.category,
            exemplars,
        });
    }
    build_from_records(manifest.embedding_dim, &manifest.version, records)
}

/// Exhaustive top-1 cosine query within one category.
///
/// Ties break deterministically: higher similarity wins; equal similarity
/// falls back to the lexicographically smallest entity id (the scan visits
/// ids in sorted order and only a strictly greater similarity displaces the
/// incumbent).
pub fn query_top1(
    vector: &[f32],
    category: Category,
    index: &Index,
) -> Result<(String, f64), QueryError> {
    if vector.len() != index.dim {
        return Err(QueryError::DimensionMismatch { expected: index.dim, got: vector.len() });
    }
    let mut best: Option<(f64, &str)> = None;
    for (id, ent) in &index.entities {
        if ent.category != category {
            continue;
        }
        for v in &ent.vectors {
            let s = dot(vector, v);
            if best.map_or(true, |(bs, _)| s > bs) {
                best = Some((s, id));
            }
        }
    }
    let (sim, id) = best.ok_or(QueryError::EmptyIndexForCategory(category))?;
    let name = index.entities[id].name.clone();
    Ok((name, confidence_from_cosine(sim)))
}

/// Copy-on-write upsert: existing ids are replaced, new ids added. The input
/// index is unchanged.
pub fn upsert_entities(index: &Index, delta: Vec<EntityRecord>) -> Result<Index, IndexError> {
    let mut next = index.clone();
    for rec in delta {
        if rec.exemplars.is_empty() {
            return Err(IndexError::DimensionMismatch {
                entity: rec.id,
                expected: index.dim,
                got: 0,
            });
        }
        let mut vectors = Vec::with_capacity(rec.exemplars.len());
        for (i, mut v) in rec.exemplars.into_iter().enumerate() {
            if v.len() != index.dim {
                return Err(IndexError::DimensionMismatch {
                    entity: rec.id,
                    expected: index.dim,
                    got: v.len(),
                });
            }
            normalize(&mut v)
                .map_err(|_| IndexError::ZeroVector { entity: rec.id.clone(), exemplar: i })?;
            vectors.push(v);
        }
        next.entities.insert(
            rec.id,
            StoredEntity { name: rec.name, category: rec.category, vectors },
        );
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Binary serialization.
//
// Little-endian throughout. Layout:
//   magic              8 bytes  "TIRIDX01"
//   dim                u32
//   version            u32 length + utf8 bytes
//   n_categories       u32
//   per category, sorted by category name:
//     category         u32 length + utf8 bytes
//     n_entities       u32
//     per entity, sorted by id:
//       id             u32 length + utf8 bytes
//       name           u32 length + utf8 bytes
//       n_vectors      u32
//       vectors        n_vectors * dim * f32
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 8] = b"TIRIDX01";

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serialize to the documented byte layout. Deterministic: the same logical
/// index always produces identical bytes.
pub fn serialize_index(index: &Index) -> Vec<u8> {
    let mut by_cat: BTreeMap<&str, Vec<(&String, &StoredEntity)>> = BTreeMap::new();
    for (id, ent) in &index.entities {
        by_cat.entry(ent.category.as_str()).or_default().push((id, ent));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(index.dim as u32).to_le_bytes());
    put_str(&mut out, &index.version);
    out.extend_from_slice(&(by_cat.len() as u32).to_le_bytes());
    for (cat, entities) in &by_cat {
        put_str(&mut out, cat);
        out.extend_from_slice(&(entities.len() as u32).to_le_bytes());
        for (id, ent) in entities {
            put_str(&mut out, id);
            put_str(&mut out, &ent.name);
            out.extend_from_slice(&(ent.vectors.len() as u32).to_le_bytes());
            for v in &ent.vectors {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.pos + n > self.bytes.len() {
            return Err(IndexError::Corrupt("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| IndexError::Corrupt(e.to_string()))
    }
}

/// Read an index back from its byte layout.
pub fn deserialize_index(bytes: &[u8]) -> Result<Index, IndexError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(IndexError::Corrupt("bad magic".into()));
    }
    let dim = c.u32()? as usize;
    let version = c.str()?;
    let n_categories = c.u32()?;
    let mut entities = BTreeMap::new();
    for _ in 0..n_categories {
        let cat_name = c.str()?;
        let category = cat_name
            .parse::<Category>()
            .map_err(|_| IndexError::Corrupt(format!("unknown category {cat_name}")))?;
        let n_entities = c.u32()?;
        for _ in 0..n_entities {
            let id = c.str()?;
            let name = c.str()?;
            let n_vectors = c.u32()? as usize;
            let mut vectors = Vec::with_capacity(n_vectors);
            for _ in 0..n_vectors {
                let raw = c.take(dim * 4)?;
                let v: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                vectors.push(v);
            }
            if entities.insert(id.clone(), StoredEntity { name, category, vectors }).is_some() {
                return Err(IndexError::Corrupt(format!("duplicate id {id}")));
            }
        }
    }
    if c.pos != bytes.len() {
        return Err(IndexError::Corrupt("trailing bytes".into()));
    }
    Ok(Index { dim, version, entities })
}

/// Convenience: write a serialized index to disk.
pub fn write_index(index: &Index, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, serialize_index(index))
}

/// Convenience: load a serialized index from disk.
pub fn read_index(path: &Path) -> Result<Index, IndexError> {
    let bytes = std::fs::read(path).map_err(|e| IndexError::Corrupt(e.to_string()))?;
    deserialize_index(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, hot: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        v
    }

    fn small_index() -> Index {
        let records = vec![
            EntityRecord {
                id: "e1".into(),
                name: "Alpha".into(),
                category: Category::Animal,
                exemplars: vec![unit(4, 0), unit(4, 1), vec![0.5, 0.5, 0.0, 0.0]],
            },
            EntityRecord {
                id: "e2".into(),
                name: "Beta".into(),
                category: Category::Animal,
                exemplars: vec![unit(4, 2), unit(4, 2), unit(4, 2)],
            },
            EntityRecord {
                id: "e3".into(),
                name: "Gamma".into(),
                category: Category::Car,
                exemplars: vec![unit(4, 3), unit(4, 3), unit(4, 3)],
            },
        ];
        build_from_records(4, "test", records).unwrap().0
    }

    #[test]
    fn count_conservation() {
        let idx = small_index();
        assert_eq!(idx.entity_count(), 3);
        assert_eq!(idx.vector_count(), 9);
    }

    #[test]
    fn duplicate_id_rejected() {
        let recs = vec![
            EntityRecord {
                id: "dup".into(),
                name: "A".into(),
                category: Category::Plant,
                exemplars: vec![unit(2, 0)],
            },
            EntityRecord {
                id: "dup".into(),
                name: "B".into(),
                category: Category::Plant,
                exemplars: vec![unit(2, 1)],
            },
        ];
        assert!(matches!(build_from_records(2, "v", recs), Err(IndexError::DuplicateId(_))));
    }

    #[test]
    fn single_exemplar_warns() {
        let recs = vec![EntityRecord {
            id: "one".into(),
            name: "Solo".into(),
            category: Category::Logo,
            exemplars: vec![unit(2, 0)],
        }];
        let (_, warnings) = build_from_records(2, "v", recs).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].entity_id, "one");
    }

    #[test]
    fn self_query_hits_full_confidence() {
        let idx = small_index();
        let (name, conf) = query_top1(&unit(4, 2), Category::Animal, &idx).unwrap();
        assert_eq!(name, "Beta");
        assert!((conf - 1.0).abs() < 1e-6);
        assert_eq!(format!("{conf:.2}"), "1.00");
    }

    #[test]
    fn orthogonal_query_maps_to_half() {
        let idx = small_index();
        // Orthogonal to every animal exemplar.
        let (_, conf) = query_top1(&unit(4, 3), Category::Animal, &idx).unwrap();
        assert!((conf - 0.5).abs() < 1e-6);
    }

    #[test]
    fn category_isolation() {
        let idx = small_index();
        // e3's exemplar direction, but asked in Animal: must not return Gamma.
        let (name, _) = query_top1(&unit(4, 3), Category::Animal, &idx).unwrap();
        assert_ne!(name, "Gamma");
        assert!(matches!(
            query_top1(&unit(4, 0), Category::Person, &idx),
            Err(QueryError::EmptyIndexForCategory(Category::Person))
        ));
    }

    #[test]
    fn upsert_replaces_and_adds() {
        let idx = small_index();
        let next = upsert_entities(
            &idx,
            vec![
                EntityRecord {
                    id: "e2".into(),
                    name: "Beta Renamed".into(),
                    category: Category::Animal,
                    exemplars: vec![unit(4, 2)],
                },
                EntityRecord {
                    id: "e4".into(),
                    name: "Delta".into(),
                    category: Category::Landmark,
                    exemplars: vec![unit(4, 1)],
                },
            ],
        )
        .unwrap();
        let (name, conf) = query_top1(&unit(4, 2), Category::Animal, &next).unwrap();
        assert_eq!(name, "Beta Renamed");
        assert!((conf - 1.0).abs() < 1e-6);
        let (name, _) = query_top1(&unit(4, 1), Category::Landmark, &next).unwrap();
        assert_eq!(name, "Delta");
        // Original untouched.
        let (name, _) = query_top1(&unit(4, 2), Category::Animal, &idx).unwrap();
        assert_eq!(name, "Beta");
    }

    #[test]
    fn empty_delta_is_identity() {
        let idx = small_index();
        let next = upsert_entities(&idx, vec![]).unwrap();
        assert_eq!(idx, next);
    }

    #[test]
    fn serialization_round_trips_and_is_deterministic() {
        let idx = small_index();
        let bytes = serialize_index(&idx);
        let again = serialize_index(&idx);
        assert_eq!(bytes, again);
        let back = deserialize_index(&bytes).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn corrupt_bytes_detected() {
        let idx = small_index();
        let mut bytes = serialize_index(&idx);
        bytes[0] = b'X';
        assert!(matches!(deserialize_index(&bytes), Err(IndexError::Corrupt(_))));
        let mut truncated = serialize_index(&idx);
        truncated.truncate(truncated.len() - 3);
        assert!(deserialize_index(&truncated).is_err());
    }

    #[test]
    fn manifest_parses() {
        let text = r#"
{"embedding_dim": 8, "version": "v1"}
{"id":"a","name":"A","category":"animal","exemplars":["a1.json","a2.json","a3.json"]}
{"id":"b","name":"B","category":"car","exemplars":["b.png"]}
"#;
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.embedding_dim, 8);
        assert_eq!(m.entities.len(), 2);
        assert_eq!(m.entities[1].category, Category::Car);
    }
}
