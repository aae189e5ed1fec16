//! Dataset serialization.
//!
//! Matrix tasks ("MXG1"): magic, version u16, instance count u32, panel
//! side u16, meta-target width u16; then per instance 16 rasters (8 context
//! in row-major matrix order, 8 candidates) as u8 grayscale, answer index
//! u8, meta-target bits packed little-endian, and the relation list (count
//! u8, then r/o/a/orientation enums as u8). All integers little-endian.
//!
//! Syllogism tasks ("MXGS"): magic, version u16, count u32, side u16,
//! contour count u8, conclusion count u8; per instance 2 premise rasters,
//! the conclusion rasters, one validity byte per conclusion, and the two
//! premise relation codes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use crate::error::{Error, Result};

use super::syllogism::{SetRelation, SyllogismInstance, SET_RELATIONS};
use super::{
    AttributeKind, ObjectKind, Orientation, PanelSpec, RelationSpec, RelationType, TaskInstance,
};

const TASK_MAGIC: &[u8; 4] = b"MXG1";
const SYLLOGISM_MAGIC: &[u8; 4] = b"MXGS";
const VERSION: u16 = 1;

/// Reader wrapper that tracks the byte offset for format errors.
struct Tracked<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Tracked<R> {
    fn new(inner: R) -> Self {
        Tracked { inner, offset: 0 }
    }

    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.offset, msg: msg.into() }
    }
}

impl<R: Read> Read for Tracked<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

fn read_exact_or<R: Read>(r: &mut Tracked<R>, buf: &mut [u8], what: &str) -> Result<()> {
    let at = r.offset;
    r.read_exact(buf)
        .map_err(|_| Error::Format { offset: at, msg: format!("truncated while reading {what}") })
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], width: usize) -> Vec<bool> {
    (0..width).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

fn relation_code(r: &RelationSpec) -> [u8; 4] {
    [
        r.relation as u8,
        r.object as u8,
        r.attribute as u8,
        r.orientation as u8,
    ]
}

fn decode_relation(code: [u8; 4], offset: u64) -> Result<RelationSpec> {
    let relation = match code[0] {
        0 => RelationType::Progression,
        1 => RelationType::And,
        2 => RelationType::Or,
        3 => RelationType::Xor,
        4 => RelationType::ConsistentUnion,
        5 => RelationType::Arithmetic,
        6 => RelationType::Constant,
        v => return Err(Error::Format { offset, msg: format!("bad relation code {v}") }),
    };
    let object = match code[1] {
        0 => ObjectKind::Shape,
        1 => ObjectKind::Line,
        v => return Err(Error::Format { offset, msg: format!("bad object code {v}") }),
    };
    let attribute = match code[2] {
        0 => AttributeKind::Type,
        1 => AttributeKind::Size,
        2 => AttributeKind::Color,
        3 => AttributeKind::Position,
        4 => AttributeKind::Number,
        v => return Err(Error::Format { offset, msg: format!("bad attribute code {v}") }),
    };
    let orientation = match code[3] {
        0 => Orientation::Rows,
        1 => Orientation::Columns,
        v => return Err(Error::Format { offset, msg: format!("bad orientation code {v}") }),
    };
    Ok(RelationSpec { relation, object, attribute, orientation })
}

/// Write a matrix-task dataset. Symbolic panel specs ride along as a JSON
/// trailer so that read(write(x)) == x field-for-field.
pub fn write_dataset(instances: &[TaskInstance], path: &Path) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Usage("refusing to write an empty dataset".into()));
    }
    let side = instances[0].side;
    let meta_width = instances[0].meta_target.len();
    for t in instances {
        if t.side != side || t.meta_target.len() != meta_width {
            return Err(Error::Usage(
                "all instances in a dataset must share panel side and meta width".into(),
            ));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TASK_MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u32::<LE>(instances.len() as u32)?;
    w.write_u16::<LE>(side)?;
    w.write_u16::<LE>(meta_width as u16)?;
    for t in instances {
        for raster in &t.rasters {
            debug_assert_eq!(raster.len(), (side as usize).pow(2));
            w.write_all(raster)?;
        }
        w.write_u8(t.answer)?;
        w.write_all(&pack_bits(&t.meta_target))?;
        w.write_u8(t.relations.len() as u8)?;
        for r in &t.relations {
            w.write_all(&relation_code(r))?;
        }
    }
    // Symbolic specs trailer: u32 length + JSON.
    let specs: Vec<(Vec<PanelSpec>, Vec<PanelSpec>)> = instances
        .iter()
        .map(|t| (t.context.clone(), t.candidates.clone()))
        .collect();
    let blob = serde_json::to_vec(&specs)
        .map_err(|e| Error::Usage(format!("panel spec serialization failed: {e}")))?;
    w.write_u32::<LE>(blob.len() as u32)?;
    w.write_all(&blob)?;
    w.flush()?;
    Ok(())
}

/// Read a matrix-task dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Vec<TaskInstance>> {
    let mut r = Tracked::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != TASK_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let version = r.read_u16::<LE>().map_err(|_| r.fail("truncated version"))?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(|_| r.fail("truncated count"))? as usize;
    let side = r.read_u16::<LE>().map_err(|_| r.fail("truncated side"))?;
    let meta_width = r.read_u16::<LE>().map_err(|_| r.fail("truncated meta width"))? as usize;
    let raster_len = (side as usize).pow(2);

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut rasters = Vec::with_capacity(16);
        for _ in 0..16 {
            let mut buf = vec![0u8; raster_len];
            read_exact_or(&mut r, &mut buf, "raster")?;
            rasters.push(buf);
        }
        let answer = r.read_u8().map_err(|_| r.fail("truncated answer"))?;
        if answer > 7 {
            return Err(r.fail(format!("answer index {answer} out of range")));
        }
        let mut meta_bytes = vec![0u8; meta_width.div_ceil(8)];
        read_exact_or(&mut r, &mut meta_bytes, "meta target")?;
        let meta_target = unpack_bits(&meta_bytes, meta_width);
        let nrel = r.read_u8().map_err(|_| r.fail("truncated relation count"))?;
        let mut relations = Vec::with_capacity(nrel as usize);
        for _ in 0..nrel {
            let at = r.offset;
            let mut code = [0u8; 4];
            read_exact_or(&mut r, &mut code, "relation")?;
            relations.push(decode_relation(code, at)?);
        }
        out.push(TaskInstance {
            context: Vec::new(),
            candidates: Vec::new(),
            answer,
            relations,
            meta_target,
            rasters,
            side,
        });
    }

    let blob_len = r.read_u32::<LE>().map_err(|_| r.fail("truncated spec trailer"))? as usize;
    let mut blob = vec![0u8; blob_len];
    read_exact_or(&mut r, &mut blob, "spec trailer")?;
    let at = r.offset;
    let specs: Vec<(Vec<PanelSpec>, Vec<PanelSpec>)> = serde_json::from_slice(&blob)
        .map_err(|e| Error::Format { offset: at, msg: format!("bad spec trailer: {e}") })?;
    if specs.len() != out.len() {
        return Err(r.fail("spec trailer length mismatch"));
    }
    for (t, (context, candidates)) in out.iter_mut().zip(specs) {
        t.context = context;
        t.candidates = candidates;
    }
    Ok(out)
}

/// Write a syllogism dataset.
pub fn write_syllogisms(instances: &[SyllogismInstance], path: &Path) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Usage("refusing to write an empty dataset".into()));
    }
    let side = instances[0].side;
    let n_contours = instances[0].n_contours;
    let k = instances[0].conclusions.len();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SYLLOGISM_MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u32::<LE>(instances.len() as u32)?;
    w.write_u16::<LE>(side)?;
    w.write_u8(n_contours)?;
    w.write_u8(k as u8)?;
    for t in instances {
        if t.side != side || t.n_contours != n_contours || t.conclusions.len() != k {
            return Err(Error::Usage("inconsistent syllogism instance".into()));
        }
        for p in &t.premises {
            w.write_all(p)?;
        }
        for c in &t.conclusions {
            w.write_all(c)?;
        }
        for &b in &t.labels {
            w.write_u8(b as u8)?;
        }
        w.write_u8(t.premise_relations.0 as u8)?;
        w.write_u8(t.premise_relations.1 as u8)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a syllogism dataset written by [`write_syllogisms`].
pub fn read_syllogisms(path: &Path) -> Result<Vec<SyllogismInstance>> {
    let mut r = Tracked::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != SYLLOGISM_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let version = r.read_u16::<LE>().map_err(|_| r.fail("truncated version"))?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(|_| r.fail("truncated count"))? as usize;
    let side = r.read_u16::<LE>().map_err(|_| r.fail("truncated side"))?;
    let n_contours = r.read_u8().map_err(|_| r.fail("truncated contour count"))?;
    let k = r.read_u8().map_err(|_| r.fail("truncated conclusion count"))? as usize;
    if k != SET_RELATIONS.len() {
        return Err(r.fail(format!("unsupported conclusion count {k}")));
    }
    let raster_len = (side as usize).pow(2);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut premises = [Vec::new(), Vec::new()];
        for p in &mut premises {
            let mut buf = vec![0u8; raster_len];
            read_exact_or(&mut r, &mut buf, "premise raster")?;
            *p = buf;
        }
        let mut conclusions = Vec::with_capacity(k);
        for _ in 0..k {
            let mut buf = vec![0u8; raster_len];
            read_exact_or(&mut r, &mut buf, "conclusion raster")?;
            conclusions.push(buf);
        }
        let mut labels = [false; 5];
        for l in &mut labels {
            *l = r.read_u8().map_err(|_| r.fail("truncated label"))? != 0;
        }
        let at = r.offset;
        let r1 = r.read_u8().map_err(|_| r.fail("truncated premise relation"))?;
        let r2 = r.read_u8().map_err(|_| r.fail("truncated premise relation"))?;
        let premise_relations = (
            SetRelation::from_code(r1)
                .ok_or_else(|| Error::Format { offset: at, msg: format!("bad relation {r1}") })?,
            SetRelation::from_code(r2)
                .ok_or_else(|| Error::Format { offset: at, msg: format!("bad relation {r2}") })?,
        );
        out.push(SyllogismInstance {
            premises,
            conclusions,
            labels,
            premise_relations,
            n_contours,
            side,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::sampler::sample_task;
    use super::super::syllogism::sample_syllogism;
    use super::super::{GeneratorConfig, MetaVocabulary, LEGAL_TUPLES};
    use super::*;

    fn sample_batch(seed: u64, n: usize) -> Vec<TaskInstance> {
        let mut cfg = GeneratorConfig::new(LEGAL_TUPLES.to_vec(), MetaVocabulary::full());
        cfg.panel_side = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_task(&cfg, &mut rng).unwrap()).collect()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.mxg1");
        let instances = sample_batch(1, 100);
        write_dataset(&instances, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(instances, back);
    }

    #[test]
    fn same_seed_writes_byte_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.mxg1");
        let p2 = dir.path().join("b.mxg1");
        write_dataset(&sample_batch(7, 10), &p1).unwrap();
        write_dataset(&sample_batch(7, 10), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.mxg1");
        write_dataset(&sample_batch(3, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        match read_dataset(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.mxg1");
        write_dataset(&sample_batch(3, 2), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match read_dataset(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn syllogism_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syll.mxgs");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let instances: Vec<_> = (0..20)
            .map(|_| sample_syllogism(40, 3, &mut rng).unwrap())
            .collect();
        write_syllogisms(&instances, &path).unwrap();
        assert_eq!(read_syllogisms(&path).unwrap(), instances);
    }
}
