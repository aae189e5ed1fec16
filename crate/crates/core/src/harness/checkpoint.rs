//! Checkpoint files.
//!
//! Format "MXGC": magic, format version u16, record count u32, then per
//! record: name (u16 length + UTF-8), dtype tag u8 (0 = f32, 1 = f64),
//! rank u8, extents u32 each, raw little-endian values. Optimizer state is
//! appended in the same record format under the reserved name prefix
//! "opt/". All integers little-endian. Writes go through a temp file and an
//! atomic rename so an interrupted save never clobbers the previous
//! checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use crate::error::{Error, Result};
use crate::numerics::{Array, Dtype, ParamStore, RAdam, Scalar};

const MAGIC: &[u8; 4] = b"MXGC";
const VERSION: u16 = 1;

pub fn write_checkpoint<T: Scalar>(
    store: &ParamStore<T>,
    optimizer: Option<&RAdam<T>>,
    path: &Path,
) -> Result<()> {
    let mut records: Vec<(String, &Array<T>)> = store
        .iter()
        .map(|(name, p)| (name.clone(), &p.value))
        .collect();
    let opt_state = optimizer.map(|o| o.export_state()).unwrap_or_default();
    for (name, arr) in &opt_state {
        records.push((name.clone(), arr));
    }

    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u16::<LE>(VERSION)?;
        w.write_u32::<LE>(records.len() as u32)?;
        for (name, arr) in &records {
            let bytes = name.as_bytes();
            w.write_u16::<LE>(bytes.len() as u16)?;
            w.write_all(bytes)?;
            w.write_u8(T::DTYPE as u8)?;
            w.write_u8(arr.shape().len() as u8)?;
            for &e in arr.shape() {
                w.write_u32::<LE>(e as u32)?;
            }
            let mut buf = Vec::with_capacity(arr.numel() * T::DTYPE.byte_width());
            for &v in arr.data() {
                v.write_le(&mut buf);
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Raw records from a checkpoint file.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Array<T>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;
    let mut magic = [0u8; 4];
    read_at(&mut r, &mut magic, &mut offset, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let version = r.read_u16::<LE>().map_err(|_| trunc(offset, "version"))?;
    offset += 2;
    if version != VERSION {
        return Err(Error::Format { offset, msg: format!("unsupported version {version}") });
    }
    let count = r.read_u32::<LE>().map_err(|_| trunc(offset, "count"))?;
    offset += 4;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.read_u16::<LE>().map_err(|_| trunc(offset, "name length"))? as usize;
        offset += 2;
        let mut nbuf = vec![0u8; nlen];
        read_at(&mut r, &mut nbuf, &mut offset, "name")?;
        let name = String::from_utf8(nbuf)
            .map_err(|_| Error::Format { offset, msg: "non-UTF-8 name".into() })?;
        let dtype_tag = r.read_u8().map_err(|_| trunc(offset, "dtype"))?;
        offset += 1;
        let dtype = Dtype::from_tag(dtype_tag)
            .ok_or_else(|| Error::Format { offset, msg: format!("bad dtype tag {dtype_tag}") })?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored dtype {dtype:?} does not match requested {:?}",
                T::DTYPE
            )));
        }
        let rank = r.read_u8().map_err(|_| trunc(offset, "rank"))? as usize;
        offset += 1;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LE>().map_err(|_| trunc(offset, "extent"))? as usize);
            offset += 4;
        }
        let numel: usize = shape.iter().product();
        let width = dtype.byte_width();
        let mut buf = vec![0u8; numel * width];
        read_at(&mut r, &mut buf, &mut offset, "values")?;
        let data: Vec<T> = buf.chunks_exact(width).map(T::read_le).collect();
        out.push((name, Array::from_vec(&shape, data)));
    }
    Ok(out)
}

fn trunc(offset: u64, what: &str) -> Error {
    Error::Format { offset, msg: format!("truncated while reading {what}") }
}

fn read_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| trunc(*offset, what))?;
    *offset += buf.len() as u64;
    Ok(())
}

/// Load model parameters from checkpoint records into a store, verifying
/// names and shapes; optimizer records ("opt/...") are returned separately.
pub fn load_into_store<T: Scalar>(
    records: Vec<(String, Array<T>)>,
    store: &mut ParamStore<T>,
) -> Result<Vec<(String, Array<T>)>> {
    let mut opt = Vec::new();
    let mut seen = 0usize;
    for (name, arr) in records {
        if name.starts_with("opt/") {
            opt.push((name, arr));
            continue;
        }
        if !store.contains(&name) {
            return Err(Error::Checkpoint(format!(
                "checkpoint parameter {name} not present in this model"
            )));
        }
        store.set(&name, arr)?;
        seen += 1;
    }
    if seen != store.len() {
        let missing: Vec<&String> = store
            .iter()
            .map(|(n, _)| n)
            .filter(|n| !n.starts_with("opt/"))
            .take(3)
            .collect();
        if seen < store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is missing parameters (expected {}, got {seen}; model has {missing:?}...)",
                store.len()
            )));
        }
    }
    Ok(opt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a/weight", Array::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        s.insert("a/bias", Array::from_vec(&[3], vec![-1.0, 0.0, 1.0]), true);
        s.insert("bn/running_mean", Array::zeros(&[3]), false);
        s
    }

    #[test]
    fn round_trip_bytes_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.mxgc");
        let p2 = dir.path().join("b.mxgc");
        let s = store();
        write_checkpoint(&s, None, &p1).unwrap();
        write_checkpoint(&s, None, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let records = read_checkpoint::<f32>(&p1).unwrap();
        let mut target = store();
        target.set("a/weight", Array::zeros(&[2, 3])).unwrap();
        let opt = load_into_store(records, &mut target).unwrap();
        assert!(opt.is_empty());
        assert_eq!(target.get("a/weight").unwrap().data()[4], 5.0);
    }

    #[test]
    fn shape_mismatch_names_offending_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mxgc");
        write_checkpoint(&store(), None, &path).unwrap();
        let records = read_checkpoint::<f32>(&path).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.insert("a/weight", Array::zeros(&[3, 3]), true);
        other.insert("a/bias", Array::zeros(&[3]), true);
        other.insert("bn/running_mean", Array::zeros(&[3]), false);
        let err = load_into_store(records, &mut other).unwrap_err();
        assert!(err.to_string().contains("a/weight"), "{err}");
    }

    #[test]
    fn optimizer_state_round_trips_under_opt_prefix() {
        use crate::numerics::{Gradients, RAdamConfig};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mxgc");
        let mut s = store();
        let mut opt = RAdam::new(RAdamConfig::default());
        let mut g = Gradients::new();
        g.insert("a/weight".into(), Array::full(&[2, 3], 0.1f32));
        opt.step(&mut s, &g).unwrap();
        write_checkpoint(&s, Some(&opt), &path).unwrap();

        let records = read_checkpoint::<f32>(&path).unwrap();
        let mut target = store();
        let opt_records = load_into_store(records, &mut target).unwrap();
        let mut opt2 = RAdam::new(RAdamConfig::default());
        opt2.import_state(&opt_records).unwrap();
        assert_eq!(opt2.step_count(), 1);
    }

    #[test]
    fn bad_magic_is_format_error_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mxgc");
        write_checkpoint(&store(), None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'Z';
        std::fs::write(&path, bytes).unwrap();
        match read_checkpoint::<f32>(&path) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }
}
