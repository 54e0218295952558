//! Flat binary parameter container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "GCNDCKPT"
//! version  u32      1
//! count    u32      number of records
//! record*  name_len u32, name utf-8, ndim u32, dims u64 * ndim,
//!          data f64 * product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"GCNDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt record: {0}")]
    Corrupt(String),
    #[error("duplicate record name {0}")]
    Duplicate(String),
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<(), CheckpointError> {
    let mut seen = std::collections::HashSet::new();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(CheckpointError::Duplicate(r.name.clone()));
        }
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{}: shape {:?} vs {} values",
                r.name,
                r.shape,
                r.data.len()
            )));
        }
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for &d in &r.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &r.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(CheckpointError::Corrupt(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 16 {
            return Err(CheckpointError::Corrupt(format!("{name}: rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(CheckpointError::Duplicate(name));
        }
        out.push(Record { name, shape, data });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, records: &[Record]) -> Result<(), CheckpointError> {
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Record>, CheckpointError> {
    read_records(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_little_endian() {
        let mut buf = Vec::new();
        let rec = Record { name: "a".into(), shape: vec![1], data: vec![1.0] };
        write_records(&mut buf, &[rec]).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[1, 0, 0, 0]);
        assert_eq!(&buf[buf.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(read_records(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let mut buf = Vec::new();
        let rec = Record { name: "w".into(), shape: vec![2, 2], data: vec![1.0, 2.0, 3.0, 4.0] };
        write_records(&mut buf, &[rec]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_records(&buf[..]), Err(CheckpointError::Io(_))));
    }

    #[test]
    fn duplicates_rejected() {
        let rec = Record { name: "w".into(), shape: vec![1], data: vec![1.0] };
        assert!(matches!(
            write_records(Vec::new(), &[rec.clone(), rec]),
            Err(CheckpointError::Duplicate(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..40), rows in 1usize..5) {
            let n = values.len() / rows * rows;
            let rec = Record {
                name: "layer.weight".into(),
                shape: vec![rows, n / rows],
                data: values[..n].to_vec(),
            };
            let mut buf = Vec::new();
            write_records(&mut buf, std::slice::from_ref(&rec)).unwrap();
            let back = read_records(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].shape, &rec.shape);
            let a: Vec<u64> = back[0].data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = rec.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
