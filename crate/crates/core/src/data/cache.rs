//! Binary on-disk cache for preprocessed datasets.
//!
//! Layout (all integers little-endian): magic `FPDS`, version u32, n u64,
//! d u64, c u32, then n*d row-major f64 features, then n u32 labels.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"FPDS";
pub const CACHE_VERSION: u32 = 1;

pub fn save_cache<P: AsRef<Path>>(dataset: &Dataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.n_samples() as u64).to_le_bytes())?;
    w.write_all(&(dataset.n_features() as u64).to_le_bytes())?;
    w.write_all(&(dataset.n_classes() as u32).to_le_bytes())?;
    for v in dataset.features().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &label in dataset.labels() {
        w.write_all(&(label as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cache<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("opening cache {}: {e}", path.as_ref().display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != CACHE_MAGIC {
        return Err(Error::Data(format!("bad cache magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Data(format!("unsupported cache version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;

    let mut values = Vec::with_capacity(n * d);
    let mut buf = [0u8; 8];
    for _ in 0..n * d {
        read_exact(&mut r, &mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(read_u32(&mut r)? as usize);
    }

    let x = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::Data(format!("cache shape: {e}")))?;
    let names = (0..d).map(|i| format!("f{i}")).collect();
    Dataset::new(x, labels, c, names)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Data(format!("truncated cache file: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = make_synthetic(37, 5, 3, 4.0, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.fpds");
        save_cache(&ds, &path).unwrap();
        let loaded = load_cache(&path).unwrap();
        assert_eq!(loaded.labels(), ds.labels());
        assert_eq!(loaded.n_classes(), ds.n_classes());
        for (a, b) in loaded.features().iter().zip(ds.features()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let ds = make_synthetic(3, 2, 2, 4.0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.fpds");
        save_cache(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"FPDS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        // header + 3*2 f64 + 3 u32 labels
        assert_eq!(bytes.len(), 28 + 6 * 8 + 3 * 4);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fpds");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_cache(&path), Err(Error::Data(_))));
    }
}
