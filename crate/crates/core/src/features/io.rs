//! Binary feature container.
//!
//! Layout, all little-endian: magic `FEAT`, version `u32` (1), kind `u8`,
//! frames `u32`, dims `u32`, frame shift `f64` seconds, then the row-major
//! `f64` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;

pub fn write_feat<W: Write>(mut w: W, f: &FeatureMatrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[f.kind().code()])?;
    w.write_all(&(f.num_frames() as u32).to_le_bytes())?;
    w.write_all(&(f.dim() as u32).to_le_bytes())?;
    w.write_all(&f.frame_shift_s().to_le_bytes())?;
    for v in f.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feat<R: Read>(mut r: R) -> Result<FeatureMatrix> {
    let bad = |msg: &str| Error::parse("<feat>", 0, msg);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = FeatureKind::from_code(kind[0]).ok_or_else(|| bad("unknown kind"))?;
    r.read_exact(&mut b4)?;
    let frames = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let dims = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let shift = f64::from_le_bytes(b8);
    let mut payload = vec![0u8; frames * dims * 8];
    r.read_exact(&mut payload)?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let data = Array2::from_shape_vec((frames, dims), values).map_err(|e| bad(&e.to_string()))?;
    FeatureMatrix::new(data, shift, kind)
}

pub fn write_feat_file(path: &Path, f: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_feat(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn read_feat_file(path: &Path) -> Result<FeatureMatrix> {
    read_feat(BufReader::new(File::open(path)?)).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::parse(path.display().to_string(), line, msg),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = FeatureMatrix::new(Array2::from_elem((2, 3), 1.5), 0.01, FeatureKind::Mfcc).unwrap();
        let mut buf = Vec::new();
        write_feat(&mut buf, &f).unwrap();
        assert_eq!(&buf[0..4], b"FEAT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf[8], 1);
        assert_eq!(u32::from_le_bytes(buf[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[13..17].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(buf[17..25].try_into().unwrap()), 0.01);
        assert_eq!(buf.len(), 25 + 6 * 8);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_feat(&b"FEAX\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    proptest! {
        #[test]
        fn roundtrip(t in 1usize..6, d in 1usize..5, seed in proptest::collection::vec(-1e6f64..1e6, 30)) {
            let data = Array2::from_shape_fn((t, d), |(i, j)| seed[(i * d + j) % seed.len()]);
            let f = FeatureMatrix::new(data, 0.0125, FeatureKind::LdaProjected).unwrap();
            let mut buf = Vec::new();
            write_feat(&mut buf, &f).unwrap();
            prop_assert_eq!(read_feat(&buf[..]).unwrap(), f);
        }
    }
}
