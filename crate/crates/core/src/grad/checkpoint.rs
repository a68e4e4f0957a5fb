//! Flat checkpoint container for parameter stores.
//!
//! Layout (all integers little-endian):
//!   magic "DUELCKPT1" · u64 rng_seed · u64 entry_count ·
//!   per entry: u32 name_len, name (UTF-8), u32 ndim, ndim × u32 dims,
//!              product(dims) × f32 payload
//! Entries are written in the store's (lexicographic) iteration order, and
//! payload bytes are copied verbatim, so a save → load → save cycle is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::store::ParamStore;
use super::tensor::Tensor;

/// Leading magic string identifying the container format.
pub const CHECKPOINT_MAGIC: &[u8; 9] = b"DUELCKPT1";

/// Write every parameter (name, shape, f32 payload) plus the store's RNG
/// seed to `path`.
pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&store.rng_seed().to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Read a container written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 9];
    read_exact(&mut r, path, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let rng_seed = read_u64(&mut r, path)?;
    let count = read_u64(&mut r, path)?;

    let mut store = ParamStore::new(rng_seed);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, path, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| {
            Error::Checkpoint(format!("{}: parameter name is not UTF-8", path.display()))
        })?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        read_exact(&mut r, path, &mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    // Trailing bytes mean the file was not produced by save_checkpoint.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(store),
        Ok(_) => Err(Error::Checkpoint(format!(
            "{}: trailing bytes after {} entries",
            path.display(),
            count
        ))),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact<R: Read>(r: &mut R, path: &Path, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("{}: truncated container", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, path, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, path, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new(0xDEAD_BEEF);
        s.insert(
            "encoder.layer0.w",
            Tensor::new(vec![2, 3], vec![1.5, -2.25, 3.0e-8, 0.0, -0.0, 7.0]).unwrap(),
        )
        .unwrap();
        s.insert("decoder.out_proj.b", Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("duel-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let store = sample_store();
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.rng_seed(), store.rng_seed());
        assert_eq!(loaded.len(), store.len());
        for (name, tensor) in store.iter() {
            let got = loaded.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            let same_bits = got
                .data()
                .iter()
                .zip(tensor.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{name} payload changed");
        }
        // Double round-trip produces byte-identical files.
        let path2 = dir.join("roundtrip2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = std::env::temp_dir().join("duel-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad-magic.ckpt");
        std::fs::write(&path, b"NOTACKPT!____").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let dir = std::env::temp_dir().join("duel-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        save_checkpoint(&sample_store(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
