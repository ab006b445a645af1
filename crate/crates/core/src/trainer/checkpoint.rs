//! Parameter checkpoints: a flat binary file of named tensors.
//!
//! Byte layout (all integers little-endian u32):
//!
//! ```text
//! magic   4 bytes  "SVTF"
//! version u32      1
//! width   u32      scalar width in bytes (4 = f32, 8 = f64)
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8),
//!   ndim u32, dims u32 * ndim,
//!   data: product(dims) * width bytes, IEEE 754 little-endian
//! ```
//!
//! Reloading restores bit-identical values for the same scalar width.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::numerics::{ParamSet, Scalar, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SVTF";
const VERSION: u32 = 1;

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_tensors<S: Scalar>(path: &Path, items: &[(String, Tensor<S>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(S::WIDTH as u32).to_le_bytes())?;
    f.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, tensor) in items {
        let name_bytes = name.as_bytes();
        f.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        f.write_all(name_bytes)?;
        f.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            f.write_all(&v.to_le_bytes_vec())?;
        }
    }
    Ok(())
}

pub fn load_tensors<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let mut f = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::path(path, format!("cannot open checkpoint: {e}")))?,
    );
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::validation(format!("{}: not a tensor checkpoint", path.display())));
    }
    let version = read_u32(&mut f)?;
    if version != VERSION {
        return Err(Error::validation(format!("unsupported checkpoint version {version}")));
    }
    let width = read_u32(&mut f)? as usize;
    if width != S::WIDTH {
        return Err(Error::validation(format!(
            "checkpoint scalar width {width} does not match runtime width {}",
            S::WIDTH
        )));
    }
    let count = read_u32(&mut f)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::validation(format!("bad tensor name: {e}")))?;
        let ndim = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut f)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = vec![0u8; S::WIDTH];
        for _ in 0..n {
            f.read_exact(&mut buf)?;
            data.push(S::from_le_slice(&buf));
        }
        out.push((name, Tensor::from_vec(shape, data)));
    }
    Ok(out)
}

pub fn save_param_set<S: Scalar>(path: &Path, params: &ParamSet<S>) -> Result<()> {
    let items: Vec<(String, Tensor<S>)> =
        params.iter().map(|(_, name, t)| (name.to_string(), t.clone())).collect();
    save_tensors(path, &items)
}

pub fn load_param_set<S: Scalar>(path: &Path, params: &mut ParamSet<S>) -> Result<()> {
    let items = load_tensors::<S>(path)?;
    let map: std::collections::HashMap<String, Tensor<S>> = items.into_iter().collect();
    params.load_from(|name| map.get(name).cloned())
}

/// Layout of one checkpoint directory `step_<n>/`.
pub struct CheckpointDir {
    pub path: PathBuf,
    pub step: u64,
}

impl CheckpointDir {
    pub fn create(root: &Path, step: u64) -> Result<Self> {
        let path = root.join(format!("step_{step}"));
        std::fs::create_dir_all(&path)?;
        Ok(CheckpointDir { path, step })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Checkpoints under `root`, ordered by step.
    pub fn list(root: &Path) -> Result<Vec<CheckpointDir>> {
        let mut out = Vec::new();
        if !root.is_dir() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(step_str) = name.strip_prefix("step_") {
                if let Ok(step) = step_str.parse::<u64>() {
                    out.push(CheckpointDir { path: entry.path(), step });
                }
            }
        }
        out.sort_by_key(|c| c.step);
        Ok(out)
    }
}

/// Tiny key=value state file next to the tensors (step counters etc.).
pub fn write_state(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::path(path, format!("cannot read state: {e}")))?;
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn tensors_round_trip_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.svt");
        let mut r = crate::rng::stream(3, "ckpt");
        let items: Vec<(String, Tensor<f32>)> = vec![
            ("a.w".to_string(), Tensor::from_vec(vec![3, 4], (0..12).map(|_| r.gen_range(-1.0..1.0)).collect())),
            ("a.b".to_string(), Tensor::from_vec(vec![4], vec![0.0, -1.5, 3.25, f32::MIN_POSITIVE])),
        ];
        save_tensors(&path, &items).unwrap();
        let loaded = load_tensors::<f32>(&path).unwrap();
        assert_eq!(loaded.len(), items.len());
        for ((n0, t0), (n1, t1)) in items.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // width mismatch is rejected
        assert!(load_tensors::<f64>(&path).is_err());
    }

    #[test]
    fn param_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.svt");
        let mut r = crate::rng::stream(5, "ckpt2");
        let mut ps: ParamSet<f64> = ParamSet::new();
        let lin = crate::numerics::Linear::new(&mut ps, "lin", 4, 3, &mut r);
        save_param_set(&path, &ps).unwrap();

        let mut ps2: ParamSet<f64> = ParamSet::new();
        let _lin2 = crate::numerics::Linear::new(&mut ps2, "lin", 4, 3, &mut r);
        load_param_set(&path, &mut ps2).unwrap();
        assert_eq!(ps.get(lin.w).data(), ps2.get(lin.w).data());

        // shape mismatch is rejected
        let mut ps3: ParamSet<f64> = ParamSet::new();
        let _ = crate::numerics::Linear::new(&mut ps3, "lin", 5, 3, &mut r);
        assert!(load_param_set(&path, &mut ps3).is_err());
    }

    #[test]
    fn checkpoint_dirs_list_in_step_order() {
        let dir = tempfile::tempdir().unwrap();
        for step in [100u64, 5, 50] {
            CheckpointDir::create(dir.path(), step).unwrap();
        }
        let found = CheckpointDir::list(dir.path()).unwrap();
        let steps: Vec<u64> = found.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![5, 50, 100]);
    }

    #[test]
    fn state_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.kv");
        write_state(&path, &[("step", "42".to_string()), ("phase", "adversarial".to_string())])
            .unwrap();
        let map = read_state(&path).unwrap();
        assert_eq!(map["step"], "42");
        assert_eq!(map["phase"], "adversarial");
    }
}
