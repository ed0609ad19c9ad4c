//! `SPCKPT 1` parameter files.
//!
//! ```text
//! SPCKPT 1
//! params <n>
//! <name> <offset> <d0,d1,...>      (n lines; offset counts f32 elements)
//! meta <key> <value>               (zero or more)
//! end
//! <payload: little-endian f32>
//! ```

use std::path::Path;

use super::{AutodiffError, ParamStore, Real, Tensor};
use crate::kv::KvMap;

const MAGIC: &str = "SPCKPT 1";

/// Parameters and metadata as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub meta: KvMap,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_store<T: Real>(store: &ParamStore<T>, meta: KvMap) -> Self {
        let params = store
            .iter()
            .map(|p| (p.name.clone(), p.value.shape.clone(), p.value.data.iter().map(|x| x.as_f64() as f32).collect()))
            .collect();
        Self { params, meta }
    }

    pub fn encode(&self) -> Result<Vec<u8>, AutodiffError> {
        let mut head = format!("{MAGIC}\nparams {}\n", self.params.len());
        let mut offset = 0usize;
        for (name, shape, data) in &self.params {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(bad(format!("parameter name `{name}` is empty or contains whitespace")));
            }
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("{name} {offset} {}\n", if dims.is_empty() { "-".to_string() } else { dims.join(",") }));
            offset += data.len();
        }
        for (k, v) in self.meta.iter() {
            if v.contains('\n') {
                return Err(bad(format!("metadata `{k}` contains a newline")));
            }
            head.push_str(&format!("meta {k} {v}\n"));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.reserve(offset * 4);
        for (_, _, data) in &self.params {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str, AutodiffError> {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8"))?;
            pos += end + 1;
            Ok(line)
        };
        let magic = next_line()?;
        if magic != MAGIC {
            return Err(bad(format!("bad magic `{magic}`")));
        }
        let count_line = next_line()?;
        let n: usize = count_line
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("expected `params <n>`, got `{count_line}`")))?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let line = next_line()?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 3 {
                return Err(bad(format!("malformed parameter line `{line}`")));
            }
            let offset: usize = f[1].parse().map_err(|_| bad(format!("bad offset in `{line}`")))?;
            let shape: Vec<usize> = if f[2] == "-" {
                vec![]
            } else {
                f[2].split(',').map(|d| d.parse()).collect::<Result<_, _>>().map_err(|_| bad(format!("bad shape in `{line}`")))?
            };
            entries.push((f[0].to_string(), offset, shape));
        }
        let mut meta = KvMap::default();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let rest = line.strip_prefix("meta ").ok_or_else(|| bad(format!("unexpected header line `{line}`")))?;
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.set(k, v);
        }
        let payload = &bytes[pos..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let floats: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut params = Vec::with_capacity(n);
        let mut expected = 0usize;
        for (name, offset, shape) in entries {
            let len: usize = shape.iter().product();
            if offset != expected || offset + len > floats.len() {
                return Err(bad(format!("parameter `{name}` offset {offset} does not fit the payload")));
            }
            params.push((name, shape, floats[offset..offset + len].to_vec()));
            expected += len;
        }
        if expected != floats.len() {
            return Err(bad(format!("payload holds {} values, manifest describes {expected}", floats.len())));
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.encode()?).map_err(|e| AutodiffError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let bytes = std::fs::read(path).map_err(|e| AutodiffError::Io { path: path.display().to_string(), source: e })?;
        Self::decode(&bytes)
    }

    /// Copies stored values into `store`, matching by name and shape. Every
    /// parameter of `store` must be present.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), AutodiffError> {
        let ids: Vec<_> = store.iter().map(|p| p.name.clone()).collect();
        for name in ids {
            let (_, shape, data) =
                self.params.iter().find(|(n, _, _)| *n == name).ok_or_else(|| bad(format!("parameter `{name}` missing from checkpoint")))?;
            let id = store.id(&name).expect("name came from the store");
            let p = store.get_mut(id);
            if p.value.shape != *shape {
                return Err(bad(format!("parameter `{name}` has shape {shape:?}, model expects {:?}", p.value.shape)));
            }
            p.value = Tensor { shape: shape.clone(), data: data.iter().map(|&x| T::of(x as f64)).collect() };
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_meta() {
        let mut store = ParamStore::<f32>::new();
        store.add("field.w", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, -0.0]).unwrap()).unwrap();
        store.add("field.b", Tensor::new(&[3], vec![0.5, 0.25, 0.125]).unwrap()).unwrap();
        let mut meta = KvMap::default();
        meta.set("decoder", "two_stage");
        meta.set("classes", "3");
        let ck = Checkpoint::from_store(&store, meta);
        let bytes = ck.encode().unwrap();
        assert!(bytes.starts_with(b"SPCKPT 1\nparams 2\nfield.w 0 2,3\nfield.b 6 3\nmeta decoder two_stage\nmeta classes 3\nend\n"));
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        let mut other = ParamStore::<f32>::new();
        other.add_zeros("field.b", &[3]).unwrap();
        other.add_zeros("field.w", &[2, 3]).unwrap();
        back.restore_into(&mut other).unwrap();
        assert_eq!(other.get(other.id("field.w").unwrap()).value.data, store.get(store.id("field.w").unwrap()).value.data);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add_zeros("a", &[4]).unwrap();
        let bytes = Checkpoint::from_store(&store, KvMap::default()).encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 4]).is_err());
        let mut v2 = bytes.clone();
        v2[7] = b'2';
        assert!(Checkpoint::decode(&v2).is_err());
        let ck = Checkpoint::decode(&bytes).unwrap();
        let mut wrong = ParamStore::<f32>::new();
        wrong.add_zeros("a", &[5]).unwrap();
        assert!(ck.restore_into(&mut wrong).is_err());
    }
}
