//! Versioned binary checkpoint container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "SEDN" | version u32 | dtype u8 (4 = f32, 8 = f64)
//! genotype_len u64 | genotype utf-8
//! meta_len u64     | meta utf-8 (key = value lines)
//! tensor_count u64
//! per tensor: name_len u16 | name | rank u8 | dims u32 x rank
//!             | byte_len u64 | raw element data
//! ```
//!
//! Loading a checkpoint written at a different precision is an explicit
//! error; there is no silent cast.

use std::collections::BTreeMap;
use std::path::Path;

use super::{atomic_write, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::{Elem, ELEM_BYTES};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Elem>,
}

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    /// Genotype text (see the search module's format).
    pub genotype: String,
    /// key = value metadata lines (epoch, seed, neuron and surrogate
    /// configuration, metric snapshot).
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn render_meta(meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("checkpoint meta line not key=value: '{line}'")));
        };
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"SEDN");
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(ELEM_BYTES);
    let geno = ckpt.genotype.as_bytes();
    out.extend_from_slice(&(geno.len() as u64).to_le_bytes());
    out.extend_from_slice(geno);
    let meta = render_meta(&ckpt.meta);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(ckpt.tensors.len() as u64).to_le_bytes());
    for t in &ckpt.tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape.len() as u8);
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        let bytes = t.data.len() * ELEM_BYTES as usize;
        out.extend_from_slice(&(bytes as u64).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.magic(b"SEDN")?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let dtype = r.u8("dtype")?;
    if dtype != ELEM_BYTES {
        return Err(Error::Parse {
            offset: 8,
            message: format!(
                "checkpoint precision is {}-bit but this build is {}-bit; no silent cast",
                dtype as u32 * 8,
                ELEM_BYTES as u32 * 8
            ),
        });
    }
    let geno_len = r.u64("genotype length")? as usize;
    let genotype = String::from_utf8(r.take(geno_len, "genotype")?.to_vec())
        .map_err(|e| Error::Parse { offset: r.offset(), message: format!("genotype utf8: {e}") })?;
    let meta_len = r.u64("meta length")? as usize;
    let meta_text = String::from_utf8(r.take(meta_len, "meta")?.to_vec())
        .map_err(|e| Error::Parse { offset: r.offset(), message: format!("meta utf8: {e}") })?;
    let meta = parse_meta(&meta_text)?;
    let count = r.u64("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|e| {
            Error::Parse { offset: r.offset(), message: format!("tensor name utf8: {e}") }
        })?;
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")? as usize);
        }
        let byte_len = r.u64("tensor byte length")? as usize;
        let elems = byte_len / ELEM_BYTES as usize;
        if elems != shape.iter().product::<usize>() || byte_len % ELEM_BYTES as usize != 0 {
            return Err(Error::Parse {
                offset: r.offset(),
                message: format!(
                    "tensor '{name}': {byte_len} bytes inconsistent with shape {shape:?}"
                ),
            });
        }
        let raw = r.take(byte_len, "tensor data")?;
        let mut data = Vec::with_capacity(elems);
        for chunk in raw.chunks_exact(ELEM_BYTES as usize) {
            data.push(Elem::from_le_bytes(chunk.try_into().unwrap()));
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(Checkpoint { genotype, meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("sedn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d.join(name)
    }

    fn sample() -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("epoch".into(), "3".into());
        meta.insert("seed".into(), "42".into());
        Checkpoint {
            genotype: "cell/0/0/0: conv3\npath: 4\nseed=1\nepoch=0\n".into(),
            meta,
            tensors: vec![
                NamedTensor {
                    name: "stem1.conv.weight".into(),
                    shape: vec![2, 1, 3, 3],
                    data: (0..18).map(|i| i as Elem * 0.25).collect(),
                },
                NamedTensor { name: "tau_a".into(), shape: vec![1], data: vec![0.3] },
            ],
        }
    }

    #[test]
    fn save_load_save_identical_bytes() {
        let p1 = tmpfile("a.sedn");
        let p2 = tmpfile("b.sedn");
        let ck = sample();
        save_checkpoint(&p1, &ck).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.genotype, ck.genotype);
        assert_eq!(loaded.meta, ck.meta);
        assert_eq!(loaded.tensors, ck.tensors);
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_tensor_table_fails_with_offset() {
        let p = tmpfile("corrupt.sedn");
        save_checkpoint(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes.truncate(n - 7); // cut into the last tensor's payload
        std::fs::write(&p, &bytes).unwrap();
        match load_checkpoint(&p) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_and_precision_rejected() {
        let p = tmpfile("ver.sedn");
        save_checkpoint(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99; // version
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = CHECKPOINT_VERSION as u8;
        bytes[8] = if ELEM_BYTES == 8 { 4 } else { 8 }; // cross-precision
        std::fs::write(&p, &bytes).unwrap();
        match load_checkpoint(&p) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("no silent cast")),
            other => panic!("expected precision error, got {other:?}"),
        }
    }
}
