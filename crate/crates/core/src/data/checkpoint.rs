//! Self-describing parameter container.
//!
//! Layout: a UTF-8 header of `key: value` lines, terminated by a line reading
//! `end`, followed by a blob of little-endian `f32` values for every declared
//! tensor in declaration order.
//!
//! ```text
//! embdistill-checkpoint 1
//! kind: cnn
//! vocab_hash: 3f1a…
//! tensor: conv.2.weight 32 800
//! floats: 25600
//! sha256: 9c0e…
//! end
//! <blob>
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::Mat;

const MAGIC: &str = "embdistill-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    meta: Vec<(String, String)>,
    tensors: Vec<(String, Mat)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint { kind: kind.into(), meta: Vec::new(), tensors: Vec::new() }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!key.contains(':') && !value.contains('\n'));
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_entries(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| Error::Version(format!("{} checkpoint lacks {key:?}", self.kind)))
    }

    pub fn parse_meta<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse().map_err(|_| Error::Version(format!("{} checkpoint has unreadable {key:?}: {raw:?}", self.kind)))
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.push((name.into(), value));
    }

    pub fn tensors(&self) -> &[(String, Mat)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Version(format!("{} checkpoint lacks tensor {name:?}", self.kind)))
    }

    /// Fetches a tensor and checks its shape against what the caller expects.
    pub fn tensor_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<Mat> {
        let t = self.tensor(name)?;
        if t.shape() != (rows, cols) {
            return Err(Error::Version(format!(
                "tensor {name:?} is {}x{}, expected {rows}x{cols}",
                t.rows(),
                t.cols()
            )));
        }
        Ok(t.clone())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Version(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    /// Fails with a version error unless the stored vocabulary hash matches.
    pub fn expect_vocab(&self, vocab_hash: &str) -> Result<()> {
        let stored = self.require_meta("vocab_hash")?;
        if stored != vocab_hash {
            return Err(Error::Version(format!(
                "checkpoint built for vocabulary {stored}, current vocabulary is {vocab_hash}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        for (_, t) in &self.tensors {
            for &v in t.as_slice() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let floats = blob.len() / 4;
        let mut header = format!("{MAGIC} {FORMAT_VERSION}\nkind: {}\n", self.kind);
        for (k, v) in &self.meta {
            header.push_str(&format!("{k}: {v}\n"));
        }
        for (name, t) in &self.tensors {
            header.push_str(&format!("tensor: {name} {} {}\n", t.rows(), t.cols()));
        }
        header.push_str(&format!("floats: {floats}\nsha256: {}\nend\n", hex_digest(&blob)));
        let mut out = header.into_bytes();
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::Integrity(m.to_string());
        let end = find_header_end(bytes).ok_or_else(|| integrity("header terminator not found"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| integrity("header is not UTF-8"))?;
        let blob = &bytes[end + 5..];

        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let version = first.strip_prefix(MAGIC).map(str::trim).ok_or_else(|| integrity("not a checkpoint file"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Version(format!("unsupported checkpoint format {version}")));
        }

        let mut kind = None;
        let mut meta = Vec::new();
        let mut shapes = Vec::new();
        let mut floats = None;
        let mut digest = None;
        for line in lines {
            let (key, value) = line.split_once(": ").ok_or_else(|| integrity("malformed header line"))?;
            match key {
                "kind" => kind = Some(value.to_string()),
                "tensor" => {
                    let parts: Vec<&str> = value.split(' ').collect();
                    let [name, r, c] = parts[..] else {
                        return Err(integrity("malformed tensor line"));
                    };
                    let r: usize = r.parse().map_err(|_| integrity("bad tensor rows"))?;
                    let c: usize = c.parse().map_err(|_| integrity("bad tensor cols"))?;
                    shapes.push((name.to_string(), r, c));
                }
                "floats" => floats = Some(value.parse::<usize>().map_err(|_| integrity("bad float count"))?),
                "sha256" => digest = Some(value.to_string()),
                _ => meta.push((key.to_string(), value.to_string())),
            }
        }
        let kind = kind.ok_or_else(|| integrity("missing kind"))?;
        let floats = floats.ok_or_else(|| integrity("missing float count"))?;
        let digest = digest.ok_or_else(|| integrity("missing checksum"))?;

        let declared: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if declared != floats {
            return Err(integrity("tensor shapes disagree with float count"));
        }
        if blob.len() != floats * 4 {
            return Err(Error::Integrity(format!("blob holds {} bytes, header declares {}", blob.len(), floats * 4)));
        }
        if hex_digest(blob) != digest {
            return Err(integrity("checksum mismatch"));
        }

        let mut values = blob.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, r, c) in shapes {
            let data: Vec<f64> = values.by_ref().take(r * c).collect();
            tensors.push((name, Mat::from_vec(r, c, data)?));
        }
        Ok(Checkpoint { kind, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path.as_ref())?)
    }
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    // The header always ends with "\nend\n"; return the index of that newline.
    bytes.windows(5).position(|w| w == b"\nend\n")
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One cached teacher output.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub index: usize,
    pub logits: Vec<f64>,
}

pub fn logits_to_checkpoint(records: &[LogitRecord], vocab_hash: &str) -> Result<Checkpoint> {
    let classes = records.first().map_or(0, |r| r.logits.len());
    if let Some(r) = records.iter().find(|r| r.logits.len() != classes) {
        return Err(Error::Data(format!("record {} has {} logits, expected {classes}", r.index, r.logits.len())));
    }
    let mut ckpt = Checkpoint::new("logits");
    ckpt.set_meta("count", records.len());
    ckpt.set_meta("classes", classes);
    ckpt.set_meta("vocab_hash", vocab_hash);
    let index = Mat::from_vec(records.len(), 1, records.iter().map(|r| r.index as f64).collect())?;
    let logits =
        Mat::from_vec(records.len(), classes, records.iter().flat_map(|r| r.logits.iter().copied()).collect())?;
    ckpt.push_tensor("index", index);
    ckpt.push_tensor("logits", logits);
    Ok(ckpt)
}

pub fn logits_from_checkpoint(ckpt: &Checkpoint) -> Result<Vec<LogitRecord>> {
    ckpt.expect_kind("logits")?;
    let count: usize = ckpt.parse_meta("count")?;
    let classes: usize = ckpt.parse_meta("classes")?;
    let index = ckpt.tensor_shaped("index", count, 1)?;
    let logits = ckpt.tensor_shaped("logits", count, classes)?;
    (0..count)
        .map(|i| {
            let raw = index.get(i, 0);
            if raw < 0.0 || raw.fract() != 0.0 {
                return Err(Error::Integrity(format!("record {i} has a non-integral index {raw}")));
            }
            Ok(LogitRecord { index: raw as usize, logits: logits.row(i).to_vec() })
        })
        .collect()
}

pub fn cache_logits(records: &[LogitRecord], vocab_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    logits_to_checkpoint(records, vocab_hash)?.save(path)
}

pub fn load_logits(path: impl AsRef<Path>) -> Result<Vec<LogitRecord>> {
    logits_from_checkpoint(&Checkpoint::load(path)?)
}

/// Aligns cached records with a dataset, one target per instance in order.
pub fn logits_for_dataset(records: &[LogitRecord], dataset: &crate::data::Dataset) -> Result<Vec<Vec<f64>>> {
    if records.len() != dataset.len() {
        return Err(Error::Data(format!("{} cached logits for {} instances", records.len(), dataset.len())));
    }
    let mut out = vec![None; dataset.len()];
    for r in records {
        if r.logits.len() != dataset.num_classes {
            return Err(Error::Data(format!(
                "record {} has {} classes, dataset has {}",
                r.index,
                r.logits.len(),
                dataset.num_classes
            )));
        }
        let slot =
            out.get_mut(r.index).ok_or_else(|| Error::Data(format!("record index {} outside the dataset", r.index)))?;
        if slot.replace(r.logits.clone()).is_some() {
            return Err(Error::Data(format!("duplicate record for instance {}", r.index)));
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every slot filled: counts match and no duplicates")).collect())
}
