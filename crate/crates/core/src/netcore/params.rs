//! Named parameter tensors, seeded initialization and the checkpoint format.
//!
//! A checkpoint is two files: `<stem>.bin`, the little-endian `f64` payload of
//! every tensor concatenated in store order, and `<stem>.manifest`, one line
//! per tensor: `name rows cols byte_offset`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a, used to derive a per-tensor seed from its name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    /// Register a tensor. Panics on duplicate names.
    pub fn insert(&mut self, name: &str, value: Matrix<T>) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, drawn from a generator
    /// keyed on `(seed, name)` so each tensor is independent of insertion order.
    pub fn insert_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, seed: u64) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
        let data = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
        self.insert(name, Matrix::from_vec(fan_in, fan_out, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &Matrix<T> {
        &self.values[self.id(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix<T> {
        let id = self.id(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        &mut self.values[id]
    }

    pub fn by_id(&self, id: usize) -> &Matrix<T> {
        &self.values[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Matrix<T> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Zero-filled tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, v) in self.iter() {
            out.insert(n, Matrix::zeros(v.rows(), v.cols()));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, v) in self.iter() {
            out.insert(n, v.cast());
        }
        out
    }

    /// Overwrite values from another store with identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self
                .id(name)
                .ok_or_else(|| Error::CheckpointShapeMismatch(format!("unexpected tensor `{name}`")))?;
            if self.values[id].shape() != value.shape() {
                return Err(Error::CheckpointShapeMismatch(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    self.values[id].shape()
                )));
            }
            self.values[id] = value.clone();
        }
        if other.len() != self.len() {
            let missing: Vec<_> = self.names.iter().filter(|n| other.id(n).is_none()).cloned().collect();
            return Err(Error::CheckpointShapeMismatch(format!("missing tensors: {}", missing.join(", "))));
        }
        Ok(())
    }

    fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("bin"), stem.with_extension("manifest"))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, manifest) = Self::paths(stem);
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        let mut text = String::new();
        for (name, value) in self.iter() {
            writeln!(text, "{name} {} {} {}", value.rows(), value.cols(), bytes.len()).expect("string write");
            for v in value.data() {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        fs::write(bin, bytes)?;
        fs::write(manifest, text)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin, manifest) = Self::paths(stem);
        let bytes = fs::read(bin)?;
        let text = fs::read_to_string(manifest)?;
        let mut out = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = || Error::Format(format!("manifest line {}: `{line}`", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, rows, cols, offset] = fields[..] else { return Err(bad()) };
            let rows: usize = rows.parse().map_err(|_| bad())?;
            let cols: usize = cols.parse().map_err(|_| bad())?;
            let offset: usize = offset.parse().map_err(|_| bad())?;
            let end = offset + rows * cols * 8;
            let chunk = bytes.get(offset..end).ok_or_else(bad)?;
            let data = chunk
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            out.insert(name, Matrix::from_vec(rows, cols, data)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_init_is_seeded_per_name_and_bounded() {
        let mut a = ParamStore::<f64>::new();
        a.insert_glorot("x", 4, 6, 7);
        a.insert_glorot("y", 4, 6, 7);
        let mut b = ParamStore::<f64>::new();
        b.insert_glorot("y", 4, 6, 7);
        assert_eq!(a.get("y"), b.get("y"));
        assert_ne!(a.get("x"), a.get("y"));
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.get("x").data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn checkpoint_round_trip_and_manifest_layout() {
        let dir = std::env::temp_dir().join(format!("movid-params-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("ckpt");
        let mut p = ParamStore::<f64>::new();
        p.insert_glorot("enc.w", 3, 2, 1);
        p.insert("enc.b", Matrix::from_vec(1, 2, vec![0.5, -1.25]).unwrap());
        p.save(&stem).unwrap();
        let manifest = std::fs::read_to_string(stem.with_extension("manifest")).unwrap();
        assert_eq!(manifest, "enc.w 3 2 0\nenc.b 1 2 48\n");
        assert_eq!(std::fs::read(stem.with_extension("bin")).unwrap().len(), 64);
        let q = ParamStore::<f64>::load(&stem).unwrap();
        assert_eq!(p, q);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn assign_rejects_shape_changes() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Matrix::zeros(2, 2));
        let mut q = ParamStore::<f64>::new();
        q.insert("w", Matrix::zeros(3, 2));
        assert!(matches!(p.assign_from(&q), Err(Error::CheckpointShapeMismatch(_))));
    }
}
