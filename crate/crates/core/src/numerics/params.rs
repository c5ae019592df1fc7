use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to one named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat store of every trainable tensor plus its gradient.
///
/// Values and gradients live in two buffers of identical length; each named
/// tensor occupies the same `offset..offset+len` range in both.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub(crate) values: Vec<f64>,
    pub(crate) grads: Vec<f64>,
    entries: Vec<ParamEntry>,
    seed: u64,
}

/// Stable 64-bit FNV-1a; used to derive a per-tensor init stream from its name.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            entries: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a tensor initialised uniformly in `±1/sqrt(fan_in)`.
    ///
    /// The random stream depends only on `(seed, name)`, so two models that
    /// share a tensor name and seed start from identical values regardless of
    /// which other tensors they contain.
    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.push(name, rows, cols, data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name, rows, cols, vec![0.0; rows * cols])
    }

    fn push(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let offset = self.values.len();
        self.values.extend_from_slice(&data);
        self.grads.resize(self.values.len(), 0.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[self.entries[id.0].range()]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.entries[id.0].range();
        &mut self.values[r]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[self.entries[id.0].range()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(0.0);
    }

    /// Sets every value (not gradient) to zero.
    pub fn zero_values(&mut self) {
        self.values.fill(0.0);
    }

    /// Replaces the value buffer, e.g. when loading a checkpoint.
    pub fn load_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                context: "ParamSet::load_values",
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }

    /// Coordinates (flat indices) owned by every tensor whose name starts with `prefix`.
    pub fn coords_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .flat_map(|e| e.range())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_mirror_value_shapes() {
        let mut ps = ParamSet::new(1);
        let a = ps.add_uniform("a", 3, 4, 3);
        let b = ps.add_zeros("b", 1, 4);
        assert_eq!(ps.value(a).len(), ps.grad(a).len());
        assert_eq!(ps.value(b).len(), 4);
        assert_eq!(ps.len(), 16);
        ps.grads_mut().iter_mut().for_each(|g| *g = 3.5);
        ps.zero_grad();
        assert!(ps.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn init_is_bounded_and_name_seeded() {
        let mut p1 = ParamSet::new(9);
        let mut p2 = ParamSet::new(9);
        p2.add_uniform("other", 5, 5, 5);
        let a1 = p1.add_uniform("w", 16, 8, 16);
        let a2 = p2.add_uniform("w", 16, 8, 16);
        assert_eq!(p1.value(a1), p2.value(a2));
        assert!(p1.value(a1).iter().all(|v| v.abs() <= 0.25));
        let mut p3 = ParamSet::new(10);
        let a3 = p3.add_uniform("w", 16, 8, 16);
        assert_ne!(p1.value(a1), p3.value(a3));
    }

    #[test]
    fn prefix_coordinates() {
        let mut ps = ParamSet::new(0);
        ps.add_zeros("x.a", 2, 2);
        ps.add_zeros("y.a", 1, 3);
        ps.add_zeros("x.b", 1, 1);
        assert_eq!(ps.coords_with_prefix("x."), vec![0, 1, 2, 3, 7]);
    }
}
