use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Mat;

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a tensor.
    pub fn insert(&mut self, name: &str, value: Mat, trainable: bool) -> usize {
        if let Some(&id) = self.index.get(name) {
            self.values[id] = value;
            self.trainable[id] = trainable;
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.trainable.push(trainable);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
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

    pub fn value(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.id(name).map(|i| &mut self.values[i])
    }

    pub fn is_trainable(&self, id: usize) -> bool {
        self.trainable[id]
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(id) = self.id(name) {
            self.trainable[id] = trainable;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.iter()
            .zip(&self.trainable)
            .map(|((name, m), &trainable)| Tensor {
                name: name.to_string(),
                shape: [m.nrows(), m.ncols()],
                trainable,
                data: m.iter().copied().collect(),
            })
            .collect()
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, String> {
        let mut ps = ParamSet::new();
        for t in tensors {
            let [r, c] = t.shape;
            let m = Array2::from_shape_vec((r, c), t.data)
                .map_err(|e| format!("tensor {:?}: {e}", t.name))?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(format!("tensor {:?} has non-finite entries", t.name));
            }
            ps.insert(&t.name, m, t.trainable);
        }
        Ok(ps)
    }
}

/// Serialized form of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Gradient buffers aligned with a [`ParamSet`]. Frozen tensors stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            values: params.values.iter().map(|m| Mat::zeros(m.dim())).collect(),
        }
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mat> {
        self.values.iter()
    }

    pub fn add(&mut self, id: usize, g: &Mat) {
        self.values[id] += g;
    }

    pub fn scatter_rows(&mut self, id: usize, rows: &[usize], g: &Mat) {
        let dst = &mut self.values[id];
        for (src_row, &r) in g.axis_iter(Axis(0)).zip(rows) {
            let mut d = dst.row_mut(r);
            d += &src_row;
        }
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for m in &mut self.values {
            m.mapv_inplace(|v| v * alpha);
        }
    }

    /// Rewrites `-0.0` as `+0.0` so gradients that are numerically equal are
    /// also bitwise equal.
    pub fn canonicalize_zeros(&mut self) {
        for m in &mut self.values {
            m.mapv_inplace(|v| v + 0.0);
        }
    }
}

/// `uniform(-limit, limit)` matrix.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

/// Fan-based uniform initialization for dense and convolution weights.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn insert_replaces_in_place() {
        let mut ps = ParamSet::new();
        let a = ps.insert("a", array![[1.0]], true);
        ps.insert("b", array![[2.0, 3.0]], false);
        assert_eq!(ps.insert("a", array![[4.0]], true), a);
        assert_eq!(ps.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ps.num_scalars(), 3);
    }

    #[test]
    fn tensor_round_trip() {
        let mut ps = ParamSet::new();
        ps.insert("w", array![[0.1, -0.2], [1e-300, 3.5]], true);
        ps.insert("e", array![[7.0]], false);
        let back = ParamSet::from_tensors(ps.to_tensors()).unwrap();
        assert_eq!(back, ps);
        let mut bad = ps.to_tensors();
        bad[0].shape = [3, 3];
        assert!(ParamSet::from_tensors(bad).is_err());
    }

    #[test]
    fn negative_zero_is_canonicalized() {
        let mut ps = ParamSet::new();
        ps.insert("w", array![[0.0]], true);
        let mut g = Grads::zeros_like(&ps);
        g.values[0][[0, 0]] = -0.0;
        g.canonicalize_zeros();
        assert_eq!(g.get(0)[[0, 0]].to_bits(), 0.0f64.to_bits());
    }
}
