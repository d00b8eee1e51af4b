//! Trainable parameters, expander-masked parameters and their storage.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Gradients, Tape};
use crate::autodiff::AutodiffError;
use crate::expander::ExpanderMask;
use crate::scalar::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Where a parameter lives in the model; drives the parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Optional initial feature embedding.
    Embedding,
    /// Linear maps inside Update steps.
    Update,
    /// Learnable aggregation scalars (GIN's epsilon).
    Aggregation,
    /// Prediction head.
    Head,
    /// Batch-norm affines and PReLU slopes.
    NormAct,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    name: String,
    role: ParamRole,
    value: Array2<T>,
    grad: Array2<T>,
    mask: Option<(ExpanderMask, Arc<Array2<T>>)>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> ParamRole {
        self.role
    }

    pub fn value(&self) -> &Array2<T> {
        &self.value
    }

    pub fn grad(&self) -> &Array2<T> {
        &self.grad
    }

    pub fn expander_mask(&self) -> Option<&ExpanderMask> {
        self.mask.as_ref().map(|(m, _)| m)
    }

    pub fn dense_mask(&self) -> Option<&Arc<Array2<T>>> {
        self.mask.as_ref().map(|(_, d)| d)
    }

    /// `M ⊙ W`, or `W` for unmasked parameters.
    pub fn effective_value(&self) -> Array2<T> {
        match &self.mask {
            Some((_, m)) => &self.value * &**m,
            None => self.value.clone(),
        }
    }

    /// Trainable entries: in-mask entries only for masked parameters.
    pub fn trainable_count(&self) -> usize {
        match &self.mask {
            Some((m, _)) => m.ones(),
            None => self.value.len(),
        }
    }

    /// Positions of trainable entries in row-major order.
    pub fn trainable_positions(&self) -> Vec<(usize, usize)> {
        let (r, c) = self.value.dim();
        (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .filter(|&(i, j)| self.mask.as_ref().is_none_or(|(_, m)| m[[i, j]] != T::zero()))
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn grad_mut(&mut self) -> &mut Array2<T> {
        &mut self.grad
    }

    fn project(&mut self) {
        if let Some((_, m)) = &self.mask {
            self.value *= &**m;
            self.grad *= &**m;
        }
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: f64, fan_out: f64) -> f64 {
    (6.0 / (fan_in + fan_out)).sqrt()
}

/// Uniform `[-limit, limit]` matrix.
pub fn uniform_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-limit..=limit)))
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Array2<T>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name: name.into(), role, value, grad, mask: None });
        ParamId(self.params.len() - 1)
    }

    /// Adds a masked parameter; entries outside the mask are zeroed.
    pub fn add_masked(
        &mut self,
        name: impl Into<String>,
        role: ParamRole,
        value: Array2<T>,
        mask: ExpanderMask,
    ) -> ParamId {
        assert_eq!(value.dim(), (mask.rows(), mask.cols()), "mask shape mismatch");
        let dense = Arc::new(mask.to_dense::<T>());
        let grad = Array2::zeros(value.raw_dim());
        let mut p = Param { name: name.into(), role, value, grad, mask: Some((mask, dense)) };
        p.project();
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Overwrites a value; masked parameters are re-projected.
    pub fn set_value(&mut self, id: ParamId, value: Array2<T>) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.dim(), value.dim(), "parameter shape mismatch");
        p.value = value;
        p.project();
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].value
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds the gradients of every parameter leaf on `tape` into the store.
    /// Gradients of masked parameters are multiplied by their masks.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        for (var, id) in tape.param_leaves() {
            if let Some(g) = grads.wrt(var) {
                let p = &mut self.params[id.0];
                p.grad += g;
                p.project();
            }
        }
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(Param::trainable_count).sum()
    }

    pub fn count_role(&self, role: ParamRole) -> usize {
        self.params.iter().filter(|p| p.role == role).map(Param::trainable_count).sum()
    }

    /// Snapshot of all values (for best-checkpoint restore).
    pub fn snapshot(&self) -> Vec<Array2<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<T>]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.assign(v);
        }
    }

    /// Writes `<name>.tsv` per parameter and `<name>.mask` for masked ones.
    /// Returns the mask file names.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<String>, AutodiffError> {
        fs::create_dir_all(dir)?;
        let mut masks = Vec::new();
        for p in &self.params {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{}.tsv", p.name)))?);
            for row in p.value.rows() {
                let line: Vec<String> = row.iter().map(|v| v.to_f64_lossy().to_string()).collect();
                writeln!(w, "{}", line.join("\t"))?;
            }
            w.flush()?;
            if let Some((m, _)) = &p.mask {
                let file = format!("{}.mask", p.name);
                m.write_text(BufWriter::new(fs::File::create(dir.join(&file))?))?;
                masks.push(file);
            }
        }
        Ok(masks)
    }

    /// Reads values written by [`ParamStore::save_dir`] into existing parameters.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), AutodiffError> {
        for i in 0..self.params.len() {
            let path = dir.join(format!("{}.tsv", self.params[i].name));
            let reader = BufReader::new(fs::File::open(&path)?);
            let (rows, cols) = self.params[i].value.dim();
            let mut data = Vec::with_capacity(rows * cols);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                let before = data.len();
                for tok in line.split('\t') {
                    let v: f64 = tok.trim().parse().map_err(|_| AutodiffError::ParamFile {
                        file: path.display().to_string(),
                        line: lineno + 1,
                    })?;
                    data.push(T::of(v));
                }
                if data.len() - before != cols {
                    return Err(AutodiffError::ParamFile { file: path.display().to_string(), line: lineno + 1 });
                }
            }
            let value = Array2::from_shape_vec((rows, cols), data).map_err(|_| AutodiffError::ParamFile {
                file: path.display().to_string(),
                line: rows + 1,
            })?;
            self.set_value(ParamId(i), value);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn masked_parameter_is_projected() {
        let mut store = ParamStore::<f64>::new();
        let mask = ExpanderMask::sample(2, 3, 1.0 / 3.0, 0).unwrap();
        let id = store.add_masked("w", ParamRole::Update, Array2::ones((2, 3)), mask.clone());
        assert_eq!(store.get(id).value(), &mask.to_dense::<f64>());
        assert_eq!(store.count(), 2);
        store.set_value(id, array![[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]]);
        assert_eq!(store.get(id).value(), &(mask.to_dense::<f64>() * 5.0));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", ParamRole::Head, array![[0.1, -2.5e-7], [3.0, 1.0 / 3.0]]);
        let mask = ExpanderMask::sample(2, 2, 0.5, 1).unwrap();
        store.add_masked("b", ParamRole::Update, array![[1.0, 2.0], [3.0, 4.0]], mask);
        let files = store.save_dir(dir.path()).unwrap();
        assert_eq!(files, vec!["b.mask".to_string()]);
        let mut other = store.clone();
        other.set_value(a, Array2::zeros((2, 2)));
        other.load_dir(dir.path()).unwrap();
        assert_eq!(other.get(a).value(), store.get(a).value());
    }
}
