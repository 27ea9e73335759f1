use std::collections::HashMap;

use rand::Rng;

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names: layer construction is
    /// static, so a duplicate is a programming error.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn zeros_like(&self) -> ParamStore {
        let mut out = self.clone();
        for v in &mut out.values {
            v.data_mut().fill(0.0);
        }
        out
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub values: Vec<Matrix>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { values: store.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            a.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(Matrix::max_abs).fold(0.0, f64::max)
    }

    /// Sum in the given order; `None` when `parts` is empty.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a ParamGrads>) -> Option<ParamGrads> {
        let mut it = parts.into_iter();
        let mut acc = it.next()?.clone();
        for g in it {
            acc.add_assign(g);
        }
        Some(acc)
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Parameter registration helper that prefixes names with a scope.
pub struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scoped<T>(&mut self, scope: &str, f: impl FnOnce(&mut Builder<'_, R>) -> T) -> T {
        let prefix = if self.prefix.is_empty() { scope.to_string() } else { format!("{}.{scope}", self.prefix) };
        let mut inner = Builder { store: &mut *self.store, rng: &mut *self.rng, prefix };
        f(&mut inner)
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let m = init_uniform(rows, cols, fan_in, self.rng);
        let full = self.full(name);
        self.store.add(full, m)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        let full = self.full(name);
        self.store.add(full, Matrix::filled(rows, cols, v))
    }
}
