use std::collections::BTreeMap;

use crate::error::{ManError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    tensor: Tensor,
    frozen_rows: Vec<usize>,
}

/// Named collection of trainable tensors.
///
/// Rows listed as frozen never receive gradient and are excluded from the
/// weight penalty (the padding row of the word table is the one user).
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            tensor: tensor.trainable(),
            frozen_rows: Vec::new(),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let e = &mut self.entries[id.0];
        if !e.frozen_rows.contains(&row) {
            e.frozen_rows.push(row);
            e.frozen_rows.sort_unstable();
        }
    }

    pub fn frozen_rows(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].frozen_rows
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Adds `grads` into every tensor's gradient buffer. Frozen rows stay zero.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (id, g) in &grads.entries {
            let e = &mut self.entries[id.0];
            let cols = e.tensor.cols();
            let buf = e.tensor.grad_mut();
            match g {
                ParamGrad::Dense(d) => {
                    for (b, x) in buf.iter_mut().zip(d) {
                        *b += x;
                    }
                }
                ParamGrad::Rows(rows) => {
                    for (&r, v) in rows {
                        for (b, x) in buf[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                            *b += x;
                        }
                    }
                }
            }
            for &r in &e.frozen_rows {
                buf[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Overwrites values of `self` with those in `other`; shapes must agree.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(ManError::shape("parameter sets differ in length"));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.tensor.shape() != b.tensor.shape() {
                return Err(ManError::shape(format!(
                    "parameter {} has shape {:?}, source has {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.tensor.shape()
                )));
            }
            a.tensor.values_mut().copy_from_slice(b.tensor.values());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    /// Row-sparse gradient for lookup tables, keyed by row index.
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    entries: BTreeMap<ParamId, ParamGrad>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        match self.entries.get_mut(&id) {
            None => {
                self.entries.insert(id, ParamGrad::Dense(g.to_vec()));
            }
            Some(ParamGrad::Dense(d)) => add_into(d, g),
            Some(ParamGrad::Rows(_)) => {
                // Mixed dense and row-sparse use of one table: densify.
                let rows = match self.entries.remove(&id) {
                    Some(ParamGrad::Rows(r)) => r,
                    _ => unreachable!(),
                };
                let mut d = g.to_vec();
                let cols = rows.values().next().map_or(0, Vec::len);
                for (r, v) in rows {
                    add_into(&mut d[r * cols..(r + 1) * cols], &v);
                }
                self.entries.insert(id, ParamGrad::Dense(d));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, cols: usize, g: &[f64]) {
        match self
            .entries
            .entry(id)
            .or_insert_with(|| ParamGrad::Rows(BTreeMap::new()))
        {
            ParamGrad::Rows(rows) => {
                add_into(rows.entry(row).or_insert_with(|| vec![0.0; cols]), g);
            }
            ParamGrad::Dense(d) => add_into(&mut d[row * cols..(row + 1) * cols], g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.entries.get(&id)
    }

    /// Dense view of one parameter's gradient (zeros when untouched).
    pub fn dense(&self, id: ParamId, shape_len: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; shape_len];
        match self.entries.get(&id) {
            None => {}
            Some(ParamGrad::Dense(d)) => out.copy_from_slice(d),
            Some(ParamGrad::Rows(rows)) => {
                for (&r, v) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(v);
                }
            }
        }
        out
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (&id, g) in &other.entries {
            match g {
                ParamGrad::Dense(d) => self.add_dense(id, d),
                ParamGrad::Rows(rows) => {
                    for (&r, v) in rows {
                        self.add_row(id, r, v.len(), v);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.entries.values_mut() {
            match g {
                ParamGrad::Dense(d) => d.iter_mut().for_each(|x| *x *= c),
                ParamGrad::Rows(rows) => rows
                    .values_mut()
                    .for_each(|v| v.iter_mut().for_each(|x| *x *= c)),
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamGrad)> {
        self.entries.iter().map(|(&id, g)| (id, g))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
