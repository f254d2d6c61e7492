//! Nodal P1 coefficient vectors.

use std::ops::{Index, IndexMut};

/// Scalar P1 field: one value per mesh node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![0.0; n])
    }

    pub fn from_fn(nodes: &[[f64; 2]], f: impl Fn([f64; 2]) -> f64) -> Self {
        ScalarField(nodes.iter().map(|&p| f(p)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScalarField(self.0.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        debug_assert_eq!(self.len(), other.len());
        ScalarField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Vector-valued P1 field stored node by node; as a flat vector the
/// degrees of freedom are interleaved `[x0, y0, x1, y1, ...]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorField(pub Vec<[f64; 2]>);

impl VectorField {
    pub fn zeros(n: usize) -> Self {
        VectorField(vec![[0.0; 2]; n])
    }

    pub fn from_fn(nodes: &[[f64; 2]], f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        VectorField(nodes.iter().map(|&p| f(p)).collect())
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert!(v.len().is_multiple_of(2));
        VectorField(v.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v[0], v[1]]).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v[0].hypot(v[1])))
    }

    pub fn scaled(&self, c: f64) -> Self {
        VectorField(self.0.iter().map(|v| [c * v[0], c * v[1]]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }
}

impl Index<usize> for VectorField {
    type Output = [f64; 2];
    fn index(&self, i: usize) -> &[f64; 2] {
        &self.0[i]
    }
}
