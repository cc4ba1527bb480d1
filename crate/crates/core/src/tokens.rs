//! Entity token matrices: one row per entity, a fixed feature width.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTokens {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl EntityTokens {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        EntityTokens { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "token buffer size mismatch");
        EntityTokens { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn view(&self) -> TokenView<'_> {
        TokenView { rows: self.rows, cols: self.cols, data: &self.data }
    }

    /// Reorders rows so that output row `i` is input row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        EntityTokens { rows: self.rows, cols: self.cols, data }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TokenView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

impl<'a> TokenView<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f32]) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        TokenView { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_owned(&self) -> EntityTokens {
        EntityTokens { rows: self.rows, cols: self.cols, data: self.data.to_vec() }
    }
}
