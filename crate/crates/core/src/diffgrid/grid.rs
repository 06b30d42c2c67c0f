use std::fmt;

use crate::error::{ensure, Result};

/// Dense row-major array of `f32` values with an arbitrary number of axes.
///
/// Five-axis grids use the `N×C×D×H×W` layout throughout the crate.
#[derive(Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Grid {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        ensure!(
            data.len() == len,
            "data length {} does not match shape {:?} ({} elements)",
            data.len(),
            shape,
            len
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Returns `(n, c, d, h, w)` for a five-axis grid.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        ensure!(
            self.shape.len() == 5,
            "expected a 5-d N×C×D×H×W grid, got shape {:?}",
            self.shape
        );
        Ok([
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Grid) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Copy of channels `start..start + count` of a 5-d grid.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Grid> {
        let [n, c, d, h, w] = self.dims5()?;
        ensure!(
            start + count <= c && count > 0,
            "channel slice {}..{} out of range for {} channels",
            start,
            start + count,
            c
        );
        let vox = d * h * w;
        let mut out = Vec::with_capacity(n * count * vox);
        for b in 0..n {
            let base = (b * c + start) * vox;
            out.extend_from_slice(&self.data[base..base + count * vox]);
        }
        Grid::from_vec(&[n, count, d, h, w], out)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
