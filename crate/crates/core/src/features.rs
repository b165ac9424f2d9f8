//! Per-example input features: a single vector or a bag of region vectors.

use crate::error::{Error, Result};

/// One example's features. Single-vector examples have exactly one region;
/// bag examples carry `R >= 1` region vectors of a shared dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    data: Vec<f64>,
    regions: usize,
    dim: usize,
}

impl Features {
    pub fn single(values: Vec<f64>) -> Result<Self> {
        let dim = values.len();
        Features::from_flat(values, 1, dim)
    }

    pub fn bag(regions: Vec<Vec<f64>>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::InvalidInput("feature bag must be non-empty".into()));
        }
        let dim = regions[0].len();
        let mut data = Vec::with_capacity(regions.len() * dim);
        for region in &regions {
            if region.len() != dim {
                return Err(Error::Dimension(format!(
                    "region dims differ: {} vs {dim}",
                    region.len()
                )));
            }
            data.extend_from_slice(region);
        }
        let count = regions.len();
        Features::from_flat(data, count, dim)
    }

    fn from_flat(data: Vec<f64>, regions: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be > 0".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features must be finite".into()));
        }
        Ok(Features { data, regions, dim })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn region(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter_regions(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}
