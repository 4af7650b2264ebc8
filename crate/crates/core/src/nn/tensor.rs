use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a tensor's values came from. Anything derived from the private
/// training data stays `Private`; the GAN generator path refuses it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Public,
    Private,
}

impl Provenance {
    pub fn join(self, other: Provenance) -> Provenance {
        if self == Provenance::Private || other == Provenance::Private {
            Provenance::Private
        } else {
            Provenance::Public
        }
    }
}

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    provenance: Provenance,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self {
            shape,
            data,
            provenance: Provenance::Public,
        })
    }

    /// `rows × cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            provenance: Provenance::Public,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn trailing(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[-1, trailing]`.
    pub fn rows(&self) -> usize {
        match self.trailing() {
            0 => 0,
            t => self.data.len() / t,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let t = self.trailing();
        &self.data[i * t..(i + 1) * t]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.trailing().max(1))
    }

    /// Same data, new shape.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let provenance = self.provenance;
        Ok(Self::new(shape, self.data)?.with_provenance(provenance))
    }

    /// Rows selected by index, keeping provenance.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let t = self.trailing();
        let mut data = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::Dimension(format!(
                    "row {i} out of range {}",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let shape = vec![indices.len(), t];
        Ok(Self {
            shape,
            data,
            provenance: self.provenance,
        })
    }
}
