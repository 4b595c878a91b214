//! Dense matrices, marginals and the row-major flattening convention.
//!
//! Every matrix in the crate is stored row-major, and `vec`/`mat` are exact
//! inverses of each other.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude below which a negative target entry is treated as float noise.
pub const NEGATIVE_CLIP_TOL: f64 = 1e-12;

/// Dense real matrix with finite entries, stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(n_rows, n_cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert!(value.is_finite());
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from a generator; panics if it yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data).expect("generator produced an invalid matrix")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in out.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        out
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries((0..self.rows).map(|i| self.row(i)))
            .finish()
    }
}

/// Row-major flattening.
pub fn vec(m: &Matrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Inverse of [`vec`].
pub fn mat(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, v.to_vec())
}

/// Row sums, column sums and total mass of a non-negative matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPair {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub mass: f64,
}

impl MarginalPair {
    pub fn new(row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        for (axis, v) in [("row", &row), ("col", &col)] {
            if v.is_empty() {
                return Err(Error::Dimension(format!("{axis} marginal is empty")));
            }
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFinite { index, value });
            }
            if let Some(x) = v.iter().find(|x| **x < 0.0) {
                return Err(Error::DegenerateMarginal(format!(
                    "{axis} marginal has negative entry {x}"
                )));
            }
        }
        let mass = row.iter().sum();
        Ok(Self { row, col, mass })
    }

    /// Product coupling `row ⊗ col / mass`.
    pub fn independent_coupling(&self) -> Matrix {
        let mass = if self.mass > 0.0 { self.mass } else { 1.0 };
        Matrix::from_fn(self.row.len(), self.col.len(), |i, j| {
            self.row[i] * self.col[j] / mass
        })
    }
}

/// Marginalizes a non-negative matrix.
///
/// Entries in `[-1e-12, 0)` are treated as zero; anything more negative is
/// rejected.
pub fn marginals_of(m: &Matrix) -> Result<MarginalPair> {
    let mut clean = m.clone();
    let cols = m.cols();
    for (k, v) in clean.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEGATIVE_CLIP_TOL {
                return Err(Error::NegativeTarget {
                    location: format!("({}, {})", k / cols, k % cols),
                    value: *v,
                });
            }
            log::warn!("clipping negative target entry {v:e} to 0");
            *v = 0.0;
        }
    }
    let row = clean.row_sums();
    let col = clean.col_sums();
    let mass = clean.sum();
    Ok(MarginalPair { row, col, mass })
}

/// Rescales a marginal pair to unit mass.
///
/// When the row and column sums disagree (independently predicted
/// marginals), the reconciled mass is their average and each vector is
/// rescaled to it before normalizing. The returned scale is the mass that
/// converts a unit-mass transport plan back to original units.
pub fn normalize_marginals(p: &MarginalPair) -> Result<(MarginalPair, f64)> {
    let row_sum: f64 = p.row.iter().sum();
    let col_sum: f64 = p.col.iter().sum();
    if !(row_sum > 0.0 && col_sum > 0.0) {
        return Err(Error::DegenerateMarginal(format!(
            "marginal sums must be positive (row {row_sum}, col {col_sum})"
        )));
    }
    let scale = if row_sum == col_sum {
        row_sum
    } else {
        0.5 * (row_sum + col_sum)
    };
    let row = p.row.iter().map(|v| v / row_sum).collect();
    let col = p.col.iter().map(|v| v / col_sum).collect();
    Ok((
        MarginalPair {
            row,
            col,
            mass: 1.0,
        },
        scale,
    ))
}

/// One input/target pair of a matrix-valued regression dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSample {
    pub id: String,
    pub input: Matrix,
    pub target: Option<Matrix>,
}

impl MatrixSample {
    pub fn new(id: impl Into<String>, input: Matrix, target: Option<Matrix>) -> Self {
        Self {
            id: id.into(),
            input,
            target,
        }
    }

    pub fn target(&self) -> Result<&Matrix> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::Schema(format!("sample `{}` has no target", self.id)))
    }
}

/// Input and target shapes `(m, n, m', n')` shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub in_rows: usize,
    pub in_cols: usize,
    pub out_rows: usize,
    pub out_cols: usize,
}

impl Shapes {
    pub fn new(in_rows: usize, in_cols: usize, out_rows: usize, out_cols: usize) -> Result<Self> {
        if [in_rows, in_cols, out_rows, out_cols].contains(&0) {
            return Err(Error::Config(format!(
                "shapes must be positive, got {in_rows}x{in_cols} -> {out_rows}x{out_cols}"
            )));
        }
        Ok(Self {
            in_rows,
            in_cols,
            out_rows,
            out_cols,
        })
    }

    pub fn input_len(&self) -> usize {
        self.in_rows * self.in_cols
    }

    pub fn output_len(&self) -> usize {
        self.out_rows * self.out_cols
    }

    /// Checks that every sample matches these shapes.
    pub fn check(&self, samples: &[MatrixSample]) -> Result<()> {
        for s in samples {
            if s.input.shape() != (self.in_rows, self.in_cols) {
                return Err(Error::Dimension(format!(
                    "sample `{}` input is {:?}, expected {:?}",
                    s.id,
                    s.input.shape(),
                    (self.in_rows, self.in_cols)
                )));
            }
            if let Some(t) = &s.target {
                if t.shape() != (self.out_rows, self.out_cols) {
                    return Err(Error::Dimension(format!(
                        "sample `{}` target is {:?}, expected {:?}",
                        s.id,
                        t.shape(),
                        (self.out_rows, self.out_cols)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shapes of the first sample, checked against the rest.
    pub fn of_dataset(samples: &[MatrixSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let target = first.target()?;
        let shapes = Self::new(
            first.input.rows(),
            first.input.cols(),
            target.rows(),
            target.cols(),
        )?;
        shapes.check(samples)?;
        Ok(shapes)
    }
}

impl fmt::Display for Shapes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} -> {}x{}",
            self.in_rows, self.in_cols, self.out_rows, self.out_cols
        )
    }
}
