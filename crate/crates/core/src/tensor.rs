use crate::error::{Error, Result};
use crate::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Matrix<F>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: F) {
        for a in &mut self.data {
            *a = *a * k;
        }
    }
}

/// A `[t][unit]` sequence of real vectors, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<F> {
    steps: usize,
    units: usize,
    data: Vec<F>,
}

impl<F: Real> TimeSeries<F> {
    pub fn zeros(steps: usize, units: usize) -> Self {
        Self {
            steps,
            units,
            data: vec![F::zero(); steps * units],
        }
    }

    pub fn from_vec(steps: usize, units: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != steps * units {
            return Err(Error::Shape(format!(
                "{} values for {steps} steps of {units} units",
                data.len()
            )));
        }
        Ok(Self { steps, units, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let units = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != units) {
            return Err(Error::Shape("ragged time series rows".into()));
        }
        Ok(Self {
            steps: rows.len(),
            units,
            data: rows.concat(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn row(&self, t: usize) -> &[F] {
        &self.data[t * self.units..(t + 1) * self.units]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [F] {
        &mut self.data[t * self.units..(t + 1) * self.units]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }
}
