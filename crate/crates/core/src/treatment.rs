//! Binary treatment vectors stored by their support.

use ndarray::Array1;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatment {
    n: usize,
    ones: Vec<usize>,
}

impl Treatment {
    /// Build from a sorted or unsorted set of treated indices.
    pub fn from_support(n: usize, mut ones: Vec<usize>) -> Result<Self> {
        ones.sort_unstable();
        ones.dedup();
        if ones.last().is_some_and(|&i| i >= n) {
            return Err(Error::Usage(format!("support index out of range for n={n}")));
        }
        Ok(Self { n, ones })
    }

    pub fn from_bools(x: &[bool]) -> Self {
        Self {
            n: x.len(),
            ones: x.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        }
    }

    /// Accepts only exact 0/1 values.
    pub fn from_f64(x: &[f64]) -> Result<Self> {
        let mut ones = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 {
                ones.push(i);
            } else if v != 0.0 {
                return Err(Error::DegenerateTreatment(format!(
                    "treatment entry {i} is {v}, expected 0 or 1"
                )));
            }
        }
        Ok(Self { n: x.len(), ones })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.ones.len()
    }

    pub fn support(&self) -> &[usize] {
        &self.ones
    }

    /// Fraction of ones.
    pub fn sparsity(&self) -> f64 {
        self.ones.len() as f64 / self.n as f64
    }

    pub fn is_degenerate(&self) -> bool {
        self.ones.is_empty() || self.ones.len() == self.n
    }

    pub fn ensure_both_classes(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegenerateTreatment(format!(
                "treatment has {} ones out of {} samples",
                self.ones.len(),
                self.n
            )))
        } else {
            Ok(())
        }
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.n);
        for &i in &self.ones {
            x[i] = 1.0;
        }
        x
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut x = vec![false; self.n];
        for &i in &self.ones {
            x[i] = true;
        }
        x
    }

    /// Indices of the zeros.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n - self.ones.len());
        let mut it = self.ones.iter().peekable();
        for i in 0..self.n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}
