//! Bus admittance matrix and the network current map `i_N = Y v`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pi-model branch between two buses (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal tap ratio on the `from` side.
    #[serde(default = "unit_tap")]
    pub tap: f64,
}

fn unit_tap() -> f64 {
    1.0
}

/// Sparse complex admittance matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl AdmittanceMatrix {
    /// Builds the matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, Complex64)>) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        for (i, j, y) in triplets {
            if i >= n || j >= n {
                return Err(Error::Dimension { context: "admittance entry", expected: n, actual: i.max(j) + 1 });
            }
            match rows[i].iter_mut().find(|(c, _)| *c == j) {
                Some(entry) => entry.1 += y,
                None => rows[i].push((j, y)),
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            for (c, y) in row {
                col_idx.push(c);
                values.push(y);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    /// Assembles `Y` from pi-model branches and bus shunt admittances.
    pub fn from_branches(n: usize, branches: &[Branch], shunts: &[(usize, Complex64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(4 * branches.len() + shunts.len());
        for br in branches {
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            let z = Complex64::new(br.r, br.x);
            if z.norm() == 0.0 {
                return Err(Error::Validation(format!("branch {}-{} has zero impedance", br.from, br.to)));
            }
            let y = z.inv();
            let half_b = Complex64::new(0.0, br.b / 2.0);
            let tap = br.tap;
            triplets.push((br.from, br.from, (y + half_b) / (tap * tap)));
            triplets.push((br.to, br.to, y + half_b));
            triplets.push((br.from, br.to, -y / tap));
            triplets.push((br.to, br.from, -y / tap));
        }
        triplets.extend(shunts.iter().map(|&(bus, y)| (bus, bus, y)));
        Self::from_triplets(n, triplets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i).find(|(c, _)| *c == j).map(|(_, y)| y).unwrap_or_default()
    }

    /// True when `Y_ij` is a nonzero stored entry.
    pub fn is_coupled(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != Complex64::new(0.0, 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut dense = DMatrix::from_element(self.n, self.n, Complex64::new(0.0, 0.0));
        for i in 0..self.n {
            for (j, y) in self.row(i) {
                dense[(i, j)] = y;
            }
        }
        dense
    }

    /// Checks the symmetric sparsity pattern and the presence of diagonal
    /// entries on every bus with incident branches.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let mut has_offdiag = false;
            for (j, _) in self.row(i) {
                if j != i {
                    has_offdiag = true;
                    if !self.row(j).any(|(c, _)| c == i) {
                        return Err(Error::Validation(format!("admittance pattern not symmetric at ({i}, {j})")));
                    }
                }
            }
            if has_offdiag && !self.row(i).any(|(c, _)| c == i) {
                return Err(Error::Validation(format!("missing diagonal admittance at bus {i}")));
            }
        }
        Ok(())
    }
}

/// Network current injections `Y v`.
pub fn network_currents(y: &AdmittanceMatrix, v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.len() != y.n {
        return Err(Error::Dimension { context: "network voltage vector", expected: y.n, actual: v.len() });
    }
    Ok((0..y.n).map(|i| y.row(i).map(|(j, yij)| yij * v[j]).sum()).collect())
}
