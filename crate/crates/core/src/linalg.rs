//! Dense symmetric matrices and a row-appendable Cholesky factor.

use serde::{Deserialize, Serialize};

/// Dense symmetric matrix stored in full row-major form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from row-major data; symmetry is not enforced here.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "matrix data has wrong length");
        SymMatrix { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix rows must be square");
            data.extend_from_slice(r);
        }
        SymMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// Largest absolute asymmetry `|M_ij − M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let k = idx.len();
        let mut data = Vec::with_capacity(k * k);
        for &i in idx {
            let row = self.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        SymMatrix { n: k, data }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = 4 * c;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Outcome of trying to append a row to a factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Append {
    Accepted,
    /// Pivot positive but below the conditioning floor.
    IllConditioned(f64),
    /// Pivot nonpositive: the extended matrix is not positive definite.
    Indefinite(f64),
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`, grown one row at a
/// time. Row `i` holds `i + 1` entries.
#[derive(Clone, Debug, Default)]
pub struct Cholesky {
    rows: Vec<Vec<f64>>,
    max_diag: f64,
    rel_floor: f64,
}

impl Cholesky {
    /// `rel_floor` rejects a new diagonal entry of `L` below
    /// `rel_floor · max(previous diagonal entries)`.
    pub fn new(rel_floor: f64) -> Self {
        Cholesky {
            rows: Vec::new(),
            max_diag: 0.0,
            rel_floor,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Append the row `[coupling, diag]` of the symmetric matrix, where
    /// `coupling[j]` is the entry against the j-th existing row.
    pub fn append(&mut self, coupling: &[f64], diag: f64) -> Append {
        let k = self.rows.len();
        debug_assert_eq!(coupling.len(), k);
        let mut l = Vec::with_capacity(k + 1);
        for j in 0..k {
            let rj = &self.rows[j];
            let s = coupling[j] - dot(&l[..j], &rj[..j]);
            l.push(s / rj[j]);
        }
        let pivot = diag - dot(&l, &l);
        if !(pivot > 0.0) {
            return Append::Indefinite(pivot);
        }
        let d = pivot.sqrt();
        if d < self.rel_floor * self.max_diag {
            return Append::IllConditioned(d);
        }
        l.push(d);
        self.max_diag = self.max_diag.max(d);
        self.rows.push(l);
        Append::Accepted
    }

    /// Factor the principal submatrix of `m` on `idx`, in that order.
    /// Returns the position in `idx` of the first rejected index.
    pub fn factor(
        m: &SymMatrix,
        idx: &[usize],
        rel_floor: f64,
    ) -> Result<Cholesky, (usize, Append)> {
        let mut ch = Cholesky::new(rel_floor);
        let mut coupling = Vec::with_capacity(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            coupling.clear();
            let row = m.row(i);
            coupling.extend(idx[..pos].iter().map(|&j| row[j]));
            match ch.append(&coupling, row[i]) {
                Append::Accepted => {}
                other => return Err((pos, other)),
            }
        }
        Ok(ch)
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.rows.len();
        assert_eq!(b.len(), k);
        let mut y = Vec::with_capacity(k);
        for i in 0..k {
            let r = &self.rows[i];
            y.push((b[i] - dot(&r[..i], &y[..i])) / r[i]);
        }
        for i in (0..k).rev() {
            let r = &self.rows[i];
            y[i] /= r[i];
            let yi = y[i];
            for j in 0..i {
                y[j] -= r[j] * yi;
            }
        }
        y
    }

    pub fn min_diag(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r[r.len() - 1])
            .fold(f64::INFINITY, f64::min)
    }
}
