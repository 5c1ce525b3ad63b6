use crate::error::{Error, Result};
use crate::model::Activation;
use crate::num::Real;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Real> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values do not fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.cols + col]
    }

    pub fn matmul(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |i, j| {
            S::of_f64((0..self.cols).map(|k| self.get(i, k).as_f64() * other.get(k, j).as_f64()).sum())
        }))
    }

    pub fn max_abs_diff(&self, other: &Matrix<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shapes<S>(x: &Matrix<S>, u: &Matrix<S>, v: &Matrix<S>, a: &[S], b: &[S]) -> Result<()> {
    let hidden = u.cols;
    let bad = if x.cols != u.rows {
        Some(format!("X has {} columns but U has {} rows", x.cols, u.rows))
    } else if v.rows != hidden {
        Some(format!("V has {} rows but U has {hidden} columns", v.rows))
    } else if a.len() != hidden {
        Some(format!("a has length {} but the hidden width is {hidden}", a.len()))
    } else if b.len() != v.cols {
        Some(format!("b has length {} but V has {} columns", b.len(), v.cols))
    } else {
        None
    };
    bad.map_or(Ok(()), |m| Err(Error::Shape(m)))
}

/// Hidden channels `[lo, hi)` of `φ(XU + a)` for one row of `X`.
fn hidden_row<S: Real>(x: &Matrix<S>, u: &Matrix<S>, a: &[S], phi: Activation, row: usize, lo: usize, hi: usize) -> Vec<S> {
    (lo..hi)
        .map(|j| {
            let dot: f64 = (0..x.cols).map(|k| x.get(row, k).as_f64() * u.get(k, j).as_f64()).sum();
            S::of_f64(phi.apply(dot + a[j].as_f64()))
        })
        .collect()
}

/// `φ(XU + a)V + b` with the full hidden matrix materialized.
pub fn ffn_layerwise<S: Real>(
    x: &Matrix<S>,
    u: &Matrix<S>,
    v: &Matrix<S>,
    a: &[S],
    b: &[S],
    phi: Activation,
) -> Result<Matrix<S>> {
    check_shapes(x, u, v, a, b)?;
    let hidden: Vec<Vec<S>> = (0..x.rows).map(|p| hidden_row(x, u, a, phi, p, 0, u.cols)).collect();
    Ok(Matrix::from_fn(x.rows, v.cols, |p, j| {
        let dot: f64 = hidden[p].iter().enumerate().map(|(i, y)| y.as_f64() * v.get(i, j).as_f64()).sum();
        S::of_f64(dot) + b[j]
    }))
}

/// The same FFN computed `chunk` hidden channels at a time; each chunk's
/// contribution to the output is accumulated before the next chunk is
/// computed, so at most `chunk` hidden values exist per row.
pub fn ffn_fused<S: Real>(
    x: &Matrix<S>,
    u: &Matrix<S>,
    v: &Matrix<S>,
    a: &[S],
    b: &[S],
    phi: Activation,
    chunk: usize,
) -> Result<Matrix<S>> {
    check_shapes(x, u, v, a, b)?;
    if chunk == 0 || chunk > u.cols {
        return Err(Error::InvalidArgument(format!("chunk {chunk} outside 1..={}", u.cols)));
    }
    let mut z = Matrix::zeros(x.rows, v.cols);
    for lo in (0..u.cols).step_by(chunk) {
        let hi = (lo + chunk).min(u.cols);
        for p in 0..x.rows {
            let y = hidden_row(x, u, a, phi, p, lo, hi);
            for j in 0..v.cols {
                let dot: f64 = y.iter().enumerate().map(|(i, h)| h.as_f64() * v.get(lo + i, j).as_f64()).sum();
                z.data[p * v.cols + j] = z.data[p * v.cols + j] + S::of_f64(dot);
            }
        }
    }
    for p in 0..x.rows {
        for (z, &bj) in z.data[p * v.cols..(p + 1) * v.cols].iter_mut().zip(b.iter()) {
            *z = *z + bj;
        }
    }
    Ok(z)
}
