//! Dense linear-algebra helpers on top of `faer`, plus the global thread
//! setting shared by every kernel in the crate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Once;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};

static THREADS: AtomicUsize = AtomicUsize::new(1);
static SYNC_FAER: Once = Once::new();

/// Caps worker threads used by dense kernels. `1` (the default) gives
/// bitwise-reproducible results.
pub fn set_threads(n: usize) {
    let n = n.max(1);
    THREADS.store(n, Ordering::Relaxed);
    faer::set_global_parallelism(par_for(n));
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

fn par_for(n: usize) -> Par {
    if n <= 1 {
        Par::Seq
    } else {
        Par::rayon(n)
    }
}

/// Parallelism token for faer calls.
pub fn par() -> Par {
    SYNC_FAER.call_once(|| faer::set_global_parallelism(par_for(threads())));
    par_for(threads())
}

/// `dst = lhs * rhs` (or `dst += lhs * rhs` when `accumulate`).
pub fn gemm(dst: MatMut<'_, f64>, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>, accumulate: bool) {
    let beta = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, beta, lhs, rhs, 1.0, par());
}

pub fn col_major(data: &[f64], nrows: usize, ncols: usize) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(data, nrows, ncols)
}

pub fn col_major_mut(data: &mut [f64], nrows: usize, ncols: usize) -> MatMut<'_, f64> {
    MatMut::from_column_major_slice_mut(data, nrows, ncols)
}

pub fn row_major(data: &[f64], nrows: usize, ncols: usize) -> MatRef<'_, f64> {
    MatRef::from_row_major_slice(data, nrows, ncols)
}

pub fn row_major_mut(data: &mut [f64], nrows: usize, ncols: usize) -> MatMut<'_, f64> {
    MatMut::from_row_major_slice_mut(data, nrows, ncols)
}

pub fn frobenius(m: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: MatRef<'_, f64>) -> crate::Result<(Vec<f64>, Mat<f64>)> {
    par();
    let eig = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| crate::NormError::ConvergenceFailure(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = Mat::from_fn(u.nrows(), n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

/// Thin SVD with singular values sorted descending.
pub fn thin_svd(a: MatRef<'_, f64>) -> crate::Result<(Mat<f64>, Vec<f64>)> {
    par();
    let svd = a
        .thin_svd()
        .map_err(|e| crate::NormError::ConvergenceFailure(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let u = svd.U();
    let k = s.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| s[i]).collect();
    let left = Mat::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    Ok((left, values))
}

/// Flips a column so its largest-magnitude entry is positive (lowest index
/// wins ties).
pub fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if best_abs > 0.0 && col[best] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..6).map(|v| (v * v) as f64 - 3.0).collect();
        let mut c = vec![0.0; 4];
        gemm(col_major_mut(&mut c, 2, 2), col_major(&a, 2, 3), col_major(&b, 3, 2), false);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i + 2 * k] * b[k + 3 * j];
                }
                assert_eq!(c[i + 2 * j], s);
            }
        }
    }

    #[test]
    fn sign_fix_prefers_lowest_index_on_ties() {
        let mut v = vec![-1.0, 1.0, 0.5];
        fix_sign(&mut v);
        assert_eq!(v, vec![1.0, -1.0, -0.5]);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [3.0, 1.0, 2.0][i] } else { 0.0 });
        let (vals, _) = sym_eigen(a.as_ref()).unwrap();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }
}
