//! Small dense linear-algebra helpers on top of `ndarray`, with the
//! decompositions delegated to `nalgebra`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

fn to_dmatrix(m: ArrayView2<'_, f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Singular values in descending order.
pub fn singular_values(m: ArrayView2<'_, f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let svd = to_dmatrix(m).svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: ArrayView2<'_, f64>, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v > tol * max).count(),
        _ => 0,
    }
}

/// Least-squares solution of `a x = b` for a full-column-rank `a`.
///
/// Returns the solution and the residual norm `‖a x − b‖₂`.
pub fn least_squares(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>, rank_tol: f64) -> Result<(Array1<f64>, f64)> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} observations", a.nrows()),
            actual: format!("{}", b.len()),
        });
    }
    let cols = a.ncols();
    let rank = numerical_rank(a, rank_tol);
    if rank < cols {
        return Err(Error::RankDeficient {
            rank,
            required: cols,
            tolerance: rank_tol,
        });
    }
    let svd = to_dmatrix(a).svd(true, true);
    let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().copied());
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::arg("least_squares", e.to_string()))?;
    let x = Array1::from_iter(x.iter().copied());
    let residual = (&a.dot(&x) - &b).mapv(|v| v * v).sum().sqrt();
    Ok((x, residual))
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = v.len();
    if n == 0 {
        return Array1::zeros(0);
    }
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &value) in sorted.iter().enumerate() {
        cumulative += value;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if value - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

/// Total-variation distance `½‖p − q‖₁`.
pub fn total_variation(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn identity(n: usize) -> Array2<f64> {
    Array2::eye(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn simplex_projection_fixes_simplex_points() {
        let p = array![0.2, 0.3, 0.5];
        let r = project_to_simplex(p.view());
        for (a, b) in p.iter().zip(r.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simplex_projection_clips_negative_mass() {
        let r = project_to_simplex(array![2.0, 0.0, -1.0].view());
        assert_eq!(r, array![1.0, 0.0, 0.0]);
        let r = project_to_simplex(array![0.5, 0.5, 0.5].view());
        for v in r.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_of_duplicate_columns() {
        let m = array![[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]];
        assert_eq!(numerical_rank(m.view(), 1e-9), 1);
        assert!(matches!(
            least_squares(m.view(), array![1.0, 2.0, 0.5].view(), 1e-9),
            Err(Error::RankDeficient { rank: 1, .. })
        ));
    }

    #[test]
    fn overdetermined_exact_system() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (x, res) = least_squares(a.view(), array![0.25, 0.75, 1.0].view(), 1e-9).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-14 && (x[1] - 0.75).abs() < 1e-14);
        assert!(res < 1e-14);
    }
}
