//! Small dense routines: cyclic Jacobi for tiny symmetric matrices and power
//! iteration for spectral norms of large operators.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric `N x N` matrix by cyclic Jacobi rotations,
/// returned in ascending order. Only the upper triangle is read.
pub fn symmetric_eigenvalues<const N: usize>(m: &[[f64; N]; N]) -> [f64; N] {
    let mut a = *m;
    for i in 0..N {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    for _sweep in 0..64 {
        let off: f64 = (0..N)
            .flat_map(|i| (i + 1..N).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag || off == 0.0 {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig = [0.0; N];
    for (i, e) in eig.iter_mut().enumerate() {
        *e = a[i][i];
    }
    eig.sort_by(|x, y| x.total_cmp(y));
    eig
}

/// Closed-form eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn symmetric_eigenvalues_2x2(m: &[[f64; 2]; 2]) -> [f64; 2] {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let r = half_diff.hypot(m[0][1]);
    [mean - r, mean + r]
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration with a
/// Rayleigh-quotient stopping rule (`relative change <= tol`).
pub fn power_iteration<F>(dim: usize, tol: f64, max_iter: usize, mut apply: F) -> Result<f64>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    if dim == 0 {
        return Err(Error::ParameterDomain("power iteration on empty operator".into()));
    }
    // Deterministic, non-degenerate start vector.
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut w = DVector::zeros(dim);
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.copy_from(&w);
        v /= norm;
        if (next - estimate).abs() <= tol * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::SolverFailed(format!(
        "power iteration did not reach tolerance {tol:e} in {max_iter} steps"
    )))
}
