//! Small dense linear algebra on row-major slices.
//!
//! Every matrix in this crate is tiny (ambient dimension of a torus or a
//! sphere, so 2 to 4), which makes plain Gaussian elimination with partial
//! pivoting both adequate and fast. Matrices are stored row-major in flat
//! slices of length `n * n`.

use crate::error::{Error, Result};

/// Hard cap on ambient dimension for the stack-allocated scratch used by the
/// solvers. Flows are only defined on T^n and S^n with small n.
pub const MAX_DIM: usize = 8;

pub fn mat_identity(n: usize, out: &mut [f64]) {
    out[..n * n].fill(0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

/// out = a * b
pub fn mat_mul(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// out = a * x
pub fn mat_vec(n: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..n {
            s += a[i * n + k] * x[k];
        }
        out[i] = s;
    }
}

/// out = a^T * x
pub fn mat_tvec(n: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..n {
            s += a[k * n + i] * x[k];
        }
        out[i] = s;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

/// Determinant by LU factorization with partial pivoting.
pub fn det(n: usize, a: &[f64]) -> f64 {
    assert!(n <= MAX_DIM);
    let mut m = [0.0; MAX_DIM * MAX_DIM];
    m[..n * n].copy_from_slice(&a[..n * n]);
    let mut d = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            d = -d;
        }
        let p = m[col * n + col];
        if p == 0.0 {
            return 0.0;
        }
        d *= p;
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            for c in col..n {
                m[r * n + c] -= f * m[col * n + c];
            }
        }
    }
    d
}

/// Solve `a x = b` in place of `out`. Gaussian elimination, partial pivoting.
pub fn solve(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) -> Result<()> {
    assert!(n <= MAX_DIM);
    let mut m = [0.0; MAX_DIM * MAX_DIM];
    let mut rhs = [0.0; MAX_DIM];
    m[..n * n].copy_from_slice(&a[..n * n]);
    rhs[..n].copy_from_slice(&b[..n]);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular linear system".into()));
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            rhs.swap(col, piv);
        }
        let p = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            for c in col..n {
                m[r * n + c] -= f * m[col * n + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for c in row + 1..n {
            s -= m[row * n + c] * out[c];
        }
        out[row] = s / m[row * n + row];
    }
    Ok(())
}

/// Matrix exponential by scaling and squaring with a Taylor series.
/// Intended for the small skew matrices of the rotation group.
pub fn mat_exp(n: usize, a: &[f64], out: &mut [f64]) {
    assert!(n <= MAX_DIM);
    let nrm = frobenius(&a[..n * n]);
    let squarings = if nrm > 0.5 {
        (nrm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    let mut b = [0.0; MAX_DIM * MAX_DIM];
    for (dst, src) in b[..n * n].iter_mut().zip(&a[..n * n]) {
        *dst = src * scale;
    }
    // exp(b) by Taylor series; terms decay fast since |b| <= 0.5.
    let mut term = [0.0; MAX_DIM * MAX_DIM];
    let mut acc = [0.0; MAX_DIM * MAX_DIM];
    let mut tmp = [0.0; MAX_DIM * MAX_DIM];
    mat_identity(n, &mut term);
    mat_identity(n, &mut acc);
    for k in 1..30 {
        mat_mul(n, &term[..n * n], &b[..n * n], &mut tmp);
        for (dst, src) in term[..n * n].iter_mut().zip(&tmp[..n * n]) {
            *dst = src / k as f64;
        }
        for (dst, src) in acc[..n * n].iter_mut().zip(&term[..n * n]) {
            *dst += src;
        }
        if norm(&term[..n * n]) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        mat_mul(n, &acc[..n * n], &acc[..n * n], &mut tmp);
        acc[..n * n].copy_from_slice(&tmp[..n * n]);
    }
    out[..n * n].copy_from_slice(&acc[..n * n]);
}

/// Sum with a fixed pairwise (binary-tree) reduction order. Deterministic for
/// a given input order and more accurate than a running sum on long inputs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and standard error of the mean (sample std / sqrt(n)).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "need at least two samples");
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Weighted least-squares line fit `y ~ a + b t`; returns (slope, slope_sigma).
/// Weights are 1/sigma_i^2.
pub fn weighted_slope(t: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64) {
    assert_eq!(t.len(), y.len());
    assert_eq!(t.len(), sigma.len());
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw = pairwise_sum(&w);
    let swt = pairwise_sum(&w.iter().zip(t).map(|(w, t)| w * t).collect::<Vec<_>>());
    let swy = pairwise_sum(&w.iter().zip(y).map(|(w, y)| w * y).collect::<Vec<_>>());
    let tbar = swt / sw;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..t.len() {
        num += w[i] * (t[i] - tbar) * y[i];
        den += w[i] * (t[i] - tbar) * (t[i] - tbar);
    }
    let slope = num / den;
    let _ = swy;
    (slope, (1.0 / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solve_roundtrip() {
        let a = [2.0, 1.0, 0.5, -1.0, 3.0, 2.0, 0.0, 1.0, 1.5];
        let x = [1.0, -2.0, 0.5];
        let mut b = [0.0; 3];
        mat_vec(3, &a, &x, &mut b);
        let mut got = [0.0; 3];
        solve(3, &a, &b, &mut got).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn det_of_rotation_is_one() {
        let skew = [0.0, -0.7, 0.0, 0.7, 0.0, 0.3, 0.0, -0.3, 0.0];
        let mut rot = [0.0; 9];
        mat_exp(3, &skew, &mut rot);
        assert_abs_diff_eq!(det(3, &rot), 1.0, epsilon = 1e-13);
        // exp of skew is orthogonal
        let mut rt = [0.0; 9];
        let mut prod = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rt[i * 3 + j] = rot[j * 3 + i];
            }
        }
        mat_mul(3, &rt, &rot, &mut prod);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[i * 3 + j], want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v = [0.1, 0.2, 0.3, 0.4];
        assert_abs_diff_eq!(pairwise_sum(&v), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_slope_recovers_line() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.5, 0.0, -0.5];
        let s = [0.1, 0.1, 0.1, 0.1];
        let (slope, sigma) = weighted_slope(&t, &y, &s);
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);
        assert!(sigma > 0.0);
    }
}
