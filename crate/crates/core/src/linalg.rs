//! Dense helpers for the small matrices that appear throughout: volatility
//! factors gamma (d x d), diffusion fields sigma (n x d) and the products
//! built from them. Everything is row-major `&[f64]` with explicit
//! dimensions; n and d stay in the single digits, so simple loops beat any
//! heavier machinery.

/// `y = A x` for row-major `a` of shape `rows x cols`.
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += a[i * cols + j] * x[j];
        }
        y[i] = acc;
    }
    y
}

/// `C = A B`, `a` is `rows x inner`, `b` is `inner x cols`.
pub fn mat_mul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut c = vec![0.0; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[i * inner + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..cols {
                c[i * cols + j] += aik * b[k * cols + j];
            }
        }
    }
    c
}

/// `gamma gamma^T` for a square `d x d` factor: the quadratic-variation rate
/// of the controlled noise.
pub fn gram(gamma: &[f64], d: usize) -> Vec<f64> {
    debug_assert_eq!(gamma.len(), d * d);
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += gamma[i * d + k] * gamma[j * d + k];
            }
            g[i * d + j] = acc;
            g[j * d + i] = acc;
        }
    }
    g
}

/// `sigma M sigma^T` for `sigma` of shape `n x d` and symmetric `m` of shape
/// `d x d`: the state-space diffusion matrix under a control.
pub fn sandwich(sigma: &[f64], m: &[f64], n: usize, d: usize) -> Vec<f64> {
    let sm = mat_mul(sigma, m, n, d, d);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..d {
                acc += sm[i * d + k] * sigma[j * d + k];
            }
            out[i * n + j] = acc;
        }
    }
    // Symmetrize away the last-bit asymmetry from rounding.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = avg;
            out[j * n + i] = avg;
        }
    }
    out
}

/// Frobenius inner product of two `n x n` matrices.
pub fn frob(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Extreme eigenvalues of a symmetric `n x n` matrix by cyclic Jacobi
/// rotations. Intended for the tiny matrices gamma gamma^T and sigma
/// sigma^T; exact enough (1e-14 scale) for ellipticity and non-degeneracy
/// checks.
pub fn sym_eig_bounds(a: &[f64], n: usize) -> (f64, f64) {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return (a[0], a[0]);
    }
    let mut m = a.to_vec();
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        lo = lo.min(m[i * n + i]);
        hi = hi.max(m[i * n + i]);
    }
    (lo, hi)
}
