// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Hermitian eigendecomposition by cyclic complex Jacobi rotations.

use super::matrix::{CMat, C64};

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: CMat,
}

impl HermitianEigen {
    /// Rebuild `V f(Λ) V^H` for a real function of the eigenvalues.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> CMat {
        let n = self.values.len();
        let v = &self.vectors;
        let mut out = CMat::zeros(n, n);
        for k in 0..n {
            let fk = f(self.values[k]);
            if fk == C64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..n {
                let a = v[(i, k)] * fk;
                for j in 0..n {
                    out[(i, j)] += a * v[(j, k)].conj();
                }
            }
        }
        out
    }
}

/// Diagonalize a Hermitian matrix. The strictly lower triangle is ignored
/// in favour of the conjugate of the upper triangle.
pub fn eigh(a: &CMat) -> HermitianEigen {
    assert!(a.is_square(), "eigh needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)].conj();
        }
    }
    let mut v = CMat::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 || r <= 1e-18 * scale {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let phase = apq / r;
                let zeta = (aqq - app) / (2.0 * r);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (zeta * zeta + 1.0).sqrt())
                } else {
                    -1.0 / (-zeta + (zeta * zeta + 1.0).sqrt())
                };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // G restricted to (p, q): [[c, s], [-s e^{-iφ}, c e^{-iφ}]]
                let ph = phase.conj();
                let g_pp = C64::new(cs, 0.0);
                let g_pq = C64::new(sn, 0.0);
                let g_qp = -ph * sn;
                let g_qq = ph * cs;
                // columns: M <- M G
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * g_pp + mkq * g_qp;
                    m[(k, q)] = mkp * g_pq + mkq * g_qq;
                }
                // rows: M <- G^H M
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = g_pp.conj() * mpk + g_qp.conj() * mqk;
                    m[(q, k)] = g_pq.conj() * mpk + g_qq.conj() * mqk;
                }
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * g_pp + vkq * g_qp;
                    v[(k, q)] = vkp * g_pq + vkq * g_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |i, k| v[(i, order[k])]);
    HermitianEigen { values, vectors }
}

/// Principal square root of a positive semidefinite Hermitian matrix;
/// negative eigenvalues from roundoff are clipped to zero.
pub fn sqrtm_psd(a: &CMat) -> CMat {
    let e = eigh(a);
    let cut = 1e-13 * e.values.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    e.apply(|x| C64::new(if x > cut { x.sqrt() } else { 0.0 }, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::matrix::c;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(next(), 0.0);
            for j in (i + 1)..n {
                let z = c(next(), next());
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    #[test]
    fn reconstructs_random_hermitian() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (16, 4), (30, 5)] {
            let a = random_hermitian(n, seed);
            let e = eigh(&a);
            let back = e.apply(|x| c(x, 0.0));
            assert!(back.max_abs_diff(&a) < 1e-12, "n={n}");
            assert!(e.vectors.unitarity_error() < 1e-12);
            for w in e.values.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn degenerate_spectrum() {
        let a = CMat::real_diag(&[2.0, 1.0, 2.0, 1.0]);
        let e = eigh(&a);
        assert_eq!(e.values, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn pauli_y() {
        let y = CMat::from_vec(2, 2, vec![c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let e = eigh(&y);
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = random_hermitian(6, 9);
        let psd = a.matmul(&a.adjoint());
        let r = sqrtm_psd(&psd);
        assert!(r.matmul(&r).max_abs_diff(&psd) < 1e-12);
    }
}
