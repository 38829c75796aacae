// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gauss–Hermite quadrature for Gaussian averages.

use std::f64::consts::PI;

/// Nodes `x_i` and weights `w_i` with `Σ w_i f(x_i) ≈ ∫ e^{−x²} f(x) dx`,
/// found by Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Points and probability weights for averaging over `Normal(mean, std)`.
/// A zero `std` or a single node collapses to the mean.
pub fn normal_nodes(mean: f64, std: f64, n: usize) -> Vec<(f64, f64)> {
    if std == 0.0 || n <= 1 {
        return vec![(mean, 1.0)];
    }
    let (x, w) = gauss_hermite(n);
    let s = PI.sqrt();
    x.iter().zip(&w).map(|(&xi, &wi)| (mean + std * 2f64.sqrt() * xi, wi / s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_and_moments_match() {
        for n in [2, 5, 20, 41, 60] {
            let nodes = normal_nodes(0.3, 1.7, n);
            let s0: f64 = nodes.iter().map(|p| p.1).sum();
            let m1: f64 = nodes.iter().map(|p| p.1 * p.0).sum();
            let m2: f64 = nodes.iter().map(|p| p.1 * (p.0 - 0.3).powi(2)).sum();
            assert!((s0 - 1.0).abs() < 1e-10, "n={n} {s0}");
            assert!((m1 - 0.3).abs() < 1e-10);
            assert!((m2 - 1.7f64.powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_cosine_average() {
        // E[cos(X)] = e^{−σ²/2} cos μ
        let nodes = normal_nodes(0.8, 0.6, 41);
        let v: f64 = nodes.iter().map(|p| p.1 * p.0.cos()).sum();
        assert!((v - (-0.18f64).exp() * 0.8f64.cos()).abs() < 1e-13);
    }
}
