#![allow(dead_code, clippy::needless_range_loop)]

use mlfe_core::{EdgeDensity, PotentialFamily, PotentialPair};

/// Exchangeable covariance of the star: root variance, leaf variance,
/// root/leaf covariance and leaf/leaf covariance.
#[derive(Debug, Clone, Copy)]
pub struct StarCov {
    pub root: f64,
    pub leaf: f64,
    pub root_leaf: f64,
    pub leaf_leaf: f64,
}

/// With quadratic potentials a centred Gaussian law stays Gaussian, and its
/// covariance solves `Σ' = −AΣ − ΣAᵀ + 2I` where `A` is the linear drift,
/// itself a function of `Σ` through the conditional mean in `γ`. RK4 in `Σ`.
pub fn gaussian_covariance(pair: &PotentialPair, init_var: f64, t: f64) -> StarCov {
    let PotentialFamily::Quadratic { alpha, beta } = pair.family() else { panic!("quadratic only") };
    let k = pair.kappa();
    let d = k + 1;
    let (u, w2) = (alpha + beta, -0.5 * beta);
    let drift = |s: &[[f64; 4]; 4]| {
        let (a, c, p, q) = (s[0][0], s[1][1], s[0][1], s[1][2]);
        let det = a * c - p * p;
        // regression of leaf 2 on (root, leaf 1)
        let k1 = (p * c - q * p) / det;
        let k2 = (q * a - p * p) / det;
        let mut m = [[0.0; 4]; 4];
        m[0][0] = u + k as f64 * w2;
        for v in 1..d {
            m[0][v] = -w2;
            m[v][v] = u + w2 + (k - 1) as f64 * w2 * (1.0 - k1);
            m[v][0] = -w2 - (k - 1) as f64 * w2 * k2;
        }
        m
    };
    let rhs = |s: &[[f64; 4]; 4]| {
        let m = drift(s);
        let mut out = [[0.0; 4]; 4];
        for i in 0..d {
            for j in 0..d {
                let mut v = if i == j { 2.0 } else { 0.0 };
                for l in 0..d {
                    v -= m[i][l] * s[l][j] + s[i][l] * m[j][l];
                }
                out[i][j] = v;
            }
        }
        out
    };
    let axpy = |s: &[[f64; 4]; 4], h: f64, k: &[[f64; 4]; 4]| {
        let mut o = *s;
        for i in 0..4 {
            for j in 0..4 {
                o[i][j] += h * k[i][j];
            }
        }
        o
    };
    let mut s = [[0.0; 4]; 4];
    for i in 0..d {
        s[i][i] = init_var;
    }
    let steps = (t / 1e-4).round() as usize;
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(&s);
        let k2 = rhs(&axpy(&s, 0.5 * h, &k1));
        let k3 = rhs(&axpy(&s, 0.5 * h, &k2));
        let k4 = rhs(&axpy(&s, h, &k3));
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
    }
    StarCov { root: s[0][0], leaf: s[1][1], root_leaf: s[0][1], leaf_leaf: s[1][2] }
}

/// `Cov(X₀, X₁)` under an edge density.
pub fn edge_covariance(edge: &EdgeDensity) -> f64 {
    let n = edge.axis().points();
    let x = edge.axis().nodes();
    let w = edge.grid().cell_weights();
    let (mut m0, mut m1, mut c) = (0.0, 0.0, 0.0);
    for (l, (&v, &wl)) in edge.values().iter().zip(&w).enumerate() {
        let p = v * wl;
        m0 += p * x[l / n];
        m1 += p * x[l % n];
        c += p * x[l / n] * x[l % n];
    }
    c - m0 * m1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
