//! Brute-force reference implementations shared by the integration tests.
//! They follow the textbook definitions directly and favour clarity over speed.
#![allow(dead_code)]

use poolcheck::TokenMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn gaussian_mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

pub fn to_tm(m: &Mat) -> TokenMatrix {
    TokenMatrix::from_rows(m).unwrap()
}

pub fn transpose(m: &Mat) -> Mat {
    let (r, c) = (m.len(), m[0].len());
    (0..c).map(|j| (0..r).map(|i| m[i][j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn trace(m: &Mat) -> f64 {
    (0..m.len()).map(|i| m[i][i]).sum()
}

pub fn frob2(m: &Mat) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

pub fn center_columns(m: &Mat) -> Mat {
    let n = m.len() as f64;
    let cols = m[0].len();
    let means: Vec<f64> = (0..cols).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    m.iter()
        .map(|r| r.iter().zip(&means).map(|(v, mu)| v - mu).collect())
        .collect()
}

/// `||Y'X||_F² / (||X'X||_F ||Y'Y||_F)` on column-centered inputs.
pub fn cka_oracle(x: &Mat, y: &Mat) -> f64 {
    let (x, y) = (center_columns(x), center_columns(y));
    let yx = matmul(&transpose(&y), &x);
    let xx = matmul(&transpose(&x), &x);
    let yy = matmul(&transpose(&y), &y);
    frob2(&yx) / (frob2(&xx).sqrt() * frob2(&yy).sqrt())
}

/// `tr(Sxy Syx) / sqrt(tr(Sxx²) tr(Syy²))` with explicit scatter matrices.
pub fn rv_oracle(x: &Mat, y: &Mat) -> f64 {
    let (x, y) = (center_columns(x), center_columns(y));
    let sxy = matmul(&transpose(&x), &y);
    let syx = matmul(&transpose(&y), &x);
    let sxx = matmul(&transpose(&x), &x);
    let syy = matmul(&transpose(&y), &y);
    trace(&matmul(&sxy, &syx)) / (trace(&matmul(&sxx, &sxx)) * trace(&matmul(&syy, &syy))).sqrt()
}

pub fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Gaussian elimination with partial pivoting on a square system.
pub fn solve(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Standardized OLS through the normal equations: `(Z'Z) beta = Z'y` on
/// z-scored columns; returns the betas and R².
pub fn ols_oracle(y: &[f64], xs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let zy = zscore(y);
    let zx: Vec<Vec<f64>> = xs.iter().map(|c| zscore(c)).collect();
    let p = zx.len();
    let gram: Mat = (0..p)
        .map(|i| (0..p).map(|j| zx[i].iter().zip(&zx[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let rhs: Vec<f64> = zx.iter().map(|c| c.iter().zip(&zy).map(|(a, b)| a * b).sum()).collect();
    let beta = solve(gram, rhs);
    let ssr: f64 = (0..y.len())
        .map(|i| {
            let fit: f64 = (0..p).map(|j| beta[j] * zx[j][i]).sum();
            (zy[i] - fit).powi(2)
        })
        .sum();
    let sst: f64 = zy.iter().map(|v| v * v).sum();
    (beta, 1.0 - ssr / sst)
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (zx, zy) = (zscore(x), zscore(y));
    zx.iter().zip(&zy).map(|(a, b)| a * b).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Mat {
    let mut q: Mat = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

/// Occurrence-order alignment by definition: for each surface form, pair its
/// k-th occurrence in `a` with its k-th occurrence in `b`.
pub fn alignment_oracle(a: &[&str], b: &[&str]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, tok) in a.iter().enumerate() {
        let k = a[..i].iter().filter(|t| *t == tok).count();
        if let Some(j) = b.iter().enumerate().filter(|(_, t)| *t == tok).map(|(j, _)| j).nth(k) {
            out.push((i, j));
        }
    }
    out
}
