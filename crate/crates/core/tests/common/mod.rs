//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMatrix = DMatrix<Complex64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn max_entry(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalue clusters of a symmetric matrix as `(value, projector)` pairs,
/// grouping eigenvalues closer than `tol` to their sorted neighbour.
pub fn eigen_projectors(h: &DMatrix<f64>, tol: f64) -> Vec<(f64, DMatrix<f64>)> {
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut out: Vec<(f64, DMatrix<f64>, usize)> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in order {
        let lambda = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        let p = v * v.transpose();
        match out.last_mut() {
            Some((mean, proj, m)) if lambda - last <= tol => {
                *proj += p;
                *mean = (*mean * *m as f64 + lambda) / (*m + 1) as f64;
                *m += 1;
            }
            _ => out.push((lambda, p, 1)),
        }
        last = lambda;
    }
    out.into_iter().map(|(l, p, _)| (l, p)).collect()
}

/// Column-stacking `vec`: `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn vectorize(m: &CMatrix) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvectorize(v: &DVector<Complex64>, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

/// Liouvillian of `dρ/dt = −i[H, ρ] + Σ_{k≠ℓ} γ_kℓ Π_k ρ Π_ℓ` acting on `vec(ρ)`.
pub fn block_liouvillian(h: &DMatrix<f64>, projectors: &[DMatrix<f64>], gamma: &DMatrix<f64>) -> CMatrix {
    let n = h.nrows();
    let id = CMatrix::identity(n, n);
    let hc = complex(h);
    let i = Complex64::new(0.0, 1.0);
    let mut l = (kron(&id, &hc) - kron(&hc.transpose(), &id)) * -i;
    for (k, pk) in projectors.iter().enumerate() {
        for (m, pm) in projectors.iter().enumerate() {
            if k != m && gamma[(k, m)] != 0.0 {
                l += kron(&complex(&pm.transpose()), &complex(pk)) * Complex64::new(gamma[(k, m)], 0.0);
            }
        }
    }
    l
}

/// Liouvillian of the Lindblad equation with one Hermitian jump operator `c`:
/// `dρ/dt = −i[H, ρ] + c ρ c − ½{c², ρ}`.
pub fn lindblad_liouvillian(h: &DMatrix<f64>, c: &DMatrix<f64>) -> CMatrix {
    let n = h.nrows();
    let id = CMatrix::identity(n, n);
    let hc = complex(h);
    let cc = complex(c);
    let c2 = &cc * &cc;
    let i = Complex64::new(0.0, 1.0);
    let half = Complex64::new(0.5, 0.0);
    (kron(&id, &hc) - kron(&hc.transpose(), &id)) * -i + kron(&cc.transpose(), &cc)
        - (kron(&id, &c2) + kron(&c2.transpose(), &id)) * half
}

/// Classical fourth-order Runge–Kutta for `dρ/dt = L ρ` with a fixed step of
/// at most `max_step`, reporting the state at each requested time.
pub fn rk4(l: &CMatrix, rho0: &CMatrix, times: &[f64], max_step: f64) -> Vec<CMatrix> {
    let n = rho0.nrows();
    let mut v = vectorize(rho0);
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let half = Complex64::new(0.5, 0.0);
    for &t in times {
        assert!(t >= now, "times must be increasing");
        let steps = ((t - now) / max_step).ceil().max(1.0) as usize;
        let h = (t - now) / steps as f64;
        let hc = Complex64::new(h, 0.0);
        // the RK4 update for a linear system is a fixed matrix polynomial
        let a = l * hc;
        let a2 = &a * &a;
        let a3 = &a2 * &a;
        let a4 = &a3 * &a;
        let step = CMatrix::identity(a.nrows(), a.ncols())
            + &a
            + &a2 * half
            + &a3 * Complex64::new(1.0 / 6.0, 0.0)
            + &a4 * Complex64::new(1.0 / 24.0, 0.0);
        for _ in 0..steps {
            v = &step * v;
        }
        now = t;
        out.push(unvectorize(&v, n));
    }
    out
}

/// Largest singular value of a complex matrix.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    m.clone().singular_values().max()
}

pub fn pure(n: usize, node: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(node, node)] = Complex64::new(1.0, 0.0);
    m
}

/// Full Hamiltonian from explicit Kronecker products of Pauli matrices.
pub fn kron_hamiltonian(n: usize, edges: &[(usize, usize, f64)], kappa: f64, bias: &[f64]) -> CMatrix {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let x = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
    let y = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
    let z = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
    let id = CMatrix::identity(2, 2);
    let op = |factors: &[(usize, &CMatrix)]| {
        let mut acc = CMatrix::identity(1, 1);
        for site in 0..n {
            let f = factors.iter().find(|(s, _)| *s == site).map_or(&id, |(_, m)| *m);
            acc = kron(&acc, f);
        }
        acc
    };
    let dim = 1 << n;
    let mut h = CMatrix::zeros(dim, dim);
    for &(a, b, j) in edges {
        let jc = c(j, 0.0);
        h += (op(&[(a, &x), (b, &x)]) + op(&[(a, &y), (b, &y)]) + op(&[(a, &z), (b, &z)]) * c(kappa, 0.0)) * jc;
    }
    for (site, &d) in bias.iter().enumerate() {
        h += op(&[(site, &z)]) * c(d, 0.0);
    }
    h
}

/// Max eigenvalue of `G` on the sum-zero subspace via the centering
/// projector `I − 11ᵀ/n`; the all-ones direction contributes a zero.
pub fn centered_max_eigenvalue(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let m = &j * g * &j;
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Symmetric zero-diagonal matrix from a row-major strict lower triangle.
pub fn from_lower(dim: usize, values: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, dim);
    let mut it = values.iter();
    for k in 1..dim {
        for l in 0..k {
            let v = *it.next().unwrap();
            g[(k, l)] = v;
            g[(l, k)] = v;
        }
    }
    g
}

/// Textbook two-pass Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Smallest gap between sorted eigenvalues.
pub fn min_gap(h: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}
