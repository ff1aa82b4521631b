//! Clustered eigendecomposition of real symmetric Hamiltonians into spectral
//! projectors, plus first-order derivatives of simple eigenvectors and their
//! projectors under a structured perturbation `H + δ S`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenspaces of a real symmetric matrix, one entry per eigenvalue cluster.
#[derive(Debug, Clone)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    projectors: Vec<DMatrix<f64>>,
    multiplicities: Vec<usize>,
    cluster_tol: f64,
    // orthonormal eigenvectors, ascending, grouped by cluster
    basis: DMatrix<f64>,
    cluster_of: Vec<usize>,
}

/// Default clustering tolerance for `h`: `1e-8 (1 + max |h_ij|)`.
pub fn default_cluster_tol(h: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + h.amax())
}

fn asymmetry(h: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in 0..i {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

/// Flips `v` so its largest-magnitude entry is positive (first one on ties).
fn fix_sign(v: &mut DVector<f64>) {
    let max = v.amax();
    if let Some(pivot) = v.iter().position(|x| x.abs() >= max - 1e-12 * max) {
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
    }
}

pub fn decompose(h: &DMatrix<f64>, cluster_tol: Option<f64>) -> Result<SpectralData> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), found: h.ncols() });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let skew = asymmetry(h);
    if skew > 1e-12 * (1.0 + h.amax()) {
        return Err(Error::NotSymmetric(skew));
    }
    let cluster_tol = cluster_tol.unwrap_or_else(|| default_cluster_tol(h));
    if !(cluster_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("cluster tolerance {cluster_tol} < 0")));
    }

    let n = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut basis = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut v);
        basis.set_column(col, &v);
    }
    let sorted: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut cluster_of = Vec::with_capacity(n);
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, &lambda) in sorted.iter().enumerate() {
        if i > 0 && lambda - sorted[i - 1] <= cluster_tol {
            members.last_mut().unwrap().push(i);
        } else {
            members.push(vec![i]);
        }
        cluster_of.push(members.len() - 1);
    }

    let eigenvalues = members
        .iter()
        .map(|m| m.iter().map(|&i| sorted[i]).sum::<f64>() / m.len() as f64)
        .collect();
    let projectors = members
        .iter()
        .map(|m| {
            let mut p = DMatrix::zeros(n, n);
            for &i in m {
                let v = basis.column(i);
                p += v * v.transpose();
            }
            p
        })
        .collect();
    let multiplicities = members.iter().map(Vec::len).collect();

    Ok(SpectralData { eigenvalues, projectors, multiplicities, cluster_tol, basis, cluster_of })
}

impl SpectralData {
    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn projectors(&self) -> &[DMatrix<f64>] {
        &self.projectors
    }

    pub fn projector(&self, k: usize) -> &DMatrix<f64> {
        &self.projectors[k]
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn cluster_tol(&self) -> f64 {
        self.cluster_tol
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_clusters() < self.dim()
    }

    /// Orthonormal eigenvectors as columns, ascending and grouped by cluster.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Cluster index of each basis column.
    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    /// `Σ_k λ_k Π_k`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(DMatrix::zeros(n, n), |acc, (l, p)| acc + p * *l)
    }

    /// `⟨out|Π_k|in⟩` for every cluster.
    pub fn overlaps(&self, input: usize, output: usize) -> Vec<f64> {
        self.projectors.iter().map(|p| p[(output, input)]).collect()
    }

    fn simple_vector(&self, k: usize) -> Result<usize> {
        if k >= self.n_clusters() {
            return Err(Error::InvalidArgument(format!(
                "cluster {k} out of range ({} clusters)",
                self.n_clusters()
            )));
        }
        if self.multiplicities[k] != 1 {
            return Err(Error::Degenerate { cluster: k, multiplicity: self.multiplicities[k] });
        }
        Ok(self.cluster_of.iter().position(|&c| c == k).unwrap())
    }

    /// Returns an error naming the first multiplicity above one, if any.
    pub fn require_simple(&self) -> Result<()> {
        match self.multiplicities.iter().position(|&m| m != 1) {
            Some(k) => Err(Error::Degenerate { cluster: k, multiplicity: self.multiplicities[k] }),
            None => Ok(()),
        }
    }
}

/// Shape of a Hamiltonian perturbation `δ S`; the strength `δ` is supplied
/// by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStructure {
    matrix: DMatrix<f64>,
    label: String,
}

impl PerturbationStructure {
    /// Normalizes `matrix` to unit Frobenius norm.
    pub fn new(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let norm = matrix.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("perturbation structure is zero".into()));
        }
        Self::raw(matrix / norm, label)
    }

    /// Keeps `matrix` unscaled.
    pub fn raw(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("perturbation has non-finite entries".into()));
        }
        let skew = asymmetry(&matrix);
        if skew > 0.0 {
            return Err(Error::NotSymmetric(skew));
        }
        Ok(Self { matrix, label: label.into() })
    }

    /// Error in the bias at `site` (zero-based).
    pub fn bias(n: usize, site: usize) -> Result<Self> {
        if site >= n {
            return Err(Error::InvalidArgument(format!("bias site {site} out of range")));
        }
        let mut m = DMatrix::zeros(n, n);
        m[(site, site)] = 1.0;
        Self::new(m, format!("bias-{}", site + 1))
    }

    /// Error in the coupling between `a` and `b` (zero-based).
    pub fn coupling(n: usize, a: usize, b: usize) -> Result<Self> {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidArgument(format!("invalid coupling pair ({a}, {b})")));
        }
        let mut m = DMatrix::zeros(n, n);
        m[(a, b)] = 1.0;
        m[(b, a)] = 1.0;
        Self::new(m, format!("coupling-{}-{}", a.min(b) + 1, a.max(b) + 1))
    }

    /// Uniform energy shift.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n), "identity")
    }

    /// Parses `bias:K`, `coupling:M-N` (one-based) or `identity`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized perturbation structure '{text}'"));
        let one_based = |s: &str| -> Result<usize> {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            v.checked_sub(1).ok_or_else(bad)
        };
        match text.split_once(':') {
            None if text == "identity" => Self::identity(n),
            Some(("bias", site)) => Self::bias(n, one_based(site)?),
            Some(("coupling", pair)) => {
                let (a, b) = pair.split_once('-').ok_or_else(bad)?;
                Self::coupling(n, one_based(a)?, one_based(b)?)
            }
            _ => Err(bad()),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True for multiples of the identity, which move no eigenvector.
    pub fn is_scalar(&self) -> bool {
        let m = &self.matrix;
        let d = m[(0, 0)];
        (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == if i == j { d } else { 0.0 }))
    }
}

/// `∂v_k/∂δ = Σ_{j≠k} (v_jᵀ S v_k) / (λ_k − λ_j) v_j` at `δ = 0`.
///
/// Only cluster `k` must be simple: the sum over any degenerate cluster `j`
/// is the basis-independent `Π_j S v_k / (λ_k − λ_j)`.
pub fn eigvec_derivative(
    spec: &SpectralData,
    structure: &PerturbationStructure,
    k: usize,
) -> Result<DVector<f64>> {
    if structure.matrix.nrows() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: structure.matrix.nrows() });
    }
    let col = spec.simple_vector(k)?;
    let vk = spec.basis.column(col);
    let s_vk = &structure.matrix * vk;
    let lambda_k = spec.eigenvalues[k];
    let mut out = DVector::zeros(spec.dim());
    if structure.is_scalar() {
        return Ok(out);
    }
    for j in 0..spec.dim() {
        let cluster = spec.cluster_of[j];
        if cluster == k {
            continue;
        }
        let vj = spec.basis.column(j);
        let coeff = vj.dot(&s_vk) / (lambda_k - spec.eigenvalues[cluster]);
        out.axpy(coeff, &vj, 1.0);
    }
    Ok(out)
}

/// `∂Π_k/∂δ = (∂v_k) v_kᵀ + v_k (∂v_k)ᵀ` for a simple cluster `k`.
pub fn projector_derivative(
    spec: &SpectralData,
    structure: &PerturbationStructure,
    k: usize,
) -> Result<DMatrix<f64>> {
    let dv = eigvec_derivative(spec, structure, k)?;
    let col = spec.simple_vector(k)?;
    let vk = spec.basis.column(col);
    let outer = &dv * vk.transpose();
    Ok(&outer + outer.transpose())
}
