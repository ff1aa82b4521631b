//! Pure-dephasing processes over Hamiltonian eigenspaces.
//!
//! A process is a nonnegative rate magnitude `γ̄_kℓ` for each cluster pair
//! `k > ℓ`; at decoherence strength `δ` the applied rate is `−δ γ̄_kℓ`.
//! A rate matrix is realizable by commuting Hermitian dephasing operators iff
//! its symmetric zero-diagonal extension is conditionally negative
//! semidefinite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::RateMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Eigenvalue threshold for the conditional negativity test.
pub const PHYSICALITY_TOL: f64 = 1e-10;
/// Candidate budget for [`sample_ensemble`].
pub const MAX_CANDIDATES: u64 = 10_000_000;
const SAMPLE_TAG: &str = "dephasing-candidate";

/// Eigenvalues `c_k` of a dephasing operator `V = Σ c_k Π_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DephasingOperator {
    pub c: Vec<f64>,
}

/// Strict lower triangle of a rate matrix, row-major:
/// `(1,0), (2,0), (2,1), (3,0), ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRates {
    dim: usize,
    values: Vec<f64>,
}

fn pair_count(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

fn pair_index(k: usize, l: usize) -> usize {
    debug_assert!(k > l);
    k * (k - 1) / 2 + l
}

impl RawRates {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("dephasing dimension {dim} < 2")));
        }
        if values.len() != pair_count(dim) {
            return Err(Error::DimensionMismatch { expected: pair_count(dim), found: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate magnitude {v} must be finite and >= 0")));
        }
        Ok(Self { dim, values })
    }

    /// Infers the dimension from the number of pairs.
    pub fn from_lower_triangle(values: Vec<f64>) -> Result<Self> {
        let dim = (0..=values.len() + 1)
            .find(|d| pair_count(*d) == values.len() && *d >= 2)
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not a triangular count", values.len())))?;
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Magnitude for the unordered pair `{k, l}`; zero on the diagonal.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        match k.cmp(&l) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => self.values[pair_index(k, l)],
            std::cmp::Ordering::Less => self.values[pair_index(l, k)],
        }
    }

    /// Symmetric zero-diagonal extension `G`.
    pub fn symmetric_extension(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |k, l| self.get(k, l))
    }

    fn abs_sum(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalityCheck {
    pub ok: bool,
    /// Largest eigenvalue of `G` restricted to the sum-zero subspace.
    pub max_eigenvalue: f64,
    /// Unit sum-zero vector with `xᵀ G x > 0`, when the check fails.
    pub witness: Option<Vec<f64>>,
}

/// Orthonormal basis of the complement of the all-ones vector (Helmert).
fn sum_zero_basis(dim: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim - 1);
    for j in 1..dim {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            p[(i, j - 1)] = scale;
        }
        p[(j, j - 1)] = -(j as f64) * scale;
    }
    p
}

pub fn is_physical(raw: &RawRates) -> PhysicalityCheck {
    let g = raw.symmetric_extension();
    let p = sum_zero_basis(raw.dim);
    let reduced = p.transpose() * g * &p;
    let eig = reduced.symmetric_eigen();
    let (top, max_eigenvalue) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("dim >= 2");
    let ok = max_eigenvalue <= PHYSICALITY_TOL;
    let witness = (!ok).then(|| {
        let mut x: DVector<f64> = &p * eig.eigenvectors.column(top);
        x /= x.norm();
        if let Some(first) = x.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                x.neg_mut();
            }
        }
        x.iter().copied().collect()
    });
    PhysicalityCheck { ok, max_eigenvalue, witness }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSource {
    Sampled { seed: u64, index: u64 },
    FromOperator,
    Explicit,
}

/// Rate magnitudes over cluster pairs with their physicality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct DephasingProcess {
    rates: RawRates,
    normalized: bool,
    certificate: PhysicalityCheck,
    source: ProcessSource,
}

impl DephasingProcess {
    pub fn dim(&self) -> usize {
        self.rates.dim
    }

    /// Strict lower triangle of `γ̄`, row-major.
    pub fn rates(&self) -> &[f64] {
        &self.rates.values
    }

    pub fn raw(&self) -> &RawRates {
        &self.rates
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn certificate(&self) -> &PhysicalityCheck {
        &self.certificate
    }

    pub fn source(&self) -> &ProcessSource {
        &self.source
    }

    /// Applied rates `γ_kℓ = −δ γ̄_kℓ`.
    pub fn rates_at(&self, delta: f64) -> RateMatrix {
        let g = self.rates.symmetric_extension() * -delta;
        // -δ·0 is -0.0 on the diagonal; RateMatrix wants exact zeros
        RateMatrix::new(g.map(|x| if x == 0.0 { 0.0 } else { x })).expect("nonnegative magnitudes")
    }

    /// Rebuilds a stored process, re-deriving its certificate.
    pub fn from_parts(rates: RawRates, normalized: bool, source: ProcessSource) -> Self {
        let certificate = is_physical(&rates);
        Self { rates, normalized, certificate, source }
    }

    /// Process with the given magnitudes, not normalized.
    pub fn explicit(raw: RawRates) -> Self {
        let certificate = is_physical(&raw);
        Self { rates: raw, normalized: false, certificate, source: ProcessSource::Explicit }
    }

    /// Same process scaled to unit L1 norm.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = normalize(&self.rates)?;
        out.source = self.source.clone();
        Ok(out)
    }
}

/// Single dephasing operator: magnitudes `½ (c_k − c_ℓ)²`, unnormalized.
pub fn from_operator(op: &DephasingOperator) -> Result<DephasingProcess> {
    let dim = op.c.len();
    if op.c.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("operator eigenvalues must be finite".into()));
    }
    let mut values = Vec::with_capacity(pair_count(dim));
    for k in 1..dim {
        for l in 0..k {
            values.push(0.5 * (op.c[k] - op.c[l]).powi(2));
        }
    }
    let raw = RawRates::new(dim, values)?;
    let certificate = is_physical(&raw);
    Ok(DephasingProcess { rates: raw, normalized: false, certificate, source: ProcessSource::FromOperator })
}

/// `dim (dim − 1) / 2` independent `Uniform[0, 1)` magnitudes.
pub fn sample_candidate<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<RawRates> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("dephasing dimension {dim} < 2")));
    }
    let values = (0..pair_count(dim)).map(|_| rng.gen_range(0.0..1.0)).collect();
    RawRates::new(dim, values)
}

/// Scales the magnitudes to unit L1 norm over the strict lower triangle.
pub fn normalize(raw: &RawRates) -> Result<DephasingProcess> {
    let total = raw.abs_sum();
    if total == 0.0 {
        return Err(Error::AllZeroRates);
    }
    let scaled = RawRates { dim: raw.dim, values: raw.values.iter().map(|v| v.abs() / total).collect() };
    let certificate = is_physical(&scaled);
    Ok(DephasingProcess { rates: scaled, normalized: true, certificate, source: ProcessSource::Explicit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    pub seed: u64,
    pub processes: Vec<DephasingProcess>,
    /// Candidates drawn up to and including the last accepted one.
    pub candidates: u64,
}

impl Ensemble {
    pub fn count(&self) -> usize {
        self.processes.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.processes.len() as f64 / self.candidates as f64
    }
}

/// Candidate `index` of the stream keyed by `seed`.
pub fn candidate(dim: usize, seed: u64, index: u64) -> Result<RawRates> {
    sample_candidate(dim, &mut seed::stream(seed, SAMPLE_TAG, index))
}

/// Rejection-samples `count` physical normalized processes.
///
/// Candidate `i` is drawn from its own stream keyed by `(seed, i)` and the
/// accepted set is the first `count` physical candidates in index order, so
/// the result does not depend on the thread pool.
pub fn sample_ensemble(dim: usize, count: usize, seed: u64) -> Result<Ensemble> {
    sample_ensemble_with_budget(dim, count, seed, MAX_CANDIDATES)
}

pub fn sample_ensemble_with_budget(dim: usize, count: usize, seed: u64, budget: u64) -> Result<Ensemble> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("dephasing dimension {dim} < 2")));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("ensemble count must be >= 1".into()));
    }
    const CHUNK: u64 = 4096;
    let mut processes = Vec::with_capacity(count);
    let mut next = 0u64;
    while processes.len() < count {
        if next >= budget {
            return Err(Error::SamplingBudget { requested: count, accepted: processes.len(), candidates: next });
        }
        let end = (next + CHUNK).min(budget);
        let accepted: Vec<(u64, RawRates)> = (next..end)
            .into_par_iter()
            .filter_map(|i| {
                let raw = candidate(dim, seed, i).expect("dim checked");
                is_physical(&raw).ok.then_some((i, raw))
            })
            .collect();
        for (index, raw) in accepted {
            if processes.len() == count {
                break;
            }
            let mut process = normalize(&raw)?;
            process.source = ProcessSource::Sampled { seed, index };
            processes.push(process);
            if processes.len() == count {
                next = index + 1;
            }
        }
        if processes.len() < count {
            next = end;
        }
    }
    Ok(Ensemble { dim, seed, processes, candidates: next })
}
