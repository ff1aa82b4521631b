//! Exact dephased dynamics in the single-excitation subspace.
//!
//! Every coherence block `Π_k ρ Π_ℓ` evolves independently as
//! `exp((γ_kℓ − iω_kℓ) t)` with `ω_kℓ = λ_k − λ_ℓ` and `γ_kℓ ≤ 0`, so states,
//! window averages and steady states are all closed-form sums over blocks.
//! Blocks are handled in the eigenbasis, where each one is a sub-matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralData;

/// Readout specification for an excitation transfer `in → out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    /// Zero-based input node.
    pub input: usize,
    /// Zero-based output node.
    pub output: usize,
    /// Readout time `T`.
    pub read_time: f64,
    /// Half width `δT` of the readout window; 0 means instantaneous.
    pub window_half_width: f64,
}

impl TransferSpec {
    pub fn new(n_spins: usize, input: usize, output: usize, read_time: f64, window_half_width: f64) -> Result<Self> {
        let spec = Self { input, output, read_time, window_half_width };
        spec.validate(n_spins)?;
        Ok(spec)
    }

    pub fn instant(n_spins: usize, input: usize, output: usize, read_time: f64) -> Result<Self> {
        Self::new(n_spins, input, output, read_time, 0.0)
    }

    pub fn validate(&self, n_spins: usize) -> Result<()> {
        if self.input >= n_spins || self.output >= n_spins {
            return Err(Error::InvalidArgument(format!(
                "transfer {} -> {} out of range for {n_spins} nodes",
                self.input, self.output
            )));
        }
        if !(self.read_time >= 0.0) || !self.read_time.is_finite() {
            return Err(Error::NegativeTime(self.read_time));
        }
        if !(self.window_half_width >= 0.0) || !self.window_half_width.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "window half width {} must be >= 0",
                self.window_half_width
            )));
        }
        Ok(())
    }

    pub fn is_window(&self) -> bool {
        self.window_half_width > 0.0
    }

    pub fn with_read_time(self, read_time: f64) -> Self {
        Self { read_time, ..self }
    }
}

/// Symmetric matrix of applied dephasing rates `γ_kℓ ≤ 0` over eigenvalue
/// clusters, zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(DMatrix<f64>);

impl RateMatrix {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::DimensionMismatch { expected: gamma.nrows(), found: gamma.ncols() });
        }
        for k in 0..gamma.nrows() {
            if gamma[(k, k)] != 0.0 {
                return Err(Error::InvalidArgument(format!("rate γ_{k}{k} must be zero")));
            }
            for l in 0..k {
                let g = gamma[(k, l)];
                if g != gamma[(l, k)] {
                    return Err(Error::NotSymmetric((g - gamma[(l, k)]).abs()));
                }
                if !(g <= 0.0) || !g.is_finite() {
                    return Err(Error::InvalidArgument(format!("rate γ_{k}{l} = {g} must be <= 0")));
                }
            }
        }
        Ok(Self(gamma))
    }

    /// No dephasing.
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0[(k, l)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Smallest nonzero decay magnitude `min |γ_kℓ|`, if any rate is nonzero.
    pub fn min_magnitude(&self) -> Option<f64> {
        self.0.iter().filter(|g| **g != 0.0).map(|g| g.abs()).reduce(f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|g| *g == 0.0)
    }
}

/// Hermitian, unit-trace, positive semidefinite `N×N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(DMatrix<Complex64>);

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-10;

impl DensityMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self(entries);
        rho.check()?;
        Ok(rho)
    }

    /// `|node⟩⟨node|`.
    pub fn pure(n: usize, node: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        m[(node, node)] = Complex64::new(1.0, 0.0);
        Self(m)
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    /// `⟨node|ρ|node⟩`.
    pub fn population(&self, node: usize) -> f64 {
        self.0[(node, node)].re
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn check(&self) -> Result<()> {
        let m = &self.0;
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidArgument(format!("density matrix not Hermitian ({herm:e})")));
        }
        let trace = self.trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidArgument(format!("density matrix trace {trace}")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidArgument(format!("density matrix eigenvalue {min_eig}")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_rates(spec: &SpectralData, rates: Option<&RateMatrix>) -> Result<()> {
    match rates {
        Some(r) if r.dim() != spec.n_clusters() => {
            Err(Error::DimensionMismatch { expected: spec.n_clusters(), found: r.dim() })
        }
        _ => Ok(()),
    }
}

fn rate(rates: Option<&RateMatrix>, k: usize, l: usize) -> f64 {
    rates.map_or(0.0, |r| r.get(k, l))
}

/// `(e^x − 1) / x`, accurate near zero.
fn exprel(x: Complex64) -> Complex64 {
    if x.norm() < 1e-4 {
        let one = Complex64::new(1.0, 0.0);
        one + x / 2.0 + x * x / 6.0 + x * x * x / 24.0
    } else {
        (x.exp() - 1.0) / x
    }
}

/// Mean of `exp(z t)` over `t ∈ [center − half, center + half]`.
fn window_mean(z: Complex64, center: f64, half: f64) -> Complex64 {
    let start = center - half;
    (z * start).exp() * exprel(z * (2.0 * half))
}

/// `Σ_{kℓ} f(ω_kℓ, γ_kℓ) Π_k ρ0 Π_ℓ`, computed in the eigenbasis.
fn block_map(
    spec: &SpectralData,
    rho0: &DensityMatrix,
    rates: Option<&RateMatrix>,
    factor: impl Fn(f64, f64) -> Complex64,
) -> DensityMatrix {
    let v = spec.basis().map(|x| Complex64::new(x, 0.0));
    let mut inner = v.transpose() * rho0.as_matrix() * &v;
    let clusters = spec.cluster_of();
    let lambda = spec.eigenvalues();
    let n = spec.dim();
    for a in 0..n {
        for b in 0..n {
            let (k, l) = (clusters[a], clusters[b]);
            if k != l {
                inner[(a, b)] *= factor(lambda[k] - lambda[l], rate(rates, k, l));
            }
        }
    }
    let out = &v * inner * v.transpose();
    // re-symmetrize to keep roundoff from breaking Hermiticity
    let herm = (&out + out.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix(herm)
}

fn check_dim(spec: &SpectralData, rho0: &DensityMatrix) -> Result<()> {
    if rho0.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: rho0.dim() });
    }
    Ok(())
}

/// State at time `t` under the (optional) dephasing rates.
pub fn evolve(
    spec: &SpectralData,
    rho0: &DensityMatrix,
    t: f64,
    rates: Option<&RateMatrix>,
) -> Result<DensityMatrix> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    check_dim(spec, rho0)?;
    check_rates(spec, rates)?;
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    Ok(block_map(spec, rho0, rates, |omega, gamma| {
        Complex64::new(gamma * t, -omega * t).exp()
    }))
}

fn check_window(center: f64, half: f64, rates: Option<&RateMatrix>) -> Result<()> {
    if !(half > 0.0) {
        return Err(Error::InvalidArgument(format!("window half width {half} must be > 0")));
    }
    if !(center >= 0.0) {
        return Err(Error::NegativeTime(center));
    }
    // dephased dynamics are only defined forward in time
    if center - half < 0.0 && rates.is_some_and(|r| !r.is_zero()) {
        return Err(Error::NegativeTime(center - half));
    }
    Ok(())
}

/// Time average of the state over `[center − half, center + half]`.
pub fn window_average(
    spec: &SpectralData,
    rho0: &DensityMatrix,
    center: f64,
    half: f64,
    rates: Option<&RateMatrix>,
) -> Result<DensityMatrix> {
    check_window(center, half, rates)?;
    check_dim(spec, rho0)?;
    check_rates(spec, rates)?;
    Ok(block_map(spec, rho0, rates, |omega, gamma| {
        window_mean(Complex64::new(gamma, -omega), center, half)
    }))
}

/// Output state of a transfer: instantaneous or window-averaged.
pub fn readout_state(
    spec: &SpectralData,
    transfer: &TransferSpec,
    rates: Option<&RateMatrix>,
) -> Result<DensityMatrix> {
    let rho0 = DensityMatrix::pure(spec.dim(), transfer.input);
    if transfer.is_window() {
        window_average(spec, &rho0, transfer.read_time, transfer.window_half_width, rates)
    } else {
        evolve(spec, &rho0, transfer.read_time, rates)
    }
}

/// `Σ_{kℓ} y_k y_ℓ Re f(ω_kℓ, γ_kℓ)` with `y_k = ⟨out|Π_k|in⟩`.
fn overlap_quadratic(
    spec: &SpectralData,
    transfer: &TransferSpec,
    rates: Option<&RateMatrix>,
    factor: impl Fn(f64, f64) -> Complex64,
) -> Result<f64> {
    transfer.validate(spec.dim())?;
    check_rates(spec, rates)?;
    let y = spec.overlaps(transfer.input, transfer.output);
    let lambda = spec.eigenvalues();
    let mut p = 0.0;
    for k in 0..y.len() {
        p += y[k] * y[k];
        for l in 0..k {
            p += 2.0 * y[k] * y[l] * factor(lambda[k] - lambda[l], rate(rates, k, l)).re;
        }
    }
    Ok(p)
}

/// `⟨out|ρ(T)|out⟩` for `ρ(0) = |in⟩⟨in|`.
pub fn instant_fidelity(spec: &SpectralData, transfer: &TransferSpec, rates: Option<&RateMatrix>) -> Result<f64> {
    let t = transfer.read_time;
    overlap_quadratic(spec, transfer, rates, |omega, gamma| Complex64::new(gamma * t, -omega * t).exp())
}

/// Mean of `⟨out|ρ(t)|out⟩` over `[T − δT, T + δT]`, in closed form.
pub fn window_fidelity(spec: &SpectralData, transfer: &TransferSpec, rates: Option<&RateMatrix>) -> Result<f64> {
    let (center, half) = (transfer.read_time, transfer.window_half_width);
    check_window(center, half, rates)?;
    overlap_quadratic(spec, transfer, rates, |omega, gamma| {
        window_mean(Complex64::new(gamma, -omega), center, half)
    })
}

/// Instantaneous or window fidelity, depending on the readout specification.
pub fn transfer_fidelity(spec: &SpectralData, transfer: &TransferSpec, rates: Option<&RateMatrix>) -> Result<f64> {
    if transfer.is_window() {
        window_fidelity(spec, transfer, rates)
    } else {
        instant_fidelity(spec, transfer, rates)
    }
}

/// `ρ∞ = Σ_k Π_k ρ0 Π_k`.
pub fn steady_state(spec: &SpectralData, rho0: &DensityMatrix) -> Result<DensityMatrix> {
    check_dim(spec, rho0)?;
    Ok(block_map(spec, rho0, None, |_, _| Complex64::new(0.0, 0.0)))
}

/// `Σ_k ⟨out|Π_k|in⟩²`, the coherent long-term average and the dephased
/// asymptote of the transfer fidelity.
pub fn longterm_average_fidelity(spec: &SpectralData, transfer: &TransferSpec) -> Result<f64> {
    transfer.validate(spec.dim())?;
    Ok(spec.overlaps(transfer.input, transfer.output).iter().map(|y| y * y).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapNorms {
    /// `Σ y_k²`.
    pub l2_sq: f64,
    /// `Σ |y_k|`; perfect coherent transfer requires this to reach 1.
    pub l1: f64,
}

pub fn overlap_norms(spec: &SpectralData, transfer: &TransferSpec) -> Result<OverlapNorms> {
    transfer.validate(spec.dim())?;
    let y = spec.overlaps(transfer.input, transfer.output);
    Ok(OverlapNorms { l2_sq: y.iter().map(|v| v * v).sum(), l1: y.iter().map(|v| v.abs()).sum() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{reduced_hamiltonian, BiasField, SpinNetwork};
    use crate::spectral::decompose;
    use std::f64::consts::PI;

    fn spectrum(net: &SpinNetwork, bias: &[f64]) -> SpectralData {
        let h = reduced_hamiltonian(net, &BiasField::new(bias.to_vec()).unwrap()).unwrap();
        decompose(&h, None).unwrap()
    }

    fn two_level() -> SpectralData {
        spectrum(&SpinNetwork::chain(2, 1.0).unwrap(), &[0.0, 0.0])
    }

    fn ring3() -> SpectralData {
        spectrum(&SpinNetwork::ring(3, 1.0).unwrap(), &[0.0; 3])
    }

    fn pair_rate(g: f64) -> RateMatrix {
        RateMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, g, g, 0.0])).unwrap()
    }

    #[test]
    fn two_level_full_transfer() {
        let spec = two_level();
        let rho = evolve(&spec, &DensityMatrix::pure(2, 0), PI / 2.0, None).unwrap();
        assert!((rho.population(1) - 1.0).abs() < 1e-15);
        rho.check().unwrap();
    }

    #[test]
    fn identity_at_time_zero() {
        let spec = two_level();
        let rho0 = DensityMatrix::from_real(&DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.2, 0.7])).unwrap();
        assert_eq!(evolve(&spec, &rho0, 0.0, Some(&pair_rate(-3.0))).unwrap(), rho0);
    }

    #[test]
    fn two_level_dephased_transfer() {
        let spec = two_level();
        let rho = evolve(&spec, &DensityMatrix::pure(2, 0), PI / 2.0, Some(&pair_rate(-1.0))).unwrap();
        let expected = 0.5 * (1.0 + (-PI / 2.0).exp());
        assert!((rho.population(1) - expected).abs() < 1e-15);
        assert!((expected - 0.60394).abs() < 1e-5);
    }

    #[test]
    fn evolve_errors() {
        let spec = two_level();
        let rho0 = DensityMatrix::pure(2, 0);
        assert_eq!(evolve(&spec, &rho0, -1.0, None), Err(Error::NegativeTime(-1.0)));
        let wrong = RateMatrix::zeros(3);
        assert!(matches!(
            evolve(&spec, &rho0, 1.0, Some(&wrong)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn instant_examples() {
        let spec = two_level();
        let f = |t| instant_fidelity(&spec, &TransferSpec::instant(2, 0, 1, t).unwrap(), None).unwrap();
        assert!((f(PI / 2.0) - 1.0).abs() < 1e-15);
        assert!((f(PI / 4.0) - 0.5).abs() < 1e-15);
        let stay = TransferSpec::instant(2, 1, 1, 0.0).unwrap();
        assert!((instant_fidelity(&spec, &stay, None).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_examples() {
        let spec = two_level();
        let w = |t, dt| window_fidelity(&spec, &TransferSpec::new(2, 0, 1, t, dt).unwrap(), None).unwrap();
        // mean of sin² over [π/4, 3π/4]
        assert!((w(PI / 2.0, PI / 4.0) - (0.5 + 1.0 / PI)).abs() < 1e-14);
        // a full period of sin² averages to ½ wherever it sits
        for t in [0.0, 0.7, 3.0, 10.0] {
            assert!((w(t, PI / 2.0) - 0.5).abs() < 1e-14, "T = {t}");
        }
        let narrow = w(1.1, 1e-4);
        let instant = instant_fidelity(&spec, &TransferSpec::instant(2, 0, 1, 1.1).unwrap(), None).unwrap();
        assert!((narrow - instant).abs() < 1e-6);
    }

    #[test]
    fn window_errors() {
        let spec = two_level();
        let zero = TransferSpec::new(2, 0, 1, 1.0, 0.0).unwrap();
        assert!(window_fidelity(&spec, &zero, None).is_err());
        // window reaching before t = 0 is fine coherently, not under dephasing
        let early = TransferSpec::new(2, 0, 1, 0.5, 1.0).unwrap();
        assert!(window_fidelity(&spec, &early, None).is_ok());
        assert_eq!(
            window_fidelity(&spec, &early, Some(&pair_rate(-1.0))),
            Err(Error::NegativeTime(-0.5))
        );
    }

    #[test]
    fn window_state_matches_window_fidelity() {
        let spec = spectrum(&SpinNetwork::ring(4, 1.0).unwrap(), &[0.4, -0.3, 1.1, 0.0]);
        let rates = RateMatrix::new(DMatrix::from_fn(4, 4, |k, l| if k == l { 0.0 } else { -0.1 * (k + l) as f64 })).unwrap();
        let transfer = TransferSpec::new(4, 0, 2, 3.0, 0.8).unwrap();
        let rho = readout_state(&spec, &transfer, Some(&rates)).unwrap();
        let p = window_fidelity(&spec, &transfer, Some(&rates)).unwrap();
        assert!((rho.population(2) - p).abs() < 1e-14);
        rho.check().unwrap();
    }

    #[test]
    fn steady_state_examples() {
        let spec = two_level();
        let inf = steady_state(&spec, &DensityMatrix::pure(2, 0)).unwrap();
        let half = DMatrix::<Complex64>::identity(2, 2) * Complex64::new(0.5, 0.0);
        assert!((inf.as_matrix() - half).iter().all(|z| z.norm() < 1e-15));

        let ring = ring3();
        let fixed = DensityMatrix::from_real(&(ring.projector(1) / ring.projector(1).trace())).unwrap();
        let again = steady_state(&ring, &fixed).unwrap();
        assert!((again.as_matrix() - fixed.as_matrix()).iter().all(|z| z.norm() < 1e-15));

        let rho = steady_state(&ring, &DensityMatrix::pure(3, 0)).unwrap();
        assert!((rho.population(1) - 2.0 / 9.0).abs() < 1e-15);
        rho.check().unwrap();
    }

    #[test]
    fn longterm_examples() {
        let t = |n, i, o| TransferSpec::instant(n, i, o, 0.0).unwrap();
        assert!((longterm_average_fidelity(&two_level(), &t(2, 0, 1)).unwrap() - 0.5).abs() < 1e-15);
        assert!((longterm_average_fidelity(&ring3(), &t(3, 0, 1)).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        let net = crate::network::build_network(
            crate::network::Topology::Chain,
            3,
            crate::network::Couplings::Uniform(0.0),
            0.0,
        )
        .unwrap();
        let isolated = spectrum(&net, &[1.0, 2.0, 3.0]);
        assert_eq!(longterm_average_fidelity(&isolated, &t(3, 1, 1)).unwrap(), 1.0);
    }

    #[test]
    fn overlap_norm_examples() {
        let t = |n, i, o| TransferSpec::instant(n, i, o, 0.0).unwrap();
        let norms = overlap_norms(&two_level(), &t(2, 0, 1)).unwrap();
        assert!((norms.l2_sq - 0.5).abs() < 1e-15 && (norms.l1 - 1.0).abs() < 1e-15);
        let norms = overlap_norms(&ring3(), &t(3, 0, 1)).unwrap();
        assert!((norms.l1 - 2.0 / 3.0).abs() < 1e-15);
        let same = overlap_norms(&ring3(), &t(3, 2, 2)).unwrap();
        assert!((same.l1 - 1.0).abs() < 1e-15 && same.l1 >= same.l2_sq);
    }

    #[test]
    fn rate_matrix_validation() {
        assert!(RateMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).is_err());
        assert!(RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, -0.5, -0.5, 0.0])).is_err());
        assert!(RateMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -0.5, -0.4, 0.0])).is_err());
        assert_eq!(pair_rate(-0.5).min_magnitude(), Some(0.5));
        assert_eq!(RateMatrix::zeros(3).min_magnitude(), None);
    }

    #[test]
    fn density_validation() {
        let bad_trace = DMatrix::from_diagonal_element(2, 2, Complex64::new(0.6, 0.0));
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, -0.5]);
        assert!(DensityMatrix::from_real(&negative).is_err());
        let mut nonherm = DMatrix::from_diagonal_element(2, 2, Complex64::new(0.5, 0.0));
        nonherm[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(DensityMatrix::new(nonherm).is_err());
    }
}
