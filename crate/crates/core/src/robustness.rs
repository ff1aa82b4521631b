//! Robustness of controllers to dephasing and to structured Hamiltonian
//! perturbations.
//!
//! The dephasing error of a controller `D` under process `s` at strength `δ`
//! is `ε(D, δ, s) = ‖ρ_D(T) − ρ_{D,δ,s}(T)‖`, aggregated over an ensemble of
//! processes. Its sensitivity `η(D)` is the slope of the median error at
//! `δ = 0`. The asymptotic fidelity `p∞ = Σ_k ⟨out|Π_k ρ0 Π_k|out⟩` of the
//! perturbed Hamiltonian `H_D + δ S` gives the logarithmic sensitivity
//! `|∂ε∞/∂δ| / ε∞`, `ε∞ = 1 − p∞`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::controllers::Controller;
use crate::dephasing::{DephasingProcess, Ensemble};
use crate::dynamics::{longterm_average_fidelity, readout_state, transfer_fidelity, DensityMatrix};
use crate::error::{Error, Result};
use crate::network::SpinNetwork;
use crate::spectral::{decompose, projector_derivative, PerturbationStructure, SpectralData};

pub const DEFAULT_ETA_STEP: f64 = 1e-3;
pub const DEFAULT_GRID_POINTS: usize = 21;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
/// Smallest asymptotic error accepted by [`asymptotic_log_sensitivity`].
pub const MIN_ASYMPTOTIC_ERROR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Frobenius,
    /// Sum of singular values.
    Trace,
}

impl Norm {
    fn of(self, m: &DMatrix<Complex64>) -> f64 {
        match self {
            Norm::Frobenius => m.norm(),
            // m is Hermitian, so singular values are |eigenvalues|
            Norm::Trace => m.clone().symmetric_eigenvalues().iter().map(|x| x.abs()).sum(),
        }
    }
}

/// `n` uniform points on `[0, 1]`.
pub fn delta_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// A controller prepared for repeated dephasing evaluations.
#[derive(Debug, Clone)]
pub struct ControllerEval<'a> {
    controller: &'a Controller,
    spec: SpectralData,
    coherent: DensityMatrix,
}

impl<'a> ControllerEval<'a> {
    pub fn new(net: &SpinNetwork, controller: &'a Controller) -> Result<Self> {
        controller.transfer.validate(net.n_spins())?;
        let spec = controller.spectrum(net)?;
        let coherent = readout_state(&spec, &controller.transfer, None)?;
        Ok(Self { controller, spec, coherent })
    }

    pub fn spectrum(&self) -> &SpectralData {
        &self.spec
    }

    fn check_process(&self, process: &DephasingProcess) -> Result<()> {
        if process.dim() == self.spec.n_clusters() {
            return Ok(());
        }
        if self.spec.is_degenerate() && process.dim() == self.spec.dim() {
            self.spec.require_simple()?;
        }
        Err(Error::DimensionMismatch { expected: self.spec.n_clusters(), found: process.dim() })
    }

    fn check_delta(delta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!("decoherence strength {delta} outside [0, 1]")));
        }
        Ok(())
    }

    /// Distance between the coherent and the dephased readout states.
    pub fn error(&self, process: &DephasingProcess, delta: f64, norm: Norm) -> Result<f64> {
        Self::check_delta(delta)?;
        self.check_process(process)?;
        if delta == 0.0 {
            return Ok(0.0);
        }
        let rates = process.rates_at(delta);
        let dephased = readout_state(&self.spec, &self.controller.transfer, Some(&rates))?;
        Ok(norm.of(&(self.coherent.as_matrix() - dephased.as_matrix())))
    }

    /// Transfer fidelity under the dephasing process.
    pub fn fidelity(&self, process: &DephasingProcess, delta: f64) -> Result<f64> {
        Self::check_delta(delta)?;
        self.check_process(process)?;
        let rates = process.rates_at(delta);
        transfer_fidelity(&self.spec, &self.controller.transfer, Some(&rates))
    }

    fn errors(&self, processes: &[DephasingProcess], delta: f64, norm: Norm) -> Result<Vec<f64>> {
        processes.par_iter().map(|p| self.error(p, delta, norm)).collect()
    }

    fn fidelities(&self, processes: &[DephasingProcess], delta: f64) -> Result<Vec<f64>> {
        processes.par_iter().map(|p| self.fidelity(p, delta)).collect()
    }
}

/// `ε(D, δ, s)` in the Frobenius norm.
pub fn perturbation_error(
    net: &SpinNetwork,
    controller: &Controller,
    process: &DephasingProcess,
    delta: f64,
) -> Result<f64> {
    ControllerEval::new(net, controller)?.error(process, delta, Norm::Frobenius)
}

/// Five-number summary; `median` is the lower median, `std` the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// Lower median: element `⌊(n − 1) / 2⌋` of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of an empty slice");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            median: lower_median(values),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub controller_id: usize,
    pub delta_grid: Vec<f64>,
    pub error_stats: Vec<Stats>,
    pub fidelity_stats: Vec<Stats>,
    /// Sensitivity `η(D)` at the default step.
    pub eta: f64,
    pub ensemble_meta: EnsembleMeta,
}

fn check_ensemble(ensemble: &Ensemble) -> Result<()> {
    if ensemble.processes.is_empty() {
        return Err(Error::InvalidArgument("empty dephasing ensemble".into()));
    }
    Ok(())
}

pub fn ensemble_stats(
    net: &SpinNetwork,
    controller: &Controller,
    controller_id: usize,
    ensemble: &Ensemble,
    delta_grid: &[f64],
    norm: Norm,
) -> Result<RobustnessReport> {
    check_ensemble(ensemble)?;
    let eval = ControllerEval::new(net, controller)?;
    let mut error_stats = Vec::with_capacity(delta_grid.len());
    let mut fidelity_stats = Vec::with_capacity(delta_grid.len());
    for &delta in delta_grid {
        error_stats.push(Stats::of(&eval.errors(&ensemble.processes, delta, norm)?));
        fidelity_stats.push(Stats::of(&eval.fidelities(&ensemble.processes, delta)?));
    }
    let eta = eta_with(&eval, ensemble, DEFAULT_ETA_STEP, norm)?;
    Ok(RobustnessReport {
        controller_id,
        delta_grid: delta_grid.to_vec(),
        error_stats,
        fidelity_stats,
        eta,
        ensemble_meta: EnsembleMeta { seed: ensemble.seed, count: ensemble.count() },
    })
}

fn eta_with(eval: &ControllerEval<'_>, ensemble: &Ensemble, step: f64, norm: Norm) -> Result<f64> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} outside (0, 1]")));
    }
    Ok(lower_median(&eval.errors(&ensemble.processes, step, norm)?) / step)
}

/// `η(D) ≈ median_s ε(D, h, s) / h`; forward difference, since `ε(D, 0, s) = 0`.
pub fn sensitivity_eta(net: &SpinNetwork, controller: &Controller, ensemble: &Ensemble, step: f64) -> Result<f64> {
    sensitivity_eta_in(net, controller, ensemble, step, Norm::Frobenius)
}

/// [`sensitivity_eta`] with the error measured in `norm`.
pub fn sensitivity_eta_in(
    net: &SpinNetwork,
    controller: &Controller,
    ensemble: &Ensemble,
    step: f64,
    norm: Norm,
) -> Result<f64> {
    check_ensemble(ensemble)?;
    eta_with(&ControllerEval::new(net, controller)?, ensemble, step, norm)
}

fn perturbed_spectrum(
    net: &SpinNetwork,
    controller: &Controller,
    structure: &PerturbationStructure,
    delta: f64,
) -> Result<SpectralData> {
    let h = controller.hamiltonian(net)?;
    if structure.matrix().nrows() != h.nrows() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), found: structure.matrix().nrows() });
    }
    decompose(&(h + structure.matrix() * delta), None)
}

/// `p∞` of `H_D + δ S` for `ρ0 = |in⟩⟨in|`.
pub fn asymptotic_fidelity(
    net: &SpinNetwork,
    controller: &Controller,
    structure: &PerturbationStructure,
    delta: f64,
) -> Result<f64> {
    let spec = perturbed_spectrum(net, controller, structure, delta)?;
    longterm_average_fidelity(&spec, &controller.transfer)
}

/// `∂p∞/∂δ = 2 Σ_k ⟨out|∂Π_k|in⟩⟨in|Π_k|out⟩` at `δ = 0`.
pub fn asymptotic_fidelity_derivative(
    net: &SpinNetwork,
    controller: &Controller,
    structure: &PerturbationStructure,
) -> Result<f64> {
    let spec = perturbed_spectrum(net, controller, structure, 0.0)?;
    spec.require_simple()?;
    let (i, o) = (controller.transfer.input, controller.transfer.output);
    let mut total = 0.0;
    for k in 0..spec.n_clusters() {
        let dp = projector_derivative(&spec, structure, k)?;
        total += 2.0 * dp[(o, i)] * spec.projector(k)[(i, o)];
    }
    Ok(total)
}

/// `|∂ε∞/∂δ| / ε∞` at `δ = 0`.
pub fn asymptotic_log_sensitivity(
    net: &SpinNetwork,
    controller: &Controller,
    structure: &PerturbationStructure,
) -> Result<f64> {
    let p_inf = asymptotic_fidelity(net, controller, structure, 0.0)?;
    let eps = 1.0 - p_inf;
    if eps <= MIN_ASYMPTOTIC_ERROR {
        return Err(Error::VanishingError(eps));
    }
    Ok(asymptotic_fidelity_derivative(net, controller, structure)?.abs() / eps)
}

/// Single-bias and single-coupling structures for every node and edge.
pub fn standard_structures(net: &SpinNetwork) -> Result<Vec<PerturbationStructure>> {
    let n = net.n_spins();
    let mut out: Vec<_> = (0..n).map(|s| PerturbationStructure::bias(n, s)).collect::<Result<_>>()?;
    for (a, b, _) in net.edges() {
        out.push(PerturbationStructure::coupling(n, a, b)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogSensitivitySummary {
    pub values: Vec<(String, f64)>,
    pub max: f64,
}

pub fn log_sensitivity_summary(
    net: &SpinNetwork,
    controller: &Controller,
    structures: &[PerturbationStructure],
) -> Result<LogSensitivitySummary> {
    let values: Vec<(String, f64)> = structures
        .iter()
        .map(|s| Ok((s.label().to_string(), asymptotic_log_sensitivity(net, controller, s)?)))
        .collect::<Result<_>>()?;
    let max = values.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    Ok(LogSensitivitySummary { values, max })
}

/// `|median(ε_1..ε_m) − median(ε_1..ε_M)|` for `m = 1..M`.
pub fn median_convergence(
    net: &SpinNetwork,
    controller: &Controller,
    ensemble: &Ensemble,
    delta: f64,
) -> Result<Vec<f64>> {
    if ensemble.count() < 10 {
        return Err(Error::InvalidArgument(format!(
            "median convergence needs at least 10 processes, got {}",
            ensemble.count()
        )));
    }
    let eval = ControllerEval::new(net, controller)?;
    let errors = eval.errors(&ensemble.processes, delta, Norm::Frobenius)?;
    Ok(running_median_deviation(&errors))
}

/// Deviation of every prefix's lower median from the full lower median.
pub fn running_median_deviation(values: &[f64]) -> Vec<f64> {
    let full = lower_median(values);
    // insertion into a sorted prefix keeps this O(M²) with tiny constants
    let mut sorted: Vec<f64> = Vec::with_capacity(values.len());
    values
        .iter()
        .map(|&v| {
            let at = sorted.partition_point(|x| *x <= v);
            sorted.insert(at, v);
            (sorted[(sorted.len() - 1) / 2] - full).abs()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityPoint {
    pub eta: f64,
    pub read_time: f64,
}

/// Pearson correlation and least-squares line `η ≈ slope · T + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub pearson_r: f64,
    pub slope: f64,
    pub intercept: f64,
}

pub fn sensitivity_time_correlation(points: &[SensitivityPoint]) -> Result<Correlation> {
    let x: Vec<f64> = points.iter().map(|p| p.read_time).collect();
    let y: Vec<f64> = points.iter().map(|p| p.eta).collect();
    linear_correlation(&x, &y)
}

pub fn linear_correlation(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let slope = sxy / sxx;
    Ok(Correlation { pearson_r: sxy / (sxx * syy).sqrt(), slope, intercept: my - slope * mx })
}

/// Average ranks (one-based), ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(linear_correlation(&ranks(x), &ranks(y))?.pearson_r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins spanning the data range.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 || values.is_empty() {
            return Err(Error::InvalidArgument("histogram needs data and at least one bin".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let bin = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[bin] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins).map(|i| self.lo + (self.hi - self.lo) * i as f64 / bins as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityProfile {
    pub delta_grid: Vec<f64>,
    pub stats: Vec<Stats>,
    /// Transfer errors `1 − p` at `δ = 1`.
    pub error_histogram: Histogram,
}

pub fn fidelity_vs_delta(
    net: &SpinNetwork,
    controller: &Controller,
    ensemble: &Ensemble,
    delta_grid: &[f64],
    bins: usize,
) -> Result<FidelityProfile> {
    check_ensemble(ensemble)?;
    let eval = ControllerEval::new(net, controller)?;
    let stats = delta_grid
        .iter()
        .map(|&d| Ok(Stats::of(&eval.fidelities(&ensemble.processes, d)?)))
        .collect::<Result<_>>()?;
    let at_one: Vec<f64> = eval.fidelities(&ensemble.processes, 1.0)?.iter().map(|p| 1.0 - p).collect();
    Ok(FidelityProfile { delta_grid: delta_grid.to_vec(), stats, error_histogram: Histogram::of(&at_one, bins)? })
}
