//! Static bias-field controllers found by multistart quasi-Newton search.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{transfer_fidelity, TransferSpec};
use crate::error::{Error, Result};
use crate::network::{reduced_hamiltonian, BiasField, SpinNetwork};
use crate::optimize::{central_difference, minimize, Bounds, LbfgsOptions, Problem};
use crate::seed;
use crate::spectral::{decompose, SpectralData};

pub const DEFAULT_BIAS_BOUND: f64 = 100.0;
pub const FD_STEP: f64 = 1e-6;
/// Controllers closer than this in every bias (and time) are flagged duplicates.
pub const DUPLICATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Restart that produced the controller.
    pub restart: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub bias: BiasField,
    pub transfer: TransferSpec,
    /// Coherent transfer fidelity at the controller's readout.
    pub nominal_fidelity: f64,
    pub provenance: Provenance,
}

impl Controller {
    /// Builds a controller from a bias and recomputes its fidelity.
    pub fn evaluate(net: &SpinNetwork, bias: BiasField, transfer: TransferSpec, provenance: Provenance) -> Result<Self> {
        let nominal_fidelity = 1.0 - objective(net, &bias, &transfer)?;
        Ok(Self { bias, transfer, nominal_fidelity, provenance })
    }

    pub fn hamiltonian(&self, net: &SpinNetwork) -> Result<DMatrix<f64>> {
        reduced_hamiltonian(net, &self.bias)
    }

    pub fn spectrum(&self, net: &SpinNetwork) -> Result<SpectralData> {
        decompose(&self.hamiltonian(net)?, None)
    }
}

/// Transfer error `1 − p` under coherent dynamics.
pub fn objective(net: &SpinNetwork, bias: &BiasField, transfer: &TransferSpec) -> Result<f64> {
    transfer.validate(net.n_spins())?;
    let spec = decompose(&reduced_hamiltonian(net, bias)?, None)?;
    Ok(1.0 - transfer_fidelity(&spec, transfer, None)?)
}

/// Gradient of the instantaneous transfer error with respect to the biases
/// and the readout time, from first-order eigenpair perturbation theory.
///
/// With `w_a = ⟨out|v_a⟩⟨v_a|in⟩` the fidelity is
/// `p = Σ_ab w_a w_b cos((λ_a − λ_b) T)`; `∂λ_a/∂D_n = v_na²` and
/// `∂v_a/∂D_n = Σ_{j≠a} v_nj v_na / (λ_a − λ_j) v_j`.
/// Returns `None` for degenerate spectra or window readouts.
pub fn analytic_gradient(net: &SpinNetwork, bias: &BiasField, transfer: &TransferSpec) -> Result<Option<(Vec<f64>, f64)>> {
    if transfer.is_window() {
        return Ok(None);
    }
    let spec = decompose(&reduced_hamiltonian(net, bias)?, None)?;
    if spec.is_degenerate() {
        return Ok(None);
    }
    let n = spec.dim();
    let v = spec.basis();
    let lambda = spec.eigenvalues();
    let t = transfer.read_time;
    let (i, o) = (transfer.input, transfer.output);
    let w: Vec<f64> = (0..n).map(|a| v[(o, a)] * v[(i, a)]).collect();

    let mut cos = DMatrix::zeros(n, n);
    let mut sin = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let phase = (lambda[a] - lambda[b]) * t;
            cos[(a, b)] = phase.cos();
            sin[(a, b)] = phase.sin();
        }
    }

    let mut grad = vec![0.0; n];
    for (site, g) in grad.iter_mut().enumerate() {
        let mut dp = 0.0;
        for a in 0..n {
            // ∂v_a restricted to the two entries w_a needs
            let (mut dv_o, mut dv_i) = (0.0, 0.0);
            for j in (0..n).filter(|&j| j != a) {
                let c = v[(site, j)] * v[(site, a)] / (lambda[a] - lambda[j]);
                dv_o += c * v[(o, j)];
                dv_i += c * v[(i, j)];
            }
            let dw = dv_o * v[(i, a)] + v[(o, a)] * dv_i;
            let dlambda = v[(site, a)] * v[(site, a)];
            for b in 0..n {
                dp += 2.0 * dw * w[b] * cos[(a, b)] - 2.0 * t * w[a] * w[b] * sin[(a, b)] * dlambda;
            }
        }
        *g = -dp;
    }
    let mut dp_dt = 0.0;
    for a in 0..n {
        for b in 0..n {
            dp_dt -= w[a] * w[b] * sin[(a, b)] * (lambda[a] - lambda[b]);
        }
    }
    Ok(Some((grad, -dp_dt)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    CentralDifference,
    /// Perturbation-theory gradient, falling back to differences when the
    /// spectrum is degenerate or the readout is a window.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Biases live in `[−B, B]^N`.
    pub bias_bound: f64,
    pub seed: u64,
    /// Optimize the readout time within `[lo, hi]` as well.
    pub time_range: Option<(f64, f64)>,
    /// Starting biases for restart 0 instead of a random draw.
    pub initial_bias: Option<Vec<f64>>,
    pub gradient: GradientMode,
    pub gtol: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            restarts: 1,
            max_iters: 1000,
            bias_bound: DEFAULT_BIAS_BOUND,
            seed: 0,
            time_range: None,
            initial_bias: None,
            gradient: GradientMode::CentralDifference,
            gtol: 1e-9,
        }
    }
}

/// Search variables: `N` biases, then optionally the readout time.
struct TransferProblem<'a> {
    net: &'a SpinNetwork,
    transfer: TransferSpec,
    optimize_time: bool,
    gradient: GradientMode,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TransferProblem<'_> {
    fn unpack(&self, x: &[f64]) -> (BiasField, TransferSpec) {
        let n = self.net.n_spins();
        let bias = BiasField::new(x[..n].to_vec()).expect("finite search point");
        let transfer = if self.optimize_time { self.transfer.with_read_time(x[n]) } else { self.transfer };
        (bias, transfer)
    }

    fn error(&self, x: &[f64]) -> f64 {
        let (bias, transfer) = self.unpack(x);
        objective(self.net, &bias, &transfer).unwrap_or(f64::INFINITY)
    }

    fn bounds(&self) -> Bounds<'_> {
        Bounds { lower: &self.lower, upper: &self.upper }
    }
}

impl Problem for TransferProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.error(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if self.gradient == GradientMode::Analytic {
            let (bias, transfer) = self.unpack(x);
            if let Ok(Some((mut g, dt))) = analytic_gradient(self.net, &bias, &transfer) {
                if self.optimize_time {
                    g.push(dt);
                }
                return g;
            }
        }
        central_difference(|p| self.error(p), x, FD_STEP, Some(self.bounds()))
    }
}

/// One optimizer iterate as seen by an observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate<'a> {
    pub restart: usize,
    pub bias: &'a [f64],
    pub read_time: f64,
    pub error: f64,
}

fn validate_options(net: &SpinNetwork, transfer: &TransferSpec, options: &ControllerOptions) -> Result<()> {
    if net.kappa() != 0.0 {
        return Err(Error::UnsupportedCoupling(net.kappa()));
    }
    transfer.validate(net.n_spins())?;
    if options.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    if !(options.bias_bound >= 0.0) || !options.bias_bound.is_finite() {
        return Err(Error::InvalidArgument(format!("bias bound {} must be >= 0", options.bias_bound)));
    }
    if let Some((lo, hi)) = options.time_range {
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid time range [{lo}, {hi}]")));
        }
    }
    if let Some(init) = &options.initial_bias {
        if init.len() != net.n_spins() {
            return Err(Error::DimensionMismatch { expected: net.n_spins(), found: init.len() });
        }
    }
    Ok(())
}

pub fn optimize_controller(net: &SpinNetwork, transfer: &TransferSpec, options: &ControllerOptions) -> Result<Controller> {
    optimize_controller_observed(net, transfer, options, &|_| {})
}

/// [`optimize_controller`] reporting every accepted iterate of every restart.
pub fn optimize_controller_observed(
    net: &SpinNetwork,
    transfer: &TransferSpec,
    options: &ControllerOptions,
    observer: &(dyn Fn(&Iterate<'_>) + Sync),
) -> Result<Controller> {
    validate_options(net, transfer, options)?;
    let n = net.n_spins();
    let b = options.bias_bound;
    let mut lower = vec![-b; n];
    let mut upper = vec![b; n];
    if let Some((lo, hi)) = options.time_range {
        lower.push(lo);
        upper.push(hi);
    }
    let problem = TransferProblem {
        net,
        transfer: *transfer,
        optimize_time: options.time_range.is_some(),
        gradient: options.gradient,
        lower,
        upper,
    };
    let lbfgs = LbfgsOptions { max_iters: options.max_iters, gtol: options.gtol, ..LbfgsOptions::default() };

    let runs: Vec<_> = (0..options.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = seed::stream(options.seed, "restart", restart as u64);
            let mut x0: Vec<f64> = match (&options.initial_bias, restart) {
                (Some(init), 0) => init.clone(),
                _ if b == 0.0 => vec![0.0; n],
                _ => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
            };
            if let Some((lo, hi)) = options.time_range {
                x0.push(if lo < hi { rng.gen_range(lo..hi) } else { lo });
            }
            let mut report = |x: &[f64], f: f64| {
                let read_time = if problem.optimize_time { x[n] } else { transfer.read_time };
                observer(&Iterate { restart, bias: &x[..n], read_time, error: f });
            };
            let min = minimize(&problem, &x0, problem.bounds(), &lbfgs, &mut report);
            (restart, min)
        })
        .collect();

    let (restart, best) = runs
        .into_iter()
        .min_by(|(ra, a), (rb, b)| a.value.total_cmp(&b.value).then(ra.cmp(rb)))
        .expect("restarts >= 1");
    let (bias, transfer) = problem.unpack(&best.x);
    Controller::evaluate(
        net,
        bias.centered(),
        transfer,
        Provenance { seed: options.seed, restart, iterations: best.iterations },
    )
}

/// A controller with its position in a ranked set.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedController {
    pub controller: Controller,
    /// Index of the independent run that produced it.
    pub index: usize,
    /// Rank (zero-based) of an earlier controller it duplicates.
    pub duplicate_of: Option<usize>,
}

/// `count` independent optimizations, best nominal fidelity first.
///
/// Run `i` uses the seed derived from `(options.seed, i)`; ties in fidelity
/// keep run order.
pub fn generate_controller_set(
    net: &SpinNetwork,
    transfer: &TransferSpec,
    count: usize,
    options: &ControllerOptions,
) -> Result<Vec<RankedController>> {
    if count == 0 {
        return Err(Error::InvalidArgument("controller count must be >= 1".into()));
    }
    validate_options(net, transfer, options)?;
    let mut set: Vec<RankedController> = (0..count)
        .into_par_iter()
        .map(|index| {
            let opts = ControllerOptions {
                seed: seed::derive_seed(options.seed, "controller", index as u64),
                ..options.clone()
            };
            optimize_controller(net, transfer, &opts).map(|controller| RankedController {
                controller,
                index,
                duplicate_of: None,
            })
        })
        .collect::<Result<_>>()?;
    set.sort_by(|a, b| {
        b.controller
            .nominal_fidelity
            .total_cmp(&a.controller.nominal_fidelity)
            .then(a.index.cmp(&b.index))
    });
    flag_duplicates(&mut set);
    Ok(set)
}

fn flag_duplicates(set: &mut [RankedController]) {
    for j in 1..set.len() {
        let dup = (0..j).find(|&i| {
            let (a, b) = (&set[i].controller, &set[j].controller);
            let bias_gap = a
                .bias
                .as_slice()
                .iter()
                .zip(b.bias.as_slice())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            bias_gap <= DUPLICATE_TOL && (a.transfer.read_time - b.transfer.read_time).abs() <= DUPLICATE_TOL
        });
        set[j].duplicate_of = dup;
    }
}
