mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use spinshape::controllers::{Controller, Provenance};
use spinshape::dephasing::{from_operator, is_physical, normalize, sample_ensemble, DephasingOperator, RawRates};
use spinshape::dynamics::{
    evolve, instant_fidelity, longterm_average_fidelity, overlap_norms, steady_state, DensityMatrix, TransferSpec,
};
use spinshape::network::{reduced_hamiltonian, BiasField, SpinNetwork};
use spinshape::robustness::{
    asymptotic_fidelity, asymptotic_log_sensitivity, linear_correlation, ControllerEval, Norm,
};
use spinshape::spectral::{decompose, projector_derivative, PerturbationStructure};

fn ring_h(bias: &[f64]) -> DMatrix<f64> {
    let net = SpinNetwork::ring(bias.len(), 1.0).unwrap();
    reduced_hamiltonian(&net, &BiasField::new(bias.to_vec()).unwrap()).unwrap()
}

fn controller(net: &SpinNetwork, bias: Vec<f64>, input: usize, output: usize, t: f64) -> Controller {
    let transfer = TransferSpec::instant(net.n_spins(), input, output, t).unwrap();
    Controller::evaluate(net, BiasField::new(bias).unwrap(), transfer, Provenance { seed: 0, restart: 0, iterations: 0 })
        .unwrap()
}

fn biases(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, n)
}

fn rates(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, dim * (dim - 1) / 2)
}

/// Physical normalized process of dimension `dim` from the seeded sampler.
fn process(dim: usize, seed: u64) -> spinshape::dephasing::DephasingProcess {
    sample_ensemble(dim, 1, seed).unwrap().processes.remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projectors_resolve_identity(d in biases(5), shift in -10.0..10.0f64) {
        let h = ring_h(&d);
        let spec = decompose(&h, None).unwrap();
        let n = h.nrows();
        let mut sum = DMatrix::zeros(n, n);
        for (k, pk) in spec.projectors().iter().enumerate() {
            sum += pk;
            for (l, pl) in spec.projectors().iter().enumerate() {
                let prod = pk * pl;
                let want = if k == l { pk.clone() } else { DMatrix::zeros(n, n) };
                prop_assert!((prod - want).amax() < 1e-10);
            }
        }
        prop_assert!((sum - DMatrix::identity(n, n)).amax() < 1e-10);
        prop_assert!((spec.reconstruct() - &h).amax() < 1e-10);

        let shifted = decompose(&(&h + DMatrix::identity(n, n) * shift), None).unwrap();
        prop_assert_eq!(shifted.n_clusters(), spec.n_clusters());
        for k in 0..spec.n_clusters() {
            prop_assert!((shifted.projector(k) - spec.projector(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn projector_derivative_properties(d in biases(4), site in 0usize..4) {
        let h = ring_h(&d);
        prop_assume!(min_gap(&h) > 0.05);
        let spec = decompose(&h, None).unwrap();
        let s = PerturbationStructure::bias(4, site).unwrap();
        let mut total = DMatrix::zeros(4, 4);
        let step = 1e-4;
        let up = decompose(&(&h + s.matrix() * step), None).unwrap();
        let down = decompose(&(&h - s.matrix() * step), None).unwrap();
        for k in 0..4 {
            let dp = projector_derivative(&spec, &s, k).unwrap();
            prop_assert!(dp.trace().abs() < 1e-10);
            prop_assert!((&dp - dp.transpose()).amax() < 1e-12);
            let fd = (up.projector(k) - down.projector(k)) / (2.0 * step);
            prop_assert!((&dp - fd).amax() < 1e-5 * (1.0 + dp.amax()));
            total += dp;
        }
        prop_assert!(total.amax() < 1e-10);
    }

    #[test]
    fn evolved_states_stay_physical(d in biases(5), seed in 0u64..1000, t in 0.0..100.0f64, delta in 0.0..1.0f64) {
        let spec = decompose(&ring_h(&d), None).unwrap();
        prop_assume!(!spec.is_degenerate());
        let gamma = process(5, seed).rates_at(delta);
        let rho = evolve(&spec, &DensityMatrix::pure(5, 0), t, Some(&gamma)).unwrap();
        prop_assert!(rho.check().is_ok());
        prop_assert!((rho.trace() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coherences_decay_at_their_rates(d in biases(4), seed in 0u64..1000, t in 0.0..20.0f64) {
        let spec = decompose(&ring_h(&d), None).unwrap();
        prop_assume!(!spec.is_degenerate());
        let gamma = process(4, seed).rates_at(1.0);
        let rho0 = DensityMatrix::pure(4, 2);
        let rho = evolve(&spec, &rho0, t, Some(&gamma)).unwrap();
        for k in 0..4 {
            for l in 0..4 {
                let pk = complex(spec.projector(k));
                let pl = complex(spec.projector(l));
                let before = (&pk * rho0.as_matrix() * &pl).norm();
                let after = (&pk * rho.as_matrix() * &pl).norm();
                prop_assert!((after - (gamma.get(k, l) * t).exp() * before).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn evolution_is_a_semigroup(d in biases(5), seed in 0u64..1000, s in 0.0..10.0f64, t in 0.0..10.0f64) {
        let spec = decompose(&ring_h(&d), None).unwrap();
        prop_assume!(!spec.is_degenerate());
        let gamma = process(5, seed).rates_at(0.7);
        let rho0 = DensityMatrix::pure(5, 3);
        let mid = evolve(&spec, &rho0, s, Some(&gamma)).unwrap();
        let two_step = evolve(&spec, &mid, t, Some(&gamma)).unwrap();
        let one_step = evolve(&spec, &rho0, s + t, Some(&gamma)).unwrap();
        prop_assert!(max_entry(&(two_step.as_matrix() - one_step.as_matrix())) < 1e-10);
    }

    #[test]
    fn coherent_fidelity_bounded_by_l1(d in biases(5), out in 0usize..5, t in 0.0..50.0f64) {
        let spec = decompose(&ring_h(&d), None).unwrap();
        let transfer = TransferSpec::instant(5, 0, out, t).unwrap();
        let norms = overlap_norms(&spec, &transfer).unwrap();
        let p = instant_fidelity(&spec, &transfer, None).unwrap();
        prop_assert!(p <= norms.l1 * norms.l1 + 1e-12);
        prop_assert!((longterm_average_fidelity(&spec, &transfer).unwrap() - norms.l2_sq).abs() < 1e-15);
    }

    #[test]
    fn steady_state_overlap_is_longterm_average(d in biases(5), out in 0usize..5) {
        let spec = decompose(&ring_h(&d), None).unwrap();
        let transfer = TransferSpec::instant(5, 1, out, 0.0).unwrap();
        let rho = steady_state(&spec, &DensityMatrix::pure(5, 1)).unwrap();
        prop_assert!((rho.population(out) - longterm_average_fidelity(&spec, &transfer).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn collective_dephasing_is_invisible(d in biases(5), c in -5.0..5.0f64, t in 0.0..30.0f64) {
        let net = SpinNetwork::ring(5, 1.0).unwrap();
        let ctrl = controller(&net, d, 0, 1, t);
        let eval = ControllerEval::new(&net, &ctrl).unwrap();
        let dim = eval.spectrum().n_clusters();
        let process = from_operator(&DephasingOperator { c: vec![c; dim] }).unwrap();
        prop_assert!(process.rates().iter().all(|r| *r == 0.0));
        prop_assert!(eval.error(&process, 1.0, Norm::Frobenius).unwrap() < 1e-12);
        prop_assert!((eval.fidelity(&process, 1.0).unwrap() - ctrl.nominal_fidelity).abs() < 1e-12);
    }

    #[test]
    fn physical_rates_form_a_cone(s1 in 0u64..500, s2 in 0u64..500, a in 0.0..5.0f64, b in 0.0..5.0f64) {
        let p = process(5, s1);
        let q = process(5, s2);
        let mixed: Vec<f64> = p.rates().iter().zip(q.rates()).map(|(x, y)| a * x + b * y).collect();
        let check = is_physical(&RawRates::new(5, mixed).unwrap());
        prop_assert!(check.ok, "{}", check.max_eigenvalue);
    }

    #[test]
    fn normalization_is_idempotent(values in rates(5)) {
        prop_assume!(values.iter().sum::<f64>() > 1e-3);
        let once = normalize(&RawRates::new(5, values).unwrap()).unwrap();
        let twice = normalize(once.raw()).unwrap();
        prop_assert!((once.rates().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for (x, y) in once.rates().iter().zip(twice.rates()) {
            prop_assert!((x - y).abs() < 1e-15);
        }
        prop_assert_eq!(once.certificate().ok, twice.certificate().ok);
    }

    #[test]
    fn sampled_processes_pass_centered_check(seed in any::<u64>(), dim in 2usize..7) {
        let p = process(dim, seed);
        prop_assert!(centered_max_eigenvalue(&from_lower(dim, p.rates())) <= 1e-10);
    }

    #[test]
    fn error_grows_with_delta_and_matches_blocks(d in biases(4), seed in 0u64..1000, t in 0.5..20.0f64) {
        let net = SpinNetwork::ring(4, 1.0).unwrap();
        let ctrl = controller(&net, d, 0, 2, t);
        let eval = ControllerEval::new(&net, &ctrl).unwrap();
        let spec = eval.spectrum();
        prop_assume!(!spec.is_degenerate());
        let p = process(4, seed);
        let rho0 = complex(&DMatrix::from_fn(4, 4, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 }));
        let mut last = 0.0;
        for step in 0..=10 {
            let delta = step as f64 / 10.0;
            let eps = eval.error(&p, delta, Norm::Frobenius).unwrap();
            prop_assert!(eps >= last - 1e-14);
            last = eps;
            let mut closed = 0.0;
            for k in 0..4 {
                for l in 0..4 {
                    if k != l {
                        let g = p.raw().get(k, l);
                        let block = complex(spec.projector(k)) * &rho0 * complex(spec.projector(l));
                        closed += (1.0 - (-delta * g * t).exp()).powi(2) * block.norm_squared();
                    }
                }
            }
            prop_assert!((eps * eps - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0..10.0f64, 5..40),
        a in 0.1..10.0f64, b in -5.0..5.0f64, c in 0.1..10.0f64, e in -5.0..5.0f64,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + (i as f64 * 0.37).cos()).collect();
        let r = linear_correlation(&x, &y).unwrap().pearson_r;
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ys: Vec<f64> = y.iter().map(|v| c * v + e).collect();
        let rs = linear_correlation(&xs, &ys).unwrap().pearson_r;
        prop_assert!((r - rs).abs() < 1e-12);
        prop_assert!((r - pearson(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn log_sensitivity_matches_differences(d in biases(5), site in 0usize..5, t in 1.0..10.0f64) {
        let net = SpinNetwork::ring(5, 1.0).unwrap();
        let h = ring_h(&d);
        prop_assume!(min_gap(&h) > 0.05);
        let ctrl = controller(&net, d, 0, 1, t);
        let s = PerturbationStructure::bias(5, site).unwrap();
        let p0 = asymptotic_fidelity(&net, &ctrl, &s, 0.0).unwrap();
        prop_assume!(1.0 - p0 > 1e-3);
        let step = 1e-5;
        let fd = (asymptotic_fidelity(&net, &ctrl, &s, step).unwrap()
            - asymptotic_fidelity(&net, &ctrl, &s, -step).unwrap())
            / (2.0 * step);
        let want = fd.abs() / (1.0 - p0);
        let got = asymptotic_log_sensitivity(&net, &ctrl, &s).unwrap();
        prop_assert!((got - want).abs() <= 1e-5 * want.max(1e-3), "{got} vs {want}");

        let id = PerturbationStructure::identity(5).unwrap();
        prop_assert_eq!(asymptotic_log_sensitivity(&net, &ctrl, &id).unwrap(), 0.0);
    }
}
