use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use spinshape::controllers::{generate_controller_set, Controller, ControllerOptions, GradientMode};
use spinshape::dephasing::{sample_ensemble_with_budget, Ensemble};
use spinshape::dynamics::TransferSpec;
use spinshape::io::{ControllerSetDoc, EnsembleDoc, NetworkDoc};
use spinshape::network::{build_network, Couplings, SpinNetwork, Topology};
use spinshape::robustness::{
    delta_grid, ensemble_stats, fidelity_vs_delta, log_sensitivity_summary, median_convergence,
    sensitivity_eta_in, sensitivity_time_correlation, standard_structures, EnsembleMeta, Norm, RobustnessReport,
    SensitivityPoint,
};
use spinshape::spectral::PerturbationStructure;

use crate::error::{usage, CliError};
use crate::manifest::{check_payload, split_document, verify_file, RunContext};
use crate::{
    Command, CorrelateArgs, DesignArgs, GradientArg, LogsensArgs, NetworkArgs, SampleArgs, SelectionArgs,
    SensitivityArgs, SweepArgs, VerifyArgs,
};

pub fn dispatch(command: &Command, verify: bool) -> Result<(), CliError> {
    match command {
        Command::Design(a) => design(a, RunContext::new(command, Some(a.seed)), verify),
        Command::Sample(a) => sample(a, RunContext::new(command, Some(a.seed))),
        Command::Sweep(a) => sweep(a, RunContext::new(command, None), verify),
        Command::Sensitivity(a) => sensitivity(a, RunContext::new(command, None), verify),
        Command::Logsens(a) => logsens(a, RunContext::new(command, None), verify),
        Command::Correlate(a) => correlate(a, RunContext::new(command, None), verify),
        Command::Verify(a) => verify_files(a),
    }
}

/// Shortest representation that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn load<T: DeserializeOwned>(ctx: &mut RunContext, path: &Path, verify: bool) -> Result<T, CliError> {
    let bytes = ctx.read_input(path)?;
    let (payload, manifest) = split_document(&bytes, path)?;
    if verify {
        let m = manifest.ok_or_else(|| CliError::Data(format!("{} carries no manifest", path.display())))?;
        check_payload(&payload, &m, path)?;
    }
    serde_json::from_value(payload).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn network(args: &NetworkArgs, coupling: f64, kappa: f64, ctx: &mut RunContext, verify: bool) -> Result<SpinNetwork, CliError> {
    let (topology, n) = match (args.ring, args.chain, &args.net) {
        (Some(n), _, _) => (Topology::Ring, n),
        (_, Some(n), _) => (Topology::Chain, n),
        (_, _, Some(path)) => {
            let doc: NetworkDoc = load(ctx, path, verify)?;
            return Ok(doc.to_network()?);
        }
        _ => return Err(CliError::Usage("one of --ring, --chain or --net is required".into())),
    };
    build_network(topology, n, Couplings::Uniform(coupling), kappa).map_err(usage)
}

fn parse_range(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("--T-opt expects LO:HI, got '{text}'"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn node(label: usize, n: usize, flag: &str) -> Result<usize, CliError> {
    if label == 0 || label > n {
        return Err(CliError::Usage(format!("{flag} {label} is not a node of a {n}-spin network (labels start at 1)")));
    }
    Ok(label - 1)
}

fn design(a: &DesignArgs, mut ctx: RunContext, verify: bool) -> Result<(), CliError> {
    let net = network(&a.network, a.coupling, a.kappa, &mut ctx, verify)?;
    if net.kappa() != 0.0 {
        return Err(usage(spinshape::Error::UnsupportedCoupling(net.kappa())));
    }
    let n = net.n_spins();
    let (input, output) = (node(a.input, n, "--in")?, node(a.output, n, "--out")?);
    let time_range = a.time_range.as_deref().map(parse_range).transpose()?;
    let read_time = match (a.read_time, time_range) {
        (Some(t), _) => t,
        (None, Some((lo, _))) => lo,
        (None, None) => return Err(CliError::Usage("one of --T or --T-opt is required".into())),
    };
    let transfer = TransferSpec::new(n, input, output, read_time, a.window).map_err(usage)?;
    if a.count == 0 || a.restarts == 0 {
        return Err(CliError::Usage("--count and --restarts must be >= 1".into()));
    }
    let options = ControllerOptions {
        restarts: a.restarts,
        max_iters: a.max_iters,
        bias_bound: a.bound,
        seed: a.seed,
        time_range,
        gradient: match a.gradient {
            GradientArg::Fd => GradientMode::CentralDifference,
            GradientArg::Analytic => GradientMode::Analytic,
        },
        ..ControllerOptions::default()
    };
    let set = generate_controller_set(&net, &transfer, a.count, &options)?;
    let doc = ControllerSetDoc::new(&net, &transfer, time_range, &set);
    ctx.write_json(&a.output_file, &doc)?;
    let best = set.first().map_or(f64::NAN, |r| r.controller.nominal_fidelity);
    println!("wrote {} controllers to {} (best fidelity {})", set.len(), a.output_file.display(), num(best));
    Ok(())
}

fn sample(a: &SampleArgs, ctx: RunContext) -> Result<(), CliError> {
    if a.dim < 2 {
        return Err(CliError::Usage(format!("--dim must be >= 2, got {}", a.dim)));
    }
    if a.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let ensemble = sample_ensemble_with_budget(a.dim, a.count, a.seed, a.budget)?;
    let doc = EnsembleDoc::from_ensemble(&ensemble);
    ctx.write_json(&a.output_file, &doc)?;
    println!(
        "wrote {} processes to {} (acceptance rate {})",
        ensemble.count(),
        a.output_file.display(),
        num(ensemble.acceptance_rate())
    );
    Ok(())
}

struct Selected {
    net: SpinNetwork,
    /// One-based rank with its controller.
    controllers: Vec<(usize, Controller)>,
}

fn select(sel: &SelectionArgs, ctx: &mut RunContext, verify: bool) -> Result<Selected, CliError> {
    if sel.top == Some(0) {
        return Err(CliError::Usage("--top must be >= 1".into()));
    }
    let doc: ControllerSetDoc = load(ctx, &sel.ctrl, verify)?;
    let net = doc.network()?;
    let all = doc.controllers(&net)?;
    let take = sel.top.unwrap_or(all.len());
    let controllers = doc.controllers.iter().map(|c| c.rank).zip(all).take(take).collect();
    Ok(Selected { net, controllers })
}

fn load_ensemble(path: &Path, ctx: &mut RunContext, verify: bool) -> Result<Ensemble, CliError> {
    let doc: EnsembleDoc = load(ctx, path, verify)?;
    Ok(doc.to_ensemble()?)
}

#[derive(Serialize)]
struct SweepReport<'a> {
    norm: crate::NormArg,
    ensemble: EnsembleMeta,
    controllers: &'a [RobustnessReport],
}

fn sweep(a: &SweepArgs, mut ctx: RunContext, verify: bool) -> Result<(), CliError> {
    if a.grid < 2 {
        return Err(CliError::Usage(format!("--grid must be >= 2, got {}", a.grid)));
    }
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let sel = select(&a.selection, &mut ctx, verify)?;
    let ensemble = load_ensemble(&a.deph, &mut ctx, verify)?;
    let grid = delta_grid(a.grid);
    let norm: Norm = a.norm.into();

    let reports = sel
        .controllers
        .iter()
        .map(|(rank, c)| ensemble_stats(&sel.net, c, *rank, &ensemble, &grid, norm))
        .collect::<Result<Vec<_>, _>>()?;

    if is_json(&a.output_file) {
        let meta = EnsembleMeta { seed: ensemble.seed, count: ensemble.count() };
        ctx.write_json(&a.output_file, &SweepReport { norm: a.norm, ensemble: meta, controllers: &reports })?;
    } else {
        let mut csv = String::from("controller_rank,delta,eps_min,eps_max,eps_mean,eps_median,eps_std,fid_median\n");
        for r in &reports {
            for ((delta, e), f) in r.delta_grid.iter().zip(&r.error_stats).zip(&r.fidelity_stats) {
                let row = [*delta, e.min, e.max, e.mean, e.median, e.std, f.median].map(num).join(",");
                writeln!(csv, "{},{row}", r.controller_id).unwrap();
            }
        }
        ctx.write_with_sidecar(&a.output_file, &csv)?;
    }

    if let Some(path) = &a.convergence {
        let mut csv = String::from("controller_rank,prefix,deviation\n");
        for (rank, c) in &sel.controllers {
            for (m, d) in median_convergence(&sel.net, c, &ensemble, 1.0)?.iter().enumerate() {
                writeln!(csv, "{rank},{},{}", m + 1, num(*d)).unwrap();
            }
        }
        ctx.write_with_sidecar(path, &csv)?;
    }
    if a.profile.is_some() || a.histogram.is_some() {
        let mut profile = String::from("controller_rank,delta,fid_min,fid_max,fid_mean,fid_median,fid_std\n");
        let mut histogram = String::from("controller_rank,bin_lo,bin_hi,count\n");
        for (rank, c) in &sel.controllers {
            let p = fidelity_vs_delta(&sel.net, c, &ensemble, &grid, a.bins)?;
            for (delta, s) in p.delta_grid.iter().zip(&p.stats) {
                let row = [*delta, s.min, s.max, s.mean, s.median, s.std].map(num).join(",");
                writeln!(profile, "{rank},{row}").unwrap();
            }
            let edges = p.error_histogram.edges();
            for (i, count) in p.error_histogram.counts.iter().enumerate() {
                writeln!(histogram, "{rank},{},{},{count}", num(edges[i]), num(edges[i + 1])).unwrap();
            }
        }
        if let Some(path) = &a.profile {
            ctx.write_with_sidecar(path, &profile)?;
        }
        if let Some(path) = &a.histogram {
            ctx.write_with_sidecar(path, &histogram)?;
        }
    }
    println!("swept {} controllers over {} processes", sel.controllers.len(), ensemble.count());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SensitivityEntry {
    rank: usize,
    #[serde(rename = "T")]
    read_time: f64,
    nominal_fidelity: f64,
    eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SensitivityReport {
    ensemble_seed: u64,
    ensemble_count: usize,
    step: f64,
    norm: String,
    controllers: Vec<SensitivityEntry>,
}

fn sensitivity(a: &SensitivityArgs, mut ctx: RunContext, verify: bool) -> Result<(), CliError> {
    if !(a.step > 0.0 && a.step <= 1.0) {
        return Err(CliError::Usage(format!("--step must be in (0, 1], got {}", a.step)));
    }
    let sel = select(&a.selection, &mut ctx, verify)?;
    let ensemble = load_ensemble(&a.deph, &mut ctx, verify)?;
    let controllers = sel
        .controllers
        .iter()
        .map(|(rank, c)| {
            Ok(SensitivityEntry {
                rank: *rank,
                read_time: c.transfer.read_time,
                nominal_fidelity: c.nominal_fidelity,
                eta: sensitivity_eta_in(&sel.net, c, &ensemble, a.step, a.norm.into())?,
            })
        })
        .collect::<Result<Vec<_>, spinshape::Error>>()?;
    let report = SensitivityReport {
        ensemble_seed: ensemble.seed,
        ensemble_count: ensemble.count(),
        step: a.step,
        norm: format!("{:?}", a.norm).to_lowercase(),
        controllers,
    };
    ctx.write_json(&a.output_file, &report)?;
    println!("wrote sensitivities of {} controllers to {}", report.controllers.len(), a.output_file.display());
    Ok(())
}

#[derive(Serialize)]
struct LogsensEntry {
    rank: usize,
    #[serde(rename = "T")]
    read_time: f64,
    values: Vec<(String, f64)>,
    max: f64,
}

fn logsens(a: &LogsensArgs, mut ctx: RunContext, verify: bool) -> Result<(), CliError> {
    let sel = select(&a.selection, &mut ctx, verify)?;
    let n = sel.net.n_spins();
    let structures = if a.structures.is_empty() {
        standard_structures(&sel.net)?
    } else {
        a.structures.iter().map(|s| PerturbationStructure::parse(s, n)).collect::<Result<_, _>>().map_err(usage)?
    };
    let entries = sel
        .controllers
        .iter()
        .map(|(rank, c)| {
            let s = log_sensitivity_summary(&sel.net, c, &structures)?;
            Ok(LogsensEntry { rank: *rank, read_time: c.transfer.read_time, values: s.values, max: s.max })
        })
        .collect::<Result<Vec<_>, spinshape::Error>>()?;

    if is_json(&a.output_file) {
        #[derive(Serialize)]
        struct Doc<'a> {
            controllers: &'a [LogsensEntry],
        }
        ctx.write_json(&a.output_file, &Doc { controllers: &entries })?;
    } else {
        let mut csv = String::from("controller_rank,T");
        for s in &structures {
            write!(csv, ",{}", s.label()).unwrap();
        }
        csv.push_str(",max\n");
        for e in &entries {
            write!(csv, "{},{}", e.rank, num(e.read_time)).unwrap();
            for (_, v) in &e.values {
                write!(csv, ",{}", num(*v)).unwrap();
            }
            writeln!(csv, ",{}", num(e.max)).unwrap();
        }
        ctx.write_with_sidecar(&a.output_file, &csv)?;
    }
    println!("wrote log-sensitivities of {} controllers to {}", entries.len(), a.output_file.display());
    Ok(())
}

#[derive(Serialize)]
struct CorrelationPoint {
    report: String,
    rank: usize,
    eta: f64,
    #[serde(rename = "T")]
    read_time: f64,
}

#[derive(Serialize)]
struct CorrelationReport {
    count: usize,
    pearson_r: f64,
    slope: f64,
    intercept: f64,
    points: Vec<CorrelationPoint>,
}

fn correlate(a: &CorrelateArgs, mut ctx: RunContext, verify: bool) -> Result<(), CliError> {
    let mut points = Vec::new();
    for path in &a.reports {
        let report: SensitivityReport = load(&mut ctx, path, verify)?;
        points.extend(report.controllers.iter().map(|c| CorrelationPoint {
            report: path.display().to_string(),
            rank: c.rank,
            eta: c.eta,
            read_time: c.read_time,
        }));
    }
    let pairs: Vec<SensitivityPoint> =
        points.iter().map(|p| SensitivityPoint { eta: p.eta, read_time: p.read_time }).collect();
    let c = sensitivity_time_correlation(&pairs)?;
    let report =
        CorrelationReport { count: points.len(), pearson_r: c.pearson_r, slope: c.slope, intercept: c.intercept, points };
    ctx.write_json(&a.output_file, &report)?;
    println!(
        "r = {} over {} controllers; eta ~ {} T + {}",
        num(c.pearson_r),
        report.count,
        num(c.slope),
        num(c.intercept)
    );
    Ok(())
}

fn verify_files(a: &VerifyArgs) -> Result<(), CliError> {
    let mut failed = 0;
    for path in &a.files {
        match verify_file(path) {
            Ok(notes) => {
                println!("ok {}", path.display());
                for n in notes {
                    println!("  {n}");
                }
            }
            Err(e) => {
                println!("FAILED {}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} of {} files failed verification", a.files.len())));
    }
    Ok(())
}
