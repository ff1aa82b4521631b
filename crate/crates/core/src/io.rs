//! Serializable documents for networks, controller sets and dephasing
//! ensembles. Node labels in documents are one-based.

use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, Provenance, RankedController};
use crate::dephasing::{DephasingProcess, Ensemble, ProcessSource, RawRates};
use crate::dynamics::TransferSpec;
use crate::error::{Error, Result};
use crate::network::{build_network, BiasField, Couplings, SpinNetwork, Topology};

/// Stored fidelities must match a recomputation to this tolerance.
pub const FIDELITY_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CouplingDoc {
    Uniform(f64),
    Edges(Vec<(usize, usize, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    #[serde(rename = "type")]
    pub topology: Topology,
    pub n: usize,
    #[serde(rename = "J")]
    pub couplings: CouplingDoc,
    #[serde(default)]
    pub kappa: f64,
}

fn zero_based(label: usize, what: &str) -> Result<usize> {
    label
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidArgument(format!("{what} labels are one-based, got 0")))
}

impl NetworkDoc {
    pub fn to_network(&self) -> Result<SpinNetwork> {
        let couplings = match &self.couplings {
            CouplingDoc::Uniform(j) => Couplings::Uniform(*j),
            CouplingDoc::Edges(list) => Couplings::PerEdge(
                list.iter()
                    .map(|&(m, n, j)| Ok((zero_based(m, "node")?, zero_based(n, "node")?, j)))
                    .collect::<Result<_>>()?,
            ),
        };
        build_network(self.topology, self.n, couplings, self.kappa)
    }

    pub fn from_network(net: &SpinNetwork) -> Self {
        let couplings = match (net.topology(), net.uniform_coupling()) {
            (Topology::Chain | Topology::Ring, Some(j))
                if net.edges().count() == full_topology_edges(net) =>
            {
                CouplingDoc::Uniform(j)
            }
            _ => CouplingDoc::Edges(net.edges().map(|(m, n, j)| (m + 1, n + 1, j)).collect()),
        };
        Self { topology: net.topology(), n: net.n_spins(), couplings, kappa: net.kappa() }
    }
}

fn full_topology_edges(net: &SpinNetwork) -> usize {
    match net.topology() {
        Topology::Chain => net.n_spins() - 1,
        Topology::Ring if net.n_spins() > 2 => net.n_spins(),
        Topology::Ring => 1,
        Topology::Edges => usize::MAX,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferDoc {
    #[serde(rename = "in")]
    pub input: usize,
    pub out: usize,
    #[serde(rename = "T")]
    pub read_time: f64,
    #[serde(rename = "dT", default)]
    pub window_half_width: f64,
}

impl TransferDoc {
    pub fn from_spec(t: &TransferSpec) -> Self {
        Self { input: t.input + 1, out: t.output + 1, read_time: t.read_time, window_half_width: t.window_half_width }
    }

    pub fn to_spec(&self, n_spins: usize) -> Result<TransferSpec> {
        TransferSpec::new(
            n_spins,
            zero_based(self.input, "node")?,
            zero_based(self.out, "node")?,
            self.read_time,
            self.window_half_width,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDoc {
    /// One-based rank by nominal fidelity.
    pub rank: usize,
    #[serde(rename = "D")]
    pub bias: Vec<f64>,
    pub fidelity: f64,
    #[serde(rename = "T")]
    pub read_time: f64,
    pub seed: u64,
    pub restart: usize,
    /// Independent run that produced the controller.
    pub index: usize,
    pub iterations: usize,
    /// Rank of an earlier, numerically identical controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSetDoc {
    pub net: NetworkDoc,
    pub transfer: TransferDoc,
    #[serde(rename = "T_range", default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<(f64, f64)>,
    pub controllers: Vec<ControllerDoc>,
}

impl ControllerSetDoc {
    pub fn new(
        net: &SpinNetwork,
        transfer: &TransferSpec,
        time_range: Option<(f64, f64)>,
        set: &[RankedController],
    ) -> Self {
        let controllers = set
            .iter()
            .enumerate()
            .map(|(rank, r)| ControllerDoc {
                rank: rank + 1,
                bias: r.controller.bias.as_slice().to_vec(),
                fidelity: r.controller.nominal_fidelity,
                read_time: r.controller.transfer.read_time,
                seed: r.controller.provenance.seed,
                restart: r.controller.provenance.restart,
                index: r.index,
                iterations: r.controller.provenance.iterations,
                duplicate_of: r.duplicate_of.map(|d| d + 1),
            })
            .collect();
        Self { net: NetworkDoc::from_network(net), transfer: TransferDoc::from_spec(transfer), time_range, controllers }
    }

    pub fn network(&self) -> Result<SpinNetwork> {
        self.net.to_network()
    }

    /// Controllers in rank order, with fidelities re-checked.
    pub fn controllers(&self, net: &SpinNetwork) -> Result<Vec<Controller>> {
        let base = self.transfer.to_spec(net.n_spins())?;
        self.controllers
            .iter()
            .map(|doc| {
                let transfer = base.with_read_time(doc.read_time);
                let provenance = Provenance { seed: doc.seed, restart: doc.restart, iterations: doc.iterations };
                let c = Controller::evaluate(net, BiasField::new(doc.bias.clone())?, transfer, provenance)?;
                if (c.nominal_fidelity - doc.fidelity).abs() > FIDELITY_CHECK_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "controller rank {} stores fidelity {} but recomputes to {}",
                        doc.rank, doc.fidelity, c.nominal_fidelity
                    )));
                }
                Ok(c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessDoc {
    /// Strict lower triangle, row-major.
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDoc {
    pub dim: usize,
    pub seed: u64,
    pub count: usize,
    pub acceptance_rate: f64,
    pub candidates: u64,
    pub processes: Vec<ProcessDoc>,
}

impl EnsembleDoc {
    pub fn from_ensemble(e: &Ensemble) -> Self {
        let processes = e
            .processes
            .iter()
            .map(|p| ProcessDoc {
                rates: p.rates().to_vec(),
                index: match p.source() {
                    ProcessSource::Sampled { index, .. } => Some(*index),
                    _ => None,
                },
            })
            .collect();
        Self {
            dim: e.dim,
            seed: e.seed,
            count: e.count(),
            acceptance_rate: e.acceptance_rate(),
            candidates: e.candidates,
            processes,
        }
    }

    /// Rebuilds the ensemble; every process must be physical and normalized.
    pub fn to_ensemble(&self) -> Result<Ensemble> {
        if self.processes.len() != self.count {
            return Err(Error::DimensionMismatch { expected: self.count, found: self.processes.len() });
        }
        let processes = self
            .processes
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                let raw = RawRates::new(self.dim, doc.rates.clone())?;
                let sum: f64 = raw.values().iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("process {i} is not normalized (sum {sum})")));
                }
                let source = match doc.index {
                    Some(index) => ProcessSource::Sampled { seed: self.seed, index },
                    None => ProcessSource::Explicit,
                };
                let p = DephasingProcess::from_parts(raw, true, source);
                if !p.certificate().ok {
                    return Err(Error::InvalidArgument(format!("process {i} is not physical")));
                }
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(Ensemble { dim: self.dim, seed: self.seed, processes, candidates: self.candidates })
    }
}
