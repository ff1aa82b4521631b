//! Spin-network topology and Hamiltonian assembly.
//!
//! Node indices are zero-based in the library. File formats and the CLI use
//! one-based labels and convert at the boundary.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest network accepted by [`full_space_hamiltonian`].
pub const MAX_FULL_SPACE_SPINS: usize = 12;
/// Largest network accepted by [`verify_subspace_reduction`].
pub const MAX_VERIFY_SPINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Chain,
    Ring,
    Edges,
}

/// Coupling input for [`build_network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Couplings {
    /// Same strength on every topology edge.
    Uniform(f64),
    /// Explicit `(m, n, J)` triples, zero-based.
    PerEdge(Vec<(usize, usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinNetwork {
    n_spins: usize,
    topology: Topology,
    // key (m, n) with m < n
    couplings: BTreeMap<(usize, usize), f64>,
    kappa: f64,
}

fn topology_edges(topology: Topology, n: usize) -> Vec<(usize, usize)> {
    match topology {
        Topology::Chain => (0..n - 1).map(|m| (m, m + 1)).collect(),
        Topology::Ring => {
            let mut edges: Vec<_> = (0..n - 1).map(|m| (m, m + 1)).collect();
            // a two-site ring closes onto its only edge
            if n > 2 {
                edges.push((0, n - 1));
            }
            edges
        }
        Topology::Edges => Vec::new(),
    }
}

pub fn build_network(
    topology: Topology,
    n_spins: usize,
    couplings: Couplings,
    kappa: f64,
) -> Result<SpinNetwork> {
    if n_spins < 2 {
        return Err(Error::InvalidNetwork(format!("need at least 2 spins, got {n_spins}")));
    }
    if !kappa.is_finite() {
        return Err(Error::InvalidNetwork("kappa must be finite".into()));
    }
    let allowed = topology_edges(topology, n_spins);
    let mut map = BTreeMap::new();
    match couplings {
        Couplings::Uniform(j) => {
            if topology == Topology::Edges {
                return Err(Error::InvalidNetwork(
                    "edge-list topology needs explicit per-edge couplings".into(),
                ));
            }
            if !j.is_finite() {
                return Err(Error::InvalidNetwork("coupling must be finite".into()));
            }
            for e in allowed {
                map.insert(e, j);
            }
        }
        Couplings::PerEdge(list) => {
            for (m, n, j) in list {
                if m >= n_spins || n >= n_spins {
                    return Err(Error::InvalidNetwork(format!(
                        "edge ({m}, {n}) out of range for {n_spins} spins"
                    )));
                }
                if m == n {
                    return Err(Error::InvalidNetwork(format!("self-coupling on node {m}")));
                }
                if !j.is_finite() {
                    return Err(Error::InvalidNetwork(format!("coupling ({m}, {n}) not finite")));
                }
                let key = (m.min(n), m.max(n));
                if topology != Topology::Edges && !allowed.contains(&key) {
                    return Err(Error::InvalidNetwork(format!(
                        "edge ({m}, {n}) is not part of the {topology:?} topology"
                    )));
                }
                if let Some(prev) = map.insert(key, j) {
                    if prev != j {
                        return Err(Error::InvalidNetwork(format!(
                            "non-symmetric couplings on ({m}, {n}): {prev} vs {j}"
                        )));
                    }
                }
            }
        }
    }
    if map.is_empty() {
        return Err(Error::InvalidNetwork("network has no edges".into()));
    }
    Ok(SpinNetwork { n_spins, topology, couplings: map, kappa })
}

impl SpinNetwork {
    pub fn ring(n: usize, j: f64) -> Result<Self> {
        build_network(Topology::Ring, n, Couplings::Uniform(j), 0.0)
    }

    pub fn chain(n: usize, j: f64) -> Result<Self> {
        build_network(Topology::Chain, n, Couplings::Uniform(j), 0.0)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Coupling strength between two nodes, in either order.
    pub fn coupling(&self, m: usize, n: usize) -> Option<f64> {
        self.couplings.get(&(m.min(n), m.max(n))).copied()
    }

    /// Edges as `(m, n, J)` with `m < n`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.couplings.iter().map(|(&(m, n), &j)| (m, n, j))
    }

    /// True when every coupling has the same value.
    pub fn uniform_coupling(&self) -> Option<f64> {
        let mut it = self.couplings.values();
        let first = *it.next()?;
        it.all(|&j| j == first).then_some(first)
    }
}

/// Static on-site energies `D_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasField(Vec<f64>);

impl BiasField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("bias entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Same field shifted to zero mean. The shift is a global phase.
    pub fn centered(&self) -> Self {
        let mean = self.0.iter().sum::<f64>() / self.0.len().max(1) as f64;
        Self(self.0.iter().map(|d| d - mean).collect())
    }
}

fn check_bias(net: &SpinNetwork, bias: &BiasField) -> Result<()> {
    if bias.len() != net.n_spins {
        return Err(Error::DimensionMismatch { expected: net.n_spins, found: bias.len() });
    }
    Ok(())
}

/// Single-excitation Hamiltonian: `D` on the diagonal, `J_mn` off the diagonal.
pub fn reduced_hamiltonian(net: &SpinNetwork, bias: &BiasField) -> Result<DMatrix<f64>> {
    if net.kappa != 0.0 {
        return Err(Error::UnsupportedCoupling(net.kappa));
    }
    check_bias(net, bias)?;
    let n = net.n_spins;
    let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(bias.as_slice()));
    for (m, k, j) in net.edges() {
        h[(m, k)] = j;
        h[(k, m)] = j;
    }
    debug_assert_eq!(h.nrows(), n);
    Ok(h)
}

/// True when spin `site` is excited in full-space basis state `index`.
///
/// Spin 0 is the leftmost tensor factor, and the excited state is the `+1`
/// eigenvector of Z, which is the first basis vector of each factor. So a
/// zero bit means excited.
pub fn is_excited(n_spins: usize, index: usize, site: usize) -> bool {
    (index >> (n_spins - 1 - site)) & 1 == 0
}

/// Eigenvalue of `Z_site` on basis state `index`.
fn z_value(n_spins: usize, index: usize, site: usize) -> f64 {
    if is_excited(n_spins, index, site) {
        1.0
    } else {
        -1.0
    }
}

/// Full `2^N` Hamiltonian `sum J (XX + YY + kappa ZZ) + sum D Z`.
pub fn full_space_hamiltonian(net: &SpinNetwork, bias: &BiasField) -> Result<DMatrix<Complex64>> {
    let n = net.n_spins;
    if n > MAX_FULL_SPACE_SPINS {
        return Err(Error::TooLarge { n, max: MAX_FULL_SPACE_SPINS });
    }
    check_bias(net, bias)?;
    let dim = 1usize << n;
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);
    let d = bias.as_slice();
    for idx in 0..dim {
        let mut diag: f64 = (0..n).map(|s| d[s] * z_value(n, idx, s)).sum();
        for (a, b, j) in net.edges() {
            let za = z_value(n, idx, a);
            let zb = z_value(n, idx, b);
            diag += net.kappa * j * za * zb;
            // XX + YY flips an anti-aligned pair with amplitude 2 and
            // annihilates an aligned one.
            if za != zb {
                let flipped = idx ^ (1 << (n - 1 - a)) ^ (1 << (n - 1 - b));
                h[(flipped, idx)] += Complex64::new(2.0 * j, 0.0);
            }
        }
        h[(idx, idx)] += Complex64::new(diag, 0.0);
    }
    Ok(h)
}

/// Diagonal of the excitation-number operator `S = 1/2 sum (I + Z_n)`.
pub fn excitation_number(n_spins: usize) -> Vec<f64> {
    (0..1usize << n_spins)
        .map(|idx| (0..n_spins).filter(|&s| is_excited(n_spins, idx, s)).count() as f64)
        .collect()
}

/// Full-space index of the state with only `site` excited.
pub fn single_excitation_index(n_spins: usize, site: usize) -> usize {
    let all_down = (1usize << n_spins) - 1;
    all_down ^ (1 << (n_spins - 1 - site))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceReport {
    pub commutes_with_s: bool,
    /// Max-entry norm of `[H_full, S]`.
    pub commutator_norm: f64,
    /// Ratio of the projected off-diagonal entries to the reduced ones
    /// (`None` when all couplings vanish).
    pub proportionality_factor: Option<f64>,
    /// Uniform energy shift `s` in `P ≈ f H_D + s I`.
    pub diagonal_shift: f64,
    /// Max-entry residual of `P - f H_D - s I`.
    pub residual: f64,
}

/// Projects the full Hamiltonian onto the single-excitation subspace and
/// compares it with [`reduced_hamiltonian`].
pub fn verify_subspace_reduction(net: &SpinNetwork, bias: &BiasField) -> Result<SubspaceReport> {
    let n = net.n_spins;
    if n > MAX_VERIFY_SPINS {
        return Err(Error::TooLarge { n, max: MAX_VERIFY_SPINS });
    }
    let reduced = reduced_hamiltonian(net, bias)?;
    let full = full_space_hamiltonian(net, bias)?;
    let s = excitation_number(n);

    // S is diagonal, so [H, S]_ij = H_ij (s_j - s_i)
    let mut commutator_norm: f64 = 0.0;
    for i in 0..full.nrows() {
        for j in 0..full.ncols() {
            commutator_norm = commutator_norm.max((full[(i, j)] * (s[j] - s[i])).norm());
        }
    }

    let basis: Vec<usize> = (0..n).map(|site| single_excitation_index(n, site)).collect();
    let projected = DMatrix::from_fn(n, n, |a, b| full[(basis[a], basis[b])].re);

    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                num += projected[(a, b)] * reduced[(a, b)];
                den += reduced[(a, b)] * reduced[(a, b)];
            }
        }
    }
    let proportionality_factor = (den > 0.0).then(|| num / den);
    let factor = proportionality_factor.unwrap_or(2.0);
    let diagonal_shift =
        (0..n).map(|a| projected[(a, a)] - factor * reduced[(a, a)]).sum::<f64>() / n as f64;
    let mut residual: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let shift = if a == b { diagonal_shift } else { 0.0 };
            residual = residual.max((projected[(a, b)] - factor * reduced[(a, b)] - shift).abs());
        }
    }

    Ok(SubspaceReport {
        commutes_with_s: commutator_norm <= 1e-12,
        commutator_norm,
        proportionality_factor,
        diagonal_shift,
        residual,
    })
}
