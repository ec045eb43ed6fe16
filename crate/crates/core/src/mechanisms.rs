//! Differential-privacy primitives.
//!
//! Numeric quasi-identifiers receive Laplace noise scaled by the group's local
//! sensitivity. Categorical ones are replaced by a node drawn with the
//! exponential mechanism from the minimal subtree covering the group's values,
//! scored by total categorical distortion.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::grouping::QidGroup;
use crate::model::NumericAttr;
use crate::taxonomy::{minimal_cover_subtree, NodeId, Subtree, TaxonomyTree};

/// Deterministic random stream keyed by seed, release, group and a label.
///
/// The key fully determines the ChaCha20 key, so streams never depend on
/// evaluation order.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, release: u32, group: u64, label: &str) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&u64::from(release).to_le_bytes());
        key[16..24].copy_from_slice(&group.to_le_bytes());
        key[24..].copy_from_slice(&fnv1a(label.as_bytes()).to_le_bytes());
        Self {
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, 0, "")
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Inverse CDF of Laplace(0, b) at `u ∈ (−½, ½)`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_sample(scale: f64, stream: &mut NoiseStream) -> Result<f64> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Argument(format!("Laplace scale must be finite and non-negative, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    loop {
        let u = stream.uniform() - 0.5;
        if u != -0.5 {
            return Ok(laplace_inverse_cdf(u, scale));
        }
    }
}

/// `max − min` of members' values at a numeric attribute; interval-valued
/// members contribute both endpoints.
pub fn local_sensitivity(g: &QidGroup, attr: usize) -> f64 {
    let (lo, hi) = g
        .members
        .iter()
        .map(|m| m.num[attr].bounds())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Noised values for every member at one numeric attribute, in member order.
/// Intervals collapse to their midpoint first; results are clamped to the
/// attribute's global bounds.
pub fn perturb_numeric_group(
    g: &QidGroup,
    attr: usize,
    spec: &NumericAttr,
    epsilon: f64,
    stream: &mut NoiseStream,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let scale = local_sensitivity(g, attr) / epsilon;
    g.members
        .iter()
        .map(|m| {
            let noised = m.num[attr].midpoint() + laplace_sample(scale, stream)?;
            Ok(spec.clamp(noised))
        })
        .collect()
}

/// Distinct member values of a group at a categorical attribute.
pub fn group_domain(g: &QidGroup, attr: usize) -> BTreeSet<NodeId> {
    g.members.iter().map(|m| m.cat[attr]).collect()
}

/// Candidate replacements ψ: the observed values plus their ancestors inside
/// the minimal covering subtree. Since that subtree is exactly the union of
/// those paths, ψ is its node set.
pub fn candidate_noise_set<'t>(dom: &BTreeSet<NodeId>, tree: &'t TaxonomyTree) -> Result<Subtree<'t>> {
    minimal_cover_subtree(dom.iter().copied(), tree)
}

/// Total distortion `q(v, ψ) = Σ_{u∈ψ} IL_c(u, v)` measured on the covering
/// subtree.
pub fn quality(v: NodeId, psi: &Subtree<'_>) -> Result<f64> {
    if !psi.nodes().contains(&v) {
        return Err(Error::Argument(format!(
            "`{}` is not a candidate noise value",
            crate::taxonomy::Scope::tree(psi).node_name(v)
        )));
    }
    let tree = crate::taxonomy::Scope::tree(psi);
    let root_depth = tree.depth(psi.root());
    Ok(psi
        .nodes()
        .iter()
        .map(|&u| tree.distortion_below(u, v, root_depth))
        .sum())
}

/// Whether `(u, v)` counts towards the sensitivity range: distinct nodes, and
/// not two observed values on the same ancestor chain.
pub fn sensitivity_pair(u: NodeId, v: NodeId, dom: &BTreeSet<NodeId>, tree: &TaxonomyTree) -> bool {
    if u == v {
        return false;
    }
    let both_observed = dom.contains(&v);
    !(both_observed && (tree.covers(u, v) || tree.covers(v, u)))
}

/// Δq: spread between the largest and smallest `IL_c(u, v)` over
/// `u ∈ dom`, `v ∈ ψ`, restricted by [`sensitivity_pair`]. Zero when no pair
/// qualifies.
pub fn quality_sensitivity(dom: &BTreeSet<NodeId>, psi: &Subtree<'_>) -> f64 {
    let tree = crate::taxonomy::Scope::tree(psi);
    let root_depth = tree.depth(psi.root());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &u in dom {
        for &v in psi.nodes() {
            if sensitivity_pair(u, v, dom, tree) {
                let d = tree.distortion_below(u, v, root_depth);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Scored candidates for one group and categorical attribute.
#[derive(Clone, Debug)]
pub struct ExponentialCandidates<'t> {
    pub psi: Subtree<'t>,
    pub candidates: Vec<(NodeId, f64)>,
    pub sensitivity: f64,
}

impl<'t> ExponentialCandidates<'t> {
    pub fn new(dom: &BTreeSet<NodeId>, tree: &'t TaxonomyTree) -> Result<Self> {
        let psi = candidate_noise_set(dom, tree)?;
        let candidates = psi
            .nodes()
            .iter()
            .map(|&v| Ok((v, quality(v, &psi)?)))
            .collect::<Result<Vec<_>>>()?;
        let sensitivity = quality_sensitivity(dom, &psi);
        Ok(Self {
            psi,
            candidates,
            sensitivity,
        })
    }

    /// Unnormalized weights `exp(−ε·q / (2·Δq))`; uniform when `Δq = 0`.
    pub fn raw_weights(&self, epsilon: f64) -> Vec<f64> {
        if self.sensitivity == 0.0 {
            return vec![1.0; self.candidates.len()];
        }
        self.candidates
            .iter()
            .map(|&(_, q)| (-epsilon * q / (2.0 * self.sensitivity)).exp())
            .collect()
    }

    /// Normalized selection probabilities, computed stably in log space.
    pub fn probabilities(&self, epsilon: f64) -> Vec<f64> {
        if self.sensitivity == 0.0 {
            let n = self.candidates.len() as f64;
            return vec![1.0 / n; self.candidates.len()];
        }
        let scale = epsilon / (2.0 * self.sensitivity);
        let q_min = self
            .candidates
            .iter()
            .map(|&(_, q)| q)
            .fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = self
            .candidates
            .iter()
            .map(|&(_, q)| (-(q - q_min) * scale).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    pub fn choose(&self, epsilon: f64, stream: &mut NoiseStream) -> Result<NodeId> {
        if !(epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        if self.candidates.len() == 1 {
            return Ok(self.candidates[0].0);
        }
        let dist = WeightedIndex::new(self.probabilities(epsilon))
            .map_err(|e| Error::Argument(format!("degenerate exponential weights: {e}")))?;
        Ok(self.candidates[dist.sample(stream.rng())].0)
    }
}

/// One exponential-mechanism draw for a group's categorical attribute.
pub fn exponential_choose(
    dom: &BTreeSet<NodeId>,
    tree: &TaxonomyTree,
    epsilon: f64,
    stream: &mut NoiseStream,
) -> Result<NodeId> {
    ExponentialCandidates::new(dom, tree)?.choose(epsilon, stream)
}
