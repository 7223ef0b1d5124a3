//! Expectations under the target from chain-0 output.
//!
//! Besides the plain ergodic mean, chain-0 samples can be reweighted ring
//! by ring: `(1/n) sum_i w_{j(i)} g(X_i)`. The ring weights compare the
//! ring masses under the target, estimated from the higher chains'
//! archives by importance reweighting, with chain 0's own ring frequencies.

use crate::error::{invalid, Result};
use crate::ladders::{Ladders, Level};
use crate::sampler::{RingStore, RunOutput};
use crate::targets::log_sum_exp;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub value: Vec<f64>,
    pub n_used: usize,
    /// Samples per ring; empty for estimators that ignore rings.
    pub ring_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    pub w: Vec<f64>,
    /// Estimated target mass of each ring.
    pub ring_mass: Vec<f64>,
    /// Chain-0 ring frequencies.
    pub chain0_freq: Vec<f64>,
    /// Rings chain 0 never visited; their weight is pinned to zero.
    pub unvisited: Vec<bool>,
}

impl PartitionWeights {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Weights supplied directly, e.g. read back from a previous run.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("partition weights must be finite and non-negative");
        }
        let n = w.len();
        Ok(Self {
            w,
            ring_mass: vec![f64::NAN; n],
            chain0_freq: vec![f64::NAN; n],
            unvisited: vec![false; n],
        })
    }
}

pub fn ergodic_average<P, G>(samples: &[P], g: G) -> Result<EstimateResult>
where
    P: AsRef<[f64]>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if samples.is_empty() {
        return invalid("cannot average an empty sample");
    }
    let mut sum: Vec<f64> = Vec::new();
    for p in samples {
        let v = g(p.as_ref());
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += x;
        }
    }
    let n = samples.len() as f64;
    Ok(EstimateResult {
        value: sum.into_iter().map(|s| s / n).collect(),
        n_used: samples.len(),
        ring_counts: Vec::new(),
    })
}

pub fn partition_weighted_estimate<P, G>(
    samples: &[P],
    rings: &[usize],
    weights: &PartitionWeights,
    g: G,
) -> Result<EstimateResult>
where
    P: AsRef<[f64]>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if samples.is_empty() {
        return invalid("cannot average an empty sample");
    }
    if rings.len() != samples.len() {
        return invalid(format!(
            "{} ring indices for {} samples",
            rings.len(),
            samples.len()
        ));
    }
    let n_rings = weights.len();
    if let Some(&bad) = rings.iter().find(|&&j| j >= n_rings) {
        return invalid(format!(
            "ring index {bad} out of range for {n_rings} partition weights"
        ));
    }
    let mut sum: Vec<f64> = Vec::new();
    let mut counts = vec![0usize; n_rings];
    for (p, &j) in samples.iter().zip(rings) {
        let v = g(p.as_ref());
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        let w = weights.w[j];
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += w * x;
        }
        counts[j] += 1;
    }
    let n = samples.len() as f64;
    Ok(EstimateResult {
        value: sum.into_iter().map(|s| s / n).collect(),
        n_used: samples.len(),
        ring_counts: counts,
    })
}

/// Log importance weight of a state of energy `h` drawn from the working
/// density of `level`, relative to the target.
#[inline]
fn log_importance_weight(h: f64, level: Level) -> f64 {
    h.max(level.floor) / level.temperature - h
}

/// Ring weights from archives of higher chains.
///
/// Each `(store, level)` pool yields a self-normalized estimate of every
/// ring's target mass, since each chain's working density has its own
/// unknown normalizer. Pool estimates are averaged in proportion to pool
/// size. Weights are `mass / chain0_freq`, zero for rings chain 0 never
/// visited, rescaled so that `sum_j w_j chain0_freq_j = 1`.
pub fn estimate_partition_weights(
    pools: &[(&RingStore, Level)],
    chain0_ring_counts: &[usize],
) -> Result<PartitionWeights> {
    let n_rings = chain0_ring_counts.len();
    let n0: usize = chain0_ring_counts.iter().sum();
    if n0 == 0 {
        return invalid("chain 0 has no samples");
    }
    let mut mass = vec![0.0; n_rings];
    let mut pooled = 0usize;
    for (store, level) in pools {
        if store.n_rings() != n_rings {
            return invalid(format!(
                "archive has {} rings, chain 0 counts have {n_rings}",
                store.n_rings()
            ));
        }
        let ring_logs: Vec<(f64, usize)> = (0..n_rings)
            .map(|j| {
                let lw: Vec<f64> = store
                    .energies(j)
                    .iter()
                    .filter(|h| h.is_finite())
                    .map(|&h| log_importance_weight(h, *level))
                    .collect();
                (log_sum_exp(&lw), lw.len())
            })
            .collect();
        let n: usize = ring_logs.iter().map(|r| r.1).sum();
        if n == 0 {
            continue;
        }
        let logs: Vec<f64> = ring_logs.iter().map(|r| r.0).collect();
        let total = log_sum_exp(&logs);
        for (m, l) in mass.iter_mut().zip(&logs) {
            *m += n as f64 * (l - total).exp();
        }
        pooled += n;
    }
    if pooled == 0 {
        return invalid("all higher-chain archives are empty");
    }
    for m in &mut mass {
        *m /= pooled as f64;
    }

    let freq: Vec<f64> = chain0_ring_counts
        .iter()
        .map(|&c| c as f64 / n0 as f64)
        .collect();
    let unvisited: Vec<bool> = chain0_ring_counts.iter().map(|&c| c == 0).collect();
    let mut w: Vec<f64> = mass
        .iter()
        .zip(&freq)
        .map(|(&m, &f)| if f > 0.0 { m / f } else { 0.0 })
        .collect();
    let norm: f64 = w.iter().zip(&freq).map(|(w, f)| w * f).sum();
    if !(norm > 0.0) {
        return invalid("no ring is visited by both chain 0 and the higher chains");
    }
    for v in &mut w {
        *v /= norm;
    }
    Ok(PartitionWeights {
        w,
        ring_mass: mass,
        chain0_freq: freq,
        unvisited,
    })
}

/// Partition weights for a finished run, pooling chains `1..=K`.
pub fn estimate_partition_weights_for_run(
    run: &RunOutput,
    ladders: &Ladders,
) -> Result<PartitionWeights> {
    let pools: Vec<(&RingStore, Level)> = run
        .stores
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, s)| (s, ladders.level(k)))
        .collect();
    let mut counts = vec![0usize; ladders.top() + 1];
    for s in &run.samples {
        counts[s.ring] += 1;
    }
    estimate_partition_weights(&pools, &counts)
}

/// `g(x) = x`.
pub fn g_mean(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// `g(x) = (x_i x_j)` for `i <= j`, row by row.
pub fn g_second_moments(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (x.len() + 1) / 2);
    for i in 0..x.len() {
        for j in i..x.len() {
            out.push(x[i] * x[j]);
        }
    }
    out
}

/// Component labels matching [`g_second_moments`].
pub fn second_moment_labels(dim: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            out.push(format!("x{}x{}", i + 1, j + 1));
        }
    }
    out
}
