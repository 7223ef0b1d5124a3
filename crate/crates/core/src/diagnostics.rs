//! Mixing diagnostics: autocorrelation, mode occupancy and switching,
//! acceptance rates and per-mode moments.

use crate::error::{invalid, Error, Result};
use crate::kernels::{nearest_mode, MoveType};
use crate::sampler::ChainTally;
use crate::targets::ModeDescriptor;

#[derive(Debug, Clone, PartialEq)]
pub struct AcfResult {
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
}

/// Sample autocorrelation with the lag-0 sum as the common denominator.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<AcfResult> {
    let n = series.len();
    if n <= max_lag {
        return invalid(format!(
            "series of length {n} is too short for lag {max_lag}"
        ));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if !(c0 > 0.0) {
        return Err(Error::ConstantSeries);
    }
    let acf = (0..=max_lag)
        .map(|lag| {
            let c: f64 = centered[..n - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            c / c0
        })
        .collect();
    Ok(AcfResult {
        lags: (0..=max_lag).collect(),
        acf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrace {
    pub assignments: Vec<usize>,
    pub switch_count: usize,
    pub occupancy: Vec<f64>,
}

impl ModeTrace {
    pub fn from_assignments(assignments: Vec<usize>, n_modes: usize) -> Self {
        let switch_count = assignments.windows(2).filter(|w| w[0] != w[1]).count();
        let mut counts = vec![0usize; n_modes];
        for &a in &assignments {
            counts[a] += 1;
        }
        let n = assignments.len().max(1) as f64;
        Self {
            occupancy: counts.iter().map(|&c| c as f64 / n).collect(),
            assignments,
            switch_count,
        }
    }
}

/// Rule for attributing a sample to a declared mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeMetric {
    /// Nearest mode location, lowest index on ties.
    Euclidean,
    /// Highest density under the modes' local Gaussians. Separates
    /// elongated clusters that reach across the Euclidean bisector.
    Likelihood,
}

/// Labels every sample with its Euclidean-nearest declared mode.
pub fn assign_modes<P: AsRef<[f64]>>(samples: &[P], modes: &[ModeDescriptor]) -> Result<ModeTrace> {
    assign_modes_with(samples, modes, ModeMetric::Euclidean)
}

pub fn assign_modes_with<P: AsRef<[f64]>>(
    samples: &[P],
    modes: &[ModeDescriptor],
    metric: ModeMetric,
) -> Result<ModeTrace> {
    if modes.is_empty() {
        return invalid("mode assignment needs at least one mode");
    }
    let assignments = samples
        .iter()
        .map(|s| match metric {
            ModeMetric::Euclidean => nearest_mode(s.as_ref(), modes),
            ModeMetric::Likelihood => most_likely_mode(s.as_ref(), modes),
        })
        .collect();
    Ok(ModeTrace::from_assignments(assignments, modes.len()))
}

fn most_likely_mode(x: &[f64], modes: &[ModeDescriptor]) -> usize {
    let mut best = 0;
    let mut best_l = f64::NEG_INFINITY;
    for (i, m) in modes.iter().enumerate() {
        let l = m.local_gaussian().log_density(x);
        if l > best_l {
            best = i;
            best_l = l;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceRow {
    pub chain: usize,
    pub move_type: MoveType,
    pub accepted: u64,
    pub attempted: u64,
}

impl AcceptanceRow {
    pub fn rate(&self) -> f64 {
        self.accepted as f64 / self.attempted as f64
    }
}

/// Acceptance counts by chain and move type. Cells with no attempts are
/// left out.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceReport {
    pub rows: Vec<AcceptanceRow>,
}

impl AcceptanceReport {
    pub fn rate(&self, chain: usize, move_type: MoveType) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.chain == chain && r.move_type == move_type)
            .map(AcceptanceRow::rate)
    }
}

pub fn acceptance_report(tallies: &[ChainTally]) -> AcceptanceReport {
    let mut rows = Vec::new();
    for (chain, t) in tallies.iter().enumerate() {
        for (move_type, accepted, attempted) in [
            (MoveType::Mh, t.mh_accepts, t.mh_attempts),
            (MoveType::EeJump, t.ee_accepts, t.ee_attempts),
        ] {
            if attempted > 0 {
                rows.push(AcceptanceRow {
                    chain,
                    move_type,
                    accepted,
                    attempted,
                });
            }
        }
    }
    AcceptanceReport { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMoments {
    pub mode: usize,
    pub count: usize,
    /// `None` when fewer than two samples were assigned.
    pub mean: Option<Vec<f64>>,
    /// Row-major sample covariance (denominator `n - 1`).
    pub covariance: Option<Vec<f64>>,
}

impl ModeMoments {
    /// Correlation between coordinates `i` and `j`.
    pub fn correlation(&self, i: usize, j: usize) -> Option<f64> {
        let cov = self.covariance.as_ref()?;
        let d = self.mean.as_ref()?.len();
        Some(cov[i * d + j] / (cov[i * d + i] * cov[j * d + j]).sqrt())
    }

    pub fn std_dev(&self, i: usize) -> Option<f64> {
        let cov = self.covariance.as_ref()?;
        let d = self.mean.as_ref()?.len();
        Some(cov[i * d + i].sqrt())
    }
}

pub fn per_mode_moments<P: AsRef<[f64]>>(samples: &[P], trace: &ModeTrace) -> Vec<ModeMoments> {
    let n_modes = trace.occupancy.len();
    (0..n_modes)
        .map(|mode| {
            let members: Vec<&[f64]> = samples
                .iter()
                .zip(&trace.assignments)
                .filter(|(_, &a)| a == mode)
                .map(|(s, _)| s.as_ref())
                .collect();
            let count = members.len();
            if count < 2 {
                return ModeMoments {
                    mode,
                    count,
                    mean: None,
                    covariance: None,
                };
            }
            let d = members[0].len();
            let mut mean = vec![0.0; d];
            for m in &members {
                for (acc, v) in mean.iter_mut().zip(m.iter()) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= count as f64);
            let mut cov = vec![0.0; d * d];
            for m in &members {
                for i in 0..d {
                    for j in 0..d {
                        cov[i * d + j] += (m[i] - mean[i]) * (m[j] - mean[j]);
                    }
                }
            }
            cov.iter_mut().for_each(|v| *v /= (count - 1) as f64);
            ModeMoments {
                mode,
                count,
                mean: Some(mean),
                covariance: Some(cov),
            }
        })
        .collect()
}
