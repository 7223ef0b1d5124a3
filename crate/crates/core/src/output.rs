//! Experiment driver and CSV artifacts.
//!
//! A run directory holds `samples.csv`, `manifest.txt`, `tallies.csv`,
//! `estimates.csv`, `diagnostics.csv` and `acf.csv`. Reals are written with
//! 17 significant digits so that they read back exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::{ExperimentConfig, Selection};
use crate::diagnostics::{
    acceptance_report, assign_modes_with, autocorrelation, per_mode_moments, ModeMetric,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    ergodic_average, estimate_partition_weights_for_run, g_mean, g_second_moments,
    partition_weighted_estimate, second_moment_labels, PartitionWeights,
};
use crate::kernels::MoveType;
use crate::sampler::{run_ee_sampler, ChainTally, KeptSample, RunOutput};
use crate::targets::ModeDescriptor;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TALLIES_FILE: &str = "tallies.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ACF_FILE: &str = "acf.csv";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .or_else(|_| invalid(format!("bad {what} `{s}`")))
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .or_else(|_| invalid(format!("bad {what} `{s}`")))
}

/// Where the master seed of a run came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    CommandLine,
    ConfigFile,
    Default,
}

impl SeedSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SeedSource::CommandLine => "command line",
            SeedSource::ConfigFile => "config file",
            SeedSource::Default => "default",
        }
    }
}

pub fn write_samples(path: &Path, samples: &[KeptSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tick".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.extend(["energy", "ring", "move_type", "accepted"].map(String::from));
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![s.tick.to_string()];
        rec.extend(s.x.iter().map(|&v| real(v)));
        rec.push(real(s.energy));
        rec.push(s.ring.to_string());
        rec.push(s.move_type.as_str().to_string());
        rec.push((s.accepted as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<KeptSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    if width < 6 {
        return invalid(format!("{}: too few columns", path.display()));
    }
    let dim = width - 5;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = (1..=dim)
            .map(|i| parse_real(&rec[i], "coordinate"))
            .collect::<Result<Vec<_>>>()?;
        out.push(KeptSample {
            tick: parse_int(&rec[0], "tick")?,
            x,
            energy: parse_real(&rec[dim + 1], "energy")?,
            ring: parse_int(&rec[dim + 2], "ring")?,
            move_type: rec[dim + 3]
                .parse()
                .or_else(|_| invalid(format!("bad move type `{}`", &rec[dim + 3])))?,
            accepted: parse_int::<u8>(&rec[dim + 4], "accepted flag")? != 0,
        });
    }
    Ok(out)
}

pub fn write_tallies(path: &Path, tallies: &[ChainTally]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "chain",
        "move_type",
        "attempted",
        "accepted",
        "empty_ring",
        "accept_prob_sum",
    ])?;
    for (k, t) in tallies.iter().enumerate() {
        w.write_record([
            k.to_string(),
            MoveType::Mh.as_str().into(),
            t.mh_attempts.to_string(),
            t.mh_accepts.to_string(),
            "0".into(),
            real(t.mh_accept_prob_sum),
        ])?;
        w.write_record([
            k.to_string(),
            MoveType::EeJump.as_str().into(),
            t.ee_attempts.to_string(),
            t.ee_accepts.to_string(),
            t.ee_empty.to_string(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tallies(path: &Path) -> Result<Vec<ChainTally>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<ChainTally> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k: usize = parse_int(&rec[0], "chain")?;
        if out.len() <= k {
            out.resize(k + 1, ChainTally::default());
        }
        let t = &mut out[k];
        let attempted = parse_int(&rec[2], "attempt count")?;
        let accepted = parse_int(&rec[3], "accept count")?;
        match rec[1].parse::<MoveType>() {
            Ok(MoveType::Mh) => {
                t.mh_attempts = attempted;
                t.mh_accepts = accepted;
                t.mh_accept_prob_sum = parse_real(&rec[5], "acceptance probability sum")?;
            }
            Ok(MoveType::EeJump) => {
                t.ee_attempts = attempted;
                t.ee_accepts = accepted;
                t.ee_empty = parse_int(&rec[4], "empty-ring count")?;
            }
            Err(_) => return invalid(format!("bad move type `{}`", &rec[1])),
        }
    }
    Ok(out)
}

type GFn = fn(&[f64]) -> Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub estimator: &'static str,
    pub g: &'static str,
    pub component: String,
    pub value: f64,
    pub n_used: usize,
    /// Ring weights; empty for the ergodic average.
    pub weights: Vec<f64>,
}

/// Runs the selected estimators over chain-0 samples. Partition rows are
/// skipped, with a warning, when `weights` is `None`.
pub fn compute_estimates(
    samples: &[KeptSample],
    weights: Option<&PartitionWeights>,
    estimator: Selection,
    g: Selection,
) -> Result<Vec<EstimateRow>> {
    if samples.is_empty() {
        return invalid("no samples to estimate from");
    }
    let dim = samples[0].x.len();
    let points: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let rings: Vec<usize> = samples.iter().map(|s| s.ring).collect();
    let mut gs: Vec<(&'static str, GFn, Vec<String>)> = Vec::new();
    if g != Selection::Second {
        gs.push(("mean", g_mean, (1..=dim).map(|i| format!("x{i}")).collect()));
    }
    if g != Selection::First {
        gs.push((
            "second_moments",
            g_second_moments,
            second_moment_labels(dim),
        ));
    }

    let mut rows = Vec::new();
    for (g_name, g_fn, labels) in &gs {
        if estimator != Selection::Second {
            let e = ergodic_average(&points, g_fn)?;
            for (label, &value) in labels.iter().zip(&e.value) {
                rows.push(EstimateRow {
                    estimator: "ergodic",
                    g: g_name,
                    component: label.clone(),
                    value,
                    n_used: e.n_used,
                    weights: Vec::new(),
                });
            }
        }
        if estimator != Selection::First {
            let Some(w) = weights else {
                log::warn!("no partition weights available; skipping partition estimate");
                continue;
            };
            let e = partition_weighted_estimate(&points, &rings, w, g_fn)?;
            for (label, &value) in labels.iter().zip(&e.value) {
                rows.push(EstimateRow {
                    estimator: "partition",
                    g: g_name,
                    component: label.clone(),
                    value,
                    n_used: e.n_used,
                    weights: w.w.clone(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_estimates(out: impl Write, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "g", "component", "value", "n_used", "weights"])?;
    for r in rows {
        let weights: Vec<String> = r.weights.iter().map(|&v| real(v)).collect();
        w.write_record([
            r.estimator.to_string(),
            r.g.to_string(),
            r.component.clone(),
            real(r.value),
            r.n_used.to_string(),
            weights.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Ring weights recorded by the first partition row of an `estimates.csv`.
pub fn read_partition_weights(path: &Path) -> Result<Option<PartitionWeights>> {
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        if &rec[0] == "partition" {
            let w = rec[5]
                .split(';')
                .map(|s| parse_real(s, "weight"))
                .collect::<Result<Vec<_>>>()?;
            return PartitionWeights::from_weights(w).map(Some);
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub metric: String,
    pub chain: Option<usize>,
    pub move_type: Option<MoveType>,
    pub mode: Option<usize>,
    pub value: f64,
}

impl DiagnosticRow {
    fn new(metric: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            chain: None,
            move_type: None,
            mode: None,
            value,
        }
    }
}

/// Acceptance rates of every chain, and for targets with declared modes the
/// chain-0 occupancy, switch count and per-mode moments. Mode statistics
/// use likelihood assignment; `_euclidean` rows repeat occupancy and
/// switching under nearest-location assignment.
pub fn compute_diagnostics(
    samples: &[KeptSample],
    tallies: &[ChainTally],
    modes: Option<&[ModeDescriptor]>,
) -> Result<Vec<DiagnosticRow>> {
    let mut rows = Vec::new();
    for r in acceptance_report(tallies).rows {
        rows.push(DiagnosticRow {
            chain: Some(r.chain),
            move_type: Some(r.move_type),
            ..DiagnosticRow::new("acceptance_rate", r.rate())
        });
    }
    for (k, t) in tallies.iter().enumerate() {
        if t.ee_attempts > 0 {
            rows.push(DiagnosticRow {
                chain: Some(k),
                move_type: Some(MoveType::EeJump),
                ..DiagnosticRow::new(
                    "empty_ring_fraction",
                    t.ee_empty as f64 / t.ee_attempts as f64,
                )
            });
        }
    }
    let Some(modes) = modes else {
        return Ok(rows);
    };
    if samples.is_empty() {
        return Ok(rows);
    }
    let points: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let dim = points[0].len();
    let chain0 = |metric: String, mode: Option<usize>, value: f64| DiagnosticRow {
        chain: Some(0),
        mode,
        ..DiagnosticRow::new(metric, value)
    };
    for (metric, suffix) in [
        (ModeMetric::Likelihood, ""),
        (ModeMetric::Euclidean, "_euclidean"),
    ] {
        let trace = assign_modes_with(&points, modes, metric)?;
        for (m, &occ) in trace.occupancy.iter().enumerate() {
            rows.push(chain0(format!("occupancy{suffix}"), Some(m), occ));
        }
        rows.push(chain0(
            format!("switch_count{suffix}"),
            None,
            trace.switch_count as f64,
        ));
        if metric != ModeMetric::Likelihood {
            continue;
        }
        for mm in per_mode_moments(&points, &trace) {
            let m = Some(mm.mode);
            rows.push(chain0("mode_count".into(), m, mm.count as f64));
            let Some(mean) = &mm.mean else { continue };
            for (i, &mu) in mean.iter().enumerate() {
                rows.push(chain0(format!("mode_mean_x{}", i + 1), m, mu));
                rows.push(chain0(
                    format!("mode_sd_x{}", i + 1),
                    m,
                    mm.std_dev(i).unwrap_or(f64::NAN),
                ));
                for j in i + 1..dim {
                    rows.push(chain0(
                        format!("mode_corr_x{}x{}", i + 1, j + 1),
                        m,
                        mm.correlation(i, j).unwrap_or(f64::NAN),
                    ));
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_diagnostics(out: impl Write, rows: &[DiagnosticRow]) -> Result<()> {
    let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "chain", "move_type", "mode", "value"])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            opt(r.chain),
            r.move_type.map_or("", MoveType::as_str).to_string(),
            opt(r.mode),
            real(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let opt = |s: &str| -> Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse_int(s, "index").map(Some)
        }
    };
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let move_type = match &rec[2] {
            "" => None,
            s => Some(
                s.parse()
                    .or_else(|_| invalid(format!("bad move type `{s}`")))?,
            ),
        };
        out.push(DiagnosticRow {
            metric: rec[0].to_string(),
            chain: opt(&rec[1])?,
            move_type,
            mode: opt(&rec[3])?,
            value: parse_real(&rec[4], "value")?,
        });
    }
    Ok(out)
}

/// Per-coordinate ACF of chain 0 up to `max_lag` (capped by the series
/// length). A constant coordinate gets a NaN column.
pub fn compute_acf(samples: &[KeptSample], max_lag: usize) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let lag = max_lag.min(samples.len() - 1);
    (0..samples[0].x.len())
        .map(|i| {
            let series: Vec<f64> = samples.iter().map(|s| s.x[i]).collect();
            match autocorrelation(&series, lag) {
                Ok(a) => Ok(a.acf),
                Err(Error::ConstantSeries) => {
                    log::warn!("coordinate x{} is constant; its ACF is undefined", i + 1);
                    Ok(vec![f64::NAN; lag + 1])
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn write_acf(path: &Path, acf: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["lag".to_string()];
    header.extend((1..=acf.len()).map(|i| format!("acf_x{i}")));
    w.write_record(&header)?;
    let n_lags = acf.first().map_or(0, Vec::len);
    for lag in 0..n_lags {
        let mut rec = vec![lag.to_string()];
        rec.extend(acf.iter().map(|col| real(col[lag])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn manifest_text(config: &ExperimentConfig, seed_source: SeedSource) -> String {
    format!(
        "# ee-lab run manifest\n# seed source: {}\n{}",
        seed_source.as_str(),
        config.to_manifest()
    )
}

/// Runs one experiment and writes every artifact into `config.out_dir`.
/// The config and target are validated before anything touches disk.
pub fn run_experiment(config: &ExperimentConfig, seed_source: SeedSource) -> Result<RunOutput> {
    let target = config.build_target()?;
    let t = target.as_target();
    config.sampler.validate(t.dim())?;

    let run = run_ee_sampler(&config.sampler, t)?;
    let weights = match estimate_partition_weights_for_run(&run, &config.sampler.ladders) {
        Ok(w) => Some(w),
        Err(e) => {
            log::warn!("partition weights unavailable: {e}");
            None
        }
    };
    let estimates = compute_estimates(&run.samples, weights.as_ref(), config.estimator, config.g)?;
    let diagnostics = compute_diagnostics(&run.samples, &run.tallies, target.as_target().modes())?;
    let acf = compute_acf(&run.samples, config.acf_max_lag)?;

    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    write_samples(&dir.join(SAMPLES_FILE), &run.samples)?;
    fs::write(dir.join(MANIFEST_FILE), manifest_text(config, seed_source))?;
    write_tallies(&dir.join(TALLIES_FILE), &run.tallies)?;
    write_estimates(fs::File::create(dir.join(ESTIMATES_FILE))?, &estimates)?;
    write_diagnostics(fs::File::create(dir.join(DIAGNOSTICS_FILE))?, &diagnostics)?;
    write_acf(&dir.join(ACF_FILE), &acf)?;
    Ok(run)
}

/// Reads the manifest of a run directory back into its config.
pub fn read_manifest(dir: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    crate::config::parse_config(&text).or_else(|e| invalid(format!("manifest: {e}")))
}

/// Estimates over the samples of an existing run directory, using the ring
/// weights recorded in its `estimates.csv`.
pub fn estimate_from_dir(dir: &Path) -> Result<Vec<EstimateRow>> {
    let config = read_manifest(dir)?;
    let samples = read_samples(&dir.join(SAMPLES_FILE))?;
    let weights = read_partition_weights(&dir.join(ESTIMATES_FILE))?;
    compute_estimates(&samples, weights.as_ref(), config.estimator, config.g)
}

/// Diagnostics over the samples and tallies of an existing run directory.
pub fn diagnose_dir(dir: &Path) -> Result<Vec<DiagnosticRow>> {
    let config = read_manifest(dir)?;
    let target = config.build_target()?;
    let samples = read_samples(&dir.join(SAMPLES_FILE))?;
    let tallies = read_tallies(&dir.join(TALLIES_FILE))?;
    compute_diagnostics(&samples, &tallies, target.as_target().modes())
}
