//! Flat `key = value` experiment configuration.
//!
//! A document may start from a named preset; later keys override the
//! preset's. Lists are comma separated; matrices and per-component vectors
//! separate components with `;` and give matrices row-major.
//!
//! The manifest written by [`ExperimentConfig::to_manifest`] lists every
//! effective key with ladders expanded, and parses back to the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::ladders::{build_geometric_ladder, EnergyLadder, Ladders, TemperatureLadder};
use crate::sampler::{InitBox, ProposalKind, SamplerConfig};
use crate::targets::{
    make_example1, make_example2, make_gamma_target, GammaTarget, GaussianMixture,
    GaussianMixtureParams, Target,
};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

const KEYS: &[&str] = &[
    "preset",
    "target",
    "mixture_weights",
    "mixture_means",
    "mixture_covariances",
    "gamma_shape",
    "gamma_rate",
    "k",
    "energy_levels",
    "energy_floor",
    "energy_geometric",
    "temperatures",
    "temperature_max",
    "p_ee",
    "burn_in",
    "ring_iters",
    "n_keep",
    "step_scales",
    "proposals",
    "seed",
    "init_low",
    "init_high",
    "estimator",
    "g",
    "acf_max_lag",
    "out",
];

pub const PRESETS: &[&str] = &[
    "example1",
    "example2_naive",
    "example2_naive_k4",
    "example2_tuned",
    "gamma",
];

/// Lowest energy of the unequal-variance mixture, rounded as used to place
/// the top of its ladders.
pub const EXAMPLE2_MIN_ENERGY: f64 = -6.679;

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Mixture(GaussianMixtureParams),
    Gamma { shape: f64, rate: f64 },
}

/// A target built from a [`TargetSpec`].
#[derive(Debug, Clone)]
pub enum BuiltTarget {
    Mixture(GaussianMixture),
    Gamma(GammaTarget),
}

impl BuiltTarget {
    pub fn as_target(&self) -> &dyn Target {
        match self {
            BuiltTarget::Mixture(m) => m,
            BuiltTarget::Gamma(g) => g,
        }
    }
}

impl TargetSpec {
    pub fn build(&self) -> crate::Result<BuiltTarget> {
        Ok(match self {
            TargetSpec::Mixture(p) => BuiltTarget::Mixture(GaussianMixture::new(p.clone())?),
            TargetSpec::Gamma { shape, rate } => {
                BuiltTarget::Gamma(make_gamma_target(*shape, *rate)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub sampler: SamplerConfig,
    /// `First` = ergodic average, `Second` = partition-weighted.
    pub estimator: Selection,
    /// `First` = mean, `Second` = second moments.
    pub g: Selection,
    pub acf_max_lag: usize,
    pub out_dir: PathBuf,
}

fn preset_entries(name: &str) -> Result<Vec<(&'static str, String)>> {
    fn mixture(p: &GaussianMixtureParams) -> Vec<(&'static str, String)> {
        vec![
            ("target", "mixture".into()),
            ("mixture_weights", join(&p.weights)),
            ("mixture_means", join_groups(&p.means)),
            ("mixture_covariances", join_groups(&p.covariances)),
        ]
    }
    let example1 = || {
        let mut e = mixture(make_example1().params());
        e.extend([
            ("k", "2".into()),
            ("energy_geometric", "0.5, 100.5".into()),
            ("temperature_max", "60".into()),
            ("p_ee", "0.1".into()),
            ("burn_in", "2000".into()),
            ("ring_iters", "2000".into()),
            ("n_keep", "20000".into()),
            ("step_scales", "0.5".into()),
            ("proposals", "random_walk".into()),
            ("init_low", "0, 0".into()),
            ("init_high", "1, 1".into()),
        ]);
        e
    };
    let example2_naive = |k: usize| {
        let mut e = example1();
        e.retain(|(key, _)| {
            !key.starts_with("mixture") && *key != "k" && *key != "energy_geometric"
        });
        e.extend(mixture(make_example2().params()).into_iter().skip(1));
        e.push(("k", k.to_string()));
        e.push((
            "energy_geometric",
            format!("-7, {}", EXAMPLE2_MIN_ENERGY + 100.0),
        ));
        e
    };
    Ok(match name {
        "example1" => example1(),
        "example2_naive" => example2_naive(2),
        "example2_naive_k4" => example2_naive(4),
        "example2_tuned" => {
            let mut e = mixture(make_example2().params());
            let h1 = (4.0 * std::f64::consts::PI).ln() + 0.6;
            e.extend([
                ("k", "6".into()),
                ("energy_floor", "-7".into()),
                (
                    "energy_geometric",
                    format!("{h1}, {}", EXAMPLE2_MIN_ENERGY + 100.0),
                ),
                ("temperature_max", "70".into()),
                ("p_ee", "0.5".into()),
                ("burn_in", "20000".into()),
                ("ring_iters", "20000".into()),
                ("n_keep", "50000".into()),
                ("step_scales", "0.5".into()),
                (
                    "proposals",
                    "mode_jump, random_walk, random_walk, random_walk, random_walk, random_walk, random_walk"
                        .into(),
                ),
                ("init_low", "0, 0".into()),
                ("init_high", "1, 1".into()),
            ]);
            e
        }
        "gamma" => vec![
            ("target", "gamma".into()),
            ("gamma_shape", "0.5".into()),
            ("gamma_rate", "1".into()),
            ("k", "2".into()),
            ("energy_levels", "-10, 0.5, 4".into()),
            ("temperatures", "1, 3, 9".into()),
            ("p_ee", "0.1".into()),
            ("burn_in", "2000".into()),
            ("ring_iters", "2000".into()),
            ("n_keep", "100000".into()),
            ("step_scales", "1".into()),
            ("proposals", "random_walk".into()),
            ("init_low", "0.1".into()),
            ("init_high", "1".into()),
        ],
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    })
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_groups(groups: &[Vec<f64>]) -> String {
    groups
        .iter()
        .map(|g| join(g))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Raw value plus the line it came from (0 for preset-supplied values).
struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn required(&self, key: &str) -> Result<(&str, usize)> {
        self.raw(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, raw: &str, line: usize) -> Result<T> {
        raw.trim().parse().map_err(|_| ConfigError::Malformed {
            line,
            msg: format!("`{key}`: cannot parse {:?} as a number", raw.trim()),
        })
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (raw, line) = self.required(key)?;
        self.parse_num(key, raw, line)
    }

    fn num_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some((raw, line)) => self.parse_num(key, raw, line),
            None => Ok(default),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let (raw, line) = self.required(key)?;
        raw.split(',')
            .map(|s| self.parse_num(key, s, line))
            .collect()
    }

    fn groups(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        let (raw, line) = self.required(key)?;
        raw.split(';')
            .map(|g| g.split(',').map(|s| self.parse_num(key, s, line)).collect())
            .collect()
    }

    fn words(&self, key: &str) -> Option<Vec<String>> {
        self.raw(key)
            .map(|(raw, _)| raw.split(',').map(|s| s.trim().to_string()).collect())
    }
}

fn parse_selection(raw: &str, first: &str, second: &str, key: &str) -> Result<Selection> {
    match raw.trim() {
        s if s == first => Ok(Selection::First),
        s if s == second => Ok(Selection::Second),
        "both" => Ok(Selection::Both),
        other => Err(ConfigError::Invalid(format!(
            "`{key}` must be {first}, {second} or both, got `{other}`"
        ))),
    }
}

fn selection_str(s: Selection, first: &str, second: &str) -> String {
    match s {
        Selection::First => first.into(),
        Selection::Second => second.into(),
        Selection::Both => "both".into(),
    }
}

/// Broadcasts a single value to `n` chains.
fn per_chain<T: Clone>(values: Vec<T>, n: usize, key: &str) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); n]),
        m if m == n => Ok(values),
        m => Err(ConfigError::Invalid(format!(
            "`{key}` needs 1 or {n} values, got {m}"
        ))),
    }
}

fn invalid<T>(e: crate::Error) -> Result<T> {
    Err(ConfigError::Invalid(e.to_string()))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut user: Vec<(String, String, usize)> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Malformed {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            });
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key, line });
        }
        user.push((key, value.trim().to_string(), line));
    }

    let mut map = BTreeMap::new();
    if let Some((_, preset, _)) = user.iter().find(|(k, _, _)| k == "preset") {
        for (k, v) in preset_entries(preset)? {
            map.insert(k.to_string(), (v, 0));
        }
    }
    for (k, v, line) in user {
        if k != "preset" {
            // explicit ladders replace geometric ones from a preset and
            // vice versa
            let clashes: &[&str] = match k.as_str() {
                "energy_levels" => &["energy_floor", "energy_geometric"],
                "energy_floor" | "energy_geometric" => &["energy_levels"],
                "temperatures" => &["temperature_max"],
                "temperature_max" => &["temperatures"],
                _ => &[],
            };
            for c in clashes {
                if map.get(*c).is_some_and(|(_, l)| *l == 0) {
                    map.remove(*c);
                }
            }
            map.insert(k, (v, line));
        }
    }
    resolve(&Entries { map })
}

fn resolve(e: &Entries) -> Result<ExperimentConfig> {
    let target = match e.required("target")?.0 {
        "mixture" => {
            let params = GaussianMixtureParams {
                weights: e.list("mixture_weights")?,
                means: e.groups("mixture_means")?,
                covariances: e.groups("mixture_covariances")?,
            };
            TargetSpec::Mixture(params)
        }
        "gamma" => TargetSpec::Gamma {
            shape: e.num("gamma_shape")?,
            rate: e.num("gamma_rate")?,
        },
        other => {
            return Err(ConfigError::Invalid(format!(
                "`target` must be mixture or gamma, got `{other}`"
            )))
        }
    };
    let built = match target.build() {
        Ok(b) => b,
        Err(err) => return invalid(err),
    };
    let dim = built.as_target().dim();

    let k: usize = e.num("k")?;
    let chains = k + 1;

    let energy_levels = if e.has("energy_levels") {
        e.list("energy_levels")?
    } else {
        let geo = e.list("energy_geometric")?;
        if geo.len() != 2 {
            return Err(ConfigError::Invalid(
                "`energy_geometric` needs exactly two values: low, high".into(),
            ));
        }
        if e.has("energy_floor") {
            let floor: f64 = e.num("energy_floor")?;
            let mut levels = vec![floor];
            if k > 0 {
                match build_geometric_ladder(geo[0], geo[1], k) {
                    Ok(l) => levels.extend(l),
                    Err(err) => return invalid(err),
                }
            }
            levels
        } else {
            match build_geometric_ladder(geo[0], geo[1], chains) {
                Ok(l) => l,
                Err(err) => return invalid(err),
            }
        }
    };
    if energy_levels.len() != chains {
        return Err(ConfigError::Invalid(format!(
            "{} energy levels for k = {k}",
            energy_levels.len()
        )));
    }
    let temps = if e.has("temperatures") {
        e.list("temperatures")?
    } else {
        let t_max: f64 = e.num("temperature_max")?;
        match build_geometric_ladder(1.0, t_max, chains) {
            Ok(t) => t,
            Err(err) => return invalid(err),
        }
    };
    let ladders = match EnergyLadder::new(energy_levels)
        .and_then(|el| Ladders::new(el, TemperatureLadder::new(temps)?))
    {
        Ok(l) => l,
        Err(err) => return invalid(err),
    };

    let p_ee: f64 = e.num("p_ee")?;
    if !(0.0..=1.0).contains(&p_ee) {
        return Err(ConfigError::Invalid(format!(
            "`p_ee` must lie in [0, 1], got {p_ee}"
        )));
    }
    let step_scales = per_chain(e.list("step_scales")?, chains, "step_scales")?;
    let proposals = per_chain(
        e.words("proposals")
            .unwrap_or_else(|| vec!["random_walk".into()]),
        chains,
        "proposals",
    )?
    .iter()
    .map(|s| s.parse::<ProposalKind>())
    .collect::<crate::Result<Vec<_>>>();
    let proposals = match proposals {
        Ok(p) => p,
        Err(err) => return invalid(err),
    };

    let sampler = SamplerConfig {
        ladders,
        p_ee,
        burn_in: e.num("burn_in")?,
        ring_iters: e.num("ring_iters")?,
        n_keep: e.num("n_keep")?,
        step_scales,
        proposals,
        master_seed: e.num_or("seed", 1u64)?,
        init_box: InitBox {
            low: e.list("init_low")?,
            high: e.list("init_high")?,
        },
    };
    if let Err(err) = sampler.validate(dim) {
        return invalid(err);
    }
    if sampler.proposals.contains(&ProposalKind::ModeJump)
        && built.as_target().modes().is_none_or(|m| m.is_empty())
    {
        return Err(ConfigError::Invalid(
            "mode_jump proposal needs a target with declared modes".into(),
        ));
    }
    if sampler.n_keep == 0 {
        return Err(ConfigError::Invalid("`n_keep` must be positive".into()));
    }

    let estimator = match e.raw("estimator") {
        Some((raw, _)) => parse_selection(raw, "ergodic", "partition", "estimator")?,
        None => Selection::Both,
    };
    let g = match e.raw("g") {
        Some((raw, _)) => parse_selection(raw, "mean", "second_moments", "g")?,
        None => Selection::Both,
    };
    let acf_max_lag = e.num_or("acf_max_lag", 200usize)?;
    let out_dir = PathBuf::from(e.raw("out").map_or("ee-out", |(v, _)| v));

    Ok(ExperimentConfig {
        target,
        sampler,
        estimator,
        g,
        acf_max_lag,
        out_dir,
    })
}

/// Configuration of a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    parse_config(&format!("preset = {name}\n"))
}

impl ExperimentConfig {
    pub fn build_target(&self) -> crate::Result<BuiltTarget> {
        self.target.build()
    }

    /// Every effective key, one per line, in a form [`parse_config`] reads
    /// back to an identical config.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.target {
            TargetSpec::Mixture(p) => {
                kv("target", "mixture".into());
                kv("mixture_weights", join(&p.weights));
                kv("mixture_means", join_groups(&p.means));
                kv("mixture_covariances", join_groups(&p.covariances));
            }
            TargetSpec::Gamma { shape, rate } => {
                kv("target", "gamma".into());
                kv("gamma_shape", shape.to_string());
                kv("gamma_rate", rate.to_string());
            }
        }
        let c = &self.sampler;
        kv("k", c.top().to_string());
        kv("energy_levels", join(c.ladders.energy().levels()));
        kv("temperatures", join(c.ladders.temperature().temps()));
        kv("p_ee", c.p_ee.to_string());
        kv("burn_in", c.burn_in.to_string());
        kv("ring_iters", c.ring_iters.to_string());
        kv("n_keep", c.n_keep.to_string());
        kv("step_scales", join(&c.step_scales));
        kv(
            "proposals",
            c.proposals
                .iter()
                .map(|p| p.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("seed", c.master_seed.to_string());
        kv("init_low", join(&c.init_box.low));
        kv("init_high", join(&c.init_box.high));
        kv(
            "estimator",
            selection_str(self.estimator, "ergodic", "partition"),
        );
        kv("g", selection_str(self.g, "mean", "second_moments"));
        kv("acf_max_lag", self.acf_max_lag.to_string());
        kv("out", self.out_dir.display().to_string());
        s
    }
}
