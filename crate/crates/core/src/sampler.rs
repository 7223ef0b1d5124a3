//! Multi-chain equi-energy driver.
//!
//! Chains start from the hottest (order `K`) down to chain 0. Every active
//! chain advances by one move per global tick, highest order first, so
//! chain 0 first moves at tick `K (B + N)`. Each chain appends its states to
//! its own ring archive once it is past its first `B` moves; chain `k - 1`
//! reads that archive for its equi-energy jumps.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::kernels::{ee_jump_step, mh_step, MoveRecord, MoveType, Proposal};
use crate::ladders::{EnergyLadder, Ladders};
use crate::targets::Target;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub order: usize,
    pub x: Vec<f64>,
    /// Cached energy of `x`.
    pub h: f64,
    pub step_count: u64,
}

impl ChainState {
    pub fn new(order: usize, x: Vec<f64>, h: f64) -> Self {
        Self {
            order,
            x,
            h,
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Ring {
    coords: Vec<f64>,
    energies: Vec<f64>,
}

/// Append-only archive of one chain's visited states, bucketed by energy
/// ring.
#[derive(Debug, Clone, PartialEq)]
pub struct RingStore {
    dim: usize,
    ladder: EnergyLadder,
    rings: Vec<Ring>,
}

impl RingStore {
    pub fn new(dim: usize, ladder: EnergyLadder) -> Self {
        let rings = vec![Ring::default(); ladder.levels().len()];
        Self { dim, ladder, rings }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }

    pub fn ladder(&self) -> &EnergyLadder {
        &self.ladder
    }

    /// Files `x` under the ring of its energy `h` and returns that ring.
    pub fn push(&mut self, x: &[f64], h: f64) -> usize {
        debug_assert_eq!(x.len(), self.dim);
        let j = self.ladder.ring_index(h);
        let ring = &mut self.rings[j];
        ring.coords.extend_from_slice(x);
        ring.energies.push(h);
        j
    }

    pub fn len(&self, ring: usize) -> usize {
        self.rings[ring].energies.len()
    }

    pub fn total_len(&self) -> usize {
        self.rings.iter().map(|r| r.energies.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn counts(&self) -> Vec<usize> {
        self.rings.iter().map(|r| r.energies.len()).collect()
    }

    pub fn point(&self, ring: usize, idx: usize) -> &[f64] {
        &self.rings[ring].coords[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn energy(&self, ring: usize, idx: usize) -> f64 {
        self.rings[ring].energies[idx]
    }

    pub fn energies(&self, ring: usize) -> &[f64] {
        &self.rings[ring].energies
    }

    /// Uniform index into `ring` over its current length.
    pub fn draw_index<R: Rng + ?Sized>(&self, ring: usize, rng: &mut R) -> Option<usize> {
        match self.len(ring) {
            0 => None,
            n => Some(rng.random_range(0..n)),
        }
    }

    /// Whether every archived energy lies inside its ring's bounds, with
    /// ring 0 open below.
    pub fn check_membership(&self) -> bool {
        let last = self.rings.len() - 1;
        self.rings.iter().enumerate().all(|(j, r)| {
            let (lo, hi) = self.ladder.ring_bounds(j);
            r.energies
                .iter()
                .all(|&h| (h < hi || j == last) && (j == 0 || h >= lo))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    RandomWalk,
    ModeJump,
}

impl ProposalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposalKind::RandomWalk => "random_walk",
            ProposalKind::ModeJump => "mode_jump",
        }
    }
}

impl std::str::FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_walk" => Ok(ProposalKind::RandomWalk),
            "mode_jump" => Ok(ProposalKind::ModeJump),
            other => invalid(format!("unknown proposal kind {other:?}")),
        }
    }
}

/// Axis-aligned box for uniform initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct InitBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub ladders: Ladders,
    pub p_ee: f64,
    /// Moves each chain makes before archiving (`B`).
    pub burn_in: usize,
    /// Archiving moves a chain makes before the next chain down starts (`N`).
    pub ring_iters: usize,
    /// Chain-0 moves recorded after its burn-in.
    pub n_keep: usize,
    /// Random-walk scale `tau_k` per chain.
    pub step_scales: Vec<f64>,
    pub proposals: Vec<ProposalKind>,
    pub master_seed: u64,
    pub init_box: InitBox,
}

impl SamplerConfig {
    pub fn top(&self) -> usize {
        self.ladders.top()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let chains = self.top() + 1;
        if !(0.0..=1.0).contains(&self.p_ee) {
            return invalid(format!("p_ee must lie in [0, 1], got {}", self.p_ee));
        }
        if self.step_scales.len() != chains {
            return invalid(format!(
                "{} step scales for {chains} chains",
                self.step_scales.len()
            ));
        }
        if self
            .step_scales
            .iter()
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return invalid("step scales must be positive and finite");
        }
        if self.proposals.len() != chains {
            return invalid(format!(
                "{} proposal kinds for {chains} chains",
                self.proposals.len()
            ));
        }
        let b = &self.init_box;
        if b.low.len() != dim || b.high.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.low.len().max(b.high.len()),
            });
        }
        if b.low
            .iter()
            .zip(&b.high)
            .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
        {
            return invalid("initial box needs finite low <= high on every axis");
        }
        Ok(())
    }

    /// Tick at which chain `k` makes its first move.
    pub fn start_tick(&self, k: usize) -> u64 {
        ((self.top() - k) * (self.burn_in + self.ring_iters)) as u64
    }

    pub fn total_ticks(&self) -> u64 {
        self.start_tick(0) + (self.burn_in + self.n_keep) as u64
    }
}

/// Per-chain move counts, gathered after each chain's burn-in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainTally {
    pub mh_attempts: u64,
    pub mh_accepts: u64,
    pub ee_attempts: u64,
    pub ee_accepts: u64,
    /// Jump attempts that found their ring empty.
    pub ee_empty: u64,
    /// Sum of MH acceptance probabilities.
    pub mh_accept_prob_sum: f64,
}

impl ChainTally {
    pub fn record(&mut self, rec: &MoveRecord) {
        match rec.move_type {
            MoveType::Mh => {
                self.mh_attempts += 1;
                self.mh_accepts += rec.accepted as u64;
                self.mh_accept_prob_sum += rec.log_accept_prob.exp();
            }
            MoveType::EeJump => {
                self.ee_attempts += 1;
                self.ee_accepts += rec.accepted as u64;
                self.ee_empty += (rec.log_accept_prob == f64::NEG_INFINITY) as u64;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeptSample {
    pub tick: u64,
    pub x: Vec<f64>,
    pub energy: f64,
    pub ring: usize,
    pub move_type: MoveType,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub samples: Vec<KeptSample>,
    pub tallies: Vec<ChainTally>,
    pub stores: Vec<RingStore>,
    pub start_ticks: Vec<u64>,
    pub total_ticks: u64,
    /// Equi-energy attempts, each of which reads the archive of the chain
    /// above.
    pub cross_chain_reads: u64,
    pub master_seed: u64,
}

impl RunOutput {
    /// Archive sizes, `[chain][ring]`.
    pub fn ring_counts(&self) -> Vec<Vec<usize>> {
        self.stores.iter().map(RingStore::counts).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }
}

/// Random stream of chain `k`: the master seed with stream id `k`.
pub fn chain_rng(master_seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(k as u64);
    rng
}

/// Draws a starting point uniformly from the configured box.
pub fn initialize_chain<T: Target + ?Sized, R: Rng + ?Sized>(
    k: usize,
    config: &SamplerConfig,
    target: &T,
    rng: &mut R,
) -> ChainState {
    let b = &config.init_box;
    let x: Vec<f64> = b
        .low
        .iter()
        .zip(&b.high)
        .map(|(&lo, &hi)| {
            let u: f64 = rng.random();
            if lo == hi {
                lo
            } else {
                lo + (hi - lo) * u
            }
        })
        .collect();
    let h = target.energy(&x);
    ChainState::new(k, x, h)
}

/// One move of a chain: an equi-energy jump with probability `p_ee` when a
/// chain above exists, a Metropolis–Hastings move otherwise. When `archive`
/// is set the post-move state is appended to `own_store`.
#[allow(clippy::too_many_arguments)]
pub fn step_chain<T: Target + ?Sized, R: Rng + ?Sized>(
    state: &mut ChainState,
    proposal: &Proposal,
    p_ee: f64,
    own_store: &mut RingStore,
    upper_store: Option<&RingStore>,
    target: &T,
    ladders: &Ladders,
    archive: bool,
    rng: &mut R,
) -> MoveRecord {
    let rec = match upper_store {
        Some(upper) if state.order < ladders.top() => {
            if rng.random::<f64>() < p_ee {
                ee_jump_step(state, upper, ladders, rng)
            } else {
                mh_step(state, proposal, target, ladders, rng)
            }
        }
        _ => mh_step(state, proposal, target, ladders, rng),
    };
    if archive {
        own_store.push(&state.x, state.h);
    }
    rec
}

fn build_proposals<T: Target + ?Sized>(
    config: &SamplerConfig,
    target: &T,
) -> Result<Vec<Proposal>> {
    config
        .proposals
        .iter()
        .zip(&config.step_scales)
        .map(|(kind, &tau)| match kind {
            ProposalKind::RandomWalk => Proposal::random_walk(tau),
            ProposalKind::ModeJump => match target.modes() {
                Some(m) if !m.is_empty() => Proposal::mode_jump(m.to_vec()),
                _ => invalid("mode-jump proposal requested but the target declares no modes"),
            },
        })
        .collect()
}

/// Runs the full staged equi-energy schedule.
pub fn run_ee_sampler<T: Target + ?Sized>(config: &SamplerConfig, target: &T) -> Result<RunOutput> {
    let dim = target.dim();
    config.validate(dim)?;
    let top = config.top();
    if top == 0 && config.p_ee > 0.0 {
        warn!(
            "p_ee = {} with a single chain: every move is Metropolis–Hastings",
            config.p_ee
        );
    }
    let proposals = build_proposals(config, target)?;
    let ladders = &config.ladders;

    let mut rngs: Vec<ChaCha8Rng> = (0..=top)
        .map(|k| chain_rng(config.master_seed, k))
        .collect();
    let mut states: Vec<Option<ChainState>> = vec![None; top + 1];
    let mut stores: Vec<RingStore> = (0..=top)
        .map(|_| RingStore::new(dim, ladders.energy().clone()))
        .collect();
    let mut tallies = vec![ChainTally::default(); top + 1];
    let start_ticks: Vec<u64> = (0..=top).map(|k| config.start_tick(k)).collect();
    let total_ticks = config.total_ticks();
    let burn_in = config.burn_in as u64;
    let mut samples = Vec::with_capacity(config.n_keep);
    let mut cross_chain_reads = 0u64;

    for tick in 0..total_ticks {
        for k in (0..=top).rev() {
            if tick < start_ticks[k] {
                continue;
            }
            let local = tick - start_ticks[k];
            let rng = &mut rngs[k];
            let state = states[k].get_or_insert_with(|| initialize_chain(k, config, target, rng));
            let archive = local >= burn_in;
            let (lower, upper) = stores.split_at_mut(k + 1);
            let upper = upper.first();
            let rec = step_chain(
                state,
                &proposals[k],
                config.p_ee,
                &mut lower[k],
                upper,
                target,
                ladders,
                archive,
                rng,
            );
            if rec.move_type == MoveType::EeJump {
                cross_chain_reads += 1;
            }
            debug_assert!(
                (state.h - target.energy(&state.x)).abs() <= 1e-9 * state.h.abs().max(1.0)
                    || state.h == target.energy(&state.x)
            );
            if archive {
                tallies[k].record(&rec);
                if k == 0 {
                    samples.push(KeptSample {
                        tick,
                        x: state.x.clone(),
                        energy: state.h,
                        ring: ladders.ring_index(state.h),
                        move_type: rec.move_type,
                        accepted: rec.accepted,
                    });
                }
            }
        }
    }
    debug_assert!(stores.iter().all(RingStore::check_membership));

    Ok(RunOutput {
        samples,
        tallies,
        stores,
        start_ticks,
        total_ticks,
        cross_chain_reads,
        master_seed: config.master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::mh_step;
    use crate::ladders::{build_geometric_ladder, TemperatureLadder};
    use crate::targets::make_example1;

    fn config(levels: Vec<f64>, temps: Vec<f64>, p_ee: f64) -> SamplerConfig {
        let k = levels.len();
        SamplerConfig {
            ladders: Ladders::new(
                EnergyLadder::new(levels).unwrap(),
                TemperatureLadder::new(temps).unwrap(),
            )
            .unwrap(),
            p_ee,
            burn_in: 50,
            ring_iters: 30,
            n_keep: 200,
            step_scales: vec![0.5; k],
            proposals: vec![ProposalKind::RandomWalk; k],
            master_seed: 99,
            init_box: InitBox {
                low: vec![0.0, 0.0],
                high: vec![1.0, 1.0],
            },
        }
    }

    fn small_example1(p_ee: f64) -> SamplerConfig {
        config(
            build_geometric_ladder(0.5, 100.5, 3).unwrap(),
            build_geometric_ladder(1.0, 60.0, 3).unwrap(),
            p_ee,
        )
    }

    #[test]
    fn single_chain_matches_plain_metropolis() {
        let t = make_example1();
        let a = run_ee_sampler(&config(vec![0.5], vec![1.0], 0.0), &t).unwrap();
        let b = run_ee_sampler(&config(vec![0.5], vec![1.0], 0.7), &t).unwrap();
        assert_eq!(a.samples, b.samples);

        let cfg = config(vec![0.5], vec![1.0], 0.0);
        let mut rng = chain_rng(cfg.master_seed, 0);
        let mut state = initialize_chain(0, &cfg, &t, &mut rng);
        let proposal = Proposal::random_walk(0.5).unwrap();
        let mut plain = Vec::new();
        for local in 0..(cfg.burn_in + cfg.n_keep) {
            mh_step(&mut state, &proposal, &t, &cfg.ladders, &mut rng);
            if local >= cfg.burn_in {
                plain.push(state.x.clone());
            }
        }
        assert_eq!(a.points(), plain);
    }

    #[test]
    fn schedule_and_archive_invariants() {
        let t = make_example1();
        let cfg = small_example1(0.1);
        let out = run_ee_sampler(&cfg, &t).unwrap();
        assert_eq!(out.samples.len(), cfg.n_keep);
        assert_eq!(out.start_ticks, vec![160, 80, 0]);
        assert_eq!(out.samples[0].tick, 2 * 80 + 50);
        assert_eq!(out.samples.last().unwrap().tick, out.total_ticks - 1);
        assert!(out.stores.iter().all(RingStore::check_membership));
        // chain k archives everything after its burn-in
        for (k, store) in out.stores.iter().enumerate() {
            let moves = out.total_ticks - out.start_ticks[k];
            assert_eq!(store.total_len() as u64, moves - cfg.burn_in as u64);
        }
        for s in &out.samples {
            assert_eq!(s.ring, cfg.ladders.ring_index(s.energy));
            assert!((s.energy - t.energy(&s.x)).abs() < 1e-9);
        }
        assert_eq!(out.tallies[2].ee_attempts, 0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let t = make_example1();
        let cfg = small_example1(0.3);
        assert_eq!(
            run_ee_sampler(&cfg, &t).unwrap(),
            run_ee_sampler(&cfg, &t).unwrap()
        );
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(
            run_ee_sampler(&cfg, &t).unwrap().samples,
            run_ee_sampler(&other, &t).unwrap().samples
        );
    }

    #[test]
    fn no_cross_chain_reads_without_jumps() {
        let t = make_example1();
        let out = run_ee_sampler(&small_example1(0.0), &t).unwrap();
        assert_eq!(out.cross_chain_reads, 0);
        assert!(out.samples.iter().all(|s| s.move_type == MoveType::Mh));

        // chain 0 depends only on its own stream: changing what the upper
        // chains see leaves it untouched
        let mut cfg = small_example1(0.0);
        cfg.step_scales[2] = 3.0;
        let other = run_ee_sampler(&cfg, &t).unwrap();
        assert_eq!(out.samples, other.samples);
    }

    #[test]
    fn always_jump_when_p_ee_is_one() {
        let t = make_example1();
        let out = run_ee_sampler(&small_example1(1.0), &t).unwrap();
        assert!(out.samples.iter().all(|s| s.move_type == MoveType::EeJump));
        assert_eq!(out.tallies[0].mh_attempts, 0);
        assert_eq!(out.tallies[2].ee_attempts, 0);
    }

    #[test]
    fn jump_fraction_matches_p_ee() {
        let t = make_example1();
        let mut cfg = small_example1(0.1);
        cfg.n_keep = 100_000;
        let out = run_ee_sampler(&cfg, &t).unwrap();
        let tally = &out.tallies[0];
        let n = (tally.ee_attempts + tally.mh_attempts) as f64;
        let frac = tally.ee_attempts as f64 / n;
        let sigma = (0.1 * 0.9 / n).sqrt();
        assert!((frac - 0.1).abs() < 3.0 * sigma, "fraction {frac}");
    }

    #[test]
    fn initialization_box() {
        let t = make_example1();
        let mut cfg = small_example1(0.1);
        let mut rng = chain_rng(1, 0);
        let n = 10_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let s = initialize_chain(0, &cfg, &t, &mut rng);
            assert!(s.x.iter().all(|v| (0.0..1.0).contains(v)));
            sum[0] += s.x[0];
            sum[1] += s.x[1];
        }
        let sigma = (1.0f64 / 12.0 / n as f64).sqrt();
        for s in sum {
            assert!((s / n as f64 - 0.5).abs() < 3.0 * sigma);
        }

        cfg.init_box = InitBox {
            low: vec![2.0, 3.0],
            high: vec![2.0, 3.0],
        };
        let s = initialize_chain(0, &cfg, &t, &mut rng);
        assert_eq!(s.x, vec![2.0, 3.0]);
        assert_eq!(s.h, t.energy(&[2.0, 3.0]));
    }

    #[test]
    fn config_validation() {
        let t = make_example1();
        let mut cfg = small_example1(1.5);
        assert!(run_ee_sampler(&cfg, &t).is_err());
        cfg.p_ee = 0.1;
        cfg.step_scales.pop();
        assert!(run_ee_sampler(&cfg, &t).is_err());
        let mut cfg = small_example1(0.1);
        cfg.init_box.low = vec![0.0];
        assert!(run_ee_sampler(&cfg, &t).is_err());
        let mut cfg = small_example1(0.1);
        cfg.init_box.low = vec![2.0, 0.0];
        assert!(run_ee_sampler(&cfg, &t).is_err());
        let g = crate::targets::make_gamma_target(0.5, 1.0).unwrap();
        let mut cfg = config(vec![-10.0], vec![1.0], 0.0);
        cfg.proposals = vec![ProposalKind::ModeJump];
        cfg.init_box = InitBox {
            low: vec![0.1],
            high: vec![1.0],
        };
        assert!(run_ee_sampler(&cfg, &g).is_err());
    }

    #[test]
    fn ring_store_draws_and_membership() {
        let ladder = EnergyLadder::new(vec![0.0, 1.0, 2.0]).unwrap();
        let mut s = RingStore::new(1, ladder);
        assert_eq!(s.push(&[0.1], -3.0), 0);
        assert_eq!(s.push(&[0.2], 1.0), 1);
        assert_eq!(s.push(&[0.3], 1.5), 1);
        assert_eq!(s.push(&[0.4], f64::INFINITY), 2);
        assert_eq!(s.counts(), vec![1, 2, 1]);
        assert_eq!(s.point(1, 1), &[0.3]);
        assert!(s.check_membership());
        let mut rng = chain_rng(0, 0);
        assert!(RingStore::new(1, s.ladder().clone())
            .draw_index(0, &mut rng)
            .is_none());
        let mut seen = [0usize; 2];
        for _ in 0..2000 {
            seen[s.draw_index(1, &mut rng).unwrap()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900));
    }
}
