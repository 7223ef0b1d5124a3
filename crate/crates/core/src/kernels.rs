//! Local Metropolis–Hastings moves and the equi-energy jump.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::ladders::{Ladders, Level};
use crate::sampler::{ChainState, RingStore};
use crate::targets::{ModeDescriptor, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoveType {
    Mh,
    EeJump,
}

impl MoveType {
    pub fn as_str(self) -> &'static str {
        match self {
            MoveType::Mh => "mh",
            MoveType::EeJump => "ee_jump",
        }
    }
}

impl std::str::FromStr for MoveType {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mh" => Ok(MoveType::Mh),
            "ee_jump" => Ok(MoveType::EeJump),
            other => invalid(format!("unknown move type {other:?}")),
        }
    }
}

/// Outcome of one move attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub move_type: MoveType,
    pub accepted: bool,
    /// `ln min(1, ratio)`; `-inf` for auto-rejected moves.
    pub log_accept_prob: f64,
}

/// Local proposal used by a chain's Metropolis–Hastings step.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    /// Spherical Gaussian around the current point with per-coordinate
    /// standard deviation `step_scale * sqrt(T_k)`.
    RandomWalk { step_scale: f64 },
    /// Gaussian centered on the declared mode nearest the current point,
    /// with that mode's local covariance.
    ModeJump { modes: Vec<ModeDescriptor> },
}

impl Proposal {
    pub fn random_walk(step_scale: f64) -> Result<Self> {
        if !(step_scale > 0.0 && step_scale.is_finite()) {
            return invalid(format!("step scale must be positive, got {step_scale}"));
        }
        Ok(Proposal::RandomWalk { step_scale })
    }

    pub fn mode_jump(modes: Vec<ModeDescriptor>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return invalid("mode-jump proposal needs at least one declared mode");
        };
        let dim = first.location().len();
        if modes.iter().any(|m| m.location().len() != dim) {
            return invalid("declared modes have inconsistent dimensions");
        }
        Ok(Proposal::ModeJump { modes })
    }
}

pub fn propose_random_walk<R: Rng + ?Sized>(
    x: &[f64],
    step_scale: f64,
    temperature: f64,
    rng: &mut R,
) -> Vec<f64> {
    let sd = step_scale * temperature.sqrt();
    x.iter()
        .map(|&xi| xi + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Index of the declared mode closest to `x` in Euclidean distance, ties
/// going to the lowest index.
pub fn nearest_mode(x: &[f64], modes: &[ModeDescriptor]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, m) in modes.iter().enumerate() {
        let d = squared_distance(x, m.location());
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeJumpDraw {
    pub point: Vec<f64>,
    pub mode: usize,
    pub log_q_forward: f64,
    pub log_q_backward: f64,
}

/// Draws from the Gaussian attached to the mode nearest `x`.
///
/// The reverse density is evaluated under the Gaussian attached to the mode
/// nearest the proposed point, since the proposal depends on the state.
pub fn propose_mode_jump<R: Rng + ?Sized>(
    x: &[f64],
    modes: &[ModeDescriptor],
    rng: &mut R,
) -> ModeJumpDraw {
    let mode = nearest_mode(x, modes);
    let forward = modes[mode].local_gaussian();
    let point = forward.sample(rng);
    let log_q_forward = forward.log_density(&point);
    let back = modes[nearest_mode(&point, modes)].local_gaussian();
    let log_q_backward = back.log_density(x);
    ModeJumpDraw {
        point,
        mode,
        log_q_forward,
        log_q_backward,
    }
}

/// `ln min(1, pi(y) q(y -> x) / (pi(x) q(x -> y)))` from log quantities.
/// Undefined ratios (e.g. both points outside the support) reject.
#[inline]
pub fn metropolis_log_accept(
    log_target_current: f64,
    log_target_proposed: f64,
    log_q_forward: f64,
    log_q_backward: f64,
) -> f64 {
    let r = log_target_proposed - log_target_current + log_q_backward - log_q_forward;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r.min(0.0)
    }
}

/// Log acceptance of replacing a chain-`k` state of energy `h_current`
/// with an archived chain-`k+1` state of energy `h_candidate`.
#[inline]
pub fn ee_log_accept(h_current: f64, h_candidate: f64, lower: Level, upper: Level) -> f64 {
    let r = (lower.log_density(h_candidate) - lower.log_density(h_current))
        + (upper.log_density(h_current) - upper.log_density(h_candidate));
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r.min(0.0)
    }
}

fn accept<R: Rng + ?Sized>(log_accept_prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < log_accept_prob.exp()
}

/// One Metropolis–Hastings step of `state` against chain `state.order`'s
/// working density. The state is updated in place on acceptance.
pub fn mh_step<T: Target + ?Sized, R: Rng + ?Sized>(
    state: &mut ChainState,
    proposal: &Proposal,
    target: &T,
    ladders: &Ladders,
    rng: &mut R,
) -> MoveRecord {
    let level = ladders.level(state.order);
    let (y, log_q_forward, log_q_backward) = match proposal {
        Proposal::RandomWalk { step_scale } => (
            propose_random_walk(&state.x, *step_scale, level.temperature, rng),
            0.0,
            0.0,
        ),
        Proposal::ModeJump { modes } => {
            let draw = propose_mode_jump(&state.x, modes, rng);
            (draw.point, draw.log_q_forward, draw.log_q_backward)
        }
    };
    state.step_count += 1;

    if y.iter().any(|v| !v.is_finite()) {
        // keep the uniform draw so the stream stays aligned
        let _ = rng.random::<f64>();
        return MoveRecord {
            move_type: MoveType::Mh,
            accepted: false,
            log_accept_prob: f64::NEG_INFINITY,
        };
    }
    let h_y = target.energy(&y);
    let log_a = metropolis_log_accept(
        level.log_density(state.h),
        level.log_density(h_y),
        log_q_forward,
        log_q_backward,
    );
    let accepted = accept(log_a, rng);
    if accepted {
        state.x = y;
        state.h = h_y;
    }
    MoveRecord {
        move_type: MoveType::Mh,
        accepted,
        log_accept_prob: log_a,
    }
}

/// Equi-energy jump of chain `k = state.order` to a uniformly chosen state
/// from chain `k + 1`'s archive of the ring the current state lies in.
///
/// An empty ring counts as a rejected jump.
pub fn ee_jump_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    upper_store: &RingStore,
    ladders: &Ladders,
    rng: &mut R,
) -> MoveRecord {
    let k = state.order;
    debug_assert!(k < ladders.top());
    state.step_count += 1;
    let ring = ladders.ring_index(state.h);
    let Some(idx) = upper_store.draw_index(ring, rng) else {
        return MoveRecord {
            move_type: MoveType::EeJump,
            accepted: false,
            log_accept_prob: f64::NEG_INFINITY,
        };
    };
    let h_y = upper_store.energy(ring, idx);
    let log_a = ee_log_accept(state.h, h_y, ladders.level(k), ladders.level(k + 1));
    let accepted = accept(log_a, rng);
    if accepted {
        state.x.clear();
        state.x.extend_from_slice(upper_store.point(ring, idx));
        state.h = h_y;
        debug_assert_eq!(ladders.ring_index(state.h), ring);
    }
    MoveRecord {
        move_type: MoveType::EeJump,
        accepted,
        log_accept_prob: log_a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladders::{EnergyLadder, TemperatureLadder};
    use crate::targets::{make_example1, make_example2, GaussianMixture, GaussianMixtureParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_level_ladders() -> Ladders {
        Ladders::new(
            EnergyLadder::new(vec![-1e9]).unwrap(),
            TemperatureLadder::new(vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn random_walk_spread_scales_with_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let x = [3.0, -1.0];
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let y = propose_random_walk(&x, 0.5, 4.0, &mut rng);
            for i in 0..2 {
                sums[i] += y[i] - x[i];
                sq[i] += (y[i] - x[i]).powi(2);
            }
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let sd = (sq[i] / n as f64 - mean * mean).sqrt();
            assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
        }
    }

    #[test]
    fn random_walk_rejects_non_positive_scale() {
        assert!(Proposal::random_walk(0.0).is_err());
        assert!(Proposal::random_walk(-1.0).is_err());
        assert!(Proposal::mode_jump(vec![]).is_err());
    }

    #[test]
    fn nearest_mode_examples() {
        let t = make_example2();
        let modes = t.modes().unwrap();
        assert_eq!(nearest_mode(&[1.0, 1.0], modes), 0);
        assert_eq!(nearest_mode(&[2.5, 2.5], modes), 0);
        assert_eq!(nearest_mode(&[2.6, 2.5], modes), 1);
    }

    #[test]
    fn mode_jump_hastings_terms() {
        // Gaussian log-density oracle written out for diagonal covariances.
        fn log_npdf(x: &[f64], mu: &[f64], var: f64) -> f64 {
            let q: f64 = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
            -(2.0 * std::f64::consts::PI * var).ln() - 0.5 * q / var
        }
        let t = make_example2();
        let modes = t.modes().unwrap();
        let x = [0.005, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draw = propose_mode_jump(&x, modes, &mut rng);
        assert_eq!(draw.mode, 0);
        assert_abs_diff_eq!(
            draw.log_q_forward,
            log_npdf(&draw.point, &[0.0, 0.0], 1e-4),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            draw.log_q_backward,
            log_npdf(&x, &[0.0, 0.0], 1e-4),
            epsilon = 1e-9
        );

        // A far-off candidate reverses through the other mode's Gaussian.
        let y = [4.3, 5.2];
        let back = modes[nearest_mode(&y, modes)]
            .local_gaussian()
            .log_density(&x);
        assert_abs_diff_eq!(back, log_npdf(&x, &[5.0, 5.0], 1.0), epsilon = 1e-9);
        let fwd = modes[nearest_mode(&x, modes)]
            .local_gaussian()
            .log_density(&y);
        assert_abs_diff_eq!(fwd, log_npdf(&y, &[0.0, 0.0], 1e-4), epsilon = 1e-9);
        let log_a = metropolis_log_accept(-t.energy(&x), -t.energy(&y), fwd, back);
        let oracle = (t.energy(&x) - t.energy(&y) + log_npdf(&x, &[5.0, 5.0], 1.0)
            - log_npdf(&y, &[0.0, 0.0], 1e-4))
        .min(0.0);
        assert_abs_diff_eq!(log_a, oracle, epsilon = 1e-9);
    }

    #[test]
    fn metropolis_acceptance_arithmetic() {
        assert_eq!(metropolis_log_accept(-3.0, -3.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(
            metropolis_log_accept(-3.0, -3.0 - 2f64.ln(), 0.0, 0.0).exp(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(
            metropolis_log_accept(f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 0.0),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn ee_acceptance_with_flat_upper_chain() {
        let lower = Level {
            floor: 0.5,
            temperature: 1.0,
        };
        let upper = Level {
            floor: 7.09,
            temperature: 7.75,
        };
        let log_a = ee_log_accept(3.0, 5.0, lower, upper);
        // lower chain: -5 - (-3); upper chain flat below 7.09: 0
        assert_abs_diff_eq!(log_a, -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(log_a.exp(), 0.135, epsilon = 1e-3);
        assert_eq!(ee_log_accept(4.0, 4.0, lower, upper), 0.0);
    }

    #[test]
    fn ee_jump_keeps_ring_and_handles_empty() {
        let t = make_example1();
        let ladders = Ladders::new(
            EnergyLadder::new(vec![0.5, 7.0887, 100.5]).unwrap(),
            TemperatureLadder::new(vec![1.0, 7.746, 60.0]).unwrap(),
        )
        .unwrap();
        let mut store = RingStore::new(2, ladders.energy().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = vec![0.2, 0.1];
        let mut state = ChainState::new(0, x.clone(), t.energy(&x));
        let rec = ee_jump_step(&mut state, &store, &ladders, &mut rng);
        assert!(!rec.accepted);
        assert_eq!(rec.move_type, MoveType::EeJump);
        assert_eq!(state.x, x);

        for p in [[5.1, 4.9], [0.3, 0.35], [4.0, 6.0], [1.0, 1.0]] {
            store.push(&p, t.energy(&p));
        }
        let ring = ladders.ring_index(state.h);
        for _ in 0..200 {
            let rec = ee_jump_step(&mut state, &store, &ladders, &mut rng);
            if rec.accepted {
                assert_eq!(ladders.ring_index(state.h), ring);
                assert_abs_diff_eq!(state.h, t.energy(&state.x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mh_step_keeps_energy_cache_consistent() {
        let t = make_example1();
        let ladders = one_level_ladders();
        let proposal = Proposal::random_walk(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = ChainState::new(0, vec![0.0, 0.0], t.energy(&[0.0, 0.0]));
        let mut accepted = 0usize;
        let mut expected = 0.0;
        let n = 50_000;
        for _ in 0..n {
            let rec = mh_step(&mut state, &proposal, &t, &ladders, &mut rng);
            assert!(rec.log_accept_prob <= 0.0);
            accepted += rec.accepted as usize;
            expected += rec.log_accept_prob.exp();
            assert!((state.h - t.energy(&state.x)).abs() < 1e-9);
        }
        // empirical acceptance vs mean acceptance probability
        let rate = accepted as f64 / n as f64;
        let mean_p = expected / n as f64;
        let se = (mean_p * (1.0 - mean_p) / n as f64).sqrt();
        assert!((rate - mean_p).abs() < 4.0 * se, "{rate} vs {mean_p}");
        assert_eq!(state.step_count, n as u64);
    }

    #[test]
    fn non_finite_proposal_is_rejected() {
        let t = make_example1();
        let ladders = one_level_ladders();
        let proposal = Proposal::random_walk(f64::MAX).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = ChainState::new(0, vec![0.0, 0.0], t.energy(&[0.0, 0.0]));
        let mut saw_reject = false;
        for _ in 0..20 {
            let rec = mh_step(&mut state, &proposal, &t, &ladders, &mut rng);
            if rec.log_accept_prob == f64::NEG_INFINITY {
                saw_reject = true;
                assert!(!rec.accepted);
            }
        }
        assert!(saw_reject);
        assert_eq!(state.x, vec![0.0, 0.0]);
    }

    /// Batch-means standard error of the mean of `xs`.
    fn batch_se(xs: &[f64], batches: usize) -> f64 {
        let size = xs.len() / batches;
        let means: Vec<f64> = xs
            .chunks(size)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    }

    fn run_mode_jump(t: &GaussianMixture, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let ladders = one_level_ladders();
        let proposal = Proposal::mode_jump(t.modes().unwrap().to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = t.params().means[0].clone();
        let mut state = ChainState::new(0, x0.clone(), t.energy(&x0));
        (0..n)
            .map(|_| {
                mh_step(&mut state, &proposal, t, &ladders, &mut rng);
                state.x.clone()
            })
            .collect()
    }

    #[test]
    fn mode_jump_equilibrium_symmetric_mixture() {
        let t = GaussianMixture::new(GaussianMixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            covariances: vec![vec![1.0, 0.0, 0.0, 1.0]; 2],
        })
        .unwrap();
        let xs = run_mode_jump(&t, 200_000, 21);
        let modes = t.modes().unwrap();
        let occ: Vec<f64> = xs
            .iter()
            .map(|x| (nearest_mode(x, modes) == 0) as u8 as f64)
            .collect();
        let p0 = occ.iter().sum::<f64>() / occ.len() as f64;
        let se = batch_se(&occ, 50);
        assert!((p0 - 0.5).abs() < 3.0 * se, "occupancy {p0} se {se}");
    }

    #[test]
    fn mode_jump_equilibrium_unequal_mixture() {
        // Unequal spreads make the forward and reverse proposals differ.
        let t = GaussianMixture::new(GaussianMixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0, 0.0], vec![1.5, 0.0]],
            covariances: vec![vec![0.25, 0.0, 0.0, 0.25], vec![1.0, 0.0, 0.0, 1.0]],
        })
        .unwrap();
        let xs = run_mode_jump(&t, 400_000, 22);
        let x1: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let mean = x1.iter().sum::<f64>() / x1.len() as f64;
        let se = batch_se(&x1, 50);
        assert!((mean - 0.75).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    proptest! {
        #[test]
        fn ee_accepts_when_levels_coincide(
            h_x in -50.0f64..500.0,
            h_y in -50.0f64..500.0,
            floor in -20.0f64..100.0,
            temp in 1.0f64..100.0,
        ) {
            let level = Level { floor, temperature: temp };
            prop_assert_eq!(ee_log_accept(h_x, h_y, level, level), 0.0);
        }

        #[test]
        fn ee_self_selection_accepts(h in -50.0f64..500.0) {
            let lower = Level { floor: 0.5, temperature: 1.0 };
            let upper = Level { floor: 7.0, temperature: 7.7 };
            prop_assert_eq!(ee_log_accept(h, h, lower, upper), 0.0);
        }
    }
}
