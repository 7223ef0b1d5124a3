//! Energy and temperature ladders, ring classification and the flattened
//! working density of each chain.

use crate::error::{invalid, Result};

/// `count` increasing values from `low` to `high`, equally spaced on a log
/// scale.
///
/// When `low <= 0` the progression is built on `[1, high + 1 - low]` and
/// shifted back, so that non-positive anchors are allowed.
pub fn build_geometric_ladder(low: f64, high: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return invalid("ladder needs at least one level");
    }
    if !low.is_finite() || !high.is_finite() {
        return invalid("ladder endpoints must be finite");
    }
    if high < low {
        return invalid(format!("ladder top {high} is below bottom {low}"));
    }
    if count == 1 {
        return Ok(vec![low]);
    }
    if high == low {
        return invalid("a ladder with two or more levels needs high > low");
    }
    let shift = if low > 0.0 { 0.0 } else { 1.0 - low };
    let (a, b) = (low + shift, high + shift);
    let ratio = (b / a).powf(1.0 / (count - 1) as f64);
    let mut out: Vec<f64> = (0..count)
        .map(|j| a * ratio.powi(j as i32) - shift)
        .collect();
    out[0] = low;
    out[count - 1] = high;
    Ok(out)
}

fn check_increasing(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return invalid(format!("{what} must be non-empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{what} must be finite"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return invalid(format!("{what} must be strictly increasing"));
    }
    Ok(())
}

/// Levels `H_0 < ... < H_K`, with an implicit `H_{K+1} = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLadder {
    levels: Vec<f64>,
}

impl EnergyLadder {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        check_increasing(&levels, "energy levels")?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Highest chain / ring index `K`.
    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Ring `j` with `H_j <= h < H_{j+1}`. Energies below `H_0` fall into
    /// ring 0 and `+inf` into ring `K`.
    pub fn ring_index(&self, h: f64) -> usize {
        self.levels
            .partition_point(|&level| level <= h)
            .saturating_sub(1)
    }

    /// Half-open energy interval of ring `j`.
    pub fn ring_bounds(&self, j: usize) -> (f64, f64) {
        let upper = self.levels.get(j + 1).copied().unwrap_or(f64::INFINITY);
        (self.levels[j], upper)
    }
}

/// Temperatures `1 = T_0 < ... < T_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureLadder {
    temps: Vec<f64>,
}

impl TemperatureLadder {
    pub fn new(temps: Vec<f64>) -> Result<Self> {
        check_increasing(&temps, "temperatures")?;
        if temps[0] != 1.0 {
            return invalid(format!(
                "first temperature must be exactly 1, got {}",
                temps[0]
            ));
        }
        Ok(Self { temps })
    }

    pub fn geometric(max: f64, count: usize) -> Result<Self> {
        Self::new(build_geometric_ladder(1.0, max, count)?)
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }
}

/// Energy floor and temperature of one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub floor: f64,
    pub temperature: f64,
}

impl Level {
    /// Unnormalized log working density `-max(h, H_k) / T_k`.
    #[inline]
    pub fn log_density(&self, h: f64) -> f64 {
        -h.max(self.floor) / self.temperature
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ladders {
    energy: EnergyLadder,
    temperature: TemperatureLadder,
}

impl Ladders {
    pub fn new(energy: EnergyLadder, temperature: TemperatureLadder) -> Result<Self> {
        if energy.levels.len() != temperature.temps.len() {
            return invalid(format!(
                "{} energy levels but {} temperatures",
                energy.levels.len(),
                temperature.temps.len()
            ));
        }
        Ok(Self {
            energy,
            temperature,
        })
    }

    pub fn energy(&self) -> &EnergyLadder {
        &self.energy
    }

    pub fn temperature(&self) -> &TemperatureLadder {
        &self.temperature
    }

    pub fn top(&self) -> usize {
        self.energy.top()
    }

    pub fn level(&self, k: usize) -> Level {
        Level {
            floor: self.energy.levels[k],
            temperature: self.temperature.temps[k],
        }
    }

    pub fn ring_index(&self, h: f64) -> usize {
        self.energy.ring_index(h)
    }

    pub fn tempered_log_density(&self, h: f64, k: usize) -> f64 {
        self.level(k).log_density(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn geometric_examples() {
        let l = build_geometric_ladder(0.5, 100.5, 3).unwrap();
        // 0.5 * sqrt(201)
        assert_abs_diff_eq!(l[1], 7.088_723_439_378_913, epsilon = 1e-12);
        assert_eq!((l[0], l[2]), (0.5, 100.5));

        let l = build_geometric_ladder(3.13, 93.32, 6).unwrap();
        for (got, want) in l.iter().zip([3.13, 6.17, 12.17, 24.00, 47.33, 93.32]) {
            assert_abs_diff_eq!(*got, want, epsilon = 0.01);
        }

        assert_eq!(build_geometric_ladder(1.0, 1.0, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn geometric_shifts_non_positive_anchor() {
        let l = build_geometric_ladder(-7.0, 93.0, 3).unwrap();
        // shift 8: [1, 101], middle sqrt(101) - 8
        assert_abs_diff_eq!(l[1], 101f64.sqrt() - 8.0, epsilon = 1e-12);
    }

    #[test]
    fn geometric_errors() {
        assert!(build_geometric_ladder(1.0, 2.0, 0).is_err());
        assert!(build_geometric_ladder(2.0, 1.0, 3).is_err());
        assert!(build_geometric_ladder(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn ring_index_examples() {
        let e = EnergyLadder::new(vec![0.5, 7.089, 100.5]).unwrap();
        assert_eq!(e.ring_index(0.3), 0);
        assert_eq!(e.ring_index(0.5), 0);
        assert_eq!(e.ring_index(7.089), 1);
        assert_eq!(e.ring_index(7.0889), 0);
        assert_eq!(e.ring_index(200.0), 2);
        assert_eq!(e.ring_index(f64::INFINITY), 2);
        assert_eq!(e.ring_bounds(2), (100.5, f64::INFINITY));
    }

    #[test]
    fn tempered_density_examples() {
        let lad = Ladders::new(
            EnergyLadder::new(vec![0.0, 10.0]).unwrap(),
            TemperatureLadder::new(vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(lad.tempered_log_density(3.25, 0), -3.25);
        assert_eq!(lad.tempered_log_density(5.0, 1), -5.0);
        assert_eq!(lad.tempered_log_density(20.0, 1), -10.0);
    }

    #[test]
    fn temperature_ladder_must_start_at_one() {
        assert!(TemperatureLadder::new(vec![1.5, 2.0]).is_err());
        assert!(TemperatureLadder::new(vec![1.0, 1.0]).is_err());
        let t = TemperatureLadder::geometric(60.0, 3).unwrap();
        assert_eq!(t.temps()[0], 1.0);
        assert_eq!(t.temps()[2], 60.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(Ladders::new(
            EnergyLadder::new(vec![0.0, 1.0]).unwrap(),
            TemperatureLadder::new(vec![1.0]).unwrap()
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn geometric_ladder_properties(low in -50.0f64..50.0, span in 0.1f64..500.0, count in 2usize..12) {
            let high = low + span;
            let l = build_geometric_ladder(low, high, count).unwrap();
            prop_assert_eq!(l.len(), count);
            prop_assert!(l.windows(2).all(|w| w[1] > w[0]));
            prop_assert!((l[0] - low).abs() <= 1e-12 * low.abs().max(1.0));
            prop_assert!((l[count - 1] - high).abs() <= 1e-12 * high.abs().max(1.0));
            let shift = if low > 0.0 { 0.0 } else { 1.0 - low };
            let ratios: Vec<f64> = l.windows(2).map(|w| (w[1] + shift) / (w[0] + shift)).collect();
            for r in &ratios {
                prop_assert!((r - ratios[0]).abs() < 1e-9);
            }
        }

        #[test]
        fn ring_index_monotone(mut hs in proptest::collection::vec(-20.0f64..200.0, 2..50)) {
            let e = EnergyLadder::new(vec![0.5, 7.089, 100.5]).unwrap();
            hs.sort_by(f64::total_cmp);
            let rings: Vec<usize> = hs.iter().map(|&h| e.ring_index(h)).collect();
            prop_assert!(rings.windows(2).all(|w| w[0] <= w[1]));
            for (&h, &j) in hs.iter().zip(&rings) {
                let (lo, hi) = e.ring_bounds(j);
                prop_assert!(h < hi);
                prop_assert!(j == 0 || h >= lo);
            }
        }

        #[test]
        fn tempered_density_nonincreasing(a in -10.0f64..200.0, b in -10.0f64..200.0, k in 0usize..3) {
            let lad = Ladders::new(
                EnergyLadder::new(vec![-10.0, 7.0, 100.0]).unwrap(),
                TemperatureLadder::new(vec![1.0, 7.7, 60.0]).unwrap(),
            ).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lad.tempered_log_density(lo, k) >= lad.tempered_log_density(hi, k));
            prop_assert_eq!(lad.tempered_log_density(a, 0), -a);
        }
    }

    #[test]
    fn ring_index_surjective_over_span() {
        let e = EnergyLadder::new(vec![0.5, 7.089, 100.5]).unwrap();
        let hit: std::collections::BTreeSet<usize> =
            (0..2000).map(|i| e.ring_index(i as f64 * 0.1)).collect();
        assert_eq!(hit.len(), 3);
    }
}
