//! Step-up/step-down delivery demand profiles.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ranges the per-scenario step is drawn from. Window lengths are fractions
/// of the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    pub base: f64,
    pub mag_min: f64,
    pub mag_max: f64,
    pub len_min_frac: f64,
    pub len_max_frac: f64,
    pub seed: u64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig { base: 10.0, mag_min: 2.0, mag_max: 6.0, len_min_frac: 0.25, len_max_frac: 0.5, seed: 0 }
    }
}

/// `base` everywhere except `base + mag` on `window`.
pub fn step_profile(nt: usize, base: f64, mag: f64, window: Range<usize>) -> Vec<f64> {
    (0..nt).map(|t| if window.contains(&t) { base + mag } else { base }).collect()
}

/// Demand of scenario `scenario` over `nt` points. The step magnitude,
/// length and start come from a ChaCha stream keyed by the seed and the
/// scenario index; the step starts after the first point and ends before the
/// last so every profile goes up and comes back down. Horizons shorter than
/// three points are constant.
pub fn demand_profile(scenario: usize, nt: usize, cfg: &DemandConfig) -> Vec<f64> {
    if nt < 3 {
        return vec![cfg.base; nt];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(scenario as u64);
    let mag = if cfg.mag_max > cfg.mag_min { rng.gen_range(cfg.mag_min..=cfg.mag_max) } else { cfg.mag_min };
    let cap = nt - 2;
    let lo = ((cfg.len_min_frac * nt as f64).round() as usize).clamp(1, cap);
    let hi = ((cfg.len_max_frac * nt as f64).round() as usize).clamp(lo, cap);
    let len = rng.gen_range(lo..=hi);
    let start = rng.gen_range(1..=nt - 1 - len);
    step_profile(nt, cfg.base, mag, start..start + len)
}

/// CSV with one row per time point and one column per scenario.
pub fn demand_csv(profiles: &[Vec<f64>]) -> String {
    let mut out = String::from("t");
    for s in 0..profiles.len() {
        let _ = write!(out, ",s{}", s + 1);
    }
    out.push('\n');
    let nt = profiles.first().map_or(0, Vec::len);
    for t in 0..nt {
        let _ = write!(out, "{}", t + 1);
        for p in profiles {
            let _ = write!(out, ",{}", p[t]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_is_constant() {
        assert!(step_profile(24, 10.0, 0.0, 8..16).iter().all(|&d| d == 10.0));
        let cfg = DemandConfig { mag_min: 0.0, mag_max: 0.0, ..Default::default() };
        assert!(demand_profile(3, 24, &cfg).iter().all(|&d| d == 10.0));
    }

    #[test]
    fn window_counts() {
        let p = step_profile(24, 10.0, 20.0, 8..16);
        assert_eq!(p.iter().filter(|&&d| d > 10.0).count(), 8);
    }

    #[test]
    fn scenarios_differ_within_ranges() {
        let cfg = DemandConfig::default();
        let a = demand_profile(0, 24, &cfg);
        let b = demand_profile(1, 24, &cfg);
        assert_ne!(a, b);
        for p in [&a, &b] {
            let up: Vec<usize> = (0..24).filter(|&t| p[t] > cfg.base).collect();
            assert!((6..=12).contains(&up.len()), "{up:?}");
            assert_eq!(up.last().unwrap() - up[0] + 1, up.len());
            assert!(up[0] >= 1 && *up.last().unwrap() <= 22);
            let mag = p[up[0]] - cfg.base;
            assert!((2.0..=6.0).contains(&mag));
        }
        assert_eq!(a, demand_profile(0, 24, &cfg));
    }

    #[test]
    fn csv_layout() {
        let s = demand_csv(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(s, "t,s1,s2\n1,1,3\n2,2,4\n");
    }
}
