//! O(n²) brute-force re-implementations of the metrics, shared by the metric
//! tests and the acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survkit::survcore::SurvivalOutcome;

pub struct Toy {
    pub outcomes: Vec<SurvivalOutcome<f64>>,
    pub risks: Vec<f64>,
}

pub fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=30);
    let outcomes = (0..n)
        .map(|_| SurvivalOutcome::new(rng.random_range(1..=12) as f64, rng.random_bool(0.7)))
        .collect();
    // coarse risks so ties occur
    let risks = (0..n).map(|_| (rng.random_range(0.0..4.0f64) * 2.0).round() / 2.0).collect();
    Toy { outcomes, risks }
}

pub fn brute_cindex(risks: &[f64], y: &[SurvivalOutcome<f64>]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i].event && y[i].time < y[j].time {
                den += 1.0;
                if risks[i] > risks[j] {
                    num += 1.0;
                } else if risks[i] == risks[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Censoring survival just before `s`: product over censoring times `u < s`.
pub fn brute_g_left(y: &[SurvivalOutcome<f64>], s: f64) -> f64 {
    let mut times: Vec<f64> = y.iter().filter(|o| !o.event && o.time < s).map(|o| o.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&u| {
            let at_risk = y.iter().filter(|o| o.time >= u).count() as f64;
            let cens = y.iter().filter(|o| !o.event && o.time == u).count() as f64;
            1.0 - cens / at_risk
        })
        .product()
}

/// `G(s)` for integer `s`; toy times are integers.
pub fn brute_g(y: &[SurvivalOutcome<f64>], s: f64) -> f64 {
    brute_g_left(y, s + 0.5)
}

pub fn brute_auc(risks: &[f64], y: &[SurvivalOutcome<f64>], t: f64) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        if !(y[i].event && y[i].time <= t) {
            continue;
        }
        let w = 1.0 / brute_g_left(y, y[i].time);
        for j in 0..y.len() {
            if y[j].time > t {
                den += w;
                if risks[i] > risks[j] {
                    num += w;
                } else if risks[i] == risks[j] {
                    num += 0.5 * w;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn brute_brier(s: &[Vec<f64>], y: &[SurvivalOutcome<f64>], grid: &[f64]) -> (Vec<f64>, f64) {
    let bs: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut sum = 0.0;
            for (i, o) in y.iter().enumerate() {
                if o.event && o.time <= t {
                    sum += s[i][k].powi(2) / brute_g_left(y, o.time);
                } else if o.time > t {
                    sum += (1.0 - s[i][k]).powi(2) / brute_g(y, t);
                }
            }
            sum / y.len() as f64
        })
        .collect();
    let ibs = if grid.len() == 1 {
        bs[0]
    } else {
        let mut area = 0.0;
        for k in 1..grid.len() {
            area += (grid[k] - grid[k - 1]) * (bs[k] + bs[k - 1]) / 2.0;
        }
        area / (grid[grid.len() - 1] - grid[0])
    };
    (bs, ibs)
}

/// Distinct event times strictly before the last observed time.
pub fn grid(y: &[SurvivalOutcome<f64>]) -> Vec<f64> {
    let max = y.iter().map(|o| o.time).fold(0.0, f64::max);
    let mut g: Vec<f64> = y.iter().filter(|o| o.event && o.time < max).map(|o| o.time).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}
