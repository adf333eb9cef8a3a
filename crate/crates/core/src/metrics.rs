//! Harrell's C-index, IPCW cumulative/dynamic AUC, Brier score and IBS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{total_cmp, Real};
use crate::survcore::{censoring_distribution, SurvivalCurve, SurvivalOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConcordanceResult<T> {
    pub c_index: T,
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
    pub comparable: u64,
}

/// Fenwick tree of counts over dense risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }
    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// Count of inserted ranks `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Pair (i, j) is comparable when `T_i < T_j` and `i` is an event; it is
/// concordant when `risk_i > risk_j`, and risk ties count one half. Equal
/// times are never comparable.
pub fn harrell_cindex<T: Real>(
    risks: &[T],
    outcomes: &[SurvivalOutcome<T>],
) -> Result<ConcordanceResult<T>> {
    check_len(outcomes.len(), risks.len())?;
    let n = risks.len();
    let mut sorted_risks: Vec<T> = risks.to_vec();
    sorted_risks.sort_by(total_cmp);
    sorted_risks.dedup();
    let rank = |r: T| sorted_risks.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| total_cmp(&outcomes[b].time, &outcomes[a].time));
    let mut tree = Fenwick::new(sorted_risks.len());
    let (mut conc, mut disc, mut tied) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut i = 0;
    while i < n {
        let t = outcomes[order[i]].time;
        let mut j = i;
        while j < n && outcomes[order[j]].time == t {
            j += 1;
        }
        for &r in &order[i..j] {
            if !outcomes[r].event {
                continue;
            }
            let k = rank(risks[r]);
            let below = tree.prefix(k);
            let at_or_below = tree.prefix(k + 1);
            conc += below;
            tied += at_or_below - below;
            disc += inserted - at_or_below;
        }
        for &r in &order[i..j] {
            tree.add(rank(risks[r]));
            inserted += 1;
        }
        i = j;
    }
    let comparable = conc + disc + tied;
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    let c = (T::from_u64(conc).unwrap() + T::half() * T::from_u64(tied).unwrap())
        / T::from_u64(comparable).unwrap();
    Ok(ConcordanceResult {
        c_index: c,
        concordant: conc,
        discordant: disc,
        tied_risk: tied,
        comparable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TimeAuc<T> {
    pub t: T,
    /// `None` when there are no cases or no controls at `t`.
    pub auc: Option<T>,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Cumulative/dynamic AUC at `t` with IPCW case weights `1/G(T_i-)`.
/// Cases: events with `T_i <= t`; controls: `T_j > t`.
pub fn time_dependent_auc<T: Real>(
    risks: &[T],
    outcomes: &[SurvivalOutcome<T>],
    t: T,
    censor: &SurvivalCurve<T>,
) -> Result<TimeAuc<T>> {
    check_len(outcomes.len(), risks.len())?;
    let mut controls: Vec<T> = outcomes
        .iter()
        .zip(risks)
        .filter(|(o, _)| o.time > t)
        .map(|(_, &r)| r)
        .collect();
    controls.sort_by(total_cmp);
    let n_controls = controls.len();
    let mut n_cases = 0;
    let (mut num, mut den) = (T::zero(), T::zero());
    for (o, &r) in outcomes.iter().zip(risks) {
        if !(o.event && o.time <= t) {
            continue;
        }
        n_cases += 1;
        let g = censor.eval_left(o.time);
        if g <= T::zero() {
            return Err(Error::ZeroCensoringWeight { time: o.time.as_f64() });
        }
        let w = T::one() / g;
        let below = controls.partition_point(|&c| c < r);
        let at_or_below = controls.partition_point(|&c| c <= r);
        num += w * (T::from_count(below) + T::half() * T::from_count(at_or_below - below));
        den += w * T::from_count(n_controls);
    }
    let auc = if n_cases > 0 && n_controls > 0 {
        Some(num / den)
    } else {
        None
    };
    Ok(TimeAuc {
        t,
        auc,
        n_cases,
        n_controls,
    })
}

/// AUC at each grid point with `G` estimated from `outcomes`.
pub fn auc_curve<T: Real>(
    risks: &[T],
    outcomes: &[SurvivalOutcome<T>],
    grid: &[T],
) -> Result<Vec<TimeAuc<T>>> {
    let g = censoring_distribution(outcomes);
    auc_curve_with(risks, outcomes, grid, &g)
}

pub fn auc_curve_with<T: Real>(
    risks: &[T],
    outcomes: &[SurvivalOutcome<T>],
    grid: &[T],
    censor: &SurvivalCurve<T>,
) -> Result<Vec<TimeAuc<T>>> {
    grid.iter()
        .map(|&t| time_dependent_auc(risks, outcomes, t, censor))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BrierResult<T> {
    pub grid: Vec<T>,
    pub brier: Vec<T>,
    pub ibs: T,
}

/// IPCW Brier score at each grid point and its trapezoidal time average.
///
/// `survival[i][k]` is the predicted `S_i(grid[k])`.
pub fn brier_ibs<T: Real>(
    survival: &[Vec<T>],
    outcomes: &[SurvivalOutcome<T>],
    grid: &[T],
    censor: &SurvivalCurve<T>,
) -> Result<BrierResult<T>> {
    check_len(outcomes.len(), survival.len())?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation grid".into()));
    }
    if let Some(row) = survival.iter().find(|r| r.len() != grid.len()) {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: row.len(),
        });
    }
    let n = T::from_count(outcomes.len());
    let mut brier = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let g_t = censor.eval(t);
        let mut sum = T::zero();
        for (o, s) in outcomes.iter().zip(survival) {
            let s = s[k];
            if o.time <= t && o.event {
                let g = censor.eval_left(o.time);
                if g <= T::zero() {
                    return Err(Error::ZeroCensoringWeight { time: o.time.as_f64() });
                }
                sum += s * s / g;
            } else if o.time > t {
                if g_t <= T::zero() {
                    return Err(Error::ZeroCensoringWeight { time: t.as_f64() });
                }
                sum += (T::one() - s) * (T::one() - s) / g_t;
            }
        }
        brier.push(sum / n);
    }
    let ibs = integrate_trapezoid(grid, &brier);
    Ok(BrierResult {
        grid: grid.to_vec(),
        brier,
        ibs,
    })
}

/// Trapezoidal average of `y` over the span of `x`; a single point returns itself.
pub fn integrate_trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    if x.len() == 1 {
        return y[0];
    }
    let span = x[x.len() - 1] - x[0];
    if span <= T::zero() {
        return y[0];
    }
    let area: T = x
        .windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) * T::half())
        .sum();
    area / span
}

/// Unique event times clipped to `[lo, hi]` when given.
pub fn event_time_grid<T: Real>(outcomes: &[SurvivalOutcome<T>], lo: Option<T>, hi: Option<T>) -> Vec<T> {
    let mut g: Vec<T> = outcomes
        .iter()
        .filter(|o| o.event)
        .map(|o| o.time)
        .filter(|&t| lo.map_or(true, |l| t >= l) && hi.map_or(true, |h| t <= h))
        .collect();
    g.sort_by(total_cmp);
    g.dedup();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survcore::{kaplan_meier, SurvivalOutcome as O};

    #[test]
    fn perfect_ranking_is_one() {
        let y: Vec<O<f64>> = (1..=6).map(|t| O::death(t as f64)).collect();
        let r: Vec<f64> = y.iter().map(|o| -o.time).collect();
        let c = harrell_cindex(&r, &y).unwrap();
        assert_eq!(c.c_index, 1.0);
        assert_eq!(c.comparable, 15);
    }

    #[test]
    fn constant_risk_is_half() {
        let y: Vec<O<f64>> = (1..=6).map(|t| O::death(t as f64)).collect();
        let c = harrell_cindex(&[0.3; 6], &y).unwrap();
        assert_eq!(c.c_index, 0.5);
        assert_eq!(c.tied_risk, 15);
    }

    #[test]
    fn no_comparable_pairs_errors() {
        let y = [O::censored(1.0), O::censored(2.0)];
        assert!(matches!(harrell_cindex(&[1.0, 2.0], &y), Err(Error::NoComparablePairs)));
    }

    #[test]
    fn equal_times_not_comparable() {
        let y = [O::death(1.0), O::death(1.0), O::censored(1.0)];
        assert!(harrell_cindex(&[1.0, 2.0, 3.0], &y).is_err());
    }

    #[test]
    fn auc_constant_risk_is_half() {
        let y = [O::death(1.0), O::death(2.0), O::censored(3.0), O::death(4.0)];
        let g = censoring_distribution(&y);
        let a = time_dependent_auc(&[1.0; 4], &y, 2.5, &g).unwrap();
        assert_eq!(a.auc, Some(0.5));
        assert_eq!((a.n_cases, a.n_controls), (2, 2));
    }

    #[test]
    fn auc_undefined_without_cases() {
        let y = [O::death(5.0), O::censored(6.0)];
        let g = censoring_distribution(&y);
        let a = time_dependent_auc(&[1.0, 0.0], &y, 1.0, &g).unwrap();
        assert_eq!(a.auc, None);
    }

    #[test]
    fn constant_half_forecast_gives_quarter() {
        let y = [O::death(1.0), O::death(2.0), O::death(3.0)];
        let g = censoring_distribution(&y);
        let grid = [0.5, 1.5, 2.5];
        let s = vec![vec![0.5f64; 3]; 3];
        let b = brier_ibs(&s, &y, &grid, &g).unwrap();
        assert!(b.brier.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((b.ibs - 0.25).abs() < 1e-15);
    }

    #[test]
    fn perfect_knowledge_brier_is_zero() {
        let y = [O::death(1.0), O::death(2.0), O::death(3.0)];
        let g = kaplan_meier(&y.map(|o| o.flipped()));
        let grid = [0.5, 1.5, 2.5];
        let s: Vec<Vec<f64>> = y
            .iter()
            .map(|o| grid.iter().map(|&t| if o.time > t { 1.0 } else { 0.0 }).collect())
            .collect();
        let b = brier_ibs(&s, &y, &grid, &g).unwrap();
        assert!(b.brier.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_censoring_weight_errors() {
        // every patient censored at 1 -> G(1) = 0 while survivors past t=2 need weights
        let y = [O::censored(1.0), O::death(3.0)];
        let g = censoring_distribution(&[O::censored(1.0)]);
        let r = brier_ibs(&[vec![0.5], vec![0.5]], &y, &[2.0], &g);
        assert!(matches!(r, Err(Error::ZeroCensoringWeight { .. })));
    }

    #[test]
    fn trapezoid_average() {
        assert_eq!(integrate_trapezoid(&[0.0, 1.0, 3.0], &[0.0, 1.0, 1.0]), (0.5 + 2.0) / 3.0);
        assert_eq!(integrate_trapezoid(&[2.0], &[0.7]), 0.7);
    }

    #[test]
    fn grid_is_clipped_unique_event_times() {
        let y = [O::death(3.0), O::censored(1.0), O::death(3.0), O::death(9.0), O::death(2.0)];
        assert_eq!(event_time_grid(&y, None, Some(5.0)), vec![2.0, 3.0]);
    }
}
