//! Nonparametric survival estimators and the two-sample log-rank test.
//!
//! Tied times follow one convention throughout: at an instant carrying both
//! deaths and censorings, deaths are processed first, so the censored
//! individuals are still in the risk set for that instant.

use serde::{Deserialize, Serialize};

use crate::num::{total_cmp, Real};
use crate::stats::chi2_1_sf;

/// Right-censored outcome: `event == true` means death observed at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SurvivalOutcome<T> {
    pub time: T,
    pub event: bool,
}

impl<T: Real> SurvivalOutcome<T> {
    pub fn new(time: T, event: bool) -> Self {
        SurvivalOutcome { time, event }
    }

    pub fn death(time: T) -> Self {
        Self::new(time, true)
    }

    pub fn censored(time: T) -> Self {
        Self::new(time, false)
    }

    pub fn flipped(self) -> Self {
        Self::new(self.time, !self.event)
    }
}

/// Right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StepFunction<T> {
    breakpoints: Vec<T>,
    values: Vec<T>,
    value_before_first: T,
}

impl<T: Real> StepFunction<T> {
    /// Breakpoints must be strictly increasing and match `values` in length.
    pub fn new(breakpoints: Vec<T>, values: Vec<T>, value_before_first: T) -> Self {
        assert_eq!(breakpoints.len(), values.len(), "breakpoints/values length");
        debug_assert!(breakpoints.windows(2).all(|w| w[0] < w[1]));
        StepFunction {
            breakpoints,
            values,
            value_before_first,
        }
    }

    pub fn constant(value: T) -> Self {
        Self::new(Vec::new(), Vec::new(), value)
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value_before_first(&self) -> T {
        self.value_before_first
    }

    /// Value at the largest breakpoint `<= t`.
    pub fn eval(&self, t: T) -> T {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        if idx == 0 {
            self.value_before_first
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit `f(t-)`: value at the largest breakpoint `< t`.
    pub fn eval_left(&self, t: T) -> T {
        let idx = self.breakpoints.partition_point(|&b| b < t);
        if idx == 0 {
            self.value_before_first
        } else {
            self.values[idx - 1]
        }
    }

    pub fn eval_many(&self, ts: &[T]) -> Vec<T> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        StepFunction {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            value_before_first: f(self.value_before_first),
        }
    }

    /// Step function on `grid` taking the values of `self` there; the value
    /// before the first grid point is `self`'s value before its first breakpoint.
    pub fn resample(&self, grid: &[T]) -> Self {
        Self::new(grid.to_vec(), self.eval_many(grid), self.value_before_first)
    }
}

/// Survival function estimate: starts at 1, non-increasing, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SurvivalCurve<T> {
    pub step: StepFunction<T>,
    /// Greenwood standard errors at each breakpoint (empty when not estimated).
    pub std_err: Vec<T>,
}

impl<T: Real> SurvivalCurve<T> {
    pub fn from_step(step: StepFunction<T>) -> Self {
        SurvivalCurve {
            step,
            std_err: Vec::new(),
        }
    }

    pub fn eval(&self, t: T) -> T {
        self.step.eval(t)
    }

    pub fn eval_left(&self, t: T) -> T {
        self.step.eval_left(t)
    }

    pub fn export(&self) -> CurveExport {
        let points = self
            .step
            .breakpoints()
            .iter()
            .zip(self.step.values())
            .enumerate()
            .map(|(i, (&t, &v))| CurvePoint {
                t: t.as_f64(),
                value: v.as_f64(),
                std_err: self.std_err.get(i).map(|s| s.as_f64()),
            })
            .collect();
        CurveExport { points }
    }
}

/// Plot-data form of a curve: `(t, value)` pairs plus Greenwood errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
}

/// Per distinct time (ascending): (time, deaths, censorings, at risk).
pub(crate) fn risk_table<T: Real>(outcomes: &[SurvivalOutcome<T>]) -> Vec<(T, usize, usize, usize)> {
    let mut sorted: Vec<&SurvivalOutcome<T>> = outcomes.iter().collect();
    sorted.sort_by(|a, b| total_cmp(&a.time, &b.time));
    let mut table = Vec::new();
    let mut at_risk = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let (mut d, mut c) = (0, 0);
        while i < sorted.len() && sorted[i].time == t {
            if sorted[i].event {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        table.push((t, d, c, at_risk));
        at_risk -= d + c;
    }
    table
}

/// Product-limit estimate with Greenwood standard errors.
pub fn kaplan_meier<T: Real>(outcomes: &[SurvivalOutcome<T>]) -> SurvivalCurve<T> {
    let mut bps = Vec::new();
    let mut vals = Vec::new();
    let mut ses = Vec::new();
    let mut s = T::one();
    let mut greenwood = T::zero();
    for (t, d, _, n) in risk_table(outcomes) {
        if d == 0 {
            continue;
        }
        let (d, n) = (T::from_count(d), T::from_count(n));
        s *= T::one() - d / n;
        if n > d {
            greenwood += d / (n * (n - d));
        }
        bps.push(t);
        vals.push(s);
        ses.push(if s > T::zero() {
            s * greenwood.sqrt()
        } else {
            T::zero()
        });
    }
    SurvivalCurve {
        step: StepFunction::new(bps, vals, T::one()),
        std_err: ses,
    }
}

/// Nelson-Aalen cumulative hazard `H(t) = sum_{t_i <= t} d_i / n_i`.
pub fn nelson_aalen<T: Real>(outcomes: &[SurvivalOutcome<T>]) -> StepFunction<T> {
    let mut bps = Vec::new();
    let mut vals = Vec::new();
    let mut h = T::zero();
    for (t, d, _, n) in risk_table(outcomes) {
        if d == 0 {
            continue;
        }
        h += T::from_count(d) / T::from_count(n);
        bps.push(t);
        vals.push(h);
    }
    StepFunction::new(bps, vals, T::zero())
}

/// Kaplan-Meier of the censoring process, `G(t)`, for IPCW weights.
pub fn censoring_distribution<T: Real>(outcomes: &[SurvivalOutcome<T>]) -> SurvivalCurve<T> {
    let flipped: Vec<_> = outcomes.iter().map(|o| o.flipped()).collect();
    kaplan_meier(&flipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed: [f64; 2],
    pub expected: [f64; 2],
    /// Set when the hypergeometric variance vanished; statistic is then 0 and p is 1.
    pub zero_variance: bool,
}

/// Accumulated log-rank quantities for group A: (O - E, variance).
pub(crate) fn log_rank_components<T: Real>(
    group_a: &[SurvivalOutcome<T>],
    group_b: &[SurvivalOutcome<T>],
) -> (f64, f64, f64, f64) {
    let mut pooled: Vec<(T, bool, bool)> = group_a
        .iter()
        .map(|o| (o.time, o.event, true))
        .chain(group_b.iter().map(|o| (o.time, o.event, false)))
        .collect();
    pooled.sort_by(|a, b| total_cmp(&a.0, &b.0));
    let mut n_a = group_a.len() as f64;
    let mut n = pooled.len() as f64;
    let (mut obs_a, mut exp_a, mut var) = (0.0, 0.0, 0.0);
    let mut total_deaths = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let (mut d, mut d_a, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while i < pooled.len() && pooled[i].0 == t {
            let (_, ev, in_a) = pooled[i];
            if ev {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            leave += 1.0;
            if in_a {
                leave_a += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = n_a / n;
            obs_a += d_a;
            exp_a += d * frac;
            total_deaths += d;
            if n > 1.0 {
                var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n_a -= leave_a;
    }
    (obs_a, exp_a, var, total_deaths)
}

/// Two-sample log-rank test with hypergeometric variance; p-value from the χ²₁ tail.
pub fn log_rank_test<T: Real>(
    group_a: &[SurvivalOutcome<T>],
    group_b: &[SurvivalOutcome<T>],
) -> LogRankResult {
    let (obs_a, exp_a, var, total_deaths) = log_rank_components(group_a, group_b);
    let observed = [obs_a, total_deaths - obs_a];
    let expected = [exp_a, total_deaths - exp_a];
    if var <= 0.0 || group_a.is_empty() || group_b.is_empty() {
        return LogRankResult {
            statistic: 0.0,
            p_value: 1.0,
            observed,
            expected,
            zero_variance: true,
        };
    }
    let statistic = (obs_a - exp_a).powi(2) / var;
    LogRankResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        observed,
        expected,
        zero_variance: false,
    }
}
