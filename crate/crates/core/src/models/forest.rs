//! Random survival forest and extra survival trees with log-rank splitting.
//!
//! RSF grows each tree on a bootstrap sample and scores every midpoint
//! threshold of each candidate feature. EST grows on the full sample and scores
//! one uniformly drawn threshold per candidate feature. Leaves hold the
//! Nelson-Aalen cumulative hazard of their training samples.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{total_cmp, Real};
use crate::survcore::{nelson_aalen, StepFunction, SurvivalCurve, SurvivalOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestKind {
    Rsf,
    Est,
}

impl ForestKind {
    pub fn name(self) -> &'static str {
        match self {
            ForestKind::Rsf => "rsf",
            ForestKind::Est => "est",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until the leaf-size limit stops splitting.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    /// `None` means `ceil(sqrt(p))`.
    pub features_per_split: Option<usize>,
    /// Overrides the kind's resampling default (RSF bootstraps, EST does not).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<bool>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_leaf_size: 10,
            features_per_split: None,
            bootstrap: None,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
        }
        if self.min_leaf_size == 0 {
            return Err(Error::InvalidArgument("min_leaf_size must be >= 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidArgument("features_per_split must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolved_features_per_split(&self, p: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "node", rename_all = "lowercase")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        chf: StepFunction<T>,
        n_samples: usize,
        /// Sum of `chf` over the forest's event-time grid.
        grid_sum: T,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SurvivalTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> SurvivalTree<T> {
    fn leaf_for(&self, x: &[T]) -> &Node<T> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    pub fn leaf_chf(&self, x: &[T]) -> &StepFunction<T> {
        match self.leaf_for(x) {
            Node::Leaf { chf, .. } => chf,
            Node::Split { .. } => unreachable!(),
        }
    }

    fn leaf_grid_sum(&self, x: &[T]) -> T {
        match self.leaf_for(x) {
            Node::Leaf { grid_sum, .. } => *grid_sum,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ForestModel<T> {
    pub kind: ForestKind,
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    /// Unique training event times.
    pub grid: Vec<T>,
    pub trees: Vec<SurvivalTree<T>>,
}

/// Per-node view of the samples ordered by time, with time slots.
struct NodeTable {
    /// Slot (distinct time rank within the node) of each node sample.
    slot: Vec<usize>,
    deaths: Vec<usize>,
    at_risk: Vec<usize>,
}

impl NodeTable {
    /// `samples` must be sorted by time.
    fn new<T: Real>(samples: &[usize], outcomes: &[SurvivalOutcome<T>]) -> Self {
        let mut slot = Vec::with_capacity(samples.len());
        let mut deaths = Vec::new();
        let mut counts = Vec::new();
        let mut prev: Option<T> = None;
        for &s in samples {
            let t = outcomes[s].time;
            if prev != Some(t) {
                deaths.push(0);
                counts.push(0);
                prev = Some(t);
            }
            let k = deaths.len() - 1;
            slot.push(k);
            counts[k] += 1;
            if outcomes[s].event {
                deaths[k] += 1;
            }
        }
        let mut at_risk = vec![0; counts.len()];
        let mut acc = 0;
        for k in (0..counts.len()).rev() {
            acc += counts[k];
            at_risk[k] = acc;
        }
        NodeTable {
            slot,
            deaths,
            at_risk,
        }
    }

    fn total_deaths(&self) -> usize {
        self.deaths.iter().sum()
    }

    /// Log-rank statistic of the left group given its per-slot counts and deaths.
    fn statistic(&self, left_count: &[usize], left_deaths: &[usize]) -> f64 {
        let mut n_left = 0usize;
        let (mut o_minus_e, mut var) = (0.0f64, 0.0f64);
        for k in (0..self.deaths.len()).rev() {
            n_left += left_count[k];
            let d = self.deaths[k];
            if d == 0 {
                continue;
            }
            let n = self.at_risk[k] as f64;
            let frac = n_left as f64 / n;
            let d = d as f64;
            o_minus_e += left_deaths[k] as f64 - d * frac;
            if n > 1.0 {
                var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        if var <= 0.0 {
            0.0
        } else {
            o_minus_e * o_minus_e / var
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate<T> {
    score: f64,
    feature: usize,
    threshold: T,
}

struct Grower<'a, T> {
    x: &'a Matrix<T>,
    outcomes: &'a [SurvivalOutcome<T>],
    params: &'a ForestParams,
    kind: ForestKind,
    fps: usize,
    grid: &'a [T],
}

impl<'a, T: Real> Grower<'a, T> {
    fn grow(&self, samples: Vec<usize>, rng: &mut ChaCha8Rng) -> SurvivalTree<T> {
        let mut nodes = Vec::new();
        self.grow_node(samples, 0, rng, &mut nodes);
        SurvivalTree { nodes }
    }

    fn make_leaf(&self, samples: &[usize]) -> Node<T> {
        let leaf_outcomes: Vec<_> = samples.iter().map(|&s| self.outcomes[s]).collect();
        let chf = nelson_aalen(&leaf_outcomes);
        let grid_sum = grid_sum(&chf, self.grid);
        Node::Leaf {
            chf,
            n_samples: samples.len(),
            grid_sum,
        }
    }

    fn grow_node(
        &self,
        samples: Vec<usize>,
        depth: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node<T>>,
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf {
            chf: StepFunction::constant(T::zero()),
            n_samples: 0,
            grid_sum: T::zero(),
        });
        let split = if self.params.max_depth.is_some_and(|m| depth >= m)
            || samples.len() < 2 * self.params.min_leaf_size
        {
            None
        } else {
            self.best_split(&samples, rng)
        };
        match split {
            None => nodes[id] = self.make_leaf(&samples),
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&s| self.x.get(s, c.feature) <= c.threshold);
                let left = self.grow_node(l, depth + 1, rng, nodes);
                let right = self.grow_node(r, depth + 1, rng, nodes);
                nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&self, samples: &[usize], rng: &mut ChaCha8Rng) -> Option<Candidate<T>> {
        let table = NodeTable::new(samples, self.outcomes);
        if table.total_deaths() == 0 {
            return None;
        }
        let p = self.x.n_cols();
        let mut features: Vec<usize> = sample_indices(rng, p, self.fps).into_vec();
        features.sort_unstable();
        let min_leaf = self.params.min_leaf_size;
        let n_slots = table.deaths.len();
        let mut best: Option<Candidate<T>> = None;
        let consider = |c: Candidate<T>, best: &mut Option<Candidate<T>>| {
            // candidates arrive by feature index, then ascending threshold,
            // so strict improvement implements the tie-break.
            if c.score > 0.0 && best.as_ref().map_or(true, |b| c.score > b.score) {
                *best = Some(c);
            }
        };

        for &f in &features {
            if let ThresholdRule::Random = self.kind_thresholds() {
                let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
                for &s in samples {
                    let v = self.x.get(s, f);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if !(lo < hi) {
                    continue;
                }
                let u: f64 = rng.random();
                let mut thr = lo + T::lit(u) * (hi - lo);
                if thr >= hi {
                    thr = lo;
                }
                let mut lc = vec![0usize; n_slots];
                let mut ld = vec![0usize; n_slots];
                let mut n_left = 0;
                for (pos, &s) in samples.iter().enumerate() {
                    if self.x.get(s, f) <= thr {
                        let k = table.slot[pos];
                        lc[k] += 1;
                        if self.outcomes[s].event {
                            ld[k] += 1;
                        }
                        n_left += 1;
                    }
                }
                if n_left < min_leaf || samples.len() - n_left < min_leaf {
                    continue;
                }
                let score = table.statistic(&lc, &ld);
                consider(Candidate { score, feature: f, threshold: thr }, &mut best);
                continue;
            }
            // (value, position in node order)
            let mut by_value: Vec<(T, usize)> = samples
                .iter()
                .enumerate()
                .map(|(pos, &s)| (self.x.get(s, f), pos))
                .collect();
            by_value.sort_by(|a, b| total_cmp(&a.0, &b.0).then(a.1.cmp(&b.1)));
            let lo = by_value[0].0;
            let hi = by_value[by_value.len() - 1].0;
            if !(lo < hi) {
                continue;
            }
            match self.kind_thresholds() {
                ThresholdRule::Random => unreachable!(),
                ThresholdRule::AllMidpoints => {
                    let mut lc = vec![0usize; n_slots];
                    let mut ld = vec![0usize; n_slots];
                    let mut i = 0;
                    while i < by_value.len() {
                        let v = by_value[i].0;
                        while i < by_value.len() && by_value[i].0 == v {
                            let pos = by_value[i].1;
                            let k = table.slot[pos];
                            lc[k] += 1;
                            if self.outcomes[samples[pos]].event {
                                ld[k] += 1;
                            }
                            i += 1;
                        }
                        if i >= by_value.len() {
                            break;
                        }
                        let n_left = i;
                        if n_left < min_leaf {
                            continue;
                        }
                        if samples.len() - n_left < min_leaf {
                            break;
                        }
                        let thr = (v + by_value[i].0) * T::half();
                        let score = table.statistic(&lc, &ld);
                        consider(
                            Candidate {
                                score,
                                feature: f,
                                threshold: thr,
                            },
                            &mut best,
                        );
                    }
                }
            }
        }
        best
    }

    fn kind_thresholds(&self) -> ThresholdRule {
        match self.kind {
            ForestKind::Rsf => ThresholdRule::AllMidpoints,
            ForestKind::Est => ThresholdRule::Random,
        }
    }
}

/// `sum_g chf(g)` over the sorted grid: each step value times the number of
/// grid points it covers.
fn grid_sum<T: Real>(chf: &StepFunction<T>, grid: &[T]) -> T {
    let bps = chf.breakpoints();
    let mut start = grid.partition_point(|&g| g < bps.first().copied().unwrap_or(T::infinity()));
    let mut total = chf.value_before_first() * T::from_count(start);
    for (k, &v) in chf.values().iter().enumerate() {
        let end = bps.get(k + 1).map_or(grid.len(), |&next| grid.partition_point(|&g| g < next));
        total += v * T::from_count(end - start);
        start = end;
    }
    total
}

enum ThresholdRule {
    AllMidpoints,
    Random,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Fits a forest. Trees are grown in parallel on the current rayon pool; each
/// tree's randomness comes from a stream keyed by its index, so the result is
/// identical for any thread count.
pub fn fit_forest<T: Real>(
    x: &Matrix<T>,
    outcomes: &[SurvivalOutcome<T>],
    params: &ForestParams,
    kind: ForestKind,
    seed: u64,
) -> Result<ForestModel<T>> {
    params.validate()?;
    if x.n_rows() != outcomes.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            got: outcomes.len(),
        });
    }
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(Error::Degenerate("forest needs rows and features".into()));
    }
    let mut grid: Vec<T> = outcomes.iter().filter(|o| o.event).map(|o| o.time).collect();
    grid.sort_by(total_cmp);
    grid.dedup();

    let n = x.n_rows();
    let bootstrap = params.bootstrap.unwrap_or(kind == ForestKind::Rsf);
    let grower = Grower {
        x,
        outcomes,
        params,
        kind,
        fps: params.resolved_features_per_split(x.n_cols()),
        grid: &grid,
    };
    let by_time = |a: &usize, b: &usize| total_cmp(&outcomes[*a].time, &outcomes[*b].time).then(a.cmp(b));
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut samples: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            samples.sort_by(by_time);
            grower.grow(samples, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        kind,
        params: params.clone(),
        seed,
        n_features: x.n_cols(),
        grid,
        trees,
    })
}

impl<T: Real> ForestModel<T> {
    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Ensemble cumulative hazard on the event-time grid.
    pub fn cumulative_hazard(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let mut h = vec![T::zero(); self.grid.len()];
        for tree in &self.trees {
            let chf = tree.leaf_chf(x);
            for (acc, &g) in h.iter_mut().zip(&self.grid) {
                *acc += chf.eval(g);
            }
        }
        let k = T::from_count(self.trees.len());
        h.iter_mut().for_each(|v| *v /= k);
        Ok(h)
    }

    pub fn cumulative_hazard_at(&self, x: &[T], t: T) -> Result<T> {
        self.check(x)?;
        let s: T = self.trees.iter().map(|tr| tr.leaf_chf(x).eval(t)).sum();
        Ok(s / T::from_count(self.trees.len()))
    }

    /// Sum of the ensemble cumulative hazard over the event-time grid.
    pub fn risk(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        let s: T = self.trees.iter().map(|tr| tr.leaf_grid_sum(x)).sum();
        Ok(s / T::from_count(self.trees.len()))
    }

    pub fn predict(&self, x: &[T]) -> Result<(T, SurvivalCurve<T>)> {
        let h = self.cumulative_hazard(x)?;
        let risk = self.risk(x)?;
        let values = h.iter().map(|&v| (-v).exp()).collect();
        let curve = SurvivalCurve::from_step(StepFunction::new(self.grid.clone(), values, T::one()));
        Ok((risk, curve))
    }

    pub fn survival_at(&self, x: &[T], t: T) -> Result<T> {
        Ok((-self.cumulative_hazard_at(x, t)?).exp())
    }
}
