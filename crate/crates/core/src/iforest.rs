//! Isolation Forest scoring and the contamination-rate split into
//! anomalous and representative subsets.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{rng_from, EngineRng};
use crate::scalar::Scalar;

pub const DEFAULT_NUM_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
pub const DEFAULT_CONTAMINATION: f64 = 0.1;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Debug, PartialEq)]
pub struct IForestParams {
    pub num_trees: usize,
    /// Upper bound on points per tree; the effective size is `min(this, n)`.
    pub max_subsample: usize,
}

impl Default for IForestParams {
    fn default() -> Self {
        IForestParams {
            num_trees: DEFAULT_NUM_TREES,
            max_subsample: DEFAULT_SUBSAMPLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    /// `size` points reached this leaf during fitting.
    Leaf { size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> IsolationTree<T> {
    fn fit(points: &ArrayView2<T>, rows: Vec<usize>, max_depth: usize, rng: &mut EngineRng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.grow(points, rows, 0, max_depth, rng);
        tree
    }

    fn grow(&mut self, points: &ArrayView2<T>, rows: Vec<usize>, depth: usize, max_depth: usize, rng: &mut EngineRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= max_depth {
            return id;
        }
        // only features that still vary inside this node can separate it
        let dim = points.ncols();
        let (mut lo, mut hi) = (vec![T::infinity(); dim], vec![T::neg_infinity(); dim]);
        for &r in &rows {
            for (f, &v) in points.row(r).iter().enumerate() {
                lo[f] = lo[f].min(v);
                hi[f] = hi[f].max(v);
            }
        }
        let ranges: Vec<(usize, T, T)> = (0..dim)
            .filter(|&f| lo[f] < hi[f])
            .map(|f| (f, lo[f], hi[f]))
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let u: f64 = rng.random();
        // threshold in (lo, hi]: `v < threshold` sends lo left and hi right
        let mut threshold = hi - T::from_f64_lossy(u) * (hi - lo);
        if threshold <= lo {
            threshold = hi;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| points[[r, feature]] < threshold);
        let left = self.grow(points, left_rows, depth + 1, max_depth, rng);
        let right = self.grow(points, right_rows, depth + 1, max_depth, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Depth of the leaf reached by `x` plus the expected remaining depth of its leaf.
    pub fn path_length(&self, x: ArrayView1<T>) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { *left } else { *right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
            }
        }
    }

    /// Depth of the leaf `x` lands in, without the leaf-size adjustment.
    pub fn leaf_depth(&self, x: ArrayView1<T>) -> usize {
        let mut node = 0;
        let mut depth = 0;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = &self.nodes[node]
        {
            node = if x[*feature] < *threshold { *left } else { *right };
            depth += 1;
        }
        depth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IForest<T> {
    trees: Vec<IsolationTree<T>>,
    subsample_size: usize,
    dim: usize,
    seed: u64,
}

/// `c(n)`: average unsuccessful-search path length in a binary search tree of `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

/// `2^(-E[h] / c(psi))`.
pub fn score_from_path(mean_path: f64, subsample_size: usize) -> f64 {
    let c = average_path_length(subsample_size);
    if c == 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_path / c)
}

pub fn iforest_fit<T: Scalar>(points: ArrayView2<T>, num_trees: usize, subsample_size: usize, seed: u64) -> Result<IForest<T>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("isolation forest needs at least 2 points, got {n}")));
    }
    if num_trees == 0 || subsample_size < 2 {
        return Err(Error::invalid("need at least one tree and a subsample of at least 2"));
    }
    if points.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN feature value"));
    }
    let psi = subsample_size.min(n);
    let max_depth = (psi as f64).log2().ceil() as usize;
    let trees = (0..num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(seed, &[t as u64]);
            let mut rows = index::sample(&mut rng, n, psi).into_vec();
            rows.sort_unstable();
            IsolationTree::fit(&points, rows, max_depth, &mut rng)
        })
        .collect();
    Ok(IForest {
        trees,
        subsample_size: psi,
        dim: points.ncols(),
        seed,
    })
}

impl<T: Scalar> IForest<T> {
    pub fn fit(points: ArrayView2<T>, params: &IForestParams, seed: u64) -> Result<Self> {
        iforest_fit(points, params.num_trees, params.max_subsample, seed)
    }

    pub fn trees(&self) -> &[IsolationTree<T>] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_path_length(&self, x: ArrayView1<T>) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn anomaly_score(&self, x: ArrayView1<T>) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(score_from_path(self.mean_path_length(x), self.subsample_size))
    }

    pub fn score_all(&self, points: ArrayView2<T>) -> Result<Vec<f64>> {
        if points.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: points.ncols(),
            });
        }
        Ok((0..points.nrows())
            .into_par_iter()
            .map(|r| score_from_path(self.mean_path_length(points.row(r)), self.subsample_size))
            .collect())
    }
}

/// Free-function form of [`IForest::anomaly_score`].
pub fn anomaly_score<T: Scalar>(forest: &IForest<T>, point: ArrayView1<T>) -> Result<f64> {
    forest.anomaly_score(point)
}

/// Partition of row indices by anomaly rank.
#[derive(Clone, Debug, PartialEq)]
pub struct ContaminationSplit {
    /// The top `round(contamination * n)` rows, most anomalous first.
    pub anomalous: Vec<usize>,
    /// The remaining rows, most anomalous first.
    pub representative: Vec<usize>,
    pub contamination: f64,
}

impl ContaminationSplit {
    /// Ranks by descending score; equal scores keep input order.
    pub fn from_scores(scores: &[f64], contamination: f64) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let n_anom = ((contamination * scores.len() as f64).round() as usize).min(scores.len());
        let representative = order.split_off(n_anom);
        ContaminationSplit {
            anomalous: order,
            representative,
            contamination,
        }
    }
}

/// Row scores for a family, with the degenerate `n < 2` case scored flat.
pub fn family_scores<T: Scalar>(points: ArrayView2<T>, params: &IForestParams, seed: u64) -> Result<Vec<f64>> {
    if points.nrows() < 2 {
        return Ok(vec![0.5; points.nrows()]);
    }
    IForest::fit(points, params, seed)?.score_all(points)
}

/// Splits `points` with an isolation forest and draws `anomalous_budget`
/// rows from the anomaly pool and `representative_budget` rows from the rest.
///
/// A pool that is too small is topped up from the other one: the anomalous
/// side takes the highest-scoring representatives, the representative side
/// takes the lowest-scoring leftover anomalies. Both returned index lists are
/// sorted and disjoint; together they hold `min(budgets sum, n)` rows.
pub fn contamination_split<T: Scalar>(
    points: ArrayView2<T>,
    contamination: f64,
    anomalous_budget: usize,
    representative_budget: usize,
    seed: u64,
    params: &IForestParams,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&contamination) {
        return Err(Error::invalid(format!("contamination {contamination} outside [0, 1]")));
    }
    if points.nrows() == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let scores = family_scores(points, params, rng_from(seed, &[1]).random())?;
    let split = ContaminationSplit::from_scores(&scores, contamination);
    Ok(draw_from_split(&split, anomalous_budget, representative_budget, seed))
}

/// The budgeted draw half of [`contamination_split`], for callers that
/// already have a ranked split.
pub fn draw_from_split(
    split: &ContaminationSplit,
    anomalous_budget: usize,
    representative_budget: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_from(seed, &[2]);
    let mut anom_pool = split.anomalous.clone();
    let mut repr_pool = split.representative.clone();

    let take = anomalous_budget.min(anom_pool.len());
    anom_pool.shuffle(&mut rng);
    let mut chosen_anom: Vec<usize> = anom_pool.drain(..take).collect();
    if chosen_anom.len() < anomalous_budget {
        // representative pool is ordered most-anomalous first
        let extra = (anomalous_budget - chosen_anom.len()).min(repr_pool.len());
        chosen_anom.extend(repr_pool.drain(..extra));
    }

    let take = representative_budget.min(repr_pool.len());
    repr_pool.shuffle(&mut rng);
    let mut chosen_repr: Vec<usize> = repr_pool.drain(..take).collect();
    if chosen_repr.len() < representative_budget && !anom_pool.is_empty() {
        // leftover anomalies, least anomalous first
        let rank = |i: &usize| split.anomalous.iter().position(|a| a == i).unwrap();
        anom_pool.sort_by_key(|i| std::cmp::Reverse(rank(i)));
        let extra = (representative_budget - chosen_repr.len()).min(anom_pool.len());
        chosen_repr.extend(anom_pool.drain(..extra));
    }
    chosen_anom.sort_unstable();
    chosen_repr.sort_unstable();
    (chosen_anom, chosen_repr)
}
