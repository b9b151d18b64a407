use ndarray::{Array2, ArrayView2};
use rand::seq::index;

use crate::data::{DataPool, FamilyId};
use crate::error::{Error, Result};
use crate::iforest::{contamination_split, IForestParams};
use crate::nn::Mlp;
use crate::rng::{derive_seed, rng_from, tag};
use crate::scalar::Scalar;

use super::budget::{family_budgets, split_share};
use super::{ReplayConfig, ReplaySet};

/// Seed for the isolation-forest split of one family.
pub fn family_seed(replay_seed: u64, family: FamilyId) -> u64 {
    derive_seed(replay_seed, &[tag::FAMILY_SPLIT, family.0 as u64])
}

/// Uniform draw of `budget` pool samples without replacement; the whole
/// pool when it does not exceed the budget.
pub fn grs_select<T: Scalar>(pool: &DataPool<T>, budget: usize, seed: u64) -> ReplaySet {
    if budget >= pool.len() {
        return ReplaySet::whole_pool(pool);
    }
    let mut rng = rng_from(seed, &[tag::REPLAY]);
    ReplaySet::from_indices(index::sample(&mut rng, pool.len(), budget).into_vec())
}

/// Chooses anomalous and representative members of one family.
pub trait FamilySplitter<T: Scalar> {
    /// `rows` are pool indices of a single family. Returns
    /// `(anomalous, representative)` as pool indices.
    fn split(
        &self,
        pool: &DataPool<T>,
        rows: &[usize],
        anomalous_budget: usize,
        representative_budget: usize,
        cfg: &ReplayConfig,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>)>;
}

fn gather<T: Scalar>(pool: &DataPool<T>, rows: &[usize]) -> Array2<T> {
    let dim = pool.feature_dim().unwrap_or(0);
    let mut m = Array2::zeros((rows.len(), dim));
    for (r, &i) in rows.iter().enumerate() {
        m.row_mut(r)
            .assign(&ndarray::ArrayView1::from(&pool.samples()[i].features[..]));
    }
    m
}

fn to_pool(rows: &[usize], positions: Vec<usize>) -> Vec<usize> {
    positions.into_iter().map(|p| rows[p]).collect()
}

/// Isolation forest on the raw feature vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct FeatureSpace;

impl<T: Scalar> FamilySplitter<T> for FeatureSpace {
    fn split(
        &self,
        pool: &DataPool<T>,
        rows: &[usize],
        anomalous_budget: usize,
        representative_budget: usize,
        cfg: &ReplayConfig,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let points = gather(pool, rows);
        let (a, s) = contamination_split(
            points.view(),
            cfg.contamination,
            anomalous_budget,
            representative_budget,
            seed,
            &cfg.iforest,
        )?;
        Ok((to_pool(rows, a), to_pool(rows, s)))
    }
}

/// Isolation forest on hidden-layer activations of a trained model, with
/// batch norm bypassed.
#[derive(Clone, Copy, Debug)]
pub struct ActivationSpace<'m, T> {
    pub model: &'m Mlp<T>,
    pub layer: usize,
}

impl<'m, T: Scalar> ActivationSpace<'m, T> {
    pub fn penultimate(model: &'m Mlp<T>) -> Self {
        ActivationSpace {
            model,
            layer: model.penultimate_index(),
        }
    }
}

impl<T: Scalar> FamilySplitter<T> for ActivationSpace<'_, T> {
    fn split(
        &self,
        pool: &DataPool<T>,
        rows: &[usize],
        anomalous_budget: usize,
        representative_budget: usize,
        cfg: &ReplayConfig,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let points = gather(pool, rows);
        let (a, s) = madar_theta_split(
            self.model,
            self.layer,
            points.view(),
            anomalous_budget,
            representative_budget,
            cfg.contamination,
            seed,
            &cfg.iforest,
        )?;
        Ok((to_pool(rows, a), to_pool(rows, s)))
    }
}

/// Splits one family's samples in activation space. Returned indices are
/// row positions in `family_samples`.
#[allow(clippy::too_many_arguments)]
pub fn madar_theta_split<T: Scalar>(
    model: &Mlp<T>,
    layer: usize,
    family_samples: ArrayView2<T>,
    anomalous_budget: usize,
    representative_budget: usize,
    contamination: f64,
    seed: u64,
    params: &IForestParams,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let acts = model.extract_activations(family_samples, layer)?;
    contamination_split(
        acts.view(),
        contamination,
        anomalous_budget,
        representative_budget,
        seed,
        params,
    )
}

/// Stratified malware selection over every family in the pool.
fn select_malware<T: Scalar, S: FamilySplitter<T> + ?Sized>(
    pool: &DataPool<T>,
    malware_budget: usize,
    cfg: &ReplayConfig,
    splitter: &S,
) -> Result<Vec<usize>> {
    let budgets = family_budgets(pool.census(), malware_budget, cfg.budgeting);
    let mut chosen = Vec::new();
    for (family, rows) in pool.family_groups() {
        let family_budget = budgets.get(&family).copied().unwrap_or(0);
        if rows.len() <= family_budget {
            chosen.extend(rows);
            continue;
        }
        if family_budget == 0 {
            continue;
        }
        let (representative, anomalous) = split_share(family_budget, cfg.alpha);
        let (a, s) = splitter.split(pool, &rows, anomalous, representative, cfg, family_seed(cfg.seed, family))?;
        chosen.extend(a);
        chosen.extend(s);
    }
    Ok(chosen)
}

/// Binary (goodware / malware) replay: the budget is split by `gamma`,
/// malware is stratified by family, goodware is drawn uniformly.
pub fn madar_select_domain<T: Scalar, S: FamilySplitter<T> + ?Sized>(
    pool: &DataPool<T>,
    cfg: &ReplayConfig,
    splitter: &S,
) -> Result<ReplaySet> {
    cfg.validate()?;
    let (goodware_budget, malware_budget) = split_share(cfg.budget, cfg.gamma);
    let mut chosen = select_malware(pool, malware_budget, cfg, splitter)?;
    let goodware = pool.goodware_indices();
    let wanted = if cfg.goodware_match_malware {
        chosen.len()
    } else {
        goodware_budget
    };
    if wanted >= goodware.len() {
        chosen.extend(goodware);
    } else {
        let mut rng = rng_from(cfg.seed, &[tag::GOODWARE]);
        chosen.extend(index::sample(&mut rng, goodware.len(), wanted).into_iter().map(|i| goodware[i]));
    }
    Ok(ReplaySet::from_indices(chosen))
}

/// Family-label replay for Class-IL and Task-IL: the whole budget goes to
/// malware families.
pub fn madar_select_class<T: Scalar, S: FamilySplitter<T> + ?Sized>(
    pool: &DataPool<T>,
    cfg: &ReplayConfig,
    splitter: &S,
) -> Result<ReplaySet> {
    cfg.validate()?;
    if !pool.goodware_indices().is_empty() {
        return Err(Error::invalid("class-incremental replay expects a malware-only pool"));
    }
    Ok(ReplaySet::from_indices(select_malware(pool, cfg.budget, cfg, splitter)?))
}
