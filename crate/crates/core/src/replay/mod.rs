//! Replay-set construction: None, Joint, GRS, and the family-stratified
//! isolation-forest selection in raw-feature or activation space.

pub mod budget;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DataPool, Sample, Scenario, TaskData};
use crate::error::{Error, Result};
use crate::iforest::{IForestParams, DEFAULT_CONTAMINATION};
use crate::scalar::Scalar;

pub use budget::{family_budget, family_budgets, split_share, Budgeting};
pub use select::{
    family_seed, grs_select, madar_select_class, madar_select_domain, madar_theta_split, ActivationSpace, FamilySplitter,
    FeatureSpace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    Joint,
    Grs,
    Madar,
    MadarTheta,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::Joint,
        Strategy::Grs,
        Strategy::Madar,
        Strategy::MadarTheta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Joint => "joint",
            Strategy::Grs => "grs",
            Strategy::Madar => "madar",
            Strategy::MadarTheta => "madar-theta",
        }
    }

    /// Whether `budget` bounds the replay set size.
    pub fn is_budgeted(self) -> bool {
        matches!(self, Strategy::Grs | Strategy::Madar | Strategy::MadarTheta)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayConfig {
    pub strategy: Strategy,
    pub budgeting: Budgeting,
    /// Total replay slots.
    pub budget: usize,
    /// Goodware share of the budget (Domain-IL only).
    pub gamma: f64,
    /// Representative share of each family budget.
    pub alpha: f64,
    pub contamination: f64,
    /// Size the goodware draw to the malware replay count instead of `gamma * budget`.
    pub goodware_match_malware: bool,
    pub iforest: IForestParams,
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            strategy: Strategy::Madar,
            budgeting: Budgeting::Ratio,
            budget: 0,
            gamma: 0.5,
            alpha: 0.5,
            contamination: DEFAULT_CONTAMINATION,
            goodware_match_malware: false,
            iforest: IForestParams::default(),
            seed: 0,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("alpha", self.alpha), ("contamination", self.contamination)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Replay selection as ascending indices into a pool snapshot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplaySet {
    indices: Vec<usize>,
}

impl ReplaySet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        ReplaySet { indices }
    }

    pub fn whole_pool<T: Scalar>(pool: &DataPool<T>) -> Self {
        ReplaySet {
            indices: (0..pool.len()).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn samples<'p, T: Scalar>(&'p self, pool: &'p DataPool<T>) -> impl Iterator<Item = &'p Sample<T>> + 'p {
        self.indices.iter().map(move |&i| &pool.samples()[i])
    }

    /// Stored labels: the malware bit for Domain-IL, the family id otherwise.
    pub fn labels<T: Scalar>(&self, pool: &DataPool<T>, scenario: Scenario) -> Vec<u32> {
        self.samples(pool)
            .map(|s| match scenario {
                Scenario::DomainIl => s.label.bit() as u32,
                _ => s.family.0,
            })
            .collect()
    }
}

/// Current-task training samples followed by the replayed samples.
pub fn build_training_set<'a, T: Scalar>(
    current: &'a TaskData<T>,
    replay: &ReplaySet,
    pool: &'a DataPool<T>,
) -> Result<Vec<&'a Sample<T>>> {
    let width = current
        .train
        .first()
        .map(|s| s.features.len())
        .or(pool.feature_dim());
    if let (Some(w), Some(p)) = (width, pool.feature_dim()) {
        if w != p && !replay.is_empty() {
            return Err(Error::DimensionMismatch { expected: p, found: w });
        }
    }
    let mut out: Vec<&Sample<T>> = current.train.iter().collect();
    out.extend(replay.indices().iter().map(|&i| &pool.samples()[i]));
    Ok(out)
}
