//! Shared value types: samples, tasks, the replay pool and its family census,
//! and the lower-triangular accuracy matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Malware family identifier. `0` is the unlabeled "Other" bucket and
/// `u32::MAX` is reserved for goodware, which never enters a census.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FamilyId(pub u32);

impl FamilyId {
    pub const OTHER: FamilyId = FamilyId(0);
    pub const GOODWARE: FamilyId = FamilyId(u32::MAX);

    pub fn is_goodware(self) -> bool {
        self == Self::GOODWARE
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_goodware() {
            write!(f, "goodware")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Goodware = 0,
    Malware = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Goodware),
            1 => Some(Label::Malware),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// Identity of a sample: task of origin plus its index within that task.
/// Two samples with equal features are still distinct samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId {
    pub task: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: SampleId,
    pub features: Vec<T>,
    pub label: Label,
    pub family: FamilyId,
}

impl<T: Scalar> Sample<T> {
    pub fn goodware(id: SampleId, features: Vec<T>) -> Self {
        Sample {
            id,
            features,
            label: Label::Goodware,
            family: FamilyId::GOODWARE,
        }
    }

    /// Panics if `family` is the goodware sentinel.
    pub fn malware(id: SampleId, features: Vec<T>, family: FamilyId) -> Self {
        assert!(!family.is_goodware(), "malware cannot carry the goodware family id");
        Sample {
            id,
            features,
            label: Label::Malware,
            family,
        }
    }

    pub fn origin_task(&self) -> usize {
        self.id.task
    }

    pub fn is_malware(&self) -> bool {
        self.label == Label::Malware
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    DomainIl,
    ClassIl,
    TaskIl,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::DomainIl => "domain-il",
            Scenario::ClassIl => "class-il",
            Scenario::TaskIl => "task-il",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain-il" => Ok(Scenario::DomainIl),
            "class-il" => Ok(Scenario::ClassIl),
            "task-il" => Ok(Scenario::TaskIl),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData<T> {
    pub task_id: usize,
    pub train: Vec<Sample<T>>,
    pub holdout: Vec<Sample<T>>,
    /// Domain-IL: `{0, 1}`. Class-IL / Task-IL: the family ids present in the task.
    pub active_classes: BTreeSet<u32>,
}

impl<T: Scalar> TaskData<T> {
    /// Checks the per-task invariants: shared origin, disjoint splits,
    /// uniform feature width.
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in self.train.iter().chain(&self.holdout) {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: s.features.len(),
                });
            }
            if s.origin_task() != self.task_id {
                return Err(Error::invalid(format!(
                    "sample {:?} stored under task {}",
                    s.id, self.task_id
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::invalid(format!("sample {:?} appears twice", s.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream<T> {
    pub scenario: Scenario,
    pub feature_dim: usize,
    pub tasks: Vec<TaskData<T>>,
}

impl<T: Scalar> TaskStream<T> {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_train(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tasks {
            t.validate(self.feature_dim).map_err(|e| e.at_task(t.task_id))?;
        }
        Ok(())
    }
}

/// Per-family malware counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FamilyCensus {
    counts: BTreeMap<FamilyId, usize>,
    total_malware: usize,
}

impl FamilyCensus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a census directly from counts; zero entries are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (FamilyId, usize)>) -> Self {
        let mut census = Self::new();
        for (family, n) in counts {
            census.add(family, n);
        }
        census
    }

    pub fn add(&mut self, family: FamilyId, n: usize) {
        if family.is_goodware() || n == 0 {
            return;
        }
        *self.counts.entry(family).or_insert(0) += n;
        self.total_malware += n;
    }

    pub fn count(&self, family: FamilyId) -> usize {
        self.counts.get(&family).copied().unwrap_or(0)
    }

    pub fn total_malware(&self) -> usize {
        self.total_malware
    }

    pub fn num_families(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Families in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (FamilyId, usize)> + '_ {
        self.counts.iter().map(|(&f, &n)| (f, n))
    }
}

/// Functional form of [`FamilyCensus::count`].
pub fn census_lookup(census: &FamilyCensus, family: FamilyId) -> usize {
    census.count(family)
}

/// Append-only store of every training sample seen so far.
#[derive(Clone, Debug, Default)]
pub struct DataPool<T> {
    samples: Vec<Sample<T>>,
    census: FamilyCensus,
    feature_dim: Option<usize>,
}

impl<T: Scalar> DataPool<T> {
    pub fn new() -> Self {
        DataPool {
            samples: Vec::new(),
            census: FamilyCensus::new(),
            feature_dim: None,
        }
    }

    /// Appends `task.train`. Nothing is appended if any sample has the wrong width.
    pub fn append(&mut self, task: &TaskData<T>) -> Result<()> {
        let expected = self
            .feature_dim
            .or_else(|| task.train.first().map(|s| s.features.len()));
        if let Some(expected) = expected {
            if let Some(bad) = task.train.iter().find(|s| s.features.len() != expected) {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: bad.features.len(),
                });
            }
            self.feature_dim = Some(expected);
        }
        for s in &task.train {
            if s.is_malware() {
                self.census.add(s.family, 1);
            }
        }
        self.samples.extend(task.train.iter().cloned());
        Ok(())
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn census(&self) -> &FamilyCensus {
        &self.census
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Pool indices of malware samples grouped by family, ascending family id,
    /// each group in pool order.
    pub fn family_groups(&self) -> BTreeMap<FamilyId, Vec<usize>> {
        let mut groups: BTreeMap<FamilyId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.is_malware() {
                groups.entry(s.family).or_default().push(i);
            }
        }
        groups
    }

    pub fn goodware_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_malware())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Functional form of [`DataPool::append`].
pub fn pool_append<T: Scalar>(mut pool: DataPool<T>, task: &TaskData<T>) -> Result<DataPool<T>> {
    pool.append(task)?;
    Ok(pool)
}

/// `P[i][j]`: accuracy on task `j`'s hold-out set after training through task `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyMatrix {
    cells: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        AccuracyMatrix {
            cells: (0..num_tasks).map(|i| vec![None; i + 1]).collect(),
        }
    }

    /// Builds a complete matrix from rows; row `i` must have `i + 1` entries in `[0, 1]`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::invalid(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    i + 1
                )));
            }
            for (j, v) in row.into_iter().enumerate() {
                m.set(i, j, v)?;
            }
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.cells.len()
    }

    pub fn set(&mut self, i: usize, j: usize, accuracy: f64) -> Result<()> {
        if j > i || i >= self.cells.len() {
            return Err(Error::invalid(format!("cell ({i}, {j}) outside the lower triangle")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::invalid(format!("accuracy {accuracy} outside [0, 1]")));
        }
        self.cells[i][j] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    /// Row `i` if every cell `0..=i` is filled.
    pub fn row(&self, i: usize) -> Option<Vec<f64>> {
        self.cells.get(i)?.iter().copied().collect()
    }

    pub fn filled_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.filled_cells() == self.cells.len() * (self.cells.len() + 1) / 2
    }

    /// `(i, j, accuracy)` for every filled cell, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter_map(move |(j, c)| c.map(|v| (i, j, v))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mal(task: usize, index: usize, family: u32) -> Sample<f64> {
        Sample::malware(SampleId { task, index }, vec![0.0, 1.0], FamilyId(family))
    }

    fn good(task: usize, index: usize) -> Sample<f64> {
        Sample::goodware(SampleId { task, index }, vec![0.0, 1.0])
    }

    fn task(task_id: usize, train: Vec<Sample<f64>>) -> TaskData<f64> {
        TaskData {
            task_id,
            train,
            holdout: vec![],
            active_classes: BTreeSet::from([0, 1]),
        }
    }

    #[test]
    fn append_counts_single_family() {
        let pool = pool_append(DataPool::new(), &task(0, (0..3).map(|i| mal(0, i, 7)).collect())).unwrap();
        assert_eq!(pool.census().count(FamilyId(7)), 3);
        assert_eq!(pool.census().total_malware(), 3);
    }

    #[test]
    fn append_is_additive() {
        let mut pool = DataPool::new();
        pool.append(&task(0, (0..3).map(|i| mal(0, i, 7)).collect())).unwrap();
        pool.append(&task(1, vec![mal(1, 0, 7), mal(1, 1, 7), mal(1, 2, 9)])).unwrap();
        let c = pool.census();
        assert_eq!((c.count(FamilyId(7)), c.count(FamilyId(9)), c.total_malware()), (5, 1, 6));
        assert_eq!(c.num_families(), 2);
    }

    #[test]
    fn goodware_leaves_census_alone() {
        let mut pool = DataPool::new();
        pool.append(&task(0, vec![mal(0, 0, 7)])).unwrap();
        let before = pool.census().clone();
        pool.append(&task(1, vec![good(1, 0), good(1, 1)])).unwrap();
        assert_eq!(pool.census(), &before);
        assert_eq!(pool.len(), 3);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut pool = DataPool::new();
        pool.append(&task(0, vec![mal(0, 0, 1)])).unwrap();
        let mut wide = mal(1, 0, 1);
        wide.features.push(3.0);
        let err = pool.append(&task(1, vec![wide])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, found: 3 }));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn census_lookup_cases() {
        let c = FamilyCensus::from_counts([(FamilyId(7), 5)]);
        assert_eq!(census_lookup(&c, FamilyId(7)), 5);
        assert_eq!(census_lookup(&c, FamilyId(8)), 0);

        let mut pool = DataPool::new();
        pool.append(&task(0, (0..4).map(|i| mal(0, i, 2)).collect())).unwrap();
        pool.append(&task(1, (0..6).map(|i| mal(1, i, 2)).collect())).unwrap();
        assert_eq!(census_lookup(pool.census(), FamilyId(2)), 10);
    }

    #[test]
    fn matrix_rejects_upper_triangle_and_out_of_range() {
        let mut m = AccuracyMatrix::new(2);
        assert!(m.set(0, 1, 0.5).is_err());
        assert!(m.set(1, 0, 1.5).is_err());
        m.set(1, 0, 0.5).unwrap();
        assert_eq!(m.row(1), None);
        m.set(1, 1, 0.25).unwrap();
        assert_eq!(m.row(1), Some(vec![0.5, 0.25]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_task(task_id: usize) -> impl Strategy<Value = TaskData<f64>> {
            prop::collection::vec((any::<bool>(), 0u32..6), 0..40).prop_map(move |rows| {
                let train = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (is_mal, fam))| if is_mal { mal(task_id, i, fam) } else { good(task_id, i) })
                    .collect();
                task(task_id, train)
            })
        }

        proptest! {
            #[test]
            fn census_matches_recount(a in arb_task(0), b in arb_task(1), c in arb_task(2)) {
                let mut pool = DataPool::new();
                for t in [&a, &b, &c] {
                    pool.append(t).unwrap();
                }
                let recount = pool.samples().iter().filter(|s| s.label == Label::Malware).count();
                prop_assert_eq!(pool.census().total_malware(), recount);
                let summed: usize = pool.census().iter().map(|(_, n)| n).sum();
                prop_assert_eq!(summed, recount);
            }

            #[test]
            fn census_independent_of_task_order(a in arb_task(0), b in arb_task(1)) {
                let mut ab = DataPool::new();
                ab.append(&a).unwrap();
                ab.append(&b).unwrap();
                let mut ba = DataPool::new();
                ba.append(&b).unwrap();
                ba.append(&a).unwrap();
                prop_assert_eq!(ab.census(), ba.census());
            }
        }
    }
}
