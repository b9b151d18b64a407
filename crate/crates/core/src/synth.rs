//! Synthetic task streams with family churn, intra-family sub-clusters,
//! unlabeled "Other" malware, concept drift and goodware imbalance.
//!
//! [`SynthConfig`] holds the knobs a config file sets; [`SynthConfig::plan`]
//! resolves them into a fully explicit [`StreamSpec`] (centres, weights,
//! activity schedule) and [`generate_stream`] samples from that spec.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FamilyId, Sample, SampleId, Scenario, TaskData, TaskStream};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag, EngineRng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCluster {
    pub center: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: FamilyId,
    pub sub_clusters: Vec<SubCluster>,
    pub active_tasks: BTreeSet<usize>,
    /// Relative size of the family (power-law profile).
    pub prevalence: f64,
    /// Centre shift applied once per task index.
    pub drift: Vec<f64>,
}

impl FamilySpec {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.sub_clusters.is_empty() {
            return Err(Error::invalid(format!("family {} has no sub-cluster", self.family)));
        }
        let total: f64 = self.sub_clusters.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.sub_clusters.iter().any(|c| c.weight < 0.0) {
            return Err(Error::invalid(format!("family {} sub-cluster weights sum to {total}", self.family)));
        }
        for c in &self.sub_clusters {
            if c.center.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: c.center.len(),
                });
            }
            if c.scale < 0.0 {
                return Err(Error::invalid(format!("family {} has a negative scale", self.family)));
            }
        }
        if !self.drift.is_empty() && self.drift.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                found: self.drift.len(),
            });
        }
        Ok(())
    }
}

/// Fully resolved stream description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub scenario: Scenario,
    pub num_tasks: usize,
    pub feature_dim: usize,
    pub families: Vec<FamilySpec>,
    /// Goodware sub-populations; each is a [`FamilySpec`] carrying the goodware id.
    pub goodware_groups: Vec<FamilySpec>,
    pub goodware_ratio: f64,
    pub churn_rate: f64,
    pub other_fraction: f64,
    pub samples_per_task: usize,
    pub min_family_size: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.num_tasks < 1 {
            return bad("num_tasks must be at least 1".into());
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        if self.samples_per_task < 10 {
            return bad("samples_per_task must be at least 10".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction));
        }
        for (name, v) in [
            ("goodware_ratio", self.goodware_ratio),
            ("churn_rate", self.churn_rate),
            ("other_fraction", self.other_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.scenario != Scenario::DomainIl && (self.goodware_ratio > 0.0 || self.other_fraction > 0.0) {
            return bad("class-il and task-il streams are malware-only with labeled families".into());
        }
        let mut ids = BTreeSet::new();
        for f in &self.families {
            if f.family.is_goodware() || (f.family == FamilyId::OTHER) || !ids.insert(f.family) {
                return bad(format!("family id {} reserved or repeated", f.family));
            }
            f.validate(self.feature_dim)?;
        }
        for g in &self.goodware_groups {
            g.validate(self.feature_dim)?;
        }
        Ok(())
    }

    fn active_at(groups: &[FamilySpec], task: usize) -> Vec<&FamilySpec> {
        groups.iter().filter(|f| f.active_tasks.contains(&task)).collect()
    }

    pub fn active_families(&self, task: usize) -> BTreeSet<FamilyId> {
        Self::active_at(&self.families, task).iter().map(|f| f.family).collect()
    }
}

/// Knobs for building a [`StreamSpec`]; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub num_tasks: usize,
    pub feature_dim: usize,
    pub num_families: usize,
    pub min_sub_clusters: usize,
    pub max_sub_clusters: usize,
    /// Per-dimension standard deviation of family base centres.
    pub center_spread: f64,
    /// Per-dimension offset of sub-cluster centres from their family centre.
    pub sub_cluster_spread: f64,
    /// Isotropic noise of samples around a sub-cluster centre.
    pub cluster_scale: f64,
    /// Power-law exponent of family prevalence.
    pub size_exponent: f64,
    /// Per-task centre drift, as a multiple of `cluster_scale`.
    pub drift: f64,
    pub goodware_ratio: f64,
    pub goodware_groups: usize,
    /// Give every malware family a benign look-alike group this far from
    /// its centre, active while the family is out of circulation after its
    /// first appearance. 0 disables look-alikes.
    pub lookalike_distance: f64,
    pub churn_rate: f64,
    /// Domain-IL families active per task; defaults to half the inventory.
    pub active_families: Option<usize>,
    pub other_fraction: f64,
    pub samples_per_task: usize,
    pub min_family_size: usize,
    pub holdout_fraction: f64,
    /// Class-IL: families introduced by task 0.
    pub initial_families: usize,
    /// Class-IL: families introduced by each later task.
    pub families_per_increment: usize,
    /// Task-IL: families per task.
    pub families_per_task: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenario: Scenario::DomainIl,
            num_tasks: 6,
            feature_dim: 64,
            num_families: 20,
            min_sub_clusters: 2,
            max_sub_clusters: 4,
            center_spread: 1.0,
            sub_cluster_spread: 0.5,
            cluster_scale: 0.5,
            size_exponent: 0.5,
            drift: 0.1,
            goodware_ratio: 0.5,
            goodware_groups: 8,
            lookalike_distance: 3.0,
            churn_rate: 0.5,
            active_families: None,
            other_fraction: 0.05,
            samples_per_task: 1000,
            min_family_size: 10,
            holdout_fraction: 0.2,
            initial_families: 10,
            families_per_increment: 1,
            families_per_task: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Desk-scale Class-IL layout: 20 families over 11 tasks (10 + 1 x 10).
    pub fn class_il() -> Self {
        SynthConfig {
            scenario: Scenario::ClassIl,
            num_tasks: 11,
            goodware_ratio: 0.0,
            other_fraction: 0.0,
            goodware_groups: 0,
            lookalike_distance: 0.0,
            size_exponent: 1.5,
            cluster_scale: 1.0,
            center_spread: 0.5,
            ..SynthConfig::default()
        }
    }

    /// Desk-scale Task-IL layout: 20 families in 4 tasks of 5.
    pub fn task_il() -> Self {
        SynthConfig {
            scenario: Scenario::TaskIl,
            num_tasks: 4,
            goodware_ratio: 0.0,
            other_fraction: 0.0,
            goodware_groups: 0,
            lookalike_distance: 0.0,
            size_exponent: 1.0,
            ..SynthConfig::default()
        }
    }

    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::DomainIl => Self::default(),
            Scenario::ClassIl => Self::class_il(),
            Scenario::TaskIl => Self::task_il(),
        }
    }

    /// Overlays `overrides` on the defaults for their `scenario` key, or for
    /// `fallback` when the key is absent.
    pub fn with_overrides(overrides: &toml::Table, fallback: Scenario) -> Result<Self> {
        let bad = |e: toml::de::Error| Error::config("synth", e.message().to_string());
        let scenario = match overrides.get("scenario") {
            Some(v) => v.clone().try_into().map_err(bad)?,
            None => fallback,
        };
        let mut table = match toml::Value::try_from(Self::for_scenario(scenario)) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::config("synth", "cannot serialize defaults")),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table).try_into().map_err(bad)
    }

    /// Resolves centres, weights and the activity schedule.
    pub fn plan(&self) -> Result<StreamSpec> {
        if self.min_sub_clusters == 0 || self.min_sub_clusters > self.max_sub_clusters {
            return Err(Error::invalid("need 1 <= min_sub_clusters <= max_sub_clusters"));
        }
        if self.num_families == 0 {
            return Err(Error::invalid("num_families must be positive"));
        }
        if self.lookalike_distance.is_nan() || self.lookalike_distance < 0.0 {
            return Err(Error::invalid("lookalike_distance must be non-negative"));
        }
        let mut rng = rng_from(self.seed, &[tag::STREAM_LAYOUT]);
        let ids: Vec<FamilyId> = (1..=self.num_families as u32).map(FamilyId).collect();

        // power-law prevalence over a seeded rank order
        let mut ranks: Vec<usize> = (0..self.num_families).collect();
        ranks.shuffle(&mut rng);
        let prevalence: Vec<f64> = ranks
            .iter()
            .map(|&r| ((r + 1) as f64).powf(-self.size_exponent))
            .collect();

        let schedule = match self.scenario {
            Scenario::DomainIl => {
                let k = self.active_families.unwrap_or(self.num_families.div_ceil(2));
                churn_schedule(&prevalence, k, self.churn_rate, self.num_tasks, &mut rng)?
            }
            Scenario::ClassIl => {
                let needed = self.initial_families + (self.num_tasks - 1) * self.families_per_increment;
                if self.initial_families == 0 || needed > self.num_families {
                    return Err(Error::invalid(format!(
                        "class-il layout needs {needed} families, inventory has {}",
                        self.num_families
                    )));
                }
                (0..self.num_families)
                    .map(|f| {
                        let task = if f < self.initial_families {
                            0
                        } else {
                            1 + (f - self.initial_families) / self.families_per_increment.max(1)
                        };
                        if task < self.num_tasks {
                            BTreeSet::from([task])
                        } else {
                            BTreeSet::new()
                        }
                    })
                    .collect()
            }
            Scenario::TaskIl => {
                let k = self.families_per_task;
                if k == 0 || k * self.num_tasks > self.num_families {
                    return Err(Error::invalid(format!(
                        "task-il layout needs {} families, inventory has {}",
                        k * self.num_tasks,
                        self.num_families
                    )));
                }
                (0..self.num_families)
                    .map(|f| if f / k < self.num_tasks { BTreeSet::from([f / k]) } else { BTreeSet::new() })
                    .collect::<Vec<_>>()
            }
        };

        let families: Vec<FamilySpec> = ids
            .iter()
            .zip(schedule)
            .zip(&prevalence)
            .map(|((&family, active_tasks), &p)| {
                let mut f = self.random_family(family, &mut rng);
                f.active_tasks = active_tasks;
                f.prevalence = p;
                f
            })
            .collect();

        let mut goodware_groups = if self.scenario == Scenario::DomainIl && self.goodware_groups > 0 {
            let flat = vec![1.0; self.goodware_groups];
            let k = self.goodware_groups.div_ceil(2);
            let schedule = churn_schedule(&flat, k, self.churn_rate, self.num_tasks, &mut rng)?;
            schedule
                .into_iter()
                .map(|active_tasks| {
                    let mut g = self.random_family(FamilyId::GOODWARE, &mut rng);
                    g.active_tasks = active_tasks;
                    g
                })
                .collect()
        } else {
            Vec::new()
        };
        if self.scenario == Scenario::DomainIl && self.lookalike_distance > 0.0 {
            let distance = self.lookalike_distance;
            for f in &families {
                let first = f.active_tasks.first().copied().unwrap_or(usize::MAX);
                let mut g = self.random_family(FamilyId::GOODWARE, &mut rng);
                g.active_tasks = (0..self.num_tasks)
                    .filter(|t| *t > first && !f.active_tasks.contains(t))
                    .collect();
                let direction: Vec<f64> = (0..self.feature_dim).map(|_| normal(&mut rng)).collect();
                let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let (from, to) = (mixture_mean(&g), mixture_mean(f));
                for c in &mut g.sub_clusters {
                    for (d, x) in c.center.iter_mut().enumerate() {
                        *x += to[d] + distance * direction[d] / norm - from[d];
                    }
                }
                if !g.active_tasks.is_empty() {
                    goodware_groups.push(g);
                }
            }
        }

        let spec = StreamSpec {
            scenario: self.scenario,
            num_tasks: self.num_tasks,
            feature_dim: self.feature_dim,
            families,
            goodware_groups,
            goodware_ratio: self.goodware_ratio,
            churn_rate: self.churn_rate,
            other_fraction: self.other_fraction,
            samples_per_task: self.samples_per_task,
            min_family_size: self.min_family_size,
            holdout_fraction: self.holdout_fraction,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn random_family(&self, family: FamilyId, rng: &mut EngineRng) -> FamilySpec {
        let d = self.feature_dim;
        let base: Vec<f64> = (0..d)
            .map(|_| self.center_spread * normal(rng))
            .collect::<Vec<f64>>();
        let n_sub = rand::Rng::random_range(rng, self.min_sub_clusters..=self.max_sub_clusters);
        let raw: Vec<f64> = (0..n_sub).map(|_| rand::Rng::random_range(rng, 0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let mut sub_clusters: Vec<SubCluster> = raw
            .iter()
            .map(|w| SubCluster {
                center: base
                    .iter()
                    .map(|c| c + self.sub_cluster_spread * normal(rng))
                    .collect::<Vec<f64>>(),
                scale: self.cluster_scale,
                weight: w / total,
            })
            .collect();
        // make the weights sum to one exactly
        let head: f64 = sub_clusters[1..].iter().map(|c| c.weight).sum();
        sub_clusters[0].weight = 1.0 - head;
        let direction: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let drift = direction
            .iter()
            .map(|v| v / norm * self.drift * self.cluster_scale)
            .collect();
        FamilySpec {
            family,
            sub_clusters,
            active_tasks: BTreeSet::new(),
            prevalence: 1.0,
            drift,
        }
    }
}

fn mixture_mean(f: &FamilySpec) -> Vec<f64> {
    let mut mean = vec![0.0; f.sub_clusters[0].center.len()];
    for c in &f.sub_clusters {
        for (m, x) in mean.iter_mut().zip(&c.center) {
            *m += c.weight * x;
        }
    }
    mean
}

/// Activity schedule for groups with the given prevalence: `active` groups
/// per task; each later task retires `round(churn * active)` of the
/// lowest-prevalence active groups and activates as many inactive ones,
/// preferring groups never seen before. Order among equals follows a
/// seeded shuffle.
pub fn churn_schedule(
    prevalence: &[f64],
    active: usize,
    churn_rate: f64,
    num_tasks: usize,
    rng: &mut EngineRng,
) -> Result<Vec<BTreeSet<usize>>> {
    let n = prevalence.len();
    if active == 0 || active > n {
        return Err(Error::InfeasibleStream {
            task: 0,
            reason: format!("{active} active groups requested from an inventory of {n}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let pos: Vec<usize> = {
        let mut p = vec![0; n];
        for (i, &g) in order.iter().enumerate() {
            p[g] = i;
        }
        p
    };
    let mut schedule = vec![BTreeSet::new(); n];
    let mut current: Vec<usize> = order[..active].to_vec();
    let mut seen: BTreeSet<usize> = current.iter().copied().collect();
    let mut retired: Vec<usize> = Vec::new();
    let replace = (churn_rate * active as f64).round() as usize;
    for task in 0..num_tasks {
        if task > 0 && replace > 0 {
            let mut fresh: Vec<usize> = order.iter().copied().filter(|g| !seen.contains(g)).collect();
            fresh.extend(retired.iter().copied());
            if fresh.len() < replace {
                return Err(Error::InfeasibleStream {
                    task,
                    reason: format!("churn needs {replace} inactive groups, only {} available", fresh.len()),
                });
            }
            current.sort_by(|&a, &b| prevalence[a].total_cmp(&prevalence[b]).then(pos[a].cmp(&pos[b])));
            let leaving: Vec<usize> = current.drain(..replace).collect();
            let joining: Vec<usize> = fresh[..replace].to_vec();
            retired.retain(|g| !joining.contains(g));
            retired.extend(leaving);
            seen.extend(joining.iter().copied());
            current.extend(joining);
        }
        for &g in &current {
            schedule[g].insert(task);
        }
    }
    Ok(schedule)
}

/// Draws `n` samples from a family's sub-cluster mixture at task `task`.
/// Sample indices start at `first_index`.
pub fn generate_family_samples<T: Scalar>(
    fspec: &FamilySpec,
    n: usize,
    task: usize,
    first_index: usize,
    rng: &mut EngineRng,
) -> Vec<Sample<T>> {
    if n == 0 {
        return Vec::new();
    }
    let weights = WeightedIndex::new(fspec.sub_clusters.iter().map(|c| c.weight)).expect("validated weights");
    (0..n)
        .map(|i| {
            let cluster = &fspec.sub_clusters[weights.sample(rng)];
            let features = cluster
                .center
                .iter()
                .enumerate()
                .map(|(d, &c)| {
                    let shift = fspec.drift.get(d).copied().unwrap_or(0.0) * task as f64;
                    let noise = normal(rng);
                    T::from_f64_lossy(c + shift + cluster.scale * noise)
                })
                .collect();
            let id = SampleId {
                task,
                index: first_index + i,
            };
            if fspec.family.is_goodware() {
                Sample::goodware(id, features)
            } else {
                Sample::malware(id, features, fspec.family)
            }
        })
        .collect()
}

fn normal(rng: &mut EngineRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Largest-remainder apportionment of `total` by `weights`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..weights.len()).collect();
    rest.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let left = total - out.iter().sum::<usize>();
    for &i in rest.iter().cycle().take(left) {
        out[i] += 1;
    }
    out
}

/// Samples a whole stream from a resolved spec. Deterministic in `spec.seed`.
pub fn generate_stream<T: Scalar>(spec: &StreamSpec) -> Result<TaskStream<T>> {
    spec.validate()?;
    let total_prevalence: f64 = spec.families.iter().map(|f| f.prevalence).sum();
    let global_total = spec.samples_per_task * spec.num_tasks;
    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for task in 0..spec.num_tasks {
        let mut rng = rng_from(spec.seed, &[tag::STREAM_TASK, task as u64]);
        let families = StreamSpec::active_at(&spec.families, task);
        if families.is_empty() {
            return Err(Error::InfeasibleStream {
                task,
                reason: "no active malware family".into(),
            });
        }
        // (group, count) pairs; each group is split train/holdout on its own
        let mut plan: Vec<(&FamilySpec, usize)> = Vec::new();
        match spec.scenario {
            Scenario::DomainIl => {
                let goodware = (spec.goodware_ratio * spec.samples_per_task as f64).round() as usize;
                let malware = spec.samples_per_task - goodware;
                let groups = StreamSpec::active_at(&spec.goodware_groups, task);
                if goodware > 0 && groups.is_empty() {
                    return Err(Error::InfeasibleStream {
                        task,
                        reason: "goodware requested but no goodware group is active".into(),
                    });
                }
                let g_counts = apportion(&vec![1.0; groups.len()], goodware);
                plan.extend(groups.into_iter().zip(g_counts));
                let weights: Vec<f64> = families.iter().map(|f| f.prevalence).collect();
                plan.extend(families.iter().copied().zip(apportion(&weights, malware)));
            }
            Scenario::ClassIl | Scenario::TaskIl => {
                for f in families {
                    let share = (f.prevalence / total_prevalence * global_total as f64).round() as usize;
                    plan.push((f, share.max(spec.min_family_size)));
                }
            }
        }

        let mut train = Vec::new();
        let mut holdout = Vec::new();
        let mut next_index = 0;
        for (g, (fspec, count)) in plan.into_iter().enumerate() {
            let mut samples = generate_family_samples::<T>(fspec, count, task, next_index, &mut rng);
            next_index += count;
            let mut split_rng = rng_from(spec.seed, &[tag::STREAM_SPLIT, task as u64, g as u64]);
            let n_hold = holdout_count(count, spec.holdout_fraction);
            let picked: BTreeSet<usize> = index::sample(&mut split_rng, count, n_hold).into_iter().collect();
            for (i, s) in samples.drain(..).enumerate() {
                if picked.contains(&i) {
                    holdout.push(s);
                } else {
                    train.push(s);
                }
            }
        }

        if spec.other_fraction > 0.0 {
            relabel_other(&mut train, &mut holdout, spec.other_fraction, &mut rng);
        }

        let active_classes = match spec.scenario {
            Scenario::DomainIl => BTreeSet::from([0, 1]),
            _ => train.iter().chain(&holdout).map(|s| s.family.0).collect(),
        };
        tasks.push(TaskData {
            task_id: task,
            train,
            holdout,
            active_classes,
        });
    }
    let stream = TaskStream {
        scenario: spec.scenario,
        feature_dim: spec.feature_dim,
        tasks,
    };
    stream.validate()?;
    Ok(stream)
}

/// Hold-out size for a group of `n`: `round(fraction * n)`, leaving at
/// least one training sample, and at least one hold-out sample when `n >= 2`.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Moves `round(fraction * malware)` malware samples of a task into the
/// unlabeled "Other" family, keeping their features.
fn relabel_other<T: Scalar>(train: &mut [Sample<T>], holdout: &mut [Sample<T>], fraction: f64, rng: &mut EngineRng) {
    let mut malware: Vec<&mut Sample<T>> = train.iter_mut().chain(holdout.iter_mut()).filter(|s| s.is_malware()).collect();
    let k = (fraction * malware.len() as f64).round() as usize;
    let chosen = index::sample(rng, malware.len(), k.min(malware.len()));
    for i in chosen {
        malware[i].family = FamilyId::OTHER;
    }
}

/// Per-task family membership, for inspection and tests.
pub fn family_layout<T: Scalar>(stream: &TaskStream<T>) -> Vec<BTreeMap<FamilyId, usize>> {
    stream
        .tasks
        .iter()
        .map(|t| {
            let mut m = BTreeMap::new();
            for s in t.train.iter().chain(&t.holdout) {
                *m.entry(s.family).or_insert(0) += 1;
            }
            m
        })
        .collect()
}
