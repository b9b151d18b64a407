//! The continual-learning loop: per task, select replay from the pool,
//! train on current + replay under the scenario's output mask, then score
//! every hold-out set seen so far.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use ndarray::Array2;

use crate::data::{AccuracyMatrix, DataPool, FamilyId, Sample, SampleId, Scenario, TaskData, TaskStream};
use crate::error::{Error, Result};
use crate::nn::{evaluate, train_task, AdamConfig, AdamState, MaskPlan, Mlp, OutputMask, TrainConfig, DEFAULT_HIDDEN};
use crate::replay::{
    build_training_set, grs_select, madar_select_class, madar_select_domain, ActivationSpace, FeatureSpace, ReplayConfig,
    ReplaySet, Strategy,
};
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;

pub const DEFAULT_INITIAL_CLASSES: usize = 50;
pub const DEFAULT_CLASSES_PER_INCREMENT: usize = 5;
pub const DEFAULT_CLASSES_PER_TASK: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Class-IL: classes active at task 0.
    pub initial_classes: usize,
    /// Class-IL: classes added by each later task.
    pub classes_per_increment: usize,
    /// Task-IL: classes owned by each task.
    pub classes_per_task: usize,
    pub replay: ReplayConfig,
    pub train: TrainConfig,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Fresh model for every task under the joint strategy.
    pub joint_reinit: bool,
    /// Model-init and minibatch seed.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::DomainIl,
            initial_classes: DEFAULT_INITIAL_CLASSES,
            classes_per_increment: DEFAULT_CLASSES_PER_INCREMENT,
            classes_per_task: DEFAULT_CLASSES_PER_TASK,
            replay: ReplayConfig::default(),
            train: TrainConfig::default(),
            adam: AdamConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            joint_reinit: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            Scenario::ClassIl if self.initial_classes == 0 => {
                return Err(Error::config("initial_classes", "must be positive"))
            }
            Scenario::TaskIl if self.classes_per_task == 0 => {
                return Err(Error::config("classes_per_task", "must be positive"))
            }
            _ => {}
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "need at least one hidden layer, all widths positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        self.replay.validate()
    }

    /// Output width needed for a stream of `num_tasks` tasks.
    pub fn output_width(&self, num_tasks: usize) -> usize {
        match self.scenario {
            Scenario::DomainIl => 2,
            Scenario::ClassIl => self.initial_classes + num_tasks.saturating_sub(1) * self.classes_per_increment,
            Scenario::TaskIl => num_tasks * self.classes_per_task,
        }
    }
}

/// Active output units of `task` for a stream of `num_tasks` tasks.
pub fn active_mask(scenario: Scenario, task: usize, num_tasks: usize, cfg: &ScenarioConfig) -> OutputMask {
    let cfg = ScenarioConfig {
        scenario,
        ..cfg.clone()
    };
    let width = cfg.output_width(num_tasks.max(task + 1));
    match scenario {
        Scenario::DomainIl => OutputMask::all(2),
        Scenario::ClassIl => OutputMask::from_active(width, 0..cfg.initial_classes + task * cfg.classes_per_increment),
        Scenario::TaskIl => {
            let k = cfg.classes_per_task;
            OutputMask::from_active(width, task * k..(task + 1) * k)
        }
    }
}

/// Dense class indices for family labels, in order of first appearance
/// (task by task, ascending family id within a task).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassIndex {
    map: BTreeMap<FamilyId, usize>,
}

impl ClassIndex {
    pub fn from_stream<T: Scalar>(stream: &TaskStream<T>) -> Self {
        let mut map = BTreeMap::new();
        for task in &stream.tasks {
            let fams: BTreeSet<FamilyId> = task.train.iter().chain(&task.holdout).map(|s| s.family).collect();
            for f in fams {
                let next = map.len();
                map.entry(f).or_insert(next);
            }
        }
        ClassIndex { map }
    }

    pub fn get(&self, family: FamilyId) -> Option<usize> {
        self.map.get(&family).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Class label of a sample under the scenario.
fn target<T>(s: &Sample<T>, scenario: Scenario, classes: &ClassIndex) -> usize {
    match scenario {
        Scenario::DomainIl => s.label.bit() as usize,
        _ => classes.get(s.family).expect("class index covers the stream"),
    }
}

/// Routes to the configured replay constructor.
pub fn strategy_dispatch<T: Scalar>(
    cfg: &ReplayConfig,
    scenario: Scenario,
    pool: &DataPool<T>,
    model: &Mlp<T>,
) -> Result<ReplaySet> {
    if pool.is_empty() {
        return Ok(ReplaySet::empty());
    }
    match (cfg.strategy, scenario) {
        (Strategy::None, _) => Ok(ReplaySet::empty()),
        (Strategy::Joint, _) => Ok(ReplaySet::whole_pool(pool)),
        (Strategy::Grs, _) => Ok(grs_select(pool, cfg.budget, cfg.seed)),
        (Strategy::Madar, Scenario::DomainIl) => madar_select_domain(pool, cfg, &FeatureSpace),
        (Strategy::Madar, _) => madar_select_class(pool, cfg, &FeatureSpace),
        (Strategy::MadarTheta, Scenario::DomainIl) => madar_select_domain(pool, cfg, &ActivationSpace::penultimate(model)),
        (Strategy::MadarTheta, _) => madar_select_class(pool, cfg, &ActivationSpace::penultimate(model)),
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome<T> {
    pub matrix: AccuracyMatrix,
    pub model: Mlp<T>,
    /// Wall seconds spent on each task (selection, training, evaluation).
    pub task_seconds: Vec<f64>,
    pub replay_sizes: Vec<usize>,
    /// Sample ids trained on at each task, in training-set order.
    pub training_sets: Vec<Vec<SampleId>>,
    /// Mean loss of the final epoch at each task.
    pub final_losses: Vec<f64>,
}

fn stack<T: Scalar>(samples: &[&Sample<T>], dim: usize) -> Array2<T> {
    let mut x = Array2::zeros((samples.len(), dim));
    for (r, s) in samples.iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&s.features[..]));
    }
    x
}

fn check_labels<T: Scalar>(
    task: &TaskData<T>,
    mask: &OutputMask,
    scenario: Scenario,
    classes: &ClassIndex,
) -> Result<()> {
    for s in task.train.iter().chain(&task.holdout) {
        if scenario != Scenario::DomainIl && !s.is_malware() {
            return Err(Error::invalid(format!("{scenario} streams must be malware-only")));
        }
        let y = target(s, scenario, classes);
        if !mask.is_active(y) {
            return Err(Error::InactiveLabel { label: y });
        }
    }
    Ok(())
}

pub fn run_scenario<T: Scalar>(stream: &TaskStream<T>, cfg: &ScenarioConfig) -> Result<ScenarioOutcome<T>> {
    cfg.validate()?;
    stream.validate()?;
    if stream.scenario != cfg.scenario {
        return Err(Error::invalid(format!(
            "stream is {} but the config asks for {}",
            stream.scenario, cfg.scenario
        )));
    }
    let n = stream.num_tasks();
    if n == 0 {
        return Err(Error::invalid("stream has no tasks"));
    }
    let scenario = cfg.scenario;
    let classes = ClassIndex::from_stream(stream);
    let width = cfg.output_width(n);
    if scenario != Scenario::DomainIl && classes.len() > width {
        return Err(Error::invalid(format!(
            "stream has {} classes, the output layer only {width}",
            classes.len()
        )));
    }
    let masks: Vec<OutputMask> = (0..n).map(|t| active_mask(scenario, t, n, cfg)).collect();
    for (t, task) in stream.tasks.iter().enumerate() {
        check_labels(task, &masks[t], scenario, &classes).map_err(|e| e.at_task(t))?;
    }

    let mut dims = vec![stream.feature_dim];
    dims.extend(&cfg.hidden);
    dims.push(width);
    let init_seed = |task: usize| {
        if task > 0 && cfg.replay.strategy == Strategy::Joint && cfg.joint_reinit {
            derive_seed(cfg.seed, &[tag::MODEL_INIT, task as u64])
        } else {
            derive_seed(cfg.seed, &[tag::MODEL_INIT])
        }
    };
    let mut model = Mlp::<T>::new(&dims, cfg.dropout, init_seed(0))?;
    let mut pool = DataPool::new();
    let mut matrix = AccuracyMatrix::new(n);
    let mut outcome_times = Vec::with_capacity(n);
    let mut replay_sizes = Vec::with_capacity(n);
    let mut training_sets = Vec::with_capacity(n);
    let mut final_losses = Vec::with_capacity(n);

    for (i, task) in stream.tasks.iter().enumerate() {
        let started = Instant::now();
        let mut step = || -> Result<()> {
            if i > 0 && cfg.replay.strategy == Strategy::Joint && cfg.joint_reinit {
                model = Mlp::new(&dims, cfg.dropout, init_seed(i))?;
            }
            let replay_cfg = ReplayConfig {
                seed: derive_seed(cfg.replay.seed, &[tag::REPLAY, i as u64]),
                ..cfg.replay.clone()
            };
            let replay = strategy_dispatch(&replay_cfg, scenario, &pool, &model)?;
            let samples = build_training_set(task, &replay, &pool)?;
            let x = stack(&samples, stream.feature_dim);
            let y: Vec<usize> = samples.iter().map(|s| target(s, scenario, &classes)).collect();
            let plan = match scenario {
                Scenario::TaskIl => MaskPlan::PerRow(samples.iter().map(|s| &masks[s.origin_task()]).collect()),
                _ => MaskPlan::Shared(&masks[i]),
            };
            let mut optimizer = AdamState::new(&model, cfg.adam.clone());
            let trace = train_task(
                &mut model,
                &mut optimizer,
                x.view(),
                &y,
                &plan,
                &cfg.train,
                derive_seed(cfg.seed, &[tag::TRAIN, i as u64]),
            )?;
            final_losses.push(trace.last().copied().unwrap_or(f64::NAN));
            replay_sizes.push(replay.len());
            training_sets.push(samples.iter().map(|s| s.id).collect());

            for (j, seen) in stream.tasks[..=i].iter().enumerate() {
                let hold: Vec<&Sample<T>> = seen.holdout.iter().collect();
                let xh = stack(&hold, stream.feature_dim);
                let yh: Vec<usize> = hold.iter().map(|s| target(s, scenario, &classes)).collect();
                let mask = match scenario {
                    Scenario::TaskIl => &masks[j],
                    _ => &masks[i],
                };
                matrix.set(i, j, evaluate(&model, xh.view(), &yh, mask)?)?;
            }
            pool.append(task)
        };
        step().map_err(|e| e.at_task(i))?;
        outcome_times.push(started.elapsed().as_secs_f64());
        log::debug!("task {i}: row {:?}", matrix.row(i));
    }

    Ok(ScenarioOutcome {
        matrix,
        model,
        task_seconds: outcome_times,
        replay_sizes,
        training_sets,
        final_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleId;
    use crate::rng::rng_from;
    use rand::Rng;

    fn small_cfg(scenario: Scenario, strategy: Strategy) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            replay: ReplayConfig {
                strategy,
                budget: usize::MAX,
                ..ReplayConfig::default()
            },
            train: TrainConfig {
                epochs: 15,
                batch_size: 32,
            },
            hidden: vec![32, 16],
            dropout: 0.0,
            ..ScenarioConfig::default()
        }
    }

    /// Two-blob binary task; `flip` swaps which blob is malware.
    fn binary_task(task: usize, n: usize, flip: bool, seed: u64) -> TaskData<f64> {
        let mut rng = rng_from(seed, &[task as u64]);
        let make = |index: usize, rng: &mut crate::rng::EngineRng| {
            let malware = index % 2 == 0;
            let side = if malware != flip { 2.0 } else { -2.0 };
            let x = vec![side + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let id = SampleId { task, index };
            if malware {
                Sample::malware(id, x, FamilyId(1))
            } else {
                Sample::goodware(id, x)
            }
        };
        let all: Vec<Sample<f64>> = (0..n).map(|i| make(i, &mut rng)).collect();
        let (train, holdout) = all.split_at(n * 3 / 4);
        TaskData {
            task_id: task,
            train: train.to_vec(),
            holdout: holdout.to_vec(),
            active_classes: BTreeSet::from([0, 1]),
        }
    }

    fn domain_stream(tasks: Vec<TaskData<f64>>) -> TaskStream<f64> {
        TaskStream {
            scenario: Scenario::DomainIl,
            feature_dim: 2,
            tasks,
        }
    }

    #[test]
    fn masks_follow_scenario() {
        let cfg = ScenarioConfig::default();
        let m0 = active_mask(Scenario::ClassIl, 0, 11, &cfg);
        assert_eq!(m0.active_classes().collect::<Vec<_>>(), (0..50).collect::<Vec<_>>());
        assert_eq!(active_mask(Scenario::ClassIl, 2, 11, &cfg).active_count(), 60);
        assert!(m0.is_subset_of(&active_mask(Scenario::ClassIl, 1, 11, &cfg)));
        let t2 = active_mask(Scenario::TaskIl, 2, 4, &cfg);
        assert_eq!(t2.active_classes().collect::<Vec<_>>(), vec![10, 11, 12, 13, 14]);
        assert_eq!(active_mask(Scenario::DomainIl, 3, 6, &cfg).active_count(), 2);
    }

    #[test]
    fn class_index_by_first_appearance() {
        let mk = |task, index, f| Sample::malware(SampleId { task, index }, vec![0.0], FamilyId(f));
        let stream = TaskStream {
            scenario: Scenario::ClassIl,
            feature_dim: 1,
            tasks: vec![
                TaskData {
                    task_id: 0,
                    train: vec![mk(0, 0, 9), mk(0, 1, 4)],
                    holdout: vec![mk(0, 2, 9)],
                    active_classes: BTreeSet::from([4, 9]),
                },
                TaskData {
                    task_id: 1,
                    train: vec![mk(1, 0, 2), mk(1, 1, 4)],
                    holdout: vec![mk(1, 2, 2)],
                    active_classes: BTreeSet::from([2, 4]),
                },
            ],
        };
        let idx = ClassIndex::from_stream(&stream);
        assert_eq!([idx.get(FamilyId(4)), idx.get(FamilyId(9)), idx.get(FamilyId(2))], [Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn single_task_strategies_coincide() {
        let stream = domain_stream(vec![binary_task(0, 80, false, 1)]);
        let runs: Vec<AccuracyMatrix> = Strategy::ALL
            .iter()
            .map(|&s| run_scenario(&stream, &small_cfg(Scenario::DomainIl, s)).unwrap().matrix)
            .collect();
        assert_eq!(runs[0].num_tasks(), 1);
        assert!(runs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn matrix_shape_and_pool_excludes_current_task() {
        let stream = domain_stream((0..3).map(|t| binary_task(t, 40, false, 2)).collect());
        let out = run_scenario(&stream, &small_cfg(Scenario::DomainIl, Strategy::Grs)).unwrap();
        assert_eq!(out.matrix.filled_cells(), 6);
        assert!(out.matrix.is_complete());
        for (i, set) in out.training_sets.iter().enumerate() {
            let current = set.iter().filter(|id| id.task == i).count();
            assert_eq!(current, stream.tasks[i].train.len());
            assert!(set.iter().all(|id| id.task <= i));
        }
        assert_eq!(out.replay_sizes, vec![0, 30, 60]);
    }

    #[test]
    fn joint_on_duplicated_task_keeps_accuracy() {
        let t0 = binary_task(0, 120, false, 3);
        let mut t1 = t0.clone();
        t1.task_id = 1;
        for s in t1.train.iter_mut().chain(t1.holdout.iter_mut()) {
            s.id.task = 1;
        }
        let out = run_scenario(&domain_stream(vec![t0, t1]), &small_cfg(Scenario::DomainIl, Strategy::Joint)).unwrap();
        let (p00, p10) = (out.matrix.get(0, 0).unwrap(), out.matrix.get(1, 0).unwrap());
        assert!((p00 - p10).abs() <= 0.02, "{p00} vs {p10}");
    }

    #[test]
    fn none_forgets_under_label_flip() {
        let stream = domain_stream(vec![binary_task(0, 120, false, 4), binary_task(1, 120, true, 4)]);
        let out = run_scenario(&stream, &small_cfg(Scenario::DomainIl, Strategy::None)).unwrap();
        assert!(out.matrix.get(1, 0).unwrap() < out.matrix.get(0, 0).unwrap());
    }

    #[test]
    fn deterministic_given_seeds() {
        let stream = domain_stream((0..2).map(|t| binary_task(t, 40, t == 1, 5)).collect());
        let mut cfg = small_cfg(Scenario::DomainIl, Strategy::Madar);
        cfg.replay.budget = 20;
        let a = run_scenario(&stream, &cfg).unwrap();
        let b = run_scenario(&stream, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.training_sets, b.training_sets);
    }

    #[test]
    fn dispatch_routes() {
        let stream = domain_stream(vec![binary_task(0, 40, false, 6)]);
        let mut pool = DataPool::new();
        pool.append(&stream.tasks[0]).unwrap();
        let model = Mlp::<f64>::new(&[2, 4, 2], 0.0, 0).unwrap();
        let mut cfg = ReplayConfig {
            strategy: Strategy::None,
            budget: 10,
            ..ReplayConfig::default()
        };
        assert!(strategy_dispatch(&cfg, Scenario::DomainIl, &pool, &model).unwrap().is_empty());
        cfg.strategy = Strategy::Joint;
        assert_eq!(strategy_dispatch(&cfg, Scenario::DomainIl, &pool, &model).unwrap().len(), 30);
        cfg.strategy = Strategy::Grs;
        assert_eq!(strategy_dispatch(&cfg, Scenario::DomainIl, &pool, &model).unwrap().len(), 10);
        cfg.strategy = Strategy::Madar;
        cfg.budget = usize::MAX;
        assert_eq!(
            strategy_dispatch(&cfg, Scenario::DomainIl, &pool, &model).unwrap(),
            ReplaySet::whole_pool(&pool)
        );
    }

    #[test]
    fn rejects_mismatched_scenario_and_inactive_labels() {
        let stream = domain_stream(vec![binary_task(0, 20, false, 7)]);
        assert!(run_scenario(&stream, &small_cfg(Scenario::ClassIl, Strategy::None)).is_err());

        let mk = |index, f| Sample::malware(SampleId { task: 0, index }, vec![0.0, 1.0], FamilyId(f));
        let class_stream = TaskStream {
            scenario: Scenario::ClassIl,
            feature_dim: 2,
            tasks: vec![TaskData {
                task_id: 0,
                train: vec![mk(0, 1), mk(1, 2), mk(2, 3)],
                holdout: vec![mk(3, 1)],
                active_classes: BTreeSet::from([1, 2, 3]),
            }],
        };
        let mut cfg = small_cfg(Scenario::ClassIl, Strategy::None);
        cfg.initial_classes = 2;
        let err = run_scenario(&class_stream, &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err:?}");
        cfg.initial_classes = 3;
        assert!(run_scenario(&class_stream, &cfg).is_ok());
    }
}
