//! End-to-end behaviour across modules: CLI, CSV input, scenario defaults
//! and the backward pass on random architectures.

use std::fs;
use std::path::Path;
use std::process::Command;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use replay_core::data::Scenario;
use replay_core::dataset::load_csv;
use replay_core::nn::{masked_cross_entropy, masked_softmax, Mlp, OutputMask};
use replay_core::rng::rng_from;
use replay_core::runner::{read_summary, ExperimentConfig};
use replay_core::synth::SynthConfig;

fn clreplay(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_clreplay"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn repo_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_configs_validate() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["quick.toml", "domain.toml", "class.toml", "task.toml"] {
        let (code, text) = clreplay(&["validate", &repo_config(name)], dir.path());
        assert_eq!(code, 0, "{name}: {text}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "[model]\nhiden = [8]\n").unwrap();
    fs::write(dir.path().join("nodata.toml"), "[data]\nsource = \"csv\"\npath = \"absent.csv\"\n").unwrap();

    assert_eq!(clreplay(&["validate", "typo.toml"], dir.path()).0, 1);
    assert_eq!(clreplay(&["validate", "missing.toml"], dir.path()).0, 1);
    assert_eq!(clreplay(&["frobnicate"], dir.path()).0, 1);
    let (code, text) = clreplay(&["run", "nodata.toml"], dir.path());
    assert_eq!(code, 2, "{text}");
    assert_eq!(clreplay(&["--help"], dir.path()).0, 0);
}

#[test]
fn synth_csv_then_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.toml"),
        "scenario = \"class-il\"\nnum_tasks = 3\nnum_families = 8\ninitial_families = 4\n\
         families_per_increment = 2\nfeature_dim = 12\nsamples_per_task = 200\n",
    )
    .unwrap();
    let (code, text) = clreplay(&["synth", "spec.toml", "-o", "stream.csv"], dir.path());
    assert_eq!(code, 0, "{text}");
    let raw = load_csv::<f64>(&dir.path().join("stream.csv")).unwrap();
    assert_eq!(raw.feature_dim(), 12);
    assert_eq!(raw.task_key.iter().max(), Some(&2));

    fs::write(
        dir.path().join("exp.toml"),
        r#"
output_dir = "results"

[data]
source = "csv"
path = "stream.csv"

[scenario]
kind = "class-il"
initial_classes = 4
classes_per_increment = 2

[model]
hidden = [16, 8]
epochs = 2

[replay]
iforest_trees = 10

[grid]
strategies = ["none", "madar"]
budgetings = ["uniform"]
budgets = [30]
"#,
    )
    .unwrap();
    let (code, text) = clreplay(&["run", "exp.toml", "-w", "1"], dir.path());
    assert_eq!(code, 0, "{text}");
    let summary = read_summary(&dir.path().join("results")).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| (0.0..=100.0).contains(&r.ap_bar)));

    let (code, text) = clreplay(&["report", "results"], dir.path());
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("madar"));
    assert!(dir.path().join("results/report.csv").exists());
}

#[test]
fn scenario_kind_selects_synth_defaults() {
    for (kind, expected) in [
        ("class-il", SynthConfig::class_il()),
        ("task-il", SynthConfig::task_il()),
        ("domain-il", SynthConfig::default()),
    ] {
        let cfg = ExperimentConfig::from_toml(&format!("[scenario]\nkind = \"{kind}\"\n")).unwrap();
        assert_eq!(cfg.synth_config().unwrap(), expected);
    }
    let cfg = ExperimentConfig::from_toml("[scenario]\nkind = \"class-il\"\n[data.synth]\nseed = 9\n").unwrap();
    let synth = cfg.synth_config().unwrap();
    assert_eq!((synth.scenario, synth.seed), (Scenario::ClassIl, 9));
    assert_eq!(synth.cluster_scale, SynthConfig::class_il().cluster_scale);

    let clash = "[scenario]\nkind = \"class-il\"\n[data.synth]\nscenario = \"domain-il\"\n";
    assert!(ExperimentConfig::from_toml(clash).is_err());
}

fn max_gradient_error(dims: &[usize], dropout: f64, batch: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed, &[7]);
    let mut model = Mlp::<f64>::new(dims, dropout, seed).unwrap();
    let classes = *dims.last().unwrap();
    let x = Array2::from_shape_simple_fn((batch, dims[0]), || rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let mask = OutputMask::all(classes);
    let loss_at = |m: &mut Mlp<f64>| {
        let (logits, _) = m.forward_train(x.view(), &mut rng_from(seed, &[8])).unwrap();
        masked_cross_entropy(logits.view(), &labels, &mask).unwrap()
    };

    let (logits, cache) = model.forward_train(x.view(), &mut rng_from(seed, &[8])).unwrap();
    let mut d_logits = Array2::zeros(logits.raw_dim());
    for (r, &y) in labels.iter().enumerate() {
        let p = masked_softmax(logits.row(r), &mask);
        for c in 0..classes {
            d_logits[[r, c]] = (p[c] - (c == y) as u8 as f64) / batch as f64;
        }
    }
    let analytic: Vec<Vec<f64>> = model.backward(&cache, d_logits).slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = model.param_slices()[p][i];
            model.param_slices_mut()[p][i] = orig + h;
            let up = loss_at(&mut model);
            model.param_slices_mut()[p][i] = orig - h;
            let down = loss_at(&mut model);
            model.param_slices_mut()[p][i] = orig;
            let n = (up - down) / (2.0 * h);
            worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-6));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_matches_finite_differences(
        dims in prop::collection::vec(2usize..7, 3..5),
        dropout in prop::sample::select(vec![0.0, 0.3]),
        batch in 3usize..7,
        seed in any::<u64>(),
    ) {
        let err = max_gradient_error(&dims, dropout, batch, seed);
        prop_assert!(err < 1e-4, "relative error {err}");
    }
}
