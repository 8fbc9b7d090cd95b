use unida::evaluate::predict;
use unida::scenario::{generate_scenario, write_pair_csv, Dataset, ScenarioSpec, ShiftSpec, SplitSpec};
use unida::train::{ablation, train_on, train_run, DataSource, RunConfig, ABLATIONS};

fn small(split: SplitSpec) -> RunConfig {
    let spec = ScenarioSpec {
        split,
        dim: 6,
        source_per_class: vec![20],
        target_per_class: vec![20],
        seed: 4,
        ..ScenarioSpec::default()
    };
    RunConfig {
        data: DataSource::Synthetic(spec),
        hidden: vec![12, 8],
        epochs: 3,
        batch: 12,
        seed: 4,
        ..RunConfig::default()
    }
}

fn argmax_accuracy(cfg: &RunConfig, d: &Dataset) -> f64 {
    let a = train_on(cfg, d, d).unwrap();
    let preds = predict(&a.params, d.features.view(), &d.eval_labels(), 0.5).unwrap();
    preds.iter().filter(|p| p.closed_argmax == p.true_label).count() as f64 / preds.len() as f64
}

#[test]
fn file_data_trains_like_the_generated_scenario() {
    let cfg = small(SplitSpec::new(2, 1, 1).unwrap());
    let DataSource::Synthetic(spec) = &cfg.data else { unreachable!() };
    let (s, t) = generate_scenario(spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.csv");
    let mut buf = Vec::new();
    write_pair_csv(&s, &t, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();

    let files = RunConfig {
        data: DataSource::Files {
            paths: vec![path],
            split: spec.split,
        },
        ..cfg.clone()
    };
    let a = train_run(&cfg).unwrap();
    let b = train_run(&files).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.report, b.report);
}

#[test]
fn unshifted_domains_score_alike() {
    let split = SplitSpec::new(3, 0, 0).unwrap();
    let spec = ScenarioSpec {
        split,
        dim: 6,
        source_per_class: vec![30],
        target_per_class: vec![30],
        center_scale: 3.0,
        noise: 0.3,
        shift: ShiftSpec::none(),
        seed: 1,
    };
    let cfg = RunConfig {
        data: DataSource::Synthetic(spec.clone()),
        objective: unida::objectives::ObjectiveConfig::baseline(),
        hidden: vec![12, 8],
        epochs: 5,
        batch: 12,
        ..RunConfig::default()
    };
    let (s, t) = generate_scenario(&spec).unwrap();
    let on_source = argmax_accuracy(&cfg, &s);
    let a = train_on(&cfg, &s, &t).unwrap();
    let preds = predict(&a.params, t.features.view(), &t.eval_labels(), 0.5).unwrap();
    let on_target = preds.iter().filter(|p| p.closed_argmax == p.true_label).count() as f64 / preds.len() as f64;
    assert_eq!(on_source, 1.0);
    assert_eq!(on_target, 1.0);
}

#[test]
fn every_setting_trains_and_reports() {
    for (split, has_h) in [((3, 0, 0), false), ((2, 1, 0), false), ((2, 0, 1), true), ((2, 1, 1), true)] {
        let cfg = small(SplitSpec::new(split.0, split.1, split.2).unwrap());
        let r = train_run(&cfg).unwrap().report;
        assert_eq!(r.h_score.is_some(), has_h, "{split:?}");
        assert!((0.0..=1.0).contains(&r.closed_accuracy));
    }
}

#[test]
fn every_ablation_runs() {
    let base = small(SplitSpec::new(2, 1, 1).unwrap());
    for name in ABLATIONS {
        let a = train_run(&ablation(&base, name).unwrap()).unwrap();
        assert!(a.trace.iter().all(|t| t.loss.is_finite()), "{name}");
    }
    assert!(ablation(&base, "no_such_row").is_err());
}
