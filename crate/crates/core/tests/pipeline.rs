//! A shrunken open-world run through the library: simulate, train both
//! stages, calibrate and attribute.

use fakepcd_core::config::PipelineConfig;
use fakepcd_core::experiment::{attribute, calibrate, clouds, evaluate_open, train_closed, train_open};
use fakepcd_core::simsource::{build_scenario, read_dataset, write_dataset};

fn tiny() -> PipelineConfig {
    let mut cfg = PipelineConfig::desk();
    for (k, v) in [
        ("scenario.clouds_per_cell", "30"),
        ("scenario.points", "32"),
        ("scenario.validation_size", "30"),
        ("model.encoder", "3,16,32"),
        ("model.classifier_hidden", "32"),
        ("model.projection_hidden", "32"),
        ("model.embedding_dim", "8"),
        ("closed.epochs", "15"),
        ("closed.batch_size", "16"),
        ("open.epochs", "15"),
        ("open.batch_size", "16"),
        ("attribution.anchors", "10"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

#[test]
fn two_stage_run_from_disk() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&build_scenario(&cfg.scenario).unwrap(), dir.path()).unwrap();
    let data = read_dataset(dir.path(), &cfg.scenario.known).unwrap();

    let closed = train_closed(&cfg, &data, None).unwrap();
    assert!(closed.metrics.last().unwrap().loss < closed.metrics[0].loss);
    let open = train_open(&cfg, &data, Some(&closed.model), None).unwrap();
    assert_eq!(open.model.embedding_dim(), Some(8));

    let cal = calibrate(&cfg, &open.model, &data).unwrap();
    assert!(cfg.attribution.grid.contains(&cal.policy.percentile));
    let results = attribute(&open.model, &cal, &clouds(&data.test)).unwrap();
    assert_eq!(results.len(), data.test.len());
    for r in &results {
        assert_eq!(r.verdict.is_unknown(), r.profile.distances.iter().all(|&d| d > cal.policy.threshold));
    }
    let tune = cal.tune.as_ref().unwrap();
    for w in tune.table.windows(2) {
        assert!(w[1].1 >= w[0].1 && w[1].2 >= w[0].2 && w[1].3 <= w[0].3);
    }
    let best = tune.table.iter().map(|r| r.2 + r.3).fold(f64::NEG_INFINITY, f64::max);
    let chosen = tune.table.iter().find(|r| r.0 == cal.policy.percentile).unwrap();
    assert_eq!(chosen.2 + chosen.3, best);

    let e = evaluate_open(&open.model, &cal, &data.test).unwrap();
    let total: usize = e.confusion.iter().flatten().sum();
    assert_eq!(total, data.test.len());
}
