use conda_core::metrics::ConfusionMatrix;
use conda_core::pipeline::*;
use conda_core::pointcloud::project_to_rv;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::tiny();
    cfg.precision = Precision::F64;
    cfg
}

#[test]
fn single_value_sweep_equals_selftrain() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let pre = cmd_pretrain(&cfg, &d.path().join("pre")).unwrap();
    let direct = cmd_selftrain(&cfg, &pre.checkpoint, &d.path().join("direct")).unwrap();
    let sigma = cfg.pseudo.sigma.to_string();
    let rows = cmd_sweep(&cfg, &pre.checkpoint, SweepAxis::Sigma, &[sigma], &d.path().join("sweep")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].scores, direct.target_val);
    assert_eq!(
        std::fs::read(d.path().join("direct/w_r2.ckpt")).unwrap(),
        std::fs::read(d.path().join("sweep/run00/w_r2.ckpt")).unwrap()
    );
}

#[test]
fn repeated_sweep_reproduces_the_table() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let pre = cmd_pretrain(&cfg, &d.path().join("pre")).unwrap();
    let values = vec!["0.25".to_string(), "0.25:0.75".to_string()];
    cmd_sweep(&cfg, &pre.checkpoint, SweepAxis::K, &values, &d.path().join("a")).unwrap();
    cmd_sweep(&cfg, &pre.checkpoint, SweepAxis::K, &values, &d.path().join("b")).unwrap();
    let a = std::fs::read_to_string(d.path().join("a/sweep.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.path().join("b/sweep.csv")).unwrap());
    assert_eq!(a.lines().count(), 3);
    assert!(cmd_sweep(&cfg, &pre.checkpoint, SweepAxis::K, &[], &d.path().join("c")).is_err());
}

#[test]
fn sweep_values_are_validated() {
    let cfg = tiny();
    let c = apply_sweep_value(&cfg, SweepAxis::K, "0.1:0.9").unwrap();
    assert_eq!(c.pseudo.k, [0.1, 0.9]);
    assert!(apply_sweep_value(&cfg, SweepAxis::Varpi, "0").is_err());
    assert!(apply_sweep_value(&cfg, SweepAxis::Sigma, "x").is_err());
    assert!(apply_sweep_value(&cfg, SweepAxis::Template, "no-such-template").is_err());
}

#[test]
fn report_lists_retained_round_one_samples() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let pre = cmd_pretrain(&cfg, &d.path().join("pre")).unwrap();
    let s = cmd_selftrain(&cfg, &pre.checkpoint, &d.path().join("st")).unwrap();
    let n = cfg.domains.scenes;
    assert_eq!(s.rounds[0].retained.len(), ((cfg.pseudo.varpi * n as f64) - 1e-9).ceil() as usize);
    assert_eq!(s.rounds[1].retained.len(), n);
    let sidecar: PseudoSidecar =
        serde_json::from_slice(&std::fs::read(d.path().join("st/round1/pseudo.json")).unwrap()).unwrap();
    assert_eq!(sidecar.retained, s.rounds[0].retained);
    assert_eq!(sidecar.varpi, Some(cfg.pseudo.varpi));
    let cached = std::fs::read_dir(d.path().join("st/round1/pseudo")).unwrap().count();
    assert_eq!(cached, sidecar.retained.len());
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let cfg = tiny();
    let d = generate_domains(&cfg).unwrap();
    let mut cm = ConfusionMatrix::new(cfg.model.num_classes);
    for i in 0..d.target_val.len() {
        let (_, labels) = project_to_rv(d.target_val.evaluation_cloud(i), cfg.projection().unwrap()).unwrap();
        let l = labels.unwrap();
        cm.accumulate(l.as_slice(), l.as_slice()).unwrap();
    }
    let s = cm.scores().unwrap();
    assert_eq!(s.miou, 1.0);
}

#[test]
fn config_round_trips_through_json() {
    for name in PRESETS {
        let cfg = RunConfig::preset(name).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
