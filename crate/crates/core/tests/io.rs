use std::fs;
use std::io::BufReader;
use std::path::Path;

use hymem::experiment::{self, ExperimentConfig};
use hymem::metrics::SimReport;
use hymem::policy::PolicyKind;
use hymem::trace::{load_trace, read_trace, write_binary, write_text, SynthSpec, TraceFormat};

fn example() -> (ExperimentConfig, &'static Path) {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    let mut cfg = ExperimentConfig::load(&dir.join("example.toml")).unwrap();
    cfg.warmup_instructions = 50_000;
    cfg.measured_instructions = 200_000;
    cfg.quantum = 100_000;
    (cfg, dir)
}

#[test]
fn trace_round_trips_in_both_formats() {
    let trace = SynthSpec::randomized("rt", 200_000, 7).generate().unwrap();
    let mut bin = Vec::new();
    write_binary(&mut bin, &trace).unwrap();
    assert_eq!(read_trace(BufReader::new(&bin[..]), TraceFormat::Binary).unwrap(), trace);
    let mut text = Vec::new();
    write_text(&mut text, &trace).unwrap();
    assert_eq!(read_trace(BufReader::new(&text[..]), TraceFormat::Text).unwrap(), trace);

    let dir = tempfile::tempdir().unwrap();
    for name in ["rt.hmt", "rt.hmtx"] {
        let p = dir.path().join(name);
        let mut f = fs::File::create(&p).unwrap();
        match TraceFormat::from_path(&p) {
            TraceFormat::Binary => write_binary(&mut f, &trace).unwrap(),
            TraceFormat::Text => write_text(&mut f, &trace).unwrap(),
        }
        drop(f);
        let loaded = load_trace(&p).unwrap();
        assert_eq!(loaded.content_hash(), trace.content_hash());
        assert_eq!(loaded, trace);
    }
}

#[test]
fn example_config_round_trips() {
    let (cfg, _) = example();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn reports_serialize_losslessly_and_hash_config() {
    let (cfg, dir) = example();
    let reports = experiment::run(&cfg, dir, true).unwrap();
    assert_eq!(reports.len(), 2);
    let report = &reports[0];
    assert_eq!(report.policy, PolicyKind::Ubm);
    assert_eq!(SimReport::from_json(&report.to_json()).unwrap(), *report);

    let again = experiment::run(&cfg, dir, true).unwrap();
    assert_eq!(again[0].config_hash, report.config_hash);
    assert_eq!(again[0], *report);

    let mut other = cfg.clone();
    other.quantum += 1;
    let changed = experiment::run(&other, dir, false).unwrap();
    assert_ne!(changed[0].config_hash, report.config_hash);

    let out = tempfile::tempdir().unwrap();
    experiment::write_report(out.path(), report).unwrap();
    let json = fs::read_to_string(out.path().join("report.json")).unwrap();
    assert_eq!(SimReport::from_json(&json).unwrap(), *report);
    let csv = fs::read_to_string(out.path().join("report.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(out.path().join("quanta.csv").exists());
    assert!(out.path().join("utility.csv").exists());
}
