//! Experiment configuration, single runs with their alone-run baselines, and
//! parameter sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::cpu::CoreConfig;
use crate::device::{DevTiming, DeviceError};
use crate::metrics::{config_hash, SimReport};
use crate::migration::MigrationConfig;
use crate::policy::{PolicyConfig, PolicyKind};
use crate::sim::{simulate, SimConfig, SimError};
use crate::trace::{load_trace, SynthError, SynthSpec, Trace, TraceError};
use crate::ubm::UbmConfig;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("timing `{name}`: {source}")]
    Timing { name: String, source: DeviceError },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Values are DRAM sizes in MB.
    DramSize,
    /// Values are `[t_RCD multiplier, t_WR multiplier]` pairs relative to DRAM.
    NvmLatency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Scalar(f64),
    Pair([f64; 2]),
}

impl SweepValue {
    fn key(&self) -> Vec<f64> {
        match self {
            SweepValue::Scalar(v) => vec![*v],
            SweepValue::Pair(p) => p.to_vec(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SweepValue::Scalar(v) => format!("{v}"),
            SweepValue::Pair([a, b]) => format!("{a}x{b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Policies simulated at every point; empty means all five.
    #[serde(default)]
    pub policies: Vec<PolicyKind>,
}

impl SweepSpec {
    pub fn dram_sizes(mb: &[u64]) -> Self {
        SweepSpec {
            axis: SweepAxis::DramSize,
            values: mb.iter().map(|&v| SweepValue::Scalar(v as f64)).collect(),
            policies: Vec::new(),
        }
    }

    pub fn nvm_latencies(pairs: &[[f64; 2]]) -> Self {
        SweepSpec {
            axis: SweepAxis::NvmLatency,
            values: pairs.iter().map(|&p| SweepValue::Pair(p)).collect(),
            policies: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.values.is_empty() {
            return bad("sweep values must not be empty".into());
        }
        for v in &self.values {
            match (self.axis, v) {
                (SweepAxis::DramSize, SweepValue::Scalar(x)) if *x > 0.0 && x.fract() == 0.0 => {}
                (SweepAxis::NvmLatency, SweepValue::Pair([a, b])) if *a > 0.0 && *b > 0.0 => {}
                _ => return bad(format!("sweep value {} does not fit axis {:?}", v.label(), self.axis)),
            }
        }
        for w in self.values.windows(2) {
            let (a, b) = (w[0].key(), w[1].key());
            if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
                return bad("sweep values must be strictly increasing".into());
            }
        }
        Ok(())
    }

    pub fn policies(&self) -> Vec<PolicyKind> {
        if self.policies.is_empty() {
            PolicyKind::ALL.to_vec()
        } else {
            self.policies.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Trace files, resolved relative to the config file.
    pub traces: Vec<PathBuf>,
    /// Synthetic traces generated on the fly, after the files.
    pub synthetic: Vec<SynthSpec>,
    pub policy: PolicyKind,
    /// Policy that normalized metrics are reported against.
    pub baseline_policy: PolicyKind,
    pub cores: usize,
    pub dram_size_mb: u64,
    pub nvm_size_mb: u64,
    /// Preset name or path of a `key = value` timing file.
    pub dram_timing: String,
    pub nvm_timing: String,
    /// NVM t_RCD as a multiple of the DRAM t_RCD.
    pub rcd_multiplier: Option<f64>,
    /// NVM t_WR as a multiple of the DRAM t_WR.
    pub wr_multiplier: Option<f64>,
    pub quantum: u64,
    pub initial_threshold: f64,
    pub warmup_instructions: u64,
    pub measured_instructions: u64,
    pub max_cycles: Option<u64>,
    /// Added to the seed of every synthetic trace.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub top_k: usize,
    pub record_quanta: bool,
    pub shared_address_space: bool,
    pub migrations_enabled: bool,
    pub associativity: usize,
    pub controller: ControllerConfig,
    pub core: CoreConfig,
    pub ubm: UbmConfig,
    pub migration: MigrationConfig,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        ExperimentConfig {
            traces: Vec::new(),
            synthetic: Vec::new(),
            policy: PolicyKind::Ubm,
            baseline_policy: PolicyKind::All,
            cores: 8,
            dram_size_mb: sim.dram_capacity >> 20,
            nvm_size_mb: sim.nvm_capacity >> 20,
            dram_timing: "dram-baseline".into(),
            nvm_timing: "nvm-baseline".into(),
            rcd_multiplier: None,
            wr_multiplier: None,
            quantum: sim.policy.quantum,
            initial_threshold: sim.policy.initial_threshold,
            warmup_instructions: sim.warmup_instructions,
            measured_instructions: sim.measured_instructions,
            max_cycles: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            top_k: 0,
            record_quanta: true,
            shared_address_space: false,
            migrations_enabled: true,
            associativity: sim.associativity,
            controller: sim.controller,
            core: sim.core,
            ubm: sim.ubm,
            migration: sim.migration,
            sweep: None,
        }
    }
}

fn resolve_timing(name: &str, base: &Path) -> Result<DevTiming, ExperimentError> {
    DevTiming::preset(name).or_else(|_| {
        DevTiming::load(&base.join(name)).map_err(|source| ExperimentError::Timing {
            name: name.to_string(),
            source,
        })
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn app_count(&self) -> usize {
        self.traces.len() + self.synthetic.len()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        let n = self.app_count();
        if n == 0 {
            return bad("no traces configured".into());
        }
        if n > self.cores {
            return bad(format!("{n} applications for {} cores", self.cores));
        }
        if self.measured_instructions == 0 {
            return bad("measured_instructions must be > 0".into());
        }
        for m in [self.rcd_multiplier, self.wr_multiplier].into_iter().flatten() {
            if !(m > 0.0) {
                return bad(format!("latency multiplier {m} must be > 0"));
            }
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// Simulator configuration with every preset and override applied.
    pub fn sim_config(&self, base: &Path) -> Result<SimConfig, ExperimentError> {
        let dram = resolve_timing(&self.dram_timing, base)?;
        let mut nvm = resolve_timing(&self.nvm_timing, base)?;
        if let Some(m) = self.rcd_multiplier {
            nvm.t_rcd = dram.t_rcd * m;
        }
        if let Some(m) = self.wr_multiplier {
            nvm.t_wr = dram.t_wr * m;
        }
        let cfg = SimConfig {
            dram,
            nvm,
            dram_capacity: self.dram_size_mb << 20,
            nvm_capacity: self.nvm_size_mb << 20,
            associativity: self.associativity,
            controller: self.controller.clone(),
            core: self.core.clone(),
            policy: PolicyConfig {
                kind: self.policy,
                quantum: self.quantum,
                initial_threshold: self.initial_threshold,
            },
            ubm: self.ubm.clone(),
            migration: self.migration.clone(),
            warmup_instructions: self.warmup_instructions,
            measured_instructions: self.measured_instructions,
            max_cycles: self.max_cycles.unwrap_or(u64::MAX),
            migrations_enabled: self.migrations_enabled,
            shared_address_space: self.shared_address_space,
            top_k: self.top_k,
            record_quanta: self.record_quanta,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_traces(&self, base: &Path) -> Result<Vec<Trace>, ExperimentError> {
        let mut out = Vec::new();
        for p in &self.traces {
            let path = base.join(p);
            out.push(load_trace(&path).map_err(|source| ExperimentError::Trace { path, source })?);
        }
        for s in &self.synthetic {
            let spec = SynthSpec {
                seed: s.seed.wrapping_add(self.seed),
                ..s.clone()
            };
            out.push(spec.generate()?);
        }
        Ok(out)
    }

    /// The configuration of one sweep point.
    pub fn at_point(&self, axis: SweepAxis, value: &SweepValue) -> ExperimentConfig {
        let mut c = self.clone();
        c.sweep = None;
        match (axis, value) {
            (SweepAxis::DramSize, SweepValue::Scalar(mb)) => c.dram_size_mb = *mb as u64,
            (SweepAxis::NvmLatency, SweepValue::Pair([rcd, wr])) => {
                c.rcd_multiplier = Some(*rcd);
                c.wr_multiplier = Some(*wr);
            }
            _ => unreachable!("validated sweep"),
        }
        c
    }
}

type AloneKey = (String, String);

fn alone_key(cfg: &SimConfig, trace: &Trace) -> AloneKey {
    (trace.content_hash(), config_hash(cfg))
}

/// IPC of each trace run in isolation, keyed by trace and configuration.
#[derive(Default)]
pub struct AloneCache {
    ipc: BTreeMap<AloneKey, f64>,
}

impl AloneCache {
    pub fn len(&self) -> usize {
        self.ipc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipc.is_empty()
    }

    pub fn get(&self, cfg: &SimConfig, trace: &Trace) -> Option<f64> {
        self.ipc.get(&alone_key(cfg, trace)).copied()
    }

    /// Simulates every missing (config, trace) pair, in parallel.
    pub fn fill(&mut self, jobs: &[(SimConfig, &Trace)]) -> Result<(), ExperimentError> {
        let mut todo: BTreeMap<AloneKey, (SimConfig, &Trace)> = BTreeMap::new();
        for (cfg, t) in jobs {
            let k = alone_key(cfg, t);
            if !self.ipc.contains_key(&k) {
                todo.entry(k).or_insert_with(|| (cfg.clone(), *t));
            }
        }
        let results: Vec<(AloneKey, Result<f64, SimError>)> = todo
            .into_par_iter()
            .map(|(k, (cfg, t))| {
                let r = simulate::<f64>(&cfg, std::slice::from_ref(t)).map(|r| r.apps[0].ipc);
                (k, r)
            })
            .collect();
        for (k, r) in results {
            self.ipc.insert(k, r?);
        }
        Ok(())
    }
}

/// One simulated configuration of a sweep or run.
#[derive(Clone, Debug)]
pub struct Point {
    pub label: String,
    pub policy: PolicyKind,
    pub experiment: ExperimentConfig,
    pub sim: SimConfig,
    /// System the alone runs use, always under the baseline policy so every
    /// policy shares the same alone IPCs.
    pub alone: SimConfig,
}

impl Point {
    pub fn alone_config(&self) -> SimConfig {
        self.alone.clone()
    }
}

/// Runs every point with its alone runs and returns one report per point,
/// in input order. Reports at the same label are normalized to the
/// baseline policy's report at that label when it is among the points.
pub fn run_points(
    points: &[Point],
    traces: &[Trace],
    cache: &mut AloneCache,
) -> Vec<Result<SimReport, ExperimentError>> {
    let jobs: Vec<(SimConfig, &Trace)> = points
        .iter()
        .flat_map(|p| traces.iter().map(move |t| (p.alone_config(), t)))
        .collect();
    let alone_err = cache.fill(&jobs).err().map(|e| e.to_string());
    let cache = &*cache;
    let mut reports: Vec<Result<SimReport, ExperimentError>> = points
        .par_iter()
        .map(|p| {
            if let Some(e) = &alone_err {
                return Err(ExperimentError::Invalid(format!("alone run failed: {e}")));
            }
            let result = simulate::<f64>(&p.sim, traces)?;
            let solo = p.alone_config();
            let alone: Vec<Option<f64>> = traces.iter().map(|t| cache.get(&solo, t)).collect();
            Ok(SimReport::build(&p.experiment, p.policy, p.experiment.baseline_policy, &result, &alone))
        })
        .collect();
    let baselines: BTreeMap<String, SimReport> = points
        .iter()
        .zip(&reports)
        .filter(|(p, _)| p.policy == p.experiment.baseline_policy)
        .filter_map(|(p, r)| r.as_ref().ok().map(|r| (p.label.clone(), r.clone())))
        .collect();
    for (p, r) in points.iter().zip(reports.iter_mut()) {
        if let (Ok(r), Some(b)) = (r, baselines.get(&p.label)) {
            r.normalize_to(b);
        }
    }
    reports
}

fn point(label: String, exp: ExperimentConfig, policy: PolicyKind, base: &Path) -> Result<Point, ExperimentError> {
    let experiment = ExperimentConfig { policy, ..exp };
    let sim = experiment.sim_config(base)?;
    let mut alone = sim.clone();
    alone.policy.kind = experiment.baseline_policy;
    Ok(Point {
        label,
        policy,
        experiment,
        sim,
        alone,
    })
}

/// A single run, plus the baseline policy when it differs and `normalize`
/// is set. The first report is the requested policy's.
pub fn run(cfg: &ExperimentConfig, base: &Path, normalize: bool) -> Result<Vec<SimReport>, ExperimentError> {
    cfg.validate()?;
    let traces = cfg.load_traces(base)?;
    let mut points = vec![point(String::new(), cfg.clone(), cfg.policy, base)?];
    if normalize && cfg.baseline_policy != cfg.policy {
        points.push(point(String::new(), cfg.clone(), cfg.baseline_policy, base)?);
    }
    let mut cache = AloneCache::default();
    run_points(&points, &traces, &mut cache).into_iter().collect()
}

#[derive(Debug)]
pub struct SweepEntry {
    pub label: String,
    pub policy: PolicyKind,
    pub report: Result<SimReport, ExperimentError>,
}

/// Every sweep value crossed with every policy, points in sweep order and
/// policies in the order given. A failing point does not stop the others.
/// Alone runs use the unswept configuration, so weighted speedups are
/// comparable across sweep values.
pub fn sweep(cfg: &ExperimentConfig, spec: &SweepSpec, base: &Path) -> Result<Vec<SweepEntry>, ExperimentError> {
    cfg.validate()?;
    spec.validate()?;
    let traces = cfg.load_traces(base)?;
    let mut policies = spec.policies();
    let emit = policies.clone();
    if !policies.contains(&cfg.baseline_policy) {
        policies.push(cfg.baseline_policy);
    }
    let solo = point(String::new(), cfg.clone(), cfg.baseline_policy, base)?.alone;
    let mut points = Vec::new();
    let mut early = Vec::new();
    for v in &spec.values {
        let exp = cfg.at_point(spec.axis, v);
        for &p in &policies {
            match point(v.label(), exp.clone(), p, base) {
                Ok(pt) => points.push(Point { alone: solo.clone(), ..pt }),
                Err(e) => early.push(SweepEntry {
                    label: v.label(),
                    policy: p,
                    report: Err(e),
                }),
            }
        }
    }
    let mut cache = AloneCache::default();
    let reports = run_points(&points, &traces, &mut cache);
    let mut out: Vec<SweepEntry> = points
        .iter()
        .zip(reports)
        .filter(|(p, _)| emit.contains(&p.policy))
        .map(|(p, r)| SweepEntry {
            label: p.label.clone(),
            policy: p.policy,
            report: r,
        })
        .collect();
    out.extend(early.into_iter().filter(|e| emit.contains(&e.policy)));
    let order = |e: &SweepEntry| {
        (
            spec.values.iter().position(|v| v.label() == e.label),
            emit.iter().position(|&p| p == e.policy),
        )
    };
    out.sort_by_key(order);
    Ok(out)
}

/// Writes `report.json`, `report.csv` and, when present, `quanta.csv` and
/// `utility.csv` into `dir`.
pub fn write_report(dir: &Path, report: &SimReport) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let put = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))
    };
    put("report.json", report.to_json())?;
    put("report.csv", report.to_csv())?;
    if !report.quanta.is_empty() {
        put("quanta.csv", report.quanta_csv())?;
    }
    if !report.utility.is_empty() {
        put("utility.csv", report.utility_csv())?;
    }
    Ok(())
}

/// One row per sweep point and policy.
pub fn sweep_csv(entries: &[SweepEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "point",
        "policy",
        "status",
        "weighted_speedup",
        "harmonic_speedup",
        "unfairness",
        "total_stall_cycles",
        "energy_j",
        "perf_per_watt",
        "normalized_weighted_speedup",
        "pages_promoted",
        "config_hash",
    ])
    .expect("in-memory csv");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in entries {
        let row = match &e.report {
            Ok(r) => vec![
                e.label.clone(),
                e.policy.name().into(),
                "ok".into(),
                opt(r.totals.weighted_speedup),
                opt(r.totals.harmonic_speedup),
                opt(r.totals.unfairness),
                r.totals.total_stall_cycles.to_string(),
                r.totals.energy_j.to_string(),
                opt(r.totals.perf_per_watt),
                opt(r.totals.normalized_weighted_speedup),
                r.migration.promoted.to_string(),
                r.config_hash.clone(),
            ],
            Err(err) => {
                let mut v = vec![e.label.clone(), e.policy.name().into(), format!("error: {err}")];
                v.resize(12, String::new());
                v
            }
        };
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_toml() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_err());
        c.synthetic.push(SynthSpec::uniform("a", 1000, 5.0, 10, 0.5, 1, 0));
        assert!(c.validate().is_ok());
        c.measured_instructions = 0;
        assert!(c.validate().is_err());
        c.measured_instructions = 1;
        c.cores = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn sweep_values_checked() {
        assert!(SweepSpec::dram_sizes(&[64, 128, 256]).validate().is_ok());
        assert!(SweepSpec::dram_sizes(&[128, 64]).validate().is_err());
        assert!(SweepSpec::dram_sizes(&[]).validate().is_err());
        assert!(SweepSpec::nvm_latencies(&[[3.0, 7.0], [4.5, 12.0], [6.0, 17.0]]).validate().is_ok());
        let mixed = SweepSpec {
            axis: SweepAxis::DramSize,
            values: vec![SweepValue::Pair([1.0, 2.0])],
            policies: vec![],
        };
        assert!(mixed.validate().is_err());
    }

    #[test]
    fn sweep_spec_from_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            policy = "rbla"
            dram_size_mb = 64
            [sweep]
            axis = "nvm-latency"
            values = [[3.0, 7.0], [6.0, 17.0]]
            policies = ["rbla", "ubm"]
            "#,
        )
        .unwrap();
        assert_eq!(c.policy, PolicyKind::Rbla);
        let s = c.sweep.unwrap();
        assert_eq!(s.axis, SweepAxis::NvmLatency);
        assert_eq!(s.values[1], SweepValue::Pair([6.0, 17.0]));
        assert_eq!(s.policies(), vec![PolicyKind::Rbla, PolicyKind::Ubm]);
    }

    #[test]
    fn multipliers_scale_from_dram() {
        let c = ExperimentConfig {
            rcd_multiplier: Some(3.0),
            wr_multiplier: Some(7.0),
            ..ExperimentConfig::default()
        };
        let s = c.sim_config(Path::new(".")).unwrap();
        assert_eq!(s.nvm.t_rcd, s.dram.t_rcd * 3.0);
        assert_eq!(s.nvm.t_wr, s.dram.t_wr * 7.0);
        let d = ExperimentConfig::default().sim_config(Path::new(".")).unwrap();
        assert_eq!(d.nvm, DevTiming::nvm_baseline());
    }
}
