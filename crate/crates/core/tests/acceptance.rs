//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Pass criterion numbers to run a subset:
//! `cargo test -p hymem --test acceptance -- 3 5`.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use hymem::analysis::predictor_correlation;
use hymem::device::DevTiming;
use hymem::experiment::{self, ExperimentConfig, SweepSpec};
use hymem::metrics::{unfairness, weighted_speedup, IpcPair, SimReport};
use hymem::policy::PolicyKind;
use hymem::sim::{SimConfig, System};
use hymem::trace::{PageClass, SynthSpec, Trace, TraceEvent};
use hymem::ubm::fixed::{quotient, MlpCounter, MLP_ONE};
use hymem::ubm::formulas::{
    avg_mlp_ratio, estimate_speedup, sensitivity, speedup_gain_exact, speedup_gain_linear, stall_time_reduction,
    utility, LatencyDelta, StallInputs,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ULP: f64 = 1.0 / MLP_ONE as f64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Collects failed sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    total: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.total += 1;
        if !ok {
            self.failed.push(what.into());
        }
    }

    fn close(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        self.check((got - want).abs() <= tol, format!("{what}: got {got}, want {want}"));
    }

    fn finish(self) -> Outcome {
        if self.failed.is_empty() {
            outcome(true, format!("{} checks", self.total))
        } else {
            outcome(false, format!("{}/{} failed: {}", self.failed.len(), self.total, self.failed.join("; ")))
        }
    }
}

fn delta() -> LatencyDelta<f64> {
    LatencyDelta::from_devices(&DevTiming::dram_baseline(), &DevTiming::nvm_baseline(), 5)
}

fn formula_suite() -> Outcome {
    let mut c = Checks::default();

    // Counter updates.
    let mut m = MlpCounter::default();
    m.sample(2, 2);
    c.close("acc after (2,2)", m.acc(), 1.0, ULP);
    c.check(m.weight() == 2, "weight after (2,2)");
    m.sample(1, 4);
    c.close("acc after (1,4)", m.acc(), 1.25, ULP);
    c.check(m.weight() == 3, "weight after (1,4)");
    let before = m;
    m.sample(0, 4);
    c.check(m == before, "m = 0 leaves the counter unchanged");

    // Weighted-average ratio.
    c.close("avg of (2,2),(1,4)", avg_mlp_ratio(m.acc(), m.weight() as f64), 1.25 / 3.0, ULP);
    let mut single = MlpCounter::default();
    single.sample(1, 1);
    c.close("single m = N", avg_mlp_ratio(single.acc(), single.weight() as f64), 1.0, ULP);
    let mut quarter = MlpCounter::default();
    for _ in 0..5 {
        quarter.sample(1, 4);
    }
    c.close("N = 4m", avg_mlp_ratio(quarter.acc(), quarter.weight() as f64), 0.25, ULP);
    c.check(avg_mlp_ratio(0.0, 0.0) == 0.0, "no samples gives ratio 0");

    // Per-sample ratio 1/N.
    for n in 1..=32u32 {
        c.close(&format!("1/{n}"), quotient(1, n) as f64 / MLP_ONE as f64, 1.0 / n as f64, ULP);
    }

    // Latency and stall-time reduction.
    let d = delta();
    c.close("read delta", d.read, 140.0, 0.0);
    let inputs = |misses, ratio| StallInputs {
        read_misses: misses,
        write_misses: 0,
        read_ratio: ratio,
        write_ratio: 0.0,
    };
    c.close("10 read misses", stall_time_reduction(&inputs(10, 1.0), &d, 1.0), 1400.0, ULP);
    c.close("zero misses", stall_time_reduction(&inputs(0, 1.0), &d, 1.0), 0.0, 0.0);
    c.close("half ratio", stall_time_reduction(&inputs(10, 0.5), &d, 1.0), 700.0, ULP);
    let both = StallInputs {
        read_misses: 2,
        write_misses: 3,
        read_ratio: 1.0,
        write_ratio: 0.5,
    };
    c.close("read and write terms", stall_time_reduction(&both, &d, 1.0), 2.0 * d.read + 1.5 * d.write, ULP);

    // Sensitivity.
    let s: Vec<f64> = [6.0, 3.0, 3.0].iter().map(|t| sensitivity(t / 10.0, 10.0)).collect();
    c.close("sensitivity A", s[0], 0.06, 1e-12);
    c.close("sensitivity B", s[1], 0.03, 1e-12);
    c.close("sensitivity C", s[2], 0.03, 1e-12);
    c.close("isolated sensitivity", sensitivity(1.0, 1e6), 1e-6, 1e-18);

    // Utility.
    c.close("utility", utility(1000.0, 5e-7), 5e-4, 1e-15);
    c.close("shared page", utility(600.0, 5e-7) + utility(400.0, 5e-7), 5e-4, 1e-15);
    c.close("zero stall", utility(0.0, 0.7), 0.0, 0.0);

    // Speedup estimation.
    c.close("speedup", estimate_speedup(100, 50, 200, 1000, 1e-3), 0.975, 1e-12);
    c.close("no interference", estimate_speedup(100, 0, 200, 1000, 1e-3), 1.0, 0.0);
    c.close("full attribution", estimate_speedup(100, 200, 200, 1000, 1e-3), 0.9, 1e-12);
    c.close("no delay", estimate_speedup(100, 0, 0, 1000, 1e-3), 1.0, 0.0);
    c.finish()
}

fn sensitivity_example() -> Outcome {
    let mut c = Checks::default();
    let pairs = |t_shared: [f64; 3]| -> Vec<IpcPair<f64>> {
        [6.0, 3.0, 3.0]
            .iter()
            .zip(t_shared)
            .map(|(alone, shared)| IpcPair::new(1.0 / shared, 1.0 / alone))
            .collect()
    };
    let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
    let ws = |t| r3(weighted_speedup(&pairs(t)).unwrap());
    c.close("baseline", ws([10.0, 10.0, 10.0]), 1.2, 0.0);
    c.close("migrate A'", ws([9.0, 10.0, 10.0]), 1.267, 0.0);
    c.close("migrate B'", ws([10.0, 9.0, 10.0]), 1.233, 0.0);
    c.close("migrate C'", ws([10.0, 10.0, 9.0]), 1.233, 0.0);
    c.close("unfairness", r3(unfairness(&pairs([10.0; 3])).unwrap()), 3.333, 0.0);
    let s: Vec<f64> = [6.0, 3.0, 3.0].iter().map(|t| sensitivity(t / 10.0, 10.0)).collect();
    c.check(s[0] > s[1] && s[1] == s[2], format!("sensitivity ordering {s:?}"));
    c.finish()
}

const OVERLAP_ITERS: u64 = 200;
const OVERLAP_GAP: u32 = 300;
const PAGE: u64 = 8192;

fn addr(page: u64, block: u64) -> u64 {
    page * PAGE + (block % 128) * 64
}

/// Page 0 is read alone; pages 1 and 2 are always read together. Each is
/// followed by reads to two other rows of its bank, in NVM and in DRAM, so
/// every access misses in the row buffer wherever the page lives.
fn overlap_trace() -> Trace {
    let mut ev = Vec::new();
    for i in 0..OVERLAP_ITERS {
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(0, i)));
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(8000, i)));
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(16000, i)));
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(8, i)));
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(16, i)));
        ev.push(TraceEvent::read(OVERLAP_GAP, addr(1, i)));
        ev.push(TraceEvent::read(0, addr(2, i)));
        for row in [8000, 16000, 8, 16] {
            ev.push(TraceEvent::read(OVERLAP_GAP, addr(row + 1, i)));
            ev.push(TraceEvent::read(0, addr(row + 2, i)));
        }
    }
    Trace::new("overlap", ev)
}

fn overlap_system(trace: &Trace, resident: &[u64]) -> System<f64> {
    let mut cfg = SimConfig {
        dram_capacity: 8 << 20,
        nvm_capacity: 1 << 30,
        warmup_instructions: 0,
        measured_instructions: trace.header.instructions,
        repeat_traces: false,
        migrations_enabled: false,
        shared_address_space: true,
        ..SimConfig::default()
    };
    cfg.policy.kind = PolicyKind::UbmSt;
    let mut sys = System::new(cfg, std::slice::from_ref(trace)).unwrap();
    for &p in [8, 9, 10, 16, 17, 18].iter().chain(resident) {
        assert!(sys.preload(0, p * PAGE));
    }
    sys
}

fn overlap_oracle() -> Outcome {
    let trace = overlap_trace();
    let mut base = overlap_system(&trace, &[]);
    base.run_to_end();
    let est: Vec<f64> = (0..3).map(|p| base.ubm.page_stall_reduction(p)).collect();
    let stall_base = base.finish().apps[0].stall_cycles as f64;
    let measured = |page: u64| {
        let r = overlap_system(&trace, &[page]).run();
        assert!(r.apps[0].completed);
        stall_base - r.apps[0].stall_cycles as f64
    };
    let (gain0, gain1) = (measured(0), measured(1));
    let mut c = Checks::default();
    c.check(est[0] > est[1] && est[0] > est[2], format!("estimates {est:?}"));
    c.check(gain0 > gain1, format!("measured reductions {gain0} vs {gain1}"));
    let err = (est[0] - gain0).abs() / gain0;
    c.check(err <= 0.10, format!("estimate {} vs measured {gain0}: {:.1}%", est[0], err * 100.0));
    let mut o = c.finish();
    o.detail = format!(
        "{}; estimates {:.0}/{:.0}/{:.0}, measured {gain0:.0} vs {gain1:.0}, error {:.1}%",
        o.detail,
        est[0],
        est[1],
        est[2],
        err * 100.0
    );
    o
}

fn predictor_correlation_suite() -> Outcome {
    let traces = 24;
    let results: Vec<(f64, f64)> = (0..traces)
        .map(|i| {
            let t = SynthSpec::randomized(&format!("r{i}"), 400_000, 1000 + i).generate().unwrap();
            let cfg = SimConfig {
                nvm_capacity: 1 << 30,
                warmup_instructions: 0,
                measured_instructions: t.header.instructions,
                repeat_traces: false,
                migrations_enabled: false,
                shared_address_space: true,
                ..SimConfig::default()
            };
            let mut sys = System::<f64>::new(cfg, &[t]).unwrap();
            sys.enable_profiling();
            let r = sys.run();
            let p = predictor_correlation(r.profile.as_deref().unwrap(), &DevTiming::nvm_baseline()).unwrap();
            (p.latency, p.exposed_latency)
        })
        .collect();
    let wins = results.iter().filter(|(a, b)| b > a).count();
    let mean = |f: fn(&(f64, f64)) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    outcome(
        wins * 5 >= traces as usize * 4,
        format!(
            "MLP-aware predictor better in {wins}/{traces}; mean rho {:.3} without MLP, {:.3} with",
            mean(|r| r.0),
            mean(|r| r.1)
        ),
    )
}

fn ws(r: &SimReport) -> f64 {
    r.totals.weighted_speedup.unwrap_or(f64::NAN)
}

fn class(pages: u64, weight: f64, row_hit_prob: f64, burst: u32) -> PageClass {
    PageClass {
        pages,
        weight,
        row_hit_prob,
        burst,
    }
}

fn spec(name: &str, mpki: f64, classes: Vec<PageClass>, seed: u64) -> SynthSpec {
    SynthSpec {
        name: name.to_string(),
        instructions: 2_000_000,
        target_mpki: mpki,
        classes,
        read_fraction: 0.9,
        page_size: PAGE,
        seed,
        gap_jitter: 0.5,
    }
}

/// Every application is memory intensive. Within each, one set of pages is
/// read in isolation and a larger set in parallel bursts; the apps differ in
/// intensity, so interference slows them unequally.
fn policy_mix() -> ExperimentConfig {
    let app = |i: u64, mpki: f64| {
        spec(
            &format!("mix{i}"),
            mpki,
            vec![class(48, 1.0, 0.0, 1), class(96, 1.0, 0.0, 6), class(512, 0.3, 0.5, 2)],
            i,
        )
    };
    ExperimentConfig {
        synthetic: vec![app(0, 8.0), app(1, 12.0), app(2, 20.0), app(3, 30.0)],
        cores: 4,
        dram_size_mb: 2,
        nvm_size_mb: 1024,
        quantum: 200_000,
        warmup_instructions: 200_000,
        measured_instructions: 1_000_000,
        record_quanta: false,
        ..ExperimentConfig::default()
    }
}

fn policy_ordering() -> Outcome {
    let cfg = policy_mix();
    let spec = SweepSpec {
        policies: vec![PolicyKind::Ubm, PolicyKind::UbmSt, PolicyKind::Rbla],
        ..SweepSpec::dram_sizes(&[cfg.dram_size_mb])
    };
    let entries = match experiment::sweep(&cfg, &spec, Path::new(".")) {
        Ok(e) => e,
        Err(e) => return outcome(false, e.to_string()),
    };
    let get = |p: PolicyKind| {
        entries
            .iter()
            .find(|e| e.policy == p)
            .and_then(|e| e.report.as_ref().ok())
            .map(ws)
            .unwrap_or(f64::NAN)
    };
    let (ubm, st, rbla) = (get(PolicyKind::Ubm), get(PolicyKind::UbmSt), get(PolicyKind::Rbla));
    let gain = ubm / rbla - 1.0;
    outcome(
        ubm >= st && st >= rbla && gain >= 0.03,
        format!("WS UBM {ubm:.4}, UBM-ST {st:.4}, RBLA {rbla:.4}; UBM over RBLA {:+.1}%", gain * 100.0),
    )
}

fn taylor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t_shared: f64 = rng.gen_range(1e3..1e9);
        let t_alone = t_shared * rng.gen_range(0.05..=1.0);
        let dt = t_shared * rng.gen_range(1e-6..=0.01);
        let exact = speedup_gain_exact(t_alone, t_shared, dt);
        let lin = speedup_gain_linear(t_alone, t_shared, dt);
        worst = worst.max((exact - lin).abs() / exact);
    }
    outcome(worst <= 0.02, format!("worst relative error {:.3}% over 1000 samples", worst * 100.0))
}

fn fuzz_traces(seed: u64, n: usize) -> Vec<Trace> {
    (0..n)
        .map(|i| {
            SynthSpec::randomized(&format!("f{i}"), 3_000_000, seed * 100 + i as u64)
                .generate()
                .unwrap()
        })
        .collect()
}

fn invariants() -> Outcome {
    let mut c = Checks::default();

    // Alone runs see no interference, with migrations active.
    for t in fuzz_traces(1, 3) {
        let mut cfg = SimConfig {
            dram_capacity: 2 << 20,
            warmup_instructions: 100_000,
            measured_instructions: 500_000,
            ..SimConfig::default()
        };
        cfg.policy.kind = PolicyKind::All;
        let r = System::<f64>::new(cfg, &[t]).unwrap().run();
        let a = &r.apps[0];
        c.check(
            a.interference_cycles == 0 && a.request_interference == 0,
            format!("{} alone: interference {} / {}", a.name, a.interference_cycles, a.request_interference),
        );
    }

    // Fuzzed multi-program runs with every structural invariant checked.
    let mut cycles = 0;
    for (i, kind) in [PolicyKind::All, PolicyKind::Ubm, PolicyKind::Rbla].into_iter().enumerate() {
        let mut cfg = SimConfig {
            dram_capacity: 1 << 20,
            nvm_capacity: 1 << 30,
            warmup_instructions: 0,
            measured_instructions: u64::MAX / 2,
            max_cycles: 3_500_000,
            ..SimConfig::default()
        };
        cfg.policy.kind = kind;
        cfg.policy.quantum = 250_000;
        let sys = System::<f64>::new(cfg, &fuzz_traces(10 + i as u64, 4)).unwrap();
        match sys.run_checked(1000) {
            Ok(r) => {
                cycles += r.cycles;
                c.check(
                    r.stat_store_peak <= 2048,
                    format!("{kind}: stat store peak {}", r.stat_store_peak),
                );
                c.check(r.migration.promoted > 0, format!("{kind}: no promotions"));
            }
            Err(e) => c.check(false, format!("{kind}: {e}")),
        }
    }
    c.check(cycles >= 10_000_000, format!("fuzzed cycles {cycles}"));

    // Determinism of the full report.
    let cfg = ExperimentConfig {
        synthetic: (0..3).map(|i| SynthSpec::randomized(&format!("d{i}"), 600_000, 77 + i)).collect(),
        cores: 3,
        dram_size_mb: 1,
        nvm_size_mb: 1024,
        quantum: 100_000,
        warmup_instructions: 50_000,
        measured_instructions: 300_000,
        ..ExperimentConfig::default()
    };
    let json = || -> Vec<String> {
        experiment::run(&cfg, Path::new("."), true)
            .unwrap()
            .iter()
            .map(SimReport::to_json)
            .collect()
    };
    c.check(json() == json(), "reports differ between identical runs");
    let mut o = c.finish();
    o.detail = format!("{}; {cycles} fuzzed cycles", o.detail);
    o
}

fn sweep_workload() -> ExperimentConfig {
    let app = |i: u64, mpki: f64| {
        spec(
            &format!("sw{i}"),
            mpki,
            vec![class(64, 2.0, 0.2, 1), class(192, 1.0, 0.3, 3), class(1024, 0.5, 0.3, 2)],
            100 + i,
        )
    };
    ExperimentConfig {
        synthetic: vec![app(0, 10.0), app(1, 15.0), app(2, 20.0), app(3, 25.0)],
        cores: 4,
        dram_size_mb: SCALED_DRAM_MB[SCALED_DRAM_MB.len() - 1],
        nvm_size_mb: 1024,
        quantum: 200_000,
        warmup_instructions: 200_000,
        measured_instructions: 1_000_000,
        record_quanta: false,
        ..ExperimentConfig::default()
    }
}

/// DRAM sizes of the sweep, scaled down 64x together with the workloads.
const SCALED_DRAM_MB: [u64; 4] = [1, 2, 4, 8];
const NVM_LATENCIES: [[f64; 2]; 3] = [[3.0, 7.0], [4.5, 12.0], [6.0, 17.0]];
const ALL_FLAT: f64 = 0.05;

fn sweep_trends() -> Outcome {
    let mut c = Checks::default();
    let mut lines = Vec::new();
    let cfg = sweep_workload();
    for spec in [SweepSpec::dram_sizes(&SCALED_DRAM_MB), SweepSpec::nvm_latencies(&NVM_LATENCIES)] {
        let entries = match experiment::sweep(&cfg, &spec, Path::new(".")) {
            Ok(e) => e,
            Err(e) => return outcome(false, e.to_string()),
        };
        for kind in PolicyKind::ALL {
            let series: Vec<f64> = entries
                .iter()
                .filter(|e| e.policy == kind)
                .map(|e| e.report.as_ref().map(ws).unwrap_or(f64::NAN))
                .collect();
            lines.push(format!(
                "{:?} {kind}: {}",
                spec.axis,
                series.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
            ));
            let pairs = series.windows(2);
            match (spec.axis, kind) {
                (hymem::experiment::SweepAxis::NvmLatency, PolicyKind::All) => {
                    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    c.check(hi / lo - 1.0 <= ALL_FLAT, format!("ALL varies {:.1}% with latency", (hi / lo - 1.0) * 100.0));
                }
                (hymem::experiment::SweepAxis::NvmLatency, _) => {
                    for w in pairs {
                        c.check(w[1] <= w[0], format!("{kind} rises with NVM latency: {:.4} -> {:.4}", w[0], w[1]));
                    }
                }
                (hymem::experiment::SweepAxis::DramSize, _) => {
                    for w in pairs {
                        c.check(w[1] >= w[0], format!("{kind} drops with DRAM size: {:.4} -> {:.4}", w[0], w[1]));
                    }
                }
            }
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    c.finish()
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "formula unit suite", formula_suite),
        (2, "sensitivity example metrics", sensitivity_example),
        (3, "isolated vs overlapped page oracle", overlap_oracle),
        (4, "MLP-aware predictor correlation", predictor_correlation_suite),
        (5, "policy ordering", policy_ordering),
        (6, "first-order speedup approximation", taylor),
        (7, "invariant suites", invariants),
        (8, "sweep trends", sweep_trends),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {verdict} [{:.1}s] {}", t0.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
