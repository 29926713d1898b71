use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hymem::experiment::{self, ExperimentConfig, SweepAxis, SweepSpec, SweepValue};
use hymem::metrics::SimReport;
use hymem::policy::PolicyKind;
use hymem::trace::{write_binary, write_text, SynthSpec, TraceFormat};

#[derive(Parser)]
#[command(name = "hymem", version, about = "Hybrid DRAM/NVM memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip the extra baseline-policy run used for normalization.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Simulate every point of a DRAM-size or NVM-latency sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep axis; overrides the config's [sweep] table.
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SweepAxis>,
        /// Comma separated values: MB for dram-size, RCDxWR pairs (e.g. 3x7) for nvm-latency.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Policies to simulate at each point (default: all five).
        #[arg(long = "policies", value_delimiter = ',', value_parser = parse_policy)]
        policies: Vec<PolicyKind>,
    },
    /// Generate a synthetic trace.
    Tracegen(TraceGen),
    /// Summarize existing report.json files.
    Report {
        reports: Vec<PathBuf>,
        /// Write the combined per-app and totals rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Normalize weighted speedup to the report of this policy.
        #[arg(long, value_parser = parse_policy)]
        baseline: Option<PolicyKind>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Trace file to add (repeatable).
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    #[arg(long, value_parser = parse_policy)]
    baseline: Option<PolicyKind>,
    #[arg(long)]
    dram_mb: Option<u64>,
    /// NVM timing preset name or key = value file.
    #[arg(long)]
    nvm_timing: Option<String>,
    #[arg(long)]
    dram_timing: Option<String>,
    #[arg(long)]
    rcd_mult: Option<f64>,
    #[arg(long)]
    wr_mult: Option<f64>,
    #[arg(long)]
    quantum: Option<u64>,
    #[arg(long)]
    sampling_period: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    measured: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dump the top-K pages by utility every quantum.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceGen {
    /// Output path; `.hmtx` writes text, anything else binary.
    #[arg(short, long)]
    out: PathBuf,
    /// Generator spec (TOML); the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Draw a random multi-class spec from the seed.
    #[arg(long)]
    randomized: bool,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 1_000_000)]
    instructions: u64,
    #[arg(long, default_value_t = 10.0)]
    mpki: f64,
    #[arg(long, default_value_t = 256)]
    pages: u64,
    #[arg(long, default_value_t = 0.5)]
    row_hit: f64,
    #[arg(long, default_value_t = 1)]
    burst: u32,
    #[arg(long, default_value_t = 0.8)]
    read_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    match s {
        "dram-size" => Ok(SweepAxis::DramSize),
        "nvm-latency" => Ok(SweepAxis::NvmLatency),
        _ => Err(format!("unknown axis `{s}` (expected dram-size or nvm-latency)")),
    }
}

fn parse_value(axis: SweepAxis, s: &str) -> Result<SweepValue, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad sweep value `{t}`: {e}"));
    match axis {
        SweepAxis::DramSize => Ok(SweepValue::Scalar(num(s)?)),
        SweepAxis::NvmLatency => {
            let (a, b) = s
                .split_once(['x', ':'])
                .ok_or_else(|| format!("latency value `{s}` must look like 3x7"))?;
            Ok(SweepValue::Pair([num(a)?, num(b)?]))
        }
    }
}

impl Common {
    /// Loads the config and applies flag overrides. Returns the config and
    /// the directory relative paths resolve against.
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), String> {
        let (mut c, base) = match &self.config {
            Some(p) => (
                ExperimentConfig::load(p).map_err(|e| e.to_string())?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (ExperimentConfig::default(), PathBuf::new()),
        };
        let cwd = std::env::current_dir().map_err(|e| e.to_string())?;
        for t in &self.traces {
            // Flag paths are relative to the working directory.
            c.traces.push(cwd.join(t));
        }
        if let Some(v) = self.policy {
            c.policy = v;
        }
        if let Some(v) = self.baseline {
            c.baseline_policy = v;
        }
        if let Some(v) = self.dram_mb {
            c.dram_size_mb = v;
        }
        if let Some(v) = &self.nvm_timing {
            c.nvm_timing = cwd.join(v).to_string_lossy().into_owned();
            if hymem::device::DevTiming::preset(v).is_ok() {
                c.nvm_timing = v.clone();
            }
        }
        if let Some(v) = &self.dram_timing {
            c.dram_timing = cwd.join(v).to_string_lossy().into_owned();
            if hymem::device::DevTiming::preset(v).is_ok() {
                c.dram_timing = v.clone();
            }
        }
        if self.rcd_mult.is_some() {
            c.rcd_multiplier = self.rcd_mult;
        }
        if self.wr_mult.is_some() {
            c.wr_multiplier = self.wr_mult;
        }
        if let Some(v) = self.quantum {
            c.quantum = v;
        }
        if let Some(v) = self.sampling_period {
            c.ubm.sampling_period = v;
        }
        if let Some(v) = self.warmup {
            c.warmup_instructions = v;
        }
        if let Some(v) = self.measured {
            c.measured_instructions = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        if let Some(v) = &self.out {
            c.output_dir = cwd.join(v);
        }
        Ok((c, base))
    }
}

fn print_report(label: &str, r: &SimReport) {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{label}{:<7} ws {} hs {} unfair {} norm {} stall {} promoted {} energy {:.4e} J",
        r.policy.name(),
        f(r.totals.weighted_speedup),
        f(r.totals.harmonic_speedup),
        f(r.totals.unfairness),
        f(r.totals.normalized_weighted_speedup),
        r.totals.total_stall_cycles,
        r.migration.promoted,
        r.totals.energy_j,
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_run(common: &Common, no_normalize: bool) -> Result<bool, String> {
    let (cfg, base) = common.resolve()?;
    let reports = experiment::run(&cfg, &base, !no_normalize).map_err(|e| e.to_string())?;
    let out = base.join(&cfg.output_dir);
    let main = &reports[0];
    experiment::write_report(&out, main).map_err(|e| e.to_string())?;
    for r in &reports[1..] {
        experiment::write_report(&out.join("baseline"), r).map_err(|e| e.to_string())?;
    }
    print_report("", main);
    println!("wrote {}", out.display());
    Ok(!main.truncated)
}

fn cmd_sweep(
    common: &Common,
    axis: Option<SweepAxis>,
    values: &[String],
    policies: &[PolicyKind],
) -> Result<bool, String> {
    let (cfg, base) = common.resolve()?;
    let mut spec = match (axis, &cfg.sweep) {
        (Some(a), _) => SweepSpec {
            axis: a,
            values: Vec::new(),
            policies: Vec::new(),
        },
        (None, Some(s)) => s.clone(),
        (None, None) => return Err("no sweep given: use --axis/--values or a [sweep] table".into()),
    };
    if !values.is_empty() {
        spec.values = values.iter().map(|v| parse_value(spec.axis, v)).collect::<Result<_, _>>()?;
    }
    if !policies.is_empty() {
        spec.policies = policies.to_vec();
    }
    let entries = experiment::sweep(&cfg, &spec, &base).map_err(|e| e.to_string())?;
    let out = base.join(&cfg.output_dir);
    let mut ok = true;
    for e in &entries {
        match &e.report {
            Ok(r) => {
                experiment::write_report(&out.join(&e.label).join(e.policy.name()), r).map_err(|e| e.to_string())?;
                print_report(&format!("{:>10} ", e.label), r);
                ok &= !r.truncated;
            }
            Err(err) => {
                eprintln!("{} {}: {err}", e.label, e.policy);
                ok = false;
            }
        }
    }
    let csv_path = out.join("sweep.csv");
    fs::write(&csv_path, experiment::sweep_csv(&entries)).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    println!("wrote {}", csv_path.display());
    Ok(ok)
}

fn cmd_tracegen(a: &TraceGen) -> Result<bool, String> {
    let spec = if let Some(p) = &a.spec {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        toml::from_str::<SynthSpec>(&text).map_err(|e| format!("{}: {e}", p.display()))?
    } else if a.randomized {
        SynthSpec::randomized(&a.name, a.instructions, a.seed)
    } else {
        SynthSpec {
            read_fraction: a.read_fraction,
            ..SynthSpec::uniform(&a.name, a.instructions, a.mpki, a.pages, a.row_hit, a.burst, a.seed)
        }
    };
    let trace = spec.generate().map_err(|e| e.to_string())?;
    let file = fs::File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    let res = match TraceFormat::from_path(&a.out) {
        TraceFormat::Text => write_text(&mut w, &trace),
        TraceFormat::Binary => write_binary(&mut w, &trace),
    };
    res.map_err(|e| format!("{}: {e}", a.out.display()))?;
    println!(
        "wrote {} ({} events, {} instructions, {:.2} MPKI)",
        a.out.display(),
        trace.events.len(),
        trace.header.instructions,
        trace.mpki()
    );
    Ok(true)
}

fn cmd_report(paths: &[PathBuf], csv_out: Option<&Path>, baseline: Option<PolicyKind>) -> Result<bool, String> {
    if paths.is_empty() {
        return Err("no reports given".into());
    }
    let mut reports = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        reports.push(SimReport::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))?);
    }
    if let Some(b) = baseline {
        let base = reports
            .iter()
            .find(|r| r.policy == b)
            .cloned()
            .ok_or_else(|| format!("no report for baseline policy {b}"))?;
        for r in &mut reports {
            r.normalize_to(&base);
        }
    }
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        print_report("", r);
        let body = r.to_csv();
        // Keep only the first header line.
        let skip = if i == 0 { 0 } else { body.find('\n').map_or(body.len(), |n| n + 1) };
        csv.push_str(&body[skip..]);
    }
    if let Some(p) = csv_out {
        fs::write(p, csv).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, no_normalize } => cmd_run(common, *no_normalize),
        Command::Sweep {
            common,
            axis,
            values,
            policies,
        } => cmd_sweep(common, *axis, values, policies),
        Command::Tracegen(a) => cmd_tracegen(a),
        Command::Report { reports, csv, baseline } => cmd_report(reports, csv.as_deref(), *baseline),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
