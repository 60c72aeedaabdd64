use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use precswitch::config::{ConfigError, Diagnostic, RunConfig};
use precswitch::io::{write_trajectory_csv, ScheduleFile};
use precswitch::lti::{simulate_nominal, Trajectory};
use precswitch::model::{build_schedule_program, write_plain_text, ScheduleEvaluator};
use precswitch::precision::{simulate_rounded, Precision};
use precswitch::schedule::{
    compare_baselines, switching_windows, synthesize_schedule, verify_schedule, BaselineComparison,
    Schedule, ScheduleError, Synthesis, VerificationReport,
};
use precswitch::solver::SolveStatus;

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_LIMIT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "precswitch",
    version,
    about = "Synthesize and check precision-switching schedules"
)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the switching windows and their count.
    Intervals { config: PathBuf },
    /// Synthesize a schedule and write it in the run-length format.
    Schedule {
        config: PathBuf,
        /// Schedule file to write; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the solver summary and switch vector as JSON.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Also write the program in plain text.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Override the worker thread count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a trajectory CSV.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Nominal)]
        mode: Mode,
        /// Schedule file, required by the `schedule` and `model` modes.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a schedule file against the error model and the emulation.
    Verify { config: PathBuf, schedule: PathBuf },
    /// Compare all-lo, all-hi and a switching schedule.
    Report {
        config: PathBuf,
        /// Schedule to compare; synthesized when absent.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Exact arithmetic.
    Nominal,
    /// Emulated with every sample in the hi format.
    Hi,
    /// Emulated with every sample in the lo format.
    Lo,
    /// Emulated under a schedule file.
    Schedule,
    /// Error-bounded model trajectory under a schedule file.
    Model,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    diagnostics: Vec<Diagnostic>,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            diagnostics: vec![Diagnostic {
                path: String::new(),
                message: message.into(),
            }],
        }
    }

    fn at(code: u8, kind: &'static str, path: &Path, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            kind,
            diagnostics: vec![Diagnostic {
                path: path.display().to_string(),
                message: message.to_string(),
            }],
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "config",
            diagnostics: e.diagnostics(),
        }
    }
}

impl From<ScheduleError> for Failure {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::NoFeasibleSchedule { .. } => {
                Failure::new(EXIT_INFEASIBLE, "infeasible", e.to_string())
            }
            ScheduleError::LimitWithoutIncumbent { .. } => {
                Failure::new(EXIT_LIMIT, "limit", e.to_string())
            }
            other => Failure::new(EXIT_USAGE, "input", other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::at(EXIT_USAGE, "io", path, e)
}

/// Text for stdout plus an exit code; a limit stop still emits its result.
struct Output {
    text: String,
    code: u8,
}

impl Output {
    fn ok(text: String) -> Self {
        Self { text, code: 0 }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(out.text.as_bytes());
            let _ = stdout.flush();
            ExitCode::from(out.code)
        }
        Err(f) => {
            if cli.json {
                let body = json!({ "error": f.kind, "diagnostics": f.diagnostics });
                eprintln!("{body}");
            } else {
                for d in &f.diagnostics {
                    eprintln!("error: {d}");
                }
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    match &cli.command {
        Command::Intervals { config } => intervals(cli, config),
        Command::Schedule {
            config,
            output,
            solution,
            model,
            threads,
        } => schedule(
            cli,
            config,
            output.as_deref(),
            solution.as_deref(),
            model.as_deref(),
            *threads,
        ),
        Command::Simulate {
            config,
            mode,
            schedule,
            output,
        } => simulate(config, *mode, schedule.as_deref(), output.as_deref()),
        Command::Verify { config, schedule } => verify(cli, config, schedule),
        Command::Report { config, schedule } => report(cli, config, schedule.as_deref()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn read_schedule(path: &Path) -> Result<ScheduleFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    ScheduleFile::parse(&text).map_err(|e| Failure::at(EXIT_USAGE, "schedule", path, e))
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn intervals(cli: &Cli, config: &Path) -> Result<Output, Failure> {
    let cfg = RunConfig::from_path(config)?;
    let metrics = cfg.timing_metrics()?;
    let windows = switching_windows(&cfg.system, &cfg.scenario, &metrics)?;
    for w in &windows.warnings {
        eprintln!("warning: {w}");
    }
    if cli.json {
        return Ok(Output::ok(pretty(&json!({
            "metrics": { "rise": metrics.rise, "peak": metrics.peak, "settling": metrics.settling },
            "windows": windows.windows,
            "mu": windows.mu(),
        }))));
    }
    let mut text = format!(
        "rise {:?} s, peak {:?} s, settling {:?} s\n",
        metrics.rise, metrics.peak, metrics.settling
    );
    for (b, (lo, hi)) in windows.windows.iter().enumerate() {
        text.push_str(&format!("window {} [{lo}, {hi}]\n", b + 1));
    }
    text.push_str(&format!("mu {}\n", windows.mu()));
    Ok(Output::ok(text))
}

fn synthesize(cfg: &RunConfig) -> Result<Synthesis, Failure> {
    let metrics = cfg.timing_metrics()?;
    Ok(synthesize_schedule(
        &cfg.system,
        &cfg.scenario,
        Some(metrics),
        &cfg.options,
    )?)
}

fn schedule_file(syn: &Synthesis) -> ScheduleFile {
    ScheduleFile {
        schedule: syn.schedule.clone(),
        mu: Some(syn.windows.mu()),
        gap: Some(syn.solution.gap),
        objective: Some(syn.solution.objective),
        status: Some(syn.solution.status),
    }
}

fn limit_code(status: SolveStatus) -> u8 {
    if status == SolveStatus::NodeLimit {
        EXIT_LIMIT
    } else {
        0
    }
}

fn schedule(
    cli: &Cli,
    config: &Path,
    output: Option<&Path>,
    solution: Option<&Path>,
    model: Option<&Path>,
    threads: Option<usize>,
) -> Result<Output, Failure> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::new(
                EXIT_USAGE,
                "usage",
                "--threads must be at least 1",
            ));
        }
        cfg.options.solver.threads = t;
    }
    if let Some(path) = model {
        let metrics = cfg.timing_metrics()?;
        let windows = switching_windows(&cfg.system, &cfg.scenario, &metrics)?;
        let program =
            build_schedule_program(&cfg.system, &cfg.scenario, &windows, &cfg.options.model)
                .map_err(ScheduleError::from)?;
        let mut buf = Vec::new();
        write_plain_text(&program, &mut buf).map_err(|e| io_failure(path, e))?;
        fs::write(path, buf).map_err(|e| io_failure(path, e))?;
    }
    let syn = synthesize(&cfg)?;
    let code = limit_code(syn.solution.status);
    if code != 0 {
        eprintln!("warning: node limit reached; the schedule is the best one found");
    }
    let file = schedule_file(&syn);
    let text = file.to_text();
    if let Some(path) = solution {
        let sol = &syn.solution;
        let body = json!({
            "status": sol.status.as_str(),
            "objective": sol.objective,
            "lower_bound": sol.lower_bound,
            "gap": sol.gap,
            "nodes": sol.nodes,
            "free_binaries": sol.free_binaries,
            "max_residual": sol.max_residual,
            "root_kkt": sol.root_kkt,
            "windows": syn.windows.windows,
            "mu": syn.windows.mu(),
            "switches": syn.schedule.switch_count(),
            "lo_fraction": syn.schedule.lo_fraction(),
            "sw": syn.schedule.switches().iter().map(|&b| u8::from(b)).collect::<Vec<_>>(),
        });
        write_file(path, &pretty(&body))?;
    }
    let stdout = match output {
        Some(path) => {
            write_file(path, &text)?;
            if cli.json {
                pretty(&json!({
                    "status": syn.solution.status.as_str(),
                    "objective": syn.solution.objective,
                    "switches": syn.schedule.switch_count(),
                    "lo_fraction": syn.schedule.lo_fraction(),
                    "schedule": syn.schedule.to_string(),
                }))
            } else {
                format!(
                    "{} objective {:?}, {} switches, lo fraction {:.4}\n{}\n",
                    syn.solution.status,
                    syn.solution.objective,
                    syn.schedule.switch_count(),
                    syn.schedule.lo_fraction(),
                    syn.schedule
                )
            }
        }
        None => text,
    };
    Ok(Output { text: stdout, code })
}

fn simulate(
    config: &Path,
    mode: Mode,
    schedule: Option<&Path>,
    output: Option<&Path>,
) -> Result<Output, Failure> {
    let cfg = RunConfig::from_path(config)?;
    let (sys, scen) = (&cfg.system, &cfg.scenario);
    let horizon = sys
        .grid()
        .map_err(ScheduleError::from)?
        .horizon_samples(scen.horizon);
    let need_schedule = || -> Result<Schedule, Failure> {
        let path = schedule
            .ok_or_else(|| Failure::new(EXIT_USAGE, "usage", "this mode needs --schedule"))?;
        Ok(read_schedule(path)?.schedule)
    };
    let (traj, precisions): (Trajectory, Option<Vec<Precision>>) = match mode {
        Mode::Nominal => (
            simulate_nominal(sys, scen).map_err(ScheduleError::from)?,
            None,
        ),
        Mode::Hi | Mode::Lo | Mode::Schedule => {
            let sched = match mode {
                Mode::Hi => Schedule::all_hi(horizon),
                Mode::Lo => Schedule::all_lo(horizon),
                _ => need_schedule()?,
            };
            let p = sched.precisions();
            let traj = simulate_rounded(sys, scen, &p, cfg.formats).map_err(ScheduleError::from)?;
            (traj, Some(p))
        }
        Mode::Model => {
            let sched = need_schedule()?;
            let ev = ScheduleEvaluator::new(sys, scen, cfg.options.model)
                .map_err(ScheduleError::from)?;
            if sched.horizon() != ev.horizon() {
                return Err(Failure::new(
                    EXIT_USAGE,
                    "schedule",
                    format!(
                        "schedule covers {} samples, scenario has {}",
                        sched.horizon(),
                        ev.horizon()
                    ),
                ));
            }
            (
                ev.trajectory(&sched.switch_values()),
                Some(sched.precisions()),
            )
        }
    };
    if let Some(p) = &precisions {
        if p.len() != traj.len() {
            return Err(Failure::new(
                EXIT_USAGE,
                "schedule",
                "schedule length does not match the horizon",
            ));
        }
    }
    let mut buf = Vec::new();
    write_trajectory_csv(
        &mut buf,
        sys,
        scen,
        &traj,
        precisions.as_deref(),
        cfg.options.model.cost_mode,
    )
    .map_err(|e| Failure::new(EXIT_USAGE, "io", e.to_string()))?;
    let text = String::from_utf8(buf).expect("CSV is UTF-8");
    match output {
        Some(path) => {
            write_file(path, &text)?;
            Ok(Output::ok(String::new()))
        }
        None => Ok(Output::ok(text)),
    }
}

fn report_text(r: &VerificationReport) -> String {
    let model = match &r.model_violation {
        None => "pass".to_string(),
        Some(v) => format!("fail ({v})"),
    };
    format!(
        "model check     {model}\nemulated check  {}\nruntime         {:?}\nmodel cost      {}\nemulated cost   {}\nobjective       {:?}\nswitches        {}\nlo fraction     {:.4}\n",
        r.emulated, r.runtime, r.model_cost, r.emulated_cost, r.objective, r.switches, r.lo_fraction
    )
}

fn verify(cli: &Cli, config: &Path, schedule: &Path) -> Result<Output, Failure> {
    let cfg = RunConfig::from_path(config)?;
    let file = read_schedule(schedule)?;
    let report = verify_schedule(
        &file.schedule,
        &cfg.system,
        &cfg.scenario,
        &cfg.options.model,
        cfg.formats,
    )?;
    let text = if cli.json {
        pretty(&serde_json::to_value(&report).expect("report serializes"))
    } else {
        report_text(&report)
    };
    Ok(Output::ok(text))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}%"))
}

fn table(cmp: &BaselineComparison) -> String {
    let header = [
        "schedule",
        "runtime",
        "model cost",
        "emulated cost",
        "model",
        "emulated",
        "switches",
        "lo %",
    ];
    let mut rows: Vec<[String; 8]> = vec![header.map(String::from)];
    for row in &cmp.rows {
        let r = &row.report;
        let emulated = match &r.emulated {
            precswitch::schedule::EmulatedCheck::Passed => "pass".to_string(),
            precswitch::schedule::EmulatedCheck::Violated { .. } => "band violation".to_string(),
            precswitch::schedule::EmulatedCheck::NonFinite { sample } => {
                format!("non-finite @{sample}")
            }
        };
        rows.push([
            row.label.to_string(),
            format!("{:.6}", r.runtime),
            format!("{:.3}", r.model_cost.value()),
            if r.emulated_cost.is_finite() {
                format!("{:.3}", r.emulated_cost.value())
            } else {
                r.emulated_cost.to_string()
            },
            if r.model_passed() { "pass" } else { "fail" }.to_string(),
            emulated,
            r.switches.to_string(),
            format!("{:.2}", r.lo_fraction * 100.0),
        ]);
    }
    let widths: Vec<usize> = (0..8)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    text.push_str(&format!(
        "runtime reduction vs all-hi: {}\nemulated cost reduction vs all-lo: {}\nemulated cost reduction vs all-hi: {}\n",
        fmt_pct(cmp.runtime_reduction_vs_hi()),
        fmt_pct(cmp.cost_reduction_vs_lo()),
        fmt_pct(cmp.cost_reduction_vs_hi()),
    ));
    text
}

fn report(cli: &Cli, config: &Path, schedule: Option<&Path>) -> Result<Output, Failure> {
    let cfg = RunConfig::from_path(config)?;
    let (sched, code) = match schedule {
        Some(path) => (read_schedule(path)?.schedule, 0),
        None => {
            let syn = synthesize(&cfg)?;
            let code = limit_code(syn.solution.status);
            (syn.schedule, code)
        }
    };
    let cmp = compare_baselines(
        &cfg.system,
        &cfg.scenario,
        &sched,
        &cfg.options.model,
        cfg.formats,
    )?;
    let text = if cli.json {
        pretty(&json!({
            "rows": cmp.rows,
            "runtime_reduction_vs_hi": cmp.runtime_reduction_vs_hi(),
            "cost_reduction_vs_lo": cmp.cost_reduction_vs_lo(),
            "cost_reduction_vs_hi": cmp.cost_reduction_vs_hi(),
        }))
    } else {
        table(&cmp)
    };
    Ok(Output { text, code })
}
