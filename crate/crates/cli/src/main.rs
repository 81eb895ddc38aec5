//! `rtdd-ia`: feasibility checks, DoF search, beamformer construction and
//! simulation sweeps for two-cell reverse-TDD MIMO networks.
//!
//! Exit status: 0 on success, 1 when `--strict` is set and the verdict is
//! negative, 2 on any error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rtdd_ia::beamform::{construct, iterate_alignment, IterationOptions, PowerProfile};
use rtdd_ia::evaluate::monte_carlo_sweep;
use rtdd_ia::feasibility::{
    characterize, check_necessary, check_sufficient, check_symmetric_sufficient, hall_condition,
    search_max_sum_dof, SearchMode, SearchOptions, SubsetGuard, DEFAULT_MAX_SUBSET_USERS,
    DEFAULT_RANK_TRIALS,
};
use rtdd_ia::format::sig;
use rtdd_ia::model::{sample_channels, validate_config};
use rtdd_ia::{DofAllocation, NetworkConfig, RngStream};

const GUARD_ENV: &str = "IA_RTDD_MAX_SUBSET_USERS";

#[derive(Parser)]
#[command(
    name = "rtdd-ia",
    version,
    about = "Interference alignment for two-cell reverse-TDD MIMO networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one stream allocation against the converse bounds and/or the rank test.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dof: String,
        /// Run only one test; both are reported when omitted.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = DEFAULT_RANK_TRIALS)]
        trials: usize,
        #[arg(long)]
        strict: bool,
    },
    /// Largest sum of streams passing the converse bounds and/or the rank test.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = DEFAULT_RANK_TRIALS)]
        trials: usize,
        /// Largest admissible number of candidate allocations.
        #[arg(long, default_value_t = SearchOptions::default().budget)]
        budget: u128,
        /// With both tests, fail unless the two maxima coincide.
        #[arg(long)]
        strict: bool,
    },
    /// Symmetric allocation test, `--dof "d_alpha;d_beta"`.
    Symmetric {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dof: String,
        #[arg(long)]
        strict: bool,
    },
    /// Build precoders and postcoders on one channel draw and report the residuals.
    Construct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dof: String,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
        /// SNR in dB.
        #[arg(long, default_value = "30", allow_hyphen_values = true)]
        snr: String,
    },
    /// Leakage after every iteration of the alignment step, one channel draw.
    SimulateLeakage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dof: String,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value = "30", allow_hyphen_values = true)]
        snr: String,
    },
    /// Mean sum rate over an SNR grid, with the single-cell and point-to-point references.
    SimulateSumrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dof: String,
        /// `start:step:stop` in dB, stop included when reachable, or a single value.
        #[arg(long, default_value = "0:10:50", allow_hyphen_values = true)]
        snr: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Network JSON: {"M_alpha": .., "N_alpha": [..], "M_beta": .., "N_beta": [..]}.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Necessary,
    Sufficient,
}

impl From<Mode> for SearchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Necessary => SearchMode::NecessaryBound,
            Mode::Sufficient => SearchMode::SufficientCertified,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// What a subcommand produced, plus whether its verdict was positive.
struct Output {
    text: String,
    pass: bool,
}

type CliResult<T> = Result<T, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let strict = matches!(
        cli.command,
        Command::Check { strict: true, .. }
            | Command::Search { strict: true, .. }
            | Command::Symmetric { strict: true, .. }
    );
    match run(cli.command) {
        Ok(out) => {
            if strict && !out.pass {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<Output> {
    let (common, out) = match command {
        Command::Check {
            common,
            dof,
            mode,
            trials,
            ..
        } => {
            let out = cmd_check(&common, &dof, mode, trials)?;
            (common, out)
        }
        Command::Search {
            common,
            mode,
            trials,
            budget,
            ..
        } => {
            let out = cmd_search(&common, mode, trials, budget)?;
            (common, out)
        }
        Command::Symmetric { common, dof, .. } => {
            let out = cmd_symmetric(&common, &dof)?;
            (common, out)
        }
        Command::Construct {
            common,
            dof,
            iters,
            snr,
        } => {
            let out = cmd_construct(&common, &dof, iters, &snr)?;
            (common, out)
        }
        Command::SimulateLeakage {
            common,
            dof,
            iters,
            snr,
        } => {
            let out = cmd_leakage(&common, &dof, iters, &snr)?;
            (common, out)
        }
        Command::SimulateSumrate {
            common,
            dof,
            snr,
            trials,
            iters,
        } => {
            let out = cmd_sumrate(&common, &dof, &snr, trials, iters)?;
            (common, out)
        }
    };
    match &common.out {
        Some(path) => fs::write(path, &out.text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{}", out.text),
    }
    Ok(out)
}

fn load_config(common: &Common) -> CliResult<NetworkConfig> {
    let path = &common.config;
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let config: NetworkConfig = serde_json::from_str(&text)
        .map_err(|e| format!("malformed config {}: {e}", path.display()))?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn parse_dof(config: &NetworkConfig, s: &str) -> CliResult<DofAllocation> {
    let dof: DofAllocation = s
        .parse()
        .map_err(|e: rtdd_ia::Error| format!("--dof: {e}"))?;
    validate_config(config, &dof).map_err(|e| format!("--dof: {e}"))?;
    Ok(dof)
}

/// Symmetric form `a;b`, or a full allocation whose entries agree per cell.
fn parse_symmetric(s: &str) -> CliResult<(usize, usize)> {
    let dof: DofAllocation = s
        .parse()
        .map_err(|e: rtdd_ia::Error| format!("--dof: {e}"))?;
    let single = |v: &[usize], cell: &str| -> CliResult<usize> {
        match v {
            [first, rest @ ..] if rest.iter().all(|x| x == first) => Ok(*first),
            _ => Err(format!(
                "--dof: {cell} stream counts must all be equal for the symmetric test"
            )),
        }
    };
    Ok((single(&dof.d_alpha, "α")?, single(&dof.d_beta, "β")?))
}

fn guard() -> CliResult<SubsetGuard> {
    match std::env::var(GUARD_ENV) {
        Ok(v) => {
            let limit = v
                .trim()
                .parse()
                .map_err(|_| format!("{GUARD_ENV}={v:?} is not a non-negative integer"))?;
            Ok(SubsetGuard {
                limit,
                enforce: true,
            })
        }
        Err(_) => Ok(SubsetGuard {
            limit: DEFAULT_MAX_SUBSET_USERS,
            enforce: true,
        }),
    }
}

fn parse_db(s: &str) -> CliResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("--snr: {s:?} is not a number"))?;
    if v.is_nan() || v == f64::INFINITY {
        return Err(format!("--snr: {s:?} is not a usable SNR"));
    }
    Ok(v)
}

/// `start:step:stop` (stop included when reachable) or a single value.
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![parse_db(single)?]),
        [start, step, stop] => {
            let (start, step, stop) = (parse_db(start)?, parse_db(step)?, parse_db(stop)?);
            if !(step > 0.0) || !start.is_finite() {
                return Err("--snr: expected START:STEP:STOP with a positive step".into());
            }
            if stop < start {
                return Err("--snr: STOP is below START".into());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(format!(
            "--snr: {s:?} is neither a value nor START:STEP:STOP"
        )),
    }
}

/// Rounds every float to 9 significant digits.
fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let r: f64 = sig(x).parse().unwrap_or(x);
            json!(r)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => {
            Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let v = round_floats(serde_json::to_value(value).expect("serializable output"));
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

fn json_only(common: &Common) -> CliResult<()> {
    match common.format {
        Some(Format::Csv) => Err("this subcommand only emits JSON".into()),
        _ => Ok(()),
    }
}

fn cmd_check(common: &Common, dof: &str, mode: Option<Mode>, trials: usize) -> CliResult<Output> {
    json_only(common)?;
    let config = load_config(common)?;
    let dof = parse_dof(&config, dof)?;
    let rng = RngStream::new(common.seed, 0);
    let necessary = || check_necessary(&config, &dof, guard()?).map_err(|e| e.to_string());
    let sufficient = || check_sufficient(&config, &dof, trials, &rng).map_err(|e| e.to_string());
    Ok(match mode {
        Some(Mode::Necessary) => {
            let r = necessary()?;
            Output {
                pass: r.verdict,
                text: to_json(&r),
            }
        }
        Some(Mode::Sufficient) => {
            let r = sufficient()?;
            Output {
                pass: r.verdict,
                text: to_json(&r),
            }
        }
        None => {
            let (n, s) = (necessary()?, sufficient()?);
            Output {
                pass: n.verdict && s.verdict,
                text: to_json(&json!({
                    "allocation": dof.to_string(),
                    "necessary": n,
                    "sufficient": s,
                })),
            }
        }
    })
}

fn cmd_search(
    common: &Common,
    mode: Option<Mode>,
    trials: usize,
    budget: u128,
) -> CliResult<Output> {
    json_only(common)?;
    let config = load_config(common)?;
    let opts = SearchOptions {
        budget,
        trials,
        seed: common.seed,
        guard: guard()?,
    };
    Ok(match mode {
        Some(m) => {
            let r = search_max_sum_dof(&config, m.into(), &opts).map_err(|e| e.to_string())?;
            Output {
                pass: true,
                text: to_json(&json!({
                    "mode": r.mode,
                    "d_sum": r.d_sum,
                    "allocation": r.allocation.to_string(),
                    "report": r.report,
                })),
            }
        }
        None => {
            let r = characterize(&config, &opts).map_err(|e| e.to_string())?;
            Output {
                pass: r.optimal,
                text: to_json(&json!({
                    "d_sum": r.sufficient.d_sum,
                    "optimal": r.optimal,
                    "gap": r.gap,
                    "necessary_bound": r.necessary.d_sum,
                    "sufficient_certified": r.sufficient.d_sum,
                    "allocation": r.sufficient.allocation.to_string(),
                    "bound_allocation": r.necessary.allocation.to_string(),
                    "report": r.sufficient.report,
                })),
            }
        }
    })
}

fn cmd_symmetric(common: &Common, dof: &str) -> CliResult<Output> {
    json_only(common)?;
    let config = load_config(common)?;
    let (da, db) = parse_symmetric(dof)?;
    let report =
        check_symmetric_sufficient(&config, da, db, guard()?).map_err(|e| e.to_string())?;
    let matching = match hall_condition(&config, da, db) {
        Ok(h) => json!({
            "A": h.graph.a,
            "B": h.graph.b,
            "matched": h.matched(),
            "required": h.graph.left.len(),
            "assignment": h.assignment().map(|a| a
                .into_iter()
                .map(|((k, l), block)| json!({"F": [k + 1, l + 1], "block": block}))
                .collect::<Vec<_>>()),
        }),
        Err(_) => Value::Null,
    };
    Ok(Output {
        pass: report.verdict,
        text: to_json(&json!({
            "d_alpha": da,
            "d_beta": db,
            "d_sum": da * config.k() + db * config.l(),
            "report": report,
            "matching": matching,
        })),
    })
}

fn iteration_options(iters: usize, record_trace: bool) -> IterationOptions {
    IterationOptions {
        max_iters: iters,
        record_trace,
        ..IterationOptions::default()
    }
}

fn cmd_construct(common: &Common, dof: &str, iters: usize, snr: &str) -> CliResult<Output> {
    json_only(common)?;
    let config = load_config(common)?;
    let dof = parse_dof(&config, dof)?;
    let snr_db = parse_db(snr)?;
    let channels = sample_channels(&config, &RngStream::new(common.seed, 0));
    let powers = PowerProfile::from_snr_db(&config, snr_db);
    let c = construct(
        &channels,
        &dof,
        &powers,
        &iteration_options(iters, false),
        &RngStream::new(common.seed, 1),
    )
    .map_err(|e| e.to_string())?;
    Ok(Output {
        pass: true,
        text: to_json(&json!({
            "allocation": dof.to_string(),
            "snr_db": snr_db,
            "branch": c.branch,
            "iterations": c.trace.iterations(),
            "converged": c.trace.converged,
            "initial_leakage": c.trace.initial(),
            "final_leakage": c.trace.last(),
            "residuals": c.residuals,
        })),
    })
}

fn cmd_leakage(common: &Common, dof: &str, iters: usize, snr: &str) -> CliResult<Output> {
    let config = load_config(common)?;
    let dof = parse_dof(&config, dof)?;
    let snr_db = parse_db(snr)?;
    let channels = sample_channels(&config, &RngStream::new(common.seed, 0));
    let powers = PowerProfile::from_snr_db(&config, snr_db);
    let a = iterate_alignment(
        &channels,
        &dof,
        &powers,
        &iteration_options(iters, true),
        &RngStream::new(common.seed, 1),
    )
    .map_err(|e| e.to_string())?;
    let text = match common.format {
        Some(Format::Json) => to_json(&a.trace),
        _ => a.trace.to_csv(),
    };
    Ok(Output { text, pass: true })
}

fn cmd_sumrate(
    common: &Common,
    dof: &str,
    snr: &str,
    trials: usize,
    iters: usize,
) -> CliResult<Output> {
    let config = load_config(common)?;
    let dof = parse_dof(&config, dof)?;
    let grid = parse_grid(snr)?;
    if trials == 0 {
        return Err("--trials must be at least 1".into());
    }
    let sweep = monte_carlo_sweep(
        &config,
        &dof,
        &grid,
        trials,
        &iteration_options(iters, false),
        common.seed,
    )
    .map_err(|e| e.to_string())?;
    let text = match common.format {
        Some(Format::Json) => to_json(&sweep),
        _ => sweep.to_csv(),
    };
    Ok(Output { text, pass: true })
}
