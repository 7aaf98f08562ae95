use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iamac::fixtures::{run_fixture, FixtureName};
use iamac::harness::{
    analytic_report, check_trend, run_experiment, sweep, Status, SweepSpec, CSV_HEADER,
};
use iamac::scenario::Scenario;
use iamac::Error;

#[derive(Parser)]
#[command(
    name = "iamac",
    version,
    about = "Discrete-event WSN MAC simulator (IAMAC, S-MAC, Adaptive S-MAC)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its metrics CSV.
    Run {
        /// Scenario TOML file; omitted means the preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Preset used when no file is given: reference or desk.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a parameter sweep described by a sweep TOML file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run points one after another instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Evaluate the closed-form capacity and contention tables.
    Analytics {
        /// Comma-separated bit error rates.
        #[arg(long, default_value = "0,1e-5,1e-4,1e-3,1e-2")]
        ber: String,
        /// Sleep/Communication budget, seconds.
        #[arg(long, default_value_t = 1.0)]
        budget: f64,
        #[arg(long, default_value_t = 8)]
        slots: u32,
        #[arg(long, default_value_t = 8)]
        max_contenders: u32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay a hand-built fixture and compare it with its golden transcript.
    Fixture {
        #[arg(value_enum)]
        name: FixtureName,
    },
}

fn load(scenario: &Option<PathBuf>, preset: &str) -> Result<Scenario, Error> {
    match scenario {
        Some(p) => Scenario::load(p),
        None => Scenario::preset(preset),
    }
}

fn write(dir: &Path, file: &str, text: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    fs::write(&path, text)?;
    Ok(path)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::Io(_) => ExitCode::from(2),
        Error::Disjoint { .. } => ExitCode::from(3),
        Error::Fixture { .. } => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn execute(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run {
            scenario,
            preset,
            seed,
            out,
        } => {
            let mut s = load(&scenario, &preset)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let exp = run_experiment(&s)?;
            let mut csv = String::from(CSV_HEADER);
            csv.push('\n');
            for r in exp.rows() {
                csv.push_str(&r);
                csv.push('\n');
            }
            let path = write(&out, &format!("{}-{}.csv", s.name, s.seed), &csv)?;
            println!("{}", exp.summary());
            println!("metrics written to {}", path.display());
            if exp.status == Status::Disjoint {
                eprintln!("error: network is disjoint at {} dBm", s.output_power);
            }
            Ok(ExitCode::from(exp.status.exit_code() as u8))
        }
        Command::Sweep {
            spec,
            scenario,
            preset,
            out,
            serial,
        } => {
            let base = load(&scenario, &preset)?;
            let spec = SweepSpec::from_toml(&fs::read_to_string(&spec)?)?;
            let outcome = sweep(&spec, &base, !serial)?;
            let path = write(
                &out,
                &format!("{}-sweep-{}.csv", base.name, spec.parameter),
                &outcome.csv(),
            )?;
            for e in &outcome.experiments {
                println!("{} = {}: {}", spec.parameter, e.value, e.summary());
            }
            println!("metrics written to {}", path.display());
            if let Some(t) = &spec.trend {
                let arms: Vec<Option<iamac::harness::Arm>> = if spec.arms.is_empty() {
                    vec![None]
                } else {
                    spec.arms.iter().copied().map(Some).collect()
                };
                let mut ok = true;
                for arm in arms {
                    let means = outcome.means(&t.metric, arm);
                    let ys: Vec<f64> = means.iter().map(|m| m.unwrap_or(f64::NAN)).collect();
                    let report = check_trend(&ys, t.kind, t.tolerance);
                    let label = arm.map_or("base".to_string(), |a| {
                        format!("{}/{:?}", a.protocol.label(), a.recovery)
                    });
                    println!(
                        "trend {} {}: {} ({})",
                        t.metric,
                        label,
                        if report.pass { "pass" } else { "FAIL" },
                        report.detail
                    );
                    ok &= report.pass;
                }
                if !ok {
                    return Ok(ExitCode::from(4));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analytics {
            ber,
            budget,
            slots,
            max_contenders,
            out,
        } => {
            let bers = ber
                .split(',')
                .map(|b| {
                    b.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::config("ber", e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let params = Scenario::default().recovery_params();
            let csv = analytic_report(&bers, budget, &params, max_contenders, slots)?;
            print!("{csv}");
            write(&out, "analytics.csv", &csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixture { name } => {
            let report = run_fixture(name)?;
            print!("{}", report.transcript);
            println!("{}", report.verdict());
            if report.pass() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(Error::Fixture {
                    name: format!("{name:?}"),
                    diff: report.diff(),
                })
            }
        }
    }
}
