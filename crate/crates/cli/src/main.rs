use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conelab::harness::{self, Axis, ExperimentConfig, RunReport};
use conelab::Error;

#[derive(Parser)]
#[command(name = "conelab", version, about = "Numerical checks for cone-monotone skew-product flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Config file; a bundled config name (e.g. `pitchfork`) also works.
    #[arg(long)]
    config: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config, or the bundled suite when no config is given.
    Run(Common),
    /// Run one config along a parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// eps, n, horizon or delta
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Run only the axiom battery for a config's system.
    Battery(Common),
    /// Print a summary of a written report.json.
    Report {
        path: PathBuf,
    },
    /// List the bundled configs.
    List,
}

fn load(spec: &str) -> Result<ExperimentConfig, Error> {
    let p = Path::new(spec);
    if p.exists() {
        ExperimentConfig::load(p)
    } else if harness::bundled_names().contains(&spec) {
        harness::bundled(spec)
    } else {
        Err(Error::config("--config", format!("{spec:?} is neither a file nor a bundled config")))
    }
}

fn configs(common: &Common) -> Result<Vec<ExperimentConfig>, Error> {
    let mut cfgs = match &common.config {
        Some(c) => vec![load(c)?],
        None => harness::default_suite(),
    };
    if let Some(s) = common.seed {
        for c in &mut cfgs {
            c.seed = s;
        }
    }
    Ok(cfgs)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, many: bool) -> Option<PathBuf> {
    let base = common.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))?;
    Some(if many { base.join(&cfg.name) } else { base })
}

fn print_report(r: &RunReport) {
    println!("{} (seed {}): {}", r.body.name, r.body.seed, verdict(r.body.passed));
    for c in &r.body.checks {
        let margin = c.margin.map(|m| format!(" margin {m:.3e}")).unwrap_or_default();
        let err = c.error.as_ref().map(|e| format!(" error: {e}")).unwrap_or_default();
        println!("  {:<18} {}  trials {}{margin}{err}", c.name, verdict(c.passed), c.trials);
    }
}

fn verdict(p: bool) -> &'static str {
    if p {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run_many(common: &Common, cfgs: Vec<ExperimentConfig>) -> Result<bool, Error> {
    let many = cfgs.len() > 1;
    let mut all = true;
    for cfg in &cfgs {
        let r = harness::with_workers(common.workers, || harness::run(cfg))??;
        print_report(&r);
        if let Some(dir) = out_dir(common, cfg, many) {
            r.write(&dir)?;
        }
        all &= r.body.passed;
    }
    Ok(all)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run(common) => {
            let cfgs = configs(&common)?;
            run_many(&common, cfgs)
        }
        Command::Battery(common) => {
            let mut cfgs = configs(&common)?;
            for c in &mut cfgs {
                c.checks = vec![if matches!(c.system, harness::SystemConfig::Control) {
                    harness::CheckKind::BatteryControl
                } else {
                    harness::CheckKind::Battery
                }];
            }
            cfgs.retain(|c| c.validate().is_ok());
            run_many(&common, cfgs)
        }
        Command::Sweep { common, axis, values } => {
            let Some(cfg) = common.config.as_deref() else {
                return Err(Error::config("--config", "sweep needs a config"));
            };
            let mut cfg = load(cfg)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let axis: Axis = axis.parse()?;
            if values.is_empty() {
                return Err(Error::config("--values", "at least one value is required"));
            }
            let res = harness::with_workers(common.workers, || harness::sweep(&cfg, axis, &values))?;
            let csv = res.summary_csv();
            print!("{csv}");
            if let Some(dir) = out_dir(&common, &cfg, false) {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sweep.csv"), &csv)?;
                for (k, r) in res.reports.iter().enumerate() {
                    if let Ok(r) = r {
                        r.write(&dir.join(format!("point-{k:03}")))?;
                    }
                }
            }
            Ok(res.passed())
        }
        Command::Report { path } => {
            let text = std::fs::read_to_string(&path)?;
            let r: RunReport = serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            print_report(&r);
            Ok(r.body.passed)
        }
        Command::List => {
            for n in harness::bundled_names() {
                println!("{n}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
