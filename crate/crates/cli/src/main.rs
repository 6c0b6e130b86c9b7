use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lipbound_cli::config::{load_config, CheckSpec, ConfigError, RunConfig};
use lipbound_cli::{corpus, report, run, EXIT_ERROR, EXIT_FAIL, EXIT_PASS};
use lipbound_core::quadrature::surface_integral;
use lipbound_core::verify::named_volume_field;
use lipbound_core::{build_grid, recovery_ladder, BoundaryField, Status};

#[derive(Parser)]
#[command(
    name = "lipbound",
    version,
    about = "Surface calculus checks on Lipschitz graph patches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run verification checks and write results.csv and report.md.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check to run; repeatable. Defaults to the configured list.
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock seconds in the CSV.
        #[arg(long)]
        timings: bool,
        /// Only print the final summary line.
        #[arg(long)]
        quiet: bool,
    },
    /// Print patch areas over quadrature refinements.
    Measure {
        #[command(flatten)]
        common: Common,
    },
    /// Recover the weak gradient of a named trace over the degree ladder.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Volume field whose trace is recovered.
        #[arg(long, default_value = "sin-cos")]
        field: String,
        /// Basis degrees, comma separated.
        #[arg(long, value_delimiter = ',')]
        degrees: Vec<usize>,
    },
    /// List the built-in patches.
    Corpus,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to these patches; repeatable.
    #[arg(long = "patch")]
    patches: Vec<String>,
    /// Gauss-Legendre points per direction.
    #[arg(long)]
    order: Option<usize>,
    /// Number of uniform refinements.
    #[arg(long)]
    refinements: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::builtin(),
        };
        if !self.patches.is_empty() {
            let mut chosen = Vec::new();
            for name in &self.patches {
                let spec = config
                    .patches
                    .iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .or_else(|| corpus::lookup(name))
                    .ok_or_else(|| invalid("--patch", format!("unknown patch `{name}`")))?;
                chosen.push(spec);
            }
            config.patches = chosen;
        }
        if let Some(o) = self.order {
            if !(1..=64).contains(&o) {
                return Err(invalid("--order", "order must lie in 1..=64"));
            }
            config.settings.order = o;
        }
        if let Some(r) = self.refinements {
            if r > 6 {
                return Err(invalid("--refinements", "at most 6 refinements"));
            }
            config.settings.refinements = r;
        }
        if let Some(s) = self.seed {
            config.settings.seed = s;
        }
        Ok(config)
    }
}

fn invalid(pointer: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn configure_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("LIPBOUND_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("LIPBOUND_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn verify(
    common: &Common,
    checks: &[String],
    out: Option<PathBuf>,
    timings: bool,
    quiet: bool,
) -> Result<(String, i32), String> {
    let mut text = String::new();
    let mut config = common.resolve().map_err(|e| e.to_string())?;
    if !checks.is_empty() {
        config.checks = checks
            .iter()
            .map(|c| {
                config
                    .checks
                    .iter()
                    .find(|s| &s.name == c)
                    .cloned()
                    .or_else(|| CheckSpec::with_defaults(c))
                    .ok_or_else(|| format!("--check: unknown check `{c}`"))
            })
            .collect::<Result<_, _>>()?;
    }
    let dir = out.unwrap_or_else(|| config.output.clone());
    let reports = run::run(&config).map_err(|e| e.to_string())?;
    let (csv_path, _) =
        report::write_reports(&dir, &reports, timings).map_err(|e| format!("{}: {e}", dir.display()))?;
    if !quiet {
        for r in &reports {
            let asserted = r.cases.iter().any(|c| c.status != Status::NotAsserted);
            let verdict = match (asserted, r.pass()) {
                (false, _) => "report",
                (true, true) => "pass",
                (true, false) => "FAIL",
            };
            let _ = writeln!(
                text,
                "{:<16} {:<10} {:<6} max residual {:.3e}",
                r.check,
                r.patch,
                verdict,
                r.max_residual()
            );
        }
    }
    let passed = reports.iter().filter(|r| r.pass()).count();
    let _ = writeln!(
        text,
        "{passed}/{} suites passed; results in {}",
        reports.len(),
        csv_path.display()
    );
    Ok((text, if run::all_pass(&reports) { EXIT_PASS } else { EXIT_FAIL }))
}

fn measure(common: &Common) -> Result<(String, i32), String> {
    let mut text = String::new();
    let config = common.resolve().map_err(|e| e.to_string())?;
    let patches = config.build_patches().map_err(|e| e.to_string())?;
    let one = BoundaryField::constant(1.0);
    let _ = writeln!(text, "patch,refinement,nodes,area");
    for p in &patches {
        for r in 0..=config.settings.refinements {
            let grid = build_grid(p, config.settings.order, r).map_err(|e| e.to_string())?;
            let area = surface_integral(p, &grid, &one).map_err(|e| e.to_string())?;
            let _ = writeln!(text, "{},{r},{},{}", p.name(), grid.len(), report::format_number(area));
        }
    }
    Ok((text, EXIT_PASS))
}

fn recover(common: &Common, field: &str, degrees: &[usize]) -> Result<(String, i32), String> {
    let mut text = String::new();
    let mut config = common.resolve().map_err(|e| e.to_string())?;
    if !degrees.is_empty() {
        config.settings.degrees = degrees.to_vec();
    }
    let f = named_volume_field(field).ok_or_else(|| format!("--field: unknown field `{field}`"))?;
    let patches = config.build_patches().map_err(|e| e.to_string())?;
    let _ = writeln!(text, "patch,degree,error,residual_norm,condition");
    for p in &patches {
        match recovery_ladder(p, &config.settings, &f) {
            Ok(steps) => {
                for s in steps {
                    let _ = writeln!(
                        text,
                        "{},{},{},{},{}",
                        p.name(),
                        s.degree,
                        report::format_number(s.error),
                        report::format_number(s.residual_norm),
                        report::format_number(s.condition)
                    );
                }
            }
            Err(e) => eprintln!("{}: {e}", p.name()),
        }
    }
    Ok((text, EXIT_PASS))
}

fn list_corpus() -> (String, i32) {
    let mut text = String::from("name,graph,domain,epsilon,h,tags\n");
    for p in corpus::builtin() {
        let r = p.domain.bounding_rect();
        let tags: Vec<_> = p.tags.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            text,
            "{},{},[{};{}]x[{};{}],{},{},{}",
            p.name,
            p.graph,
            r.lo[0],
            r.hi[0],
            r.lo[1],
            r.hi[1],
            p.epsilon,
            p.h,
            tags.join(" ")
        );
    }
    (text, EXIT_PASS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ERROR as u8);
    }
    let result = match &cli.command {
        Command::Verify {
            common,
            checks,
            out,
            timings,
            quiet,
        } => verify(common, checks, out.clone(), *timings, *quiet),
        Command::Measure { common } => measure(common),
        Command::Recover { common, field, degrees } => recover(common, field, degrees),
        Command::Corpus => Ok(list_corpus()),
    };
    match result {
        Ok((text, code)) => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Ok(()) => ExitCode::from(code as u8),
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::from(code as u8),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_ERROR as u8)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
