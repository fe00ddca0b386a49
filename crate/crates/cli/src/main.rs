use std::path::PathBuf;
use std::process::ExitCode;

use anisocheck::report::{self, RunConfig, EXIT_USAGE};
use anisocheck::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Ellipticity probes for anisotropic integrands on Grassmannians.
#[derive(Debug, Parser)]
#[command(name = "anisocheck", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate an ellipticity constant or search for a rank violation.
    Check {
        condition: CheckArg,
        #[command(flatten)]
        flags: Flags,
    },
    /// Regularity diagnostics on a discretized graph.
    Graph {
        probe: GraphArg,
        #[command(flatten)]
        flags: Flags,
    },
    /// Experiments for ℓᵖ norms of Plücker coordinates in G(4,2).
    Pluecker {
        action: PlueckerArg,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the command named by `command=` in a config file.
    Run {
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CheckArg {
    Sac1,
    Sac,
    Usac,
    Ac1,
    Ac2,
    SearchAc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphArg {
    Curvature,
    Excess,
    Caccioppoli,
    Quasiconvexity,
    Lh,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlueckerArg {
    ScanSac,
    Subminors,
}

/// Settings shared by every command. Values are validated by the library,
/// after merging defaults, the config file and these flags (in that order).
#[derive(Debug, Args)]
struct Flags {
    /// key=value file with the same settings as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// `area`, `perturbed-area:<eps>:<seed>` or `lp-pluecker:<p>`
    #[arg(long)]
    integrand: Option<String>,
    /// ambient dimension N
    #[arg(long)]
    ambient: Option<String>,
    /// plane dimension m
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    measures: Option<String>,
    /// maximal number of atoms per measure
    #[arg(long)]
    atoms: Option<String>,
    /// evaluation budget of the rank-violation search
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    p: Option<String>,
    /// gridfield text file
    #[arg(long)]
    field: Option<PathBuf>,
    /// ball center, comma separated
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    /// matrix `A`, rows separated by `;`, entries by `,`
    #[arg(long)]
    a: Option<String>,
    /// graph slope `X` for the Legendre–Hadamard probe, same layout as `--a`
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// random starts of the Legendre–Hadamard probe
    #[arg(long)]
    starts: Option<String>,
    /// points per axis of the default quasiconvexity grid
    #[arg(long)]
    grid_points: Option<String>,
    #[arg(long)]
    tol_rank: Option<String>,
    #[arg(long)]
    min_separation: Option<String>,
    #[arg(long)]
    margin: Option<String>,
    /// json or csv
    #[arg(long)]
    format: Option<String>,
    /// write the document here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("integrand", self.integrand.clone()),
            ("ambient", self.ambient.clone()),
            ("dim", self.dim.clone()),
            ("seed", self.seed.clone()),
            ("samples", self.samples.clone()),
            ("measures", self.measures.clone()),
            ("atoms", self.atoms.clone()),
            ("budget", self.budget.clone()),
            ("p", self.p.clone()),
            ("field", path(&self.field)),
            ("point", self.point.clone()),
            ("radius", self.radius.clone()),
            ("a", self.a.clone()),
            ("x", self.matrix.clone()),
            ("alpha", self.alpha.clone()),
            ("starts", self.starts.clone()),
            ("grid_points", self.grid_points.clone()),
            ("tol_rank", self.tol_rank.clone()),
            ("min_separation", self.min_separation.clone()),
            ("margin", self.margin.clone()),
            ("format", self.format.clone()),
            ("output", path(&self.output)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

fn command_name(command: &Command) -> Option<String> {
    let name = |v: &dyn ValueEnumName| v.name();
    match command {
        Command::Check { condition, .. } => Some(format!("check {}", name(condition))),
        Command::Graph { probe, .. } => Some(format!("graph {}", name(probe))),
        Command::Pluecker { action, .. } => Some(format!("pluecker {}", name(action))),
        Command::Run { .. } => None,
    }
}

trait ValueEnumName {
    fn name(&self) -> String;
}

impl<T: ValueEnum> ValueEnumName for T {
    fn name(&self) -> String {
        self.to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default()
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let flags = match &cli.command {
        Command::Check { flags, .. }
        | Command::Graph { flags, .. }
        | Command::Pluecker { flags, .. }
        | Command::Run { flags } => flags,
    };
    let mut config = RunConfig::default();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
        config.apply_kv(&text)?;
    }
    if let Some(name) = command_name(&cli.command) {
        config.set("command", &name)?;
    }
    for (k, v) in flags.pairs() {
        config.set(k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let outcome = report::threads_from_env()
        .and_then(|threads| Ok((threads, build_config(&cli)?)))
        .and_then(|(threads, config)| {
            let (code, text) = report::execute(&config, threads)?;
            Ok((code, text, config.output.is_none()))
        });
    match outcome {
        Ok((code, text, to_stdout)) => {
            if to_stdout {
                print!("{text}");
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            // every error here traces back to the invocation or its inputs
            eprintln!("anisocheck: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
