use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use normnet::verify::{ProbeKind, ProbePlan};
use serde::Deserialize;

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "NORMNET_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CompileHolder,
    CompileDag,
    Verify,
    RateSweep,
    ErmSweep,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CompileHolder => "compile-holder",
            Command::CompileDag => "compile-dag",
            Command::Verify => "verify",
            Command::RateSweep => "rate-sweep",
            Command::ErmSweep => "erm-sweep",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKindArg {
    UniformGrid,
    LowDiscrepancy,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: Option<ProbeKindArg>,
    pub count: Option<usize>,
}

/// Every option a run can take. Fields left unset fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin oracle or gallery DAG name, or a JSON spec file.
    #[arg(long)]
    pub target: Option<String>,
    /// Accuracy parameter k for compile-holder.
    #[arg(long)]
    pub k: Option<usize>,
    /// Norm budget K.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Budgets for rate-sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// Network file for verify.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Error bound that verify checks the measured sup error against.
    #[arg(long)]
    pub error_bound: Option<f64>,
    /// Output directory (run directory for report).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip)]
    pub probe_kind: Option<ProbeKindArg>,
    #[arg(long)]
    #[serde(skip)]
    pub probe_count: Option<usize>,
    #[arg(skip)]
    pub probes: Option<ProbeConfig>,
    /// Sample sizes for erm-sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Seeds for erm-sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Constant in front of the n-dependent budget schedule.
    #[arg(long)]
    pub k_multiplier: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stored-weight cap for a single compile.
    #[arg(long)]
    pub max_weights: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<Command>,
    #[serde(flatten)]
    run: RunConfigFile,
}

/// Mirror of [`RunConfig`] for files, where the probe block is a table.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    target: Option<String>,
    k: Option<usize>,
    budget: Option<f64>,
    budgets: Option<Vec<f64>>,
    network: Option<PathBuf>,
    error_bound: Option<f64>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    probes: Option<ProbeConfig>,
    ns: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    width: Option<usize>,
    depth: Option<usize>,
    k_multiplier: Option<f64>,
    epochs: Option<usize>,
    max_weights: Option<u64>,
}

impl RunConfig {
    /// Reads a config file; its `command` (if present) must match.
    pub fn load(path: &Path, command: Command) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        // serde's flatten does not honor deny_unknown_fields, so check keys first.
        let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
        const KEYS: &[&str] = &[
            "command", "target", "k", "budget", "budgets", "network", "error_bound", "output", "seed", "probes", "ns",
            "seeds", "width", "depth", "k_multiplier", "epochs", "max_weights",
        ];
        if let Some(bad) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(format!("{}: unknown key '{bad}'", path.display()));
        }
        let f: ConfigFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(c) = f.command {
            if c != command {
                return Err(format!("config is for '{}', not '{}'", c.name(), command.name()));
            }
        }
        let r = f.run;
        Ok(RunConfig {
            target: r.target,
            k: r.k,
            budget: r.budget,
            budgets: r.budgets,
            network: r.network,
            error_bound: r.error_bound,
            output: r.output,
            seed: r.seed,
            probe_kind: None,
            probe_count: None,
            probes: r.probes,
            ns: r.ns,
            seeds: r.seeds,
            width: r.width,
            depth: r.depth,
            k_multiplier: r.k_multiplier,
            epochs: r.epochs,
            max_weights: r.max_weights,
        })
    }

    /// Flags given on the command line win over the file.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(target, k, budget, budgets, network, error_bound, output, seed, ns, seeds, width, depth, k_multiplier, epochs, max_weights);
        let mut p = self.probes.take().unwrap_or_default();
        if flags.probe_kind.is_some() {
            p.kind = flags.probe_kind;
        }
        if flags.probe_count.is_some() {
            p.count = flags.probe_count;
        }
        self.probes = Some(p);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn plan(&self, domain: Vec<(f64, f64)>, default_count: usize) -> ProbePlan {
        let p = self.probes.clone().unwrap_or_default();
        let count = p.count.unwrap_or(default_count);
        match p.kind.unwrap_or(ProbeKindArg::LowDiscrepancy) {
            ProbeKindArg::UniformGrid => ProbePlan { kind: ProbeKind::UniformGrid, count, seed: self.seed(), domain },
            ProbeKindArg::LowDiscrepancy => ProbePlan::sobol(count, self.seed(), domain),
        }
    }

    /// Output directory, resolved against the output root when relative.
    pub fn output_dir(&self, command: Command) -> PathBuf {
        let p = self.output.clone().unwrap_or_else(|| PathBuf::from("normnet-out").join(command.name()));
        resolve(&p)
    }
}

pub fn resolve(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => std::env::current_dir().map(|c| c.join(p)).unwrap_or_else(|_| p.to_path_buf()),
    }
}
