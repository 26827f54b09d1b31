use std::fs;
use std::path::{Path, PathBuf};

use normnet::dag_compiler::{compile_dag_with, gallery_dag, rate_table, DagOptions, DagSpec, NodeFunction, GALLERY_DAGS};
use normnet::error::Error;
use normnet::holder_compiler::{
    builtin_oracle, compile_holder_for_budget_with, compile_holder_with, precompose_box, FunctionOracle, HolderOptions,
    BUILTIN_ORACLES, DEFAULT_MAX_WEIGHTS,
};
use normnet::net_ir::{deserialize, serialize};
use normnet::stats_lab::{erm_sweep, median_by_n, OptimizerConfig};
use normnet::verify::{audit_norms, rate_sweep, sup_error, AuditReport, SweepTarget};
use serde::{Deserialize, Serialize};

use crate::config::{Command, RunConfig};

/// Run failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Budget(String),
    Certificate(String),
    Oracle(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Budget(_) => 3,
            Failure::Certificate(_) => 4,
            Failure::Oracle(_) => 5,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Budget(m) | Failure::Certificate(m) | Failure::Oracle(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::BudgetInfeasible { .. } => Failure::Budget(m),
            Error::OracleInconsistency { .. } => Failure::Oracle(m),
            Error::TrainingFailure(_) => Failure::Runtime(m),
            Error::Dimension(_) | Error::Invalid(_) | Error::Parse { .. } | Error::SizeLimit { .. } => Failure::Config(m),
        }
    }
}

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, content).map_err(io(&p))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write(dir, name, &(s + "\n"))
}

/// Holder target file: one builtin node function on a box.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFile {
    function: NodeFunction,
    dim: usize,
    alpha: f64,
    #[serde(default)]
    domain_box: Option<Vec<[f64; 2]>>,
}

fn is_file_target(t: &str) -> bool {
    t.ends_with(".json") || Path::new(t).is_file()
}

fn holder_target(t: &str) -> Result<FunctionOracle, Failure> {
    let o = if is_file_target(t) {
        let p = PathBuf::from(t);
        let text = fs::read_to_string(&p).map_err(|e| Failure::Config(format!("{t}: {e}")))?;
        let f: OracleFile = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{t}: {e}")))?;
        let bx = f.domain_box.map(|b| b.iter().map(|p| (p[0], p[1])).collect()).unwrap_or(vec![(0.0, 1.0); f.dim]);
        f.function.oracle(t, f.dim, f.alpha, bx)?
    } else {
        builtin_oracle(t).map_err(|_| {
            Failure::Config(format!("unknown holder target '{t}' (builtins: {})", BUILTIN_ORACLES.join(", ")))
        })?
    };
    if o.is_unit_cube() {
        Ok(o)
    } else {
        Ok(precompose_box(&o)?)
    }
}

fn dag_target(t: &str) -> Result<DagSpec, Failure> {
    if is_file_target(t) {
        let text = fs::read_to_string(t).map_err(|e| Failure::Config(format!("{t}: {e}")))?;
        Ok(DagSpec::parse(&text)?)
    } else {
        gallery_dag(t).map_err(|_| Failure::Config(format!("unknown DAG target '{t}' (gallery: {})", GALLERY_DAGS.join(", "))))
    }
}

fn sweep_target(t: &str) -> Result<SweepTarget, Failure> {
    if !is_file_target(t) && GALLERY_DAGS.contains(&t) {
        return Ok(SweepTarget::Dag(dag_target(t)?));
    }
    if is_file_target(t) {
        let text = fs::read_to_string(t).map_err(|e| Failure::Config(format!("{t}: {e}")))?;
        if text.contains("\"levels\"") {
            return Ok(SweepTarget::Dag(DagSpec::parse(&text)?));
        }
    }
    Ok(SweepTarget::Holder(holder_target(t)?))
}

fn require<T: Clone>(v: &Option<T>, what: &str, cmd: Command) -> Result<T, Failure> {
    v.clone().ok_or_else(|| Failure::Config(format!("{} requires {what}", cmd.name())))
}

fn audit_failures(a: &AuditReport) -> Vec<String> {
    a.violations.iter().map(|v| v.detail.clone()).collect()
}

/// Outcome lines and the list of failed checks.
struct Checks {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self { lines: Vec::new(), failed: Vec::new() }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.lines.push(format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn finish(self, dir: &Path, header: &str) -> Result<(), Failure> {
        let mut s = String::from(header);
        s.push('\n');
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        write(dir, "summary.txt", &s)?;
        if self.failed.is_empty() {
            Ok(())
        } else {
            Err(Failure::Certificate(format!("failed checks: {}", self.failed.join(", "))))
        }
    }
}

#[derive(Serialize)]
struct HolderSummary<'a> {
    target: &'a str,
    k: usize,
    grid_n: usize,
    depth: usize,
    width: usize,
    nnz: usize,
    term_count: usize,
    kappa: f64,
    kappa_bound: f64,
    budget: f64,
    kphi_bound: f64,
    error_bound: f64,
    formula_error_bound: f64,
    rate_exponent: f64,
    measured_sup_error: f64,
    argmax: &'a [f64],
    probes: usize,
    warnings: &'a [String],
}

pub fn compile_holder(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let cmd = Command::CompileHolder;
    let target = require(&cfg.target, "--target", cmd)?;
    let oracle = holder_target(&target)?;
    let opts = HolderOptions { max_weights: cfg.max_weights.unwrap_or(DEFAULT_MAX_WEIGHTS) };
    let res = match (cfg.k, cfg.budget) {
        (Some(k), None) => compile_holder_with(&oracle, k, &opts)?,
        (None, Some(b)) => compile_holder_for_budget_with(&oracle, b, &opts)?,
        _ => return Err(Failure::Config("compile-holder needs exactly one of --k and --budget".into())),
    };
    let plan = cfg.plan(vec![(0.0, 1.0); oracle.dim], 4096);
    let f = |x: &[f64]| oracle.eval(x);
    let sup = sup_error(&res.network, &f, &plan)?;
    let audit = audit_norms(&res.network, &res.certificate);
    fs::create_dir_all(dir).map_err(io(dir))?;
    write(dir, "network.json", &serialize(&res.network, &res.certificate))?;
    write_json(
        dir,
        "certificate.json",
        &HolderSummary {
            target: &target,
            k: res.chosen_k,
            grid_n: res.chosen_n,
            depth: res.depth,
            width: res.network.hidden_width(),
            nnz: res.network.nnz(),
            term_count: res.term_count,
            kappa: res.certificate.kappa,
            kappa_bound: res.certificate.bound,
            budget: res.certificate.budget,
            kphi_bound: res.kphi_bound,
            error_bound: res.error_bound,
            formula_error_bound: res.formula_error_bound,
            rate_exponent: res.rate_exponent,
            measured_sup_error: sup.max_error,
            argmax: &sup.argmax,
            probes: sup.probes,
            warnings: &res.warnings,
        },
    )?;
    write_json(dir, "audit.json", &audit)?;
    let mut c = Checks::new();
    c.check("audit", audit.clean(), format!("{:?}", audit_failures(&audit)));
    c.check("kappa<=bound", res.certificate.kappa <= res.certificate.bound, format!("{:e} vs {:e}", res.certificate.kappa, res.certificate.bound));
    c.check("sup_error<=error_bound", sup.max_error <= res.error_bound, format!("{:e} vs {:e}", sup.max_error, res.error_bound));
    c.finish(dir, &format!("compile-holder {target} k={} N={}", res.chosen_k, res.chosen_n))
}

pub fn compile_dag(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let cmd = Command::CompileDag;
    let target = require(&cfg.target, "--target", cmd)?;
    let budget = require(&cfg.budget, "--budget", cmd)?;
    let spec = dag_target(&target)?;
    let mut opts = DagOptions::default();
    if let Some(m) = cfg.max_weights {
        opts.max_weights_per_node = m;
    }
    let c = compile_dag_with(&spec, budget, &opts)?;
    let plan = cfg.plan(spec.input_box.clone(), 1024);
    let f = |x: &[f64]| spec.evaluate(x);
    let sup = sup_error(&c.network.net, &f, &plan)?;
    let audit = audit_norms(&c.network.net, &c.network.cert);
    fs::create_dir_all(dir).map_err(io(dir))?;
    write(dir, "network.json", &serialize(&c.network.net, &c.network.cert))?;
    write_json(dir, "rate_certificate.json", &c.rate)?;
    write_json(dir, "rate_table.json", &rate_table(&spec))?;
    write_json(dir, "audit.json", &audit)?;
    write_json(dir, "sup_error.json", &sup)?;
    let mut ch = Checks::new();
    ch.check("audit", audit.clean(), format!("{:?}", audit_failures(&audit)));
    ch.check(
        "depth",
        c.network.net.depth() == spec.network_depth(),
        format!("{} vs {}", c.network.net.depth(), spec.network_depth()),
    );
    ch.check("kappa<=K", c.network.net.kappa() <= budget, format!("{:e} vs {budget:e}", c.network.net.kappa()));
    ch.check(
        "sup_error<=total_error_bound",
        sup.max_error <= c.rate.total_error_bound,
        format!("{:e} vs {:e}", sup.max_error, c.rate.total_error_bound),
    );
    ch.finish(dir, &format!("compile-dag {target} K={budget:e}"))
}

pub fn verify(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let cmd = Command::Verify;
    let path = crate::config::resolve(&require(&cfg.network, "--network", cmd)?);
    let text = fs::read_to_string(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let (net, cert) = deserialize(&text).map_err(|e| Failure::Certificate(format!("{}: {e}", path.display())))?;
    let audit = audit_norms(&net, &cert);
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_json(dir, "audit.json", &audit)?;
    let mut c = Checks::new();
    c.check("audit", audit.clean(), format!("{:?}", audit_failures(&audit)));
    if let Some(t) = &cfg.target {
        let sup = match sweep_target(t)? {
            SweepTarget::Holder(o) => {
                let f = |x: &[f64]| o.eval(x);
                sup_error(&net, &f, &cfg.plan(vec![(0.0, 1.0); o.dim], 4096))?
            }
            SweepTarget::Dag(s) => {
                let f = |x: &[f64]| s.evaluate(x);
                sup_error(&net, &f, &cfg.plan(s.input_box.clone(), 1024))?
            }
        };
        write_json(dir, "sup_error.json", &sup)?;
        match cfg.error_bound {
            Some(b) => c.check("sup_error<=error_bound", sup.max_error <= b, format!("{:e} vs {b:e}", sup.max_error)),
            None => c.lines.push(format!("INFO sup_error: {:e}", sup.max_error)),
        }
    }
    c.finish(dir, &format!("verify {}", path.display()))
}

pub fn rate_sweep_cmd(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let cmd = Command::RateSweep;
    let target = require(&cfg.target, "--target", cmd)?;
    let budgets = require(&cfg.budgets, "--budgets", cmd)?;
    if budgets.len() < 3 {
        return Err(Failure::Config(format!("rate-sweep needs at least 3 budgets, got {}", budgets.len())));
    }
    let t = sweep_target(&target)?;
    let plan = match &t {
        SweepTarget::Holder(o) => cfg.plan(vec![(0.0, 1.0); o.dim], 4096),
        SweepTarget::Dag(s) => cfg.plan(s.input_box.clone(), 512),
    };
    let r = rate_sweep(&t, &budgets, &plan)?;
    fs::create_dir_all(dir).map_err(io(dir))?;
    write(dir, "rate_sweep.csv", &r.to_csv())?;
    write_json(dir, "rate_sweep.json", &r)?;
    let mut c = Checks::new();
    c.check("bounds_dominate", r.bounds_dominate(), format!("{} points", r.points.len()));
    c.lines.push(format!("INFO monotone: {}", r.monotone()));
    c.lines.push(format!("INFO fitted_slope: {} theoretical_exponent: {}", r.fitted_slope, r.theoretical_exponent));
    c.finish(dir, &format!("rate-sweep {target}"))
}

pub fn erm_sweep_cmd(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    let target = cfg.target.clone().unwrap_or_else(|| "binarytree-d4".into());
    let spec = dag_target(&target)?;
    let ns = cfg.ns.clone().unwrap_or_else(|| vec![64, 256, 1024, 4096]);
    let seeds = cfg.seeds.clone().unwrap_or_else(|| vec![1, 2, 3]);
    if ns.is_empty() || seeds.is_empty() {
        return Err(Failure::Config("erm-sweep needs nonempty ns and seeds".into()));
    }
    let mut opt = OptimizerConfig::default();
    if let Some(e) = cfg.epochs {
        opt.epochs = e;
    }
    let mult = cfg.k_multiplier.unwrap_or(1.0);
    let rows = erm_sweep(&spec, &ns, &seeds, cfg.width.unwrap_or(32), cfg.depth.unwrap_or(2), mult, &opt)?;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let p = dir.join("erm_sweep.csv");
    let mut w = csv::Writer::from_path(&p).map_err(io(&p))?;
    w.write_record(["n", "K", "seed", "empirical_risk", "test_risk", "excess", "stderr", "kappa"]).map_err(io(&p))?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            r.empirical_risk.to_string(),
            r.test_risk.to_string(),
            r.excess.to_string(),
            r.stderr.to_string(),
            r.kappa.to_string(),
        ])
        .map_err(io(&p))?;
    }
    w.flush().map_err(io(&p))?;
    let mut timing = String::from("n,seed,runtime_s\n");
    for r in &rows {
        timing.push_str(&format!("{},{},{}\n", r.n, r.seed, r.runtime_s));
    }
    write(dir, "erm_timing.csv", &timing)?;
    let mut c = Checks::new();
    for r in &rows {
        c.check(&format!("kappa<=K n={} seed={}", r.n, r.seed), r.kappa <= r.k * (1.0 + 1e-9), format!("{} vs {}", r.kappa, r.k));
    }
    for (n, k, e, se) in median_by_n(&rows) {
        c.lines.push(format!("INFO n={n} K={k} median_excess={e} stderr={se}"));
    }
    c.finish(dir, &format!("erm-sweep {target}"))
}

#[derive(Deserialize)]
struct ErmCsvRow {
    n: usize,
    #[serde(rename = "K")]
    k: f64,
    seed: u64,
    empirical_risk: f64,
    test_risk: f64,
    excess: f64,
    stderr: f64,
    #[allow(dead_code)]
    kappa: f64,
}

pub fn report(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = crate::config::resolve(&require(&cfg.output, "--output (run directory)", Command::Report)?);
    if !dir.is_dir() {
        return Err(Failure::Config(format!("{} is not a directory", dir.display())));
    }
    let mut out = String::new();
    let mut found = false;
    let rs = dir.join("rate_sweep.json");
    if rs.is_file() {
        found = true;
        let text = fs::read_to_string(&rs).map_err(io(&rs))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", rs.display())))?;
        out.push_str(&format!("rate sweep: {}\n", v["target"].as_str().unwrap_or("?")));
        out.push_str(&format!("{:>14} {:>6} {:>14} {:>14}\n", "K", "k", "measured", "certified"));
        for p in v["points"].as_array().cloned().unwrap_or_default() {
            out.push_str(&format!(
                "{:>14.4e} {:>6} {:>14.6e} {:>14.6e}\n",
                p["budget"].as_f64().unwrap_or(f64::NAN),
                p["k"].as_u64().unwrap_or(0),
                p["measured_error"].as_f64().unwrap_or(f64::NAN),
                p["certified_bound"].as_f64().unwrap_or(f64::NAN)
            ));
        }
        out.push_str(&format!(
            "fitted_slope {:.6}  theoretical_exponent {:.6}\n\n",
            v["fitted_slope"].as_f64().unwrap_or(f64::NAN),
            v["theoretical_exponent"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    let es = dir.join("erm_sweep.csv");
    if es.is_file() {
        found = true;
        let mut r = csv::Reader::from_path(&es).map_err(|e| Failure::Config(format!("{}: {e}", es.display())))?;
        let rows: Vec<ErmCsvRow> = r
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Config(format!("{}: {e}", es.display())))?;
        out.push_str("erm sweep\n");
        out.push_str(&format!("{:>6} {:>5} {:>12} {:>14} {:>14} {:>14} {:>12}\n", "n", "seed", "K", "empirical", "test", "excess", "stderr"));
        for x in &rows {
            out.push_str(&format!(
                "{:>6} {:>5} {:>12.4} {:>14.6e} {:>14.6e} {:>14.6e} {:>12.3e}\n",
                x.n, x.seed, x.k, x.empirical_risk, x.test_risk, x.excess, x.stderr
            ));
        }
        out.push('\n');
    }
    if !found {
        return Err(Failure::Config(format!("{} holds no sweep results", dir.display())));
    }
    write(&dir, "report.txt", &out)
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<(), Failure> {
    let dir = cfg.output_dir(cmd);
    match cmd {
        Command::CompileHolder => compile_holder(cfg, &dir),
        Command::CompileDag => compile_dag(cfg, &dir),
        Command::Verify => verify(cfg, &dir),
        Command::RateSweep => rate_sweep_cmd(cfg, &dir),
        Command::ErmSweep => erm_sweep_cmd(cfg, &dir),
        Command::Report => report(cfg),
    }
}

