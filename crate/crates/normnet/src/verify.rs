//! Empirical checks of certified claims: probe-set sup errors, norm audits,
//! partition-of-unity residuals, rate sweeps and critical-path tracing.
//!
//! Every reduction runs over an ordered vector, so results do not depend on
//! the thread schedule.

use serde::Serialize;

use crate::dag_compiler::{compile_dag, node_exponent, CompiledDag, DagSpec};
use crate::error::{invalid, Error, Result};
use crate::holder_compiler::{compile_holder_for_budget, grid_points, FunctionOracle};
use crate::net_algebra::rescale;
use crate::net_ir::{CertifiedNet, FrobeniusCertificate, Network};
use crate::par;
use crate::primitives::hat_product_ref;

/// Relative tolerance for certificate comparisons.
pub const AUDIT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    UniformGrid,
    LowDiscrepancy,
}

/// Deterministic probe set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbePlan {
    pub kind: ProbeKind,
    pub count: usize,
    pub seed: u64,
    pub domain: Vec<(f64, f64)>,
}

/// Sobol points per scramble seed.
const SOBOL_BLOCK: usize = 1 << 16;

impl ProbePlan {
    pub fn grid(count: usize, domain: Vec<(f64, f64)>) -> Self {
        Self { kind: ProbeKind::UniformGrid, count, seed: 0, domain }
    }

    pub fn sobol(count: usize, seed: u64, domain: Vec<(f64, f64)>) -> Self {
        Self { kind: ProbeKind::LowDiscrepancy, count, seed, domain }
    }

    pub fn unit(kind: ProbeKind, count: usize, seed: u64, d: usize) -> Self {
        Self { kind, count, seed, domain: vec![(0.0, 1.0); d] }
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    /// Grid points per axis: the smallest m with m^d ≥ count.
    pub fn per_axis(&self) -> usize {
        let d = self.dim() as i32;
        let mut m = (self.count as f64).powf(1.0 / d as f64).round().max(2.0) as usize;
        while (m as f64).powi(d) < self.count as f64 {
            m += 1;
        }
        while m > 2 && ((m - 1) as f64).powi(d) >= self.count as f64 {
            m -= 1;
        }
        m
    }

    /// Typical spacing along axis j.
    pub fn cell(&self, j: usize) -> f64 {
        let (a, b) = self.domain[j];
        match self.kind {
            ProbeKind::UniformGrid => (b - a) / (self.per_axis() - 1) as f64,
            ProbeKind::LowDiscrepancy => (b - a) / (self.count as f64).powf(1.0 / self.dim() as f64),
        }
    }

    /// Flat row-major point array.
    pub fn points(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        if d == 0 || self.count == 0 {
            return invalid("probe plan needs a nonempty domain and a positive count");
        }
        match self.kind {
            ProbeKind::UniformGrid => {
                let m = self.per_axis();
                let total = m.pow(d as u32);
                let mut out = Vec::with_capacity(total * d);
                for idx in 0..total {
                    let mut rem = idx;
                    for &(a, b) in &self.domain {
                        let j = rem % m;
                        rem /= m;
                        out.push(a + (b - a) * j as f64 / (m - 1) as f64);
                    }
                }
                Ok(out)
            }
            ProbeKind::LowDiscrepancy => {
                if d > 256 {
                    return invalid("low-discrepancy probes support at most 256 dimensions");
                }
                let mut out = Vec::with_capacity(self.count * d);
                for i in 0..self.count {
                    let block = (i / SOBOL_BLOCK) as u64;
                    let seed = block_seed(self.seed, block);
                    let idx = (i % SOBOL_BLOCK) as u32;
                    for (j, &(a, b)) in self.domain.iter().enumerate() {
                        let u = sobol_burley::sample(idx, j as u32, seed) as f64;
                        out.push(a + (b - a) * u);
                    }
                }
                Ok(out)
            }
        }
    }
}

fn block_seed(seed: u64, block: u64) -> u32 {
    let mut z = seed ^ block.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupError {
    pub max_error: f64,
    pub argmax: Vec<f64>,
    pub probes: usize,
}

fn first_argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &e) in v.iter().enumerate() {
        if e > best.1 || e.is_nan() {
            best = (i, if e.is_nan() { f64::INFINITY } else { e });
        }
    }
    best
}

fn abs_errors(net: &Network, reference: &(dyn Fn(&[f64]) -> f64 + Sync), pts: &[f64]) -> Result<Vec<f64>> {
    let d = net.input_dim();
    let y = net.evaluate_many(pts)?;
    let o = net.output_dim();
    let refs = par::map_chunks(pts, d, |x| reference(x));
    Ok(refs.iter().enumerate().map(|(i, r)| (y[i * o] - r).abs()).collect())
}

/// Probe-set sup of |net − reference|, refined by a 10× finer grid in a
/// ±1-cell box around the first argmax.
pub fn sup_error(net: &Network, reference: &(dyn Fn(&[f64]) -> f64 + Sync), plan: &ProbePlan) -> Result<SupError> {
    let d = plan.dim();
    if net.input_dim() != d {
        return Err(Error::Dimension(format!("plan has {d} coordinates, network {}", net.input_dim())));
    }
    let pts = plan.points()?;
    let errs = abs_errors(net, reference, &pts)?;
    let (i, e) = first_argmax(&errs);
    let mut best = SupError { max_error: e, argmax: pts[i * d..(i + 1) * d].to_vec(), probes: errs.len() };
    let per = zoom_per_axis(d, plan.count);
    if per >= 2 {
        let centre = best.argmax.clone();
        let total = per.pow(d as u32);
        let mut z = Vec::with_capacity(total * d);
        for idx in 0..total {
            let mut rem = idx;
            for j in 0..d {
                let t = rem % per;
                rem /= per;
                let h = plan.cell(j);
                let (a, b) = plan.domain[j];
                z.push((centre[j] - h + 2.0 * h * t as f64 / (per - 1) as f64).clamp(a, b));
            }
        }
        let ze = abs_errors(net, reference, &z)?;
        let (zi, zmax) = first_argmax(&ze);
        best.probes += ze.len();
        if zmax > best.max_error {
            best.max_error = zmax;
            best.argmax = z[zi * d..(zi + 1) * d].to_vec();
        }
    }
    Ok(best)
}

/// 21 points per axis (10 sub-steps per cell on each side), reduced so the
/// zoom stays under min(10⁴, max(count, 3^d)) points.
fn zoom_per_axis(d: usize, count: usize) -> usize {
    let cap = (count as f64).max(3f64.powi(d as i32)).min(1e4);
    let mut per = 21usize;
    while per > 2 && (per as f64).powi(d as i32) > cap {
        per -= 1;
    }
    per
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAudit {
    pub layer: usize,
    pub recomputed: f64,
    pub recorded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Recomputed κ disagrees with the recorded κ or exceeds the bound or budget.
    Kappa,
    /// A per-layer augmented norm disagrees with the recorded value.
    LayerNorm,
    /// Recorded final norm disagrees.
    FinalNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub kappa: f64,
    pub recorded_kappa: f64,
    pub bound: f64,
    pub budget: f64,
    pub layers: Vec<LayerAudit>,
    pub final_norm: f64,
    /// ‖Â_D‖_F after rescaling; equals κ.
    pub rescaled_final_norm: f64,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn kappa_violations(&self) -> usize {
        self.violations.iter().filter(|v| v.kind == ViolationKind::Kappa).count()
    }

    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn rel_gt(a: f64, b: f64) -> bool {
    a > b * (1.0 + AUDIT_RTOL) + f64::MIN_POSITIVE
}

fn rel_ne(a: f64, b: f64) -> bool {
    (a - b).abs() > AUDIT_RTOL * a.abs().max(b.abs())
}

/// Recomputes κ and every per-layer augmented norm and compares them with
/// the certificate.
pub fn audit_norms(net: &Network, cert: &FrobeniusCertificate) -> AuditReport {
    let norms = net.per_layer_norms();
    let kappa = net.kappa();
    let final_norm = net.final_matrix().frobenius();
    let mut violations = Vec::new();
    let mut kappa_issues = Vec::new();
    if !kappa.is_finite() || rel_ne(kappa, cert.kappa) {
        kappa_issues.push(format!("recomputed κ {kappa:e} ≠ recorded {:e}", cert.kappa));
    }
    if rel_gt(kappa, cert.bound) {
        kappa_issues.push(format!("κ {kappa:e} exceeds bound {:e}", cert.bound));
    }
    if rel_gt(kappa, cert.budget) {
        kappa_issues.push(format!("κ {kappa:e} exceeds budget {:e}", cert.budget));
    }
    if !kappa_issues.is_empty() {
        violations.push(Violation { kind: ViolationKind::Kappa, detail: kappa_issues.join("; ") });
    }
    let mut layers = Vec::with_capacity(norms.len());
    for (l, &n) in norms.iter().enumerate() {
        let rec = cert.per_layer_norms.get(l).copied().unwrap_or(f64::NAN);
        if rec.is_nan() || rel_ne(n, rec) {
            violations.push(Violation {
                kind: ViolationKind::LayerNorm,
                detail: format!("layer {l}: recomputed {n:e}, recorded {rec:e}"),
            });
        }
        layers.push(LayerAudit { layer: l, recomputed: n, recorded: rec });
    }
    if cert.per_layer_norms.len() != norms.len() {
        violations.push(Violation {
            kind: ViolationKind::LayerNorm,
            detail: format!("{} recorded layer norms for {} layers", cert.per_layer_norms.len(), norms.len()),
        });
    }
    if rel_ne(final_norm, cert.final_norm) {
        violations.push(Violation {
            kind: ViolationKind::FinalNorm,
            detail: format!("final norm {final_norm:e}, recorded {:e}", cert.final_norm),
        });
    }
    let rescaled = rescale(&CertifiedNet { net: net.clone(), cert: cert.clone() });
    AuditReport {
        kappa,
        recorded_kappa: cert.kappa,
        bound: cert.bound,
        budget: cert.budget,
        layers,
        final_norm,
        rescaled_final_norm: rescaled.net.final_matrix().frobenius(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub max_residual: f64,
    pub max_active: usize,
    pub probes: usize,
}

/// max |Σ_n ψ_n(x) − 1| over the plan, with the largest number of nonzero hats.
pub fn check_partition_of_unity(grid: usize, d: usize, plan: &ProbePlan) -> Result<PartitionReport> {
    if grid == 0 || plan.dim() != d {
        return invalid("partition check needs N ≥ 1 and a plan of matching dimension");
    }
    let nodes = grid_points(d, grid);
    let pts = plan.points()?;
    let res = par::map_chunks(&pts, d, |x| {
        let mut s = 0.0;
        let mut active = 0;
        for n in &nodes {
            let v = hat_product_ref(grid, n, x);
            if v != 0.0 {
                active += 1;
                s += v;
            }
        }
        ((s - 1.0).abs(), active)
    });
    Ok(PartitionReport {
        max_residual: res.iter().map(|r| r.0).fold(0.0, f64::max),
        max_active: res.iter().map(|r| r.1).max().unwrap_or(0),
        probes: res.len(),
    })
}

/// Ordinary least squares slope of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub budget: f64,
    pub k: usize,
    pub measured_error: f64,
    pub certified_bound: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub target: String,
    pub points: Vec<SweepPoint>,
    /// OLS slope of log measured error against log K.
    pub fitted_slope: f64,
    pub theoretical_exponent: f64,
    pub notes: Vec<String>,
}

impl SweepResult {
    pub fn monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].measured_error <= w[0].measured_error)
    }

    pub fn bounds_dominate(&self) -> bool {
        self.points.iter().all(|p| p.measured_error <= p.certified_bound)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("budget,k,measured_error,certified_bound,kappa\n");
        for p in &self.points {
            s.push_str(&format!("{:e},{},{:e},{:e},{:e}\n", p.budget, p.k, p.measured_error, p.certified_bound, p.kappa));
        }
        s
    }
}

/// Target of a rate sweep.
#[derive(Clone)]
pub enum SweepTarget {
    Holder(FunctionOracle),
    Dag(DagSpec),
}

impl SweepTarget {
    pub fn name(&self) -> String {
        match self {
            SweepTarget::Holder(o) => o.name.clone(),
            SweepTarget::Dag(s) => s.name.clone(),
        }
    }
}

/// Compiles per budget, measures the probe-set sup error and fits the
/// log–log slope. Budgets infeasible for the target are dropped with a note.
pub fn rate_sweep(target: &SweepTarget, budgets: &[f64], plan: &ProbePlan) -> Result<SweepResult> {
    if budgets.len() < 3 {
        return invalid("a rate sweep needs at least 3 budgets");
    }
    let mut b = budgets.to_vec();
    b.sort_by(|x, y| x.total_cmp(y));
    if b[b.len() - 1] < 100.0 * b[0] {
        return invalid("sweep budgets must span at least two decades");
    }
    let mut points = Vec::new();
    let mut notes = Vec::new();
    let mut theory = f64::NAN;
    for &k_budget in &b {
        let r = match target {
            SweepTarget::Holder(o) => compile_holder_for_budget(o, k_budget).map(|c| {
                theory = c.rate_exponent;
                let f = |x: &[f64]| o.eval(x);
                sup_error(&c.network, &f, plan).map(|e| SweepPoint {
                    budget: k_budget,
                    k: c.chosen_k,
                    measured_error: e.max_error,
                    certified_bound: c.error_bound,
                    kappa: c.network.kappa(),
                })
            }),
            SweepTarget::Dag(s) => compile_dag(s, k_budget).map(|c| {
                theory = c.rate.worst_case_rate_exponent;
                let f = |x: &[f64]| s.evaluate(x);
                let k = c.rate.per_node.iter().flatten().map(|n| n.node_k).min().unwrap_or(0);
                sup_error(&c.network.net, &f, plan).map(|e| SweepPoint {
                    budget: k_budget,
                    k,
                    measured_error: e.max_error,
                    certified_bound: c.rate.total_error_bound,
                    kappa: c.network.net.kappa(),
                })
            }),
        };
        match r {
            Ok(p) => points.push(p?),
            Err(Error::BudgetInfeasible { minimal_budget, .. }) => {
                notes.push(format!("K = {k_budget:e} dropped: infeasible (minimal {minimal_budget:e})"))
            }
            Err(e) => return Err(e),
        }
    }
    if points.len() < 2 {
        return invalid(format!("fewer than two feasible sweep points ({})", notes.join("; ")));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.budget.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.measured_error.max(f64::MIN_POSITIVE).ln()).collect();
    Ok(SweepResult { target: target.name(), fitted_slope: ols_slope(&lx, &ly), theoretical_exponent: theory, points, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPath {
    pub argmax: Vec<f64>,
    pub total_error: f64,
    /// Node index per level, level 1 first.
    pub path: Vec<usize>,
    pub path_ids: Vec<String>,
    /// |G_v − Φ_v| per node at the argmax, in g units.
    pub node_errors: Vec<Vec<f64>>,
    /// min over the path of 2α*/(2L + (D+L)d_in).
    pub path_exponent: f64,
}

/// Backward trace of the largest realized node error at the probe-set
/// argmax. Ties go to the lowest node index.
pub fn trace_critical_path(compiled: &CompiledDag, spec: &DagSpec, plan: &ProbePlan) -> Result<CriticalPath> {
    let f = |x: &[f64]| spec.evaluate(x);
    let sup = sup_error(&compiled.network.net, &f, plan)?;
    let x = sup.argmax;
    let g = spec.node_values(&x);
    let phi = compiled.node_outputs(spec, &x)?;
    let errs: Vec<Vec<f64>> =
        g.iter().zip(&phi).map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).collect()).collect();
    let l = spec.depth_levels();
    let mut path = vec![0usize; l];
    for lv in (0..l - 1).rev() {
        let child = &spec.levels[lv + 1][path[lv + 1]];
        let mut best = child.parents[0];
        for &p in &child.parents {
            if errs[lv][p] > errs[lv][best] || (errs[lv][p] == errs[lv][best] && p < best) {
                best = p;
            }
        }
        path[lv] = best;
    }
    let stars = crate::dag_compiler::effective_regularity(spec, &path)?;
    let depth = spec.network_depth();
    let path_exponent = path
        .iter()
        .enumerate()
        .map(|(lv, &i)| node_exponent(stars[lv], spec.levels[lv][i].d_in(), l, depth))
        .fold(f64::INFINITY, f64::min);
    Ok(CriticalPath {
        total_error: sup.max_error,
        path_ids: path.iter().enumerate().map(|(lv, &i)| spec.levels[lv][i].id.clone()).collect(),
        argmax: x,
        path,
        node_errors: errs,
        path_exponent,
    })
}
