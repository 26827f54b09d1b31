//! Compiles a C^α function oracle on [0,1]^d into a network through the
//! partition of unity of tensor hats and local Taylor patches.
//!
//! For a grid resolution N and product accuracy k the network is
//!
//! ```text
//! φ(x) = Σ_{n ∈ {0..N}^d} Σ_{|s| ≤ r} c_{n,s} φ_{n,s}(x),   c_{n,s} = ∂^s h(n/N) / s!
//! ```
//!
//! with N = ⌈k^{2/α}⌉, assembled by a single N-ary linear combination.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::net_algebra::{linear_combine, zero_network};
use crate::net_ir::{CertifiedNet, FrobeniusCertificate, Network};
use crate::par;
use crate::primitives::{build_taylor_patch, patch_depth, patch_kappa_bound};

type PartialFn = dyn Fn(&[usize], &[f64]) -> f64 + Send + Sync;

/// Step used by the central finite-difference adapter.
pub const FD_STEP: f64 = 1e-5;

/// Default cap on the predicted number of stored weights.
pub const DEFAULT_MAX_WEIGHTS: u64 = 1_000_000;

/// r = ⌈α⌉ − 1, i.e. α = r + β with β ∈ (0,1].
pub fn order_of(alpha: f64) -> usize {
    (alpha.ceil() as usize).saturating_sub(1)
}

/// A function with partial derivatives up to order r on a box.
#[derive(Clone)]
pub struct FunctionOracle {
    pub name: String,
    pub dim: usize,
    pub alpha: f64,
    pub r: usize,
    pub domain_box: Vec<(f64, f64)>,
    pub holder_norm_bound: f64,
    pub warnings: Vec<String>,
    partial: Arc<PartialFn>,
}

impl fmt::Debug for FunctionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionOracle")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("r", &self.r)
            .field("domain_box", &self.domain_box)
            .field("holder_norm_bound", &self.holder_norm_bound)
            .finish()
    }
}

impl FunctionOracle {
    /// `partial(s, x)` must return ∂^s h(x) for every |s| ≤ r; `s = 0` is h.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        alpha: f64,
        domain_box: Vec<(f64, f64)>,
        holder_norm_bound: f64,
        partial: impl Fn(&[usize], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return invalid("oracle dimension must be positive");
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return invalid("alpha must be a positive real");
        }
        if domain_box.len() != dim || domain_box.iter().any(|&(a, b)| !(b > a)) {
            return invalid("domain box must have one nonempty interval per coordinate");
        }
        if !(holder_norm_bound > 0.0) {
            return invalid("Hölder norm bound must be positive");
        }
        Ok(Self {
            name: name.into(),
            dim,
            alpha,
            r: order_of(alpha),
            domain_box,
            holder_norm_bound,
            warnings: Vec::new(),
            partial: Arc::new(partial),
        })
    }

    /// Oracle on [0,1]^d.
    pub fn on_unit_cube(
        name: impl Into<String>,
        dim: usize,
        alpha: f64,
        holder_norm_bound: f64,
        partial: impl Fn(&[usize], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(name, dim, alpha, vec![(0.0, 1.0); dim], holder_norm_bound, partial)
    }

    /// Wraps a plain evaluator; partials come from nested central differences
    /// with step [`FD_STEP`] and the oracle carries a warning.
    pub fn finite_difference(
        name: impl Into<String>,
        dim: usize,
        alpha: f64,
        domain_box: Vec<(f64, f64)>,
        holder_norm_bound: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let f = Arc::new(f);
        let mut o = Self::new(name, dim, alpha, domain_box, holder_norm_bound, move |s, x| fd_partial(&*f, s, x))?;
        o.warnings.push(format!(
            "partials by central finite differences (step {FD_STEP:e}); Taylor coefficients carry O(h²) error not covered by the bound"
        ));
        Ok(o)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.partial)(&vec![0; self.dim], x)
    }

    pub fn partial(&self, s: &[usize], x: &[f64]) -> f64 {
        (self.partial)(s, x)
    }

    pub fn is_unit_cube(&self) -> bool {
        self.domain_box.iter().all(|&(a, b)| a == 0.0 && b == 1.0)
    }

    /// Evaluates at a flat row-major array of points, in parallel.
    pub fn eval_many(&self, points: &[f64]) -> Vec<f64> {
        par::map_chunks(points, self.dim * 256, |c| c.chunks(self.dim).map(|p| self.eval(p)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }
}

fn fd_partial(f: &(dyn Fn(&[f64]) -> f64 + Send + Sync), s: &[usize], x: &[f64]) -> f64 {
    match s.iter().position(|&v| v > 0) {
        None => f(x),
        Some(i) => {
            let mut lower = s.to_vec();
            lower[i] -= 1;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            (fd_partial(f, &lower, &xp) - fd_partial(f, &lower, &xm)) / (2.0 * FD_STEP)
        }
    }
}

/// All multi-indices of length `d` with |s| ≤ r, lexicographic.
pub fn multi_indices(d: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; d];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
        cur[i] = 0;
    }
    rec(0, r, &mut cur, &mut out);
    out
}

/// All grid points {0..N}^d, lexicographic.
pub fn grid_points(d: usize, grid: usize) -> Vec<Vec<usize>> {
    let total = (grid + 1).pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut n = vec![0; d];
            for i in (0..d).rev() {
                n[i] = idx % (grid + 1);
                idx /= grid + 1;
            }
            n
        })
        .collect()
}

/// s! = ∏ s_i!.
pub fn multi_factorial(s: &[usize]) -> f64 {
    s.iter().map(|&v| (1..=v).map(|j| j as f64).product::<f64>()).product()
}

/// Binomial coefficient C(n, k) as a real.
pub fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// One Taylor coefficient c_{n,s}.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorTerm {
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    pub c: f64,
}

/// c_{n,s} = ∂^s h(n/N) / s! for all grid points and |s| ≤ r, in
/// lexicographic (n, s) order.
pub fn taylor_coefficients(oracle: &FunctionOracle, grid: usize) -> Result<Vec<TaylorTerm>> {
    if grid == 0 {
        return invalid("grid resolution must be positive");
    }
    if !oracle.is_unit_cube() {
        return invalid("oracle must live on [0,1]^d; apply range_normalize first");
    }
    let points = grid_points(oracle.dim, grid);
    let multi = multi_indices(oracle.dim, oracle.r);
    let rows: Vec<Vec<TaylorTerm>> = par::map(&points, |n| {
        let x: Vec<f64> = n.iter().map(|&v| v as f64 / grid as f64).collect();
        multi
            .iter()
            .map(|s| TaylorTerm { n: n.clone(), s: s.clone(), c: oracle.partial(s, &x) / multi_factorial(s) })
            .collect()
    });
    let terms: Vec<TaylorTerm> = rows.into_iter().flatten().collect();
    for t in &terms {
        if !t.c.is_finite() || t.c.abs() > oracle.holder_norm_bound + 1e-9 {
            return Err(Error::OracleInconsistency {
                node: None,
                message: format!(
                    "{}: |c| = {:e} at n = {:?}, s = {:?} exceeds the declared Hölder bound {}",
                    oracle.name, t.c, t.n, t.s, oracle.holder_norm_bound
                ),
            });
        }
    }
    Ok(terms)
}

/// N = ⌈k^{2/α}⌉, with exact powers not pushed up by rounding.
pub fn grid_for(k: usize, alpha: f64) -> usize {
    let x = (k as f64).powf(2.0 / alpha);
    let n = x.round();
    let g = if (x - n).abs() <= 1e-9 * x.max(1.0) { n } else { x.ceil() };
    (g as usize).max(1)
}

/// 2^d d^r N^{−α} + 6·2^d (d+r) d^r / k².
pub fn error_formula(d: usize, r: usize, alpha: f64, grid: usize, k: usize) -> f64 {
    let two_d = 2f64.powi(d as i32);
    let dr = (d as f64).powi(r as i32);
    two_d * dr * (grid as f64).powf(-alpha) + 6.0 * two_d * (d + r) as f64 * dr / (k * k) as f64
}

/// Certified error: M (2^d d^r N^{−α} + 6·2^d (d+r) C(d+r,r) / k²), where M
/// is the declared Hölder bound and C(d+r,r) counts the multi-indices
/// |s| ≤ r active on each cell.
pub fn certified_error(d: usize, r: usize, alpha: f64, grid: usize, k: usize, holder_bound: f64) -> f64 {
    let two_d = 2f64.powi(d as i32);
    let dr = (d as f64).powi(r as i32);
    let ns = binomial(d + r, r);
    holder_bound * (two_d * dr * (grid as f64).powf(-alpha) + 6.0 * two_d * (d + r) as f64 * ns / (k * k) as f64)
}

/// 2α / (2 + d(D+1)).
pub fn rate_exponent(d: usize, r: usize, alpha: f64) -> f64 {
    2.0 * alpha / (2.0 + (d * (patch_depth(d, r) + 1)) as f64)
}

/// Options for [`compile_holder_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct HolderOptions {
    /// Refuse compilation when the predicted stored-weight count exceeds this.
    pub max_weights: u64,
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self { max_weights: DEFAULT_MAX_WEIGHTS }
    }
}

/// Compiled network with its certificates.
#[derive(Debug, Clone)]
pub struct HolderCompileResult {
    pub network: Network,
    pub certificate: FrobeniusCertificate,
    /// Certified sup error (see [`certified_error`]).
    pub error_bound: f64,
    /// 2^d d^r N^{−α} + 6·2^d(d+r)d^r/k², unscaled.
    pub formula_error_bound: f64,
    pub chosen_n: usize,
    pub chosen_k: usize,
    pub rate_exponent: f64,
    pub depth: usize,
    /// Nonzero terms in the combination.
    pub term_count: usize,
    /// (T+1)^{(D+1)/2} · max(1, max|c|) · patch bound with T nonzero terms.
    pub kphi_bound: f64,
    pub warnings: Vec<String>,
}

impl HolderCompileResult {
    pub fn certified(&self) -> CertifiedNet {
        CertifiedNet { net: self.network.clone(), cert: self.certificate.clone() }
    }
}

struct Plan {
    grid: usize,
    depth: usize,
    patch_bound: f64,
    terms: Vec<TaylorTerm>,
}

fn plan(oracle: &FunctionOracle, k: usize) -> Result<Plan> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    let grid = grid_for(k, oracle.alpha);
    let terms: Vec<TaylorTerm> = taylor_coefficients(oracle, grid)?.into_iter().filter(|t| t.c != 0.0).collect();
    Ok(Plan {
        grid,
        depth: patch_depth(oracle.dim, oracle.r),
        patch_bound: patch_kappa_bound(oracle.dim, oracle.r, grid),
        terms,
    })
}

fn combine_bound(p: &Plan) -> f64 {
    if p.terms.is_empty() {
        return 0.0;
    }
    let t = p.terms.len() as f64;
    let l2: f64 = p.terms.iter().map(|x| (x.c * p.patch_bound).powi(2)).sum::<f64>().sqrt();
    (t + 1.0).sqrt().powi(p.depth as i32) * l2
}

fn kphi(p: &Plan) -> f64 {
    let t = p.terms.len() as f64;
    let cmax = p.terms.iter().map(|x| x.c.abs()).fold(1.0, f64::max);
    (t + 1.0).powf((p.depth as f64 + 1.0) / 2.0) * cmax * p.patch_bound
}

/// κ certificate that [`compile_holder`] would produce at accuracy k,
/// computed without building the network.
pub fn certificate_bound(oracle: &FunctionOracle, k: usize) -> Result<f64> {
    Ok(combine_bound(&plan(oracle, k)?))
}

/// Stored weights of one patch with the largest shift count, times the
/// number of terms.
fn estimate_weights(oracle: &FunctionOracle, p: &Plan, k: usize) -> Result<u64> {
    if p.terms.is_empty() {
        return Ok(0);
    }
    let d = oracle.dim;
    let mut s = vec![0; d];
    s[0] = oracle.r;
    let probe = build_taylor_patch(&vec![0; d], &s, p.grid, k, d, oracle.r)?;
    Ok(probe.net.nnz() as u64 * p.terms.len() as u64)
}

pub fn compile_holder(oracle: &FunctionOracle, k: usize) -> Result<HolderCompileResult> {
    compile_holder_with(oracle, k, &HolderOptions::default())
}

pub fn compile_holder_with(oracle: &FunctionOracle, k: usize, opts: &HolderOptions) -> Result<HolderCompileResult> {
    let p = plan(oracle, k)?;
    let est = estimate_weights(oracle, &p, k)?;
    if est > opts.max_weights {
        return Err(Error::SizeLimit { estimate: est, cap: opts.max_weights });
    }
    let (d, r) = (oracle.dim, oracle.r);
    let combined = if p.terms.is_empty() {
        let net = zero_network(d, 1, p.depth)?;
        CertifiedNet::with_bound(net, 0.0, "zero combination")
    } else {
        let patches: Vec<Result<CertifiedNet>> =
            par::map(&p.terms, |t| build_taylor_patch(&t.n, &t.s, p.grid, k, d, r));
        let patches: Vec<CertifiedNet> = patches.into_iter().collect::<Result<_>>()?;
        let coeffs: Vec<f64> = p.terms.iter().map(|t| t.c).collect();
        let refs: Vec<&CertifiedNet> = patches.iter().collect();
        linear_combine(&refs, &coeffs)?
    };
    let CertifiedNet { net, mut cert } = combined;
    cert.budget = cert.bound;
    Ok(HolderCompileResult {
        depth: net.depth(),
        network: net,
        certificate: cert,
        error_bound: certified_error(d, r, oracle.alpha, p.grid, k, oracle.holder_norm_bound),
        formula_error_bound: error_formula(d, r, oracle.alpha, p.grid, k),
        chosen_n: p.grid,
        chosen_k: k,
        rate_exponent: rate_exponent(d, r, oracle.alpha),
        term_count: p.terms.len(),
        kphi_bound: kphi(&p),
        warnings: oracle.warnings.clone(),
    })
}

/// Largest k whose certificate bound is at most `budget`, or the
/// budget-infeasible error carrying the bound at k = 1.
pub fn largest_k_for_budget(oracle: &FunctionOracle, budget: f64) -> Result<usize> {
    if !(budget >= 1.0) {
        return invalid("budget K must be at least 1");
    }
    let b1 = certificate_bound(oracle, 1)?;
    if b1 > budget {
        return Err(Error::BudgetInfeasible {
            minimal_budget: b1,
            message: format!("{} needs κ ≤ {b1:.6e} even at k = 1", oracle.name),
        });
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while certificate_bound(oracle, hi)? <= budget {
        lo = hi;
        hi *= 2;
        if hi > 1 << 20 {
            return Ok(lo);
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if certificate_bound(oracle, mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

pub fn compile_holder_for_budget(oracle: &FunctionOracle, budget: f64) -> Result<HolderCompileResult> {
    compile_holder_for_budget_with(oracle, budget, &HolderOptions::default())
}

pub fn compile_holder_for_budget_with(
    oracle: &FunctionOracle,
    budget: f64,
    opts: &HolderOptions,
) -> Result<HolderCompileResult> {
    let k = largest_k_for_budget(oracle, budget)?;
    let mut res = compile_holder_with(oracle, k, opts)?;
    res.certificate.budget = budget;
    Ok(res)
}

/// Undoes [`range_normalize`]: g = scale · h + shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Denormalize {
    pub scale: f64,
    pub shift: f64,
}

impl Denormalize {
    pub fn apply(&self, h: f64) -> f64 {
        self.scale * h + self.shift
    }
}

fn box_scale_factor(widths: &[f64], alpha: f64, r: usize) -> f64 {
    let w = widths.iter().cloned().fold(0.0, f64::max);
    let lo = if r >= 1 { 1.0 } else { alpha };
    w.powf(lo).max(w.powf(alpha))
}

/// h(u) = g(lo + (hi − lo) u) on [0,1]^d. Partials pick up ∏ (hi_i − lo_i)^{s_i};
/// the Hölder bound becomes M · max(1, w^{min order}, w^α) with w the widest side.
pub fn precompose_box(g: &FunctionOracle) -> Result<FunctionOracle> {
    let bx = g.domain_box.clone();
    let widths: Vec<f64> = bx.iter().map(|&(a, b)| b - a).collect();
    let m = g.holder_norm_bound * box_scale_factor(&widths, g.alpha, g.r).max(1.0);
    let inner = g.clone();
    let mut h = FunctionOracle::on_unit_cube(format!("{}∘box", g.name), g.dim, g.alpha, m, move |s, u| {
        let x: Vec<f64> = u.iter().zip(&bx).map(|(&ui, &(a, b))| a + (b - a) * ui).collect();
        let f: f64 = s.iter().zip(&widths).map(|(&si, &w)| w.powi(si as i32)).product();
        f * inner.partial(s, &x)
    })?;
    h.r = g.r;
    h.warnings = g.warnings.clone();
    Ok(h)
}

/// Maps an oracle on its box with |g| ≤ R_out to
/// h(u) = g(lo + (hi − lo) u) / (2 R_out) + 1/2 on [0,1]^d with values in
/// [0,1]. For the box [−R_in, R_in]^d this is h(u) = g(2R_in u − R_in)/(2R_out) + 1/2.
pub fn range_normalize(g: &FunctionOracle, r_out: f64) -> Result<(FunctionOracle, Denormalize)> {
    if !(r_out > 0.0) {
        return invalid("R_out must be positive");
    }
    let bx = g.domain_box.clone();
    let widths: Vec<f64> = bx.iter().map(|&(a, b)| b - a).collect();
    let m = 1.0 + g.holder_norm_bound * box_scale_factor(&widths, g.alpha, g.r) / (2.0 * r_out);
    let inner = g.clone();
    let mut h = FunctionOracle::on_unit_cube(format!("normalized({})", g.name), g.dim, g.alpha, m, move |s, u| {
        let x: Vec<f64> = u.iter().zip(&bx).map(|(&ui, &(a, b))| a + (b - a) * ui).collect();
        let f: f64 = s.iter().zip(&widths).map(|(&si, &w)| w.powi(si as i32)).product();
        let v = f * inner.partial(s, &x) / (2.0 * r_out);
        if s.iter().all(|&v| v == 0) {
            v + 0.5
        } else {
            v
        }
    })?;
    h.r = g.r;
    h.warnings = g.warnings.clone();
    Ok((h, Denormalize { scale: 2.0 * r_out, shift: -r_out }))
}

/// Multivariate polynomial Σ c_j x^{e_j}.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if terms.iter().any(|(_, e)| e.len() != dim) {
            return invalid("exponent vector length must equal the dimension");
        }
        Ok(Self { dim, terms })
    }

    pub fn affine(weights: &[f64], bias: f64) -> Self {
        let d = weights.len();
        let mut terms = vec![(bias, vec![0; d])];
        for (i, &w) in weights.iter().enumerate() {
            let mut e = vec![0; d];
            e[i] = 1;
            terms.push((w, e));
        }
        Self { dim: d, terms }
    }

    pub fn product(d: usize, scale: f64) -> Self {
        Self { dim: d, terms: vec![(scale, vec![1; d])] }
    }

    /// ∂^s of the polynomial at x.
    pub fn partial(&self, s: &[usize], x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut v = *c;
            for i in 0..self.dim {
                let (ei, si) = (e[i] as usize, s[i]);
                if si > ei {
                    v = 0.0;
                    break;
                }
                let fall: f64 = (0..si).map(|j| (ei - j) as f64).product();
                v *= fall * x[i].powi((ei - si) as i32);
            }
            acc += v;
        }
        acc
    }

    /// Upper bound on sup |∂^s p| over a box.
    pub fn partial_sup(&self, s: &[usize], bx: &[(f64, f64)]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut v = c.abs();
            for i in 0..self.dim {
                let (ei, si) = (e[i] as usize, s[i]);
                if si > ei {
                    v = 0.0;
                    break;
                }
                let fall: f64 = (0..si).map(|j| (ei - j) as f64).product();
                let m = bx[i].0.abs().max(bx[i].1.abs());
                v *= fall * m.powi((ei - si) as i32);
            }
            acc += v;
        }
        acc
    }
}

/// a · sin(ω ⟨w, x⟩ + φ).
#[derive(Debug, Clone, PartialEq)]
pub struct SineRidge {
    pub amplitude: f64,
    pub frequency: f64,
    pub weights: Vec<f64>,
    pub phase: f64,
}

impl SineRidge {
    pub fn partial(&self, s: &[usize], x: &[f64]) -> f64 {
        let ord: usize = s.iter().sum();
        let arg = self.frequency * self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.phase;
        let f: f64 = s.iter().zip(&self.weights).map(|(&si, &w)| w.powi(si as i32)).product();
        self.amplitude * self.frequency.powi(ord as i32) * f * (arg + ord as f64 * std::f64::consts::FRAC_PI_2).sin()
    }

    pub fn partial_sup(&self, s: &[usize]) -> f64 {
        let ord: usize = s.iter().sum();
        let f: f64 = s.iter().zip(&self.weights).map(|(&si, &w)| w.abs().powi(si as i32)).product();
        self.amplitude.abs() * self.frequency.abs().powi(ord as i32) * f
    }
}

/// Σ_{|γ|≤r} sup|D^γ h| + max_{|γ|=r} (Σ_i sup|D^{γ+e_i} h|) · w^{1−β}, the
/// last term bounding the β-Hölder seminorm of the r-th derivatives through
/// their Lipschitz constant in the ∞-norm on a box of side at most w.
pub fn holder_norm_from_sups(d: usize, alpha: f64, widest: f64, sup: impl Fn(&[usize]) -> f64) -> f64 {
    let r = order_of(alpha);
    let beta = alpha - r as f64;
    let low: f64 = multi_indices(d, r).iter().map(|s| sup(s)).sum();
    let semi = multi_indices(d, r)
        .iter()
        .filter(|s| s.iter().sum::<usize>() == r)
        .map(|s| {
            (0..d)
                .map(|i| {
                    let mut t = s.clone();
                    t[i] += 1;
                    sup(&t)
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    low + semi * widest.powf(1.0 - beta)
}

fn widest(bx: &[(f64, f64)]) -> f64 {
    bx.iter().map(|&(a, b)| b - a).fold(0.0, f64::max)
}

impl FunctionOracle {
    pub fn polynomial(name: impl Into<String>, p: Polynomial, alpha: f64, domain_box: Vec<(f64, f64)>) -> Result<Self> {
        let m = holder_norm_from_sups(p.dim, alpha, widest(&domain_box), |s| p.partial_sup(s, &domain_box));
        let dim = p.dim;
        Self::new(name, dim, alpha, domain_box, m.max(f64::MIN_POSITIVE), move |s, x| p.partial(s, x))
    }

    pub fn sine_ridge(name: impl Into<String>, g: SineRidge, alpha: f64, domain_box: Vec<(f64, f64)>) -> Result<Self> {
        let d = g.weights.len();
        let m = holder_norm_from_sups(d, alpha, widest(&domain_box), |s| g.partial_sup(s));
        Self::new(name, d, alpha, domain_box, m.max(f64::MIN_POSITIVE), move |s, x| g.partial(s, x))
    }
}

/// Names accepted by [`builtin_oracle`].
pub const BUILTIN_ORACLES: &[&str] =
    &["square", "holder-1d-alpha2", "sum-square", "zero", "constant", "sine", "product", "product2", "monomial-d3"];

/// Gallery oracles on the unit cube.
pub fn builtin_oracle(name: &str) -> Result<FunctionOracle> {
    let unit = |d: usize| vec![(0.0, 1.0); d];
    match name {
        "square" | "holder-1d-alpha2" | "holder-1d-α2" => {
            FunctionOracle::polynomial(name, Polynomial::new(1, vec![(1.0, vec![2])])?, 2.0, unit(1))
        }
        "sum-square" => FunctionOracle::polynomial(
            name,
            Polynomial::new(2, vec![(0.25, vec![2, 0]), (0.5, vec![1, 1]), (0.25, vec![0, 2])])?,
            2.0,
            unit(2),
        ),
        "zero" => FunctionOracle::on_unit_cube(name, 1, 2.0, 1.0, |_, _| 0.0),
        "constant" => FunctionOracle::polynomial(name, Polynomial::new(1, vec![(0.3, vec![0])])?, 2.0, unit(1)),
        "sine" => FunctionOracle::sine_ridge(
            name,
            SineRidge { amplitude: 0.5, frequency: std::f64::consts::PI, weights: vec![1.0], phase: 0.0 },
            2.0,
            unit(1),
        ),
        "product2" => FunctionOracle::polynomial(name, Polynomial::product(2, 0.5), 2.0, unit(2)),
        "product" => FunctionOracle::polynomial(name, Polynomial::product(2, 1.0), 2.0, unit(2)),
        "monomial-d3" => FunctionOracle::polynomial(name, Polynomial::product(3, 1.0), 2.0, unit(3)),
        _ => invalid(format!("unknown builtin oracle '{name}' (known: {})", BUILTIN_ORACLES.join(", "))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::hat_product_ref;

    fn square() -> FunctionOracle {
        builtin_oracle("square").unwrap()
    }

    #[test]
    fn orders() {
        assert_eq!(order_of(2.0), 1);
        assert_eq!(order_of(1.0), 0);
        assert_eq!(order_of(0.5), 0);
        assert_eq!(order_of(2.5), 2);
    }

    #[test]
    fn multi_index_count() {
        assert_eq!(multi_indices(2, 1), vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
        for (d, r) in [(1, 0), (2, 2), (3, 2), (4, 1)] {
            assert_eq!(multi_indices(d, r).len() as f64, binomial(d + r, r));
        }
        assert_eq!(grid_points(2, 1), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn square_coefficients() {
        let t = taylor_coefficients(&square(), 2).unwrap();
        let c = t.iter().find(|x| x.n == vec![1] && x.s == vec![1]).unwrap().c;
        assert_eq!(c, 1.0);
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn constant_coefficients() {
        let t = taylor_coefficients(&builtin_oracle("constant").unwrap(), 4).unwrap();
        for x in t {
            assert_eq!(x.c, if x.s == vec![0] { 0.3 } else { 0.0 });
        }
    }

    #[test]
    fn mixed_partial_coefficient() {
        let t = taylor_coefficients(&builtin_oracle("product2").unwrap(), 3).unwrap();
        let o = FunctionOracle::polynomial("p", Polynomial::product(2, 0.5), 3.0, vec![(0.0, 1.0); 2]).unwrap();
        let t3 = taylor_coefficients(&o, 3).unwrap();
        assert!(t.iter().all(|x| x.s.iter().sum::<usize>() <= 1));
        for x in t3.iter().filter(|x| x.s == vec![1, 1]) {
            assert_eq!(x.c, 0.5);
        }
    }

    #[test]
    fn inconsistent_bound_rejected() {
        let o = FunctionOracle::on_unit_cube("big", 1, 2.0, 0.5, |s, x| if s[0] == 0 { x[0] } else { 1.0 }).unwrap();
        assert!(matches!(taylor_coefficients(&o, 3), Err(Error::OracleInconsistency { .. })));
    }

    #[test]
    fn holder_norm_of_square() {
        assert_eq!(square().holder_norm_bound, 5.0);
        assert_eq!(builtin_oracle("sum-square").unwrap().holder_norm_bound, 4.0);
    }

    #[test]
    fn grid_choice() {
        assert_eq!(grid_for(10, 2.0), 10);
        assert_eq!(grid_for(10, 1.0), 100);
        assert_eq!(grid_for(3, 4.0), 2);
        assert_eq!(grid_for(1, 7.0), 1);
    }

    #[test]
    fn rate_exponent_d1_alpha1() {
        assert!((rate_exponent(1, 0, 1.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn compile_square_error() {
        let res = compile_holder(&square(), 10).unwrap();
        assert_eq!(res.depth, 4);
        assert_eq!(res.chosen_n, 10);
        assert!(res.network.kappa() <= res.certificate.bound * (1.0 + 1e-12));
        assert!(res.certificate.bound <= res.kphi_bound);
        let xs: Vec<f64> = (0..=4000).map(|i| i as f64 / 4000.0).collect();
        let ys = res.network.evaluate_many(&xs).unwrap();
        let e = xs.iter().zip(&ys).map(|(x, y)| (x * x - y).abs()).fold(0.0, f64::max);
        assert!(e <= res.formula_error_bound, "{e}");
        assert!(res.formula_error_bound <= res.error_bound);
        assert!((res.formula_error_bound - (2.0 * 0.01 + 24.0 / 100.0)).abs() < 1e-15);
    }

    #[test]
    fn compile_zero_is_zero() {
        let res = compile_holder(&builtin_oracle("zero").unwrap(), 5).unwrap();
        assert_eq!(res.term_count, 0);
        assert_eq!(res.network.kappa(), 0.0);
        for i in 0..20 {
            assert_eq!(res.network.eval_scalar(&[i as f64 / 19.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn locality_of_patches() {
        let o = builtin_oracle("sine").unwrap();
        let k = 6;
        let full = compile_holder(&o, k).unwrap();
        let grid = full.chosen_n;
        let x = 0.37;
        let cell = (x * grid as f64).floor() as usize;
        let masked = FunctionOracle::on_unit_cube("masked", 1, 2.0, o.holder_norm_bound, move |s, u| {
            let n = (u[0] * grid as f64).round() as usize;
            if n == cell || n == cell + 1 {
                o.partial(s, u)
            } else {
                0.0
            }
        })
        .unwrap();
        let local = compile_holder(&masked, k).unwrap();
        assert_eq!(full.network.eval_scalar(&[x]).unwrap(), local.network.eval_scalar(&[x]).unwrap());
    }

    #[test]
    fn partition_of_unity_reference() {
        for (grid, d) in [(5, 1), (3, 2)] {
            for i in 0..50 {
                let x: Vec<f64> = (0..d).map(|j| ((i * (j + 3)) % 50) as f64 / 49.0).collect();
                let s: f64 = grid_points(d, grid).iter().map(|n| hat_product_ref(grid, n, &x)).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn budget_selection() {
        let o = square();
        let b1 = certificate_bound(&o, 1).unwrap();
        match compile_holder_for_budget(&o, b1 / 2.0) {
            Err(Error::BudgetInfeasible { minimal_budget, .. }) => assert_eq!(minimal_budget, b1),
            other => panic!("{other:?}"),
        }
        let k_small = largest_k_for_budget(&o, 1e12).unwrap();
        let k_big = largest_k_for_budget(&o, 2e12).unwrap();
        assert!(k_big >= k_small);
        let res = compile_holder_for_budget(&o, 1e12).unwrap();
        assert!(res.certificate.satisfied());
        assert!(res.network.kappa() <= 1e12);
        let next = certificate_bound(&o, k_small + 1).unwrap();
        assert!(next > 1e12);
        let e1 = compile_holder_for_budget(&o, 2e12).unwrap().error_bound;
        assert!(e1 <= res.error_bound);
    }

    #[test]
    fn normalize_identity() {
        let g = FunctionOracle::polynomial("x", Polynomial::affine(&[1.0], 0.0), 2.0, vec![(-1.0, 1.0)]).unwrap();
        let (h, back) = range_normalize(&g, 1.0).unwrap();
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            assert!((h.eval(&[u]) - u).abs() <= 1e-12);
            assert!((back.apply(h.eval(&[u])) - g.eval(&[2.0 * u - 1.0])).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_square_and_chain_rule() {
        let g = FunctionOracle::polynomial("x2", Polynomial::new(1, vec![(1.0, vec![2])]).unwrap(), 2.0, vec![(-1.0, 1.0)])
            .unwrap();
        let (h, _) = range_normalize(&g, 1.0).unwrap();
        assert!((h.eval(&[0.5]) - 0.5).abs() <= 1e-15);
        for u in [0.0, 0.2, 0.5, 0.8, 1.0] {
            assert!((h.partial(&[1], &[u]) - g.partial(&[1], &[2.0 * u - 1.0])).abs() <= 1e-12);
            let want = (2.0 * u - 1.0).powi(2) / 2.0 + 0.5;
            assert!((h.eval(&[u]) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn finite_difference_close_and_flagged() {
        let o = FunctionOracle::finite_difference("fd", 1, 2.0, vec![(0.0, 1.0)], 5.0, |x| x[0] * x[0]).unwrap();
        assert!(!o.warnings.is_empty());
        assert!((o.partial(&[1], &[0.3]) - 0.6).abs() < 1e-8);
        let res = compile_holder(&o, 4).unwrap();
        assert!(!res.warnings.is_empty());
    }

    #[test]
    fn size_guardrail() {
        let o = builtin_oracle("sum-square").unwrap();
        let err = compile_holder_with(&o, 40, &HolderOptions { max_weights: 1000 }).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { .. }));
    }
}
