//! Compiles sparse compositional functions f = g_{V^(L)} ∘ ⋯ ∘ g_{V^(1)} on a
//! leveled DAG into one network.
//!
//! Every non-root node is compiled on its normalized form
//! h_v(u) = g_v(T(u)) / (2R_v) + 1/2 on [0,1]^{d_in}, where T maps a parent
//! value u ∈ [0,1] back to 2R_p u − R_p (input coordinates go through the
//! input box instead). The root is compiled on g∘T directly, so the network
//! output is in the units of f. Node subnets of a level are padded to a
//! common depth, concatenated with parent routing, and the levels are
//! composed. Patches clamp their inputs to [0,1], so no clipping layer is
//! needed between levels.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::holder_compiler::{
    binomial, compile_holder_with, grid_for, order_of, precompose_box, range_normalize, FunctionOracle, HolderOptions, Polynomial,
    SineRidge,
};
use crate::net_algebra::{compose_chain, concatenate_routed, depth_pad, nary_compose_bound, precompose_affine};
use crate::net_ir::CertifiedNet;
use crate::par;
use crate::primitives::ceil_log2;

/// Builtin node function with analytic partials.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NodeFunction {
    Affine { weights: Vec<f64>, bias: f64 },
    Product { #[serde(default = "one")] scale: f64 },
    Mean,
    Polynomial { terms: Vec<(f64, Vec<u32>)> },
    ScaledSine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        phase: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl NodeFunction {
    /// Oracle of arity `d` on `domain_box`.
    pub fn oracle(&self, name: &str, d: usize, alpha: f64, domain_box: Vec<(f64, f64)>) -> Result<FunctionOracle> {
        match self {
            NodeFunction::Affine { weights, bias } => {
                if weights.len() != d {
                    return invalid(format!("{name}: affine weights need {d} entries"));
                }
                FunctionOracle::polynomial(name, Polynomial::affine(weights, *bias), alpha, domain_box)
            }
            NodeFunction::Product { scale } => {
                FunctionOracle::polynomial(name, Polynomial::product(d, *scale), alpha, domain_box)
            }
            NodeFunction::Mean => {
                FunctionOracle::polynomial(name, Polynomial::affine(&vec![1.0 / d as f64; d], 0.0), alpha, domain_box)
            }
            NodeFunction::Polynomial { terms } => {
                FunctionOracle::polynomial(name, Polynomial::new(d, terms.clone())?, alpha, domain_box)
            }
            NodeFunction::ScaledSine { amplitude, frequency, weights, phase } => {
                let w = weights.clone().unwrap_or_else(|| vec![1.0 / d as f64; d]);
                if w.len() != d {
                    return invalid(format!("{name}: sine weights need {d} entries"));
                }
                let g = SineRidge { amplitude: *amplitude, frequency: *frequency, weights: w, phase: *phase };
                FunctionOracle::sine_ridge(name, g, alpha, domain_box)
            }
        }
    }
}

/// Non-input node.
#[derive(Debug, Clone)]
pub struct DagNode {
    pub id: String,
    /// Indices into the previous level.
    pub parents: Vec<usize>,
    pub function: NodeFunction,
    pub alpha: f64,
    pub r: usize,
    pub range_bound: f64,
    /// g_v on the product of its parents' boxes.
    pub oracle: FunctionOracle,
}

impl DagNode {
    pub fn d_in(&self) -> usize {
        self.parents.len()
    }
}

/// Leveled DAG. `levels[0]` holds the first computed level; the inputs are
/// level 0 and are not stored as nodes.
#[derive(Debug, Clone)]
pub struct DagSpec {
    pub name: String,
    pub input_ids: Vec<String>,
    pub input_box: Vec<(f64, f64)>,
    pub levels: Vec<Vec<DagNode>>,
}

/// Node description used by [`DagSpec::build`].
#[derive(Debug, Clone)]
pub struct NodeDecl {
    pub id: String,
    pub parents: Vec<usize>,
    pub function: NodeFunction,
    pub alpha: f64,
    pub range_bound: f64,
}

impl NodeDecl {
    pub fn new(id: &str, parents: &[usize], function: NodeFunction, alpha: f64, range_bound: f64) -> Self {
        Self { id: id.into(), parents: parents.to_vec(), function, alpha, range_bound }
    }
}

impl DagSpec {
    /// Validates the structure and builds each node oracle on its domain.
    pub fn build(name: &str, input_box: Vec<(f64, f64)>, levels: Vec<Vec<NodeDecl>>) -> Result<Self> {
        let d = input_box.len();
        if d == 0 {
            return invalid("at least one input coordinate required");
        }
        if input_box.iter().any(|&(a, b)| !(b > a)) {
            return invalid("input box intervals must be nonempty");
        }
        if levels.is_empty() || levels.last().map(|l| l.len()) != Some(1) {
            return invalid("the last level must hold exactly one node");
        }
        let input_ids: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        let mut prev_boxes: Vec<(f64, f64)> = input_box.clone();
        let mut out = Vec::with_capacity(levels.len());
        let mut seen: HashMap<String, ()> = input_ids.iter().map(|s| (s.clone(), ())).collect();
        for (li, level) in levels.into_iter().enumerate() {
            if level.is_empty() {
                return invalid(format!("level {} is empty", li + 1));
            }
            let mut nodes = Vec::with_capacity(level.len());
            for decl in level {
                if seen.insert(decl.id.clone(), ()).is_some() {
                    return invalid(format!("duplicate node id '{}'", decl.id));
                }
                if decl.parents.is_empty() {
                    return invalid(format!("node '{}' has no parents", decl.id));
                }
                let mut p = decl.parents.clone();
                p.sort_unstable();
                p.dedup();
                if p.len() != decl.parents.len() || p.iter().any(|&i| i >= prev_boxes.len()) {
                    return invalid(format!("node '{}' has invalid parent indices", decl.id));
                }
                if !(decl.range_bound > 0.0) {
                    return invalid(format!("node '{}' needs a positive range bound", decl.id));
                }
                let bx: Vec<(f64, f64)> = decl.parents.iter().map(|&i| prev_boxes[i]).collect();
                let oracle = decl.function.oracle(&decl.id, decl.parents.len(), decl.alpha, bx)?;
                nodes.push(DagNode {
                    id: decl.id,
                    parents: decl.parents,
                    function: decl.function,
                    alpha: decl.alpha,
                    r: order_of(decl.alpha),
                    range_bound: decl.range_bound,
                    oracle,
                });
            }
            prev_boxes = nodes.iter().map(|n| (-n.range_bound, n.range_bound)).collect();
            out.push(nodes);
        }
        for l in 0..out.len() - 1 {
            for i in 0..out[l].len() {
                if !out[l + 1].iter().any(|n| n.parents.contains(&i)) {
                    return invalid(format!("node '{}' feeds no node of the next level", out[l][i].id));
                }
            }
        }
        Ok(Self { name: name.into(), input_ids, input_box, levels: out })
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.len()
    }

    /// Number of computed levels L.
    pub fn depth_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn root(&self) -> &DagNode {
        &self.levels[self.levels.len() - 1][0]
    }

    /// max_v ⌈log₂(d_in(v) + r_v)⌉.
    pub fn max_log_term(&self) -> usize {
        self.levels.iter().flatten().map(|n| ceil_log2(n.d_in() + n.r) as usize).max().unwrap_or(0)
    }

    /// D = 2L·max⌈log₂(d_in + r)⌉ + 2L.
    pub fn network_depth(&self) -> usize {
        let l = self.depth_levels();
        2 * l * self.max_log_term() + 2 * l
    }

    /// g-values of every node at x, level by level.
    pub fn node_values(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut prev = x.to_vec();
        let mut all = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let vals: Vec<f64> = level
                .iter()
                .map(|n| {
                    let inp: Vec<f64> = n.parents.iter().map(|&p| prev[p]).collect();
                    n.oracle.eval(&inp)
                })
                .collect();
            all.push(vals.clone());
            prev = vals;
        }
        all
    }

    /// f(x).
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.node_values(x).last().map(|v| v[0]).unwrap_or(0.0)
    }

    /// Indices of level-(ℓ+1) children of node `i` at level ℓ (0-based levels).
    pub fn children(&self, level: usize, i: usize) -> Vec<usize> {
        if level + 1 >= self.levels.len() {
            return Vec::new();
        }
        self.levels[level + 1].iter().enumerate().filter(|(_, n)| n.parents.contains(&i)).map(|(j, _)| j).collect()
    }

    /// Parses the structured-text DAG format.
    pub fn parse(text: &str) -> Result<Self> {
        let f: DagFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: line_col_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let end = text.len();
        let sem = |m: String| Error::Parse { offset: end, message: m };
        if f.levels.len() < 2 {
            return Err(sem("need the input level and at least one node level".into()));
        }
        let inputs = &f.levels[0];
        let input_box = match &f.input_box {
            Some(b) if b.len() == inputs.len() => b.iter().map(|p| (p[0], p[1])).collect(),
            Some(_) => return Err(sem("input_box length differs from the input level".into())),
            None => vec![(0.0, 1.0); inputs.len()],
        };
        let mut parents: HashMap<&str, &Vec<String>> = HashMap::new();
        for e in &f.edges {
            if parents.insert(e.child.as_str(), &e.parents).is_some() {
                return Err(sem(format!("node '{}' has two edge entries", e.child)));
            }
        }
        let mut decls = Vec::new();
        for li in 1..f.levels.len() {
            let prev: HashMap<&str, usize> =
                f.levels[li - 1].iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let mut level = Vec::new();
            for id in &f.levels[li] {
                let ps = parents.get(id.as_str()).ok_or_else(|| sem(format!("node '{id}' has no edge entry")))?;
                let idx: Vec<usize> = ps
                    .iter()
                    .map(|p| prev.get(p.as_str()).copied().ok_or_else(|| sem(format!("'{p}' is not on the level above '{id}'"))))
                    .collect::<Result<_>>()?;
                let nd = f.nodes.get(id).ok_or_else(|| sem(format!("node '{id}' has no description")))?;
                if let Some(r) = nd.r {
                    if r != order_of(nd.alpha) {
                        return Err(sem(format!("node '{id}': r = {r} disagrees with alpha = {}", nd.alpha)));
                    }
                }
                level.push(NodeDecl::new(id, &idx, nd.oracle.clone(), nd.alpha, nd.range_bound));
            }
            decls.push(level);
        }
        let known: usize = f.levels[1..].iter().map(|l| l.len()).sum();
        if f.nodes.len() != known || f.edges.len() != known {
            return Err(sem("nodes/edges must describe exactly the non-input level nodes".into()));
        }
        let mut spec = DagSpec::build(&f.name.unwrap_or_else(|| "dag".into()), input_box, decls).map_err(|e| sem(e.to_string()))?;
        spec.input_ids = inputs.clone();
        Ok(spec)
    }
}

fn line_col_offset(text: &str, line: usize, column: usize) -> usize {
    let mut off = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (off + column.saturating_sub(1)).min(text.len());
        }
        off += l.len();
    }
    text.len()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DagFile {
    #[serde(default)]
    name: Option<String>,
    levels: Vec<Vec<String>>,
    #[serde(default)]
    input_box: Option<Vec<[f64; 2]>>,
    edges: Vec<EdgeFile>,
    nodes: BTreeMap<String, NodeFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    child: String,
    parents: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    oracle: NodeFunction,
    alpha: f64,
    #[serde(default)]
    r: Option<usize>,
    range_bound: f64,
}

/// α* for each node of `path` (level-1 node first, root last; entries are
/// node indices within their level): α*_ℓ = α_ℓ ∏_{m>ℓ} min(α_m, 1).
pub fn effective_regularity(spec: &DagSpec, path: &[usize]) -> Result<Vec<f64>> {
    let l = spec.depth_levels();
    if path.len() != l {
        return invalid(format!("path must visit all {l} levels"));
    }
    for (lv, &i) in path.iter().enumerate() {
        if i >= spec.levels[lv].len() {
            return invalid("path index outside its level");
        }
        if lv > 0 && !spec.levels[lv][i].parents.contains(&path[lv - 1]) {
            return invalid("path does not follow parent edges");
        }
    }
    let alphas: Vec<f64> = path.iter().enumerate().map(|(lv, &i)| spec.levels[lv][i].alpha).collect();
    Ok((0..l).map(|j| alphas[j] * alphas[j + 1..].iter().map(|a| a.min(1.0)).product::<f64>()).collect())
}

/// Worst-case α* per node: α_v times the smallest ∏ min(α,1) over the
/// downstream paths to the root.
pub fn worst_alpha_star(spec: &DagSpec) -> Vec<Vec<f64>> {
    let l = spec.depth_levels();
    let mut down: Vec<Vec<f64>> = spec.levels.iter().map(|lv| vec![1.0; lv.len()]).collect();
    for lv in (0..l - 1).rev() {
        for i in 0..spec.levels[lv].len() {
            down[lv][i] = spec
                .children(lv, i)
                .iter()
                .map(|&c| spec.levels[lv + 1][c].alpha.min(1.0) * down[lv + 1][c])
                .fold(f64::INFINITY, f64::min);
        }
    }
    spec.levels.iter().zip(&down).map(|(lv, dn)| lv.iter().zip(dn).map(|(n, f)| n.alpha * f).collect()).collect()
}

/// 2α*/(2L + (D+L) d_in).
pub fn node_exponent(alpha_star: f64, d_in: usize, l: usize, depth: usize) -> f64 {
    2.0 * alpha_star / (2 * l + (depth + l) * d_in) as f64
}

/// A half-integer stored as twice its value, so comparisons are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct HalfInt(pub i64);

impl HalfInt {
    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl std::fmt::Display for HalfInt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}.5", self.0 / 2)
        }
    }
}

/// Closed-form rate for one of the representative structures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemarkForm {
    /// "multi-index", "binary-tree" or "constant-level".
    pub structure: &'static str,
    pub constant: HalfInt,
    /// The exponent of K in K^{−exponent}.
    pub exponent: f64,
}

/// Exponents along one root-to-input path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRate {
    /// Node index per level, level 1 first.
    pub nodes: Vec<usize>,
    pub alpha_star: Vec<f64>,
    pub exponents: Vec<f64>,
    pub min_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub depth: usize,
    pub paths: Vec<PathRate>,
    pub worst_case_exponent: f64,
    pub remarks: Vec<RemarkForm>,
}

const MAX_PATHS: usize = 100_000;

fn all_paths(spec: &DagSpec) -> Vec<Vec<usize>> {
    let l = spec.depth_levels();
    let mut out = Vec::new();
    let mut stack = vec![vec![0usize]];
    while let Some(rev) = stack.pop() {
        if out.len() >= MAX_PATHS {
            break;
        }
        let lv = l - rev.len();
        if lv == 0 {
            let mut p = rev.clone();
            p.reverse();
            out.push(p);
            continue;
        }
        let node = &spec.levels[lv][*rev.last().unwrap()];
        for &p in node.parents.iter().rev() {
            let mut n = rev.clone();
            n.push(p);
            stack.push(n);
        }
    }
    out
}

fn is_binary_tree(spec: &DagSpec) -> bool {
    let d = spec.input_dim();
    if !d.is_power_of_two() || d < 2 || spec.depth_levels() != d.trailing_zeros() as usize {
        return false;
    }
    let mut width = d;
    for lv in &spec.levels {
        width /= 2;
        if lv.len() != width || lv.iter().any(|n| n.d_in() != 2) {
            return false;
        }
    }
    true
}

fn is_multi_index(spec: &DagSpec) -> bool {
    let d = spec.input_dim();
    spec.depth_levels() == 2
        && spec.levels[0].iter().all(|n| n.d_in() == d)
        && spec.root().d_in() == spec.levels[0].len()
        && spec.levels[0].len() < d
}

/// Per-path exponents, their minimum, and the closed forms that apply to
/// the structure of `spec`.
pub fn rate_table(spec: &DagSpec) -> RateTable {
    let l = spec.depth_levels();
    let depth = spec.network_depth();
    let mut paths = Vec::new();
    for p in all_paths(spec) {
        let a = effective_regularity(spec, &p).expect("enumerated paths follow edges");
        let ex: Vec<f64> =
            p.iter().enumerate().map(|(lv, &i)| node_exponent(a[lv], spec.levels[lv][i].d_in(), l, depth)).collect();
        let m = ex.iter().cloned().fold(f64::INFINITY, f64::min);
        paths.push(PathRate { nodes: p, alpha_star: a, exponents: ex, min_exponent: m });
    }
    let worst = paths.iter().map(|p| p.min_exponent).fold(f64::INFINITY, f64::min);
    let stars = worst_alpha_star(spec);
    let mut remarks = Vec::new();
    if is_multi_index(spec) {
        let root = spec.root();
        let s = root.d_in();
        let c1 = HalfInt(2 * (2 * ceil_log2(s + root.r) as i64 + 5));
        remarks.push(RemarkForm { structure: "multi-index", constant: c1, exponent: root.alpha / (c1.value() * s as f64) });
    }
    if is_binary_tree(spec) {
        let rmax = spec.levels.iter().flatten().map(|n| ceil_log2(2 + n.r) as i64).max().unwrap_or(0);
        let c2 = HalfInt(2 * (2 * rmax + 4));
        let amin = stars.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let log2d = spec.input_dim().trailing_zeros() as f64;
        remarks.push(RemarkForm { structure: "binary-tree", constant: c2, exponent: amin / (c2.value() * log2d) });
    }
    let c3 = HalfInt(2 * (l as i64) * spec.max_log_term() as i64 + 5);
    let e3 = spec
        .levels
        .iter()
        .zip(&stars)
        .flat_map(|(lv, st)| lv.iter().zip(st).map(|(n, a)| a / (c3.value() * n.d_in() as f64)))
        .fold(f64::INFINITY, f64::min);
    remarks.push(RemarkForm { structure: "constant-level", constant: c3, exponent: e3 });
    RateTable { depth, paths, worst_case_exponent: worst, remarks }
}

/// Node oracle on [0,1]^{d_in}: normalized for inner nodes, box-precomposed
/// for the root.
pub fn unit_oracle(spec: &DagSpec, level: usize, i: usize) -> Result<FunctionOracle> {
    let n = &spec.levels[level][i];
    if level + 1 == spec.depth_levels() {
        precompose_box(&n.oracle)
    } else {
        Ok(range_normalize(&n.oracle, n.range_bound)?.0)
    }
}

/// Compilation options.
#[derive(Debug, Clone, PartialEq)]
pub struct DagOptions {
    /// Cap on predicted stored weights per node.
    pub max_weights_per_node: u64,
    /// Probes per coordinate for the declared-range check.
    pub range_probes_per_dim: usize,
}

impl Default for DagOptions {
    fn default() -> Self {
        Self { max_weights_per_node: 20_000_000, range_probes_per_dim: 9 }
    }
}

/// Per-node share of the budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeAllocation {
    pub level: usize,
    pub index: usize,
    pub k: usize,
    /// Common ceiling every padded node bound must respect.
    pub ceiling: f64,
    /// Padded node certificate bound at k.
    pub node_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub nodes: Vec<Vec<NodeAllocation>>,
    pub ceiling: f64,
    /// Bound the assembled network is predicted to carry.
    pub global_bound: f64,
    pub level_depth: usize,
    pub derivation: Vec<String>,
}

fn identity_pair_kappa() -> f64 {
    // A = (1, −1)ᵀ, b = 0 gives √3; the final (1, −1) gives √2.
    3f64.sqrt() * 2f64.sqrt()
}

/// Bound of `depth_pad` from depth `d` to `target`.
pub fn padded_bound(mut k: f64, d: usize, target: usize) -> f64 {
    let id = identity_pair_kappa();
    for cur in d..target {
        k = 2f64.sqrt().powi(cur as i32) * id * (k * k + 2.0).sqrt();
    }
    k
}

fn input_affine(spec: &DagSpec) -> Option<(Vec<f64>, Vec<f64>)> {
    if spec.input_box.iter().all(|&(a, b)| a == 0.0 && b == 1.0) {
        return None;
    }
    let scale = spec.input_box.iter().map(|&(a, b)| 1.0 / (b - a)).collect();
    let shift = spec.input_box.iter().map(|&(a, b)| -a / (b - a)).collect();
    Some((scale, shift))
}

fn affine_factor(scale: &[f64], shift: &[f64]) -> f64 {
    let amax = scale.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let csq: f64 = shift.iter().map(|c| c * c).sum();
    (amax * amax + csq).sqrt().max(1.0) * if csq > 0.0 { 2f64.sqrt() } else { 1.0 }
}

struct NodeCurve {
    oracle: FunctionOracle,
    depth: usize,
    cache: HashMap<usize, f64>,
}

impl NodeCurve {
    fn padded(&mut self, k: usize, target: usize) -> Result<f64> {
        let (d, r) = (self.oracle.dim, self.oracle.r);
        let terms = ((grid_for(k, self.oracle.alpha) + 1) as f64).powi(d as i32) * binomial(d + r, r) as f64;
        if terms > MAX_NODE_TERMS {
            return Ok(f64::INFINITY);
        }
        let b = match self.cache.get(&k) {
            Some(&b) => b,
            None => {
                let b = crate::holder_compiler::certificate_bound(&self.oracle, k)?;
                self.cache.insert(k, b);
                b
            }
        };
        Ok(padded_bound(b, self.depth, target))
    }

    fn largest_k(&mut self, ceiling: f64, target: usize, kmax: usize) -> Result<Option<usize>> {
        if self.padded(1, target)? > ceiling {
            return Ok(None);
        }
        let (mut lo, mut hi) = (1usize, 2usize);
        while hi <= kmax && self.padded(hi, target)? <= ceiling {
            lo = hi;
            hi *= 2;
        }
        let mut hi = hi.min(kmax + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.padded(mid, target)? <= ceiling {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(lo))
    }
}

fn global_from(spec: &DagSpec, bounds: &[Vec<f64>], level_depth: usize) -> f64 {
    let parts: Vec<(f64, usize)> = bounds
        .iter()
        .map(|lv| {
            let n = lv.len() as f64;
            let s: f64 = lv.iter().map(|b| b * b).sum();
            ((n + 1.0).sqrt().powi(level_depth as i32) * s.sqrt(), level_depth)
        })
        .collect();
    let g = nary_compose_bound(&parts);
    match input_affine(spec) {
        Some((a, c)) => g * affine_factor(&a, &c),
        None => g,
    }
}

/// Largest k per node considered by the allocation.
pub const MAX_NODE_K: usize = 4096;
/// Largest Taylor term count per node considered by the allocation.
pub const MAX_NODE_TERMS: f64 = 2.0e5;

/// Picks a common ceiling c on the padded node bounds by bisection so that
/// the assembled bound (level concatenations composed across levels) stays
/// within K; each node then takes the largest k whose padded bound is ≤ c.
pub fn allocate_budgets(spec: &DagSpec, budget: f64) -> Result<Allocation> {
    if !(budget >= 1.0) {
        return invalid("budget K must be at least 1");
    }
    let c_max = spec.max_log_term();
    let target = 2 * c_max + 2;
    let mut curves: Vec<Vec<NodeCurve>> = Vec::new();
    for (lv, level) in spec.levels.iter().enumerate() {
        let mut row = Vec::new();
        for i in 0..level.len() {
            let n = &level[i];
            row.push(NodeCurve {
                oracle: unit_oracle(spec, lv, i)?,
                depth: 2 * ceil_log2(n.d_in() + n.r) as usize + 2,
                cache: HashMap::new(),
            });
        }
        curves.push(row);
    }
    let mut base = Vec::new();
    for row in curves.iter_mut() {
        let mut b = Vec::new();
        for c in row.iter_mut() {
            b.push(c.padded(1, target)?);
        }
        base.push(b);
    }
    let mut eval = |c: f64| -> Result<Option<(Vec<Vec<usize>>, Vec<Vec<f64>>, f64)>> {
        let mut ks = Vec::new();
        let mut bs = Vec::new();
        for row in curves.iter_mut() {
            let mut kr = Vec::new();
            let mut br = Vec::new();
            for cur in row.iter_mut() {
                match cur.largest_k(c, target, MAX_NODE_K)? {
                    Some(k) => {
                        br.push(cur.padded(k, target)?);
                        kr.push(k);
                    }
                    None => return Ok(None),
                }
            }
            ks.push(kr);
            bs.push(br);
        }
        let g = global_from(spec, &bs, target);
        Ok(Some((ks, bs, g)))
    };
    let c_lo0 = base.iter().flatten().cloned().fold(0.0, f64::max);
    let mut best = eval(c_lo0)?.expect("k = 1 fits its own ceiling");
    if best.2 > budget {
        return Err(Error::BudgetInfeasible {
            minimal_budget: best.2,
            message: format!("{} needs K ≥ {:.6e} at the smallest common node ceiling", spec.name, best.2),
        });
    }
    let (mut lo, mut hi) = (c_lo0.ln(), budget.ln().max(c_lo0.ln()));
    let mut best_c = c_lo0;
    if let Some(r) = eval(budget)? {
        if r.2 <= budget {
            best = r;
            best_c = budget;
            lo = hi;
        }
    }
    for _ in 0..80 {
        if hi - lo < 1e-6 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match eval(mid.exp())? {
            Some(r) if r.2 <= budget => {
                lo = mid;
                best_c = mid.exp();
                best = r;
            }
            _ => hi = mid,
        }
    }
    let (ks, bs, g) = best;
    let nodes = ks
        .iter()
        .zip(&bs)
        .enumerate()
        .map(|(lv, (kr, br))| {
            kr.iter()
                .zip(br)
                .enumerate()
                .map(|(i, (&k, &b))| NodeAllocation { level: lv, index: i, k, ceiling: best_c, node_bound: b })
                .collect()
        })
        .collect();
    let derivation = vec![
        format!("level depth 2·{c_max}+2 = {target}; every node padded with identity pairs"),
        format!("common padded-node ceiling c = {best_c:.6e}"),
        "level bound (√(n_ℓ+1))^D* √Σ K_v²; levels composed with (√2)^{ΣD} K_L ∏ √(K_ℓ²+2)".to_string(),
        format!("predicted global bound {g:.6e} ≤ K = {budget:.6e}"),
    ];
    Ok(Allocation { nodes, ceiling: best_c, global_bound: g, level_depth: target, derivation })
}

/// Certificate data of one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRate {
    pub id: String,
    pub level: usize,
    pub alpha: f64,
    pub d_in: usize,
    pub effective_alpha_star: f64,
    pub node_k: usize,
    pub node_n: usize,
    pub node_kappa_bound: f64,
    /// Certified sup error of the node subnet on its normalized oracle.
    pub node_error_bound: f64,
    /// Propagated error bound at this node (normalized units except the root).
    pub propagated_error_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCertificate {
    pub per_node: Vec<Vec<NodeRate>>,
    pub worst_case_rate_exponent: f64,
    pub total_error_bound: f64,
    pub depth_d: usize,
    pub width_w: usize,
    pub global_k: f64,
    /// max_v (2d_in+α)/((D+L)d_in+2L).
    pub width_exponent_global: f64,
    /// max_v (2d_in+α)/(d_in(D_v+1)+2) with the node depth D_v.
    pub width_exponent_nodes: f64,
    pub derivation: Vec<String>,
}

/// One compiled node.
#[derive(Debug, Clone)]
pub struct CompiledNode {
    pub id: String,
    /// Unpadded subnet on [0,1]^{d_in}; normalized output except at the root.
    pub net: CertifiedNet,
    pub range_bound: f64,
    pub is_root: bool,
}

impl CompiledNode {
    /// Maps a normalized node output back to g units.
    pub fn denormalize(&self, v: f64) -> f64 {
        if self.is_root {
            v
        } else {
            2.0 * self.range_bound * v - self.range_bound
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledDag {
    pub network: CertifiedNet,
    pub rate: RateCertificate,
    pub allocation: Allocation,
    pub nodes: Vec<Vec<CompiledNode>>,
}

impl CompiledDag {
    /// Per-node values of the node subnets fed with compiled parent values,
    /// in g units (the chain the assembled network computes).
    pub fn node_outputs(&self, spec: &DagSpec, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut prev: Vec<f64> = x
            .iter()
            .zip(&spec.input_box)
            .map(|(&v, &(a, b))| (v - a) / (b - a))
            .collect();
        let mut out = Vec::new();
        for (lv, level) in self.nodes.iter().enumerate() {
            let mut norm = Vec::with_capacity(level.len());
            for (i, n) in level.iter().enumerate() {
                let inp: Vec<f64> = spec.levels[lv][i].parents.iter().map(|&p| prev[p]).collect();
                norm.push(n.net.net.eval_scalar(&inp)?);
            }
            out.push(norm.iter().zip(level).map(|(&v, n)| n.denormalize(v)).collect());
            prev = norm;
        }
        Ok(out)
    }
}

fn check_ranges(spec: &DagSpec, per_dim: usize) -> Result<()> {
    for level in &spec.levels {
        for n in level {
            let d = n.d_in();
            let m = per_dim.max(2);
            let total = m.pow(d as u32).min(20_000);
            let per = (total as f64).powf(1.0 / d as f64).floor().max(2.0) as usize;
            let count = per.pow(d as u32);
            for idx in 0..count {
                let mut rem = idx;
                let x: Vec<f64> = n
                    .oracle
                    .domain_box
                    .iter()
                    .map(|&(a, b)| {
                        let j = rem % per;
                        rem /= per;
                        a + (b - a) * j as f64 / (per - 1) as f64
                    })
                    .collect();
                let v = n.oracle.eval(&x);
                if !v.is_finite() || v.abs() > n.range_bound * (1.0 + 1e-12) {
                    return Err(Error::OracleInconsistency {
                        node: Some(n.id.clone()),
                        message: format!("value {v:e} at {x:?} exceeds declared range {}", n.range_bound),
                    });
                }
            }
        }
    }
    Ok(())
}

fn tag_node(e: Error, id: &str) -> Error {
    match e {
        Error::OracleInconsistency { node: None, message } => Error::OracleInconsistency { node: Some(id.into()), message },
        other => other,
    }
}

pub fn compile_dag(spec: &DagSpec, budget: f64) -> Result<CompiledDag> {
    compile_dag_with(spec, budget, &DagOptions::default())
}

/// Compiles every node at its allocated k, pads each level to a common
/// depth, concatenates with parent routing and composes the levels.
pub fn compile_dag_with(spec: &DagSpec, budget: f64, opts: &DagOptions) -> Result<CompiledDag> {
    check_ranges(spec, opts.range_probes_per_dim)?;
    let alloc = allocate_budgets(spec, budget)?;
    assemble(spec, alloc, Some(budget), opts)
}

/// Compiles with explicit per-node k (no budget search). The certificate
/// budget is set to the assembled bound.
pub fn compile_dag_fixed(spec: &DagSpec, ks: &[Vec<usize>], opts: &DagOptions) -> Result<CompiledDag> {
    check_ranges(spec, opts.range_probes_per_dim)?;
    if ks.len() != spec.depth_levels() || ks.iter().zip(&spec.levels).any(|(k, l)| k.len() != l.len()) {
        return invalid("k table must match the level layout");
    }
    if ks.iter().flatten().any(|&k| k == 0) {
        return invalid("k must be positive");
    }
    let target = 2 * spec.max_log_term() + 2;
    let mut nodes = Vec::new();
    let mut bounds = Vec::new();
    for (lv, row) in ks.iter().enumerate() {
        let mut nr = Vec::new();
        let mut br = Vec::new();
        for (i, &k) in row.iter().enumerate() {
            let n = &spec.levels[lv][i];
            let o = unit_oracle(spec, lv, i)?;
            let b = padded_bound(
                crate::holder_compiler::certificate_bound(&o, k)?,
                2 * ceil_log2(n.d_in() + n.r) as usize + 2,
                target,
            );
            nr.push(NodeAllocation { level: lv, index: i, k, ceiling: f64::NAN, node_bound: b });
            br.push(b);
        }
        nodes.push(nr);
        bounds.push(br);
    }
    let g = global_from(spec, &bounds, target);
    let alloc = Allocation {
        nodes,
        ceiling: f64::NAN,
        global_bound: g,
        level_depth: target,
        derivation: vec![format!("fixed per-node k; predicted global bound {g:.6e}")],
    };
    assemble(spec, alloc, None, opts)
}

fn assemble(spec: &DagSpec, alloc: Allocation, budget: Option<f64>, opts: &DagOptions) -> Result<CompiledDag> {
    let l = spec.depth_levels();
    let target = alloc.level_depth;
    let hopts = HolderOptions { max_weights: opts.max_weights_per_node };
    let mut compiled: Vec<Vec<CompiledNode>> = Vec::with_capacity(l);
    let mut holder: Vec<Vec<crate::holder_compiler::HolderCompileResult>> = Vec::with_capacity(l);
    for lv in 0..l {
        let items: Vec<usize> = (0..spec.levels[lv].len()).collect();
        let res: Vec<Result<crate::holder_compiler::HolderCompileResult>> = par::map(&items, |&i| {
            let n = &spec.levels[lv][i];
            let o = unit_oracle(spec, lv, i)?;
            compile_holder_with(&o, alloc.nodes[lv][i].k, &hopts).map_err(|e| tag_node(e, &n.id))
        });
        let res: Vec<_> = res.into_iter().collect::<Result<_>>()?;
        compiled.push(
            res.iter()
                .zip(&spec.levels[lv])
                .map(|(r, n)| CompiledNode {
                    id: n.id.clone(),
                    net: r.certified(),
                    range_bound: n.range_bound,
                    is_root: lv + 1 == l,
                })
                .collect(),
        );
        holder.push(res);
    }
    let mut level_nets = Vec::with_capacity(l);
    for lv in 0..l {
        let padded: Vec<CertifiedNet> =
            compiled[lv].iter().map(|n| depth_pad(&n.net, target)).collect::<Result<_>>()?;
        let refs: Vec<&CertifiedNet> = padded.iter().collect();
        let routes: Vec<Vec<usize>> = spec.levels[lv].iter().map(|n| n.parents.clone()).collect();
        let width = if lv == 0 { spec.input_dim() } else { spec.levels[lv - 1].len() };
        level_nets.push(concatenate_routed(&refs, &routes, width)?);
    }
    let chain: Vec<&CertifiedNet> = level_nets.iter().collect();
    let mut network = compose_chain(&chain)?;
    drop(level_nets);
    if let Some((a, c)) = input_affine(spec) {
        network = precompose_affine(&network, &a, &c)?;
    }
    let budget = budget.unwrap_or(network.cert.bound);
    network.cert.budget = budget;
    if network.cert.bound > budget * (1.0 + 1e-12) {
        return Err(Error::BudgetInfeasible {
            minimal_budget: network.cert.bound,
            message: format!("assembled bound {:.6e} exceeds K = {budget:.6e}", network.cert.bound),
        });
    }
    let rate = rate_certificate(spec, &alloc, &holder, &network, budget);
    Ok(CompiledDag { network, rate, allocation: alloc, nodes: compiled })
}

fn rate_certificate(
    spec: &DagSpec,
    alloc: &Allocation,
    holder: &[Vec<crate::holder_compiler::HolderCompileResult>],
    network: &CertifiedNet,
    budget: f64,
) -> RateCertificate {
    let l = spec.depth_levels();
    let depth = spec.network_depth();
    let stars = worst_alpha_star(spec);
    let mut per_node = Vec::with_capacity(l);
    let mut prev_err: Vec<f64> = vec![0.0; spec.input_dim()];
    let mut derivation = alloc.derivation.clone();
    derivation.push(
        "error recursion A_v = λ_v (max_p A_p)^{min(α_v,1)} + B_v with λ_v = max(√d_ℓ, M_v), d_ℓ the largest fan-in of the level and M_v the Hölder bound of the node oracle on [0,1]^{d_in}"
            .to_string(),
    );
    for lv in 0..l {
        let fan = spec.levels[lv].iter().map(|n| n.d_in()).max().unwrap_or(1) as f64;
        let mut row = Vec::new();
        let mut errs = Vec::new();
        for (i, n) in spec.levels[lv].iter().enumerate() {
            let h = &holder[lv][i];
            let m = unit_oracle(spec, lv, i).map(|o| o.holder_norm_bound).unwrap_or(f64::INFINITY);
            let lam = fan.sqrt().max(m);
            let a_in = n.parents.iter().map(|&p| prev_err[p]).fold(0.0, f64::max);
            let prop = if a_in > 0.0 { lam * a_in.powf(n.alpha.min(1.0)) } else { 0.0 };
            let a = prop + h.error_bound;
            errs.push(a);
            row.push(NodeRate {
                id: n.id.clone(),
                level: lv + 1,
                alpha: n.alpha,
                d_in: n.d_in(),
                effective_alpha_star: stars[lv][i],
                node_k: h.chosen_k,
                node_n: h.chosen_n,
                node_kappa_bound: alloc.nodes[lv][i].node_bound,
                node_error_bound: h.error_bound,
                propagated_error_bound: a,
            });
        }
        per_node.push(row);
        prev_err = errs;
    }
    let worst = spec
        .levels
        .iter()
        .zip(&stars)
        .flat_map(|(lv, st)| lv.iter().zip(st).map(|(n, &a)| node_exponent(a, n.d_in(), l, depth)))
        .fold(f64::INFINITY, f64::min);
    let nodes = spec.levels.iter().flatten();
    let wt = nodes
        .clone()
        .map(|n| (2 * n.d_in()) as f64 + n.alpha)
        .zip(spec.levels.iter().flatten().map(|n| ((depth + l) * n.d_in() + 2 * l) as f64))
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max);
    let wn = nodes
        .map(|n| {
            let dv = 2 * ceil_log2(n.d_in() + n.r) as usize + 2;
            ((2 * n.d_in()) as f64 + n.alpha) / ((n.d_in() * (dv + 1) + 2) as f64)
        })
        .fold(0.0, f64::max);
    RateCertificate {
        per_node,
        worst_case_rate_exponent: worst,
        total_error_bound: prev_err[0],
        depth_d: network.net.depth(),
        width_w: network.net.hidden_width(),
        global_k: budget,
        width_exponent_global: wt,
        width_exponent_nodes: wn,
        derivation,
    }
}

/// Names accepted by [`gallery_dag`].
pub const GALLERY_DAGS: &[&str] = &["binarytree-d4", "constlevel-L3", "chain2", "multiindex-s2", "binarytree-d8"];

/// Binary tree on d = 2^L inputs: level-1 nodes alternate product and mean,
/// later levels likewise; all ranges 1.
pub fn binary_tree_spec(d: usize, alpha: f64) -> Result<DagSpec> {
    if !d.is_power_of_two() || d < 2 {
        return invalid("binary tree needs d = 2^L ≥ 2");
    }
    let mut levels = Vec::new();
    let mut width = d;
    let mut lv = 1;
    while width > 1 {
        width /= 2;
        levels.push(
            (0..width)
                .map(|i| {
                    let f = if i % 2 == 0 { NodeFunction::Product { scale: 1.0 } } else { NodeFunction::Mean };
                    NodeDecl::new(&format!("g{lv}_{}", i + 1), &[2 * i, 2 * i + 1], f, alpha, 1.0)
                })
                .collect(),
        );
        lv += 1;
    }
    DagSpec::build(&format!("binarytree-d{d}"), vec![(0.0, 1.0); d], levels)
}

/// f(x) = g(Ax) with s projection nodes and a sine ridge root.
pub fn multi_index_spec(d: usize, s: usize, alpha: f64) -> Result<DagSpec> {
    if s == 0 || s >= d {
        return invalid("multi-index model needs 0 < s < d");
    }
    let proj: Vec<NodeDecl> = (0..s)
        .map(|j| {
            let w: Vec<f64> = (0..d).map(|i| if (i + j) % 2 == 0 { 1.0 } else { -1.0 } / d as f64).collect();
            NodeDecl::new(&format!("a{}", j + 1), &(0..d).collect::<Vec<_>>(), NodeFunction::Affine { weights: w, bias: 0.0 }, 2.0, 1.0)
        })
        .collect();
    let root = NodeDecl::new(
        "g",
        &(0..s).collect::<Vec<_>>(),
        NodeFunction::ScaledSine { amplitude: 0.5, frequency: 1.0, weights: None, phase: 0.0 },
        alpha,
        0.5,
    );
    DagSpec::build(&format!("multiindex-s{s}"), vec![(0.0, 1.0); d], vec![proj, vec![root]])
}

/// Gallery specs used by the command line and the acceptance suite.
pub fn gallery_dag(name: &str) -> Result<DagSpec> {
    match name {
        "binarytree-d4" => binary_tree_spec(4, 2.0),
        "binarytree-d8" => binary_tree_spec(8, 2.0),
        "multiindex-s2" => multi_index_spec(4, 2, 2.0),
        "chain2" => DagSpec::build(
            "chain2",
            vec![(-1.0, 1.0)],
            vec![
                vec![NodeDecl::new("g1", &[0], NodeFunction::Affine { weights: vec![0.5], bias: 0.5 }, 2.0, 1.0)],
                vec![NodeDecl::new(
                    "g2",
                    &[0],
                    NodeFunction::Polynomial { terms: vec![(1.0, vec![2])] },
                    2.0,
                    1.0,
                )],
            ],
        ),
        "constlevel-L3" => DagSpec::build(
            "constlevel-L3",
            vec![(0.0, 1.0); 5],
            vec![
                vec![
                    NodeDecl::new("m", &[0, 1, 2], NodeFunction::Mean, 2.0, 1.0),
                    NodeDecl::new("p", &[3, 4], NodeFunction::Product { scale: 1.0 }, 2.0, 1.0),
                    NodeDecl::new(
                        "s",
                        &[4],
                        NodeFunction::ScaledSine { amplitude: 1.0, frequency: 1.5, weights: None, phase: 0.0 },
                        2.0,
                        1.0,
                    ),
                ],
                vec![
                    NodeDecl::new("q", &[0, 1], NodeFunction::Product { scale: 1.0 }, 2.0, 1.0),
                    NodeDecl::new("a", &[1, 2], NodeFunction::Mean, 2.0, 1.0),
                ],
                vec![NodeDecl::new("root", &[0, 1], NodeFunction::Mean, 2.0, 1.0)],
            ],
        ),
        _ => invalid(format!("unknown gallery DAG '{name}' (known: {})", GALLERY_DAGS.join(", "))),
    }
}
