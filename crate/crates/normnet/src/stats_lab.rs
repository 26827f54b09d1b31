//! Statistical pipeline: synthetic data from DAG targets, norm-constrained
//! least squares over clipped ReLU networks, the n-dependent budget
//! schedule, Monte Carlo excess risk and a Rademacher complexity check.
//!
//! Inputs are drawn uniformly from the DAG input box and divided by the
//! largest corner norm of the box, so ‖x‖ ≤ 1; the target is evaluated at
//! the undivided point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag_compiler::{worst_alpha_star, DagSpec};
use crate::error::{invalid, Error, Result};
use crate::net_ir::{clip, CertifiedNet, Layer, Matrix, Network};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// y = f*(x) + ε with ε uniform on [−half_width, half_width].
    BoundedUniform { half_width: f64 },
}

impl NoiseModel {
    fn half_width(self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::BoundedUniform { half_width } => half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Flat row-major inputs, `n × dim`.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
    pub target: String,
    pub noise: NoiseModel,
    /// Inputs were divided by this factor.
    pub input_scale: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Largest Euclidean norm over the corners of the input box.
pub fn input_scale(spec: &DagSpec) -> f64 {
    spec.input_box.iter().map(|&(a, b)| a.abs().max(b.abs()).powi(2)).sum::<f64>().sqrt().max(1.0)
}

/// f* at a rescaled input x (‖x‖ ≤ 1).
pub fn target_at(spec: &DagSpec, x: &[f64]) -> f64 {
    let s = input_scale(spec);
    let z: Vec<f64> = x.iter().map(|v| v * s).collect();
    spec.evaluate(&z)
}

fn draw(spec: &DagSpec, n: usize, noise: NoiseModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = input_scale(spec);
    let d = spec.input_dim();
    let mut xs = Vec::with_capacity(n * d);
    let mut clean = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let h = noise.half_width();
    for _ in 0..n {
        let z: Vec<f64> = spec.input_box.iter().map(|&(a, b)| a + (b - a) * rng.gen::<f64>()).collect();
        let f = spec.evaluate(&z);
        let eps = if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
        xs.extend(z.iter().map(|v| v / s));
        clean.push(f);
        ys.push(f + eps);
    }
    (xs, clean, ys)
}

/// n i.i.d. samples. The declared root range bounds ‖f*‖_∞; a noise model
/// that could push |y| above 1 is rejected.
pub fn generate_data(spec: &DagSpec, n: usize, seed: u64, noise: NoiseModel) -> Result<Dataset> {
    let r = spec.root().range_bound;
    if r > 1.0 {
        return invalid(format!("target range bound {r} exceeds 1"));
    }
    let h = noise.half_width();
    if !(h >= 0.0) || h > 1.0 - r {
        return invalid(format!("noise half-width {h} exceeds 1 − ‖f*‖∞ = {}", 1.0 - r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, _, ys) = draw(spec, n, noise, &mut rng);
    Ok(Dataset { xs, ys, dim: spec.input_dim(), seed, target: spec.name.clone(), noise, input_scale: input_scale(spec) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduledK {
    pub k: f64,
    pub exponent: f64,
    pub multiplier: f64,
}

/// K = c · n^e with e = max_v (1/2)(2L+(D+L)d_in)/(2L+(D+L)d_in+4α*_v).
pub fn schedule_k(spec: &DagSpec, n: usize, multiplier: f64) -> Result<ScheduledK> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let l = spec.depth_levels();
    let depth = spec.network_depth();
    let stars = worst_alpha_star(spec);
    let exponent = spec
        .levels
        .iter()
        .zip(&stars)
        .flat_map(|(lv, st)| {
            lv.iter().zip(st).map(|(node, &a)| {
                let m = (2 * l + (depth + l) * node.d_in()) as f64;
                0.5 * m / (m + 4.0 * a)
            })
        })
        .fold(0.0, f64::max);
    Ok(ScheduledK { k: multiplier * (n as f64).powf(exponent), exponent, multiplier })
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub batch_size: usize,
    pub step: f64,
    pub decay: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { batch_size: 32, step: 1e-2, decay: 0.97, epochs: 500, momentum: 0.0, seed: 0 }
    }
}

/// Dense ReLU network used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub input_dim: usize,
    /// (weights row-major out × in, bias) per hidden layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub widths: Vec<usize>,
    pub final_row: Vec<f64>,
}

impl DenseNet {
    /// Uniform entries with variance 1/fan-in.
    pub fn init(input_dim: usize, width: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut fan = input_dim;
        for _ in 0..depth {
            let a = (3.0 / fan as f64).sqrt();
            let w = (0..width * fan).map(|_| rng.gen_range(-a..a)).collect();
            let b = (0..width).map(|_| rng.gen_range(-a..a)).collect();
            layers.push((w, b));
            fan = width;
        }
        let a = (3.0 / fan as f64).sqrt();
        let final_row = (0..fan).map(|_| rng.gen_range(-a..a)).collect();
        Self { input_dim, layers, widths: vec![width; depth], final_row }
    }

    fn fan_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.widths[l - 1]
        }
    }

    pub fn kappa(&self) -> f64 {
        let hidden: f64 = self
            .layers
            .iter()
            .map(|(w, b)| (w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt())
            .product();
        hidden * self.final_row.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unclipped output.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let fan = self.fan_in(l);
            h = (0..self.widths[l])
                .map(|i| {
                    let z = b[i] + w[i * fan..(i + 1) * fan].iter().zip(&h).map(|(a, v)| a * v).sum::<f64>();
                    z.max(0.0)
                })
                .collect();
        }
        self.final_row.iter().zip(&h).map(|(a, v)| a * v).sum()
    }

    /// Joint positive rescaling of each hidden (A_ℓ, b_ℓ) to unit Frobenius
    /// norm, carried into the next layer, then the final row shrunk by
    /// min(1, K/κ). The function changes only through the final shrink.
    pub fn project(&mut self, budget: f64) {
        let mut carry = 1.0;
        for l in 0..self.layers.len() {
            let (w, b) = &mut self.layers[l];
            for v in w.iter_mut() {
                *v *= carry;
            }
            let t = (w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if t > 0.0 && t.is_finite() {
                for v in w.iter_mut().chain(b.iter_mut()) {
                    *v /= t;
                }
                carry = t;
            } else {
                carry = 1.0;
            }
        }
        for v in self.final_row.iter_mut() {
            *v *= carry;
        }
        let k = self.kappa();
        if k > budget {
            let f = if k > 0.0 { budget / k } else { 0.0 };
            for v in self.final_row.iter_mut() {
                *v *= f;
            }
            // Rounding can leave κ a hair above the budget.
            let k2 = self.kappa();
            if k2 > budget {
                let g = if k2 > 0.0 { budget / k2 * (1.0 - 1e-15) } else { 0.0 };
                for v in self.final_row.iter_mut() {
                    *v *= g;
                }
            }
        }
    }

    /// Gradient of (1/m) Σ ℓ_i where `dloss(i, out)` returns ∂ℓ_i/∂out.
    fn gradient(&self, xs: &[f64], idx: &[usize], dloss: &dyn Fn(usize, f64) -> f64) -> DenseNet {
        let mut g = self.zeroed();
        let m = idx.len() as f64;
        for &i in idx {
            let x = &xs[i * self.input_dim..(i + 1) * self.input_dim];
            let mut acts = vec![x.to_vec()];
            for (l, (w, b)) in self.layers.iter().enumerate() {
                let fan = self.fan_in(l);
                let h = acts.last().unwrap();
                let next: Vec<f64> = (0..self.widths[l])
                    .map(|j| (b[j] + w[j * fan..(j + 1) * fan].iter().zip(h).map(|(a, v)| a * v).sum::<f64>()).max(0.0))
                    .collect();
                acts.push(next);
            }
            let last = acts.last().unwrap();
            let out: f64 = self.final_row.iter().zip(last).map(|(a, v)| a * v).sum();
            let dout = dloss(i, out) / m;
            if dout == 0.0 {
                continue;
            }
            for (gv, &a) in g.final_row.iter_mut().zip(last) {
                *gv += dout * a;
            }
            let mut delta: Vec<f64> = self.final_row.iter().map(|a| a * dout).collect();
            for l in (0..self.layers.len()).rev() {
                let fan = self.fan_in(l);
                let post = &acts[l + 1];
                for (dv, &p) in delta.iter_mut().zip(post) {
                    if p <= 0.0 {
                        *dv = 0.0;
                    }
                }
                let input = &acts[l];
                let (gw, gb) = &mut g.layers[l];
                for j in 0..self.widths[l] {
                    if delta[j] == 0.0 {
                        continue;
                    }
                    gb[j] += delta[j];
                    for (k, &v) in input.iter().enumerate() {
                        gw[j * fan + k] += delta[j] * v;
                    }
                }
                if l > 0 {
                    let w = &self.layers[l].0;
                    let mut nd = vec![0.0; fan];
                    for j in 0..self.widths[l] {
                        if delta[j] == 0.0 {
                            continue;
                        }
                        for k in 0..fan {
                            nd[k] += w[j * fan + k] * delta[j];
                        }
                    }
                    delta = nd;
                }
            }
        }
        g
    }

    fn zeroed(&self) -> DenseNet {
        DenseNet {
            input_dim: self.input_dim,
            layers: self.layers.iter().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])).collect(),
            widths: self.widths.clone(),
            final_row: vec![0.0; self.final_row.len()],
        }
    }

    fn axpy(&mut self, a: f64, g: &DenseNet) {
        for ((w, b), (gw, gb)) in self.layers.iter_mut().zip(&g.layers) {
            for (v, d) in w.iter_mut().zip(gw) {
                *v += a * d;
            }
            for (v, d) in b.iter_mut().zip(gb) {
                *v += a * d;
            }
        }
        for (v, d) in self.final_row.iter_mut().zip(&g.final_row) {
            *v += a * d;
        }
    }

    fn scale(&mut self, a: f64) {
        for (w, b) in self.layers.iter_mut() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= a);
        }
        self.final_row.iter_mut().for_each(|v| *v *= a);
    }

    pub fn to_network(&self) -> Result<Network> {
        let mut hidden = Vec::with_capacity(self.layers.len());
        for (l, (w, b)) in self.layers.iter().enumerate() {
            hidden.push(Layer::new(Matrix::from_dense(self.widths[l], self.fan_in(l), w)?, b.clone())?);
        }
        let fan = self.fan_in(self.layers.len());
        Network::new(self.input_dim, hidden, Matrix::from_dense(1, fan, &self.final_row)?)
    }

    /// Largest hidden-layer Frobenius norm of (A_ℓ, b_ℓ); 1 after projection.
    pub fn max_hidden_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| (w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>()).sqrt())
            .fold(0.0, f64::max)
    }
}

fn clamp1(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

fn sq_loss_grad(out: f64, y: f64) -> f64 {
    if out.abs() >= 1.0 {
        0.0
    } else {
        2.0 * (out - y)
    }
}

fn risk(net: &DenseNet, xs: &[f64], ys: &[f64]) -> f64 {
    let d = net.input_dim;
    ys.iter().enumerate().map(|(i, y)| (clamp1(net.forward(&xs[i * d..(i + 1) * d])) - y).powi(2)).sum::<f64>()
        / ys.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct ErmResult {
    /// χ₁ ∘ core.
    pub trained: CertifiedNet,
    pub core: DenseNet,
    pub empirical_risk: f64,
    pub test_risk: f64,
    pub excess_risk_estimate: f64,
    pub excess_risk_stderr: f64,
    pub k_used: f64,
    pub optimizer_trace: Vec<EpochLog>,
}

impl ErmResult {
    /// Clipped prediction.
    pub fn predict(&self, x: &[f64]) -> f64 {
        clamp1(self.core.forward(x))
    }
}

/// Fresh draws used for test risk and excess risk.
pub const HOLDOUT: usize = 2048;

/// Minimizes the empirical squared loss of χ₁∘φ over κ(φ) ≤ K with
/// mini-batch descent and a projection after every update.
pub fn erm_train(
    data: &Dataset,
    spec: &DagSpec,
    width: usize,
    depth: usize,
    budget: f64,
    cfg: &OptimizerConfig,
) -> Result<ErmResult> {
    if data.is_empty() || width == 0 {
        return invalid("ERM needs data and a positive width");
    }
    if !(budget >= 0.0) {
        return invalid("budget must be nonnegative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ data.seed.rotate_left(17));
    let mut net = DenseNet::init(data.dim, width, depth, &mut rng);
    net.project(budget);
    let n = data.len();
    let initial = risk(&net, &data.xs, &data.ys);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = cfg.step;
    let mut velocity = net.zeroed();
    let mut bad = 0;
    let ys = &data.ys;
    for epoch in 0..cfg.epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let g = net.gradient(&data.xs, batch, &|i, out| sq_loss_grad(out, ys[i]));
            velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &g);
            net.axpy(-step, &velocity);
            net.project(budget);
        }
        let loss = risk(&net, &data.xs, &data.ys);
        trace.push(EpochLog { epoch, loss, kappa: net.kappa(), step });
        if !loss.is_finite() || loss > 10.0 * initial.max(1e-12) {
            bad += 1;
            if bad >= 5 || !loss.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "loss {loss:e} above 10× initial {initial:e} for {bad} epochs (last epoch {epoch})"
                )));
            }
        } else {
            bad = 0;
        }
        step *= cfg.decay;
    }
    let core = net.to_network()?;
    let trained = clip(&CertifiedNet::with_bound(core, net.kappa(), "erm core").with_budget(budget), 1.0)?;
    let empirical_risk = risk(&net, &data.xs, &data.ys);
    let mut test_rng = ChaCha8Rng::seed_from_u64(data.seed.wrapping_add(0x5EED_0001));
    let (txs, _, tys) = draw(spec, HOLDOUT, data.noise, &mut test_rng);
    let test_risk = risk(&net, &txs, &tys);
    let mut res = ErmResult {
        trained,
        core: net,
        empirical_risk,
        test_risk,
        excess_risk_estimate: f64::NAN,
        excess_risk_stderr: f64::NAN,
        k_used: budget,
        optimizer_trace: trace,
    };
    let (e, se) = excess_risk(&|x| res.predict(x), spec, data.noise, HOLDOUT * 4, data.seed.wrapping_add(0x5EED_0002));
    res.excess_risk_estimate = e;
    res.excess_risk_stderr = se;
    Ok(res)
}

trait WithBudget {
    fn with_budget(self, k: f64) -> Self;
}

impl WithBudget for CertifiedNet {
    fn with_budget(mut self, k: f64) -> Self {
        self.cert.budget = k;
        self
    }
}

/// Monte Carlo estimate of E[(f̂ − y)²] − E[(f* − y)²] on fresh draws, with
/// its standard error.
pub fn excess_risk(
    predictor: &(dyn Fn(&[f64]) -> f64 + Sync),
    spec: &DagSpec,
    noise: NoiseModel,
    mc_count: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, clean, ys) = draw(spec, mc_count, noise, &mut rng);
    let d = spec.input_dim();
    let idx: Vec<usize> = (0..mc_count).collect();
    let diffs = par::map(&idx, |&i| {
        let p = predictor(&xs[i * d..(i + 1) * d]);
        (p - ys[i]).powi(2) - (clean[i] - ys[i]).powi(2)
    });
    let m = mc_count as f64;
    let mean = diffs.iter().sum::<f64>() / m;
    let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// One cell of an n-sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErmRow {
    pub n: usize,
    pub seed: u64,
    pub k: f64,
    pub empirical_risk: f64,
    pub test_risk: f64,
    pub excess: f64,
    pub stderr: f64,
    /// κ of the trained core.
    pub kappa: f64,
    pub runtime_s: f64,
}

/// Trains every (n, seed) cell independently; cells run in parallel.
pub fn erm_sweep(
    spec: &DagSpec,
    ns: &[usize],
    seeds: &[u64],
    width: usize,
    depth: usize,
    k_multiplier: f64,
    cfg: &OptimizerConfig,
) -> Result<Vec<ErmRow>> {
    let cells: Vec<(usize, u64)> = ns.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let rows = par::map(&cells, |&(n, seed)| -> Result<ErmRow> {
        let t = std::time::Instant::now();
        let data = generate_data(spec, n, seed, NoiseModel::None)?;
        let k = schedule_k(spec, n, k_multiplier)?.k;
        let c = OptimizerConfig { seed, ..cfg.clone() };
        let r = erm_train(&data, spec, width, depth, k, &c)?;
        Ok(ErmRow {
            n,
            seed,
            k,
            empirical_risk: r.empirical_risk,
            test_risk: r.test_risk,
            excess: r.excess_risk_estimate,
            stderr: r.excess_risk_stderr,
            kappa: r.core.kappa(),
            runtime_s: t.elapsed().as_secs_f64(),
        })
    });
    rows.into_iter().collect()
}

/// Median over seeds per n: (n, K, median excess, stderr of the median cell).
pub fn median_by_n(rows: &[ErmRow]) -> Vec<(usize, f64, f64, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.iter()
        .map(|&n| {
            let mut cell: Vec<&ErmRow> = rows.iter().filter(|r| r.n == n).collect();
            cell.sort_by(|a, b| a.excess.total_cmp(&b.excess));
            let m = cell[cell.len() / 2];
            (n, m.k, m.excess, m.stderr)
        })
        .collect()
}

/// Rademacher ascent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    pub input_dim: usize,
    pub width: usize,
    pub sign_draws: usize,
    pub restarts: usize,
    pub steps: usize,
    pub step: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { input_dim: 4, width: 16, sign_draws: 5, restarts: 3, steps: 300, step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RademacherReport {
    pub estimate: f64,
    pub bound: f64,
    pub per_draw: Vec<f64>,
    pub holds: bool,
}

/// Lower estimate of the empirical Rademacher complexity of
/// {φ : depth D, width W, κ(φ) ≤ K} by projected ascent, against
/// (√(2 log 2 · D) + 1) K / √n. The class equals K times the κ ≤ 1 class,
/// so the ascent runs at K = 1 and the result is multiplied by K.
pub fn rademacher_check(depth: usize, budget: f64, n: usize, seed: u64, cfg: &AscentConfig) -> Result<RademacherReport> {
    if n == 0 || !(budget >= 0.0) {
        return invalid("need n ≥ 1 and K ≥ 0");
    }
    let bound = ((2.0 * 2f64.ln() * depth as f64).sqrt() + 1.0) * budget / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.input_dim;
    let s = (d as f64).sqrt();
    let xs: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() / s).collect();
    let draws: Vec<(Vec<f64>, u64)> = (0..cfg.sign_draws)
        .map(|_| ((0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(), rng.gen()))
        .collect();
    let idx: Vec<usize> = (0..n).collect();
    let per_draw: Vec<f64> = par::map(&draws, |(sigma, dseed)| {
        let mut best: f64 = 0.0;
        let mut r = ChaCha8Rng::seed_from_u64(*dseed);
        for _ in 0..cfg.restarts.max(1) {
            let mut net = DenseNet::init(d, cfg.width, depth, &mut r);
            net.project(1.0);
            for _ in 0..cfg.steps {
                // Ascent on (1/n) Σ σ_i φ(x_i): descend on its negative.
                let g = net.gradient(&xs, &idx, &|i, _| -sigma[i]);
                net.axpy(-cfg.step, &g);
                net.project(1.0);
                // Keep the net on the sphere κ = 1 where the objective is largest.
                let k = net.kappa();
                if k > 0.0 && k < 1.0 {
                    let f = 1.0 / k;
                    net.final_row.iter_mut().for_each(|v| *v *= f);
                }
            }
            let val = (0..n).map(|i| sigma[i] * net.forward(&xs[i * d..(i + 1) * d])).sum::<f64>() / n as f64;
            best = best.max(val.abs());
        }
        best * budget
    });
    let estimate = per_draw.iter().sum::<f64>() / per_draw.len().max(1) as f64;
    Ok(RademacherReport { estimate, bound, holds: estimate <= bound, per_draw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag_compiler::{binary_tree_spec, DagSpec, NodeDecl, NodeFunction};

    fn linear_1d() -> DagSpec {
        DagSpec::build(
            "lin",
            vec![(0.0, 1.0)],
            vec![vec![NodeDecl::new("g", &[0], NodeFunction::Affine { weights: vec![0.8], bias: -0.4 }, 2.0, 0.4)]],
        )
        .unwrap()
    }

    #[test]
    fn data_is_deterministic_and_bounded() {
        let s = binary_tree_spec(4, 2.0).unwrap();
        let a = generate_data(&s, 500, 9, NoiseModel::None).unwrap();
        let b = generate_data(&s, 500, 9, NoiseModel::None).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert!(a.x(i).iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-15);
            assert_eq!(a.ys[i], target_at(&s, a.x(i)));
        }
        assert!(generate_data(&s, 10, 1, NoiseModel::BoundedUniform { half_width: 0.5 }).is_err());
        let l = linear_1d();
        let c = generate_data(&l, 2000, 2, NoiseModel::BoundedUniform { half_width: 0.6 }).unwrap();
        assert!(c.ys.iter().all(|y| y.abs() <= 1.0));
    }

    #[test]
    fn schedule_exponent() {
        let mut levels = Vec::new();
        levels.push(vec![
            NodeDecl::new("a", &[0, 1], NodeFunction::Mean, 1.0, 1.0),
            NodeDecl::new("b", &[2, 3], NodeFunction::Mean, 1.0, 1.0),
        ]);
        levels.push(vec![NodeDecl::new("c", &[0, 1], NodeFunction::Mean, 1.0, 1.0)]);
        let s = DagSpec::build("bt", vec![(0.0, 1.0); 4], levels).unwrap();
        let k = schedule_k(&s, 100, 1.0).unwrap();
        assert!((k.exponent - 12.0 / 28.0).abs() < 1e-15);
        assert!(schedule_k(&s, 200, 1.0).unwrap().k > k.k);
        let t = binary_tree_spec(4, 2.0).unwrap();
        let e = schedule_k(&t, 10, 1.0).unwrap().exponent;
        assert!(e > 0.0 && e < 0.5);
    }

    #[test]
    fn zero_budget_gives_zero_network() {
        let l = linear_1d();
        let d = generate_data(&l, 64, 3, NoiseModel::None).unwrap();
        let cfg = OptimizerConfig { epochs: 3, ..Default::default() };
        let r = erm_train(&d, &l, 8, 2, 0.0, &cfg).unwrap();
        let expect = d.ys.iter().map(|y| y * y).sum::<f64>() / 64.0;
        assert!((r.empirical_risk - expect).abs() < 1e-15);
    }

    #[test]
    fn projection_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = DenseNet::init(3, 6, 3, &mut rng);
        let x = [0.2, -0.1, 0.4];
        let before = net.forward(&x);
        net.project(1e9);
        assert!((net.forward(&x) - before).abs() < 1e-12);
        assert!((net.max_hidden_norm() - 1.0).abs() < 1e-12);
        let copy = net.clone();
        net.project(1e9);
        for (a, b) in net.final_row.iter().zip(&copy.final_row) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        net.project(0.5);
        assert!(net.kappa() <= 0.5);
        let dense = net.to_network().unwrap();
        assert!((dense.kappa() - net.kappa()).abs() < 1e-12);
        assert!((dense.eval_scalar(&x).unwrap() - net.forward(&x)).abs() < 1e-12);
    }

    #[test]
    fn linear_target_fits() {
        let l = linear_1d();
        let d = generate_data(&l, 64, 5, NoiseModel::None).unwrap();
        let cfg = OptimizerConfig { epochs: 500, momentum: 0.9, ..Default::default() };
        let r = erm_train(&d, &l, 8, 2, 50.0, &cfg).unwrap();
        assert!(r.empirical_risk <= 1e-3, "{}", r.empirical_risk);
        for e in &r.optimizer_trace {
            assert!(e.kappa <= 50.0 * (1.0 + 1e-9));
        }
        assert!(r.excess_risk_estimate >= -3.0 * r.excess_risk_stderr);
    }

    #[test]
    fn exact_predictor_has_zero_excess() {
        let s = binary_tree_spec(4, 2.0).unwrap();
        let (e, se) = excess_risk(&|x| target_at(&s, x), &s, NoiseModel::None, 1000, 3);
        assert_eq!(e, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn rademacher_small() {
        let cfg = AscentConfig { steps: 60, restarts: 1, ..Default::default() };
        let z = rademacher_check(2, 0.0, 64, 1, &cfg).unwrap();
        assert_eq!((z.estimate, z.bound), (0.0, 0.0));
        let a = rademacher_check(2, 5.0, 64, 1, &cfg).unwrap();
        let b = rademacher_check(2, 10.0, 64, 1, &cfg).unwrap();
        assert!(a.holds && b.holds);
        assert!(b.estimate >= a.estimate);
    }
}
