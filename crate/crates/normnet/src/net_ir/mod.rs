//! Explicit ReLU networks `x ↦ A_D σ(A_{D-1} σ(⋯ σ(A_0 x + b_0) ⋯) + b_{D-1})`,
//! their multiplicative Frobenius measure κ, the bias-free augmented form,
//! and a text serialization.
//!
//! κ(θ) = ‖A_D‖_F · ∏_ℓ √(‖A_ℓ‖_F² + ‖b_ℓ‖² + 1). In the augmented form each
//! hidden layer becomes `[[A_ℓ, b_ℓ], [0, 1]]` acting on `(h, 1)` and the final
//! matrix becomes `(A_D, 0)`, so the product of their Frobenius norms is κ.

mod format;
mod matrix;

pub use format::{deserialize, serialize};
pub use matrix::{Matrix, MatrixBuilder};

use crate::error::{dim_err, invalid, Result};
use crate::par;
use serde::{Deserialize, Serialize};

/// One hidden layer: affine map followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return dim_err(format!("layer has {} rows but bias of length {}", weights.rows(), bias.len()));
        }
        Ok(Layer { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    /// √(‖A‖_F² + ‖b‖² + 1).
    pub fn augmented_norm(&self) -> f64 {
        (self.weights.frobenius_sq() + sq_norm(&self.bias) + 1.0).sqrt()
    }
}

pub(crate) fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Explicit ReLU network. Depth 0 (a plain linear map) is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    output_dim: usize,
    hidden: Vec<Layer>,
    final_matrix: Matrix,
}

impl Network {
    pub fn new(input_dim: usize, hidden: Vec<Layer>, final_matrix: Matrix) -> Result<Self> {
        if input_dim == 0 || final_matrix.rows() == 0 {
            return invalid("input and output dimensions must be positive");
        }
        let mut prev = input_dim;
        for (i, l) in hidden.iter().enumerate() {
            if l.in_dim() != prev {
                return dim_err(format!("layer {i} expects {} inputs, previous layer gives {prev}", l.in_dim()));
            }
            if l.bias.len() != l.out_dim() {
                return dim_err(format!("layer {i} bias length mismatch"));
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return invalid(format!("layer {i} has non-finite entries"));
            }
            prev = l.out_dim();
        }
        if final_matrix.cols() != prev {
            return dim_err(format!("final matrix expects {} inputs, got {prev}", final_matrix.cols()));
        }
        if !final_matrix.is_finite() {
            return invalid("final matrix has non-finite entries");
        }
        Ok(Network { input_dim, output_dim: final_matrix.rows(), hidden, final_matrix })
    }

    /// Depth-0 network realizing `x ↦ A x`.
    pub fn linear(a: Matrix) -> Result<Self> {
        let d = a.cols();
        Network::new(d, Vec::new(), a)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn hidden(&self) -> &[Layer] {
        &self.hidden
    }

    pub fn final_matrix(&self) -> &Matrix {
        &self.final_matrix
    }

    pub(crate) fn into_parts(self) -> (usize, Vec<Layer>, Matrix) {
        (self.input_dim, self.hidden, self.final_matrix)
    }

    pub(crate) fn hidden_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.hidden
    }

    pub(crate) fn final_mut(&mut self) -> &mut Matrix {
        &mut self.final_matrix
    }

    /// Largest layer dimension, counting input and output.
    pub fn width(&self) -> usize {
        let mut w = self.input_dim.max(self.output_dim);
        for l in &self.hidden {
            w = w.max(l.out_dim());
        }
        w
    }

    /// Largest hidden layer dimension.
    pub fn hidden_width(&self) -> usize {
        self.hidden.iter().map(|l| l.out_dim()).max().unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.hidden.iter().map(|l| l.weights.nnz() + l.bias.iter().filter(|b| **b != 0.0).count()).sum::<usize>()
            + self.final_matrix.nnz()
    }

    /// √(‖A_ℓ‖_F² + ‖b_ℓ‖² + 1) for every hidden layer.
    pub fn per_layer_norms(&self) -> Vec<f64> {
        self.hidden.iter().map(Layer::augmented_norm).collect()
    }

    /// κ(θ) = ‖A_D‖_F ∏ √(‖A_ℓ‖_F² + ‖b_ℓ‖² + 1).
    pub fn kappa(&self) -> f64 {
        self.per_layer_norms().iter().product::<f64>() * self.final_matrix.frobenius()
    }

    /// Evaluates at one point.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return dim_err(format!("input of length {} for a network with input_dim {}", x.len(), self.input_dim));
        }
        let mut scratch = Scratch::default();
        Ok(self.eval_batch_into(x, 1, &mut scratch))
    }

    /// Scalar output at one point (first coordinate).
    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?[0])
    }

    /// Evaluates a batch of points given as a flat row-major array
    /// (`count × input_dim`). Returns a flat `count × output_dim` array.
    /// Every point goes through exactly the same arithmetic as [`evaluate`].
    pub fn evaluate_many(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim;
        if points.len() % d != 0 {
            return dim_err("flat point array length is not a multiple of input_dim");
        }
        let count = points.len() / d;
        let batch = self.batch_size().min(count.max(1));
        let chunks = par::map_chunks(points, batch * d, |chunk| {
            let mut scratch = Scratch::default();
            self.eval_batch_into(chunk, chunk.len() / d, &mut scratch)
        });
        let mut out = Vec::with_capacity(count * self.output_dim);
        for c in chunks {
            out.extend(c);
        }
        Ok(out)
    }

    /// Points per evaluation batch, sized so activation buffers stay near
    /// 256 MiB even for very wide networks.
    fn batch_size(&self) -> usize {
        let w = self.width().max(1);
        ((1usize << 25) / w).clamp(1, 64)
    }

    fn eval_batch_into(&self, points: &[f64], count: usize, s: &mut Scratch) -> Vec<f64> {
        let d = self.input_dim;
        s.a.clear();
        s.a.resize(d * count, 0.0);
        for p in 0..count {
            for i in 0..d {
                s.a[i * count + p] = points[p * d + i];
            }
        }
        for l in &self.hidden {
            l.weights.mul_batch(&s.a, count, Some(&l.bias), &mut s.b);
            for v in s.b.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            std::mem::swap(&mut s.a, &mut s.b);
        }
        self.final_matrix.mul_batch(&s.a, count, None, &mut s.b);
        let o = self.output_dim;
        let mut out = vec![0.0; count * o];
        for p in 0..count {
            for j in 0..o {
                out[p * o + j] = s.b[j * count + p];
            }
        }
        out
    }

    /// Hidden activations layer by layer at one point (used by training and tracing).
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim {
            return dim_err("input length mismatch");
        }
        let mut acts = vec![x.to_vec()];
        for l in &self.hidden {
            let prev = acts.last().unwrap();
            let mut z = l.weights.mul_vec(prev);
            for (zi, bi) in z.iter_mut().zip(&l.bias) {
                *zi = (*zi + bi).max(0.0);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Bias-free augmented form acting on `(x, 1)`.
    pub fn to_augmented(&self) -> AugmentedNetwork {
        let mut mats = Vec::with_capacity(self.depth() + 1);
        for l in &self.hidden {
            let (r, c) = (l.out_dim(), l.in_dim());
            let mut b = MatrixBuilder::with_capacity(c + 1, l.weights.nnz() + r + 1);
            for i in 0..r {
                for (j, v) in l.weights.row(i) {
                    b.push(j, v);
                }
                b.push(c, l.bias[i]);
                b.end_row();
            }
            b.push(c, 1.0);
            b.end_row();
            mats.push(b.finish());
        }
        let c = self.final_matrix.cols();
        let mut b = MatrixBuilder::new(c + 1);
        for i in 0..self.output_dim {
            for (j, v) in self.final_matrix.row(i) {
                b.push(j, v);
            }
            b.end_row();
        }
        mats.push(b.finish());
        AugmentedNetwork { matrices: mats }
    }

    /// Fresh certificate for this network whose bound and budget equal its exact κ.
    pub fn exact_certificate(&self) -> FrobeniusCertificate {
        let k = self.kappa();
        FrobeniusCertificate::new(self, k, Vec::new())
    }
}

#[derive(Default)]
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Bias-free form: hidden matrices `[[A_ℓ, b_ℓ], [0, 1]]`, final `(A_D, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedNetwork {
    pub matrices: Vec<Matrix>,
}

impl AugmentedNetwork {
    /// Evaluates on `(x, 1)`; `x` excludes the homogeneous coordinate.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let first = &self.matrices[0];
        if x.len() + 1 != first.cols() {
            return dim_err("augmented input length mismatch");
        }
        let mut h: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
        let last = self.matrices.len() - 1;
        for (i, m) in self.matrices.iter().enumerate() {
            h = m.mul_vec(&h);
            if i < last {
                for v in &mut h {
                    *v = v.max(0.0);
                }
            }
        }
        Ok(h)
    }

    pub fn norm_product(&self) -> f64 {
        self.matrices.iter().map(Matrix::frobenius).product()
    }
}

/// Kinds of norm-tracked steps recorded in a certificate derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Construct,
    Rescale,
    LinearCombine,
    Concatenate,
    Compose,
    DepthPad,
    Clip,
    FixInputs,
}

/// One algebra step: operation, operand κ values, and the bound it certifies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraStep {
    pub kind: StepKind,
    pub label: String,
    pub operand_kappas: Vec<f64>,
    pub coefficients: Option<Vec<f64>>,
    pub bound_applied: f64,
    pub depth_in: Vec<usize>,
    pub depth_out: usize,
}

/// κ of a network together with its certified upper bound, the declared
/// budget, and the trail of steps that produced the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FrobeniusCertificate {
    pub kappa: f64,
    pub bound: f64,
    pub budget: f64,
    pub per_layer_norms: Vec<f64>,
    pub final_norm: f64,
    pub derivation: Vec<AlgebraStep>,
}

impl FrobeniusCertificate {
    /// Certificate carrying `bound` as both bound and budget.
    pub fn new(net: &Network, bound: f64, derivation: Vec<AlgebraStep>) -> Self {
        let per = net.per_layer_norms();
        let fin = net.final_matrix().frobenius();
        let kappa = per.iter().product::<f64>() * fin;
        FrobeniusCertificate { kappa, bound, budget: bound, per_layer_norms: per, final_norm: fin, derivation }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    /// κ ≤ budget and κ ≤ bound, each to relative 1e-12.
    pub fn satisfied(&self) -> bool {
        let tol = 1.0 + 1e-12;
        self.kappa <= self.budget * tol && self.kappa <= self.bound * tol
    }

    /// Whether the stored κ matches the network to relative 1e-12.
    pub fn matches(&self, net: &Network) -> bool {
        rel_close(self.kappa, net.kappa(), 1e-12)
    }
}

pub(crate) fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Network realizing χ_B(x) = σ(x) − σ(−x) − σ(x−B) + σ(−x−B) coordinatewise
/// on a scalar input.
pub fn clip_net(b: f64) -> Result<Network> {
    if !(b > 0.0) || !b.is_finite() {
        return invalid("clip level must be positive and finite");
    }
    let a0 = Matrix::from_dense(4, 1, &[1.0, -1.0, 1.0, -1.0])?;
    let layer = Layer::new(a0, vec![0.0, 0.0, -b, -b])?;
    let fin = Matrix::from_dense(1, 4, &[1.0, -1.0, -1.0, 1.0])?;
    Network::new(1, vec![layer], fin)
}

/// Network paired with its certificate; the unit every construction returns.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedNet {
    pub net: Network,
    pub cert: FrobeniusCertificate,
}

impl CertifiedNet {
    /// Wraps a network whose bound is its own exact κ, recording one
    /// construction step with the given label.
    pub fn exact(net: Network, label: &str) -> Self {
        let k = net.kappa();
        let step = AlgebraStep {
            kind: StepKind::Construct,
            label: label.to_string(),
            operand_kappas: Vec::new(),
            coefficients: None,
            bound_applied: k,
            depth_in: Vec::new(),
            depth_out: net.depth(),
        };
        let cert = FrobeniusCertificate::new(&net, k, vec![step]);
        CertifiedNet { net, cert }
    }

    /// Wraps a network with an explicit closed-form bound.
    pub fn with_bound(net: Network, bound: f64, label: &str) -> Self {
        let mut c = CertifiedNet::exact(net, label);
        c.cert.bound = bound;
        c.cert.budget = bound;
        if let Some(s) = c.cert.derivation.last_mut() {
            s.bound_applied = bound;
        }
        c
    }

    pub fn bound(&self) -> f64 {
        self.cert.bound
    }

    pub fn kappa(&self) -> f64 {
        self.cert.kappa
    }

    pub fn depth(&self) -> usize {
        self.net.depth()
    }
}

/// χ_B ∘ net for a scalar-output network. Adds one hidden layer; the κ bound
/// follows the composition rule.
pub fn clip(inner: &CertifiedNet, b: f64) -> Result<CertifiedNet> {
    if inner.net.output_dim() != 1 {
        return dim_err("clip is defined for scalar-output networks; concatenate clipped coordinates instead");
    }
    let chi = CertifiedNet::exact(clip_net(b)?, "chi");
    let mut out = crate::net_algebra::compose(&chi, inner)?;
    if let Some(last) = out.cert.derivation.last_mut() {
        last.kind = StepKind::Clip;
        last.label = format!("clip B={b}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        let l0 = Layer::new(Matrix::from_dense(2, 1, &[1.0, -2.0]).unwrap(), vec![0.5, 1.0]).unwrap();
        Network::new(1, vec![l0], Matrix::from_dense(1, 2, &[3.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn evaluate_by_hand() {
        let n = small();
        // x = 1: σ(1.5)=1.5, σ(-1)=0 → 4.5
        assert_eq!(n.eval_scalar(&[1.0]).unwrap(), 4.5);
        // x = -1: σ(-0.5)=0, σ(3)=3 → 3
        assert_eq!(n.eval_scalar(&[-1.0]).unwrap(), 3.0);
        assert!(n.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn kappa_by_hand() {
        let n = small();
        let want = (1.0f64 + 4.0 + 0.25 + 1.0 + 1.0).sqrt() * 10f64.sqrt();
        assert!((n.kappa() - want).abs() < 1e-14);
        let lin = Network::linear(Matrix::from_dense(1, 2, &[1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(lin.depth(), 0);
        assert!((lin.kappa() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_final_gives_zero() {
        let l0 = Layer::new(Matrix::from_dense(2, 1, &[1.0, -2.0]).unwrap(), vec![0.5, 1.0]).unwrap();
        let n = Network::new(1, vec![l0], Matrix::zeros(1, 2)).unwrap();
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(n.eval_scalar(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_chain() {
        let l0 = Layer::new(Matrix::from_dense(2, 1, &[1.0, -2.0]).unwrap(), vec![0.5, 1.0]).unwrap();
        assert!(Network::new(1, vec![l0], Matrix::zeros(1, 3)).is_err());
        assert!(Layer::new(Matrix::zeros(2, 1), vec![0.0]).is_err());
    }

    #[test]
    fn augmented_matches() {
        let n = small();
        let a = n.to_augmented();
        for i in 0..50 {
            let x = -2.0 + 0.08 * i as f64;
            let y0 = n.eval_scalar(&[x]).unwrap();
            let y1 = a.evaluate(&[x]).unwrap()[0];
            assert!((y0 - y1).abs() <= 1e-12);
        }
        assert!(rel_close(a.norm_product(), n.kappa(), 1e-12));
    }

    #[test]
    fn augmented_zero_bias_has_unit_row() {
        let l0 = Layer::new(Matrix::from_dense(1, 1, &[2.0]).unwrap(), vec![0.0]).unwrap();
        let n = Network::new(1, vec![l0], Matrix::from_dense(1, 1, &[1.0]).unwrap()).unwrap();
        let a = n.to_augmented();
        assert_eq!(a.matrices[0].to_dense(), vec![2.0, 0.0, 0.0, 1.0]);
        assert!(rel_close(a.norm_product(), n.kappa(), 1e-12));
    }

    #[test]
    fn clip_net_kappa_and_values() {
        let chi = clip_net(1.0).unwrap();
        assert!((chi.kappa() - 2.0 * 7f64.sqrt()).abs() < 1e-14);
        for (x, y) in [(5.0, 1.0), (-3.0, -1.0), (0.3, 0.3), (-0.7, -0.7), (1.0, 1.0)] {
            assert_eq!(chi.eval_scalar(&[x]).unwrap(), y);
        }
    }

    #[test]
    fn batch_equals_single() {
        let n = small();
        let pts: Vec<f64> = (0..200).map(|i| -3.0 + 0.03 * i as f64).collect();
        let many = n.evaluate_many(&pts).unwrap();
        for (i, x) in pts.iter().enumerate() {
            assert_eq!(many[i].to_bits(), n.eval_scalar(&[*x]).unwrap().to_bits());
        }
    }
}
