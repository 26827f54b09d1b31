//! Norm-tracked closure operations on networks.
//!
//! Every operation first rescales its operands so that hidden layers satisfy
//! `‖A_ℓ‖² + ‖b_ℓ‖² < 1` and the final layer carries the whole κ. The
//! resulting certified bounds are:
//!
//! | operation        | bound on κ(result)                         |
//! |------------------|--------------------------------------------|
//! | linear combine   | (√(N+1))^D · √(Σ (c_i K_i)²)               |
//! | concatenate      | (√(N+1))^D · √(Σ K_i²)                     |
//! | compose          | (√2)^{D₁} · K₂ · √(K₁² + 2)                |
//!
//! For depth 0 the linear combination degenerates to a sum of matrices and
//! the bound is Σ |c_i| K_i.

use crate::error::{dim_err, invalid, Result};
use crate::net_ir::{AlgebraStep, CertifiedNet, FrobeniusCertificate, Layer, Matrix, MatrixBuilder, Network, StepKind};

fn step(kind: StepKind, label: &str, ops: &[&CertifiedNet], coeffs: Option<Vec<f64>>, bound: f64, out: usize) -> AlgebraStep {
    AlgebraStep {
        kind,
        label: label.to_string(),
        operand_kappas: ops.iter().map(|o| o.cert.bound).collect(),
        coefficients: coeffs,
        bound_applied: bound,
        depth_in: ops.iter().map(|o| o.net.depth()).collect(),
        depth_out: out,
    }
}

fn finish(net: Network, bound: f64, derivation: Vec<AlgebraStep>) -> CertifiedNet {
    let cert = FrobeniusCertificate::new(&net, bound, derivation);
    CertifiedNet { net, cert }
}

/// Rescaled copy: A_ℓ / s_ℓ, b_ℓ / ∏_{j≤ℓ} s_j, A_D ∏ s_ℓ.
fn rescale_net(net: &Network) -> Network {
    let mut out = net.clone();
    let mut prod = 1.0;
    for l in out.hidden_mut().iter_mut() {
        // The layer input already carries 1/∏_{j<ℓ} s_j, so the bias needs the
        // cumulative factor to keep the pre-activation a positive multiple.
        let s = l.augmented_norm();
        prod *= s;
        l.weights.scale_in_place(1.0 / s);
        let inv = 1.0 / prod;
        for b in &mut l.bias {
            *b *= inv;
        }
    }
    out.final_mut().scale_in_place(prod);
    out
}

/// Divides every hidden weight matrix by s_ℓ = √(‖A_ℓ‖² + ‖b_ℓ‖² + 1), every
/// bias by ∏_{j≤ℓ} s_j, and multiplies the final matrix by ∏ s_ℓ. The function is unchanged, ‖Â_D‖_F equals the
/// original κ, and κ of the result is at most (√2)^D times the operand bound.
pub fn rescale(f: &CertifiedNet) -> CertifiedNet {
    let net = rescale_net(&f.net);
    let d = net.depth();
    let bound = 2f64.sqrt().powi(d as i32) * f.cert.bound;
    let mut deriv = f.cert.derivation.clone();
    deriv.push(step(StepKind::Rescale, "rescale", &[f], None, bound, d));
    finish(net, bound, deriv)
}

fn check_same_shape(nets: &[&CertifiedNet]) -> Result<(usize, usize)> {
    let first = nets.first().ok_or_else(|| crate::error::Error::Invalid("no operands".into()))?;
    let (d, depth) = (first.net.input_dim(), first.net.depth());
    for n in nets {
        if n.net.input_dim() != d {
            return dim_err("operands differ in input dimension");
        }
        if n.net.depth() != depth {
            return dim_err(format!(
                "operands differ in depth ({} vs {depth}); align with depth_pad first",
                n.net.depth()
            ));
        }
    }
    Ok((d, depth))
}

/// Stacks the hidden layers of rescaled operands: the first layer reads the
/// operands' (possibly routed) inputs, deeper layers are block-diagonal.
fn stack_hidden(parts: &[Network], input_dim: usize, routes: Option<&[Vec<usize>]>) -> Result<Vec<Layer>> {
    let depth = parts[0].depth();
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut mats = Vec::with_capacity(parts.len());
        let mut bias = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            let layer = &p.hidden()[l];
            let w = if l == 0 {
                match routes {
                    Some(r) => layer.weights.remap_columns(&r[i], input_dim)?,
                    None => layer.weights.clone(),
                }
            } else {
                layer.weights.clone()
            };
            mats.push(w);
            bias.extend_from_slice(&layer.bias);
        }
        let refs: Vec<&Matrix> = mats.iter().collect();
        let w = if l == 0 { Matrix::vstack(&refs)? } else { Matrix::block_diag(&refs) };
        layers.push(Layer::new(w, bias)?);
    }
    Ok(layers)
}

/// Σ c_i f_i for operands of equal depth and input dimension.
/// Operands with zero coefficient are dropped from the construction; the
/// bound still uses the full coefficient vector.
pub fn linear_combine(nets: &[&CertifiedNet], coeffs: &[f64]) -> Result<CertifiedNet> {
    if nets.len() != coeffs.len() {
        return invalid("coefficient count differs from operand count");
    }
    let (d, depth) = check_same_shape(nets)?;
    let out_dim = nets[0].net.output_dim();
    if nets.iter().any(|n| n.net.output_dim() != out_dim) {
        return dim_err("operands differ in output dimension");
    }
    let n = nets.len() as f64;
    let bound = if depth == 0 {
        nets.iter().zip(coeffs).map(|(f, c)| c.abs() * f.cert.bound).sum()
    } else {
        let s: f64 = nets.iter().zip(coeffs).map(|(f, c)| (c * f.cert.bound).powi(2)).sum();
        (n + 1.0).sqrt().powi(depth as i32) * s.sqrt()
    };
    let kept: Vec<usize> = (0..nets.len()).filter(|&i| coeffs[i] != 0.0).collect();
    let net = if kept.is_empty() {
        zero_network(d, out_dim, depth)?
    } else if depth == 0 {
        let mut acc = nets[kept[0]].net.final_matrix().scaled(coeffs[kept[0]]);
        for &i in &kept[1..] {
            acc = add(&acc, &nets[i].net.final_matrix().scaled(coeffs[i]))?;
        }
        Network::linear(acc)?
    } else {
        let parts: Vec<Network> = kept.iter().map(|&i| rescale_net(&nets[i].net)).collect();
        let hidden = stack_hidden(&parts, d, None)?;
        let finals: Vec<Matrix> =
            kept.iter().zip(&parts).map(|(&i, p)| p.final_matrix().scaled(coeffs[i])).collect();
        let refs: Vec<&Matrix> = finals.iter().collect();
        Network::new(d, hidden, Matrix::hstack(&refs)?)?
    };
    let st = step(StepKind::LinearCombine, "linear_combine", nets, Some(coeffs.to_vec()), bound, depth);
    let mut deriv = if nets.len() <= 4 { nets.iter().flat_map(|f| f.cert.derivation.clone()).collect() } else { Vec::new() };
    deriv.push(st);
    Ok(finish(net, bound, deriv))
}

fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return dim_err("matrix sum shape mismatch");
    }
    let mut t = a.triplets();
    t.extend(b.triplets());
    Matrix::from_triplets(a.rows(), a.cols(), &t)
}

/// Network of the given shape computing the zero function with κ = 0.
pub fn zero_network(input_dim: usize, output_dim: usize, depth: usize) -> Result<Network> {
    let mut hidden = Vec::with_capacity(depth);
    let mut prev = input_dim;
    for _ in 0..depth {
        hidden.push(Layer::new(Matrix::zeros(1, prev), vec![0.0])?);
        prev = 1;
    }
    Network::new(input_dim, hidden, Matrix::zeros(output_dim, prev))
}

/// (f_1(x), …, f_N(x)) for operands of equal depth and input dimension.
pub fn concatenate(nets: &[&CertifiedNet]) -> Result<CertifiedNet> {
    let (d, _) = check_same_shape(nets)?;
    let routes: Vec<Vec<usize>> = nets.iter().map(|_| (0..d).collect()).collect();
    concat_impl(nets, &routes, d, "concatenate")
}

/// Concatenation where operand i reads the input coordinates `routes[i]`
/// of a shared input vector of length `input_dim`. The routing is a 0/1
/// selection folded into each operand's first layer, so it changes no
/// Frobenius norm when each route has distinct entries.
pub fn concatenate_routed(nets: &[&CertifiedNet], routes: &[Vec<usize>], input_dim: usize) -> Result<CertifiedNet> {
    if nets.is_empty() || routes.len() != nets.len() {
        return invalid("one route per operand required");
    }
    let depth = nets[0].net.depth();
    for (n, r) in nets.iter().zip(routes) {
        if n.net.depth() != depth {
            return dim_err("operands differ in depth; align with depth_pad first");
        }
        if r.len() != n.net.input_dim() {
            return dim_err("route length differs from operand input dimension");
        }
        let mut s = r.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != r.len() || s.last().map_or(false, |&m| m >= input_dim) {
            return invalid("routes must select distinct coordinates inside the input");
        }
    }
    concat_impl(nets, routes, input_dim, "concatenate_routed")
}

fn concat_impl(nets: &[&CertifiedNet], routes: &[Vec<usize>], input_dim: usize, label: &str) -> Result<CertifiedNet> {
    let depth = nets[0].net.depth();
    let n = nets.len() as f64;
    let s: f64 = nets.iter().map(|f| f.cert.bound.powi(2)).sum();
    let bound = (n + 1.0).sqrt().powi(depth as i32) * s.sqrt();
    let net = if depth == 0 {
        let mats: Vec<Matrix> = nets
            .iter()
            .zip(routes)
            .map(|(f, r)| f.net.final_matrix().remap_columns(r, input_dim))
            .collect::<Result<_>>()?;
        let refs: Vec<&Matrix> = mats.iter().collect();
        Network::linear(Matrix::vstack(&refs)?)?
    } else {
        let parts: Vec<Network> = nets.iter().map(|f| rescale_net(&f.net)).collect();
        let hidden = stack_hidden(&parts, input_dim, Some(routes))?;
        let finals: Vec<&Matrix> = parts.iter().map(|p| p.final_matrix()).collect();
        Network::new(input_dim, hidden, Matrix::block_diag(&finals))?
    };
    let st = step(StepKind::Concatenate, label, nets, None, bound, depth);
    let mut deriv = if nets.len() <= 4 { nets.iter().flat_map(|f| f.cert.derivation.clone()).collect() } else { Vec::new() };
    deriv.push(st);
    Ok(finish(net, bound, deriv))
}

/// outer ∘ inner. The inner network is rescaled, then the interface layer
/// is `A_0^{outer} Â_D^{inner}` with bias `b_0^{outer}`.
pub fn compose(outer: &CertifiedNet, inner: &CertifiedNet) -> Result<CertifiedNet> {
    if inner.net.output_dim() != outer.net.input_dim() {
        return dim_err(format!(
            "inner output {} does not match outer input {}",
            inner.net.output_dim(),
            outer.net.input_dim()
        ));
    }
    let d1 = inner.net.depth();
    let d2 = outer.net.depth();
    let bound = 2f64.sqrt().powi(d1 as i32) * outer.cert.bound * (inner.cert.bound.powi(2) + 2.0).sqrt();
    let (input_dim, mut hidden, inner_final) = rescale_net(&inner.net).into_parts();
    let fin = if d2 == 0 {
        outer.net.final_matrix().matmul(&inner_final)?
    } else {
        let o = &outer.net.hidden()[0];
        hidden.push(Layer::new(o.weights.matmul(&inner_final)?, o.bias.clone())?);
        hidden.extend(outer.net.hidden()[1..].iter().cloned());
        outer.net.final_matrix().clone()
    };
    let net = Network::new(input_dim, hidden, fin)?;
    let mut deriv = inner.cert.derivation.clone();
    deriv.extend(outer.cert.derivation.iter().cloned());
    deriv.push(step(StepKind::Compose, "compose", &[inner, outer], None, bound, d1 + d2));
    Ok(finish(net, bound, deriv))
}

/// Bound for composing f_N ∘ ⋯ ∘ f_1 given (K_i, D_i) innermost first:
/// (√2)^{Σ_{i<N} D_i} · K_N · ∏_{i<N} √(K_i² + 2).
pub fn nary_compose_bound(parts: &[(f64, usize)]) -> f64 {
    let n = parts.len();
    if n == 0 {
        return 0.0;
    }
    let mut b = parts[n - 1].0;
    let mut dsum = 0;
    for &(k, d) in &parts[..n - 1] {
        b *= (k * k + 2.0).sqrt();
        dsum += d;
    }
    b * 2f64.sqrt().powi(dsum as i32)
}

/// Composes a chain given innermost first. The certified bound is the
/// smaller of the pairwise fold and the N-ary formula.
pub fn compose_chain(chain: &[&CertifiedNet]) -> Result<CertifiedNet> {
    let first = *chain.first().ok_or_else(|| crate::error::Error::Invalid("empty chain".into()))?;
    let mut acc = first.clone();
    for f in &chain[1..] {
        acc = compose(f, &acc)?;
    }
    let parts: Vec<(f64, usize)> = chain.iter().map(|f| (f.cert.bound, f.net.depth())).collect();
    let nb = nary_compose_bound(&parts);
    if nb < acc.cert.bound {
        acc.cert.bound = nb;
        acc.cert.budget = nb;
        if let Some(s) = acc.cert.derivation.last_mut() {
            s.label = "compose_chain".into();
            s.bound_applied = nb;
        }
    }
    Ok(acc)
}

/// Depth-1 network realizing the identity on R^m as σ(x) − σ(−x).
pub fn identity_pair(m: usize) -> Result<Network> {
    let mut b = MatrixBuilder::new(m);
    for i in 0..m {
        b.push(i, 1.0);
        b.end_row();
    }
    for i in 0..m {
        b.push(i, -1.0);
        b.end_row();
    }
    let a0 = b.finish();
    let mut f = MatrixBuilder::new(2 * m);
    for i in 0..m {
        f.push(i, 1.0);
        f.push(m + i, -1.0);
        f.end_row();
    }
    Network::new(m, vec![Layer::new(a0, vec![0.0; 2 * m])?], f.finish())
}

/// Appends identity pairs until the network has `target` hidden layers.
pub fn depth_pad(f: &CertifiedNet, target: usize) -> Result<CertifiedNet> {
    let d = f.net.depth();
    if target < d {
        return invalid(format!("target depth {target} below current depth {d}"));
    }
    let mut acc = f.clone();
    if target == d {
        return Ok(acc);
    }
    let id = CertifiedNet::exact(identity_pair(f.net.output_dim())?, "identity_pair");
    for _ in d..target {
        acc = compose(&id, &acc)?;
        if let Some(s) = acc.cert.derivation.last_mut() {
            s.kind = StepKind::DepthPad;
            s.label = "depth_pad".into();
        }
    }
    Ok(acc)
}

/// Fixes some inputs to constants by folding them into the first-layer
/// bias. Removing a column of norm a_j and adding v_j a_j to the bias raises
/// the first augmented norm by at most a factor √(1 + Σ v_j²).
pub fn fix_inputs(f: &CertifiedNet, fixed: &[(usize, f64)]) -> Result<CertifiedNet> {
    let d = f.net.input_dim();
    let mut is_fixed = vec![None; d];
    for &(i, v) in fixed {
        if i >= d || is_fixed[i].is_some() {
            return invalid("fixed inputs must be distinct and in range");
        }
        is_fixed[i] = Some(v);
    }
    let keep: Vec<usize> = (0..d).filter(|&i| is_fixed[i].is_none()).collect();
    if keep.is_empty() {
        return invalid("at least one input must stay free");
    }
    if f.net.depth() == 0 {
        return invalid("a depth-0 network has no bias to absorb constants");
    }
    let mut hidden = f.net.hidden().to_vec();
    let l0 = &hidden[0];
    let mut bias = l0.bias.clone();
    for (r, b) in bias.iter_mut().enumerate() {
        for (c, w) in l0.weights.row(r) {
            if let Some(v) = is_fixed[c] {
                *b += w * v;
            }
        }
    }
    let w = l0.weights.select_columns(&keep);
    hidden[0] = Layer::new(w, bias)?;
    let net = Network::new(keep.len(), hidden, f.net.final_matrix().clone())?;
    let vsq: f64 = fixed.iter().map(|(_, v)| v * v).sum();
    let bound = f.cert.bound * (1.0 + vsq).sqrt();
    let mut deriv = f.cert.derivation.clone();
    deriv.push(step(StepKind::FixInputs, "fix_inputs", &[f], None, bound, net.depth()));
    Ok(finish(net, bound, deriv))
}

/// Precomposes with a coordinatewise affine map x_i ↦ a_i x_i + c_i folded
/// into the first layer. Used to route unit-cube inputs from other boxes.
pub fn precompose_affine(f: &CertifiedNet, scale: &[f64], shift: &[f64]) -> Result<CertifiedNet> {
    let d = f.net.input_dim();
    if scale.len() != d || shift.len() != d {
        return dim_err("affine map length mismatch");
    }
    if f.net.depth() == 0 {
        return invalid("a depth-0 network has no bias to absorb shifts");
    }
    let mut hidden = f.net.hidden().to_vec();
    let l0 = &hidden[0];
    let mut t = Vec::with_capacity(l0.weights.nnz());
    let mut bias = l0.bias.clone();
    for (r, b) in bias.iter_mut().enumerate() {
        for (c, w) in l0.weights.row(r) {
            *b += w * shift[c];
            t.push((r, c, w * scale[c]));
        }
    }
    let w = Matrix::from_triplets(l0.weights.rows(), d, &t)?;
    hidden[0] = Layer::new(w, bias)?;
    let net = Network::new(d, hidden, f.net.final_matrix().clone())?;
    let amax = scale.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let csq: f64 = shift.iter().map(|c| c * c).sum();
    let bound = f.cert.bound * (amax * amax + csq).sqrt().max(1.0) * if csq > 0.0 { 2f64.sqrt() } else { 1.0 };
    let mut deriv = f.cert.derivation.clone();
    deriv.push(step(StepKind::FixInputs, "precompose_affine", &[f], None, bound, net.depth()));
    Ok(finish(net, bound, deriv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_ir::clip_net;

    fn tiny(seed: u64) -> CertifiedNet {
        let a = 0.3 + (seed % 7) as f64 * 0.1;
        let l0 = Layer::new(Matrix::from_dense(2, 1, &[a, -1.5]).unwrap(), vec![0.2, -0.1 * seed as f64]).unwrap();
        let l1 = Layer::new(Matrix::from_dense(2, 2, &[1.0, -0.5, 2.0, 0.25]).unwrap(), vec![0.0, 0.3]).unwrap();
        let n = Network::new(1, vec![l0, l1], Matrix::from_dense(1, 2, &[1.5, -2.0]).unwrap()).unwrap();
        CertifiedNet::exact(n, "tiny")
    }

    fn probes() -> Vec<f64> {
        (0..1000).map(|i| -2.0 + 4.0 * i as f64 / 999.0).collect()
    }

    #[test]
    fn rescale_preserves_function_and_moves_kappa() {
        let f = tiny(3);
        let g = rescale(&f);
        for x in probes() {
            let (a, b) = (f.net.eval_scalar(&[x]).unwrap(), g.net.eval_scalar(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        let rel = (g.net.final_matrix().frobenius() - f.net.kappa()).abs() / f.net.kappa();
        assert!(rel <= 1e-12);
        for l in g.net.hidden() {
            assert!(l.weights.frobenius_sq() + crate::net_ir::sq_norm(&l.bias) < 1.0);
        }
        assert!(g.net.kappa() <= g.cert.bound);
    }

    #[test]
    fn rescale_twice_keeps_final_norm_chain() {
        // Dividing by s_ℓ (which includes the +1) is not idempotent; the
        // second pass moves κ of the first result into the final layer.
        let f = tiny(2);
        let g = rescale(&f);
        let h = rescale(&g);
        let rel = (h.net.final_matrix().frobenius() - g.net.kappa()).abs() / g.net.kappa();
        assert!(rel <= 1e-12);
        for x in probes() {
            let (a, b) = (f.net.eval_scalar(&[x]).unwrap(), h.net.eval_scalar(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn combine_cancels() {
        let f = tiny(1);
        let g = linear_combine(&[&f, &f], &[1.0, -1.0]).unwrap();
        for x in probes() {
            assert!(g.net.eval_scalar(&[x]).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn combine_bound_formula() {
        let f = tiny(1);
        let k = f.cert.bound;
        let g = linear_combine(&[&f, &f, &f], &[1.0, 1.0, 1.0]).unwrap();
        let want = 4f64.sqrt().powi(2) * (3.0 * k * k).sqrt();
        assert!((g.cert.bound - want).abs() <= 1e-12 * want);
        assert!(g.net.kappa() <= g.cert.bound);
    }

    #[test]
    fn zero_coefficients_dropped() {
        let f = tiny(1);
        let g = tiny(4);
        let h = linear_combine(&[&f, &g], &[0.0, 2.0]).unwrap();
        assert_eq!(h.net.hidden_width(), g.net.hidden_width());
        let z = linear_combine(&[&f, &g], &[0.0, 0.0]).unwrap();
        assert_eq!(z.net.kappa(), 0.0);
        assert_eq!(z.net.eval_scalar(&[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn depth_zero_combination_uses_l1_bound() {
        let a = CertifiedNet::exact(Network::linear(Matrix::from_dense(1, 1, &[1.0]).unwrap()).unwrap(), "id");
        let g = linear_combine(&[&a, &a], &[1.0, 1.0]).unwrap();
        assert_eq!(g.net.kappa(), 2.0);
        assert!(g.net.kappa() <= g.cert.bound);
    }

    #[test]
    fn concatenate_single_is_identity() {
        let f = tiny(5);
        let g = concatenate(&[&f]).unwrap();
        for x in probes() {
            let (a, b) = (f.net.eval_scalar(&[x]).unwrap(), g.net.eval_scalar(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn concat_bound_formula() {
        let f = tiny(1);
        let g = tiny(2);
        let h = concatenate(&[&f, &g]).unwrap();
        let want = 3f64.sqrt().powi(2) * (f.cert.bound.powi(2) + g.cert.bound.powi(2)).sqrt();
        assert!((h.cert.bound - want).abs() <= 1e-12 * want);
        assert!(h.net.kappa() <= h.cert.bound);
        assert_eq!(h.net.output_dim(), 2);
    }

    #[test]
    fn compose_with_identity_linear() {
        let f = tiny(3);
        let id = CertifiedNet::exact(Network::linear(Matrix::identity(1)).unwrap(), "id");
        let g = compose(&id, &f).unwrap();
        assert_eq!(g.net.depth(), f.net.depth());
        for x in probes() {
            let (a, b) = (f.net.eval_scalar(&[x]).unwrap(), g.net.eval_scalar(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn nary_bound_matches_pairwise_fold_structure() {
        // (√2)^{D1+D2} K3 √(K1²+2) √(K2²+2) against the pairwise rule applied twice.
        let (k1, k2, k3) = (2.0, 3.0, 5.0);
        let (d1, d2) = (2usize, 1usize);
        let nary = nary_compose_bound(&[(k1, d1), (k2, d2), (k3, 1)]);
        let b12 = 2f64.sqrt().powi(d1 as i32) * k2 * (k1 * k1 + 2.0).sqrt();
        let fold = 2f64.sqrt().powi((d1 + d2) as i32) * k3 * (b12 * b12 + 2.0).sqrt();
        let direct = 2f64.sqrt().powi(3) * k3 * (k1 * k1 + 2.0).sqrt() * (k2 * k2 + 2.0).sqrt();
        assert!((nary - direct).abs() <= 1e-12 * direct);
        assert!(nary <= fold);
    }

    #[test]
    fn pad_preserves_function() {
        let f = tiny(6);
        assert_eq!(depth_pad(&f, 2).unwrap().net, f.net);
        let g = depth_pad(&f, 4).unwrap();
        assert_eq!(g.net.depth(), 4);
        for x in probes() {
            let (a, b) = (f.net.eval_scalar(&[x]).unwrap(), g.net.eval_scalar(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        assert!(g.net.kappa() <= g.cert.bound);
        assert!(depth_pad(&f, 1).is_err());
    }

    #[test]
    fn pad_one_dim_kappa_by_hand() {
        // Padding the 1-d identity x ↦ x once gives σ(x)−σ(−x): κ = √3·√2.
        let id = CertifiedNet::exact(Network::linear(Matrix::identity(1)).unwrap(), "id");
        let g = depth_pad(&id, 1).unwrap();
        assert!((g.net.kappa() - 6f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn clip_compose_kappa() {
        let chi = CertifiedNet::exact(clip_net(1.0).unwrap(), "chi");
        let f = tiny(2);
        let g = compose(&chi, &f).unwrap();
        assert!(g.net.kappa() <= g.cert.bound * (1.0 + 1e-12));
        for x in probes() {
            let a = f.net.eval_scalar(&[x]).unwrap().clamp(-1.0, 1.0);
            let b = g.net.eval_scalar(&[x]).unwrap();
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn fixing_inputs_folds_into_bias() {
        let l0 = Layer::new(Matrix::from_dense(1, 2, &[2.0, 3.0]).unwrap(), vec![-1.0]).unwrap();
        let n = Network::new(2, vec![l0], Matrix::from_dense(1, 1, &[1.0]).unwrap()).unwrap();
        let f = CertifiedNet::exact(n, "lin");
        let g = fix_inputs(&f, &[(1, 1.0)]).unwrap();
        assert_eq!(g.net.input_dim(), 1);
        assert_eq!(g.net.eval_scalar(&[0.5]).unwrap(), 3.0);
        assert!(g.net.kappa() <= g.cert.bound);
    }
}
