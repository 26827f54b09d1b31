//! Explicit subnetworks: square, product, monomial tree, hats, coordinate
//! shifts and localized Taylor patches.
//!
//! Certificates carry the closed-form κ bounds of the constructions (for
//! example 3 for the square net and 360 for the product net); the algebraic
//! bound obtained from composing the pieces is kept as the last derivation
//! step.

use crate::error::{invalid, Result};
use crate::net_algebra::{compose, compose_chain, concatenate_routed, fix_inputs};
use crate::net_ir::{clip_net, CertifiedNet, Layer, Matrix, MatrixBuilder, Network};

/// Which primitive a [`PrimitiveSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Square,
    Product,
    Monomial,
    Hat,
    Shift,
    TaylorPatch,
}

/// Parameters of a primitive construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub k: usize,
    pub d: usize,
    pub grid: usize,
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    pub r: usize,
}

impl PrimitiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be at least 1");
        }
        match self.kind {
            PrimitiveKind::Monomial if self.d < 2 => invalid("monomial arity must be at least 2"),
            PrimitiveKind::Hat | PrimitiveKind::Shift | PrimitiveKind::TaylorPatch => {
                if self.grid == 0 {
                    return invalid("grid resolution must be positive");
                }
                if self.n.iter().any(|&ni| ni > self.grid) {
                    return invalid("grid index outside 0..=N");
                }
                if self.kind == PrimitiveKind::TaylorPatch {
                    if self.n.len() != self.d || self.s.len() != self.d {
                        return invalid("multi-index lengths must equal d");
                    }
                    if self.s.iter().sum::<usize>() > self.r {
                        return invalid("|s| exceeds r");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<CertifiedNet> {
        self.validate()?;
        match self.kind {
            PrimitiveKind::Square => build_square(self.k),
            PrimitiveKind::Product => build_product(self.k),
            PrimitiveKind::Monomial => build_monomial(self.d, self.k),
            PrimitiveKind::Hat => build_hat(self.grid, *self.n.first().unwrap_or(&0)),
            PrimitiveKind::Shift => build_shift(*self.n.first().unwrap_or(&0), self.grid),
            PrimitiveKind::TaylorPatch => build_taylor_patch(&self.n, &self.s, self.grid, self.k, self.d, self.r),
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        invalid("k must be at least 1")
    } else {
        Ok(())
    }
}

/// Breakpoints (2i−1)/(2k), i = 1..k.
fn breakpoints(k: usize) -> Vec<f64> {
    (1..=k).map(|i| (2 * i - 1) as f64 / (2 * k) as f64).collect()
}

/// φ_k(x) = Σ_i (2/k) σ(x − (2i−1)/(2k)); equals 0 for x ≤ 0 and approximates
/// x² on [0,1] to 1/(2k²).
pub fn build_square(k: usize) -> Result<CertifiedNet> {
    check_k(k)?;
    let a0 = Matrix::from_dense(k, 1, &vec![1.0; k])?;
    let b0: Vec<f64> = breakpoints(k).into_iter().map(|b| -b).collect();
    let a1 = Matrix::from_dense(1, k, &vec![2.0 / k as f64; k])?;
    let net = Network::new(1, vec![Layer::new(a0, b0)?], a1)?;
    Ok(CertifiedNet::with_bound(net, 3.0, &format!("square k={k}")))
}

/// Exact κ of the square net: (2/√k) √((16k² + 12k − 1)/(12k)).
pub fn square_kappa_formula(k: usize) -> f64 {
    let kf = k as f64;
    2.0 / kf.sqrt() * ((16.0 * kf * kf + 12.0 * kf - 1.0) / (12.0 * kf)).sqrt()
}

/// Ψ(x, y) = 2(φ̃((x+y)/2) − φ̃(x/2) − φ̃(y/2)) with φ̃(t) = φ_k(t) + φ_k(−t).
/// Neurons are ordered per breakpoint as
/// [σ(s−b), σ(y/2−b), σ(x/2−b), σ(−s−b), σ(−y/2−b), σ(−x/2−b)] with
/// s = (x+y)/2, so that on an axis the output sum cancels pairwise to an
/// exact zero.
pub fn build_product_core(k: usize) -> Result<CertifiedNet> {
    check_k(k)?;
    let bp = breakpoints(k);
    let mut a = MatrixBuilder::new(2);
    let mut bias = Vec::with_capacity(6 * k);
    let rows: [(f64, f64); 6] = [(0.5, 0.5), (0.0, 0.5), (0.5, 0.0), (-0.5, -0.5), (0.0, -0.5), (-0.5, 0.0)];
    let w = 4.0 / k as f64;
    let signs = [w, -w, -w, w, -w, -w];
    let mut fin = MatrixBuilder::new(6 * k);
    for b in &bp {
        for (wx, wy) in rows {
            a.push(0, wx);
            a.push(1, wy);
            a.end_row();
            bias.push(-b);
        }
    }
    for (i, _) in bp.iter().enumerate() {
        for (j, sgn) in signs.iter().enumerate() {
            fin.push(6 * i + j, *sgn);
        }
    }
    fin.end_row();
    let net = Network::new(2, vec![Layer::new(a.finish(), bias)?], fin.finish())?;
    Ok(CertifiedNet::with_bound(net, 48.0, &format!("product_core k={k}")))
}

/// ψ_k = χ₁ ∘ Ψ: width 6k, depth 2, κ ≤ 360, |xy − ψ_k| ≤ 3/k² on [−1,1]²,
/// exact zero on both axes, output in [−1,1].
pub fn build_product(k: usize) -> Result<CertifiedNet> {
    let core = build_product_core(k)?;
    let chi = CertifiedNet::with_bound(clip_net(1.0)?, 2.0 * 7f64.sqrt(), "chi");
    let mut out = compose(&chi, &core)?;
    out.cert.bound = 360.0;
    out.cert.budget = 360.0;
    Ok(out)
}

/// s = ⌈log₂ d⌉.
pub fn ceil_log2(d: usize) -> u32 {
    if d <= 1 {
        0
    } else {
        usize::BITS - (d - 1).leading_zeros()
    }
}

/// 722^s · 2^{7s(s−1)/4} with s = ⌈log₂ d⌉.
pub fn monomial_kappa_bound(d: usize) -> f64 {
    let s = ceil_log2(d) as f64;
    722f64.powf(s) * 2f64.powf(7.0 * s * (s - 1.0) / 4.0)
}

/// Binary tree of product nets on `t` slots where only the first `free`
/// slots are inputs and the rest are fixed to 1 through the first-layer bias.
fn monomial_tree(t: usize, free: usize, k: usize) -> Result<CertifiedNet> {
    let s = ceil_log2(t);
    let m = 1usize << s;
    let psi = build_product(k)?;
    let mut levels = Vec::with_capacity(s as usize);
    let mut width = m;
    for _ in 0..s {
        let count = width / 2;
        let ops: Vec<&CertifiedNet> = vec![&psi; count];
        let routes: Vec<Vec<usize>> = (0..count).map(|j| vec![2 * j, 2 * j + 1]).collect();
        levels.push(concatenate_routed(&ops, &routes, width)?);
        width = count;
    }
    let refs: Vec<&CertifiedNet> = levels.iter().collect();
    let tree = compose_chain(&refs)?;
    if free < m {
        let fixed: Vec<(usize, f64)> = (free..m).map(|i| (i, 1.0)).collect();
        fix_inputs(&tree, &fixed)
    } else {
        Ok(tree)
    }
}

/// Approximates x₁⋯x_d on [−1,1]^d: depth 2⌈log₂ d⌉, width ≤ 6dk,
/// error ≤ 6d/k², exact zero whenever some x_i = 0.
pub fn build_monomial(d: usize, k: usize) -> Result<CertifiedNet> {
    if d < 2 {
        return invalid("monomial arity must be at least 2");
    }
    check_k(k)?;
    let mut out = monomial_tree(d, d, k)?;
    let b = monomial_kappa_bound(d);
    out.cert.bound = b;
    out.cert.budget = b;
    Ok(out)
}

/// Exact hat ψ(t) = max(0, 1 − |t|).
pub fn hat_ref(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Exact tensor hat ψ_n(x) = ∏ ψ(N x_i − n_i).
pub fn hat_product_ref(grid: usize, n: &[usize], x: &[f64]) -> f64 {
    n.iter().zip(x).map(|(&ni, &xi)| hat_ref(grid as f64 * xi - ni as f64)).product()
}

fn check_grid(grid: usize, n: usize) -> Result<()> {
    if grid == 0 {
        return invalid("grid resolution must be positive");
    }
    if n > grid {
        return invalid(format!("grid index {n} outside 0..={grid}"));
    }
    Ok(())
}

/// ψ(N x − n) = σ(1 − σ(Nx − n) − σ(−Nx + n)): depth 2, κ ≤ 2√15·N,
/// supported on [(n−1)/N, (n+1)/N].
pub fn build_hat(grid: usize, n: usize) -> Result<CertifiedNet> {
    check_grid(grid, n)?;
    let nf = grid as f64;
    let l0 = Layer::new(Matrix::from_dense(2, 1, &[nf, -nf])?, vec![-(n as f64), n as f64])?;
    let l1 = Layer::new(Matrix::from_dense(1, 2, &[-1.0, -1.0])?, vec![1.0])?;
    let net = Network::new(1, vec![l0, l1], Matrix::identity(1))?;
    Ok(CertifiedNet::with_bound(net, 2.0 * 15f64.sqrt() * nf, &format!("hat N={grid} n={n}")))
}

/// Hat that agrees with ψ(N·clamp(x,0,1) − n) on all of R: interior hats are
/// unchanged, the edge hats n = 0 and n = N drop their outer ReLU and stay
/// at 1 beyond the cube. Identical to [`build_hat`] on [0,1].
pub fn build_clamped_hat(grid: usize, n: usize) -> Result<CertifiedNet> {
    check_grid(grid, n)?;
    if n != 0 && n != grid {
        return build_hat(grid, n);
    }
    let nf = grid as f64;
    let (w, b) = if n == 0 { (nf, 0.0) } else { (-nf, nf) };
    let l0 = Layer::new(Matrix::from_dense(1, 1, &[w])?, vec![b])?;
    let l1 = Layer::new(Matrix::from_dense(1, 1, &[-1.0])?, vec![1.0])?;
    let net = Network::new(1, vec![l0, l1], Matrix::identity(1))?;
    Ok(CertifiedNet::with_bound(net, 2.0 * 15f64.sqrt() * nf, &format!("clamped_hat N={grid} n={n}")))
}

/// x ↦ x − n/N as σ(σ(x − n/N)) − σ(σ(−x + n/N)); depth 2, κ ≤ 2√15.
pub fn build_shift(n: usize, grid: usize) -> Result<CertifiedNet> {
    check_grid(grid, n)?;
    let c = n as f64 / grid as f64;
    let l0 = Layer::new(Matrix::from_dense(2, 1, &[1.0, -1.0])?, vec![-c, c])?;
    let l1 = Layer::new(Matrix::identity(2), vec![0.0, 0.0])?;
    let net = Network::new(1, vec![l0, l1], Matrix::from_dense(1, 2, &[1.0, -1.0])?)?;
    Ok(CertifiedNet::with_bound(net, 2.0 * 15f64.sqrt(), &format!("shift N={grid} n={n}")))
}

/// x ↦ clamp(x,0,1) − n/N in depth 2: the first layer forms σ(x) and
/// σ(x − 1), the second the ± pair of their difference minus n/N.
/// κ ≤ 2√14 ≤ 2√15; identical to [`build_shift`] on [0,1].
pub fn build_clamped_shift(n: usize, grid: usize) -> Result<CertifiedNet> {
    check_grid(grid, n)?;
    let c = n as f64 / grid as f64;
    let l0 = Layer::new(Matrix::from_dense(2, 1, &[1.0, 1.0])?, vec![0.0, -1.0])?;
    let l1 = Layer::new(Matrix::from_dense(2, 2, &[1.0, -1.0, -1.0, 1.0])?, vec![-c, c])?;
    let net = Network::new(1, vec![l0, l1], Matrix::from_dense(1, 2, &[1.0, -1.0])?)?;
    Ok(CertifiedNet::with_bound(net, 2.0 * 15f64.sqrt(), &format!("clamped_shift N={grid} n={n}")))
}

/// 8(d+r)²N · 722^c · 2^{(7c² − 7c)/4} with c = ⌈log₂(2(d+r))⌉.
pub fn patch_kappa_bound(d: usize, r: usize, grid: usize) -> f64 {
    let t = (d + r) as f64;
    let c = ceil_log2(2 * (d + r)) as f64;
    8.0 * t * t * grid as f64 * 722f64.powf(c) * 2f64.powf((7.0 * c * c - 7.0 * c) / 4.0)
}

/// Depth of a Taylor patch: 2⌈log₂(d+r)⌉ + 2.
pub fn patch_depth(d: usize, r: usize) -> usize {
    2 * ceil_log2(d + r) as usize + 2
}

/// Reference p_{n,s}(x) = ψ_n(x) (x − n/N)^s.
pub fn taylor_patch_ref(n: &[usize], s: &[usize], grid: usize, x: &[f64]) -> f64 {
    let mut v = hat_product_ref(grid, n, x);
    for i in 0..n.len() {
        let dx = x[i] - n[i] as f64 / grid as f64;
        v *= dx.powi(s[i] as i32);
    }
    v
}

/// φ_{n,s}: the monomial tree on t = d + r slots fed by d hats and |s| shifts
/// (remaining slots fixed to 1). Depth 2⌈log₂(d+r)⌉ + 2, error against
/// p_{n,s} at most 6(d+r)/k², zero outside ‖x − n/N‖_∞ ≤ 1/N on the cube.
/// Uses the clamped hats and shifts, so the patch also satisfies
/// φ(x) = φ(clamp(x)) off the cube.
pub fn build_taylor_patch(n: &[usize], s: &[usize], grid: usize, k: usize, d: usize, r: usize) -> Result<CertifiedNet> {
    check_k(k)?;
    if d == 0 || n.len() != d || s.len() != d {
        return invalid("multi-index lengths must equal d ≥ 1");
    }
    let order: usize = s.iter().sum();
    if order > r {
        return invalid(format!("|s| = {order} exceeds r = {r}"));
    }
    for &ni in n {
        check_grid(grid, ni)?;
    }
    let t = d + r;
    let mut feats = Vec::with_capacity(d + order);
    let mut routes = Vec::with_capacity(d + order);
    for i in 0..d {
        feats.push(build_clamped_hat(grid, n[i])?);
        routes.push(vec![i]);
    }
    for i in 0..d {
        for _ in 0..s[i] {
            feats.push(build_clamped_shift(n[i], grid)?);
            routes.push(vec![i]);
        }
    }
    let bound = patch_kappa_bound(d, r, grid);
    if t == 1 {
        let mut out = feats.pop().expect("one hat");
        out.cert.bound = bound;
        out.cert.budget = bound;
        return Ok(out);
    }
    let refs: Vec<&CertifiedNet> = feats.iter().collect();
    let features = concatenate_routed(&refs, &routes, d)?;
    let tree = monomial_tree(t, d + order, k)?;
    let mut out = compose(&tree, &features)?;
    out.cert.bound = bound;
    out.cert.budget = bound;
    Ok(out)
}
