#![allow(dead_code)]

use normnet::net_algebra::{compose, concatenate, depth_pad, identity_pair, linear_combine, rescale};
use normnet::net_ir::{CertifiedNet, Layer, Matrix, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OPS: [&str; 5] = ["rescale", "combine", "concatenate", "compose", "depth_pad"];
pub const PROBES: usize = 1000;
pub const FN_TOL: f64 = 1e-9;
const KAPPA_RTOL: f64 = 1e-12;

pub fn random_net(rng: &mut ChaCha8Rng, input: usize, output: usize, depth: usize) -> CertifiedNet {
    let mut prev = input;
    let mut hidden = Vec::new();
    for _ in 0..depth {
        let w = rng.gen_range(1..=4);
        let a: Vec<f64> = (0..w * prev).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        hidden.push(Layer::new(Matrix::from_dense(w, prev, &a).unwrap(), b).unwrap());
        prev = w;
    }
    let f: Vec<f64> = (0..output * prev).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let net = Network::new(input, hidden, Matrix::from_dense(output, prev, &f).unwrap()).unwrap();
    CertifiedNet::exact(net, "random")
}

fn probes(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    (0..PROBES).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn close(got: &[f64], want: &[f64]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("output length {} vs {}", got.len(), want.len()));
    }
    for (g, w) in got.iter().zip(want) {
        if (g - w).abs() > FN_TOL * w.abs().max(1.0) {
            return Err(format!("value {g} vs {w}"));
        }
    }
    Ok(())
}

fn eval(c: &CertifiedNet, x: &[f64]) -> Vec<f64> {
    c.net.evaluate(x).unwrap()
}

fn kappa_ok(result: &CertifiedNet, bound: f64) -> Result<(), String> {
    let k = result.net.kappa();
    if k <= bound * (1.0 + KAPPA_RTOL) {
        Ok(())
    } else {
        Err(format!("kappa {k} exceeds bound {bound}"))
    }
}

/// Builds one random instance of `op` from `seed`, checks function
/// preservation at the probes and κ against the closed-form bound computed
/// here from the operands' recomputed κ.
pub fn check_op(op: &str, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=3);
    let depth = rng.gen_range(1..=3);
    let xs = probes(&mut rng, d);
    match op {
        "rescale" => {
            let out = rng.gen_range(1..=2);
            let f = random_net(&mut rng, d, out, depth);
            let g = rescale(&f);
            for x in &xs {
                close(&eval(&g, x), &eval(&f, x))?;
            }
            kappa_ok(&g, 2f64.sqrt().powi(depth as i32) * f.net.kappa())
        }
        "combine" => {
            let n = rng.gen_range(1..=4);
            let out = rng.gen_range(1..=2);
            let fs: Vec<CertifiedNet> = (0..n).map(|_| random_net(&mut rng, d, out, depth)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let refs: Vec<&CertifiedNet> = fs.iter().collect();
            let g = linear_combine(&refs, &c).map_err(|e| e.to_string())?;
            for x in &xs {
                let mut want = vec![0.0; out];
                for (f, ci) in fs.iter().zip(&c) {
                    for (w, v) in want.iter_mut().zip(eval(f, x)) {
                        *w += ci * v;
                    }
                }
                close(&eval(&g, x), &want)?;
            }
            let s: f64 = fs.iter().zip(&c).map(|(f, ci)| (ci * f.net.kappa()).powi(2)).sum();
            kappa_ok(&g, ((n + 1) as f64).sqrt().powi(depth as i32) * s.sqrt())
        }
        "concatenate" => {
            let n = rng.gen_range(1..=4);
            let fs: Vec<CertifiedNet> = (0..n)
                .map(|_| {
                    let out = rng.gen_range(1..=2);
                    random_net(&mut rng, d, out, depth)
                })
                .collect();
            let refs: Vec<&CertifiedNet> = fs.iter().collect();
            let g = concatenate(&refs).map_err(|e| e.to_string())?;
            for x in &xs {
                let want: Vec<f64> = fs.iter().flat_map(|f| eval(f, x)).collect();
                close(&eval(&g, x), &want)?;
            }
            let s: f64 = fs.iter().map(|f| f.net.kappa().powi(2)).sum();
            kappa_ok(&g, ((n + 1) as f64).sqrt().powi(depth as i32) * s.sqrt())
        }
        "compose" => {
            let mid = rng.gen_range(1..=3);
            let inner = random_net(&mut rng, d, mid, depth);
            let d2 = rng.gen_range(0..=3);
            let out = rng.gen_range(1..=2);
            let outer = random_net(&mut rng, mid, out, d2);
            let g = compose(&outer, &inner).map_err(|e| e.to_string())?;
            for x in &xs {
                close(&eval(&g, x), &eval(&outer, &eval(&inner, x)))?;
            }
            let (k1, k2) = (inner.net.kappa(), outer.net.kappa());
            kappa_ok(&g, 2f64.sqrt().powi(depth as i32) * k2 * (k1 * k1 + 2.0).sqrt())
        }
        "depth_pad" => {
            let out = rng.gen_range(1..=2);
            let f = random_net(&mut rng, d, out, depth);
            let extra = rng.gen_range(0..=3);
            let g = depth_pad(&f, depth + extra).map_err(|e| e.to_string())?;
            if g.net.depth() != depth + extra {
                return Err(format!("depth {} after padding to {}", g.net.depth(), depth + extra));
            }
            for x in &xs {
                close(&eval(&g, x), &eval(&f, x))?;
            }
            // Each pad is a composition with the identity pair on R^out.
            let kid = identity_pair(out).unwrap().kappa();
            let mut b = f.net.kappa();
            for i in 0..extra {
                b = 2f64.sqrt().powi((depth + i) as i32) * kid * (b * b + 2.0).sqrt();
            }
            kappa_ok(&g, b)
        }
        _ => Err(format!("unknown operation {op}")),
    }
}
