//! Batch evaluation: rayon fan-out over point chunks against the same
//! chunks evaluated one after another on the calling thread.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use normnet::dag_compiler::{compile_dag, gallery_dag};
use normnet::holder_compiler::{builtin_oracle, compile_holder};
use normnet::net_ir::Network;
use normnet::verify::ProbePlan;

const CHUNK: usize = 64;

fn sequential(net: &Network, pts: &[f64]) -> Vec<f64> {
    let d = net.input_dim();
    let mut out = Vec::with_capacity(pts.len() / d * net.output_dim());
    for c in pts.chunks(CHUNK * d) {
        out.extend(net.evaluate_many(c).unwrap());
    }
    out
}

fn bench_eval(c: &mut Criterion) {
    let holder = compile_holder(&builtin_oracle("sum-square").unwrap(), 10).unwrap().network;
    let spec = gallery_dag("binarytree-d4").unwrap();
    let dag = compile_dag(&spec, 1e40).unwrap().network.net;
    let mut g = c.benchmark_group("evaluate_many");
    g.sample_size(10);
    for (name, net) in [("sum-square-k10", &holder), ("binarytree-d4-1e40", &dag)] {
        let pts = ProbePlan::sobol(4096, 7, vec![(0.0, 1.0); net.input_dim()]).points().unwrap();
        let par_label = if normnet::par::is_parallel() { "rayon" } else { "rayon-disabled" };
        g.bench_with_input(BenchmarkId::new(par_label, name), &pts, |b, p| {
            b.iter(|| net.evaluate_many(black_box(p)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sequential", name), &pts, |b, p| b.iter(|| sequential(net, black_box(p))));
    }
    g.finish();
}

criterion_group!(benches, bench_eval);
criterion_main!(benches);
