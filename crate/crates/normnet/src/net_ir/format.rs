//! Network file format.
//!
//! ```text
//! {
//!   "version": 1,
//!   "input_dim": d, "output_dim": m,
//!   "layers": [ {"rows": r, "cols": c, "weights": [...], "bias": [...]}, ... ],
//!   "final": {"rows": m, "cols": c, "weights": [...]},
//!   "certificate": {"kappa": κ, "budget": K, "per_layer_norms": [...], "bound": B}
//! }
//! ```
//!
//! `weights` is row-major dense. Large, mostly-empty matrices are written as
//! `"entries": [[row, col, value], ...]` instead. Reals use 17 significant
//! digits, so a round trip reproduces every bit.

use super::{FrobeniusCertificate, Layer, Matrix, Network};
use crate::error::{Error, Result};
use serde::Deserialize;
use std::fmt::Write;

pub const FORMAT_VERSION: u32 = 1;

fn real(out: &mut String, v: f64) {
    if v == 0.0 {
        out.push_str(if v.is_sign_negative() { "-0.0" } else { "0.0" });
    } else {
        write!(out, "{v:.16e}").unwrap();
    }
}

fn real_array(out: &mut String, vals: impl Iterator<Item = f64>) {
    out.push('[');
    for (i, v) in vals.enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        real(out, v);
    }
    out.push(']');
}

fn use_dense(m: &Matrix) -> bool {
    let cells = m.rows() as u64 * m.cols() as u64;
    cells <= 4096 || cells <= 3 * m.nnz() as u64
}

fn matrix_fields(out: &mut String, m: &Matrix) {
    write!(out, "\"rows\": {}, \"cols\": {}, ", m.rows(), m.cols()).unwrap();
    if use_dense(m) {
        out.push_str("\"weights\": ");
        real_array(out, m.to_dense().into_iter());
    } else {
        out.push_str("\"entries\": [");
        for (i, (r, c, v)) in m.triplets().into_iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "[{r}, {c}, ").unwrap();
            real(out, v);
            out.push(']');
        }
        out.push(']');
    }
}

/// Writes a network and its certificate in the text format.
pub fn serialize(net: &Network, cert: &FrobeniusCertificate) -> String {
    let mut out = String::new();
    writeln!(out, "{{").unwrap();
    writeln!(out, "  \"version\": {FORMAT_VERSION},").unwrap();
    writeln!(out, "  \"input_dim\": {},", net.input_dim()).unwrap();
    writeln!(out, "  \"output_dim\": {},", net.output_dim()).unwrap();
    out.push_str("  \"layers\": [");
    for (i, l) in net.hidden().iter().enumerate() {
        out.push_str(if i == 0 { "\n    {" } else { ",\n    {" });
        matrix_fields(&mut out, &l.weights);
        out.push_str(", \"bias\": ");
        real_array(&mut out, l.bias.iter().copied());
        out.push('}');
    }
    out.push_str(if net.depth() > 0 { "\n  ],\n" } else { "],\n" });
    out.push_str("  \"final\": {");
    matrix_fields(&mut out, net.final_matrix());
    out.push_str("},\n");
    out.push_str("  \"certificate\": {\"kappa\": ");
    real(&mut out, cert.kappa);
    out.push_str(", \"budget\": ");
    real(&mut out, cert.budget);
    out.push_str(", \"per_layer_norms\": ");
    real_array(&mut out, cert.per_layer_norms.iter().copied());
    out.push_str(", \"bound\": ");
    real(&mut out, cert.bound);
    out.push_str("}\n}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMatrix {
    rows: usize,
    cols: usize,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    entries: Option<Vec<(usize, usize, f64)>>,
    #[serde(default)]
    bias: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCert {
    kappa: f64,
    budget: f64,
    per_layer_norms: Vec<f64>,
    #[serde(default)]
    bound: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNet {
    version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<FileMatrix>,
    #[serde(rename = "final")]
    final_: FileMatrix,
    certificate: FileCert,
}

fn offset_of(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut off = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (off + column.saturating_sub(1)).min(text.len());
        }
        off += l.len();
    }
    text.len()
}

fn semantic(msg: impl Into<String>, offset: usize) -> Error {
    Error::Parse { offset, message: msg.into() }
}

fn build_matrix(m: &FileMatrix, what: &str, end: usize) -> Result<Matrix> {
    match (&m.weights, &m.entries) {
        (Some(w), None) => Matrix::from_dense(m.rows, m.cols, w).map_err(|e| semantic(format!("{what}: {e}"), end)),
        (None, Some(t)) => {
            Matrix::from_triplets(m.rows, m.cols, t).map_err(|e| semantic(format!("{what}: {e}"), end))
        }
        _ => Err(semantic(format!("{what}: exactly one of weights/entries required"), end)),
    }
}

/// Parses the text format. Errors carry the byte offset of the failure
/// (semantic errors found after parsing point at the end of the document).
pub fn deserialize(text: &str) -> Result<(Network, FrobeniusCertificate)> {
    let f: FileNet = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: offset_of(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let end = text.len();
    if f.version != FORMAT_VERSION {
        return Err(semantic(format!("unsupported version {}", f.version), end));
    }
    let mut layers = Vec::with_capacity(f.layers.len());
    for (i, l) in f.layers.iter().enumerate() {
        let w = build_matrix(l, &format!("layer {i}"), end)?;
        let b = l.bias.clone().ok_or_else(|| semantic(format!("layer {i}: missing bias"), end))?;
        layers.push(Layer::new(w, b).map_err(|e| semantic(e.to_string(), end))?);
    }
    if f.final_.bias.is_some() {
        return Err(semantic("final matrix carries no bias", end));
    }
    let fin = build_matrix(&f.final_, "final", end)?;
    let net = Network::new(f.input_dim, layers, fin).map_err(|e| semantic(e.to_string(), end))?;
    if net.output_dim() != f.output_dim {
        return Err(semantic("output_dim disagrees with final matrix", end));
    }
    let fin_norm = net.final_matrix().frobenius();
    let cert = FrobeniusCertificate {
        kappa: f.certificate.kappa,
        bound: f.certificate.bound.unwrap_or(f.certificate.budget),
        budget: f.certificate.budget,
        per_layer_norms: f.certificate.per_layer_norms,
        final_norm: fin_norm,
        derivation: Vec::new(),
    };
    Ok((net, cert))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        let l0 = Layer::new(Matrix::from_dense(2, 1, &[0.1, -2.0 / 3.0]).unwrap(), vec![1e-300, 1.0]).unwrap();
        Network::new(1, vec![l0], Matrix::from_dense(1, 2, &[std::f64::consts::PI, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let n = net();
        let c = n.exact_certificate();
        let s = serialize(&n, &c);
        let (m, d) = deserialize(&s).unwrap();
        assert_eq!(m, n);
        assert_eq!(d.kappa.to_bits(), c.kappa.to_bits());
        assert_eq!(serialize(&m, &d), s);
    }

    #[test]
    fn sparse_entries_round_trip() {
        let mut t = Vec::new();
        for i in 0..100 {
            t.push((i, (i * 7) % 100, 1.0 / (i as f64 + 1.0)));
        }
        let a = Matrix::from_triplets(100, 100, &t).unwrap();
        let l = Layer::new(a, vec![0.0; 100]).unwrap();
        let n = Network::new(100, vec![l], Matrix::from_dense(1, 100, &[1.0; 100]).unwrap()).unwrap();
        let s = serialize(&n, &n.exact_certificate());
        assert!(s.contains("\"entries\""));
        assert_eq!(deserialize(&s).unwrap().0, n);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let s = serialize(&net(), &net().exact_certificate());
        let cut = &s[..s.len() / 2];
        match deserialize(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let s = serialize(&net(), &net().exact_certificate()).replacen("\"version\"", "\"extra\": 1, \"version\"", 1);
        assert!(matches!(deserialize(&s), Err(Error::Parse { .. })));
    }
}
