#![allow(dead_code)]

use std::process::{Command, Output};

use gats_core::DenseMatrix;
use nalgebra::DMatrix;

pub fn gats(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gats"))
        .args(args)
        .output()
        .expect("spawn gats")
}

pub fn to_nalgebra(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Descending singular values.
pub fn singular_values_oracle(m: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_nalgebra(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn nuclear_norm_oracle(m: &DenseMatrix) -> f64 {
    singular_values_oracle(m).iter().sum()
}

/// Best rank-`r` approximation (Eckart–Young).
pub fn truncation_oracle(m: &DenseMatrix, r: usize) -> DenseMatrix {
    let svd = to_nalgebra(m).svd(true, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = DMatrix::zeros(m.rows(), m.cols());
    for &k in idx.iter().take(r) {
        out += svd.singular_values[k] * u.column(k) * vt.row(k);
    }
    from_nalgebra(&out)
}
