//! Matrix exponential (Padé-13 scaling and squaring) and the uniformization
//! action `exp(t Qᵀ) p` for generator matrices.

use nalgebra::{DMatrix, DVector};

use super::csr::CsrMatrix;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `‖A‖₁` threshold for Padé order 13 (Higham 2005).
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense matrix exponential.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let nrm = norm1(a);
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `exp(t Qᵀ) p` for a generator whose off-diagonal part is `offdiag` and whose
/// diagonal is `diag`, by uniformization. The horizon is split into chunks with
/// `Λ Δt ≤ 32` so Poisson weights never underflow; each chunk is truncated once
/// the remaining Poisson mass is below `1e-15`.
pub fn uniformization_action(offdiag: &CsrMatrix, diag: &[f64], p: &DVector<f64>, t: f64) -> DVector<f64> {
    let lambda = diag.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if lambda == 0.0 || t == 0.0 {
        return p.clone();
    }
    let chunks = ((lambda * t) / 32.0).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let lt = lambda * dt;
    // One DTMC step: x ← x (I + Q/Λ), as a column vector (I + Qᵀ/Λ) x.
    let step = |x: &DVector<f64>| -> DVector<f64> {
        let mut out = offdiag.tr_mul_vec(x) / lambda;
        for i in 0..x.len() {
            out[i] += x[i] * (1.0 + diag[i] / lambda);
        }
        out
    };
    let mut cur = p.clone();
    for _ in 0..chunks {
        let mut weight = (-lt).exp();
        let mut mass = weight;
        let mut term = cur.clone();
        let mut acc = &term * weight;
        let mut k = 0usize;
        while 1.0 - mass > 1e-15 && k < 10_000 {
            k += 1;
            term = step(&term);
            weight *= lt / k as f64;
            mass += weight;
            acc.axpy(weight, &term, 1.0);
        }
        cur = acc;
    }
    cur
}
