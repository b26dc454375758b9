//! Optimal rotation between paired offset sets (Procrustes/Kabsch).

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Best proper rotation `R` (row-major `dim x dim`) minimizing
/// `sum_j ||R a_j - b_j||^2`, plus a flag marking degenerate input
/// (all offsets zero), for which the identity is returned.
///
/// 2D uses the closed form through the angle of the summed cross/dot
/// products; 3D orthogonalizes the cross-covariance by SVD with the usual
/// reflection fix.
pub fn kabsch_rotation(canonical: &[f64], deformed: &[f64], dim: usize) -> Result<(Vec<f64>, bool)> {
    if canonical.len() != deformed.len() {
        return Err(Error::Contract("offset arrays must have equal length".into()));
    }
    if canonical.is_empty() || canonical.len() % dim != 0 {
        return Err(Error::Contract(format!(
            "need at least one {dim}-dimensional offset pair"
        )));
    }
    match dim {
        2 => Ok(kabsch_2d(canonical, deformed)),
        3 => Ok(kabsch_3d(canonical, deformed)),
        _ => Err(Error::Contract(format!("unsupported dimension {dim}"))),
    }
}

fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

fn kabsch_2d(a: &[f64], b: &[f64]) -> (Vec<f64>, bool) {
    let mut cross = 0.0;
    let mut dot = 0.0;
    let mut a_norm = 0.0;
    for j in 0..a.len() / 2 {
        let (ax, ay) = (a[2 * j], a[2 * j + 1]);
        let (bx, by) = (b[2 * j], b[2 * j + 1]);
        cross += ax * by - ay * bx;
        dot += ax * bx + ay * by;
        a_norm += ax * ax + ay * ay;
    }
    if a_norm == 0.0 || (cross == 0.0 && dot == 0.0) {
        return (identity(2), true);
    }
    let phi = cross.atan2(dot);
    let (s, c) = phi.sin_cos();
    (vec![c, -s, s, c], false)
}

fn kabsch_3d(a: &[f64], b: &[f64]) -> (Vec<f64>, bool) {
    let mut h = Matrix3::<f64>::zeros();
    let mut a_norm = 0.0;
    for j in 0..a.len() / 3 {
        for r in 0..3 {
            a_norm += a[3 * j + r] * a[3 * j + r];
            for c in 0..3 {
                h[(r, c)] += a[3 * j + r] * b[3 * j + c];
            }
        }
    }
    if a_norm == 0.0 || h.norm() == 0.0 {
        return (identity(3), true);
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v = svd.v_t.expect("svd with v_t").transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, sign));
    let r = v * d * u.transpose();
    let mut out = vec![0.0; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[row * 3 + col] = r[(row, col)];
        }
    }
    (out, false)
}

/// Apply a row-major `dim x dim` matrix to a vector.
pub fn apply_rotation(r: &[f64], v: &[f64], out: &mut [f64]) {
    let dim = v.len();
    for row in 0..dim {
        out[row] = (0..dim).map(|col| r[row * dim + col] * v[col]).sum();
    }
}
