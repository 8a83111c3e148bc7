use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_finite, check_len, Error, Result};

/// Dense QR solve of `LstSq(A, b, λ)`, used as a test oracle.
///
/// Tall problems and any damped problem are solved by QR of `[A; λI]`.
/// Undamped wide problems use QR of `Aᵀ` and return `Q R⁻ᵀ b`.
pub fn dense_lstsq(a: &DMatrix<f64>, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    check_len("dense_lstsq rhs", m, b.len())?;
    check_finite("dense_lstsq rhs", b)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Validation(format!("invalid regularization {lambda}")));
    }
    if m < n && lambda == 0.0 {
        let qr = a.transpose().qr();
        let r = qr.r();
        check_rank(&r, n.max(m))?;
        let rhs = DVector::from_column_slice(b);
        let z = r
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
        return Ok((qr.q() * z).as_slice().to_vec());
    }

    let rows = if lambda > 0.0 { m + n } else { m };
    let mut stacked = DMatrix::zeros(rows, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from_slice(b);
    if lambda > 0.0 {
        for i in 0..n {
            stacked[(m + i, i)] = lambda;
        }
    }
    let qr = stacked.qr();
    let r = qr.r();
    check_rank(&r, rows)?;
    let qtb = qr.q().tr_mul(&rhs);
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    Ok(x.as_slice().to_vec())
}

fn check_rank(r: &DMatrix<f64>, dim: usize) -> Result<()> {
    let k = r.nrows().min(r.ncols());
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    let cutoff = dim as f64 * f64::EPSILON * largest;
    let rank = diag.iter().filter(|&&d| d > cutoff).count();
    if rank < k || largest == 0.0 {
        return Err(Error::RankDeficient { rank, dim: k });
    }
    Ok(())
}

/// Orthonormal basis (thin Q) for the columns of a Gaussian `rows × cols` matrix.
pub fn thin_q(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// `A = Q₁ Σ Q₂ᵀ` with Haar-like orthonormal factors and singular values
/// log-spaced from `cond` down to 1.
pub fn make_illconditioned(m: usize, n: usize, cond: f64, seed: u64) -> DMatrix<f64> {
    assert!(m > 0 && n > 0 && cond >= 1.0, "invalid test matrix spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = m.min(n);
    let q1 = thin_q(m, r, &mut rng);
    let q2 = thin_q(n, r, &mut rng);
    let sigma: Vec<f64> = (0..r)
        .map(|i| {
            if r == 1 {
                1.0
            } else {
                cond.powf(1.0 - i as f64 / (r - 1) as f64)
            }
        })
        .collect();
    let mut scaled = q1;
    for (j, s) in sigma.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    scaled * q2.transpose()
}
