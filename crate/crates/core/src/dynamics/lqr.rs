use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100_000;
const TOLERANCE: f64 = 1e-10;

/// Discrete LQR gain `K` (so that `u = -K x`) by iterating the Riccati
/// difference equation from `P = Q` until successive iterates agree to 1e-10.
pub fn lqr_state_feedback(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let nu = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (nu, nu) {
        return Err(Error::DimensionMismatch("lqr: A, B, Q, R shapes".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..MAX_ITERATIONS {
        let btp = &bt * &p;
        let gram = r + &btp * b;
        let gain = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("R + B'PB is not positive definite".into()))?
            .solve(&(&btp * a));
        let next = q + &at * &p * a - &at * &p * b * &gain;
        let next = 0.5 * (&next + next.transpose());
        let change = (&next - &p).abs().max();
        if !change.is_finite() {
            break;
        }
        p = next;
        if change < TOLERANCE * (1.0 + p.abs().max()) {
            let btp = &bt * &p;
            let gram = r + &btp * b;
            let k = gram
                .cholesky()
                .ok_or_else(|| Error::Domain("R + B'PB is not positive definite".into()))?
                .solve(&(&btp * a));
            return Ok(k);
        }
    }
    Err(Error::Stabilizability { iterations: MAX_ITERATIONS })
}
