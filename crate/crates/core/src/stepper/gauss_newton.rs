//! Damped Gauss-Newton update on the sparse normal equations.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};

/// Largest damping tried before a solve is declared failed.
pub const MAX_DAMPING: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussNewtonUpdate {
    pub delta: Vec<f64>,
    /// Damping that produced `delta`; larger than requested after escalation.
    pub damping: f64,
}

/// Solves `(J^T J + damping I) delta = -J^T rho`. Failed factorizations are
/// retried with the damping raised tenfold (starting at `1e-10` from zero)
/// up to [`MAX_DAMPING`].
pub fn gauss_newton_update(j: &CscMatrix<f64>, rho: &[f64], damping: f64) -> Result<GaussNewtonUpdate> {
    if rho.len() != j.nrows() {
        return Err(crate::Error::Dimension { context: "residual", expected: j.nrows(), actual: rho.len() });
    }
    let n = j.ncols();
    let jt = j.transpose();
    let normal = &jt * j;
    let rhs = {
        let r = DMatrix::from_column_slice(rho.len(), 1, rho);
        let mut g = &jt * &r;
        g.neg_mut();
        g
    };
    let mut lambda = damping;
    loop {
        let a = if lambda > 0.0 { &normal + &(CscMatrix::identity(n) * lambda) } else { normal.clone() };
        if let Ok(chol) = CscCholesky::factor(&a) {
            let sol = chol.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                if lambda != damping {
                    log::warn!("normal equations singular at damping {damping}; solved with {lambda}");
                }
                return Ok(GaussNewtonUpdate { delta: sol.column(0).iter().copied().collect(), damping: lambda });
            }
        }
        lambda = if lambda == 0.0 { 1e-10 } else { lambda * 10.0 };
        if lambda > MAX_DAMPING * (1.0 + 1e-9) {
            return Err(Error::Singular(format!("normal equations not positive definite up to damping {MAX_DAMPING}")));
        }
    }
}
