use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Residual projection `I − H` with `H = W^{1/2} Z (Zᵀ W Z)⁻¹ Zᵀ W^{1/2}`,
/// applied through the thin Q factor of `W^{1/2} Z`. H is never formed.
#[derive(Debug, Clone)]
pub struct Projector {
    q: DMatrix<f64>,
}

impl Projector {
    pub fn new(z: &DMatrix<f64>, w: &DVector<f64>) -> Result<Self> {
        if z.nrows() != w.len() {
            return Err(Error::InvalidInput("weights do not match the design".into()));
        }
        let mut zw = z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        let qr = zw.qr();
        let r = qr.r();
        let max = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..r.ncols()).any(|i| r[(i, i)].abs() <= 1e-13 * max) || max == 0.0 {
            return Err(Error::Singular("weighted nuisance design W^1/2 Z".into()));
        }
        Ok(Projector { q: qr.q() })
    }

    /// `(I − H) v`.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let coef = self.q.tr_mul(v);
        v - &self.q * coef
    }

    /// `‖(I − H) v‖²`.
    pub fn residual_norm_squared(&self, v: &DVector<f64>) -> f64 {
        self.residual(v).norm_squared()
    }
}
