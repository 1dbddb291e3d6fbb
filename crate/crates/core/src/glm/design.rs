use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance for the rank checks on the nuisance and full designs.
pub const RANK_TOL: f64 = 1e-10;

/// Target covariate `x` split from the nuisance design `Z`, plus an optional
/// fixed offset added to every linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSplit {
    x: DVector<f64>,
    z: DMatrix<f64>,
    offset: Option<DVector<f64>>,
}

impl DesignSplit {
    /// Validates dimensions, full column rank of `Z`, and that `x` is not in
    /// the column span of `Z`.
    pub fn new(x: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::with_offset(x, z, None)
    }

    pub fn with_offset(x: DVector<f64>, z: DMatrix<f64>, offset: Option<DVector<f64>>) -> Result<Self> {
        let n = x.len();
        let p = z.ncols();
        if z.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "x has {n} rows but Z has {}",
                z.nrows()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidInput("Z needs at least one column".into()));
        }
        if n <= p + 1 {
            return Err(Error::InvalidInput(format!(
                "need n > p + 1 observations, got n = {n}, p = {p}"
            )));
        }
        if let Some(o) = &offset {
            if o.len() != n {
                return Err(Error::InvalidInput(format!("offset has {} rows, expected {n}", o.len())));
            }
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("offset has non-finite entries".into()));
            }
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design has non-finite entries".into()));
        }
        if numerical_rank(&z) < p {
            return Err(Error::Unidentifiable("Z is rank deficient".into()));
        }
        let full = full_matrix(&x, &z);
        if numerical_rank(&full) < p + 1 {
            return Err(Error::Unidentifiable("x lies in the column span of Z".into()));
        }
        Ok(DesignSplit { x, z, offset })
    }

    /// Builds a design with an intercept column followed by `nuisance` columns.
    pub fn with_intercept(x: DVector<f64>, nuisance: &DMatrix<f64>) -> Result<Self> {
        let n = x.len();
        let mut z = DMatrix::from_element(n, nuisance.ncols() + 1, 1.0);
        if nuisance.nrows() != n && nuisance.ncols() > 0 {
            return Err(Error::InvalidInput("nuisance rows do not match x".into()));
        }
        z.view_mut((0, 1), (n, nuisance.ncols())).copy_from(nuisance);
        Self::new(x, z)
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn offset(&self) -> Option<&DVector<f64>> {
        self.offset.as_ref()
    }

    /// Offset vector, zeros when none was given.
    pub fn offset_or_zero(&self) -> DVector<f64> {
        self.offset.clone().unwrap_or_else(|| DVector::zeros(self.n()))
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Number of nuisance columns.
    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// `[x, Z]`, target column first.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        full_matrix(&self.x, &self.z)
    }
}

fn full_matrix(x: &DVector<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(x.len(), z.ncols() + 1);
    m.set_column(0, x);
    m.view_mut((0, 1), (z.nrows(), z.ncols())).copy_from(z);
    m
}

/// Rank from a column-pivoted QR, counting diagonal entries of R above
/// `RANK_TOL` relative to the largest one.
pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let k = m.ncols().min(m.nrows());
    if k == 0 {
        return 0;
    }
    // Scale columns to unit norm so the tolerance is relative per column.
    let mut scaled = m.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let r = scaled.col_piv_qr().r();
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&d| d > RANK_TOL * max).count()
}
