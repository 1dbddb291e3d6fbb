//! Dense reference implementations used by the integration tests. Nothing
//! here calls into the library's fitting or projection code.

#![allow(dead_code)]

use flipci::glm::{DesignSplit, Family};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random instance: `x`, nuisance matrix with an intercept column followed by
/// `p - 1` normal columns, and a response from `family`.
pub fn random_instance(family: Family, n: usize, p: usize, seed: u64) -> (DVector<f64>, DesignSplit) {
    let mut r = rng(seed);
    let x = DVector::from_fn(n, |_, _| normal(&mut r));
    let nuisance = DMatrix::from_fn(n, p - 1, |_, _| normal(&mut r));
    let y = DVector::from_fn(n, |i, _| {
        let mut eta = 0.3 * x[i];
        for j in 0..p - 1 {
            eta += 0.2 * nuisance[(i, j)];
        }
        match family {
            Family::Gaussian => eta + normal(&mut r),
            Family::Poisson => Poisson::new((0.5 + eta).exp()).unwrap().sample(&mut r),
            _ => unimplemented!("instances are gaussian or poisson"),
        }
    });
    (y, DesignSplit::with_intercept(x, &nuisance).unwrap())
}

/// Null model under `beta0`: mean, dispersion.
pub struct DenseNull {
    pub mu: DVector<f64>,
    pub dispersion: f64,
}

/// Gaussian: closed-form least squares. Poisson: Newton-Raphson from the
/// log mean, iterated to machine precision.
pub fn dense_null_fit(family: Family, y: &DVector<f64>, design: &DesignSplit, beta0: f64) -> DenseNull {
    let z = design.z();
    let n = y.len();
    let p = z.ncols();
    let offset = design.x() * beta0 + design.offset_or_zero();
    match family {
        Family::Gaussian => {
            let target = y - &offset;
            let gamma = (z.transpose() * z).try_inverse().unwrap() * z.transpose() * target;
            let mu = &offset + z * gamma;
            let rss = (y - &mu).norm_squared();
            DenseNull { mu, dispersion: rss / (n - p) as f64 }
        }
        Family::Poisson => {
            let mut gamma = DVector::zeros(p);
            gamma[0] = (y.mean().max(0.1)).ln() - offset.mean();
            for _ in 0..200 {
                let mu = (&offset + z * &gamma).map(f64::exp);
                let score = z.transpose() * (y - &mu);
                let mut info = DMatrix::zeros(p, p);
                for i in 0..n {
                    let zi = z.row(i).transpose();
                    info += &zi * zi.transpose() * mu[i];
                }
                let step = info.try_inverse().unwrap() * score;
                gamma += &step;
                if step.amax() < 1e-15 {
                    break;
                }
            }
            DenseNull { mu: (&offset + z * &gamma).map(f64::exp), dispersion: 1.0 }
        }
        _ => unimplemented!("dense oracle covers gaussian and poisson"),
    }
}

/// Explicit-H evaluation of the flipped effective score and its variance.
pub struct DenseScore {
    /// `W^{1/2} x` projected by the explicit `I − H`.
    pub a: DVector<f64>,
    pub r: DVector<f64>,
    pub i_minus_h: DMatrix<f64>,
}

impl DenseScore {
    pub fn new(family: Family, y: &DVector<f64>, design: &DesignSplit, mu: &DVector<f64>, dispersion: f64) -> Self {
        let n = y.len();
        let (d, v): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| match family {
                Family::Gaussian => (1.0, dispersion),
                Family::Poisson => (mu[i], mu[i]),
                _ => unimplemented!(),
            })
            .unzip();
        let w_sqrt = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| d[i] / v[i].sqrt()));
        let w = &w_sqrt * &w_sqrt;
        let z = design.z();
        let h = &w_sqrt * z * (z.transpose() * &w * z).try_inverse().unwrap() * z.transpose() * &w_sqrt;
        let i_minus_h = DMatrix::identity(n, n) - h;
        let a = &i_minus_h * &w_sqrt * design.x();
        let r = DVector::from_fn(n, |i, _| (y[i] - mu[i]) / v[i].sqrt());
        DenseScore { a, r, i_minus_h }
    }

    pub fn effective(&self, flip: &[i8]) -> f64 {
        let n = self.a.len();
        let f = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| flip[i] as f64));
        (self.a.transpose() * f * &self.r)[0] / (n as f64).sqrt()
    }

    /// `n^{-1} xᵀ W^{1/2} (I−H) F (I−H) F (I−H) W^{1/2} x`.
    pub fn variance(&self, flip: &[i8]) -> f64 {
        let n = self.a.len();
        let f = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| flip[i] as f64));
        (self.a.transpose() * &f * &self.i_minus_h * &f * &self.a)[0] / n as f64
    }

    pub fn standardized(&self, flip: &[i8]) -> f64 {
        self.effective(flip) / self.variance(flip).sqrt()
    }
}

/// Sign vector for bit pattern `mask` (bit i set -> -1).
pub fn signs_from_mask(mask: u64, n: usize) -> Vec<i8> {
    (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect()
}

/// `A⁻¹ B A⁻¹` at a given coefficient vector `(beta, gamma)`, built from
/// explicit outer products and a general matrix inverse.
pub fn dense_hc0(family: Family, y: &DVector<f64>, design: &DesignSplit, coef: &DVector<f64>) -> DMatrix<f64> {
    let m = design.full_matrix();
    let k = m.ncols();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DMatrix::zeros(k, k);
    for i in 0..y.len() {
        let mi = m.row(i).transpose();
        let eta = mi.dot(coef) + design.offset_or_zero()[i];
        let (mu, d, v) = match family {
            Family::Gaussian => (eta, 1.0, 1.0),
            Family::Poisson => (eta.exp(), eta.exp(), eta.exp()),
            _ => unimplemented!(),
        };
        a += &mi * mi.transpose() * (d * d / v);
        let u = &mi * (d * (y[i] - mu) / v);
        b += &u * u.transpose();
    }
    let ainv = a.try_inverse().unwrap();
    &ainv * b * &ainv
}
