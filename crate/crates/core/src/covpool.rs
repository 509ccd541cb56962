//! Covariance pooling of a frame-feature matrix onto the tangent space of the
//! SPD manifold, and the structured backward pass through its SVD.
//!
//! For a raw (uncentred) feature matrix `D` (`m x d`, `m <= d`) with full SVD
//! `D = U Sigma V^T`, the forward map is
//!
//! ```text
//! Y = V log(Sigma^T Sigma + eps I) V^T  ==  log(D^T D + eps I)
//! ```
//!
//! The backward pass takes `dJ/dY` to `dJ/dSigma` and `dJ/dV`, then to
//! `dJ/dD` through the block split `V = (V1 | V2)` where `V1` holds the
//! first `m` columns. The trailing `d - m` eigenvalues of the covariance are
//! exactly `eps`.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{hadamard, svd, sym, Matrix, SvdFactors};
use crate::rng::{seeded, uniform_matrix};

pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Minimum allowed `|s_i^2 - s_j^2|` in the backward pass.
pub const SPECTRUM_GAP: f64 = 1e-6;
/// Minimum allowed singular value in the backward pass.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// What the backward pass does when the spectrum is too close to degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SpectrumPolicy {
    /// Fail with [`Error::DegenerateSpectrum`] / [`Error::SingularValueTooSmall`].
    #[default]
    Error,
    /// Replace offending denominators by `+-SPECTRUM_GAP` and floor small
    /// singular values at `SIGMA_FLOOR`.
    Clamp,
}

/// Forward result plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub features: Matrix,
    pub factors: SvdFactors,
    pub epsilon: f64,
    /// `log(s_i^2 + eps)` for the first `m` entries, `log(eps)` after.
    pub log_spectrum: Vec<f64>,
    pub y: Matrix,
}

impl PoolCache {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

pub fn pool_forward(features: &Matrix, epsilon: f64) -> Result<PoolCache> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let (m, d) = features.shape();
    if m == 0 {
        return Err(Error::EmptyVideo);
    }
    if m > d {
        return Err(Error::TooManyFrames { frames: m, dim: d });
    }
    let factors = svd(features)?;
    let mut log_spectrum = Vec::with_capacity(d);
    for i in 0..d {
        let s2 = factors.s.get(i).map_or(0.0, |s| s * s);
        log_spectrum.push(libm::log(s2 + epsilon));
    }

    let v = &factors.v;
    let mut y = Matrix::zeros(d, d);
    for (k, &l) in log_spectrum.iter().enumerate() {
        for i in 0..d {
            let vik = v[(i, k)] * l;
            if vik == 0.0 {
                continue;
            }
            for j in 0..d {
                y[(i, j)] += vik * v[(j, k)];
            }
        }
    }
    let y = sym(&y)?;

    Ok(PoolCache {
        features: features.clone(),
        factors,
        epsilon,
        log_spectrum,
        y,
    })
}

fn check_spectrum(s: &[f64], policy: SpectrumPolicy) -> Result<()> {
    if policy == SpectrumPolicy::Clamp {
        return Ok(());
    }
    for (i, &si) in s.iter().enumerate() {
        if si < SIGMA_FLOOR {
            return Err(Error::SingularValueTooSmall { index: i, value: si });
        }
    }
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let gap = (s[j] * s[j] - s[i] * s[i]).abs();
            if gap < SPECTRUM_GAP {
                return Err(Error::DegenerateSpectrum { i, j, gap });
            }
        }
    }
    Ok(())
}

/// `dJ/dD` given `dJ/dY`.
pub fn pool_backward(cache: &PoolCache, dy: &Matrix, policy: SpectrumPolicy) -> Result<Matrix> {
    let (m, d) = cache.features.shape();
    if dy.shape() != (d, d) {
        return Err(Error::ShapeMismatch {
            op: "pool_backward",
            left: (d, d),
            right: dy.shape(),
        });
    }
    if !dy.is_finite() {
        return Err(Error::NonFiniteGradient { tensor: "dJ/dY" });
    }
    let SvdFactors { u, s, v } = &cache.factors;
    check_spectrum(s, policy)?;

    let g = sym(dy)?;
    let sigma = cache.factors.sigma();

    // dJ/dSigma = 2 Sigma (Sigma^T Sigma + eps I)^-1 V^T G V
    let vtgv = v.tr_matmul(&g.matmul(v)?)?;
    let mut d_sigma = Matrix::zeros(m, d);
    for i in 0..m {
        let w = 2.0 * s[i] / (s[i] * s[i] + cache.epsilon);
        for j in 0..d {
            d_sigma[(i, j)] = w * vtgv[(i, j)];
        }
    }

    // dJ/dV = 2 G V log(Sigma^T Sigma + eps I)
    let mut d_v = g.matmul(v)?;
    for r in 0..d {
        for (c, &l) in cache.log_spectrum.iter().enumerate() {
            d_v[(r, c)] *= 2.0 * l;
        }
    }

    let inv_s: Vec<f64> = s
        .iter()
        .map(|&x| 1.0 / if policy == SpectrumPolicy::Clamp { x.max(SIGMA_FLOOR) } else { x })
        .collect();
    let v1 = v.columns(0, m);
    let v2 = v.columns(m, d);
    let dv1 = d_v.columns(0, m);
    let dv2 = d_v.columns(m, d);

    // Q = Sigma_m^-1 (dJ/dV)_1^T - Sigma_m^-1 V1^T (dJ/dV)_2 V2^T
    let mut q = dv1.transpose();
    if m < d {
        let second = v1.tr_matmul(&dv2)?.matmul(&v2.transpose())?;
        q = q.sub(&second)?;
    }
    for i in 0..m {
        for j in 0..d {
            q[(i, j)] *= inv_s[i];
        }
    }

    let p = Matrix::from_fn(m, m, |i, j| {
        if i == j {
            return 0.0;
        }
        let mut den = s[j] * s[j] - s[i] * s[i];
        if policy == SpectrumPolicy::Clamp && den.abs() < SPECTRUM_GAP {
            den = if den > 0.0 || (den == 0.0 && i > j) {
                SPECTRUM_GAP
            } else {
                -SPECTRUM_GAP
            };
        }
        1.0 / den
    });

    let qv = q.matmul(v)?;
    let vt = v.transpose();

    let term1 = u.matmul(&q)?;
    let term2 = u.matmul(&d_sigma.sub(&qv)?.diag_part())?.matmul(&vt)?;
    let qvst = qv.matmul(&sigma.transpose())?.scale(-1.0);
    let inner = sym(&hadamard(&p, &qvst)?)?;
    let term3 = u
        .matmul(&inner)?
        .matmul(&sigma)?
        .matmul(&vt)?
        .scale(2.0);

    let dd = term1.add(&term2)?.add(&term3)?;
    if !dd.is_finite() {
        return Err(Error::NonFiniteGradient { tensor: "dJ/dD" });
    }
    Ok(dd)
}

/// Scalar probe used to drive [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLoss {
    /// `J = sum_ij Y_ij^2`
    SumOfSquares,
    /// `J = sum_ij G_ij Y_ij` with `G` uniform in `[-1, 1]` from the seed.
    RandomLinear { seed: u64 },
}

impl ProbeLoss {
    fn weights(&self, d: usize) -> Option<Matrix> {
        match *self {
            ProbeLoss::SumOfSquares => None,
            ProbeLoss::RandomLinear { seed } => Some(uniform_matrix(&mut seeded(seed), d, d, 1.0)),
        }
    }
}

fn probe_value(y: &Matrix, weights: Option<&Matrix>) -> f64 {
    match weights {
        None => y.as_slice().iter().map(|v| v * v).sum(),
        Some(g) => y.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(row, col)` of the worst entry of `D`.
    pub argmax: (usize, usize),
    pub analytic: Matrix,
    pub numeric: Matrix,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares [`pool_backward`] with central differences of the probe loss,
/// entry by entry of `D`. Relative error is normalised by
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(features: &Matrix, epsilon: f64, probe: ProbeLoss) -> Result<GradCheckReport> {
    let cache = pool_forward(features, epsilon)?;
    let d = cache.dim();
    let weights = probe.weights(d);
    let dy = match &weights {
        None => cache.y.scale(2.0),
        Some(g) => g.clone(),
    };
    let analytic = pool_backward(&cache, &dy, SpectrumPolicy::Error)?;

    let (rows, cols) = features.shape();
    let mut numeric = Matrix::zeros(rows, cols);
    let mut probe_d = features.clone();
    for r in 0..rows {
        for c in 0..cols {
            let x0 = features[(r, c)];
            probe_d[(r, c)] = x0 + FD_STEP;
            let plus = probe_value(&pool_forward(&probe_d, epsilon)?.y, weights.as_ref());
            probe_d[(r, c)] = x0 - FD_STEP;
            let minus = probe_value(&pool_forward(&probe_d, epsilon)?.y, weights.as_ref());
            probe_d[(r, c)] = x0;
            numeric[(r, c)] = (plus - minus) / (2.0 * FD_STEP);
        }
    }

    let mut max_rel_err = 0.0;
    let mut argmax = (0, 0);
    for r in 0..rows {
        for c in 0..cols {
            let a = analytic[(r, c)];
            let n = numeric[(r, c)];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
                argmax = (r, c);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        argmax,
        analytic,
        numeric,
    })
}

/// Random `m x d` feature matrix with entries uniform in `[-1, 1]`; the
/// spectrum is non-degenerate with probability one.
pub fn random_features<R: Rng + ?Sized>(rng: &mut R, m: usize, d: usize) -> Matrix {
    uniform_matrix(rng, m, d, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spd_log_oracle, symmetric_eigen};

    #[test]
    fn zero_input_gives_log_eps_identity() {
        let c = pool_forward(&Matrix::zeros(2, 3), 0.01).unwrap();
        let expected = Matrix::identity(3).scale(libm::log(0.01));
        assert!(c.y.max_abs_diff(&expected).unwrap() < 1e-14);
        assert!((c.y[(0, 0)] + 4.605_170_2).abs() < 1e-7);
    }

    #[test]
    fn identity_input() {
        let c = pool_forward(&Matrix::identity(2), 1.0).unwrap();
        let expected = Matrix::identity(2).scale(core::f64::consts::LN_2);
        assert!(c.y.max_abs_diff(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn matches_eigen_oracle() {
        let dm = random_features(&mut seeded(1), 3, 5);
        let c = pool_forward(&dm, 1e-3).unwrap();
        let cov = dm
            .tr_matmul(&dm)
            .unwrap()
            .add(&Matrix::identity(5).scale(1e-3))
            .unwrap();
        let oracle = spd_log_oracle(&cov).unwrap();
        assert!(c.y.max_abs_diff(&oracle).unwrap() < 1e-8);
        assert_eq!(c.y, c.y.transpose());
    }

    #[test]
    fn forward_rejects_bad_input() {
        assert!(matches!(
            pool_forward(&Matrix::zeros(4, 3), 1e-3),
            Err(Error::TooManyFrames { frames: 4, dim: 3 })
        ));
        assert!(matches!(
            pool_forward(&Matrix::zeros(1, 3), 0.0),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            pool_forward(&Matrix::zeros(1, 3), -1.0),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            pool_forward(&Matrix::zeros(0, 3), 1e-3),
            Err(Error::EmptyVideo)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let dm = random_features(&mut seeded(2), 4, 6);
        let c = pool_forward(&dm, 1e-3).unwrap();
        let g = pool_backward(&c, &Matrix::zeros(6, 6), SpectrumPolicy::Error).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_rejects_wrong_shape() {
        let c = pool_forward(&random_features(&mut seeded(2), 2, 3), 1e-3).unwrap();
        assert!(matches!(
            pool_backward(&c, &Matrix::zeros(2, 2), SpectrumPolicy::Error),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn grad_check_shapes() {
        for (seed, (m, d)) in [(1, 4), (3, 5), (4, 6), (8, 8)].into_iter().enumerate() {
            let dm = random_features(&mut seeded(10 + seed as u64), m, d);
            for probe in [ProbeLoss::SumOfSquares, ProbeLoss::RandomLinear { seed: 3 }] {
                let r = grad_check(&dm, 1e-3, probe).unwrap();
                assert!(r.max_rel_err < 1e-4, "{m}x{d} {probe:?}: {}", r.max_rel_err);
            }
        }
    }

    #[test]
    fn repeated_singular_values_are_reported() {
        let dm = Matrix::identity(2).scale(2.0);
        assert!(matches!(
            grad_check(&dm, 1e-3, ProbeLoss::SumOfSquares),
            Err(Error::DegenerateSpectrum { i: 0, j: 1, .. })
        ));
        let c = pool_forward(&dm, 1e-3).unwrap();
        let g = pool_backward(&c, &c.y.scale(2.0), SpectrumPolicy::Clamp).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn tiny_singular_value_is_reported() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let dm = Matrix::from_rows(&[r.to_vec(), r.to_vec()]).unwrap();
        let c = pool_forward(&dm, 1e-3).unwrap();
        assert!(matches!(
            pool_backward(&c, &c.y, SpectrumPolicy::Error),
            Err(Error::SingularValueTooSmall { index: 1, .. })
        ));
        assert!(pool_backward(&c, &c.y, SpectrumPolicy::Clamp).unwrap().is_finite());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let dm = random_features(&mut seeded(5), 3, 7);
        let c = pool_forward(&dm, 1e-3).unwrap();
        let g1 = uniform_matrix(&mut seeded(6), 7, 7, 1.0);
        let g2 = uniform_matrix(&mut seeded(7), 7, 7, 1.0);
        let (a, b) = (0.7, -1.3);
        let lhs = pool_backward(&c, &g1.scale(a).add(&g2.scale(b)).unwrap(), SpectrumPolicy::Error)
            .unwrap();
        let rhs = pool_backward(&c, &g1, SpectrumPolicy::Error)
            .unwrap()
            .scale(a)
            .add(&pool_backward(&c, &g2, SpectrumPolicy::Error).unwrap().scale(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn spectrum_is_rotation_invariant() {
        let dm = random_features(&mut seeded(8), 3, 6);
        let rot = svd(&uniform_matrix(&mut seeded(9), 6, 6, 1.0)).unwrap().u;
        let y1 = pool_forward(&dm, 1e-3).unwrap().y;
        let y2 = pool_forward(&dm.matmul(&rot).unwrap(), 1e-3).unwrap().y;
        let e1 = symmetric_eigen(&y1).unwrap().values;
        let e2 = symmetric_eigen(&y2).unwrap().values;
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
