//! Snapshot of the state distribution at one time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{factor_psd, is_finite_mat, is_finite_vec, symmetrize};
use crate::quadrature::tensor_hermite;
use crate::scalar::{from_usize, lit, Real};

/// A state measure given either by its Gaussian summary or as an
/// equally weighted particle cloud.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSlice<T: Real> {
    Gaussian { mean: DVector<T>, cov: DMatrix<T> },
    Particles { points: Vec<DVector<T>> },
}

impl<T: Real> MeasureSlice<T> {
    pub fn gaussian(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension {
                key: "cov".into(),
                expected: format!("{0}x{0}", mean.len()),
                found: format!("{}x{}", cov.nrows(), cov.ncols()),
            });
        }
        if !is_finite_vec(&mean) || !is_finite_mat(&cov) {
            return Err(Error::NonFinite("measure".into()));
        }
        factor_psd(&cov)?;
        Ok(MeasureSlice::Gaussian {
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// Standard Gaussian `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        MeasureSlice::Gaussian {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dirac(x: DVector<T>) -> Self {
        let d = x.len();
        MeasureSlice::Gaussian {
            mean: x,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn particles(points: Vec<DVector<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config(
                "particle measure needs at least one point".into(),
            ));
        }
        Ok(MeasureSlice::Particles { points })
    }

    pub fn dim(&self) -> usize {
        match self {
            MeasureSlice::Gaussian { mean, .. } => mean.len(),
            MeasureSlice::Particles { points } => points[0].len(),
        }
    }

    pub fn mean(&self) -> DVector<T> {
        match self {
            MeasureSlice::Gaussian { mean, .. } => mean.clone(),
            MeasureSlice::Particles { points } => {
                let mut m = DVector::zeros(points[0].len());
                for p in points {
                    m += p;
                }
                m / from_usize::<T>(points.len())
            }
        }
    }

    /// Covariance of the measure (for particles, the population covariance
    /// of the equally weighted cloud).
    pub fn cov(&self) -> DMatrix<T> {
        match self {
            MeasureSlice::Gaussian { cov, .. } => cov.clone(),
            MeasureSlice::Particles { points } => {
                let m = self.mean();
                let d = m.len();
                let mut c = DMatrix::zeros(d, d);
                for p in points {
                    let e = p - &m;
                    c += &e * e.transpose();
                }
                c / from_usize::<T>(points.len())
            }
        }
    }

    /// Weighted nodes integrating polynomial-times-measure integrands:
    /// tensor Gauss–Hermite for Gaussians (a single node for a point mass),
    /// the particles themselves otherwise.
    pub fn nodes(&self, order: usize) -> Vec<(DVector<T>, T)> {
        match self {
            MeasureSlice::Gaussian { mean, cov } => {
                if cov.iter().all(|v| *v == T::zero()) {
                    return vec![(mean.clone(), T::one())];
                }
                let l = factor_psd(cov).expect("covariance validated at construction");
                tensor_hermite::<T>(mean.len(), order)
                    .into_iter()
                    .map(|(z, w)| (mean + &l * z, w))
                    .collect()
            }
            MeasureSlice::Particles { points } => {
                let w = T::one() / from_usize::<T>(points.len());
                points.iter().map(|p| (p.clone(), w)).collect()
            }
        }
    }

    pub fn is_point_mass(&self) -> bool {
        match self {
            MeasureSlice::Gaussian { cov, .. } => cov.iter().all(|v| *v == T::zero()),
            MeasureSlice::Particles { points } => points.iter().all(|p| p == &points[0]),
        }
    }

    pub fn scaled_cov(&self, s: f64) -> Self {
        match self {
            MeasureSlice::Gaussian { mean, cov } => MeasureSlice::Gaussian {
                mean: mean.clone(),
                cov: cov * lit::<T>(s),
            },
            other => other.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_nodes_reproduce_moments() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mu = MeasureSlice::gaussian(mean.clone(), cov.clone()).unwrap();
        let nodes = mu.nodes(6);
        let mut m = DVector::zeros(2);
        let mut c = DMatrix::zeros(2, 2);
        for (x, w) in &nodes {
            m += x * *w;
        }
        for (x, w) in &nodes {
            let e = x - &m;
            c += &e * e.transpose() * *w;
        }
        assert!((m - mean).amax() < 1e-12);
        assert!((c - cov).amax() < 1e-12);
    }

    #[test]
    fn particle_summary() {
        let mu = MeasureSlice::particles(vec![
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 2.0),
        ])
        .unwrap();
        assert_eq!(mu.mean()[0], 1.0);
        assert_eq!(mu.cov()[(0, 0)], 1.0);
        assert_eq!(mu.nodes(20).len(), 2);
    }

    #[test]
    fn dirac_has_one_node() {
        let mu = MeasureSlice::dirac(DVector::from_element(1, 0.3));
        assert_eq!(mu.nodes(20), vec![(DVector::from_element(1, 0.3), 1.0)]);
    }

    #[test]
    fn rejects_indefinite_cov() {
        let r = MeasureSlice::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, -1.0));
        assert!(r.is_err());
    }
}
