//! Backward fixed-step RK4 for the quadratic value coefficients
//! `(Λ, Γ, ζ, χ)` shared by the Riccati and policy-evaluation solvers.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_finite_mat, is_finite_vec, quad_form, symmetrize, trace_prod};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Coefficients of `J(t, μ) = Tr(Λ cov μ) + μ̄ᵀΓμ̄ + ζᵀμ̄ + χ`, or their
/// time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCoefficients<T: Real> {
    pub lambda: DMatrix<T>,
    pub gamma: DMatrix<T>,
    pub zeta: DVector<T>,
    pub chi: T,
}

impl<T: Real> ValueCoefficients<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            lambda: DMatrix::zeros(d, d),
            gamma: DMatrix::zeros(d, d),
            zeta: DVector::zeros(d),
            chi: T::zero(),
        }
    }

    /// Evaluates the quadratic form on a measure with the given mean and
    /// covariance.
    pub fn evaluate(&self, mean: &DVector<T>, cov: &DMatrix<T>) -> T {
        trace_prod(&self.lambda, cov)
            + quad_form(&self.gamma, mean)
            + self.zeta.dot(mean)
            + self.chi
    }

    pub fn is_finite(&self) -> bool {
        is_finite_mat(&self.lambda)
            && is_finite_mat(&self.gamma)
            && is_finite_vec(&self.zeta)
            && self.chi.is_finite()
    }

    fn symmetrized(mut self) -> Self {
        self.lambda = symmetrize(&self.lambda);
        self.gamma = symmetrize(&self.gamma);
        self
    }

    /// Largest absolute entry-wise difference across all four coefficients.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let m = (&self.lambda - &other.lambda)
            .amax()
            .max((&self.gamma - &other.gamma).amax())
            .max((&self.zeta - &other.zeta).amax());
        m.max((self.chi - other.chi).abs())
    }

    pub fn cast<S: Real>(&self) -> ValueCoefficients<S> {
        let c = |v: T| lit::<S>(to_f64(v));
        ValueCoefficients {
            lambda: self.lambda.map(c),
            gamma: self.gamma.map(c),
            zeta: self.zeta.map(c),
            chi: c(self.chi),
        }
    }
}

impl<T: Real> Add for &ValueCoefficients<T> {
    type Output = ValueCoefficients<T>;
    fn add(self, o: Self) -> ValueCoefficients<T> {
        ValueCoefficients {
            lambda: &self.lambda + &o.lambda,
            gamma: &self.gamma + &o.gamma,
            zeta: &self.zeta + &o.zeta,
            chi: self.chi + o.chi,
        }
    }
}

impl<T: Real> Mul<T> for &ValueCoefficients<T> {
    type Output = ValueCoefficients<T>;
    fn mul(self, s: T) -> ValueCoefficients<T> {
        ValueCoefficients {
            lambda: &self.lambda * s,
            gamma: &self.gamma * s,
            zeta: &self.zeta * s,
            chi: self.chi * s,
        }
    }
}

/// Node values of a quadratic value function on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue<T: Real> {
    pub times: Vec<T>,
    pub nodes: Vec<ValueCoefficients<T>>,
}

impl<T: Real> QuadraticValue<T> {
    pub fn horizon(&self) -> T {
        *self.times.last().expect("non-empty grid")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the grid cell containing `t` and the local weight.
    pub fn locate(&self, t: T) -> (usize, T) {
        locate(&self.times, t)
    }

    /// Linear interpolation of the node values.
    pub fn at(&self, t: T) -> ValueCoefficients<T> {
        let (k, w) = self.locate(t);
        if w == T::zero() {
            return self.nodes[k].clone();
        }
        &(&self.nodes[k] * (T::one() - w)) + &(&self.nodes[k + 1] * w)
    }

    pub fn value(&self, t: T, mean: &DVector<T>, cov: &DMatrix<T>) -> T {
        self.at(t).evaluate(mean, cov)
    }

    /// Time derivative of the node values by five-point finite differences,
    /// one-sided near the ends, linearly interpolated between nodes.
    pub fn finite_difference_derivative(&self, t: T) -> Result<ValueCoefficients<T>> {
        let n = self.nodes.len();
        if n < 5 {
            return Err(Error::Config(
                "finite-difference derivative needs at least five nodes".into(),
            ));
        }
        let (k, w) = self.locate(t);
        let d0 = self.node_derivative(k);
        if w == T::zero() || k + 1 >= n {
            return Ok(d0);
        }
        let d1 = self.node_derivative(k + 1);
        Ok(&(&d0 * (T::one() - w)) + &(&d1 * w))
    }

    fn node_derivative(&self, k: usize) -> ValueCoefficients<T> {
        let n = self.nodes.len();
        let h = self.times[1] - self.times[0];
        let (start, coeffs): (usize, [f64; 5]) = if k < 2 {
            if k == 0 {
                (0, [-25.0, 48.0, -36.0, 16.0, -3.0])
            } else {
                (0, [-3.0, -10.0, 18.0, -6.0, 1.0])
            }
        } else if k + 2 >= n {
            if k == n - 1 {
                (n - 5, [3.0, -16.0, 36.0, -48.0, 25.0])
            } else {
                (n - 5, [-1.0, 6.0, -18.0, 10.0, 3.0])
            }
        } else {
            (k - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
        };
        let d = self.nodes[0].zeta.len();
        let mut acc = ValueCoefficients::zeros(d);
        for (j, c) in coeffs.iter().enumerate() {
            if *c != 0.0 {
                acc = &acc + &(&self.nodes[start + j] * lit::<T>(*c));
            }
        }
        &acc * (T::one() / (lit::<T>(12.0) * h))
    }
}

pub(crate) fn locate<T: Real>(times: &[T], t: T) -> (usize, T) {
    let n = times.len();
    if n == 1 || t <= times[0] {
        return (0, T::zero());
    }
    if t >= times[n - 1] {
        return (n - 1, T::zero());
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    (k, w)
}

pub(crate) fn uniform_grid<T: Real>(horizon: T, steps: usize) -> Vec<T> {
    (0..=steps)
        .map(|k| {
            if k == steps {
                horizon
            } else {
                horizon * from_usize::<T>(k) / from_usize::<T>(steps)
            }
        })
        .collect()
}

/// Integrates `y' = f(t, y)` backward from `y(T) = terminal` on a uniform
/// grid of `steps` intervals with classical RK4, symmetrizing `Λ`, `Γ` after
/// every step. Returns node values in increasing time order.
pub fn integrate_backward<T, F>(
    horizon: T,
    steps: usize,
    terminal: ValueCoefficients<T>,
    rhs: F,
) -> Result<QuadraticValue<T>>
where
    T: Real,
    F: Fn(T, &ValueCoefficients<T>) -> Result<ValueCoefficients<T>>,
{
    if steps == 0 {
        return Err(Error::Config(
            "at least one integration step is required".into(),
        ));
    }
    let times = uniform_grid(horizon, steps);
    let mut nodes = vec![terminal.clone(); steps + 1];
    let half = lit::<T>(0.5);
    let sixth = T::one() / lit::<T>(6.0);
    let two = lit::<T>(2.0);
    let mut y = terminal;
    for k in (0..steps).rev() {
        let t1 = times[k + 1];
        let h = -(t1 - times[k]);
        let tm = t1 + h * half;
        let t0 = times[k];
        let k1 = rhs(t1, &y)?;
        let k2 = rhs(tm, &(&y + &(&k1 * (h * half))))?;
        let k3 = rhs(tm, &(&y + &(&k2 * (h * half))))?;
        let k4 = rhs(t0, &(&y + &(&k3 * h)))?;
        let incr = &(&(&k1 + &(&k2 * two)) + &(&(&k3 * two) + &k4)) * (h * sixth);
        let next = (&y + &incr).symmetrized();
        if !next.is_finite() {
            return Err(Error::Divergence {
                step: steps - k,
                last_valid_t: to_f64(t1),
            });
        }
        nodes[k] = next.clone();
        y = next;
    }
    Ok(QuadraticValue { times, nodes })
}
