//! Linear-quadratic mean-field model data.
//!
//! State `x ∈ ℝ^d`, action `a ∈ ℝ^p`, one idiosyncratic and one common
//! Brownian motion. The dynamics are
//!
//! ```text
//! b   = b0 + B x + B̄ μ̄ + C a
//! σ   = ϑ  + D x + D̄ μ̄ + F a
//! σ_o = ϑo + Do x + D̄o μ̄ + Fo a
//! ```
//!
//! with running reward `xᵀMx + μ̄ᵀM̄μ̄ + aᵀRa + xᵀO` and terminal reward
//! `xᵀPx + μ̄ᵀP̄μ̄`. Discounting is fixed to zero.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{as_vector, asymmetry, is_finite_mat, max_eigenvalue, quad_form, symmetrize};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Tolerance below which asymmetric input is silently symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Default number of time samples for the condition (H) check.
pub const DEFAULT_CONDITION_SAMPLES: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub p: usize,
}

/// Names of the time-dependent coefficients, in configuration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffKey {
    B0,
    B,
    BBar,
    C,
    Theta,
    D,
    DBar,
    F,
    ThetaO,
    Do,
    DBarO,
    Fo,
    M,
    MBar,
    R,
    O,
}

impl CoeffKey {
    pub const ALL: [CoeffKey; 16] = [
        CoeffKey::B0,
        CoeffKey::B,
        CoeffKey::BBar,
        CoeffKey::C,
        CoeffKey::Theta,
        CoeffKey::D,
        CoeffKey::DBar,
        CoeffKey::F,
        CoeffKey::ThetaO,
        CoeffKey::Do,
        CoeffKey::DBarO,
        CoeffKey::Fo,
        CoeffKey::M,
        CoeffKey::MBar,
        CoeffKey::R,
        CoeffKey::O,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoeffKey::B0 => "b0",
            CoeffKey::B => "B",
            CoeffKey::BBar => "Bbar",
            CoeffKey::C => "C",
            CoeffKey::Theta => "theta",
            CoeffKey::D => "D",
            CoeffKey::DBar => "Dbar",
            CoeffKey::F => "F",
            CoeffKey::ThetaO => "theta_o",
            CoeffKey::Do => "Do",
            CoeffKey::DBarO => "Dbar_o",
            CoeffKey::Fo => "Fo",
            CoeffKey::M => "M",
            CoeffKey::MBar => "Mbar",
            CoeffKey::R => "R",
            CoeffKey::O => "O",
        }
    }

    pub fn from_name(name: &str) -> Option<CoeffKey> {
        CoeffKey::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Expected `(rows, cols)`; vectors are stored as single columns.
    pub fn shape(self, dims: Dims) -> (usize, usize) {
        let Dims { d, p } = dims;
        match self {
            CoeffKey::B0 | CoeffKey::Theta | CoeffKey::ThetaO | CoeffKey::O => (d, 1),
            CoeffKey::C | CoeffKey::F | CoeffKey::Fo => (d, p),
            CoeffKey::R => (p, p),
            _ => (d, d),
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(
            self,
            CoeffKey::B0 | CoeffKey::Theta | CoeffKey::ThetaO | CoeffKey::O
        )
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, CoeffKey::M | CoeffKey::MBar | CoeffKey::R)
    }
}

/// A coefficient that is either constant or a piecewise-linear table in `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient<T: Real> {
    Constant(DMatrix<T>),
    Table {
        times: Vec<T>,
        values: Vec<DMatrix<T>>,
    },
}

impl<T: Real> Coefficient<T> {
    pub fn constant(m: DMatrix<T>) -> Self {
        Coefficient::Constant(m)
    }

    pub fn scalar(v: T) -> Self {
        Coefficient::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Coefficient::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn table(times: Vec<T>, values: Vec<DMatrix<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Config(format!(
                "table needs matching non-empty t/v arrays (got {} and {})",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "table times must be strictly increasing".into(),
            ));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::Config("table values must share one shape".into()));
        }
        Ok(Coefficient::Table { times, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Coefficient::Constant(m) => m.shape(),
            Coefficient::Table { values, .. } => values[0].shape(),
        }
    }

    /// Value at `t`, linearly interpolated between table nodes and held
    /// constant beyond the first and last node.
    pub fn at(&self, t: T) -> DMatrix<T> {
        match self {
            Coefficient::Constant(m) => m.clone(),
            Coefficient::Table { times, values } => {
                let n = times.len();
                if n == 1 || t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[n - 1] {
                    return values[n - 1].clone();
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                &values[k] * (T::one() - w) + &values[k + 1] * w
            }
        }
    }

    pub fn values(&self) -> Vec<&DMatrix<T>> {
        match self {
            Coefficient::Constant(m) => vec![m],
            Coefficient::Table { values, .. } => values.iter().collect(),
        }
    }

    fn map_values(&self, f: impl Fn(&DMatrix<T>) -> DMatrix<T>) -> Self {
        match self {
            Coefficient::Constant(m) => Coefficient::Constant(f(m)),
            Coefficient::Table { times, values } => Coefficient::Table {
                times: times.clone(),
                values: values.iter().map(f).collect(),
            },
        }
    }

    /// Nodes where the coefficient has kinks inside `(0, horizon)`.
    fn nodes_within(&self, horizon: T) -> Vec<T> {
        match self {
            Coefficient::Constant(_) => Vec::new(),
            Coefficient::Table { times, .. } => times
                .iter()
                .copied()
                .filter(|&s| s > T::zero() && s < horizon)
                .collect(),
        }
    }

    pub fn cast<S: Real>(&self) -> Coefficient<S> {
        let conv = |m: &DMatrix<T>| m.map(|v| lit::<S>(to_f64(v)));
        match self {
            Coefficient::Constant(m) => Coefficient::Constant(conv(m)),
            Coefficient::Table { times, values } => Coefficient::Table {
                times: times.iter().map(|&s| lit::<S>(to_f64(s))).collect(),
                values: values.iter().map(conv).collect(),
            },
        }
    }
}

/// All sixteen coefficients evaluated at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSlice<T: Real> {
    pub t: T,
    pub b0: DVector<T>,
    pub b: DMatrix<T>,
    pub b_bar: DMatrix<T>,
    pub c: DMatrix<T>,
    pub theta: DVector<T>,
    pub d: DMatrix<T>,
    pub d_bar: DMatrix<T>,
    pub f: DMatrix<T>,
    pub theta_o: DVector<T>,
    pub d_o: DMatrix<T>,
    pub d_bar_o: DMatrix<T>,
    pub f_o: DMatrix<T>,
    pub m: DMatrix<T>,
    pub m_bar: DMatrix<T>,
    pub r: DMatrix<T>,
    pub o: DVector<T>,
}

impl<T: Real> CoefficientSlice<T> {
    pub fn drift(&self, x: &DVector<T>, mean: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.b0 + &self.b * x + &self.b_bar * mean + &self.c * a
    }

    pub fn sigma(&self, x: &DVector<T>, mean: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.theta + &self.d * x + &self.d_bar * mean + &self.f * a
    }

    pub fn sigma_o(&self, x: &DVector<T>, mean: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.theta_o + &self.d_o * x + &self.d_bar_o * mean + &self.f_o * a
    }

    pub fn running_reward(&self, x: &DVector<T>, mean: &DVector<T>, a: &DVector<T>) -> T {
        quad_form(&self.m, x)
            + quad_form(&self.m_bar, mean)
            + quad_form(&self.r, a)
            + x.dot(&self.o)
    }
}

/// The complete LQ model: dimensions, horizon, temperature and coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModel<T: Real> {
    dims: Dims,
    horizon: T,
    gamma: T,
    coeffs: Vec<Coefficient<T>>,
    p: DMatrix<T>,
    p_bar: DMatrix<T>,
}

impl<T: Real> LqModel<T> {
    /// Model with every coefficient and terminal matrix set to zero.
    pub fn zeros(dims: Dims, horizon: T, gamma: T) -> Result<Self> {
        if dims.d == 0 || dims.p == 0 {
            return Err(Error::Config("dimensions d and p must be positive".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let coeffs = CoeffKey::ALL
            .iter()
            .map(|k| {
                let (r, c) = k.shape(dims);
                Coefficient::zeros(r, c)
            })
            .collect();
        Ok(Self {
            dims,
            horizon,
            gamma,
            coeffs,
            p: DMatrix::zeros(dims.d, dims.d),
            p_bar: DMatrix::zeros(dims.d, dims.d),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Discount rate; the LQ setting here is undiscounted.
    pub fn discount(&self) -> T {
        T::zero()
    }

    pub fn coefficient(&self, key: CoeffKey) -> &Coefficient<T> {
        &self.coeffs[key as usize]
    }

    pub fn terminal_p(&self) -> &DMatrix<T> {
        &self.p
    }

    pub fn terminal_p_bar(&self) -> &DMatrix<T> {
        &self.p_bar
    }

    /// Replaces one coefficient after checking its shape, finiteness and,
    /// for `M`, `M̄`, `R`, symmetry.
    pub fn set(&mut self, key: CoeffKey, coeff: Coefficient<T>) -> Result<()> {
        let expected = key.shape(self.dims);
        if coeff.shape() != expected {
            return Err(Error::Dimension {
                key: key.name().into(),
                expected: format!("{}x{}", expected.0, expected.1),
                found: format!("{}x{}", coeff.shape().0, coeff.shape().1),
            });
        }
        if coeff.values().iter().any(|m| !is_finite_mat(m)) {
            return Err(Error::NonFinite(key.name().into()));
        }
        let coeff = if key.is_symmetric() {
            for m in coeff.values() {
                check_symmetric(key.name(), m)?;
            }
            coeff.map_values(symmetrize)
        } else {
            coeff
        };
        self.coeffs[key as usize] = coeff;
        Ok(())
    }

    pub fn with(mut self, key: CoeffKey, coeff: Coefficient<T>) -> Result<Self> {
        self.set(key, coeff)?;
        Ok(self)
    }

    pub fn with_const(self, key: CoeffKey, m: DMatrix<T>) -> Result<Self> {
        self.with(key, Coefficient::Constant(m))
    }

    pub fn set_terminal(&mut self, p: DMatrix<T>, p_bar: DMatrix<T>) -> Result<()> {
        let d = self.dims.d;
        for (name, m) in [("P", &p), ("Pbar", &p_bar)] {
            if m.shape() != (d, d) {
                return Err(Error::Dimension {
                    key: name.into(),
                    expected: format!("{d}x{d}"),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            if !is_finite_mat(m) {
                return Err(Error::NonFinite(name.into()));
            }
            check_symmetric(name, m)?;
        }
        self.p = symmetrize(&p);
        self.p_bar = symmetrize(&p_bar);
        Ok(())
    }

    pub fn with_terminal(mut self, p: DMatrix<T>, p_bar: DMatrix<T>) -> Result<Self> {
        self.set_terminal(p, p_bar)?;
        Ok(self)
    }

    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let mut m = self.clone();
        m.gamma = gamma;
        Ok(m)
    }

    /// Evaluates every coefficient at `t`; errors when `t ∉ [0, T]`.
    pub fn coefficients_at(&self, t: T) -> Result<CoefficientSlice<T>> {
        let slack = self.horizon * lit::<T>(1e-12);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::OutOfRange {
                t: to_f64(t),
                horizon: to_f64(self.horizon),
            });
        }
        Ok(self.slice_unchecked(t.max(T::zero()).min(self.horizon)))
    }

    /// Coefficient slice without the horizon check (callers clamp `t`).
    pub(crate) fn slice_unchecked(&self, t: T) -> CoefficientSlice<T> {
        let g = |k: CoeffKey| self.coeffs[k as usize].at(t);
        let v = |k: CoeffKey| as_vector(&self.coeffs[k as usize].at(t));
        CoefficientSlice {
            t,
            b0: v(CoeffKey::B0),
            b: g(CoeffKey::B),
            b_bar: g(CoeffKey::BBar),
            c: g(CoeffKey::C),
            theta: v(CoeffKey::Theta),
            d: g(CoeffKey::D),
            d_bar: g(CoeffKey::DBar),
            f: g(CoeffKey::F),
            theta_o: v(CoeffKey::ThetaO),
            d_o: g(CoeffKey::Do),
            d_bar_o: g(CoeffKey::DBarO),
            f_o: g(CoeffKey::Fo),
            m: g(CoeffKey::M),
            m_bar: g(CoeffKey::MBar),
            r: g(CoeffKey::R),
            o: v(CoeffKey::O),
        }
    }

    /// Terminal reward `xᵀPx + μ̄ᵀP̄μ̄`.
    pub fn terminal_reward(&self, x: &DVector<T>, mean: &DVector<T>) -> T {
        quad_form(&self.p, x) + quad_form(&self.p_bar, mean)
    }

    /// Table nodes of all coefficients inside `(0, T)`, sorted and deduplicated.
    pub fn kink_times(&self) -> Vec<T> {
        let mut v: Vec<T> = self
            .coeffs
            .iter()
            .flat_map(|c| c.nodes_within(self.horizon))
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v.dedup();
        v
    }

    pub fn cast<S: Real>(&self) -> LqModel<S> {
        LqModel {
            dims: self.dims,
            horizon: lit(to_f64(self.horizon)),
            gamma: lit(to_f64(self.gamma)),
            coeffs: self.coeffs.iter().map(|c| c.cast()).collect(),
            p: self.p.map(|v| lit(to_f64(v))),
            p_bar: self.p_bar.map(|v| lit(to_f64(v))),
        }
    }

    /// Checks condition (H) on `samples` uniformly spaced times plus every
    /// coefficient table node.
    pub fn validate_condition_h(&self, delta: T, samples: usize) -> Result<ConditionHReport> {
        if !(delta > T::zero()) {
            return Err(Error::Config(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if samples < 2 {
            return Err(Error::Config(
                "condition (H) needs at least two time samples".into(),
            ));
        }
        for key in [CoeffKey::M, CoeffKey::MBar, CoeffKey::R] {
            for m in self.coefficient(key).values() {
                check_symmetric(key.name(), m)?;
            }
        }
        check_symmetric("P", &self.p)?;
        check_symmetric("Pbar", &self.p_bar)?;

        let mut times: Vec<T> = (0..samples)
            .map(|k| self.horizon * from_usize::<T>(k) / from_usize::<T>(samples - 1))
            .collect();
        times.extend(self.kink_times());

        let tol = lit::<T>(1e-12);
        let p_max = max_eigenvalue(&self.p);
        let pp_max = max_eigenvalue(&(&self.p + &self.p_bar));
        let mut conds = vec![
            ConditionCheck::new("P <= 0", to_f64(p_max), None, p_max <= tol),
            ConditionCheck::new("P + Pbar <= 0", to_f64(pp_max), None, pp_max <= tol),
        ];
        let eye = DMatrix::<T>::identity(self.dims.p, self.dims.p);
        let mut worst = [(T::min_value().unwrap_or(lit(f64::MIN)), T::zero()); 3];
        for &t in &times {
            let s = self.slice_unchecked(t);
            let vals = [
                max_eigenvalue(&s.m),
                max_eigenvalue(&(&s.m + &s.m_bar)),
                max_eigenvalue(&(&s.r + &eye * delta)),
            ];
            for (w, v) in worst.iter_mut().zip(vals) {
                if v > w.0 {
                    *w = (v, t);
                }
            }
        }
        let names = ["M(t) <= 0", "M(t) + Mbar(t) <= 0", "R(t) <= -delta I"];
        for (name, (v, t)) in names.iter().zip(worst) {
            conds.push(ConditionCheck::new(
                name,
                to_f64(v),
                Some(to_f64(t)),
                v <= tol,
            ));
        }
        Ok(ConditionHReport {
            holds: conds.iter().all(|c| c.holds),
            delta_used: to_f64(delta),
            samples,
            conditions: conds,
        })
    }
}

fn check_symmetric<T: Real>(name: &str, m: &DMatrix<T>) -> Result<()> {
    let scale = m.amax().max(T::one());
    let asym = asymmetry(m);
    if asym > lit::<T>(SYMMETRY_TOLERANCE) * scale {
        return Err(Error::NotSymmetric {
            key: name.into(),
            asymmetry: to_f64(asym),
        });
    }
    Ok(())
}

/// Outcome of one semidefiniteness condition over the sampled horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    /// Largest eigenvalue of the tested matrix (must be `<= 0`).
    pub max_eigenvalue: f64,
    /// Time where the largest eigenvalue occurred, for time-dependent checks.
    pub worst_t: Option<f64>,
    pub holds: bool,
}

impl ConditionCheck {
    fn new(name: &str, max_eigenvalue: f64, worst_t: Option<f64>, holds: bool) -> Self {
        Self {
            name: name.into(),
            max_eigenvalue,
            worst_t,
            holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionHReport {
    pub holds: bool,
    pub delta_used: f64,
    pub samples: usize,
    pub conditions: Vec<ConditionCheck>,
}

impl ConditionHReport {
    pub fn violations(&self) -> Vec<&ConditionCheck> {
        self.conditions.iter().filter(|c| !c.holds).collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// d = p = 1, T = 1, γ = 1, C = 1, R = -0.5, P = -0.5.
    pub fn m1() -> LqModel<f64> {
        LqModel::zeros(Dims { d: 1, p: 1 }, 1.0, 1.0)
            .unwrap()
            .with_const(CoeffKey::C, s(1.0))
            .unwrap()
            .with_const(CoeffKey::R, s(-0.5))
            .unwrap()
            .with_terminal(s(-0.5), s(0.0))
            .unwrap()
    }

    /// M1 with controlled common noise `Fo = 0.5`.
    pub fn m2() -> LqModel<f64> {
        m1().with_const(CoeffKey::Fo, s(0.5)).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn m1_satisfies_condition_h() {
        let rep = m1().validate_condition_h(0.4, 201).unwrap();
        assert!(rep.holds);
        let r = rep
            .conditions
            .iter()
            .find(|c| c.name.starts_with("R"))
            .unwrap();
        assert!((r.max_eigenvalue - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn positive_r_violates() {
        let m = m1().with_const(CoeffKey::R, s(1.0)).unwrap();
        let rep = m.validate_condition_h(0.4, 201).unwrap();
        assert!(!rep.holds);
        let v = rep.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].name, "R(t) <= -delta I");
    }

    #[test]
    fn zero_terminal_is_boundary_case() {
        let m = m1().with_terminal(s(0.0), s(0.0)).unwrap();
        assert!(m.validate_condition_h(0.4, 201).unwrap().holds);
    }

    #[test]
    fn delta_too_large_fails() {
        assert!(!m1().validate_condition_h(0.6, 11).unwrap().holds);
        assert!(m1().validate_condition_h(0.5, 11).unwrap().holds);
    }

    #[test]
    fn constant_slice_is_verbatim() {
        let sl = m1().coefficients_at(0.3).unwrap();
        assert_eq!(sl.c[(0, 0)], 1.0);
        assert_eq!(sl.r[(0, 0)], -0.5);
        assert_eq!(sl.b[(0, 0)], 0.0);
        assert_eq!(sl.b0.len(), 1);
    }

    #[test]
    fn table_interpolates_midpoint() {
        let tab = Coefficient::table(vec![0.0, 1.0], vec![s(0.0), s(2.0)]).unwrap();
        let m = m1().with(CoeffKey::B, tab).unwrap();
        assert_eq!(m.coefficients_at(0.5).unwrap().b[(0, 0)], 1.0);
        assert_eq!(m.coefficients_at(1.0).unwrap().b[(0, 0)], 2.0);
    }

    #[test]
    fn out_of_horizon_is_range_error() {
        assert!(matches!(
            m1().coefficients_at(1.2),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            m1().coefficients_at(-0.1),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn asymmetric_rejected_and_tiny_asymmetry_absorbed() {
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.0, -1.0]);
        let m = LqModel::zeros(Dims { d: 2, p: 1 }, 1.0, 1.0).unwrap();
        assert!(matches!(
            m.clone().with_const(CoeffKey::M, bad),
            Err(Error::NotSymmetric { .. })
        ));
        let near = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1 + 1e-14, 0.1, -1.0]);
        let m = m.with_const(CoeffKey::M, near).unwrap();
        let got = m.coefficients_at(0.0).unwrap().m;
        assert_eq!(got[(0, 1)], got[(1, 0)]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = m1()
            .with_const(CoeffKey::R, DMatrix::zeros(2, 1))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn f32_cast_keeps_values() {
        let m: LqModel<f32> = m2().cast();
        let sl = m.coefficients_at(0.5).unwrap();
        assert_eq!(sl.f_o[(0, 0)], 0.5f32);
        assert_eq!(m.terminal_p()[(0, 0)], -0.5f32);
    }
}
