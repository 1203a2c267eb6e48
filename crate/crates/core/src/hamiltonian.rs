//! Hamiltonian, integrated Hamiltonian, its linear functional derivative in
//! the policy, the Iq-function and the exploratory HJB residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fixed_point::{lyapunov_rhs, PolicyValueSolution};
use crate::measure::MeasureSlice;
use crate::model::{CoefficientSlice, LqModel};
use crate::ode::QuadraticValue;
use crate::policy::{GaussianPolicy, Policy, PolicySlice};
use crate::quadrature::DEFAULT_ORDER;
use crate::riccati::{optimal_policy, riccati_rhs, RiccatiSolution};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    RiccatiDerived,
    PolicyEvaluation,
    UserSupplied,
}

/// Derivatives of a value function `J(t, μ)` in the measure argument.
pub trait ValueDerivatives<T: Real>: Sync {
    /// `∂_μ J(t, μ)(x)`.
    fn dj_dmu(&self, t: T, x: &DVector<T>, mean: &DVector<T>) -> DVector<T>;

    /// `∂_x ∂_μ J(t, μ)(x)`.
    fn dx_dmu(&self, t: T, x: &DVector<T>, mean: &DVector<T>) -> DMatrix<T>;

    /// `∂²_μ J(t, μ)(x, x')`.
    fn d2_mu(&self, t: T, x: &DVector<T>, x2: &DVector<T>, mean: &DVector<T>) -> DMatrix<T>;

    /// Whether `∂²_μ J` is constant in `(x, x')`, which lets the double
    /// measure integral factorize through the mean of `σ_{o,h}`.
    fn d2_mu_constant(&self) -> bool {
        false
    }

    /// `∂J/∂t(t, μ)`.
    fn dj_dt(&self, t: T, mu: &MeasureSlice<T>) -> Result<T>;

    fn provenance(&self) -> Provenance {
        Provenance::UserSupplied
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source<T: Real> {
    Optimal,
    Policy(GaussianPolicy<T>),
}

/// Derivative bundle of a quadratic value `Tr(Λ cov) + μ̄ᵀΓμ̄ + ζᵀμ̄ + χ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBundle<T: Real> {
    model: LqModel<T>,
    value: QuadraticValue<T>,
    source: Source<T>,
}

impl<T: Real> QuadraticBundle<T> {
    /// Bundle of the optimal value; `∂J/∂t` comes from the Riccati system.
    pub fn from_riccati(model: &LqModel<T>, solution: &RiccatiSolution<T>) -> Self {
        Self {
            model: model.clone(),
            value: solution.value.clone(),
            source: Source::Optimal,
        }
    }

    /// Bundle of `J(·; π)`; `∂J/∂t` comes from the policy-evaluation system.
    pub fn from_policy_value(
        model: &LqModel<T>,
        value: &PolicyValueSolution<T>,
        policy: &GaussianPolicy<T>,
    ) -> Self {
        Self {
            model: model.clone(),
            value: value.value.clone(),
            source: Source::Policy(policy.clone()),
        }
    }

    pub fn value_fn(&self) -> &QuadraticValue<T> {
        &self.value
    }

    pub fn value(&self, t: T, mu: &MeasureSlice<T>) -> T {
        self.value.value(t, &mu.mean(), &mu.cov())
    }
}

impl<T: Real> ValueDerivatives<T> for QuadraticBundle<T> {
    fn dj_dmu(&self, t: T, x: &DVector<T>, mean: &DVector<T>) -> DVector<T> {
        let n = self.value.at(t);
        let two = lit::<T>(2.0);
        (&n.lambda * (x - mean)) * two + (&n.gamma * mean) * two + n.zeta
    }

    fn dx_dmu(&self, t: T, _x: &DVector<T>, _mean: &DVector<T>) -> DMatrix<T> {
        self.value.at(t).lambda * lit::<T>(2.0)
    }

    fn d2_mu(&self, t: T, _x: &DVector<T>, _x2: &DVector<T>, _mean: &DVector<T>) -> DMatrix<T> {
        let n = self.value.at(t);
        (n.gamma - n.lambda) * lit::<T>(2.0)
    }

    fn d2_mu_constant(&self) -> bool {
        true
    }

    fn dj_dt(&self, t: T, mu: &MeasureSlice<T>) -> Result<T> {
        let y = self.value.at(t);
        let dy = match &self.source {
            Source::Optimal => riccati_rhs(&self.model, t, &y)?,
            Source::Policy(p) => lyapunov_rhs(&self.model, p, t, &y)?,
        };
        Ok(dy.evaluate(&mu.mean(), &mu.cov()))
    }

    fn provenance(&self) -> Provenance {
        match self.source {
            Source::Optimal => Provenance::RiccatiDerived,
            Source::Policy(_) => Provenance::PolicyEvaluation,
        }
    }
}

/// `bᵀp + ½ Tr((σσᵀ + σ_oσ_oᵀ) q) + r` on a coefficient slice.
pub fn hamiltonian_at<T: Real>(
    c: &CoefficientSlice<T>,
    x: &DVector<T>,
    mean: &DVector<T>,
    a: &DVector<T>,
    p_vec: &DVector<T>,
    q_mat: &DMatrix<T>,
) -> T {
    let b = c.drift(x, mean, a);
    let s = c.sigma(x, mean, a);
    let so = c.sigma_o(x, mean, a);
    let diffusion = s.dot(&(q_mat * &s)) + so.dot(&(q_mat * &so));
    b.dot(p_vec) + diffusion * lit::<T>(0.5) + c.running_reward(x, mean, a)
}

/// Hamiltonian of the LQ model at `(t, x, μ̄, a, p, q)`.
pub fn hamiltonian<T: Real>(
    model: &LqModel<T>,
    t: T,
    x: &DVector<T>,
    mean: &DVector<T>,
    a: &DVector<T>,
    p_vec: &DVector<T>,
    q_mat: &DMatrix<T>,
) -> Result<T> {
    Ok(hamiltonian_at(
        &model.coefficients_at(t)?,
        x,
        mean,
        a,
        p_vec,
        q_mat,
    ))
}

/// Quadrature settings for measure and action integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    /// Gauss–Hermite order per axis for Gaussian state measures.
    pub state_order: usize,
    /// Gauss–Hermite order per axis for Gaussian policies.
    pub action_order: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            state_order: DEFAULT_ORDER,
            action_order: DEFAULT_ORDER,
        }
    }
}

impl Quadrature {
    pub fn uniform(order: usize) -> Self {
        Self {
            state_order: order,
            action_order: order,
        }
    }
}

/// The pieces of the integrated Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedHamiltonian<T> {
    /// `∫∫ H h(da|x) μ(dx)`.
    pub hamiltonian: T,
    /// `½ ∫∫ Tr(σ_{o,h}(x) σ_{o,h}(x')ᵀ ∂²_μJ) μ(dx) μ(dx')`.
    pub common_noise: T,
    /// `𝓔(t, μ, h) = ∫ E_h(x) μ(dx)`.
    pub entropy: T,
    pub gamma: T,
}

impl<T: Real> IntegratedHamiltonian<T> {
    /// `𝓗` without the entropy bonus.
    pub fn plain(&self) -> T {
        self.hamiltonian + self.common_noise
    }

    /// `𝓗^γ = 𝓗 + γ𝓔`.
    pub fn regularized(&self) -> T {
        self.plain() + self.gamma * self.entropy
    }
}

/// Evaluates all parts of the integrated Hamiltonian of kernel `h` at
/// `(t, μ)` under the value derivatives in `bundle`.
pub fn integrated_hamiltonian_parts<T: Real, P, B>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    h: &P,
    bundle: &B,
    quad: Quadrature,
) -> Result<IntegratedHamiltonian<T>>
where
    P: Policy<T> + ?Sized,
    B: ValueDerivatives<T> + ?Sized,
{
    let c = model.coefficients_at(t)?;
    let mean = mu.mean();
    let pol = h.slice(t, &mean);
    let nodes = mu.nodes(quad.state_order);

    let mut ham = T::zero();
    let mut ent = T::zero();
    let mut so_means = Vec::with_capacity(nodes.len());
    for (x, wx) in &nodes {
        let p = bundle.dj_dmu(t, x, &mean);
        let q = bundle.dx_dmu(t, x, &mean);
        let mut inner = T::zero();
        for (a, wa) in pol.action_nodes(x, quad.action_order) {
            inner += wa * hamiltonian_at(&c, x, &mean, &a, &p, &q);
        }
        ham += *wx * inner;
        ent += *wx * pol.entropy(x);
        so_means.push(c.sigma_o(x, &mean, &pol.mean_action(x)));
    }

    let half = lit::<T>(0.5);
    let common_noise = if bundle.d2_mu_constant() {
        let d = mean.len();
        let mut s_bar = DVector::zeros(d);
        for ((_, w), s) in nodes.iter().zip(&so_means) {
            s_bar += s * *w;
        }
        let a = bundle.d2_mu(t, &mean, &mean, &mean);
        s_bar.dot(&(a * &s_bar)) * half
    } else {
        let mut acc = T::zero();
        for ((x, w), s) in nodes.iter().zip(&so_means) {
            for ((x2, w2), s2) in nodes.iter().zip(&so_means) {
                let a = bundle.d2_mu(t, x, x2, &mean);
                acc += *w * *w2 * s2.dot(&(a * s));
            }
        }
        acc * half
    };

    let out = IntegratedHamiltonian {
        hamiltonian: ham,
        common_noise,
        entropy: ent,
        gamma: model.gamma(),
    };
    if !out.regularized().is_finite() {
        return Err(Error::Integration(format!(
            "integrated Hamiltonian is not finite at t = {t}"
        )));
    }
    Ok(out)
}

/// `𝓗(t, μ, h; π)`, or `𝓗^γ` when `regularized`.
pub fn integrated_hamiltonian<T: Real, P, B>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    h: &P,
    bundle: &B,
    regularized: bool,
    quad: Quadrature,
) -> Result<T>
where
    P: Policy<T> + ?Sized,
    B: ValueDerivatives<T> + ?Sized,
{
    let parts = integrated_hamiltonian_parts(model, t, mu, h, bundle, quad)?;
    Ok(if regularized {
        parts.regularized()
    } else {
        parts.plain()
    })
}

enum CrossTerm<T: Real> {
    /// `∂²_μJ` constant: the cross term is `vᵀ σ_o(x, a)`.
    Factorized(DVector<T>),
    Pairwise(Vec<(DVector<T>, T, DVector<T>)>),
}

/// `δ𝓗/δh(t, μ, h)(x, a)` prepared for repeated evaluation at one `(t, μ, h)`.
pub struct VariationalDerivative<'b, T: Real, B: ValueDerivatives<T> + ?Sized> {
    t: T,
    mean: DVector<T>,
    coeffs: CoefficientSlice<T>,
    bundle: &'b B,
    cross: CrossTerm<T>,
}

impl<'b, T: Real, B: ValueDerivatives<T> + ?Sized> VariationalDerivative<'b, T, B> {
    pub fn new<P: Policy<T> + ?Sized>(
        model: &LqModel<T>,
        t: T,
        mu: &MeasureSlice<T>,
        h: &P,
        bundle: &'b B,
        state_order: usize,
    ) -> Result<Self> {
        let coeffs = model.coefficients_at(t)?;
        let mean = mu.mean();
        let pol = h.slice(t, &mean);
        let nodes = mu.nodes(state_order);
        let cross = Self::cross_term(&coeffs, &pol, &nodes, bundle, t, &mean);
        Ok(Self {
            t,
            mean,
            coeffs,
            bundle,
            cross,
        })
    }

    /// Same as [`VariationalDerivative::new`] with the state nodes and
    /// weights supplied directly (used by tabular kernels).
    pub(crate) fn with_nodes(
        model: &LqModel<T>,
        t: T,
        mean: DVector<T>,
        pol: &PolicySlice<'_, T>,
        nodes: &[(DVector<T>, T)],
        bundle: &'b B,
    ) -> Result<Self> {
        let coeffs = model.coefficients_at(t)?;
        let cross = Self::cross_term(&coeffs, pol, nodes, bundle, t, &mean);
        Ok(Self {
            t,
            mean,
            coeffs,
            bundle,
            cross,
        })
    }

    fn cross_term(
        c: &CoefficientSlice<T>,
        pol: &PolicySlice<'_, T>,
        nodes: &[(DVector<T>, T)],
        bundle: &B,
        t: T,
        mean: &DVector<T>,
    ) -> CrossTerm<T> {
        let so: Vec<_> = nodes
            .iter()
            .map(|(x, _)| c.sigma_o(x, mean, &pol.mean_action(x)))
            .collect();
        if bundle.d2_mu_constant() {
            let mut s_bar = DVector::zeros(mean.len());
            for ((_, w), s) in nodes.iter().zip(&so) {
                s_bar += s * *w;
            }
            let a = bundle.d2_mu(t, mean, mean, mean);
            CrossTerm::Factorized(a.transpose() * s_bar)
        } else {
            CrossTerm::Pairwise(
                nodes
                    .iter()
                    .zip(so)
                    .map(|((x, w), s)| (x.clone(), *w, s))
                    .collect(),
            )
        }
    }

    pub fn eval(&self, x: &DVector<T>, a: &DVector<T>) -> T {
        let c = &self.coeffs;
        let p = self.bundle.dj_dmu(self.t, x, &self.mean);
        let q = self.bundle.dx_dmu(self.t, x, &self.mean);
        let h = hamiltonian_at(c, x, &self.mean, a, &p, &q);
        let so = c.sigma_o(x, &self.mean, a);
        let cross = match &self.cross {
            CrossTerm::Factorized(v) => v.dot(&so),
            CrossTerm::Pairwise(nodes) => nodes.iter().fold(T::zero(), |acc, (x2, w, s2)| {
                let m = self.bundle.d2_mu(self.t, x, x2, &self.mean);
                acc + *w * s2.dot(&(m * &so))
            }),
        };
        h + cross
    }
}

/// `δ𝓗/δh(t, μ, h)(x, a)`.
#[allow(clippy::too_many_arguments)]
pub fn variational_derivative<T: Real, P, B>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    h: &P,
    bundle: &B,
    x: &DVector<T>,
    a: &DVector<T>,
    state_order: usize,
) -> Result<T>
where
    P: Policy<T> + ?Sized,
    B: ValueDerivatives<T> + ?Sized,
{
    Ok(VariationalDerivative::new(model, t, mu, h, bundle, state_order)?.eval(x, a))
}

/// Iq-function values at `(t, μ, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqValue<T> {
    /// `q^γ = ∂J/∂t − βJ + 𝓗^γ`.
    pub q_gamma: T,
    /// `q⁰ = q^γ − γ𝓔`.
    pub q0: T,
    /// `γ𝓔(t, μ, h)`.
    pub entropy_bonus: T,
}

/// Iq-function of kernel `h` under the value of policy `π` described by
/// `bundle`; `value_at` is `J(t, μ; π)` (it enters through the discount,
/// which is zero here).
pub fn iq_function<T: Real, P, B>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    h: &P,
    bundle: &B,
    value_at: T,
    quad: Quadrature,
) -> Result<IqValue<T>>
where
    P: Policy<T> + ?Sized,
    B: ValueDerivatives<T> + ?Sized,
{
    let parts = integrated_hamiltonian_parts(model, t, mu, h, bundle, quad)?;
    let q_gamma = bundle.dj_dt(t, mu)? - model.discount() * value_at + parts.regularized();
    let bonus = parts.gamma * parts.entropy;
    Ok(IqValue {
        q_gamma,
        q0: q_gamma - bonus,
        entropy_bonus: bonus,
    })
}

/// Residual of the exploratory HJB equation for the quadratic value in
/// `solution` and the Gaussian policy built from it. The time derivative
/// is taken by finite differences of the solution nodes.
pub fn hjb_residual<T: Real>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    solution: &RiccatiSolution<T>,
    quad: Quadrature,
) -> Result<T> {
    let policy = optimal_policy(solution, model)?;
    let bundle = QuadraticBundle::from_riccati(model, solution);
    let dj = solution
        .value
        .finite_difference_derivative(t)?
        .evaluate(&mu.mean(), &mu.cov());
    let h = integrated_hamiltonian(model, t, mu, &policy, &bundle, true, quad)?;
    Ok(dj + h)
}
