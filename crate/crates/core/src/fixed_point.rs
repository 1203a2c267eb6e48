//! Gibbs map and the two-layer fixed point: inner iteration over tabular
//! kernels, policy evaluation of Gaussian policies and the outer
//! improvement loop.

use serde::Serialize;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    integrated_hamiltonian, QuadraticBundle, Quadrature, ValueDerivatives, VariationalDerivative,
};
use crate::linalg::{quad_form, symmetrize, trace_prod};
use crate::measure::MeasureSlice;
use crate::model::LqModel;
use crate::ode::{integrate_backward, QuadraticValue, ValueCoefficients};
use crate::policy::{gaussian_entropy, ActionGrid, GaussianPolicy, PolicySlice, TabularPolicy};
use crate::riccati::{blocks_from_slice, policy_blocks, terminal_values, DEFAULT_STEPS};
use crate::scalar::{lit, to_f64, Real};

/// One iteration of an inner or outer loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Sup-norm density change (inner) or largest block change (outer).
    pub change: f64,
    /// `𝓗^γ` of the current kernel (inner) or `J(0, μ_ref; π^n)` (outer).
    pub objective: f64,
    pub damping: f64,
    /// Outer only: changes of `(Λ, Γ, ζ, χ)` between successive evaluations.
    pub block_deltas: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointTrace {
    pub records: Vec<TraceRecord>,
    pub tolerance: f64,
    pub converged: bool,
    /// Inner: number of damped updates applied. Outer: number of
    /// evaluate-and-improve steps.
    pub iterations: usize,
}

impl FixedPointTrace {
    fn new(tolerance: f64) -> Self {
        Self {
            records: Vec::new(),
            tolerance,
            converged: false,
            iterations: 0,
        }
    }

    /// Whether the objective never dropped by more than `slack`.
    pub fn objective_non_decreasing(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].objective >= w[0].objective - slack)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iteration",
            "change",
            "objective",
            "damping",
            "d_lambda",
            "d_gamma",
            "d_zeta",
            "d_chi",
        ])?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                format!("{:e}", r.change),
                format!("{:e}", r.objective),
                format!("{}", r.damping),
            ];
            match r.block_deltas {
                Some(d) => row.extend(d.iter().map(|v| format!("{v:e}"))),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One application of the Gibbs map: `ρ′ ∝ exp(δ𝓗/δh(x, a) / γ)` per
/// state node of `h`, normalized over the action grid.
pub fn gibbs_map<T: Real, B: ValueDerivatives<T> + ?Sized>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    h: &TabularPolicy<T>,
    bundle: &B,
) -> Result<TabularPolicy<T>> {
    let nodes: Vec<(DVector<T>, T)> = h
        .states
        .iter()
        .cloned()
        .zip(h.state_weights.iter().copied())
        .collect();
    let vd = VariationalDerivative::with_nodes(
        model,
        t,
        mu.mean(),
        &PolicySlice::Tabular(h),
        &nodes,
        bundle,
    )?;
    let inv_gamma = T::one() / model.gamma();
    let rows: Vec<Result<Vec<T>>> = h
        .states
        .par_iter()
        .enumerate()
        .map(|(g, x)| {
            let expo: Vec<T> = h
                .grid
                .nodes
                .iter()
                .map(|a| vd.eval(x, a) * inv_gamma)
                .collect();
            let top = expo
                .iter()
                .copied()
                .filter(|e| e.is_finite())
                .fold(None, |m: Option<T>, e| Some(m.map_or(e, |m| m.max(e))))
                .ok_or(Error::DegenerateMap { node: g })?;
            let row: Vec<T> = expo
                .iter()
                .map(|e| {
                    if e.is_finite() {
                        (*e - top).exp()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            Ok(row)
        })
        .collect();
    let rho = rows.into_iter().collect::<Result<Vec<_>>>()?;
    TabularPolicy::from_unnormalized(h.t, mu, nodes, h.grid.clone(), rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    /// Damping `θ ∈ (0, 1]`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub quadrature: Quadrature,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 500,
            quadrature: Quadrature::default(),
        }
    }
}

/// Damped iteration `h ← (1−θ)h + θΦ(h)` until `sup |Φ(h) − h| ≤ tol`.
///
/// Non-convergence is reported through the trace, not as an error.
pub fn inner_fixed_point<T: Real, B: ValueDerivatives<T> + ?Sized>(
    model: &LqModel<T>,
    t: T,
    mu: &MeasureSlice<T>,
    bundle: &B,
    h0: TabularPolicy<T>,
    cfg: InnerConfig,
) -> Result<(TabularPolicy<T>, FixedPointTrace)> {
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::Config(format!(
            "damping must lie in (0, 1], got {}",
            cfg.damping
        )));
    }
    let theta = lit::<T>(cfg.damping);
    let mut trace = FixedPointTrace::new(cfg.tol);
    let mut h = h0;
    for k in 0..=cfg.max_iter {
        let phi = gibbs_map(model, t, mu, &h, bundle)?;
        let change = to_f64(phi.sup_diff(&h));
        let objective = integrated_hamiltonian(model, t, mu, &h, bundle, true, cfg.quadrature)?;
        trace.records.push(TraceRecord {
            iteration: k,
            change,
            objective: to_f64(objective),
            damping: cfg.damping,
            block_deltas: None,
        });
        if change <= cfg.tol {
            trace.converged = true;
            break;
        }
        if k == cfg.max_iter {
            log::warn!(
                "inner fixed point not converged after {} iterations",
                cfg.max_iter
            );
            break;
        }
        h = h.mix(&phi, theta);
        trace.iterations += 1;
    }
    Ok((h, trace))
}

/// Quadratic value coefficients of `J(·, ·; π)` for a fixed Gaussian policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueSolution<T: Real> {
    pub value: QuadraticValue<T>,
}

impl<T: Real> PolicyValueSolution<T> {
    pub fn times(&self) -> &[T] {
        &self.value.times
    }

    pub fn nodes(&self) -> &[ValueCoefficients<T>] {
        &self.value.nodes
    }

    /// `J(t, μ; π)` for a measure with the given mean and covariance.
    pub fn value_at(&self, t: T, mu: &MeasureSlice<T>) -> T {
        self.value.value(t, &mu.mean(), &mu.cov())
    }
}

/// Time derivative of the coefficients of `J(·; π)` for Gaussian `π`.
pub fn lyapunov_rhs<T: Real>(
    model: &LqModel<T>,
    policy: &GaussianPolicy<T>,
    t: T,
    y: &ValueCoefficients<T>,
) -> Result<ValueCoefficients<T>> {
    let c = model.coefficients_at(t)?;
    let b = policy.blocks_at(t);
    let ValueCoefficients {
        lambda: l,
        gamma: g,
        zeta,
        ..
    } = y;
    let two = lit::<T>(2.0);

    let a1 = &c.b + &c.c * &b.k;
    let a2 = &c.b + &c.b_bar + &c.c * &b.k_bar;
    let cb = &c.b0 + &c.c * &b.k0;
    let e1 = &c.d + &c.f * &b.k;
    let e2 = &c.d + &c.d_bar + &c.f * &b.k_bar;
    let e0 = &c.theta + &c.f * &b.k0;
    let g1 = &c.d_o + &c.f_o * &b.k;
    let g2 = &c.d_o + &c.d_bar_o + &c.f_o * &b.k_bar;
    let g0 = &c.theta_o + &c.f_o * &b.k0;

    let d_lambda = a1.transpose() * l
        + l * &a1
        + e1.transpose() * l * &e1
        + g1.transpose() * l * &g1
        + &c.m
        + b.k.transpose() * &c.r * &b.k;
    let d_gamma = a2.transpose() * g
        + g * &a2
        + e2.transpose() * l * &e2
        + g2.transpose() * g * &g2
        + &c.m
        + &c.m_bar
        + b.k_bar.transpose() * &c.r * &b.k_bar;
    let d_zeta = a2.transpose() * zeta
        + (g * &cb) * two
        + (e2.transpose() * l * &e0) * two
        + (g2.transpose() * g * &g0) * two
        + &c.o
        + (b.k_bar.transpose() * &c.r * &b.k0) * two;
    let action_cov = c.f.transpose() * l * &c.f + c.f_o.transpose() * l * &c.f_o + &c.r;
    let d_chi = cb.dot(zeta)
        + quad_form(l, &e0)
        + quad_form(g, &g0)
        + quad_form(&c.r, &b.k0)
        + trace_prod(&action_cov, &b.sigma)
        + model.gamma() * gaussian_entropy(&b.sigma);

    Ok(ValueCoefficients {
        lambda: -symmetrize(&d_lambda),
        gamma: -symmetrize(&d_gamma),
        zeta: -d_zeta,
        chi: -d_chi,
    })
}

/// Integrates the policy-evaluation system backward from the terminal
/// values `(P, P + P̄, 0, 0)`.
pub fn evaluate_policy<T: Real>(
    model: &LqModel<T>,
    policy: &GaussianPolicy<T>,
    steps: usize,
) -> Result<PolicyValueSolution<T>> {
    if policy.state_dim() != model.dims().d || policy.action_dim() != model.dims().p {
        return Err(Error::Dimension {
            key: "policy".into(),
            expected: format!("{}x{}", model.dims().p, model.dims().d),
            found: format!("{}x{}", policy.action_dim(), policy.state_dim()),
        });
    }
    let horizon = model.horizon();
    let value = integrate_backward(horizon, steps, terminal_values(model), |t, y| {
        lyapunov_rhs(model, policy, t.max(T::zero()).min(horizon), y)
    })?;
    Ok(PolicyValueSolution { value })
}

/// Improved Gaussian policy from the value of the current one:
/// `K′ = −U⁻¹S`, `K̄′ = −V⁻¹Z`, `K₀′ = −½V⁻¹Y`, `Σ′ = −(γ/2)U⁻¹` with the
/// blocks built from `(Λ^π, Γ^π, ζ^π)`.
pub fn improve<T: Real>(
    model: &LqModel<T>,
    value: &PolicyValueSolution<T>,
) -> Result<GaussianPolicy<T>> {
    let nodes = value
        .times()
        .iter()
        .zip(value.nodes())
        .map(|(&t, n)| {
            let c = model.coefficients_at(t)?;
            let b = blocks_from_slice(&c, &n.lambda, &n.gamma, &n.zeta);
            policy_blocks(&b, model.gamma(), t).map_err(|e| match e {
                Error::Definiteness { .. } | Error::Singular { .. } => Error::Integration(format!(
                    "{e}; consider damping the outer step or checking condition (H)"
                )),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianPolicy::from_nodes(value.times().to_vec(), nodes)
}

/// Evaluates `π` and returns the improved policy together with `J(·; π)`.
pub fn outer_iterate<T: Real>(
    model: &LqModel<T>,
    policy: &GaussianPolicy<T>,
    steps: usize,
) -> Result<(GaussianPolicy<T>, PolicyValueSolution<T>)> {
    let value = evaluate_policy(model, policy, steps)?;
    let next = improve(model, &value)?;
    Ok((next, value))
}

/// Runs the tabular inner iteration at `(t, μ)` under the value of `π` and
/// returns the sup-norm density error against the improved Gaussian policy,
/// together with the inner trace.
#[allow(clippy::too_many_arguments)]
pub fn spot_check<T: Real>(
    model: &LqModel<T>,
    policy: &GaussianPolicy<T>,
    value: &PolicyValueSolution<T>,
    improved: &GaussianPolicy<T>,
    t: T,
    mu: &MeasureSlice<T>,
    cells: usize,
    cfg: InnerConfig,
) -> Result<(T, FixedPointTrace)> {
    let bundle = QuadraticBundle::from_policy_value(model, value, policy);
    let target = improved.slice_at(t, &mu.mean());
    let states = mu.nodes(cfg.quadrature.state_order);
    let xs: Vec<_> = states.iter().map(|s| s.0.clone()).collect();
    let grid = ActionGrid::covering(&target, &xs, lit(6.0), cells)?;
    let h0 = TabularPolicy::uniform(t, mu, cfg.quadrature.state_order, grid)?;
    let (h, trace) = inner_fixed_point(model, t, mu, &bundle, h0, cfg)?;
    Ok((h.sup_error_against(&target), trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig<T: Real> {
    pub tol: f64,
    pub max_outer: usize,
    pub steps: usize,
    /// Reference measure for the reported value sequence.
    pub mu_ref: MeasureSlice<T>,
}

impl<T: Real> OuterConfig<T> {
    pub fn new(d: usize) -> Self {
        Self {
            tol: 1e-10,
            max_outer: 50,
            steps: DEFAULT_STEPS,
            mu_ref: MeasureSlice::standard(d),
        }
    }
}

/// Repeats evaluate-and-improve until successive policies and values differ
/// by at most `tol`. The trace records `J(0, μ_ref; π^n)` per iteration.
pub fn two_layer_solve<T: Real>(
    model: &LqModel<T>,
    pi0: &GaussianPolicy<T>,
    cfg: &OuterConfig<T>,
) -> Result<(GaussianPolicy<T>, FixedPointTrace)> {
    let mut trace = FixedPointTrace::new(cfg.tol);
    let mut pi = pi0.clone();
    let mut prev: Option<PolicyValueSolution<T>> = None;
    for n in 0..cfg.max_outer {
        let (next, value) = outer_iterate(model, &pi, cfg.steps)?;
        let objective = to_f64(value.value_at(T::zero(), &cfg.mu_ref));
        let deltas = prev.as_ref().map(|p| block_deltas(p, &value));
        let policy_change = to_f64(next.max_block_diff(&pi));
        let value_change =
            deltas.map_or(f64::INFINITY, |d| d.iter().fold(0.0f64, |a, b| a.max(*b)));
        let change = policy_change.max(value_change);
        trace.records.push(TraceRecord {
            iteration: n,
            change,
            objective,
            damping: 1.0,
            block_deltas: deltas,
        });
        trace.iterations = n + 1;
        pi = next;
        prev = Some(value);
        if change <= cfg.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!(
            "outer iteration not converged after {} steps",
            cfg.max_outer
        );
    }
    Ok((pi, trace))
}

fn block_deltas<T: Real>(a: &PolicyValueSolution<T>, b: &PolicyValueSolution<T>) -> [f64; 4] {
    let mut d = [0.0f64; 4];
    for (x, y) in a.nodes().iter().zip(b.nodes()) {
        d[0] = d[0].max(to_f64((&x.lambda - &y.lambda).amax()));
        d[1] = d[1].max(to_f64((&x.gamma - &y.gamma).amax()));
        d[2] = d[2].max(to_f64((&x.zeta - &y.zeta).amax()));
        d[3] = d[3].max(to_f64((x.chi - y.chi).abs()));
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{m1, m2};
    use crate::riccati::{optimal_policy, solve_backward};
    use nalgebra::DMatrix;

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn open_loop_value_on_m1() {
        let model = m1();
        let pi = GaussianPolicy::open_loop(1.0, 1, s(1.0)).unwrap();
        let v = evaluate_policy(&model, &pi, 100).unwrap();
        let n0 = &v.nodes()[0];
        assert!((n0.lambda[(0, 0)] + 0.5).abs() < 1e-14);
        assert!((n0.gamma[(0, 0)] + 0.5).abs() < 1e-14);
        assert!((n0.chi - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn optimal_policy_evaluates_to_riccati() {
        for model in [m1(), m2()] {
            let sol = solve_backward(&model, 500).unwrap();
            let pi = optimal_policy(&sol, &model).unwrap();
            let v = evaluate_policy(&model, &pi, 500).unwrap();
            for (a, b) in v.nodes().iter().zip(sol.nodes()) {
                assert!(a.max_abs_diff(b) < 1e-8);
            }
        }
    }

    #[test]
    fn improvement_of_optimum_is_optimum() {
        let model = m2();
        let sol = solve_backward(&model, 200).unwrap();
        let pi = optimal_policy(&sol, &model).unwrap();
        let (next, _) = outer_iterate(&model, &pi, 200).unwrap();
        assert!(next.max_block_diff(&pi) < 1e-8);
    }

    #[test]
    fn fo_zero_inner_converges_in_one_step() {
        let model = m1();
        let sol = solve_backward(&model, 200).unwrap();
        let pi = optimal_policy(&sol, &model).unwrap();
        let bundle = QuadraticBundle::from_riccati(&model, &sol);
        let mu = MeasureSlice::standard(1);
        let cfg = InnerConfig {
            damping: 1.0,
            quadrature: Quadrature::uniform(8),
            ..InnerConfig::default()
        };
        let target = pi.slice_at(0.0, &mu.mean());
        let xs: Vec<_> = mu.nodes(8).into_iter().map(|n| n.0).collect();
        let grid = ActionGrid::covering(&target, &xs, 6.0, 129).unwrap();
        let h0 = TabularPolicy::uniform(0.0, &mu, 8, grid).unwrap();
        let (h, trace) = inner_fixed_point(&model, 0.0, &mu, &bundle, h0, cfg).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations, 1);
        assert!(h.sup_error_against(&target) < 2e-2);
    }

    #[test]
    fn two_layer_reaches_optimum() {
        let model = m1();
        let sol = solve_backward(&model, 200).unwrap();
        let star = optimal_policy(&sol, &model).unwrap();
        let pi0 = GaussianPolicy::open_loop(1.0, 1, s(1.0)).unwrap();
        let cfg = OuterConfig {
            steps: 200,
            ..OuterConfig::new(1)
        };
        let (pi, trace) = two_layer_solve(&model, &pi0, &cfg).unwrap();
        assert!(trace.converged);
        assert!(trace.objective_non_decreasing(1e-9));
        assert!(pi.max_block_diff(&star) < 1e-6);
    }
}
