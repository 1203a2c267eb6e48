//! Riccati system of the LQ problem and the optimal Gaussian policy.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, inverse_neg_def, quad_form, symmetrize};
use crate::model::{CoefficientSlice, LqModel};
use crate::ode::{integrate_backward, QuadraticValue, ValueCoefficients};
use crate::policy::{GaussianBlocks, GaussianPolicy};
use crate::scalar::{lit, to_f64, Real};

/// Default number of RK4 steps.
pub const DEFAULT_STEPS: usize = 1000;

/// The blocks `U, V, S, Z, Y` built from `(Λ, Γ, ζ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryBlocks<T: Real> {
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
    pub s: DMatrix<T>,
    pub z: DMatrix<T>,
    pub y: DVector<T>,
}

/// Blocks from a coefficient slice; shapes are assumed consistent.
pub fn blocks_from_slice<T: Real>(
    c: &CoefficientSlice<T>,
    lambda: &DMatrix<T>,
    gamma: &DMatrix<T>,
    zeta: &DVector<T>,
) -> AuxiliaryBlocks<T> {
    let two = lit::<T>(2.0);
    let ft = c.f.transpose();
    let fot = c.f_o.transpose();
    let ft_l = &ft * lambda;
    let fot_l = &fot * lambda;
    let fot_g = &fot * gamma;
    let common = &ft_l * &c.f + &c.r;
    let u = symmetrize(&(&common + &fot_l * &c.f_o));
    let v = symmetrize(&(&common + &fot_g * &c.f_o));
    let s = c.c.transpose() * lambda + &ft_l * &c.d + &fot_l * &c.d_o;
    let z = c.c.transpose() * gamma + &ft_l * (&c.d + &c.d_bar) + &fot_g * (&c.d_o + &c.d_bar_o);
    let y = c.c.transpose() * zeta + (&ft_l * &c.theta) * two + (&fot_g * &c.theta_o) * two;
    AuxiliaryBlocks { u, v, s, z, y }
}

/// Blocks at time `t` of `model`.
pub fn auxiliary_blocks<T: Real>(
    model: &LqModel<T>,
    t: T,
    lambda: &DMatrix<T>,
    gamma: &DMatrix<T>,
    zeta: &DVector<T>,
) -> Result<AuxiliaryBlocks<T>> {
    let d = model.dims().d;
    for (name, shape) in [("Lambda", lambda.shape()), ("Gamma", gamma.shape())] {
        if shape != (d, d) {
            return Err(Error::Dimension {
                key: name.into(),
                expected: format!("{d}x{d}"),
                found: format!("{}x{}", shape.0, shape.1),
            });
        }
    }
    if zeta.len() != d {
        return Err(Error::Dimension {
            key: "zeta".into(),
            expected: format!("{d}"),
            found: format!("{}", zeta.len()),
        });
    }
    Ok(blocks_from_slice(
        &model.coefficients_at(t)?,
        lambda,
        gamma,
        zeta,
    ))
}

/// Right-hand side of the Riccati system at `(t, Λ, Γ, ζ, χ)`.
pub fn riccati_rhs<T: Real>(
    model: &LqModel<T>,
    t: T,
    y: &ValueCoefficients<T>,
) -> Result<ValueCoefficients<T>> {
    let c = model.coefficients_at(t)?;
    rhs_from_slice(&c, model.gamma(), y)
}

fn rhs_from_slice<T: Real>(
    c: &CoefficientSlice<T>,
    temp: T,
    y: &ValueCoefficients<T>,
) -> Result<ValueCoefficients<T>> {
    let ValueCoefficients {
        lambda,
        gamma,
        zeta,
        ..
    } = y;
    let two = lit::<T>(2.0);
    let blk = blocks_from_slice(c, lambda, gamma, zeta);
    let (u_inv, _) = inverse_neg_def(&blk.u, "U", c.t)?;
    let (v_inv, _) = inverse_neg_def(&blk.v, "V", c.t)?;

    let bb = &c.b + &c.b_bar;
    let dd = &c.d + &c.d_bar;
    let ddo = &c.d_o + &c.d_bar_o;

    let d_lambda = &c.m
        + c.d.transpose() * lambda * &c.d
        + c.d_o.transpose() * lambda * &c.d_o
        + c.b.transpose() * lambda
        + lambda * &c.b
        - blk.s.transpose() * &u_inv * &blk.s;
    let d_gamma = &c.m
        + &c.m_bar
        + dd.transpose() * lambda * &dd
        + ddo.transpose() * gamma * &ddo
        + bb.transpose() * gamma
        + gamma * &bb
        - blk.z.transpose() * &v_inv * &blk.z;
    let d_zeta = bb.transpose() * zeta
        + (gamma * &c.b0) * two
        + (dd.transpose() * lambda * &c.theta) * two
        + (ddo.transpose() * gamma * &c.theta_o) * two
        - blk.z.transpose() * (&v_inv * &blk.y)
        + &c.o;

    let p = blk.u.nrows();
    // (−γπ)^p det(U⁻¹) = (γπ)^p det(−U⁻¹), positive when U ≺ 0.
    let neg_u_inv = -&u_inv;
    let det = neg_u_inv.determinant();
    if !(det > T::zero()) {
        return Err(Error::Definiteness {
            what: "-U (entropy term)",
            t: to_f64(c.t),
        });
    }
    let log_arg = lit::<T>(p as f64) * (temp * T::pi()).ln() + det.ln();
    let d_chi = quad_form(lambda, &c.theta) + quad_form(gamma, &c.theta_o) + c.b0.dot(zeta)
        - quad_form(&v_inv, &blk.y) * lit::<T>(0.25)
        + temp * lit::<T>(0.5) * log_arg;

    Ok(ValueCoefficients {
        lambda: -symmetrize(&d_lambda),
        gamma: -symmetrize(&d_gamma),
        zeta: -d_zeta,
        chi: -d_chi,
    })
}

/// Riccati solution on a uniform grid together with the blocks at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    pub value: QuadraticValue<T>,
    pub blocks: Vec<AuxiliaryBlocks<T>>,
    pub method: &'static str,
}

impl<T: Real> RiccatiSolution<T> {
    /// Wraps externally supplied node values, recomputing the blocks.
    pub fn from_value(model: &LqModel<T>, value: QuadraticValue<T>) -> Result<Self> {
        let blocks = value
            .times
            .iter()
            .zip(&value.nodes)
            .map(|(&t, n)| auxiliary_blocks(model, t, &n.lambda, &n.gamma, &n.zeta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            value,
            blocks,
            method: "rk4",
        })
    }

    pub fn times(&self) -> &[T] {
        &self.value.times
    }

    pub fn nodes(&self) -> &[ValueCoefficients<T>] {
        &self.value.nodes
    }

    pub fn steps(&self) -> usize {
        self.value.steps()
    }

    pub fn at(&self, t: T) -> ValueCoefficients<T> {
        self.value.at(t)
    }

    /// Writes one row per node: `t`, Λ, Γ, ζ, χ and the flattened blocks.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n0 = &self.value.nodes[0];
        let b0 = &self.blocks[0];
        let mut header = vec!["t".to_string()];
        header.extend(matrix_headers("Lambda", &n0.lambda));
        header.extend(matrix_headers("Gamma", &n0.gamma));
        header.extend((0..n0.zeta.len()).map(|i| format!("zeta[{i}]")));
        header.push("chi".into());
        header.extend(matrix_headers("U", &b0.u));
        header.extend(matrix_headers("V", &b0.v));
        header.extend(matrix_headers("S", &b0.s));
        header.extend(matrix_headers("Z", &b0.z));
        header.extend((0..b0.y.len()).map(|i| format!("Y[{i}]")));
        out.write_record(&header)?;
        for ((t, n), b) in self
            .value
            .times
            .iter()
            .zip(&self.value.nodes)
            .zip(&self.blocks)
        {
            let mut row = vec![fmt(*t)];
            row.extend(matrix_cells(&n.lambda));
            row.extend(matrix_cells(&n.gamma));
            row.extend(n.zeta.iter().map(|v| fmt(*v)));
            row.push(fmt(n.chi));
            for m in [&b.u, &b.v, &b.s, &b.z] {
                row.extend(matrix_cells(m));
            }
            row.extend(b.y.iter().map(|v| fmt(*v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt<T: Real>(v: T) -> String {
    format!("{:e}", to_f64(v))
}

pub(crate) fn matrix_headers<T: Real>(name: &str, m: &DMatrix<T>) -> Vec<String> {
    let mut h = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.push(format!("{name}[{i}][{j}]"));
        }
    }
    h
}

pub(crate) fn matrix_cells<T: Real>(m: &DMatrix<T>) -> Vec<String> {
    let mut h = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.push(fmt(m[(i, j)]));
        }
    }
    h
}

/// Terminal values `(P, P + P̄, 0, 0)`.
pub fn terminal_values<T: Real>(model: &LqModel<T>) -> ValueCoefficients<T> {
    let d = model.dims().d;
    ValueCoefficients {
        lambda: model.terminal_p().clone(),
        gamma: model.terminal_p() + model.terminal_p_bar(),
        zeta: DVector::zeros(d),
        chi: T::zero(),
    }
}

/// Integrates the Riccati system backward from `T` with `steps` RK4 steps.
///
/// Condition (H) is not checked here; see [`solve_checked`].
pub fn solve_backward<T: Real>(model: &LqModel<T>, steps: usize) -> Result<RiccatiSolution<T>> {
    let horizon = model.horizon();
    let temp = model.gamma();
    let value = integrate_backward(horizon, steps, terminal_values(model), |t, y| {
        rhs_from_slice(
            &model.slice_unchecked(t.max(T::zero()).min(horizon)),
            temp,
            y,
        )
    })?;
    RiccatiSolution::from_value(model, value)
}

/// Checks condition (H) with margin `delta` before solving. With `force`
/// a violation is logged and the solve proceeds.
pub fn solve_checked<T: Real>(
    model: &LqModel<T>,
    steps: usize,
    delta: T,
    force: bool,
) -> Result<RiccatiSolution<T>> {
    let report = model.validate_condition_h(delta, crate::model::DEFAULT_CONDITION_SAMPLES)?;
    if !report.holds {
        let names: Vec<_> = report.violations().iter().map(|c| c.name.clone()).collect();
        if !force {
            return Err(Error::ConditionH(names.join(", ")));
        }
        log::warn!(
            "condition (H) violated ({}); proceeding as requested",
            names.join(", ")
        );
    }
    solve_backward(model, steps)
}

/// Policy blocks `K, K̄, K₀, Σ` from auxiliary blocks.
pub fn policy_blocks<T: Real>(b: &AuxiliaryBlocks<T>, temp: T, t: T) -> Result<GaussianBlocks<T>> {
    let (u_inv, u_nd) = inverse_neg_def(&b.u, "U", t)?;
    if !u_nd {
        return Err(Error::Definiteness {
            what: "Sigma",
            t: to_f64(t),
        });
    }
    let vk =
        b.v.clone()
            .lu()
            .solve(&(-&b.z))
            .ok_or_else(|| Error::Singular {
                block: "V",
                t: to_f64(t),
                eigenvalues: eigenvalues(&b.v).into_iter().map(to_f64).collect(),
            })?;
    let (v_inv, _) = inverse_neg_def(&b.v, "V", t)?;
    let k0 = (&v_inv * &b.y) * lit::<T>(-0.5);
    Ok(GaussianBlocks {
        k: -(&u_inv * &b.s),
        k_bar: vk,
        k0,
        sigma: symmetrize(&(&u_inv * (-temp * lit::<T>(0.5)))),
    })
}

/// Optimal Gaussian policy `N(K(x−μ̄) + K̄μ̄ + K₀, Σ)` at every solution node.
///
/// The mean-field gain is checked against the fixed-point form
/// `(U + Foᵀ(Γ−Λ)Fo) K̄ = −Z`.
pub fn optimal_policy<T: Real>(
    solution: &RiccatiSolution<T>,
    model: &LqModel<T>,
) -> Result<GaussianPolicy<T>> {
    let temp = model.gamma();
    let mut nodes = Vec::with_capacity(solution.blocks.len());
    for ((&t, b), n) in solution
        .times()
        .iter()
        .zip(&solution.blocks)
        .zip(solution.nodes())
    {
        let blk = policy_blocks(b, temp, t)?;
        let res = kbar_identity_residual(model, t, n, b, &blk.k_bar)?;
        let scale = b.z.amax().max(b.v.amax()).max(T::one());
        if res > lit::<T>(1e-9) * scale {
            return Err(Error::InvariantViolation(format!(
                "mean-field gain identity fails at t = {} (residual {:e})",
                to_f64(t),
                to_f64(res)
            )));
        }
        nodes.push(blk);
    }
    GaussianPolicy::from_nodes(solution.times().to_vec(), nodes)
}

/// `‖(U + Foᵀ(Γ−Λ)Fo) K̄ + Z‖_max` at one node.
pub fn kbar_identity_residual<T: Real>(
    model: &LqModel<T>,
    t: T,
    n: &ValueCoefficients<T>,
    b: &AuxiliaryBlocks<T>,
    k_bar: &DMatrix<T>,
) -> Result<T> {
    let c = model.coefficients_at(t)?;
    let w = c.f_o.transpose() * (&n.gamma - &n.lambda) * &c.f_o;
    Ok(((&b.u + w) * k_bar + &b.z).amax())
}

/// Largest `‖V K̄ + Z‖_max` over the nodes of a policy built from `solution`.
pub fn max_gain_residual<T: Real>(solution: &RiccatiSolution<T>, policy: &GaussianPolicy<T>) -> T {
    solution
        .blocks
        .iter()
        .zip(policy.nodes())
        .map(|(b, p)| (&b.v * &p.k_bar + &b.z).amax())
        .fold(T::zero(), |a, b| a.max(b))
}
