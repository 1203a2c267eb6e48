//! Model generators and property checks shared between the core property
//! suite and the acceptance run.
#![allow(dead_code)]

use mfc_core::hamiltonian::{
    hamiltonian, integrated_hamiltonian_parts, QuadraticBundle, Quadrature, VariationalDerivative,
};
use mfc_core::measure::MeasureSlice;
use mfc_core::model::{Coefficient, LqModel};
use mfc_core::policy::{
    gaussian_entropy, ActionGrid, GaussianPolicy, TabularPolicy, NORMALIZATION_TOLERANCE,
};
use mfc_core::quadrature::gauss_legendre_unit_5;
use mfc_core::riccati::{optimal_policy, solve_backward};
use mfc_core::{CoeffKey, Dims};
use nalgebra::{DMatrix, DVector};
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// `dx = a dt`, reward `−½a²`, terminal `−½x²`, `T = γ = 1`.
pub fn m1() -> LqModel<f64> {
    LqModel::zeros(Dims { d: 1, p: 1 }, 1.0, 1.0)
        .and_then(|m| m.with_const(CoeffKey::C, scalar(1.0)))
        .and_then(|m| m.with_const(CoeffKey::R, scalar(-0.5)))
        .and_then(|m| m.with_terminal(scalar(-0.5), scalar(0.0)))
        .expect("valid benchmark model")
}

/// `m1` with the action entering the common noise with weight ½.
pub fn m2() -> LqModel<f64> {
    m1().with_const(CoeffKey::Fo, scalar(0.5))
        .expect("valid benchmark model")
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..=scale))
}

/// `−(AAᵀ + shift·I)`, exactly symmetric.
fn negative_semidefinite(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = matrix(rng, n, n, 0.6);
    let m = -(&a * a.transpose()) - DMatrix::identity(n, n) * shift;
    (&m + m.transpose()) * 0.5
}

/// Seeded random model satisfying condition (H). Odd seeds make `R` and `C`
/// piecewise linear in time.
pub fn random_model(seed: u64, d: usize, p: usize) -> LqModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims { d, p };
    let gamma = rng.gen_range(0.2..2.0);
    let mut model = LqModel::zeros(dims, 1.0, gamma).expect("positive dimensions");
    for key in CoeffKey::ALL {
        let (r, c) = key.shape(dims);
        let value = match key {
            CoeffKey::R => negative_semidefinite(&mut rng, p, 0.3),
            CoeffKey::M | CoeffKey::MBar => negative_semidefinite(&mut rng, d, 0.0),
            _ => matrix(&mut rng, r, c, 0.4),
        };
        let coeff = if seed % 2 == 1 && matches!(key, CoeffKey::R | CoeffKey::C) {
            let later = match key {
                CoeffKey::R => negative_semidefinite(&mut rng, p, 0.3),
                _ => matrix(&mut rng, r, c, 0.4),
            };
            Coefficient::table(vec![0.0, 0.6], vec![value, later]).expect("matching table")
        } else {
            Coefficient::Constant(value)
        };
        model.set(key, coeff).expect("shape from the key");
    }
    let p_term = negative_semidefinite(&mut rng, d, 0.0);
    let p_bar = negative_semidefinite(&mut rng, d, 0.0);
    model
        .with_terminal(p_term, p_bar)
        .expect("symmetric terminal")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

/// The pointwise Hamiltonian is affine in the adjoint pair `(p, q)`.
pub fn hamiltonian_affine_in_adjoints(seed: u64, alpha: f64) -> Result<(), TestCaseError> {
    let (d, p) = (2, 2);
    let model = random_model(seed, d, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let t = rng.gen_range(0.0..=1.0);
    let v = |rng: &mut ChaCha8Rng, n| DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let (x, mean, a) = (v(&mut rng, d), v(&mut rng, d), v(&mut rng, p));
    let (p1, p2) = (v(&mut rng, d), v(&mut rng, d));
    let (q1, q2) = (matrix(&mut rng, d, d, 2.0), matrix(&mut rng, d, d, 2.0));
    let h = |pv: &DVector<f64>, qm: &DMatrix<f64>| {
        hamiltonian(&model, t, &x, &mean, &a, pv, qm).expect("t in range")
    };
    let lhs = h(
        &(&p1 * alpha + &p2 * (1.0 - alpha)),
        &(&q1 * alpha + &q2 * (1.0 - alpha)),
    );
    let (h1, h2) = (h(&p1, &q1), h(&p2, &q2));
    let rhs = alpha * h1 + (1.0 - alpha) * h2;
    let scale = 1.0 + h1.abs() + h2.abs();
    check((lhs - rhs).abs() <= 1e-10 * scale, || {
        format!("H not affine in (p, q): {lhs} vs {rhs}")
    })
}

/// `𝓗(h₁) − 𝓗(h₀) = ∫₀¹ ⟨δ𝓗/δh(h_λ), h₁ − h₀⟩ dλ` along the mixture path,
/// with the λ-integral done by 5-point Gauss–Legendre.
pub fn derivative_consistency(seed: u64, t: f64, m: f64, var: f64) -> Result<(), TestCaseError> {
    let model = random_model(seed, 1, 1);
    let sol = solve_backward(&model, 200).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let star = optimal_policy(&sol, &model).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let bundle = QuadraticBundle::from_riccati(&model, &sol);
    let mu = MeasureSlice::gaussian(DVector::from_element(1, m), scalar(var))
        .expect("positive variance");
    let order = 6;
    let quad = Quadrature::uniform(order);

    let slice0 = star.slice_at(t, &mu.mean());
    let other = star
        .perturbed(0.4, seed.wrapping_add(1))
        .expect("valid perturbation");
    let slice1 = other.slice_at(t, &mu.mean());
    let xs: Vec<_> = mu.nodes(order).into_iter().map(|n| n.0).collect();
    let lo = ActionGrid::covering(&slice0, &xs, 6.0, 3).expect("grid");
    let hi = ActionGrid::covering(&slice1, &xs, 6.0, 3).expect("grid");
    let grid = ActionGrid::uniform_box(lo.lower.inf(&hi.lower), lo.upper.sup(&hi.upper), 65)
        .expect("grid");
    let h0 =
        TabularPolicy::from_gaussian(t, &mu, order, grid.clone(), &slice0).expect("normalized");
    let h1 =
        TabularPolicy::from_gaussian(t, &mu, order, grid.clone(), &slice1).expect("normalized");

    let plain = |h: &TabularPolicy<f64>| {
        integrated_hamiltonian_parts(&model, t, &mu, h, &bundle, quad)
            .expect("finite Hamiltonian")
            .plain()
    };
    let lhs = plain(&h1) - plain(&h0);
    let mut rhs = 0.0;
    for (lambda, w_l) in gauss_legendre_unit_5() {
        let h = h0.mix(&h1, lambda);
        let dh =
            VariationalDerivative::new(&model, t, &mu, &h, &bundle, order).expect("derivative");
        for (g, (x, w_x)) in h0.states.iter().zip(&h0.state_weights).enumerate() {
            for (j, a) in grid.nodes.iter().enumerate() {
                let diff = h1.rho[g][j] - h0.rho[g][j];
                rhs += w_l * w_x * grid.cell_volume * diff * dh.eval(x, a);
            }
        }
    }
    check((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), || {
        format!("mixture-path derivative mismatch: ΔH = {lhs:e}, ∫δH = {rhs:e}")
    })
}

/// Gaussian densities integrate to one and their entropy matches
/// `−∫ρ log ρ`; tabular kernels and their mixtures stay normalized.
pub fn policy_normalization(seed: u64, p: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1;
    let a = matrix(&mut rng, p, p, 1.0);
    let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.2;
    let base = GaussianPolicy::open_loop(1.0, d, sigma.clone())
        .expect("SPD")
        .perturbed(1.0, seed)
        .expect("valid perturbation");
    let mean = DVector::from_element(d, rng.gen_range(-1.0..1.0));
    let x = DVector::from_element(d, rng.gen_range(-2.0..2.0));
    let slice = base.slice_at(0.5, &mean);
    let grid = ActionGrid::covering(
        &slice,
        std::slice::from_ref(&x),
        9.0,
        if p == 1 { 801 } else { 161 },
    )
    .expect("grid");
    let (mut mass, mut ent) = (0.0, 0.0);
    for node in &grid.nodes {
        let rho = slice.density(&x, node);
        mass += rho * grid.cell_volume;
        if rho > 0.0 {
            ent -= rho * rho.ln() * grid.cell_volume;
        }
    }
    check((mass - 1.0).abs() <= 1e-6, || {
        format!("density mass {mass}")
    })?;
    let closed = gaussian_entropy(&slice.sigma);
    check((ent - closed).abs() <= 1e-4, || {
        format!("entropy {ent} vs {closed}")
    })?;

    let mu = MeasureSlice::gaussian(mean.clone(), scalar(rng.gen_range(0.2..2.0)))
        .expect("positive variance");
    let xs: Vec<_> = mu.nodes(5).into_iter().map(|n| n.0).collect();
    let grid = ActionGrid::covering(&slice, &xs, 6.0, if p == 1 { 101 } else { 31 }).expect("grid");
    let tab = TabularPolicy::from_gaussian(0.5, &mu, 5, grid.clone(), &slice).expect("normalized");
    let uni = TabularPolicy::uniform(0.5, &mu, 5, grid.clone()).expect("normalized");
    let mixed = tab.mix(&uni, rng.gen_range(0.0..=1.0));
    for h in [&tab, &uni, &mixed] {
        for row in &h.rho {
            let total: f64 = row.iter().sum::<f64>() * grid.cell_volume;
            check((total - 1.0).abs() <= NORMALIZATION_TOLERANCE, || {
                format!("row mass {total}")
            })?;
            check(row.iter().all(|v| *v >= 0.0), || "negative density".into())?;
        }
    }
    Ok(())
}

/// Exact value of the sampled dynamics with one Euler step per decision
/// interval, for scalar models whose only non-zero coefficients are `B`, `C`,
/// `R` and the terminal weights. The state stays Gaussian, so mean and
/// variance obey a closed recursion; the population mean is taken as exact.
pub fn sampled_value_scalar(
    model: &LqModel<f64>,
    policy: &GaussianPolicy<f64>,
    steps: usize,
    m0: f64,
    v0: f64,
) -> f64 {
    let h = model.horizon() / steps as f64;
    let gamma = model.gamma();
    let (mut m, mut v, mut total) = (m0, v0, 0.0);
    for k in 0..steps {
        let t = k as f64 * h;
        let c = model.coefficients_at(t).expect("t in range");
        let (b, cc, r) = (c.b[(0, 0)], c.c[(0, 0)], c.r[(0, 0)]);
        let blk = policy.blocks_at(t);
        let (gain, sigma) = (blk.k[(0, 0)], blk.sigma[(0, 0)]);
        let a_bar = blk.k_bar[(0, 0)] * m + blk.k0[0];
        let second_moment = gain * gain * v + a_bar * a_bar + sigma;
        total += h * (r * second_moment + gamma * gaussian_entropy(&blk.sigma));
        let slope = 1.0 + h * (b + cc * gain);
        v = slope * slope * v + h * h * cc * cc * sigma;
        m += h * (b * m + cc * a_bar);
    }
    let (p, pb) = (model.terminal_p()[(0, 0)], model.terminal_p_bar()[(0, 0)]);
    total + p * (v + m * m) + pb * m * m
}
