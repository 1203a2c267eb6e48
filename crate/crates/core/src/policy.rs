//! Feedback policies: closed-form Gaussian and tabular grid densities.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{factor_psd, is_finite_mat, quad_form, sqrt_psd, symmetrize, trace_prod};
use crate::measure::MeasureSlice;
use crate::model::{CoefficientSlice, LqModel};
use crate::ode::locate;
use crate::quadrature::tensor_hermite;
use crate::riccati::{fmt, matrix_cells, matrix_headers};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Tolerance on `w · Σ_j ρ[g][j] = 1` for tabular kernels.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Gaussian entropy `½ log((2πe)^p det Σ)`.
pub fn gaussian_entropy<T: Real>(sigma: &DMatrix<T>) -> T {
    let p = lit::<T>(sigma.nrows() as f64);
    let two_pi_e = lit::<T>(2.0) * T::pi() * T::one().exp();
    (p * two_pi_e.ln() + sigma.determinant().ln()) * lit::<T>(0.5)
}

/// Gains and covariance of a Gaussian policy at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlocks<T: Real> {
    pub k: DMatrix<T>,
    pub k_bar: DMatrix<T>,
    pub k0: DVector<T>,
    pub sigma: DMatrix<T>,
}

impl<T: Real> GaussianBlocks<T> {
    /// Action mean `K(x−μ̄) + K̄μ̄ + K₀`.
    pub fn mean(&self, x: &DVector<T>, mean: &DVector<T>) -> DVector<T> {
        &self.k * (x - mean) + &self.k_bar * mean + &self.k0
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (&self.k - &o.k)
            .amax()
            .max((&self.k_bar - &o.k_bar).amax())
            .max((&self.k0 - &o.k0).amax())
            .max((&self.sigma - &o.sigma).amax())
    }

    fn lerp(&self, o: &Self, w: T) -> Self {
        let a = T::one() - w;
        GaussianBlocks {
            k: &self.k * a + &o.k * w,
            k_bar: &self.k_bar * a + &o.k_bar * w,
            k0: &self.k0 * a + &o.k0 * w,
            sigma: &self.sigma * a + &o.sigma * w,
        }
    }
}

/// Gaussian feedback policy with blocks on a time grid, linearly
/// interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T: Real> {
    times: Vec<T>,
    nodes: Vec<GaussianBlocks<T>>,
}

impl<T: Real> GaussianPolicy<T> {
    pub fn from_nodes(times: Vec<T>, nodes: Vec<GaussianBlocks<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != nodes.len() {
            return Err(Error::Config(
                "policy needs one block set per time node".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("policy times must be increasing".into()));
        }
        let (p, d) = nodes[0].k.shape();
        for (t, b) in times.iter().zip(&nodes) {
            let shapes_ok = b.k.shape() == (p, d)
                && b.k_bar.shape() == (p, d)
                && b.k0.len() == p
                && b.sigma.shape() == (p, p);
            if !shapes_ok {
                return Err(Error::Dimension {
                    key: "policy blocks".into(),
                    expected: format!("K, Kbar {p}x{d}; K0 {p}; Sigma {p}x{p}"),
                    found: format!("inconsistent blocks at t = {}", to_f64(*t)),
                });
            }
            if !is_finite_mat(&b.k) || !is_finite_mat(&b.k_bar) || !is_finite_mat(&b.sigma) {
                return Err(Error::NonFinite("policy blocks".into()));
            }
            if symmetrize(&b.sigma).cholesky().is_none() {
                return Err(Error::Definiteness {
                    what: "Sigma",
                    t: to_f64(*t),
                });
            }
        }
        Ok(Self { times, nodes })
    }

    /// Time-invariant policy on `[0, horizon]`.
    pub fn constant(horizon: T, blocks: GaussianBlocks<T>) -> Result<Self> {
        Self::from_nodes(vec![T::zero(), horizon], vec![blocks.clone(), blocks])
    }

    /// Zero feedback with covariance `sigma`.
    pub fn open_loop(horizon: T, d: usize, sigma: DMatrix<T>) -> Result<Self> {
        let p = sigma.nrows();
        Self::constant(
            horizon,
            GaussianBlocks {
                k: DMatrix::zeros(p, d),
                k_bar: DMatrix::zeros(p, d),
                k0: DVector::zeros(p),
                sigma,
            },
        )
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn nodes(&self) -> &[GaussianBlocks<T>] {
        &self.nodes
    }

    pub fn action_dim(&self) -> usize {
        self.nodes[0].k.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.nodes[0].k.ncols()
    }

    pub fn blocks_at(&self, t: T) -> GaussianBlocks<T> {
        let (k, w) = locate(&self.times, t);
        if w == T::zero() {
            self.nodes[k].clone()
        } else {
            self.nodes[k].lerp(&self.nodes[k + 1], w)
        }
    }

    /// Applies `f` to every node; the result is re-validated.
    pub fn map_blocks(
        &self,
        f: impl Fn(T, &GaussianBlocks<T>) -> GaussianBlocks<T>,
    ) -> Result<Self> {
        let nodes = self
            .times
            .iter()
            .zip(&self.nodes)
            .map(|(&t, b)| f(t, b))
            .collect();
        Self::from_nodes(self.times.clone(), nodes)
    }

    /// Seeded time-constant perturbation: every entry of `K`, `K̄` and `K₀`
    /// moves by an independent uniform draw in `[−scale, scale]`, and `Σ` is
    /// multiplied by `exp(u)` for one more such draw, which keeps it SPD.
    pub fn perturbed(&self, scale: T, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let s = to_f64(scale);
        if !(s >= 0.0) {
            return Err(Error::Config(format!(
                "perturbation scale must be non-negative, got {s}"
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> T { lit(if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 }) };
        let (p, d) = (self.action_dim(), self.state_dim());
        let dk = DMatrix::from_fn(p, d, |_, _| draw());
        let dkb = DMatrix::from_fn(p, d, |_, _| draw());
        let dk0 = DVector::from_fn(p, |_, _| draw());
        let factor = draw().exp();
        self.map_blocks(|_, b| GaussianBlocks {
            k: &b.k + &dk,
            k_bar: &b.k_bar + &dkb,
            k0: &b.k0 + &dk0,
            sigma: &b.sigma * factor,
        })
    }

    /// Largest block difference, comparing at this policy's nodes.
    pub fn max_block_diff(&self, other: &Self) -> T {
        self.times
            .iter()
            .zip(&self.nodes)
            .map(|(&t, b)| b.max_abs_diff(&other.blocks_at(t)))
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn mean(&self, t: T, x: &DVector<T>, mean: &DVector<T>) -> DVector<T> {
        self.blocks_at(t).mean(x, mean)
    }

    pub fn density(&self, t: T, x: &DVector<T>, mean: &DVector<T>, a: &DVector<T>) -> T {
        self.slice_at(t, mean).density(x, a)
    }

    /// `mean + chol(Σ) z`.
    pub fn sample(&self, t: T, x: &DVector<T>, mean: &DVector<T>, z: &DVector<T>) -> DVector<T> {
        let s = self.slice_at(t, mean);
        s.mean_action(x) + &s.chol * z
    }

    pub fn entropy(&self, t: T) -> T {
        gaussian_entropy(&self.blocks_at(t).sigma)
    }

    /// Affine form of the policy at `(t, μ̄)`.
    pub fn slice_at(&self, t: T, mean: &DVector<T>) -> GaussianSlice<T> {
        let b = self.blocks_at(t);
        let offset = &b.k_bar * mean - &b.k * mean + &b.k0;
        let chol = factor_psd(&b.sigma).expect("policy covariance validated");
        let sigma_inv = symmetrize(&b.sigma).cholesky().map(|c| c.inverse());
        let entropy = gaussian_entropy(&b.sigma);
        GaussianSlice {
            gain: b.k,
            offset,
            sigma: b.sigma,
            chol,
            sigma_inv: sigma_inv.expect("policy covariance validated"),
            entropy,
        }
    }

    pub fn cast<S: Real>(&self) -> GaussianPolicy<S> {
        let c = |v: T| lit::<S>(to_f64(v));
        GaussianPolicy {
            times: self.times.iter().map(|&t| c(t)).collect(),
            nodes: self
                .nodes
                .iter()
                .map(|b| GaussianBlocks {
                    k: b.k.map(c),
                    k_bar: b.k_bar.map(c),
                    k0: b.k0.map(c),
                    sigma: b.sigma.map(c),
                })
                .collect(),
        }
    }

    /// One row per node: `t`, K, Kbar, K0, Sigma flattened row-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let b0 = &self.nodes[0];
        let mut header = vec!["t".to_string()];
        header.extend(matrix_headers("K", &b0.k));
        header.extend(matrix_headers("Kbar", &b0.k_bar));
        header.extend((0..b0.k0.len()).map(|i| format!("K0[{i}]")));
        header.extend(matrix_headers("Sigma", &b0.sigma));
        out.write_record(&header)?;
        for (t, b) in self.times.iter().zip(&self.nodes) {
            let mut row = vec![fmt(*t)];
            row.extend(matrix_cells(&b.k));
            row.extend(matrix_cells(&b.k_bar));
            row.extend(b.k0.iter().map(|v| fmt(*v)));
            row.extend(matrix_cells(&b.sigma));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gaussian policy frozen at one `(t, μ̄)`: action `~ N(gain·x + offset, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSlice<T: Real> {
    pub gain: DMatrix<T>,
    pub offset: DVector<T>,
    pub sigma: DMatrix<T>,
    pub chol: DMatrix<T>,
    pub sigma_inv: DMatrix<T>,
    pub entropy: T,
}

impl<T: Real> GaussianSlice<T> {
    pub fn mean_action(&self, x: &DVector<T>) -> DVector<T> {
        &self.gain * x + &self.offset
    }

    pub fn density(&self, x: &DVector<T>, a: &DVector<T>) -> T {
        let p = self.sigma.nrows();
        let e = a - self.mean_action(x);
        let norm = (lit::<T>(2.0) * T::pi()).powf(lit::<T>(p as f64)) * self.sigma.determinant();
        (-quad_form(&self.sigma_inv, &e) * lit::<T>(0.5)).exp() / norm.sqrt()
    }
}

/// Any feedback policy usable by the Hamiltonian and the simulators.
pub trait Policy<T: Real>: Sync {
    fn action_dim(&self) -> usize;

    /// The policy at time `t` and mean state `μ̄`.
    fn slice(&self, t: T, mean: &DVector<T>) -> PolicySlice<'_, T>;
}

impl<T: Real> Policy<T> for GaussianPolicy<T> {
    fn action_dim(&self) -> usize {
        GaussianPolicy::action_dim(self)
    }

    fn slice(&self, t: T, mean: &DVector<T>) -> PolicySlice<'_, T> {
        PolicySlice::Gaussian(self.slice_at(t, mean))
    }
}

impl<T: Real> Policy<T> for TabularPolicy<T> {
    fn action_dim(&self) -> usize {
        self.grid.dim()
    }

    fn slice(&self, _t: T, _mean: &DVector<T>) -> PolicySlice<'_, T> {
        PolicySlice::Tabular(self)
    }
}

/// A policy evaluated at one `(t, μ̄)`, as a kernel in `x`.
#[derive(Debug, Clone)]
pub enum PolicySlice<'a, T: Real> {
    Gaussian(GaussianSlice<T>),
    Tabular(&'a TabularPolicy<T>),
}

impl<T: Real> PolicySlice<'_, T> {
    pub fn mean_action(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            PolicySlice::Gaussian(g) => g.mean_action(x),
            PolicySlice::Tabular(tab) => tab.node_moments(tab.nearest(x)).0,
        }
    }

    pub fn action_cov(&self, x: &DVector<T>) -> DMatrix<T> {
        match self {
            PolicySlice::Gaussian(g) => g.sigma.clone(),
            PolicySlice::Tabular(tab) => tab.node_moments(tab.nearest(x)).1,
        }
    }

    pub fn entropy(&self, x: &DVector<T>) -> T {
        match self {
            PolicySlice::Gaussian(g) => g.entropy,
            PolicySlice::Tabular(tab) => tab.node_entropy(tab.nearest(x)),
        }
    }

    pub fn density(&self, x: &DVector<T>, a: &DVector<T>) -> T {
        match self {
            PolicySlice::Gaussian(g) => g.density(x, a),
            PolicySlice::Tabular(tab) => match tab.grid.cell_of(a) {
                Some(j) => tab.rho[tab.nearest(x)][j],
                None => T::zero(),
            },
        }
    }

    /// Gaussian: `mean + chol(Σ)·normals`. Tabular: inverse CDF of `uniform`
    /// over the cells of the nearest state node.
    pub fn sample(&self, x: &DVector<T>, normals: &[T], uniform: T) -> DVector<T> {
        match self {
            PolicySlice::Gaussian(g) => {
                let z = DVector::from_column_slice(normals);
                g.mean_action(x) + &g.chol * z
            }
            PolicySlice::Tabular(tab) => tab.sample_node(tab.nearest(x), uniform),
        }
    }

    /// Weighted action nodes integrating against the kernel at `x`:
    /// Gauss–Hermite for Gaussians, the grid cells for tabular kernels.
    pub fn action_nodes(&self, x: &DVector<T>, order: usize) -> Vec<(DVector<T>, T)> {
        match self {
            PolicySlice::Gaussian(g) => {
                let m = g.mean_action(x);
                tensor_hermite::<T>(g.sigma.nrows(), order)
                    .into_iter()
                    .map(|(z, w)| (&m + &g.chol * z, w))
                    .collect()
            }
            PolicySlice::Tabular(tab) => {
                let g = tab.nearest(x);
                tab.grid
                    .nodes
                    .iter()
                    .zip(&tab.rho[g])
                    .filter(|(_, r)| **r > T::zero())
                    .map(|(a, r)| (a.clone(), *r * tab.grid.cell_volume))
                    .collect()
            }
        }
    }
}

/// Uniform tensor grid of action cells; nodes are the cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid<T: Real> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
    pub cells_per_axis: usize,
    pub cell_volume: T,
    pub nodes: Vec<DVector<T>>,
}

impl<T: Real> ActionGrid<T> {
    pub fn uniform_box(
        lower: DVector<T>,
        upper: DVector<T>,
        cells_per_axis: usize,
    ) -> Result<Self> {
        let p = lower.len();
        if p == 0 || upper.len() != p || cells_per_axis == 0 {
            return Err(Error::Config(
                "action grid needs matching bounds and cells".into(),
            ));
        }
        if (0..p).any(|i| !(upper[i] > lower[i])) {
            return Err(Error::Config(
                "action grid bounds must satisfy lower < upper".into(),
            ));
        }
        let n = from_usize::<T>(cells_per_axis);
        let h: Vec<T> = (0..p).map(|i| (upper[i] - lower[i]) / n).collect();
        let cell_volume = h.iter().fold(T::one(), |acc, v| acc * *v);
        let total = cells_per_axis.pow(p as u32);
        let half = lit::<T>(0.5);
        let nodes = (0..total)
            .map(|mut idx| {
                let mut a = DVector::zeros(p);
                for k in 0..p {
                    let i = idx % cells_per_axis;
                    idx /= cells_per_axis;
                    a[k] = lower[k] + h[k] * (from_usize::<T>(i) + half);
                }
                a
            })
            .collect();
        Ok(Self {
            lower,
            upper,
            cells_per_axis,
            cell_volume,
            nodes,
        })
    }

    /// Box covering `mean(x) ± radius·sd` for every state node `x` of a
    /// Gaussian slice.
    pub fn covering(
        slice: &GaussianSlice<T>,
        states: &[DVector<T>],
        radius: T,
        cells_per_axis: usize,
    ) -> Result<Self> {
        let p = slice.sigma.nrows();
        let mut lo = DVector::from_element(p, T::max_value().unwrap_or(lit(f64::MAX)));
        let mut hi = DVector::from_element(p, T::min_value().unwrap_or(lit(f64::MIN)));
        for x in states {
            let m = slice.mean_action(x);
            for i in 0..p {
                let sd = slice.sigma[(i, i)].sqrt();
                lo[i] = lo[i].min(m[i] - radius * sd);
                hi[i] = hi[i].max(m[i] + radius * sd);
            }
        }
        Self::uniform_box(lo, hi, cells_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cell index containing `a`, if inside the box.
    pub fn cell_of(&self, a: &DVector<T>) -> Option<usize> {
        let n = self.cells_per_axis;
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let h = (self.upper[k] - self.lower[k]) / from_usize::<T>(n);
            let r = (a[k] - self.lower[k]) / h;
            if r < T::zero() || r > from_usize::<T>(n) {
                return None;
            }
            let i = r.floor().to_usize().unwrap_or(0).min(n - 1);
            idx += i * stride;
            stride *= n;
        }
        Some(idx)
    }
}

/// Grid density over actions at a fixed `(t, μ)`, one row per state node.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<T: Real> {
    pub t: T,
    pub mean_state: DVector<T>,
    pub states: Vec<DVector<T>>,
    /// Weights of the state nodes under `μ` (sum to one).
    pub state_weights: Vec<T>,
    pub grid: ActionGrid<T>,
    pub rho: Vec<Vec<T>>,
}

impl<T: Real> TabularPolicy<T> {
    /// Builds a kernel, checking normalization at every state node.
    pub fn new(
        t: T,
        mu: &MeasureSlice<T>,
        states: Vec<(DVector<T>, T)>,
        grid: ActionGrid<T>,
        rho: Vec<Vec<T>>,
    ) -> Result<Self> {
        if rho.len() != states.len() || rho.iter().any(|r| r.len() != grid.len()) {
            return Err(Error::Dimension {
                key: "rho".into(),
                expected: format!("{}x{}", states.len(), grid.len()),
                found: format!("{} rows", rho.len()),
            });
        }
        let tol = lit::<T>(NORMALIZATION_TOLERANCE);
        for (g, row) in rho.iter().enumerate() {
            if row.iter().any(|v| *v < T::zero() || !v.is_finite()) {
                return Err(Error::Config(format!(
                    "negative or non-finite density at node {g}"
                )));
            }
            let mass = row.iter().fold(T::zero(), |a, v| a + *v) * grid.cell_volume;
            if (mass - T::one()).abs() > tol {
                return Err(Error::Config(format!(
                    "density at node {g} has mass {} instead of 1",
                    to_f64(mass)
                )));
            }
        }
        let (states, state_weights) = states.into_iter().unzip();
        Ok(Self {
            t,
            mean_state: mu.mean(),
            states,
            state_weights,
            grid,
            rho,
        })
    }

    /// Normalizes nonnegative weights per state node before building.
    pub fn from_unnormalized(
        t: T,
        mu: &MeasureSlice<T>,
        states: Vec<(DVector<T>, T)>,
        grid: ActionGrid<T>,
        mut rho: Vec<Vec<T>>,
    ) -> Result<Self> {
        for (g, row) in rho.iter_mut().enumerate() {
            let mass = row.iter().fold(T::zero(), |a, v| a + *v) * grid.cell_volume;
            if !(mass > T::zero()) || !mass.is_finite() {
                return Err(Error::DegenerateMap { node: g });
            }
            for v in row.iter_mut() {
                *v /= mass;
            }
        }
        Self::new(t, mu, states, grid, rho)
    }

    /// Uniform density on the grid at every state node of `mu`.
    pub fn uniform(t: T, mu: &MeasureSlice<T>, order: usize, grid: ActionGrid<T>) -> Result<Self> {
        let states = mu.nodes(order);
        let rho = vec![vec![T::one(); grid.len()]; states.len()];
        Self::from_unnormalized(t, mu, states, grid, rho)
    }

    /// Cell-centre discretization of a Gaussian slice.
    pub fn from_gaussian(
        t: T,
        mu: &MeasureSlice<T>,
        order: usize,
        grid: ActionGrid<T>,
        slice: &GaussianSlice<T>,
    ) -> Result<Self> {
        let states = mu.nodes(order);
        let rho = states
            .iter()
            .map(|(x, _)| grid.nodes.iter().map(|a| slice.density(x, a)).collect())
            .collect();
        Self::from_unnormalized(t, mu, states, grid, rho)
    }

    /// Index of the state node closest to `x` in Euclidean distance.
    pub fn nearest(&self, x: &DVector<T>) -> usize {
        let mut best = 0;
        let mut best_d = T::max_value().unwrap_or(lit(f64::MAX));
        for (g, s) in self.states.iter().enumerate() {
            let d = (s - x).norm_squared();
            if d < best_d {
                best_d = d;
                best = g;
            }
        }
        best
    }

    /// Grid mean and covariance of the action at state node `g`.
    pub fn node_moments(&self, g: usize) -> (DVector<T>, DMatrix<T>) {
        let w = self.grid.cell_volume;
        let p = self.grid.dim();
        let mut m = DVector::zeros(p);
        for (a, r) in self.grid.nodes.iter().zip(&self.rho[g]) {
            m += a * (*r * w);
        }
        let mut c = DMatrix::zeros(p, p);
        for (a, r) in self.grid.nodes.iter().zip(&self.rho[g]) {
            let e = a - &m;
            c += &e * e.transpose() * (*r * w);
        }
        (m, c)
    }

    /// `−w Σ_j ρ log ρ` at state node `g`.
    pub fn node_entropy(&self, g: usize) -> T {
        let w = self.grid.cell_volume;
        -self.rho[g]
            .iter()
            .filter(|r| **r > T::zero())
            .fold(T::zero(), |acc, r| acc + *r * r.ln())
            * w
    }

    fn sample_node(&self, g: usize, u: T) -> DVector<T> {
        let w = self.grid.cell_volume;
        let target = u.max(T::zero()).min(T::one());
        let mut cum = T::zero();
        let mut last = 0;
        for (j, r) in self.rho[g].iter().enumerate() {
            if *r > T::zero() {
                last = j;
                cum += *r * w;
                if cum > target {
                    return self.grid.nodes[j].clone();
                }
            }
        }
        self.grid.nodes[last].clone()
    }

    /// Largest cell-wise density difference.
    pub fn sup_diff(&self, other: &Self) -> T {
        self.rho
            .iter()
            .zip(&other.rho)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x - *y).abs()))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// `(1−θ)·self + θ·other` on a shared grid.
    pub fn mix(&self, other: &Self, theta: T) -> Self {
        let a = T::one() - theta;
        let rho = self
            .rho
            .iter()
            .zip(&other.rho)
            .map(|(r, s)| r.iter().zip(s).map(|(x, y)| *x * a + *y * theta).collect())
            .collect();
        Self {
            rho,
            ..self.clone()
        }
    }

    /// Sup-norm density error against a Gaussian slice at every state node.
    pub fn sup_error_against(&self, slice: &GaussianSlice<T>) -> T {
        let mut worst = T::zero();
        for (x, row) in self.states.iter().zip(&self.rho) {
            for (a, r) in self.grid.nodes.iter().zip(row) {
                worst = worst.max((*r - slice.density(x, a)).abs());
            }
        }
        worst
    }

    /// Rows `state_index, state..., action..., density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.states[0].len();
        let p = self.grid.dim();
        let mut header = vec!["state_index".to_string()];
        header.extend((0..d).map(|i| format!("x[{i}]")));
        header.extend((0..p).map(|i| format!("a[{i}]")));
        header.push("density".into());
        out.write_record(&header)?;
        for (g, (x, row)) in self.states.iter().zip(&self.rho).enumerate() {
            for (a, r) in self.grid.nodes.iter().zip(row) {
                let mut rec = vec![g.to_string()];
                rec.extend(x.iter().map(|v| fmt(*v)));
                rec.extend(a.iter().map(|v| fmt(*v)));
                rec.push(fmt(*r));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Exact first and second moments of the coefficients under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMoments<T: Real> {
    pub b: DVector<T>,
    pub sigma: DVector<T>,
    pub sigma_o: DVector<T>,
    pub cov_sigma: DMatrix<T>,
    pub cov_sigma_o: DMatrix<T>,
    pub std_sigma: DMatrix<T>,
    pub std_sigma_o: DMatrix<T>,
    /// Mean running reward `∫ r(t, x, μ, a) π(da)`.
    pub reward: T,
}

/// Moments from an already evaluated coefficient slice and policy slice.
pub fn moments_from_slices<T: Real>(
    c: &CoefficientSlice<T>,
    pol: &PolicySlice<'_, T>,
    x: &DVector<T>,
    mean: &DVector<T>,
) -> Result<PolicyMoments<T>> {
    let m = pol.mean_action(x);
    let cov_a = pol.action_cov(x);
    let cov_sigma = symmetrize(&(&c.f * &cov_a * c.f.transpose()));
    let cov_sigma_o = symmetrize(&(&c.f_o * &cov_a * c.f_o.transpose()));
    let std_sigma = sqrt_psd(&cov_sigma)?;
    let std_sigma_o = sqrt_psd(&cov_sigma_o)?;
    Ok(PolicyMoments {
        b: c.drift(x, mean, &m),
        sigma: c.sigma(x, mean, &m),
        sigma_o: c.sigma_o(x, mean, &m),
        reward: c.running_reward(x, mean, &m) + trace_prod(&c.r, &cov_a),
        cov_sigma,
        cov_sigma_o,
        std_sigma,
        std_sigma_o,
    })
}

/// Policy means `b_π, σ_π, σ_{o,π}`, covariances `FΣFᵀ, FoΣFoᵀ` and their
/// symmetric square roots at `(t, x, μ̄)`.
pub fn coefficient_moments<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    t: T,
    x: &DVector<T>,
    mean: &DVector<T>,
) -> Result<PolicyMoments<T>> {
    let c = model.coefficients_at(t)?;
    moments_from_slices(&c, &policy.slice(t, mean), x, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{m1, m2};

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn m1_star() -> GaussianPolicy<f64> {
        GaussianPolicy::constant(
            1.0,
            GaussianBlocks {
                k: s(-0.5),
                k_bar: s(-0.5),
                k0: v(0.0),
                sigma: s(1.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn density_values() {
        let p = m1_star();
        assert!(
            (p.density(0.0, &v(0.0), &v(0.0), &v(0.0)) - 0.398_942_280_401_432_7).abs() < 1e-12
        );
        assert!(
            (p.density(0.0, &v(0.0), &v(0.0), &v(1.0)) - 0.241_970_724_519_143_37).abs() < 1e-12
        );
        assert!(
            (p.density(0.0, &v(2.0), &v(0.0), &v(-1.0)) - 0.398_942_280_401_432_7).abs() < 1e-12
        );
    }

    #[test]
    fn sampling_rule() {
        let p = m1_star();
        assert_eq!(p.sample(0.0, &v(1.0), &v(0.0), &v(0.0))[0], -0.5);
        assert_eq!(p.sample(0.0, &v(1.0), &v(0.0), &v(1.0))[0], 0.5);
    }

    #[test]
    fn entropies() {
        assert!((m1_star().entropy(0.3) - 1.418_938_533_204_672_7).abs() < 1e-12);
        let p = GaussianPolicy::open_loop(1.0, 1, s(4.0)).unwrap();
        assert!((p.entropy(0.0) - 2.112_085_713_764_618).abs() < 1e-12);
    }

    #[test]
    fn tabular_uniform_unit_box_has_zero_entropy() {
        let grid = ActionGrid::uniform_box(v(0.0), v(1.0), 50).unwrap();
        let mu = MeasureSlice::standard(1);
        let tab = TabularPolicy::uniform(0.0, &mu, 3, grid).unwrap();
        let pol = tab.slice(0.0, &v(0.0));
        assert!(pol.entropy(&v(0.0)).abs() < 1e-12);
    }

    #[test]
    fn tabular_point_mass_sample() {
        let grid = ActionGrid::uniform_box(v(-1.0), v(1.0), 4).unwrap();
        let mu = MeasureSlice::dirac(v(0.0));
        let row = vec![0.0, 0.0, 2.0, 0.0];
        let tab = TabularPolicy::new(0.0, &mu, mu.nodes(1), grid, vec![row]).unwrap();
        let pol = tab.slice(0.0, &v(0.0));
        for u in [0.0, 0.3, 0.999_999] {
            assert_eq!(pol.sample(&v(5.0), &[], u)[0], 0.25);
        }
    }

    #[test]
    fn unnormalized_rejected() {
        let grid = ActionGrid::uniform_box(v(-1.0), v(1.0), 4).unwrap();
        let mu = MeasureSlice::dirac(v(0.0));
        let r = TabularPolicy::new(0.0, &mu, mu.nodes(1), grid, vec![vec![1.0; 4]]);
        assert!(r.is_err());
    }

    #[test]
    fn moments_m1_m2() {
        let p = m1_star();
        let mm = coefficient_moments(&m1(), &p, 0.0, &v(1.0), &v(1.0)).unwrap();
        assert_eq!(mm.cov_sigma[(0, 0)], 0.0);
        assert_eq!(mm.cov_sigma_o[(0, 0)], 0.0);
        assert!((mm.b[0] + 0.5).abs() < 1e-15);
        let mm = coefficient_moments(&m2(), &p, 0.0, &v(1.0), &v(1.0)).unwrap();
        assert!((mm.cov_sigma_o[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((mm.std_sigma_o[(0, 0)] - 0.5).abs() < 1e-15);
        // E[-0.5 a²] with a ~ N(-0.5, 1)
        assert!((mm.reward + 0.5 * 1.25).abs() < 1e-15);
    }

    #[test]
    fn interpolated_blocks() {
        let a = GaussianBlocks {
            k: s(0.0),
            k_bar: s(0.0),
            k0: v(0.0),
            sigma: s(1.0),
        };
        let b = GaussianBlocks {
            k: s(2.0),
            k_bar: s(4.0),
            k0: v(-2.0),
            sigma: s(3.0),
        };
        let p = GaussianPolicy::from_nodes(vec![0.0, 1.0], vec![a, b]).unwrap();
        let m = p.blocks_at(0.5);
        assert_eq!(
            (m.k[(0, 0)], m.k_bar[(0, 0)], m.k0[0], m.sigma[(0, 0)]),
            (1.0, 2.0, -1.0, 2.0)
        );
    }

    #[test]
    fn non_spd_sigma_rejected() {
        assert!(matches!(
            GaussianPolicy::open_loop(1.0, 1, s(0.0)),
            Err(Error::Definiteness { .. })
        ));
    }
}
