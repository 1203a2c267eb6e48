//! Finite-N particle system with common noise, under sampled actions
//! (frozen between decision times) or relaxed policy-moment dynamics.
//!
//! Particle index is identity: particle `j` always reads the streams keyed
//! by `j`, so permuting indices permutes paths.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sqrt_psd, symmetrize, trace_prod};
use crate::measure::MeasureSlice;
use crate::model::{CoeffKey, CoefficientSlice, LqModel};
use crate::ode::uniform_grid;
use crate::policy::{Policy, PolicySlice};
use crate::riccati::fmt;
use crate::rng::{Channel, NoiseBundle, SHARED};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Times at which the sampled dynamics draw fresh actions.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionGrid {
    /// `n` equal intervals on `[0, T]`.
    Uniform(usize),
    /// Explicit times; must include 0 and lie on the simulation grid.
    Times(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Sampled,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T: Real> {
    pub particles: usize,
    /// Euler steps on `[0, T]`.
    pub steps: usize,
    pub decision: DecisionGrid,
    pub seed: u64,
    pub replication: u64,
    pub initial: MeasureSlice<T>,
    /// Resolution at which noise is generated; coarser runs sum base
    /// increments, which couples runs on different grids. Must be a multiple
    /// of `steps`. Defaults to `steps`.
    pub base_steps: Option<usize>,
    /// Share `B̄` across particles instead of drawing it per particle.
    pub aux_common: bool,
    /// Keep particle states at every decision time.
    pub record_states: bool,
}

impl<T: Real> SimConfig<T> {
    pub fn new(particles: usize, steps: usize, initial: MeasureSlice<T>) -> Self {
        Self {
            particles,
            steps,
            decision: DecisionGrid::Uniform(steps),
            seed: 0,
            replication: 0,
            initial,
            base_steps: None,
            aux_common: false,
            record_states: false,
        }
    }

    fn validate(&self, model: &LqModel<T>) -> Result<(usize, Vec<bool>)> {
        if self.particles < 2 {
            return Err(Error::Config("at least two particles are required".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config(
                "at least one simulation step is required".into(),
            ));
        }
        if self.initial.dim() != model.dims().d {
            return Err(Error::Dimension {
                key: "initial".into(),
                expected: model.dims().d.to_string(),
                found: self.initial.dim().to_string(),
            });
        }
        let base = self.base_steps.unwrap_or(self.steps);
        if !base.is_multiple_of(self.steps) {
            return Err(Error::Config(format!(
                "noise resolution {base} is not a multiple of {} steps",
                self.steps
            )));
        }
        let mut decision = vec![false; self.steps];
        match &self.decision {
            DecisionGrid::Uniform(n) => {
                if *n == 0 || !self.steps.is_multiple_of(*n) {
                    return Err(Error::Config(format!(
                        "{} simulation steps do not refine {n} decision intervals",
                        self.steps
                    )));
                }
                let stride = self.steps / n;
                for k in (0..self.steps).step_by(stride) {
                    decision[k] = true;
                }
            }
            DecisionGrid::Times(times) => {
                let h = to_f64(model.horizon()) / self.steps as f64;
                for &s in times {
                    let r = s / h;
                    let k = r.round();
                    if (r - k).abs() > 1e-9 || k < 0.0 || k as usize > self.steps {
                        return Err(Error::Config(format!(
                            "decision time {s} is not on the simulation grid"
                        )));
                    }
                    if (k as usize) < self.steps {
                        decision[k as usize] = true;
                    }
                }
                if !decision[0] {
                    return Err(Error::Config("decision grid must contain t = 0".into()));
                }
            }
        }
        Ok((base / self.steps, decision))
    }
}

/// Population averages of the path functionals of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFunctionals<T> {
    pub running: T,
    pub entropy: T,
    pub terminal: T,
}

impl<T: Real> PathFunctionals<T> {
    pub fn total(&self) -> T {
        self.running + self.entropy + self.terminal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    /// Population-average running reward accumulated up to each node.
    pub running: Vec<T>,
    pub final_states: Vec<DVector<T>>,
    /// Per particle: running reward, entropy bonus, terminal reward.
    pub per_path: Vec<PathFunctionals<T>>,
    pub functionals: PathFunctionals<T>,
    /// States at decision times, when requested.
    pub snapshots: Vec<(T, Vec<DVector<T>>)>,
}

impl<T: Real> Trajectory<T> {
    /// Rows `t, mean[i]..., cov[i][j]..., running_reward_mean`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.means[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean[{i}]")));
        for i in 0..d {
            for j in 0..d {
                header.push(format!("cov[{i}][{j}]"));
            }
        }
        header.push("running_reward_mean".into());
        out.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt(self.times[k])];
            row.extend(self.means[k].iter().map(|v| fmt(*v)));
            for i in 0..d {
                for j in 0..d {
                    row.push(fmt(self.covs[k][(i, j)]));
                }
            }
            row.push(fmt(self.running[k]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Empirical mean and unbiased covariance of a particle cloud.
pub fn conditional_moments<T: Real>(states: &[DVector<T>]) -> Result<(DVector<T>, DMatrix<T>)> {
    if states.len() < 2 {
        return Err(Error::Config("moments need at least two particles".into()));
    }
    let n = states.len();
    let d = states[0].len();
    let mut mean = DVector::zeros(d);
    for x in states {
        mean += x;
    }
    mean /= from_usize::<T>(n);
    let mut cov = DMatrix::zeros(d, d);
    for x in states {
        let e = x - &mean;
        cov += &e * e.transpose();
    }
    cov /= from_usize::<T>(n - 1);
    Ok((mean, symmetrize(&cov)))
}

#[derive(Debug, Clone)]
struct Particle<T: Real> {
    x: DVector<T>,
    a: DVector<T>,
    /// Scratch buffers for the increment and for action and auxiliary normals.
    dx: DVector<T>,
    za: DVector<T>,
    zd: DVector<T>,
    /// Frozen `γE_π` from the last decision time (sampled mode).
    bonus: T,
    running: T,
    entropy: T,
    terminal: T,
}

/// Which noise channels the model actually uses.
#[derive(Debug, Clone, Copy)]
struct ActiveNoise {
    w: bool,
    b: bool,
    w_bar: bool,
    b_bar: bool,
}

fn nonzero<T: Real>(model: &LqModel<T>, keys: &[CoeffKey]) -> bool {
    keys.iter().any(|k| {
        model
            .coefficient(*k)
            .values()
            .iter()
            .any(|m| m.iter().any(|v| *v != T::zero()))
    })
}

impl ActiveNoise {
    fn of<T: Real>(model: &LqModel<T>) -> Self {
        use CoeffKey::*;
        Self {
            w: nonzero(model, &[Theta, D, DBar, F]),
            b: nonzero(model, &[ThetaO, Do, DBarO, Fo]),
            w_bar: nonzero(model, &[F]),
            b_bar: nonzero(model, &[Fo]),
        }
    }
}

/// Per-policy-slice quantities that do not depend on the particle.
struct RelaxedLaw<T: Real> {
    std_s: DMatrix<T>,
    std_so: DMatrix<T>,
    tr_r_cov: T,
    entropy: T,
}

fn relaxed_law<T: Real>(
    c: &CoefficientSlice<T>,
    cov_a: &DMatrix<T>,
    entropy: T,
) -> Result<RelaxedLaw<T>> {
    Ok(RelaxedLaw {
        std_s: sqrt_psd(&(&c.f * cov_a * c.f.transpose()))?,
        std_so: sqrt_psd(&(&c.f_o * cov_a * c.f_o.transpose()))?,
        tr_r_cov: trace_prod(&c.r, cov_a),
        entropy,
    })
}

/// Sum of base-resolution normals for one coarse step, scaled to an
/// `N(0, dt)` increment.
#[inline]
fn increment(
    noise: &NoiseBundle,
    particle: u64,
    step: usize,
    ratio: usize,
    channel: Channel,
    component: u64,
    sqrt_base_dt: f64,
) -> f64 {
    let start = (step * ratio) as u64;
    let mut acc = 0.0;
    for b in start..start + ratio as u64 {
        acc += noise.normal(particle, b, channel, component);
    }
    acc * sqrt_base_dt
}

/// Runs the particle system for one replication.
pub fn simulate<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &SimConfig<T>,
    dynamics: Dynamics,
) -> Result<Trajectory<T>> {
    let (ratio, decision) = cfg.validate(model)?;
    if policy.action_dim() != model.dims().p {
        return Err(Error::Dimension {
            key: "policy".into(),
            expected: model.dims().p.to_string(),
            found: policy.action_dim().to_string(),
        });
    }
    if cfg.aux_common && dynamics == Dynamics::Relaxed {
        log::warn!("auxiliary noise B̄ shared across particles: the conditional law is no longer the idiosyncratic reading");
    }
    let d = model.dims().d;
    let p = model.dims().p;
    let n = cfg.particles;
    let temp = model.gamma();
    let times = uniform_grid(model.horizon(), cfg.steps);
    let dt = model.horizon() / from_usize::<T>(cfg.steps);
    let sqrt_base_dt = (to_f64(dt) / ratio as f64).sqrt();
    let noise = NoiseBundle::new(cfg.seed, cfg.replication);
    let active = ActiveNoise::of(model);

    let init_nodes = match &cfg.initial {
        MeasureSlice::Gaussian { mean, cov } => Some((mean.clone(), sqrt_psd(cov)?)),
        MeasureSlice::Particles { .. } => None,
    };
    let init_points = match &cfg.initial {
        MeasureSlice::Particles { points } => points.clone(),
        _ => Vec::new(),
    };
    let mut particles: Vec<Particle<T>> = (0..n)
        .map(|j| {
            let x = match &init_nodes {
                Some((m, l)) => {
                    let z = DVector::from_fn(d, |i, _| {
                        lit::<T>(noise.normal(j as u64, 0, Channel::Initial, i as u64))
                    });
                    m + l * z
                }
                None => init_points[j % init_points.len()].clone(),
            };
            Particle {
                x,
                a: DVector::zeros(p),
                dx: DVector::zeros(d),
                za: DVector::zeros(p),
                zd: DVector::zeros(d),
                bonus: T::zero(),
                running: T::zero(),
                entropy: T::zero(),
                terminal: T::zero(),
            }
        })
        .collect();

    let snapshot =
        |ps: &[Particle<T>]| -> Vec<DVector<T>> { ps.iter().map(|q| q.x.clone()).collect() };
    let mut traj = Trajectory {
        times: times.clone(),
        means: Vec::with_capacity(cfg.steps + 1),
        covs: Vec::with_capacity(cfg.steps + 1),
        running: Vec::with_capacity(cfg.steps + 1),
        final_states: Vec::new(),
        per_path: Vec::new(),
        functionals: PathFunctionals {
            running: T::zero(),
            entropy: T::zero(),
            terminal: T::zero(),
        },
        snapshots: Vec::new(),
    };
    let mut running_total = T::zero();

    for k in 0..cfg.steps {
        let t = times[k];
        let (mean, cov) = population_moments(&particles);
        traj.means.push(mean.clone());
        traj.covs.push(cov);
        traj.running.push(running_total);

        let c = model.coefficients_at(t)?;
        let pol = policy.slice(t, &mean);
        let b_c = &c.b0 + &c.b_bar * &mean;
        let s_c = &c.theta + &c.d_bar * &mean;
        let so_c = &c.theta_o + &c.d_bar_o * &mean;
        let r_c = mean.dot(&(&c.m_bar * &mean));

        let db = if active.b {
            lit::<T>(increment(
                &noise,
                SHARED,
                k,
                ratio,
                Channel::Common,
                0,
                sqrt_base_dt,
            ))
        } else {
            T::zero()
        };
        let db_bar_shared: Option<DVector<T>> =
            (dynamics == Dynamics::Relaxed && active.b_bar && cfg.aux_common).then(|| {
                DVector::from_fn(d, |i, _| {
                    lit::<T>(increment(
                        &noise,
                        SHARED,
                        k,
                        ratio,
                        Channel::AuxCommon,
                        i as u64,
                        sqrt_base_dt,
                    ))
                })
            });

        // Decision interval in base steps for coupled action normals.
        let next_decision = (k + 1..cfg.steps)
            .find(|&m| decision[m])
            .unwrap_or(cfg.steps);
        let span = (next_decision - k) * ratio;

        let gaussian_law = match (&pol, dynamics) {
            (PolicySlice::Gaussian(g), Dynamics::Relaxed) => {
                Some(relaxed_law(&c, &g.sigma, g.entropy)?)
            }
            _ => None,
        };

        if dynamics == Dynamics::Sampled && decision[k] {
            if cfg.record_states {
                traj.snapshots.push((t, snapshot(&particles)));
            }
            particles.par_iter_mut().enumerate().for_each(|(j, q)| {
                let jj = j as u64;
                match &pol {
                    PolicySlice::Gaussian(g) => {
                        let scale = 1.0 / (span as f64).sqrt();
                        let start = (k * ratio) as u64;
                        for i in 0..p {
                            let mut acc = 0.0;
                            for b in start..start + span as u64 {
                                acc += noise.normal(jj, b, Channel::ActionNormal, i as u64);
                            }
                            q.za[i] = lit::<T>(acc * scale);
                        }
                        q.a.copy_from(&g.offset);
                        q.a.gemv(T::one(), &g.gain, &q.x, T::one());
                        q.a.gemv(T::one(), &g.chol, &q.za, T::one());
                        q.bonus = temp * g.entropy;
                    }
                    PolicySlice::Tabular(_) => {
                        let u = lit::<T>(noise.uniform(
                            jj,
                            (k * ratio) as u64,
                            Channel::ActionUniform,
                            0,
                        ));
                        q.a = pol.sample(&q.x, &[], u);
                        q.bonus = temp * pol.entropy(&q.x);
                    }
                }
            });
        }

        let one = T::one();
        let results: Vec<Result<()>> = particles
            .par_iter_mut()
            .enumerate()
            .map(|(j, q)| {
                let jj = j as u64;
                let (extra_reward, bonus, law_owned);
                match dynamics {
                    Dynamics::Sampled => {
                        extra_reward = T::zero();
                        bonus = q.bonus;
                        law_owned = None;
                    }
                    Dynamics::Relaxed => {
                        let law = match (&pol, &gaussian_law) {
                            (PolicySlice::Gaussian(g), Some(_)) => {
                                q.a.copy_from(&g.offset);
                                q.a.gemv(one, &g.gain, &q.x, one);
                                None
                            }
                            _ => {
                                q.a = pol.mean_action(&q.x);
                                Some(relaxed_law(&c, &pol.action_cov(&q.x), pol.entropy(&q.x))?)
                            }
                        };
                        let l = law
                            .as_ref()
                            .or(gaussian_law.as_ref())
                            .expect("law available");
                        extra_reward = l.tr_r_cov;
                        bonus = temp * l.entropy;
                        law_owned = law;
                    }
                }
                let (x, a, dx) = (&q.x, &q.a, &mut q.dx);
                let reward = quad(&c.m, x) + r_c + quad(&c.r, a) + x.dot(&c.o) + extra_reward;
                dx.copy_from(&b_c);
                dx.gemv(one, &c.b, x, one);
                dx.gemv(one, &c.c, a, one);
                *dx *= dt;
                if active.w {
                    let dw = lit::<T>(increment(
                        &noise,
                        jj,
                        k,
                        ratio,
                        Channel::Idiosyncratic,
                        0,
                        sqrt_base_dt,
                    ));
                    dx.axpy(dw, &s_c, one);
                    dx.gemv(dw, &c.d, x, one);
                    dx.gemv(dw, &c.f, a, one);
                }
                if active.b {
                    dx.axpy(db, &so_c, one);
                    dx.gemv(db, &c.d_o, x, one);
                    dx.gemv(db, &c.f_o, a, one);
                }
                if dynamics == Dynamics::Relaxed {
                    let law = law_owned
                        .as_ref()
                        .or(gaussian_law.as_ref())
                        .expect("law available");
                    if active.w_bar {
                        for i in 0..d {
                            q.zd[i] = lit::<T>(increment(
                                &noise,
                                jj,
                                k,
                                ratio,
                                Channel::AuxIdiosyncratic,
                                i as u64,
                                sqrt_base_dt,
                            ));
                        }
                        dx.gemv(one, &law.std_s, &q.zd, one);
                    }
                    if active.b_bar {
                        match &db_bar_shared {
                            Some(z) => q.zd.copy_from(z),
                            None => {
                                for i in 0..d {
                                    q.zd[i] = lit::<T>(increment(
                                        &noise,
                                        jj,
                                        k,
                                        ratio,
                                        Channel::AuxCommon,
                                        i as u64,
                                        sqrt_base_dt,
                                    ));
                                }
                            }
                        }
                        dx.gemv(one, &law.std_so, &q.zd, one);
                    }
                }
                q.running += reward * dt;
                q.entropy += bonus * dt;
                q.x += &q.dx;
                if q.x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Divergence {
                        step: k + 1,
                        last_valid_t: to_f64(t),
                    })
                }
            })
            .collect();
        for r in results {
            r?;
        }
        running_total =
            particles.iter().fold(T::zero(), |acc, q| acc + q.running) / from_usize::<T>(n);
    }

    let (mean, cov) = population_moments(&particles);
    traj.means.push(mean.clone());
    traj.covs.push(cov);
    traj.running.push(running_total);
    for q in particles.iter_mut() {
        q.terminal = model.terminal_reward(&q.x, &mean);
    }
    if cfg.record_states {
        traj.snapshots.push((model.horizon(), snapshot(&particles)));
    }
    let nn = from_usize::<T>(n);
    let sum =
        |f: &dyn Fn(&Particle<T>) -> T| particles.iter().fold(T::zero(), |acc, q| acc + f(q)) / nn;
    traj.functionals = PathFunctionals {
        running: sum(&|q| q.running),
        entropy: sum(&|q| q.entropy),
        terminal: sum(&|q| q.terminal),
    };
    traj.per_path = particles
        .iter()
        .map(|q| PathFunctionals {
            running: q.running,
            entropy: q.entropy,
            terminal: q.terminal,
        })
        .collect();
    traj.final_states = particles.into_iter().map(|q| q.x).collect();
    Ok(traj)
}

/// `xᵀ M x` without temporaries.
#[inline]
fn quad<T: Real>(m: &DMatrix<T>, x: &DVector<T>) -> T {
    let mut s = T::zero();
    for j in 0..x.len() {
        let mut r = T::zero();
        for i in 0..x.len() {
            r += x[i] * m[(i, j)];
        }
        s += r * x[j];
    }
    s
}

/// Mean and unbiased covariance in fixed particle order.
fn population_moments<T: Real>(ps: &[Particle<T>]) -> (DVector<T>, DMatrix<T>) {
    let d = ps[0].x.len();
    let n = ps.len();
    let mut mean = DVector::zeros(d);
    for q in ps {
        mean += &q.x;
    }
    mean /= from_usize::<T>(n);
    let mut cov = DMatrix::zeros(d, d);
    for q in ps {
        for j in 0..d {
            let ej = q.x[j] - mean[j];
            for i in 0..d {
                cov[(i, j)] += (q.x[i] - mean[i]) * ej;
            }
        }
    }
    cov /= from_usize::<T>(n - 1);
    (mean, cov)
}

/// Sampled exploratory dynamics: actions drawn at decision times and held.
pub fn simulate_sampled<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &SimConfig<T>,
) -> Result<Trajectory<T>> {
    simulate(model, policy, cfg, Dynamics::Sampled)
}

/// Relaxed dynamics driven by policy moments and auxiliary noises.
pub fn simulate_relaxed<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &SimConfig<T>,
) -> Result<Trajectory<T>> {
    simulate(model, policy, cfg, Dynamics::Relaxed)
}
