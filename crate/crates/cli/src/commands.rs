use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use mfc_core::fixed_point::{inner_fixed_point, two_layer_solve, InnerConfig, OuterConfig};
use mfc_core::hamiltonian::{hjb_residual, QuadraticBundle, Quadrature};
use mfc_core::mc_eval::{convergence_study, improvement_check, McConfig};
use mfc_core::measure::MeasureSlice;
use mfc_core::model::{LqModel, DEFAULT_CONDITION_SAMPLES};
use mfc_core::particle_sim::{simulate, DecisionGrid, Dynamics, SimConfig};
use mfc_core::policy::{ActionGrid, GaussianPolicy, TabularPolicy};
use mfc_core::riccati::{optimal_policy, solve_checked, RiccatiSolution};
use mfc_core::{evaluate_policy, load_model};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cli::{
    Command, ConvergenceArgs, DynamicsKind, FixedPointArgs, HjbArgs, ImproveArgs, InitArgs,
    ModelArgs, PolicyArgs, PolicyKind, SimulateArgs, SolveArgs,
};

type Model = LqModel<f64>;

/// Result of a command that ran to completion. A non-`Ok` status still
/// leaves its artifacts on disk.
#[derive(Debug)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Invariant(String),
    Inconclusive(String),
}

struct Artifacts<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            names: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.names.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> mfc_core::Result<()>,
    ) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn finish(self, status: Status) -> Outcome {
        Outcome {
            outputs: self.names,
            status,
        }
    }
}

pub fn execute(cmd: &Command, model_text: &str, out: &Path) -> anyhow::Result<Outcome> {
    let model: Model = load_model(model_text)?;
    let mut art = Artifacts::new(out)?;
    let status = match cmd {
        Command::Solve(a) => solve(&model, a, &mut art)?,
        Command::Policy(a) => policy(&model, a, &mut art)?,
        Command::Simulate(a) => simulate_cmd(&model, a, &mut art)?,
        Command::FixedPoint(a) if a.outer => outer(&model, a, &mut art)?,
        Command::FixedPoint(a) => inner(&model, a, &mut art)?,
        Command::Convergence(a) => convergence(&model, a, &mut art)?,
        Command::Improve(a) => improve_cmd(&model, a, &mut art)?,
        Command::HjbCheck(a) => hjb(&model, a, &mut art)?,
        Command::Rerun(_) => bail!("rerun cannot be nested"),
    };
    Ok(art.finish(status))
}

fn riccati(model: &Model, a: &ModelArgs) -> anyhow::Result<RiccatiSolution<f64>> {
    Ok(solve_checked(model, a.steps, a.delta, a.force)?)
}

fn initial(model: &Model, a: &InitArgs) -> anyhow::Result<MeasureSlice<f64>> {
    let d = model.dims().d;
    let mean = if a.init_mean.is_empty() {
        DVector::zeros(d)
    } else if a.init_mean.len() == d {
        DVector::from_column_slice(&a.init_mean)
    } else {
        return Err(mfc_core::Error::Dimension {
            key: "init-mean".into(),
            expected: d.to_string(),
            found: a.init_mean.len().to_string(),
        }
        .into());
    };
    if !(a.init_var >= 0.0) || !a.init_var.is_finite() {
        return Err(mfc_core::Error::Config(format!(
            "init-var must be a finite non-negative number, got {}",
            a.init_var
        ))
        .into());
    }
    if a.init_var == 0.0 {
        Ok(MeasureSlice::dirac(mean))
    } else {
        Ok(MeasureSlice::gaussian(
            mean,
            DMatrix::identity(d, d) * a.init_var,
        )?)
    }
}

fn gaussian_policy(
    model: &Model,
    m: &ModelArgs,
    a: &PolicyArgs,
) -> anyhow::Result<GaussianPolicy<f64>> {
    let base = match a.policy {
        PolicyKind::Optimal => optimal_policy(&riccati(model, m)?, model)?,
        PolicyKind::OpenLoop => {
            let p = model.dims().p;
            GaussianPolicy::open_loop(model.horizon(), model.dims().d, DMatrix::identity(p, p))?
        }
    };
    if a.sigma_scale == 1.0 {
        return Ok(base);
    }
    if !(a.sigma_scale > 0.0) {
        return Err(mfc_core::Error::Config(format!(
            "sigma-scale must be positive, got {}",
            a.sigma_scale
        ))
        .into());
    }
    Ok(base.map_blocks(|_, b| mfc_core::policy::GaussianBlocks {
        sigma: &b.sigma * a.sigma_scale,
        ..b.clone()
    })?)
}

fn dynamics(k: DynamicsKind) -> Dynamics {
    match k {
        DynamicsKind::Sampled => Dynamics::Sampled,
        DynamicsKind::Relaxed => Dynamics::Relaxed,
    }
}

fn solve(model: &Model, a: &SolveArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let report = model.validate_condition_h(a.model.delta, DEFAULT_CONDITION_SAMPLES)?;
    art.json("condition_h.json", &report)?;
    let sol = riccati(model, &a.model)?;
    art.csv("riccati.csv", |w| sol.write_csv(w))?;
    let n0 = &sol.nodes()[0];
    println!(
        "Lambda(0) = {:?}, Gamma(0) = {:?}, chi(0) = {}",
        n0.lambda.as_slice(),
        n0.gamma.as_slice(),
        n0.chi
    );
    Ok(Status::Ok)
}

fn policy(model: &Model, a: &SolveArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let sol = riccati(model, &a.model)?;
    let pi = optimal_policy(&sol, model)?;
    art.csv("policy.csv", |w| pi.write_csv(w))?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SimulationSummary {
    particles: usize,
    steps: usize,
    seed: u64,
    replication: u64,
    running: f64,
    entropy: f64,
    terminal: f64,
    total: f64,
}

fn simulate_cmd(model: &Model, a: &SimulateArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let pi = gaussian_policy(model, &a.model, &a.policy)?;
    let decision = if a.decision_times.is_empty() {
        DecisionGrid::Uniform(a.decision_steps.unwrap_or(a.sim_steps))
    } else {
        DecisionGrid::Times(a.decision_times.clone())
    };
    let cfg = SimConfig {
        particles: a.particles,
        steps: a.sim_steps,
        decision,
        seed: a.seed,
        replication: a.replication,
        initial: initial(model, &a.init)?,
        base_steps: a.base_steps,
        aux_common: a.aux_common,
        record_states: false,
    };
    let traj = simulate(model, &pi, &cfg, dynamics(a.dynamics))?;
    art.csv("trajectory.csv", |w| traj.write_csv(w))?;
    let f = &traj.functionals;
    art.json(
        "summary.json",
        &SimulationSummary {
            particles: a.particles,
            steps: a.sim_steps,
            seed: a.seed,
            replication: a.replication,
            running: f.running,
            entropy: f.entropy,
            terminal: f.terminal,
            total: f.total(),
        },
    )?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct InnerReport {
    t: f64,
    cells: usize,
    damping: f64,
    converged: bool,
    iterations: usize,
    sup_density_error: f64,
}

fn inner(model: &Model, a: &FixedPointArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let sol = riccati(model, &a.model)?;
    let pi = optimal_policy(&sol, model)?;
    let bundle = QuadraticBundle::from_riccati(model, &sol);
    let mu = initial(model, &a.init)?;
    let target = pi.slice_at(a.t, &mu.mean());
    let xs: Vec<_> = mu.nodes(a.state_order).into_iter().map(|n| n.0).collect();
    let grid = ActionGrid::covering(&target, &xs, a.radius, a.cells)?;
    let h0 = TabularPolicy::uniform(a.t, &mu, a.state_order, grid)?;
    let cfg = InnerConfig {
        damping: a.damping,
        tol: a.tol,
        max_iter: a.max_iter,
        quadrature: Quadrature {
            state_order: a.state_order,
            action_order: a.action_order,
        },
    };
    let (h, trace) = inner_fixed_point(model, a.t, &mu, &bundle, h0, cfg)?;
    art.csv("fixed_point_trace.csv", |w| trace.write_csv(w))?;
    art.csv("tabular_policy.csv", |w| h.write_csv(w))?;
    art.json(
        "fixed_point.json",
        &InnerReport {
            t: a.t,
            cells: a.cells,
            damping: a.damping,
            converged: trace.converged,
            iterations: trace.iterations,
            sup_density_error: h.sup_error_against(&target),
        },
    )?;
    Ok(if trace.converged {
        Status::Ok
    } else {
        Status::Inconclusive(format!(
            "inner fixed point not converged after {} iterations",
            trace.iterations
        ))
    })
}

#[derive(Serialize)]
struct OuterReport {
    converged: bool,
    iterations: usize,
    objective_non_decreasing: bool,
    objectives: Vec<f64>,
}

fn outer(model: &Model, a: &FixedPointArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let p = model.dims().p;
    let pi0 = GaussianPolicy::open_loop(model.horizon(), model.dims().d, DMatrix::identity(p, p))?;
    let cfg = OuterConfig {
        tol: a.tol,
        max_outer: a.max_outer,
        steps: a.model.steps,
        mu_ref: initial(model, &a.init)?,
    };
    let (pi, trace) = two_layer_solve(model, &pi0, &cfg)?;
    art.csv("outer_trace.csv", |w| trace.write_csv(w))?;
    art.csv("policy.csv", |w| pi.write_csv(w))?;
    let monotone = trace.objective_non_decreasing(1e-9);
    art.json(
        "fixed_point.json",
        &OuterReport {
            converged: trace.converged,
            iterations: trace.iterations,
            objective_non_decreasing: monotone,
            objectives: trace.objectives(),
        },
    )?;
    Ok(if !monotone {
        Status::Invariant("value sequence decreased between outer iterations".into())
    } else if !trace.converged {
        Status::Inconclusive(format!(
            "outer iteration not converged after {} steps",
            trace.iterations
        ))
    } else {
        Status::Ok
    })
}

#[derive(Serialize)]
struct RateReport<'a> {
    reference: f64,
    particles: usize,
    replications: usize,
    slope: Option<f64>,
    intercept: Option<f64>,
    min_slope: f64,
    monotone: bool,
    inconclusive: bool,
    passes: bool,
    rows: &'a [mfc_core::mc_eval::RateRow],
}

fn convergence(model: &Model, a: &ConvergenceArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let pi = gaussian_policy(model, &a.model, &a.policy)?;
    let init = initial(model, &a.init)?;
    let reference = evaluate_policy(model, &pi, a.model.steps)?.value_at(0.0, &init);
    let cfg = McConfig {
        particles: a.particles,
        steps: 1,
        decision: DecisionGrid::Uniform(1),
        replications: a.replications,
        seed: a.seed,
        initial: init,
        base_steps: None,
        dynamics: Dynamics::Sampled,
    };
    let study = convergence_study(model, &pi, &a.grids, &cfg, reference)?;
    art.csv("rate_study.csv", |w| study.write_csv(w))?;
    let slope_ok = study.slope.is_some_and(|s| s >= a.min_slope);
    let passes = !study.inconclusive && slope_ok && study.monotone;
    art.json(
        "rate_report.json",
        &RateReport {
            reference,
            particles: a.particles,
            replications: a.replications,
            slope: study.slope,
            intercept: study.intercept,
            min_slope: a.min_slope,
            monotone: study.monotone,
            inconclusive: study.inconclusive,
            passes,
            rows: &study.rows,
        },
    )?;
    Ok(if study.inconclusive {
        Status::Inconclusive("too few grids with a gap above the noise floor".into())
    } else if !passes {
        Status::Invariant(format!(
            "rate check failed: slope {:?} (need >= {}), monotone {}",
            study.slope, a.min_slope, study.monotone
        ))
    } else {
        Status::Ok
    })
}

fn improve_cmd(model: &Model, a: &ImproveArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let sol = riccati(model, &a.model)?;
    let pi = optimal_policy(&sol, model)?.perturbed(a.perturb, a.seed)?;
    let init = initial(model, &a.init)?;
    let mc = a.mc.then(|| McConfig {
        particles: a.particles,
        steps: a.sim_steps,
        decision: DecisionGrid::Uniform(a.sim_steps),
        replications: a.replications,
        seed: a.seed,
        initial: init.clone(),
        base_steps: None,
        dynamics: dynamics(a.dynamics),
    });
    let report = improvement_check(model, &pi, a.model.steps, mc.as_ref(), &init)?;
    art.json("improvement.json", &report)?;
    println!("closed-form gap J(I(pi)) - J(pi) = {:e}", report.gap);
    Ok(if report.passes {
        Status::Ok
    } else {
        let (d, se) = report.mc_gap.unwrap_or((f64::NAN, f64::NAN));
        Status::Invariant(format!(
            "Monte Carlo gap {d:e} (se {se:e}) disagrees with the closed-form gap {:e}",
            report.gap
        ))
    })
}

fn hjb(model: &Model, a: &HjbArgs, art: &mut Artifacts) -> anyhow::Result<Status> {
    let mut sol = riccati(model, &a.model)?;
    if a.perturb_lambda != 0.0 {
        let mut value = sol.value.clone();
        let d = model.dims().d;
        for n in &mut value.nodes {
            n.lambda += DMatrix::identity(d, d) * a.perturb_lambda;
        }
        sol = RiccatiSolution::from_value(model, value)?;
    }
    let mu = initial(model, &a.init)?;
    let quad = Quadrature {
        state_order: a.state_order,
        action_order: a.action_order,
    };
    let mean = mu.mean();
    let cov = mu.cov();
    let d = mean.len();
    let mut worst = 0.0f64;
    let mut rows = Vec::with_capacity(a.times.len());
    for &t in &a.times {
        let r = hjb_residual(model, t, &mu, &sol, quad)?;
        worst = worst.max(r.abs());
        rows.push((t, r));
    }
    let mut w = csv::Writer::from_writer(art.create("hjb_residual.csv")?);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("mean[{i}]")));
    for i in 0..d {
        for j in 0..d {
            header.push(format!("var[{i}][{j}]"));
        }
    }
    header.push("residual".into());
    w.write_record(&header)?;
    for (t, r) in rows {
        let mut rec = vec![format!("{t:e}")];
        rec.extend(mean.iter().map(|v| format!("{v:e}")));
        for i in 0..d {
            for j in 0..d {
                rec.push(format!("{:e}", cov[(i, j)]));
            }
        }
        rec.push(format!("{r:e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("max |residual| = {worst:e}");
    Ok(if worst <= a.tol {
        Status::Ok
    } else {
        Status::Invariant(format!(
            "HJB residual {worst:e} exceeds tolerance {:e}",
            a.tol
        ))
    })
}
