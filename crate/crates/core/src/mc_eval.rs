//! Monte Carlo values of the particle system, the grid-refinement study and
//! the policy-improvement check.

use serde::Serialize;
use std::io::Write;

use crate::error::{Error, Result};
use crate::fixed_point::{evaluate_policy, improve, PolicyValueSolution};
use crate::measure::MeasureSlice;
use crate::model::LqModel;
use crate::particle_sim::{simulate, DecisionGrid, Dynamics, PathFunctionals, SimConfig};
use crate::policy::{GaussianPolicy, Policy};
use crate::scalar::{to_f64, Real};

/// Share of replications that may fail before an estimate is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig<T: Real> {
    pub particles: usize,
    pub steps: usize,
    pub decision: DecisionGrid,
    pub replications: usize,
    pub seed: u64,
    pub initial: MeasureSlice<T>,
    pub base_steps: Option<usize>,
    pub dynamics: Dynamics,
}

impl<T: Real> McConfig<T> {
    fn sim(&self, replication: usize) -> SimConfig<T> {
        SimConfig {
            particles: self.particles,
            steps: self.steps,
            decision: self.decision.clone(),
            seed: self.seed,
            replication: replication as u64,
            initial: self.initial.clone(),
            base_steps: self.base_steps,
            aux_common: false,
            record_states: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    /// `running + entropy + terminal`.
    pub estimate: f64,
    pub std_error: f64,
    pub replications: usize,
    pub failures: usize,
    pub running: f64,
    pub entropy: f64,
    pub terminal: f64,
    /// Estimate minus the reference value, when one was given.
    pub gap: Option<f64>,
    /// Per-replication totals in replication order.
    pub samples: Vec<Option<f64>>,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Runs every replication; failed replications are `None`.
fn replicate<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &McConfig<T>,
) -> Result<Vec<Option<PathFunctionals<f64>>>> {
    if cfg.replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    let mut out = Vec::with_capacity(cfg.replications);
    for r in 0..cfg.replications {
        match simulate(model, policy, &cfg.sim(r), cfg.dynamics) {
            Ok(tr) => out.push(Some(PathFunctionals {
                running: to_f64(tr.functionals.running),
                entropy: to_f64(tr.functionals.entropy),
                terminal: to_f64(tr.functionals.terminal),
            })),
            Err(Error::Divergence { step, last_valid_t }) => {
                log::warn!("replication {r} diverged at step {step} (t = {last_valid_t})");
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let failures = out.iter().filter(|x| x.is_none()).count();
    if failures as f64 > MAX_FAILURE_FRACTION * cfg.replications as f64 {
        return Err(Error::Divergence {
            step: 0,
            last_valid_t: f64::NAN,
        });
    }
    if failures > 0 {
        log::warn!("excluding {failures} diverged replications");
    }
    Ok(out)
}

fn summarize(runs: &[Option<PathFunctionals<f64>>], reference: Option<f64>) -> ValueEstimate {
    let ok: Vec<&PathFunctionals<f64>> = runs.iter().flatten().collect();
    let n = ok.len() as f64;
    let running = ok.iter().map(|p| p.running).sum::<f64>() / n;
    let entropy = ok.iter().map(|p| p.entropy).sum::<f64>() / n;
    let terminal = ok.iter().map(|p| p.terminal).sum::<f64>() / n;
    let totals: Vec<f64> = ok.iter().map(|p| p.total()).collect();
    let (_, se) = mean_and_se(&totals);
    let estimate = running + entropy + terminal;
    ValueEstimate {
        estimate,
        std_error: se,
        replications: ok.len(),
        failures: runs.len() - ok.len(),
        running,
        entropy,
        terminal,
        gap: reference.map(|r| estimate - r),
        samples: runs.iter().map(|r| r.map(|p| p.total())).collect(),
    }
}

/// Monte Carlo value of `policy` from `cfg.initial`, averaging the
/// population-average functional over replications.
pub fn estimate_value<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &McConfig<T>,
    reference: Option<f64>,
) -> Result<ValueEstimate> {
    Ok(summarize(&replicate(model, policy, cfg)?, reference))
}

/// Value under the sampled dynamics.
pub fn estimate_value_sampled<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &McConfig<T>,
    reference: Option<f64>,
) -> Result<ValueEstimate> {
    let cfg = McConfig {
        dynamics: Dynamics::Sampled,
        ..cfg.clone()
    };
    estimate_value(model, policy, &cfg, reference)
}

/// Value under the relaxed dynamics.
pub fn estimate_value_relaxed<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &McConfig<T>,
    reference: Option<f64>,
) -> Result<ValueEstimate> {
    let cfg = McConfig {
        dynamics: Dynamics::Relaxed,
        ..cfg.clone()
    };
    estimate_value(model, policy, &cfg, reference)
}

/// Mean and standard error of paired differences `b − a` over replications
/// where both runs succeeded.
pub fn paired_difference(a: &ValueEstimate, b: &ValueEstimate) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .samples
        .iter()
        .zip(&b.samples)
        .filter_map(|(x, y)| Some((*y)? - (*x)?))
        .collect();
    mean_and_se(&diffs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub grid: f64,
    pub gap: f64,
    pub std_error: f64,
    pub replications: usize,
    /// Standard error of the paired difference with the next coarser grid.
    pub paired_se_to_coarser: Option<f64>,
    pub used_in_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    pub particles: usize,
    pub reference: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Fewer than three gaps exceeded three standard errors.
    pub inconclusive: bool,
    /// Every refinement step satisfied `gap_fine ≤ gap_coarse + 2·SE`.
    pub monotone: bool,
    pub estimates: Vec<ValueEstimate>,
}

impl RateStudy {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "grid",
            "gap",
            "stderr",
            "replications",
            "paired_se",
            "used_in_fit",
        ])?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.grid),
                format!("{:e}", r.gap),
                format!("{:e}", r.std_error),
                r.replications.to_string(),
                r.paired_se_to_coarser
                    .map_or(String::new(), |v| format!("{v:e}")),
                r.used_in_fit.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return Err(Error::Fit {
            needed: 3,
            got: xs.len().min(ys.len()),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit { needed: 3, got: 1 });
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Gap `J^𝒟 − J̃` of the sampled value on each decision grid, with common
/// random numbers across grids; fits `log|gap|` against `log|𝒟|`.
///
/// `grids` are decision spacings; each must divide the horizon. The
/// simulation step equals the decision spacing and noise is generated at
/// the finest spacing.
pub fn convergence_study<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    grids: &[f64],
    cfg: &McConfig<T>,
    reference: f64,
) -> Result<RateStudy> {
    if grids.len() < 3 {
        return Err(Error::Fit {
            needed: 3,
            got: grids.len(),
        });
    }
    let horizon = to_f64(model.horizon());
    let mut sorted = grids.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let steps_of = |h: f64| -> Result<usize> {
        let r = horizon / h;
        let k = r.round();
        if k < 1.0 || (r - k).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grid {h} does not divide the horizon {horizon}"
            )));
        }
        Ok(k as usize)
    };
    let finest = steps_of(*sorted.last().expect("non-empty"))?;
    let mut estimates = Vec::with_capacity(sorted.len());
    for &h in &sorted {
        let steps = steps_of(h)?;
        if finest % steps != 0 {
            return Err(Error::Config(format!(
                "grid {h} is not nested in the finest grid"
            )));
        }
        let c = McConfig {
            steps,
            decision: DecisionGrid::Uniform(steps),
            base_steps: Some(finest),
            dynamics: Dynamics::Sampled,
            ..cfg.clone()
        };
        estimates.push(estimate_value(model, policy, &c, Some(reference))?);
    }

    let mut rows = Vec::with_capacity(sorted.len());
    let mut monotone = true;
    for (i, (&h, e)) in sorted.iter().zip(&estimates).enumerate() {
        let gap = e.gap.expect("reference supplied");
        let paired = (i > 0).then(|| {
            let prev = &estimates[i - 1];
            // |gap| comparison via paired totals: the sign of the gap is
            // taken from the coarser grid.
            let sign = prev.gap.expect("reference").signum();
            let (_, se) = paired_difference(prev, e);
            let coarse = prev.gap.expect("reference") * sign;
            if gap * sign > coarse + 2.0 * se {
                monotone = false;
            }
            se
        });
        rows.push(RateRow {
            grid: h,
            gap,
            std_error: e.std_error,
            replications: e.replications,
            paired_se_to_coarser: paired,
            used_in_fit: gap.abs() > 3.0 * e.std_error,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.used_in_fit)
        .map(|r| (r.grid.ln(), r.gap.abs().ln()))
        .unzip();
    let (slope, intercept, inconclusive) = match fit_line(&xs, &ys) {
        Ok((s, b)) => (Some(s), Some(b), false),
        Err(_) => (None, None, true),
    };
    Ok(RateStudy {
        rows,
        particles: cfg.particles,
        reference,
        slope,
        intercept,
        inconclusive,
        monotone,
        estimates,
    })
}

/// Difference of estimates at `N` and `2N` particles, a probe for the
/// finite-population bias.
pub fn population_probe<T: Real, P: Policy<T> + ?Sized>(
    model: &LqModel<T>,
    policy: &P,
    cfg: &McConfig<T>,
) -> Result<(ValueEstimate, ValueEstimate)> {
    let a = estimate_value(model, policy, cfg, None)?;
    let doubled = McConfig {
        particles: 2 * cfg.particles,
        ..cfg.clone()
    };
    let b = estimate_value(model, policy, &doubled, None)?;
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementReport {
    pub value_pi: f64,
    pub value_improved: f64,
    /// Closed-form `J(𝓘(π)) − J(π)`.
    pub gap: f64,
    pub mc_pi: Option<ValueEstimate>,
    pub mc_improved: Option<ValueEstimate>,
    /// Monte Carlo gap from paired replications and its standard error.
    pub mc_gap: Option<(f64, f64)>,
    pub passes: bool,
}

/// Closed-form tolerance on the improvement gap.
pub const CLOSED_FORM_SLACK: f64 = 1e-9;

/// Compares `J(π)` with `J(𝓘(π))` at `t = 0` from `cfg.initial`, in closed
/// form and, when `mc` is given, by Monte Carlo with common random numbers.
pub fn improvement_check<T: Real>(
    model: &LqModel<T>,
    policy: &GaussianPolicy<T>,
    steps: usize,
    mc: Option<&McConfig<T>>,
    initial: &MeasureSlice<T>,
) -> Result<ImprovementReport> {
    let value: PolicyValueSolution<T> = evaluate_policy(model, policy, steps)?;
    let improved = improve(model, &value)?;
    let value_next = evaluate_policy(model, &improved, steps)?;
    let j0 = to_f64(value.value_at(T::zero(), initial));
    let j1 = to_f64(value_next.value_at(T::zero(), initial));
    let gap = j1 - j0;
    if gap < -CLOSED_FORM_SLACK {
        return Err(Error::InvariantViolation(format!(
            "improved policy lowers the value by {:e}",
            -gap
        )));
    }
    let (mc_pi, mc_improved, mc_gap, mc_ok) = match mc {
        Some(cfg) => {
            let cfg = McConfig {
                initial: initial.clone(),
                ..cfg.clone()
            };
            let a = estimate_value(model, policy, &cfg, Some(j0))?;
            let b = estimate_value(model, &improved, &cfg, Some(j1))?;
            let (d, se) = paired_difference(&a, &b);
            let ok = (d - gap).abs() <= 3.0 * se;
            (Some(a), Some(b), Some((d, se)), ok)
        }
        None => (None, None, None, true),
    };
    Ok(ImprovementReport {
        value_pi: j0,
        value_improved: j1,
        gap,
        mc_pi,
        mc_improved,
        mc_gap,
        passes: mc_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, LqModel};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn line_fit() {
        let (s, b) = fit_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-14);
        assert!(matches!(fit_line(&[1.0], &[1.0]), Err(Error::Fit { .. })));
    }

    #[test]
    fn null_model_estimate_is_zero() {
        let model = LqModel::zeros(Dims { d: 1, p: 1 }, 1.0, 1e-300).unwrap();
        let pi = GaussianPolicy::open_loop(1.0, 1, DMatrix::from_element(1, 1, 1.0)).unwrap();
        let cfg = McConfig {
            particles: 8,
            steps: 4,
            decision: DecisionGrid::Uniform(4),
            replications: 5,
            seed: 1,
            initial: MeasureSlice::dirac(DVector::zeros(1)),
            base_steps: None,
            dynamics: Dynamics::Sampled,
        };
        let e = estimate_value_sampled(&model, &pi, &cfg, None).unwrap();
        assert!(e.estimate.abs() < 1e-290);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.estimate, e.running + e.entropy + e.terminal);
    }

    #[test]
    fn study_needs_three_grids() {
        let model = LqModel::zeros(Dims { d: 1, p: 1 }, 1.0, 1.0).unwrap();
        let pi = GaussianPolicy::open_loop(1.0, 1, DMatrix::from_element(1, 1, 1.0)).unwrap();
        let cfg = McConfig {
            particles: 8,
            steps: 4,
            decision: DecisionGrid::Uniform(4),
            replications: 2,
            seed: 1,
            initial: MeasureSlice::standard(1),
            base_steps: None,
            dynamics: Dynamics::Sampled,
        };
        let r = convergence_study(&model, &pi, &[0.5], &cfg, 0.0);
        assert!(matches!(r, Err(Error::Fit { needed: 3, got: 1 })));
    }
}
