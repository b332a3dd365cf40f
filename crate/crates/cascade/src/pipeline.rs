//! Cascade orchestration: synthesize each step's protocol, integrate it,
//! stitch global physical time, measure the decay curve, and fit rate models.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::controller::{
    downhill_protocol, uphill_protocol, ContractionLog, ControlError, ProtocolSynthesis,
};
use crate::integrator::{integrate, IntegrateError, IntegrateOpts, LineDiffusion, StateVector};
use crate::pde_bridge::{
    full_lattice_simulate, lift_state, BridgeError, LatticeField, VelocityField,
};
use crate::planner::{CascadePlan, PlanError, TransferStep};
use crate::spectrum::{check_assumptions, rat_from_f64, rat_to_f64, Direction};

#[derive(Debug)]
pub enum PipelineError {
    Plan(PlanError),
    Control {
        step_index: usize,
        source: ControlError,
    },
    Integrate {
        step_index: usize,
        source: IntegrateError,
    },
    Bridge {
        step_index: usize,
        source: BridgeError,
    },
    ResidualTooLarge {
        step_index: usize,
        residual: f64,
    },
    InsufficientData {
        have: usize,
        need: usize,
    },
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Plan(e) => write!(f, "{e}"),
            PipelineError::Control { step_index, source } => {
                write!(f, "step {step_index}: {source}")
            }
            PipelineError::Integrate { step_index, source } => {
                write!(f, "step {step_index}: {source}")
            }
            PipelineError::Bridge { step_index, source } => {
                write!(f, "step {step_index}: {source}")
            }
            PipelineError::ResidualTooLarge {
                step_index,
                residual,
            } => write!(
                f,
                "step {step_index}: off-mode residual {residual:.3e} exceeds 1e-8"
            ),
            PipelineError::InsufficientData { have, need } => {
                write!(f, "decay fit needs {need} samples, have {have}")
            }
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<PlanError> for PipelineError {
    fn from(e: PlanError) -> Self {
        PipelineError::Plan(e)
    }
}

/// One decay-curve sample in global physical time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecaySample {
    pub t: f64,
    pub mass: f64,
    pub log_mass: f64,
    pub dirichlet_ratio: f64,
    pub step_index: usize,
    pub phase: String,
}

/// Energy-identity bookkeeping for one protocol phase of one step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub label: String,
    pub t0: f64,
    pub t1: f64,
    pub dlog_mass: f64,
    /// Integral of the physical Dirichlet ratio over the span (physical time).
    pub dirichlet_integral: f64,
    /// |dlog_mass + 2 * dirichlet_integral| / |dlog_mass|.
    pub identity_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub direction: Direction,
    pub duration_rescaled: f64,
    pub duration_physical: f64,
    /// Lifted carrier amplitude at the end of the step, (re, im).
    pub beta: (f64, f64),
    pub off_mode_residual: f64,
    /// Exact margins of the admissibility check, as floats.
    pub margin_m: f64,
    pub margin_s: f64,
    pub margin_spacing: f64,
    /// Sobolev norm bounds of the lifted field at n = 0..=3.
    pub sup_norm_bounds: Vec<f64>,
    pub contraction: ContractionLog,
    /// |z^0|, |z^1| after the feedback segment (uphill steps).
    pub stage1: Option<(f64, f64)>,
    /// |z^1| after the push (downhill steps).
    pub rho: Option<f64>,
    pub wait: f64,
    pub phases: Vec<PhaseSpan>,
    /// Mean exponential decay rate -dlog_mass / dt over the step.
    pub mean_rate: f64,
}

/// Oracle cross-check results for one step (present under --oracle).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRecord {
    pub step_index: usize,
    /// Max relative l2 distance between the lifted reduced state and the
    /// full-lattice field over the checkpoints.
    pub max_checkpoint_distance: f64,
    pub checkpoints: usize,
    pub off_line_mass: f64,
    /// Max mass fraction found strictly inside the exclusion ball.
    pub support_leak: f64,
    pub phase_identity_residuals: Vec<(String, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    DoubleExp,
    TSquared,
    Exp,
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitModel::DoubleExp => write!(f, "double-exp"),
            FitModel::TSquared => write!(f, "t2"),
            FitModel::Exp => write!(f, "exp"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    /// DoubleExp: (intercept, rate); TSquared and Exp: (intercept,).
    pub params: Vec<f64>,
    /// RMS residual of log(-log mass) against the model, normalized by the
    /// standard deviation of the data.
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub plan: CascadePlan,
    pub config: Config,
    pub phase_log: Vec<StepRecord>,
    pub decay_samples: Vec<DecaySample>,
    pub fits: Vec<FitResult>,
    /// -dlog_mass / dt per block, for rate-growth checks.
    pub block_rates: Vec<f64>,
    pub total_duration: f64,
    pub final_log_mass: f64,
    /// Sum of per-step ledger contributions 2 ln|beta_lifted|.
    pub ledger_log_mass: f64,
    /// |final - ledger| / |final|.
    pub ledger_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<OracleRecord>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub with_oracle: bool,
}

fn synthesize(
    step: &TransferStep,
    config: &Config,
    step_index: usize,
) -> Result<ProtocolSynthesis, PipelineError> {
    let synth = match step.direction {
        Direction::Uphill => uphill_protocol(&step.spectrum, config),
        Direction::Downhill => {
            let eta = (-step.a.norm()).exp() * step.alpha;
            downhill_protocol(&step.spectrum, eta, config)
        }
    };
    synth.map_err(|source| PipelineError::Control { step_index, source })
}

/// Checkpoint times for the oracle comparison: a spread of segment
/// boundaries of the synthesized field.
fn checkpoint_times(synth: &ProtocolSynthesis, count: usize) -> Vec<f64> {
    let boundaries: Vec<f64> = synth.field.segments().iter().map(|s| s.t1()).collect();
    if boundaries.len() <= count {
        return boundaries;
    }
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let idx = i * boundaries.len() / count - 1;
        let t = boundaries[idx];
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// Run every step of the plan, stitching rescaled protocol time into global
/// physical time (physical duration = rescaled duration / L per step). After
/// each step the state is renormalized to an exact delta on the next line
/// and the carrier amplitude goes into the mass ledger.
pub fn run_cascade(
    plan: &CascadePlan,
    config: &Config,
    options: RunOptions,
) -> Result<DecayReport, PipelineError> {
    let mut t_global = 0.0f64;
    let mut ledger = 0.0f64; // cumulative 2 ln |beta| over finished steps
    let mut phase_log = Vec::new();
    let mut decay_samples = Vec::new();
    let mut oracle_records = Vec::new();

    decay_samples.push(DecaySample {
        t: 0.0,
        mass: 1.0,
        log_mass: 0.0,
        dirichlet_ratio: plan.mode_trace.first().map_or(0.0, |m| m.norm_sq() as f64),
        step_index: 0,
        phase: "initial".to_string(),
    });

    for (step_index, step) in plan.steps.iter().enumerate() {
        let synth = synthesize(step, config, step_index)?;
        let line = LineDiffusion::from_spectrum(&step.spectrum);
        let span = synth.field.span();
        let l = rat_to_f64(&step.spectrum.rescale);
        let shift = rat_to_f64(&step.spectrum.shift);

        let snapshot_times = if options.with_oracle {
            checkpoint_times(&synth, 8)
        } else {
            Vec::new()
        };
        let rec = integrate(
            &StateVector::delta(step.spectrum.window, 0),
            &synth.field,
            &line,
            span.0,
            span.1,
            config,
            &IntegrateOpts {
                snapshot_times: snapshot_times.clone(),
                ..Default::default()
            },
        )
        .map_err(|source| PipelineError::Integrate { step_index, source })?;

        let (_, final_ratio) = crate::integrator::mass_and_ratio(&rec.final_state)
            .map_err(|source| PipelineError::Integrate { step_index, source })?;
        if final_ratio > 1e-8 {
            return Err(PipelineError::ResidualTooLarge {
                step_index,
                residual: final_ratio,
            });
        }

        // Decay samples in global physical time. The lifted mass carries the
        // e^{-2 A t} factor; the physical Dirichlet ratio is L (A + ratio).
        let stride = config.sample_stride.max(1);
        let phase_at = |t: f64| -> &str {
            let mut label = "";
            for (mark, name) in &synth.phase_marks {
                if t >= *mark - 1e-12 {
                    label = name;
                }
            }
            label
        };
        for (i, s) in rec.samples.iter().enumerate() {
            if i % stride != 0 && i + 1 != rec.samples.len() {
                continue;
            }
            if i == 0 && step_index > 0 {
                continue; // the previous step's endpoint is already recorded
            }
            let log_mass = ledger + s.mass.ln() - 2.0 * shift * s.t;
            decay_samples.push(DecaySample {
                t: t_global + s.t / l,
                mass: log_mass.exp(),
                log_mass,
                dirichlet_ratio: l * (shift + s.dissipation_ratio),
                step_index,
                phase: phase_at(s.t).to_string(),
            });
        }

        // Per-phase identity spans from the scheme-accumulated integrals.
        // In physical time d log m = -2 L (A + ratio) dt_phys, and
        // dt_phys = dt_resc / L, so the integral is A dt_resc + ratio_integral.
        let mut phases = Vec::new();
        let mut marks: Vec<(f64, String)> = synth.phase_marks.clone();
        marks.push((span.1, "end".to_string()));
        for w in marks.windows(2) {
            let (t0, ref label) = w[0];
            let (t1, _) = w[1];
            let s0 = rec
                .samples
                .iter()
                .find(|s| s.t >= t0 - 1e-12)
                .expect("phase start sample");
            let s1 = rec
                .samples
                .iter()
                .rev()
                .find(|s| s.t <= t1 + 1e-12)
                .expect("phase end sample");
            let dlog = (s1.mass / s0.mass).ln() - 2.0 * shift * (s1.t - s0.t);
            let integral = shift * (s1.t - s0.t) + (s1.ratio_integral - s0.ratio_integral);
            let residual = if dlog.abs() > 0.0 {
                (dlog + 2.0 * integral).abs() / dlog.abs()
            } else {
                0.0
            };
            phases.push(PhaseSpan {
                label: label.clone(),
                t0: t_global + t0 / l,
                t1: t_global + t1 / l,
                dlog_mass: dlog,
                dirichlet_integral: integral,
                identity_residual: residual,
            });
        }

        // Oracle cross-check: independent full-lattice run on the same field.
        if options.with_oracle {
            let vf = VelocityField::new(step.clone(), synth.field.clone());
            let theta0 = LatticeField::single_mode(&step.a);
            let phys_times: Vec<f64> = snapshot_times.iter().map(|t| t / l).collect();
            let oracle = full_lattice_simulate(
                &theta0,
                &vf,
                config.oracle_box,
                &phys_times,
                f64::INFINITY,
                config.dt_safety,
            )
            .map_err(|source| PipelineError::Bridge { step_index, source })?;

            let exclusion_radius_sq = match step.direction {
                Direction::Uphill => step.a.norm_sq(),
                Direction::Downhill => step.c.norm_sq(),
            };
            let mut max_distance = 0.0f64;
            let mut support_leak = 0.0f64;
            for ((t_resc, z), (_, theta)) in rec.snapshots.iter().zip(&oracle.checkpoints) {
                let lifted = lift_state(z, *t_resc, step);
                max_distance = max_distance.max(lifted.rel_l2_distance(theta));
                support_leak = support_leak.max(theta.mass_inside_ball(exclusion_radius_sq));
            }
            let mut residuals = Vec::new();
            for w in marks.windows(2) {
                let t0 = w[0].0 / l;
                let t1 = w[1].0 / l;
                let lo = oracle
                    .samples
                    .iter()
                    .position(|s| s.0 >= t0 - 1e-12)
                    .unwrap_or(0);
                let hi = oracle
                    .samples
                    .iter()
                    .rposition(|s| s.0 <= t1 + 1e-12)
                    .unwrap_or(0);
                let dlog = (oracle.samples[hi].1 / oracle.samples[lo].1).ln();
                let di = oracle.dissipation_integral[hi] - oracle.dissipation_integral[lo];
                let residual = if dlog.abs() > 0.0 {
                    (dlog + 2.0 * di).abs() / dlog.abs()
                } else {
                    0.0
                };
                residuals.push((w[0].1.clone(), residual));
            }
            oracle_records.push(OracleRecord {
                step_index,
                max_checkpoint_distance: max_distance,
                checkpoints: oracle.checkpoints.len(),
                off_line_mass: oracle.off_line_mass,
                support_leak,
                phase_identity_residuals: residuals,
            });
        }

        // Margins and lifted-field norm bounds for the report.
        let report = check_assumptions(
            &step.spectrum,
            &rat_from_f64(config.m_min),
            &rat_from_f64(config.s_max),
        )
        .expect("planned spectrum is checkable");
        let vf = VelocityField::new(step.clone(), synth.field.clone());
        let sup_norm_bounds: Vec<f64> = (0..=3)
            .map(|n| crate::pde_bridge::sobolev_norm_bound(&vf, n))
            .collect();

        // Ledger update: the lifted carrier amplitude at the end of the step.
        let beta_raw = rec.final_state.get(1);
        let beta_lifted = beta_raw * (-shift * (span.1 - span.0)).exp();
        let duration_physical = (span.1 - span.0) / l;
        let dlog_step = 2.0 * beta_lifted.norm().ln();
        let mean_rate = -dlog_step / duration_physical;
        ledger += dlog_step;
        t_global += duration_physical;

        phase_log.push(StepRecord {
            step_index,
            direction: step.direction,
            duration_rescaled: span.1 - span.0,
            duration_physical,
            beta: (beta_lifted.re, beta_lifted.im),
            off_mode_residual: final_ratio,
            margin_m: report.m_f64(),
            margin_s: report.s_f64(),
            margin_spacing: rat_to_f64(&report.spacing_margin),
            sup_norm_bounds,
            contraction: synth.contraction.clone(),
            stage1: synth.stage1,
            rho: synth.rho,
            wait: synth.wait,
            phases,
            mean_rate,
        });
    }

    let final_log_mass = decay_samples.last().map_or(0.0, |s| s.log_mass);
    let ledger_residual = if final_log_mass != 0.0 {
        (ledger - final_log_mass).abs() / final_log_mass.abs()
    } else {
        0.0
    };

    // Per-block mean exponential rates.
    let per_block = plan.steps_per_block();
    let block_rates: Vec<f64> = phase_log
        .chunks(per_block)
        .filter(|chunk| chunk.len() == per_block)
        .map(|chunk| {
            let dlog: f64 = chunk
                .iter()
                .map(|r| 2.0 * Complex64::new(r.beta.0, r.beta.1).norm().ln())
                .sum();
            let dt: f64 = chunk.iter().map(|r| r.duration_physical).sum();
            -dlog / dt
        })
        .collect();

    let mut report = DecayReport {
        plan: plan.clone(),
        config: config.clone(),
        phase_log,
        decay_samples,
        fits: Vec::new(),
        block_rates,
        total_duration: t_global,
        final_log_mass,
        ledger_log_mass: ledger,
        ledger_residual,
        oracle: if options.with_oracle {
            Some(oracle_records)
        } else {
            None
        },
    };
    for model in [FitModel::DoubleExp, FitModel::TSquared, FitModel::Exp] {
        if let Ok(fit) = fit_decay(&report, model) {
            report.fits.push(fit);
        }
    }
    Ok(report)
}

/// Least-squares fit of u = log(-log mass) against the chosen model over
/// the samples past the first step (the transient is excluded).
pub fn fit_decay(report: &DecayReport, model: FitModel) -> Result<FitResult, PipelineError> {
    let pts: Vec<(f64, f64)> = report
        .decay_samples
        .iter()
        .filter(|s| s.step_index >= 1 && s.log_mass < 0.0 && s.t > 0.0)
        .map(|s| (s.t, (-s.log_mass).ln()))
        .collect();
    if pts.len() < 10 {
        return Err(PipelineError::InsufficientData {
            have: pts.len(),
            need: 10,
        });
    }
    let n = pts.len() as f64;
    let mean_u = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let var_u = pts
        .iter()
        .map(|p| (p.1 - mean_u) * (p.1 - mean_u))
        .sum::<f64>()
        / n;
    let scale = var_u.sqrt().max(1e-12);

    let (params, rss) = match model {
        FitModel::DoubleExp => {
            // u = c + b t, both fitted.
            let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_u)).sum();
            let b = sxy / sxx;
            let c = mean_u - b * mean_t;
            let rss: f64 = pts
                .iter()
                .map(|p| {
                    let r = p.1 - (c + b * p.0);
                    r * r
                })
                .sum();
            (vec![c, b], rss)
        }
        FitModel::TSquared | FitModel::Exp => {
            // u = c + slope ln t with the model's pinned slope.
            let slope = if model == FitModel::TSquared {
                2.0
            } else {
                1.0
            };
            let c = pts.iter().map(|p| p.1 - slope * p.0.ln()).sum::<f64>() / n;
            let rss: f64 = pts
                .iter()
                .map(|p| {
                    let r = p.1 - (c + slope * p.0.ln());
                    r * r
                })
                .sum();
            (vec![c], rss)
        }
    };
    Ok(FitResult {
        model,
        params,
        residual: (rss / n).sqrt() / scale,
    })
}

/// Largest per-phase energy-identity residual over all steps; zero for an
/// empty report.
pub fn energy_identity_check(report: &DecayReport) -> f64 {
    report
        .phase_log
        .iter()
        .flat_map(|rec| rec.phases.iter())
        .map(|p| p.identity_residual)
        .fold(0.0, f64::max)
}

/// 2D time ledger: cumulative physical time to reach block n grows like a
/// sum of 1/r terms, i.e. logarithmically in the block index. Returns the
/// fitted slope of t_n against ln n for n >= 4, the local asymptote
/// n * (block duration), and their relative deviation. None when the plan
/// has fewer than six blocks.
pub fn time_ledger_check(report: &DecayReport) -> Option<(f64, f64, f64)> {
    let per_block = report.plan.steps_per_block();
    let durations: Vec<f64> = report
        .phase_log
        .chunks(per_block)
        .filter(|c| c.len() == per_block)
        .map(|c| c.iter().map(|r| r.duration_physical).sum::<f64>())
        .collect();
    if durations.len() < 6 {
        return None;
    }
    let mut cumulative = 0.0;
    let mut pts = Vec::new(); // (ln n, t_n) for n >= 4
    let mut asymptote = Vec::new();
    for (i, d) in durations.iter().enumerate() {
        cumulative += d;
        let n = i + 1;
        if n >= 4 {
            pts.push(((n as f64).ln(), cumulative));
            asymptote.push(n as f64 * d);
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let asym = asymptote.iter().sum::<f64>() / asymptote.len() as f64;
    Some((slope, asym, (slope / asym - 1.0).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::build_cascade;
    use crate::spectrum::LatticeVector;

    fn desk_config() -> Config {
        Config {
            m_min: 8.0,
            ..Config::default()
        }
    }

    fn empty_report(cfg: &Config) -> DecayReport {
        let plan = build_cascade(2, &LatticeVector::new(&[8, 0]), 0, cfg).unwrap();
        DecayReport {
            plan,
            config: cfg.clone(),
            phase_log: Vec::new(),
            decay_samples: Vec::new(),
            fits: Vec::new(),
            block_rates: Vec::new(),
            total_duration: 0.0,
            final_log_mass: 0.0,
            ledger_log_mass: 0.0,
            ledger_residual: 0.0,
            oracle: None,
        }
    }

    #[test]
    fn zero_step_plan_reports_initial_sample_only() {
        let cfg = desk_config();
        let plan = build_cascade(3, &LatticeVector::new(&[5, 0, 0]), 0, &cfg).unwrap();
        let report = run_cascade(&plan, &cfg, RunOptions::default()).unwrap();
        assert_eq!(report.decay_samples.len(), 1);
        assert_eq!(report.final_log_mass, 0.0);
        assert!(report.phase_log.is_empty());
        assert_eq!(energy_identity_check(&report), 0.0);
    }

    #[test]
    fn single_2d_block_ledger_and_identity() {
        let cfg = desk_config();
        let plan = build_cascade(2, &LatticeVector::new(&[8, 0]), 1, &cfg).unwrap();
        let report = run_cascade(&plan, &cfg, RunOptions::default()).unwrap();
        assert_eq!(report.phase_log.len(), 2);
        assert!(
            report.ledger_residual < 1e-8,
            "ledger residual {}",
            report.ledger_residual
        );
        let worst = energy_identity_check(&report);
        assert!(worst < 1e-6, "identity residual {worst:.3e}");
        for w in report.decay_samples.windows(2) {
            assert!(
                w[1].log_mass <= w[0].log_mass + 1e-12,
                "log mass increased at t = {}",
                w[1].t
            );
        }
        // Dirichlet floor: inside step n the ratio is at least the squared
        // norm of the step's source mode.
        for s in &report.decay_samples {
            if s.phase == "initial" {
                continue;
            }
            let floor = report.plan.steps[s.step_index].a.norm_sq() as f64;
            assert!(
                s.dirichlet_ratio >= floor - 1e-6,
                "Dirichlet ratio {} below floor {} at t = {}",
                s.dirichlet_ratio,
                floor,
                s.t
            );
        }
    }

    #[test]
    fn synthetic_double_exp_fit_recovers_rate() {
        let cfg = desk_config();
        let mut report = empty_report(&cfg);
        for i in 0..60 {
            let t = 0.05 * (i + 1) as f64;
            let log_mass = -(0.3 * t).exp();
            report.decay_samples.push(DecaySample {
                t,
                mass: log_mass.exp(),
                log_mass,
                dirichlet_ratio: 0.0,
                step_index: 1,
                phase: "synthetic".to_string(),
            });
        }
        let fit = fit_decay(&report, FitModel::DoubleExp).unwrap();
        assert!((fit.params[1] - 0.3).abs() < 1e-6, "rate {}", fit.params[1]);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn two_d_time_ledger_is_logarithmic() {
        // Cumulative physical time grows like a harmonic sum, so t_n against
        // ln n has slope near n * (block duration) on the fit window.
        let cfg = desk_config();
        let plan = build_cascade(2, &LatticeVector::new(&[8, 0]), 6, &cfg).unwrap();
        let report = run_cascade(&plan, &cfg, RunOptions::default()).unwrap();
        let (slope, asymptote, deviation) = time_ledger_check(&report).unwrap();
        assert!(
            deviation <= 0.2,
            "slope {slope:.4} vs asymptote {asymptote:.4}: {:.1}% off",
            deviation * 100.0
        );
    }

    #[test]
    fn insufficient_data_is_reported() {
        let cfg = desk_config();
        let report = empty_report(&cfg);
        assert!(matches!(
            fit_decay(&report, FitModel::Exp),
            Err(PipelineError::InsufficientData { .. })
        ));
    }
}
