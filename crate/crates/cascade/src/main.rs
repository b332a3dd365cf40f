//! Command-line interface: plan cascades, check admissibility, synthesize
//! coefficient fields, run and verify decay measurements, render reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cascade::config::Config;
use cascade::controller::{downhill_protocol, uphill_protocol};
use cascade::pipeline::{
    energy_identity_check, fit_decay, run_cascade, time_ledger_check, DecayReport, FitModel,
    RunOptions,
};
use cascade::planner::{build_cascade, sphere_geometry_check, CascadePlan};
use cascade::report::{decay_csv, decay_svg};
use cascade::spectrum::{
    build_line_spectrum, check_assumptions, rat_from_f64, rat_to_f64, Direction, LatticeVector,
};

#[derive(Parser)]
#[command(
    name = "cascade",
    version,
    about = "Mode-to-mode transfer cascades for the advection-diffusion equation on the torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Admissibility floor for M.
    #[arg(long)]
    m_min: Option<f64>,
    /// Admissibility ceiling for S.
    #[arg(long)]
    s_max: Option<f64>,
    /// Integrator step-bound numerator.
    #[arg(long)]
    dt_safety: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_file(path)
                .map_err(|e| anyhow::anyhow!("{e}"))
                .with_context(|| format!("loading {}", path.display()))?,
            None => Config::default(),
        };
        if let Some(v) = self.m_min {
            cfg.m_min = v;
        }
        if let Some(v) = self.s_max {
            cfg.s_max = v;
        }
        if let Some(v) = self.dt_safety {
            cfg.dt_safety = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a cascade plan and print its mode trace and margins.
    Plan {
        /// Dimension of the torus: 2, 3, or 4.
        #[arg(long)]
        dim: usize,
        /// Starting mode, comma-separated integers (e.g. 8,0).
        #[arg(long)]
        start: String,
        /// Number of blocks to chain.
        #[arg(long)]
        steps: usize,
        /// Fourth coordinate for 4D plans given a 3-component start.
        #[arg(long)]
        p: Option<i64>,
        /// Output path for the plan JSON.
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-check every step of a plan against the configured thresholds.
    Check {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Synthesize the coefficient fields for every step of a plan.
    Synth {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "fields.json")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the cascade: synthesize, integrate, measure decay.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Also run the independent full-lattice oracle per step.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Decay series CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the invariant suite on a report; exit code = failure count.
    Verify {
        #[arg(long)]
        report: PathBuf,
    },
    /// Render the decay curve with a fitted model to SVG.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "decay.svg")]
        svg: PathBuf,
        /// Fit model: double-exp, t2, or exp.
        #[arg(long, default_value = "double-exp")]
        fit: String,
    },
}

fn parse_start(text: &str) -> anyhow::Result<Vec<i64>> {
    text.split(',')
        .map(|c| {
            c.trim()
                .parse::<i64>()
                .with_context(|| format!("bad coordinate `{c}`"))
        })
        .collect()
}

fn load_plan(path: &PathBuf) -> anyhow::Result<CascadePlan> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_plan(
    dim: usize,
    start: &str,
    steps: usize,
    p: Option<i64>,
    out: &PathBuf,
    cfg: &Config,
) -> anyhow::Result<()> {
    let mut coords = parse_start(start)?;
    if dim == 4 && coords.len() == 3 {
        coords.push(p.unwrap_or(cfg.p));
    }
    if coords.len() != dim {
        bail!("start {start} does not have dimension {dim}");
    }
    let plan = build_cascade(dim, &LatticeVector(coords), steps, cfg)?;

    println!("{:>5} {:>18} {:>10}", "block", "mode", "|mode|^2");
    for (i, mode) in plan.mode_trace.iter().enumerate() {
        println!("{i:>5} {:>18} {:>10}", format!("{mode}"), mode.norm_sq());
    }
    println!();
    println!(
        "{:>4} {:>9} {:>24} {:>10} {:>8} {:>9} {:>7} {:>9}",
        "step", "dir", "a -> c", "M", "S", "spacing", "alpha", "K"
    );
    for (i, step) in plan.steps.iter().enumerate() {
        let report = check_assumptions(
            &step.spectrum,
            &rat_from_f64(cfg.m_min),
            &rat_from_f64(cfg.s_max),
        )?;
        let geo = sphere_geometry_check(step, step.spectrum.window);
        println!(
            "{i:>4} {:>9} {:>24} {:>10.3} {:>8.4} {:>9.3} {:>7.4} {:>9.2}",
            step.direction.to_string(),
            format!("{}->{}", step.a, step.c),
            report.m_f64(),
            report.s_f64(),
            rat_to_f64(&report.spacing_margin),
            step.alpha,
            geo.uniformity,
        );
    }
    std::fs::write(out, serde_json::to_string_pretty(&plan)?)?;
    println!("\nplan written to {}", out.display());
    Ok(())
}

fn cmd_check(plan_path: &PathBuf, cfg: &Config) -> anyhow::Result<i32> {
    let plan = load_plan(plan_path)?;
    let mut failures = 0;
    println!(
        "{:>4} {:>9} {:>10} {:>8} {:>9} {:>6}",
        "step", "dir", "M", "S", "spacing", "pass"
    );
    for (i, step) in plan.steps.iter().enumerate() {
        let spectrum = build_line_spectrum(&step.a, &step.b, step.direction, cfg.window())?;
        let report = check_assumptions(
            &spectrum,
            &rat_from_f64(cfg.m_min),
            &rat_from_f64(cfg.s_max),
        )?;
        if !report.pass {
            failures += 1;
        }
        println!(
            "{i:>4} {:>9} {:>10.3} {:>8.4} {:>9.3} {:>6}",
            step.direction.to_string(),
            report.m_f64(),
            report.s_f64(),
            rat_to_f64(&report.spacing_margin),
            report.pass
        );
    }
    println!(
        "thresholds: M_min = {}, S_max = {}; {failures} failing step(s)",
        cfg.m_min, cfg.s_max
    );
    Ok(failures)
}

fn cmd_synth(plan_path: &PathBuf, out: &PathBuf, cfg: &Config) -> anyhow::Result<()> {
    let plan = load_plan(plan_path)?;
    let mut fields = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        let synth = match step.direction {
            Direction::Uphill => uphill_protocol(&step.spectrum, cfg)?,
            Direction::Downhill => {
                let eta = (-step.a.norm()).exp() * step.alpha;
                downhill_protocol(&step.spectrum, eta, cfg)?
            }
        };
        println!(
            "step {i}: {} segments over [0, {:.4}], final ratio {:.3e}",
            synth.field.segments().len(),
            synth.duration(),
            synth.final_ratio
        );
        fields.push(serde_json::json!({
            "step_index": i,
            "direction": step.direction,
            "duration": synth.duration(),
            "field": synth.field,
        }));
    }
    std::fs::write(out, serde_json::to_string(&fields)?)?;
    println!("fields written to {}", out.display());
    Ok(())
}

fn cmd_run(
    plan_path: &PathBuf,
    oracle: bool,
    out: &PathBuf,
    csv: Option<&PathBuf>,
    cfg: &Config,
) -> anyhow::Result<()> {
    let plan = load_plan(plan_path)?;
    let report = run_cascade(
        &plan,
        cfg,
        RunOptions {
            with_oracle: oracle,
        },
    )?;
    println!(
        "{} steps over {:.4} physical time units; final log mass {:.4}",
        report.phase_log.len(),
        report.total_duration,
        report.final_log_mass
    );
    for fit in &report.fits {
        println!(
            "  fit {}: params {:?}, residual {:.3e}",
            fit.model, fit.params, fit.residual
        );
    }
    println!(
        "  worst energy-identity residual {:.3e}, ledger residual {:.3e}",
        energy_identity_check(&report),
        report.ledger_residual
    );
    if let Some(records) = &report.oracle {
        for rec in records {
            println!(
                "  oracle step {}: max checkpoint distance {:.3e}, off-line mass {:.3e}",
                rec.step_index, rec.max_checkpoint_distance, rec.off_line_mass
            );
        }
    }
    std::fs::write(out, serde_json::to_string(&report)?)?;
    println!("report written to {}", out.display());
    if let Some(csv_path) = csv {
        std::fs::write(csv_path, decay_csv(&report))?;
        println!("decay series written to {}", csv_path.display());
    }
    Ok(())
}

fn cmd_verify(report_path: &PathBuf) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(report_path)
        .with_context(|| format!("reading {}", report_path.display()))?;
    let report: DecayReport = serde_json::from_str(&text)?;
    let mut failures = 0;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!("[{}] {name}: {detail}", if pass { "pass" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    let monotone = report
        .decay_samples
        .windows(2)
        .all(|w| w[1].log_mass <= w[0].log_mass + 1e-12);
    check("log-mass monotone", monotone, String::new());

    let mut floor_ok = true;
    let mut worst_margin = f64::INFINITY;
    for s in &report.decay_samples {
        if s.phase == "initial" {
            continue;
        }
        let step = &report.plan.steps[s.step_index];
        let floor = match step.direction {
            Direction::Uphill => step.a.norm_sq(),
            Direction::Downhill => step.c.norm_sq(),
        } as f64;
        worst_margin = worst_margin.min(s.dirichlet_ratio - floor);
        if s.dirichlet_ratio < floor - 1e-6 {
            floor_ok = false;
        }
    }
    check(
        "dirichlet floor",
        floor_ok,
        format!("worst margin {worst_margin:.3e}"),
    );

    let identity = energy_identity_check(&report);
    check(
        "energy identity <= 1e-6",
        identity <= 1e-6,
        format!("worst residual {identity:.3e}"),
    );
    check(
        "mass ledger <= 1e-8",
        report.ledger_residual <= 1e-8,
        format!("residual {:.3e}", report.ledger_residual),
    );
    let worst_off = report
        .phase_log
        .iter()
        .map(|r| r.off_mode_residual)
        .fold(0.0, f64::max);
    check(
        "off-mode residuals <= 1e-8",
        worst_off <= 1e-8,
        format!("worst {worst_off:.3e}"),
    );

    if let Some(records) = &report.oracle {
        let dist = records
            .iter()
            .map(|r| r.max_checkpoint_distance)
            .fold(0.0, f64::max);
        check(
            "oracle agreement <= 1e-6",
            dist <= 1e-6,
            format!("worst {dist:.3e}"),
        );
        let off_line = records.iter().map(|r| r.off_line_mass).fold(0.0, f64::max);
        check(
            "oracle off-line mass <= 1e-10",
            off_line <= 1e-10,
            format!("worst {off_line:.3e}"),
        );
        let leak = records.iter().map(|r| r.support_leak).fold(0.0, f64::max);
        check(
            "support exclusion <= 1e-12",
            leak <= 1e-12,
            format!("worst {leak:.3e}"),
        );
        let oid = records
            .iter()
            .flat_map(|r| r.phase_identity_residuals.iter().map(|(_, v)| *v))
            .fold(0.0, f64::max);
        check(
            "oracle energy identity <= 1e-6",
            oid <= 1e-6,
            format!("worst {oid:.3e}"),
        );
    }

    if report.plan.dimension == 2 {
        if let Some((slope, asym, dev)) = time_ledger_check(&report) {
            check(
                "2D time ledger within 20%",
                dev <= 0.2,
                format!(
                    "slope {slope:.4} vs asymptote {asym:.4} ({:.1}%)",
                    dev * 100.0
                ),
            );
        }
    }

    println!("{failures} failing check(s)");
    Ok(failures)
}

fn cmd_report(input: &PathBuf, svg: &PathBuf, fit_name: &str) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input)?;
    let report: DecayReport = serde_json::from_str(&text)?;
    let model = match fit_name {
        "double-exp" => FitModel::DoubleExp,
        "t2" => FitModel::TSquared,
        "exp" => FitModel::Exp,
        other => bail!("unknown fit model `{other}` (expected double-exp, t2, exp)"),
    };
    let fit = fit_decay(&report, model)?;
    println!(
        "fit {}: params {:?}, residual {:.3e}",
        fit.model, fit.params, fit.residual
    );
    std::fs::write(svg, decay_svg(&report, Some(&fit)))?;
    println!("svg written to {}", svg.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: anyhow::Result<i32> = (|| match &cli.command {
        Command::Plan {
            dim,
            start,
            steps,
            p,
            out,
            config,
        } => {
            cmd_plan(*dim, start, *steps, *p, out, &config.resolve()?)?;
            Ok(0)
        }
        Command::Check { plan, config } => cmd_check(plan, &config.resolve()?),
        Command::Synth { plan, out, config } => {
            cmd_synth(plan, out, &config.resolve()?)?;
            Ok(0)
        }
        Command::Run {
            plan,
            oracle,
            out,
            csv,
            config,
        } => {
            cmd_run(plan, *oracle, out, csv.as_ref(), &config.resolve()?)?;
            Ok(0)
        }
        Command::Verify { report } => cmd_verify(report),
        Command::Report { input, svg, fit } => {
            cmd_report(input, svg, fit)?;
            Ok(0)
        }
    })();
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code.min(255) as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
