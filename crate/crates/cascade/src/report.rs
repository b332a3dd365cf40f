//! CSV and SVG rendering of decay reports and lattice fields.

use std::fmt::Write as _;

use crate::pde_bridge::LatticeField;
use crate::pipeline::{DecayReport, FitModel, FitResult};

/// decay.csv columns: t, mass, log_mass, dirichlet_ratio, step_index, phase_label.
pub fn decay_csv(report: &DecayReport) -> String {
    let mut out = String::from("t,mass,log_mass,dirichlet_ratio,step_index,phase_label\n");
    for s in &report.decay_samples {
        let _ = writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
            s.t, s.mass, s.log_mass, s.dirichlet_ratio, s.step_index, s.phase
        );
    }
    out
}

/// Trajectory samples CSV: t, mass, off_mode_ratio, and optionally the
/// per-mode magnitudes of the recorded snapshots appended as extra rows.
pub fn trajectory_csv(record: &crate::integrator::TrajectoryRecord, with_modes: bool) -> String {
    let mut out = String::from("t,mass,off_mode_ratio\n");
    for s in &record.samples {
        let _ = writeln!(
            out,
            "{:.12e},{:.12e},{:.12e}",
            s.t, s.mass, s.off_mode_ratio
        );
    }
    if with_modes {
        out.push_str("# snapshots: t,k,magnitude\n");
        for (t, z) in &record.snapshots {
            for (k, amp) in z.iter() {
                if amp.norm_sqr() > 0.0 {
                    let _ = writeln!(out, "{:.12e},{k},{:.12e}", t, amp.norm());
                }
            }
        }
    }
    out
}

/// Lattice field CSV: one row per site, coordinates then re, im.
pub fn lattice_csv(field: &LatticeField) -> String {
    let mut out = String::new();
    for (site, amp) in &field.coeffs {
        for c in site {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{:.12e},{:.12e}", amp.re, amp.im);
    }
    out
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(mag * 10.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

/// Render the decay curve (log10 of mass against physical time) with the
/// chosen fitted model overlaid.
pub fn decay_svg(report: &DecayReport, fit: Option<&FitResult>) -> String {
    const W: f64 = 840.0;
    const H: f64 = 520.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 36.0;
    const MB: f64 = 52.0;
    let ln10 = std::f64::consts::LN_10;

    let pts: Vec<(f64, f64)> = report
        .decay_samples
        .iter()
        .map(|s| (s.t, s.log_mass / ln10))
        .collect();
    let (t_lo, t_hi) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p.0), hi.max(p.0))
    });
    let (y_lo, y_hi) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p.1), hi.max(p.1))
    });
    let y_pad = 0.02 * (y_hi - y_lo).max(1.0);
    let (y_lo, y_hi) = (y_lo - y_pad, y_hi + y_pad);
    let sx = |t: f64| ML + (t - t_lo) / (t_hi - t_lo).max(1e-300) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo).max(1e-300) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" font-family="monospace" font-size="14">scalar decay: log10 ||theta||^2 vs physical time ({} steps, dim {})</text>"#,
        ML,
        report.phase_log.len(),
        report.plan.dimension
    );

    for t in nice_ticks(t_lo, t_hi, 8) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="#ddd"/>"##,
            MT,
            H - MB
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{t:.3}</text>"#,
            H - MB + 16.0
        );
    }
    for y in nice_ticks(y_lo, y_hi, 8) {
        let yy = sy(y);
        let _ = writeln!(
            svg,
            r##"<line x1="{ML}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/>"##,
            W - MR
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-family="monospace" font-size="11" text-anchor="end">{y:.0}</text>"#,
            ML - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        W - ML - MR,
        H - MT - MB
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{}" font-family="monospace" font-size="12" text-anchor="middle">t (physical)</text>"#,
        (ML + W - MR) / 2.0,
        H - 14.0
    );

    let mut path = String::new();
    for (i, (t, y)) in pts.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(*t), sy(*y));
    }
    let _ = writeln!(
        svg,
        r##"<path d="{path}" fill="none" stroke="#1f6fb4" stroke-width="1.6"/>"##
    );

    if let Some(fit) = fit {
        let mut path = String::new();
        let n = 240;
        let mut started = false;
        for i in 0..=n {
            let t = t_lo + (t_hi - t_lo) * i as f64 / n as f64;
            if t <= 0.0 {
                continue;
            }
            let neg_log = match fit.model {
                FitModel::DoubleExp => (fit.params[0] + fit.params[1] * t).exp(),
                FitModel::TSquared => fit.params[0].exp() * t * t,
                FitModel::Exp => fit.params[0].exp() * t,
            };
            let y = -neg_log / ln10;
            if y < y_lo || y > y_hi {
                continue;
            }
            let cmd = if started { 'L' } else { 'M' };
            started = true;
            let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(t), sy(y));
        }
        let _ = writeln!(
            svg,
            r##"<path d="{path}" fill="none" stroke="#c23b22" stroke-width="1.4" stroke-dasharray="6 4"/>"##
        );
        let label = match fit.model {
            FitModel::DoubleExp => format!(
                "fit {}: rate {:.4}, residual {:.2e}",
                fit.model, fit.params[1], fit.residual
            ),
            _ => format!(
                "fit {}: intercept {:.4}, residual {:.2e}",
                fit.model, fit.params[0], fit.residual
            ),
        };
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" font-family="monospace" font-size="12" fill="#c23b22">{label}</text>"##,
            ML + 10.0,
            MT + 18.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Magnitude heatmap of a lattice field on the first two coordinates
/// (higher-dimensional fields are projected, keeping the max magnitude).
pub fn lattice_svg(field: &LatticeField) -> String {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    let mut extent = 1i64;
    for (site, amp) in &field.coeffs {
        let key = (site[0], *site.get(1).unwrap_or(&0));
        let mag = amp.norm();
        let cell = cells.entry(key).or_insert(0.0);
        *cell = cell.max(mag);
        extent = extent.max(key.0.abs()).max(key.1.abs());
    }
    let n = 2 * extent + 1;
    let cell_px = (760.0 / n as f64).min(24.0);
    let w = cell_px * n as f64 + 80.0;
    let h = cell_px * n as f64 + 60.0;
    let max_mag = cells.values().fold(1e-300f64, |a, &b| a.max(b));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="40" y="24" font-family="monospace" font-size="13">|theta_hat| (log scale), extent {extent}</text>"#
    );
    for ((kx, ky), mag) in &cells {
        // 12 decades of dynamic range mapped to intensity.
        let rel = ((mag / max_mag).log10() / 12.0 + 1.0).clamp(0.0, 1.0);
        let r = (255.0 * (1.0 - rel)) as u8;
        let g = (255.0 - 160.0 * rel) as u8;
        let b = 255u8;
        let x = 40.0 + (kx + extent) as f64 * cell_px;
        let y = 40.0 + (extent - ky) as f64 * cell_px;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_px:.2}" height="{cell_px:.2}" fill="rgb({r},{g},{b})"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}
