//! Synthesis of the time-dependent coefficient fields v^k_t: the bounded
//! feedback that empties mode zero, the two-point piecewise-constant controls
//! that cancel off-mode errors to leading order, and the dyadic schedule that
//! drives the error to machine precision in unit time.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::integrator::{
    decay_exact, integrate, mass_and_ratio, IntegrateError, IntegrateOpts, LineDiffusion,
    StateVector,
};
use crate::spectrum::{DiffusionSpectrum, Direction};

#[derive(Debug)]
pub enum ControlError {
    Stage1Fail { z0_abs: f64 },
    WaitTimeout { ratio: f64, waited: f64 },
    NoPush { rho: f64 },
    NoContraction { j: usize, eps: f64 },
    BadHandoff { eps: f64 },
    DegenerateSpacing { k: i64 },
    WrongDirection { expected: Direction },
    Integrate(IntegrateError),
}

impl fmt::Display for ControlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlError::Stage1Fail { z0_abs } => {
                write!(f, "stage 1 left |z^0| = {z0_abs:.3e} above tolerance")
            }
            ControlError::WaitTimeout { ratio, waited } => write!(
                f,
                "off-mode ratio {ratio:.3e} still above target after waiting {waited:.3}"
            ),
            ControlError::NoPush { rho } => {
                write!(f, "push left |z^1| = {rho:.3e} below the configured floor")
            }
            ControlError::NoContraction { j, eps } => {
                write!(
                    f,
                    "dyadic iteration stopped contracting at step {j} (eps = {eps:.3e})"
                )
            }
            ControlError::BadHandoff { eps } => {
                write!(
                    f,
                    "handoff off-mode ratio {eps:.3e} exceeds the configured start bound"
                )
            }
            ControlError::DegenerateSpacing { k } => {
                write!(f, "d_{} = d_{}: control matrix singular", k + 1, 1 - k)
            }
            ControlError::WrongDirection { expected } => {
                write!(f, "protocol requires a {expected} spectrum")
            }
            ControlError::Integrate(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ControlError {}

impl From<IntegrateError> for ControlError {
    fn from(e: IntegrateError) -> Self {
        ControlError::Integrate(e)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedbackParams {
    pub gain: f64,
    pub switch_time: f64,
    pub zero_tolerance: f64,
}

impl FeedbackParams {
    pub fn from_config(config: &Config) -> Self {
        FeedbackParams {
            gain: config.gain,
            switch_time: config.switch_time,
            zero_tolerance: config.zero_tolerance,
        }
    }
}

/// The stage-1 feedback value a_t given the current z^0, z^1.
///
/// Open loop at full gain before the switch time; afterwards the phase-locked
/// value -i g conj(z^0)|z^1| / (conj(z^1)|z^0|), which always has |a| <= g,
/// with the convention that it vanishes once either amplitude is at the zero
/// tolerance.
pub fn stage1_feedback(z0: Complex64, z1: Complex64, t: f64, params: &FeedbackParams) -> Complex64 {
    if t < params.switch_time {
        return Complex64::new(params.gain, 0.0);
    }
    let n0 = z0.norm();
    let n1 = z1.norm();
    if n0 <= params.zero_tolerance || n1 <= params.zero_tolerance {
        return Complex64::default();
    }
    let mut q = z0.conj() * z1 / (n0 * n1);
    let qn = q.norm();
    if qn > 1.0 {
        q /= qn;
    }
    Complex64::new(0.0, -params.gain) * q
}

fn serialize_values<S: serde::Serializer>(
    values: &BTreeMap<i64, Complex64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let rows: Vec<(i64, (f64, f64))> = values.iter().map(|(&k, v)| (k, (v.re, v.im))).collect();
    rows.serialize(s)
}

fn deserialize_values<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> Result<BTreeMap<i64, Complex64>, D::Error> {
    let rows = <Vec<(i64, (f64, f64))>>::deserialize(d)?;
    Ok(rows
        .into_iter()
        .map(|(k, (re, im))| (k, Complex64::new(re, im)))
        .collect())
}

/// One piece of a coefficient field. Feedback segments exist only during
/// synthesis; integration materializes them into the constant controls that
/// were actually applied.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Feedback {
        t0: f64,
        t1: f64,
        gain: f64,
        switch_time: f64,
        zero_tolerance: f64,
    },
    Constant {
        t0: f64,
        t1: f64,
        #[serde(
            serialize_with = "serialize_values",
            deserialize_with = "deserialize_values"
        )]
        values: BTreeMap<i64, Complex64>,
    },
    Zero {
        t0: f64,
        t1: f64,
    },
}

impl Segment {
    pub fn t0(&self) -> f64 {
        match self {
            Segment::Feedback { t0, .. }
            | Segment::Constant { t0, .. }
            | Segment::Zero { t0, .. } => *t0,
        }
    }

    pub fn t1(&self) -> f64 {
        match self {
            Segment::Feedback { t1, .. }
            | Segment::Constant { t1, .. }
            | Segment::Zero { t1, .. } => *t1,
        }
    }

    /// The frozen values of a materialized segment.
    ///
    /// Panics on feedback segments: those must be integrated (materialized)
    /// before they can be replayed or exported.
    pub fn constant_values(&self) -> BTreeMap<i64, Complex64> {
        match self {
            Segment::Constant { values, .. } => values.clone(),
            Segment::Zero { .. } => BTreeMap::new(),
            Segment::Feedback { .. } => {
                panic!("feedback segment must be materialized before evaluation")
            }
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, Segment::Feedback { .. })
    }
}

/// A piecewise schedule of coefficient values tiling its span with no gaps.
/// Every stored map satisfies v^{-k} = conj(v^k) and v^0 = 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientField {
    segments: Vec<Segment>,
}

impl CoefficientField {
    pub fn new(segments: Vec<Segment>) -> Self {
        assert!(!segments.is_empty(), "a coefficient field needs segments");
        for pair in segments.windows(2) {
            assert!(
                pair[0].t1() == pair[1].t0(),
                "segments must tile the span exactly: {} != {}",
                pair[0].t1(),
                pair[1].t0()
            );
        }
        for seg in &segments {
            assert!(seg.t1() > seg.t0(), "segments must have positive length");
            if let Segment::Constant { values, .. } = seg {
                for (&k, v) in values {
                    if k == 0 {
                        assert!(v.norm() == 0.0, "v^0 must vanish");
                        continue;
                    }
                    let mirror = values.get(&-k).copied().unwrap_or_default();
                    assert!(
                        (mirror - v.conj()).norm() == 0.0,
                        "values must satisfy v^-k = conj(v^k)"
                    );
                }
            }
        }
        CoefficientField { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.segments.first().map_or(0.0, |s| s.t0()),
            self.segments.last().map_or(0.0, |s| s.t1()),
        )
    }

    pub fn has_feedback(&self) -> bool {
        self.segments.iter().any(|s| s.is_feedback())
    }

    /// Values in force at time t (materialized fields only).
    pub fn values_at(&self, t: f64) -> BTreeMap<i64, Complex64> {
        let idx = match self
            .segments
            .binary_search_by(|seg| seg.t0().partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        self.segments[idx].constant_values()
    }

    /// A bounded set of representative times (segment midpoints) for
    /// grid-sampling checks; long materialized fields are subsampled.
    pub fn probe_times(&self) -> Vec<f64> {
        let stride = (self.segments.len() / 64).max(1);
        self.segments
            .iter()
            .step_by(stride)
            .map(|s| 0.5 * (s.t0() + s.t1()))
            .collect()
    }
}

/// Per-mode sup over all segments of |v^k_t|.
pub fn field_sup_norms(field: &CoefficientField) -> BTreeMap<i64, f64> {
    let mut sups: BTreeMap<i64, f64> = BTreeMap::new();
    for seg in field.segments() {
        match seg {
            Segment::Zero { .. } => {}
            Segment::Feedback { gain, .. } => {
                for k in [-1i64, 1] {
                    let entry = sups.entry(k).or_insert(0.0);
                    *entry = entry.max(*gain);
                }
            }
            Segment::Constant { values, .. } => {
                for (&k, v) in values {
                    let entry = sups.entry(k).or_insert(0.0);
                    *entry = entry.max(v.norm());
                }
            }
        }
    }
    sups
}

/// The two-point controls (a^k, b^k) for one Newton step of duration T.
#[derive(Clone, Debug)]
pub struct NewtonControls {
    pub t_step: f64,
    pub per_k: BTreeMap<i64, (Complex64, Complex64)>,
    pub k_max: i64,
}

impl NewtonControls {
    /// Realize the controls as two constant segments with the switch at the
    /// midpoint. Boundary times are supplied by the caller so that adjacent
    /// segments share bit-identical endpoints.
    pub fn to_segments(&self, t0: f64, t_mid: f64, t1: f64) -> (Segment, Segment) {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (&k, &(a, b)) in &self.per_k {
            if a.norm() > 0.0 {
                first.insert(k, a);
                first.insert(-k, a.conj());
            }
            if b.norm() > 0.0 {
                second.insert(k, b);
                second.insert(-k, b.conj());
            }
        }
        (
            Segment::Constant {
                t0,
                t1: t_mid,
                values: first,
            },
            Segment::Constant {
                t0: t_mid,
                t1,
                values: second,
            },
        )
    }
}

/// 1 / integral_0^{t_half} e^{x s} ds, stable for x of any sign and size.
fn inv_exp_integral(x: f64, t_half: f64) -> f64 {
    if x == 0.0 {
        return 1.0 / t_half;
    }
    let y = x * t_half;
    if y > 700.0 {
        // The integral is ~ e^y / x; its reciprocal underflows gracefully.
        return x * (-y).exp();
    }
    x / y.exp_m1()
}

/// Controls cancelling the leading-order error on the mode pair (k+1, 1-k)
/// for every k in [1, k_max], from the closed-form solution of the 2x2
/// two-point problem. All exponentials are evaluated in decaying form.
///
/// The cancellation is derived in the frame where the carrier amplitude z^1
/// equals one, so the right-hand sides take the snapshot entries relative to
/// z^1; the controls then apply to the unnormalized state by linearity.
pub fn newton_step_controls(
    snapshot: &StateVector,
    t_step: f64,
    spectrum: &DiffusionSpectrum,
    k_max: i64,
) -> Result<NewtonControls, ControlError> {
    assert!(
        t_step > 0.0 && t_step <= 1.0,
        "step duration must be in (0, 1]"
    );
    let (w0, w1) = spectrum.window;
    assert!(
        k_max >= 1 && k_max < w1 && 1 - k_max >= w0,
        "k_max exceeds the window"
    );

    let carrier = snapshot.get(1);
    if carrier.norm() == 0.0 {
        let (_, eps) = mass_and_ratio(snapshot)?;
        return Err(ControlError::BadHandoff { eps });
    }
    let inv_carrier = Complex64::new(1.0, 0.0) / carrier;

    let d1 = spectrum.d_f64(1);
    let t_half = t_step / 2.0;
    let mut per_k = BTreeMap::new();
    for k in 1..=k_max {
        // Exact spacing check; equality makes the system singular.
        if spectrum.d(k + 1) <= spectrum.d(1 - k) {
            return Err(ControlError::DegenerateSpacing { k });
        }
        let xp = spectrum.d_f64(k + 1) - d1;
        let xm = spectrum.d_f64(1 - k) - d1;
        let gp = inv_exp_integral(xp, t_half);
        let gm = inv_exp_integral(xm, t_half);
        let rhs1 = -(snapshot.get(k + 1) * inv_carrier) * gp;
        let rhs2 = (snapshot.get(1 - k) * inv_carrier).conj() * gm;

        // With q = e^{-(d_{k+1}-d_{1-k}) T/2} in (0,1):
        //   a = i (q rhs1 - rhs2) / (1 - q)
        //   b = i e^{-(d_{k+1}-d_1) T/2} (rhs2 - rhs1) / (1 - q)
        let delta = xp - xm;
        let q = (-delta * t_half).exp();
        let denom = -(-delta * t_half).exp_m1();
        let i = Complex64::new(0.0, 1.0);
        let a = i * (q * rhs1 - rhs2) / denom;
        let b = i * (-xp * t_half).exp() * (rhs2 - rhs1) / denom;
        if a.norm() > 0.0 || b.norm() > 0.0 {
            per_k.insert(k, (a, b));
        }
    }
    Ok(NewtonControls {
        t_step,
        per_k,
        k_max,
    })
}

/// Smallest control range k_max whose excluded tail mass is negligible
/// against the current error, capped by the window and configuration.
fn choose_k_max(z: &StateVector, eps: f64, config: &Config) -> i64 {
    let (w0, w1) = z.window;
    let cap = config.k_max_cap.min(w1 - 1).min(1 - w0);
    let mass = z.mass();
    let budget = config.newton_tail_fraction * eps * eps * mass;
    let mut k_max = cap;
    for candidate in 1..=cap {
        let mut tail = 0.0;
        for (k, amp) in z.iter() {
            if (1 - k).abs() > candidate {
                tail += amp.norm_sqr();
            }
        }
        if tail < budget {
            k_max = candidate;
            break;
        }
    }
    k_max
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionEntry {
    pub j: usize,
    pub t_step: f64,
    pub eps: f64,
}

/// The per-step error log of a dyadic run and the fitted constant in
/// eps_{j+1} <= D 8^j eps_j^2.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ContractionLog {
    pub entries: Vec<ContractionEntry>,
    pub d_fit: Option<f64>,
}

impl ContractionLog {
    fn fit(entries: Vec<ContractionEntry>) -> Self {
        let mut d_fit: Option<f64> = None;
        for pair in entries.windows(2) {
            if pair[0].eps > 0.0 {
                let scale = 8f64.powi(pair[0].j as i32);
                let d = pair[1].eps / (scale * pair[0].eps * pair[0].eps);
                d_fit = Some(d_fit.map_or(d, |best: f64| best.max(d)));
            }
        }
        ContractionLog { entries, d_fit }
    }
}

pub struct DyadicOutcome {
    pub segments: Vec<Segment>,
    pub log: ContractionLog,
    pub final_state: StateVector,
    /// z^1 at the end of the unit interval.
    pub beta: Complex64,
    /// Off-mode ratio at the end, before the exact projection.
    pub final_ratio: f64,
    /// The final state declared as beta delta_{k,1} with the residual above.
    pub projected: StateVector,
}

/// Newton steps on the dyadic intervals [t_start + 1 - 2^-j, t_start + 1 - 2^-j-1],
/// stopping once the off-mode ratio falls below the convergence floor, then a
/// zero tail to t_start + 1.
pub fn dyadic_core(
    handoff: &StateVector,
    spectrum: &DiffusionSpectrum,
    line: &LineDiffusion,
    config: &Config,
    t_start: f64,
) -> Result<DyadicOutcome, ControlError> {
    let (_, eps0) = mass_and_ratio(handoff)?;
    if eps0 > config.eps_start_max {
        return Err(ControlError::BadHandoff { eps: eps0 });
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut entries: Vec<ContractionEntry> = Vec::new();
    let mut z = handoff.clone();
    let mut rises = 0usize;
    let mut prev_eps = f64::INFINITY;
    let mut covered = 0.0f64; // 1 - 2^-j at the current step

    if eps0 > 0.0 {
        for j in 0..config.max_dyadic_steps {
            let (_, eps_j) = mass_and_ratio(&z)?;
            let t_step = 0.5f64.powi(j as i32 + 1);
            entries.push(ContractionEntry {
                j,
                t_step,
                eps: eps_j,
            });
            if eps_j < config.eps_converged {
                break;
            }
            if eps_j >= prev_eps {
                rises += 1;
                if rises >= 2 {
                    return Err(ControlError::NoContraction { j, eps: eps_j });
                }
            } else {
                rises = 0;
            }
            prev_eps = eps_j;
            if j + 1 == config.max_dyadic_steps {
                return Err(ControlError::NoContraction { j, eps: eps_j });
            }

            let k_max = choose_k_max(&z, eps_j, config);
            let controls = newton_step_controls(&z, t_step, spectrum, k_max)?;
            // Dyadic boundaries in closed form so adjacent segments share
            // bit-identical endpoints.
            let t0 = t_start + (1.0 - 0.5f64.powi(j as i32));
            let t_mid = t_start + (1.0 - 3.0 * 0.5f64.powi(j as i32 + 2));
            let t1 = t_start + (1.0 - 0.5f64.powi(j as i32 + 1));
            let (s1, s2) = controls.to_segments(t0, t_mid, t1);
            let mini = CoefficientField::new(vec![s1.clone(), s2.clone()]);
            let rec = integrate(&z, &mini, line, t0, t1, config, &IntegrateOpts::default())?;
            z = rec.final_state;
            segments.push(s1);
            segments.push(s2);
            covered = 1.0 - 0.5f64.powi(j as i32 + 1);
        }
    }

    // Zero tail to the end of the unit interval.
    let t_tail0 = t_start + covered;
    let t_end = t_start + 1.0;
    if t_end > t_tail0 {
        let tail = Segment::Zero {
            t0: t_tail0,
            t1: t_end,
        };
        let mini = CoefficientField::new(vec![tail.clone()]);
        let rec = integrate(
            &z,
            &mini,
            line,
            t_tail0,
            t_end,
            config,
            &IntegrateOpts::default(),
        )?;
        z = rec.final_state;
        segments.push(tail);
    }

    let (_, final_ratio) = mass_and_ratio(&z)?;
    let beta = z.get(1);
    let mut projected = StateVector {
        window: z.window,
        amp: vec![Complex64::default(); z.amp.len()],
        t: z.t,
    };
    projected.set(1, beta);
    Ok(DyadicOutcome {
        segments,
        log: ContractionLog::fit(entries),
        final_state: z,
        beta,
        final_ratio,
        projected,
    })
}

/// Dyadic schedule on the unit interval [0, 1], as a standalone operation.
pub fn dyadic_schedule(
    handoff: &StateVector,
    spectrum: &DiffusionSpectrum,
    config: &Config,
) -> Result<(CoefficientField, ContractionLog), ControlError> {
    let line = LineDiffusion::from_spectrum(spectrum);
    let outcome = dyadic_core(handoff, spectrum, &line, config, 0.0)?;
    Ok((CoefficientField::new(outcome.segments), outcome.log))
}

/// A synthesized protocol: the materialized field plus its diagnostics.
pub struct ProtocolSynthesis {
    pub field: CoefficientField,
    pub contraction: ContractionLog,
    /// z^1 at the end of the protocol (rescaled variables, shift not applied).
    pub beta: Complex64,
    pub final_ratio: f64,
    pub phase_marks: Vec<(f64, String)>,
    /// Adaptive wait used (tau for uphill, sigma for downhill).
    pub wait: f64,
    /// |z^0| and |z^1| at the end of the feedback segment (uphill only).
    pub stage1: Option<(f64, f64)>,
    /// |z^1| after the push (downhill only).
    pub rho: Option<f64>,
}

impl ProtocolSynthesis {
    pub fn duration(&self) -> f64 {
        self.field.span().1
    }
}

/// Find the smallest wait on a 1/64 grid bringing the decayed off-mode ratio
/// at or below the target.
fn adaptive_wait(
    z: &StateVector,
    line: &LineDiffusion,
    target: f64,
    wait_cap: f64,
) -> Result<f64, ControlError> {
    let grid = 1.0 / 64.0;
    let mut wait = 0.0f64;
    loop {
        let probe = decay_exact(z, line, wait);
        let (_, eps) = mass_and_ratio(&probe)?;
        if eps <= target {
            return Ok(wait);
        }
        if wait >= wait_cap {
            return Err(ControlError::WaitTimeout {
                ratio: eps,
                waited: wait,
            });
        }
        wait = (wait + grid).min(wait_cap);
    }
}

/// The three-phase uphill protocol: feedback on [0,1], an adaptive pure-decay
/// wait, then the dyadic schedule on one unit interval. Total span 2 + tau.
pub fn uphill_protocol(
    spectrum: &DiffusionSpectrum,
    config: &Config,
) -> Result<ProtocolSynthesis, ControlError> {
    if spectrum.direction != Direction::Uphill {
        return Err(ControlError::WrongDirection {
            expected: Direction::Uphill,
        });
    }
    let line = LineDiffusion::from_spectrum(spectrum);
    let z0 = StateVector::delta(spectrum.window, 0);
    let feedback = CoefficientField::new(vec![Segment::Feedback {
        t0: 0.0,
        t1: 1.0,
        gain: config.gain,
        switch_time: config.switch_time,
        zero_tolerance: config.zero_tolerance,
    }]);
    let rec = integrate(
        &z0,
        &feedback,
        &line,
        0.0,
        1.0,
        config,
        &IntegrateOpts::default(),
    )?;
    let z_one = rec.final_state;
    let z0_abs = z_one.get(0).norm();
    let z1_abs = z_one.get(1).norm();
    if z0_abs > config.stage1_tolerance {
        return Err(ControlError::Stage1Fail { z0_abs });
    }

    let tau_cap = config.tau_max_factor / line.m_floor();
    let tau = adaptive_wait(&z_one, &line, config.eps_start_max, tau_cap)?;

    let mut segments = rec.materialized;
    let mut phase_marks = vec![(0.0, "stage1".to_string())];
    let handoff = if tau > 0.0 {
        phase_marks.push((1.0, "wait".to_string()));
        let wait_seg = Segment::Zero {
            t0: 1.0,
            t1: 1.0 + tau,
        };
        let mini = CoefficientField::new(vec![wait_seg.clone()]);
        let wrec = integrate(
            &z_one,
            &mini,
            &line,
            1.0,
            1.0 + tau,
            config,
            &IntegrateOpts::default(),
        )?;
        segments.push(wait_seg);
        wrec.final_state
    } else {
        z_one
    };
    phase_marks.push((1.0 + tau, "dyadic".to_string()));

    let outcome = dyadic_core(&handoff, spectrum, &line, config, 1.0 + tau)?;
    segments.extend(outcome.segments);
    Ok(ProtocolSynthesis {
        field: CoefficientField::new(segments),
        contraction: outcome.log,
        beta: outcome.beta,
        final_ratio: outcome.final_ratio,
        phase_marks,
        wait: tau,
        stage1: Some((z0_abs, z1_abs)),
        rho: None,
    })
}

/// The downhill protocol: a weak constant push v^{+-1} = eta seeding the
/// target mode, an adaptive decay wait, then the dyadic schedule.
pub fn downhill_protocol(
    spectrum: &DiffusionSpectrum,
    eta: f64,
    config: &Config,
) -> Result<ProtocolSynthesis, ControlError> {
    if spectrum.direction != Direction::Downhill {
        return Err(ControlError::WrongDirection {
            expected: Direction::Downhill,
        });
    }
    assert!(eta > 0.0, "push amplitude must be positive");
    let line = LineDiffusion::from_spectrum(spectrum);
    let z0 = StateVector::delta(spectrum.window, 0);

    let tau_push = (config.push_budget / eta).min(config.push_tau_cap);
    let mut values = BTreeMap::new();
    values.insert(1i64, Complex64::new(eta, 0.0));
    values.insert(-1i64, Complex64::new(eta, 0.0));
    let push_seg = Segment::Constant {
        t0: 0.0,
        t1: tau_push,
        values,
    };
    let mini = CoefficientField::new(vec![push_seg.clone()]);
    let rec = integrate(
        &z0,
        &mini,
        &line,
        0.0,
        tau_push,
        config,
        &IntegrateOpts::default(),
    )?;
    let z_pushed = rec.final_state;
    let rho = z_pushed.get(1).norm();
    if rho < config.rho_min {
        return Err(ControlError::NoPush { rho });
    }

    let sigma = adaptive_wait(&z_pushed, &line, config.eps_start_max, config.sigma_max)?;
    let mut segments = vec![push_seg];
    let mut phase_marks = vec![(0.0, "push".to_string())];
    let handoff = if sigma > 0.0 {
        phase_marks.push((tau_push, "wait".to_string()));
        let wait_seg = Segment::Zero {
            t0: tau_push,
            t1: tau_push + sigma,
        };
        let mini = CoefficientField::new(vec![wait_seg.clone()]);
        let wrec = integrate(
            &z_pushed,
            &mini,
            &line,
            tau_push,
            tau_push + sigma,
            config,
            &IntegrateOpts::default(),
        )?;
        segments.push(wait_seg);
        wrec.final_state
    } else {
        z_pushed
    };
    phase_marks.push((tau_push + sigma, "dyadic".to_string()));

    let outcome = dyadic_core(&handoff, spectrum, &line, config, tau_push + sigma)?;
    segments.extend(outcome.segments);
    Ok(ProtocolSynthesis {
        field: CoefficientField::new(segments),
        contraction: outcome.log,
        beta: outcome.beta,
        final_ratio: outcome.final_ratio,
        phase_marks,
        wait: sigma,
        stage1: None,
        rho: Some(rho),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{build_line_spectrum, LatticeVector};

    const WINDOW: (i64, i64) = (-48, 49);

    fn spectrum_2d(r: i64) -> DiffusionSpectrum {
        let a = LatticeVector::new(&[r, 0]);
        let b = LatticeVector::new(&[-r, r + 1]);
        build_line_spectrum(&a, &b, Direction::Uphill, WINDOW).unwrap()
    }

    fn params() -> FeedbackParams {
        FeedbackParams {
            gain: 256.0,
            switch_time: 1.0 / 1024.0,
            zero_tolerance: 1e-6,
        }
    }

    #[test]
    fn feedback_open_loop_value() {
        let a = stage1_feedback(
            Complex64::new(0.3, 0.4),
            Complex64::new(0.0, 0.0),
            0.0005,
            &params(),
        );
        assert_eq!(a, Complex64::new(256.0, 0.0));
    }

    #[test]
    fn feedback_phase_locked_value() {
        // z0 = 1, z1 = i s: the ratio is i and -i * 256 * i = 256.
        for s in [0.2, 1.0, 7.5] {
            let a = stage1_feedback(
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, s),
                0.5,
                &params(),
            );
            assert!((a - Complex64::new(256.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn feedback_zero_convention() {
        let a = stage1_feedback(
            Complex64::default(),
            Complex64::new(0.5, 0.0),
            0.5,
            &params(),
        );
        assert_eq!(a, Complex64::default());
    }

    #[test]
    fn feedback_magnitude_bounded() {
        let p = params();
        for i in 0..500 {
            let x = (i as f64 * 0.7).sin();
            let y = (i as f64 * 1.3).cos();
            let z0 = Complex64::new(x, y * 0.5);
            let z1 = Complex64::new(y, x * 0.25 + 0.1);
            let a = stage1_feedback(z0, z1, 0.25, &p);
            assert!(a.norm() <= p.gain * (1.0 + 1e-15));
        }
    }

    #[test]
    fn newton_matrix_identity() {
        // The proof's system matrix is -(B^k)^{-1} = -i [[1, Ep], [1, Em]],
        // so its product with B^k must be minus the identity to 1e-12.
        let spec = spectrum_2d(5);
        let t_step = 0.5;
        let t_half = t_step / 2.0;
        let d1 = spec.d_f64(1);
        #[allow(clippy::needless_range_loop)]
        for k in 1..=24i64 {
            let xp = spec.d_f64(k + 1) - d1;
            let xm = spec.d_f64(1 - k) - d1;
            if xp * t_half > 650.0 || xm * t_half > 650.0 {
                continue;
            }
            let ep = (xp * t_half).exp();
            let em = (xm * t_half).exp();
            let i = Complex64::new(0.0, 1.0);
            let b = [
                [-i * em / (em - ep), i * ep / (em - ep)],
                [i / (em - ep), -i / (em - ep)],
            ];
            let m = [[-i, -i * ep], [-i, -i * em]];
            for r in 0..2 {
                for c in 0..2 {
                    let mut acc = Complex64::default();
                    for t in 0..2 {
                        acc += m[r][t] * b[t][c];
                    }
                    let expect = if r == c { -1.0 } else { 0.0 };
                    assert!(
                        (acc - Complex64::new(expect, 0.0)).norm() < 1e-12,
                        "k = {k}, entry ({r},{c}) = {acc}"
                    );
                }
            }
        }
    }

    #[test]
    fn newton_controls_reproduce_rhs() {
        // Applying the system matrix -(B^k)^{-1} to (a, b) must reproduce the
        // negated right-hand side built from the snapshot, since
        // -(B^k)^{-1} B^k rhs = -rhs.
        let spec = spectrum_2d(5);
        let mut z = StateVector::delta(WINDOW, 1);
        z.set(2, Complex64::new(3e-4, -1e-4));
        z.set(0, Complex64::new(-2e-4, 5e-5));
        z.set(-1, Complex64::new(1e-5, 1e-5));
        let t_step = 0.5;
        let controls = newton_step_controls(&z, t_step, &spec, 8).unwrap();
        let t_half = t_step / 2.0;
        let d1 = spec.d_f64(1);
        for (&k, &(a, b)) in &controls.per_k {
            let xp = spec.d_f64(k + 1) - d1;
            let xm = spec.d_f64(1 - k) - d1;
            if xp * t_half > 600.0 || xm * t_half > 600.0 {
                continue;
            }
            let i = Complex64::new(0.0, 1.0);
            let lhs1 = -i * (a + (xp * t_half).exp() * b);
            let lhs2 = -i * (a + (xm * t_half).exp() * b);
            let rhs1 = -z.get(k + 1) * inv_exp_integral(xp, t_half);
            let rhs2 = z.get(1 - k).conj() * inv_exp_integral(xm, t_half);
            let scale = rhs1.norm().max(rhs2.norm()).max(1e-300);
            assert!((lhs1 + rhs1).norm() / scale < 1e-10, "k = {k}");
            assert!((lhs2 + rhs2).norm() / scale < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn newton_controls_vanish_on_pure_mode() {
        let spec = spectrum_2d(5);
        let z = StateVector::delta(WINDOW, 1);
        let controls = newton_step_controls(&z, 0.5, &spec, 12).unwrap();
        assert!(controls.per_k.is_empty());
    }

    #[test]
    fn degenerate_spacing_is_rejected() {
        // b perpendicular to a + b makes d_{k+1} = d_{1-k} exactly: here
        // d_k = (k-1)^2, so every pair is degenerate.
        let a = LatticeVector::new(&[5, -1]);
        let b = LatticeVector::new(&[0, 1]);
        let spec = build_line_spectrum(&a, &b, Direction::Downhill, WINDOW).unwrap();
        let z = synthetic_snapshot();
        assert!(matches!(
            newton_step_controls(&z, 0.5, &spec, 4),
            Err(ControlError::DegenerateSpacing { k: 1 })
        ));
    }

    fn synthetic_snapshot() -> StateVector {
        let mut z = StateVector::delta(WINDOW, 1);
        z.set(2, Complex64::new(1e-4, 0.0));
        z.set(-1, Complex64::new(0.0, 1e-4));
        z.set(3, Complex64::new(-1e-4, 1e-4));
        z
    }

    #[test]
    fn push_initial_derivative() {
        // From a pure z^0 state, the push v^{+-1} = eta gives dz^1/dt = i eta,
        // so after a short time z^1 is close to i eta tau.
        let a = LatticeVector::new(&[0, 0, 1, -11]);
        let b = LatticeVector::new(&[0, -1, 0, 21]);
        let spec = build_line_spectrum(&a, &b, Direction::Downhill, WINDOW).unwrap();
        let line = LineDiffusion::from_spectrum(&spec);
        let eta = 1e-3;
        let tau = 0.01;
        let mut values = BTreeMap::new();
        values.insert(1i64, Complex64::new(eta, 0.0));
        values.insert(-1i64, Complex64::new(eta, 0.0));
        let field = CoefficientField::new(vec![Segment::Constant {
            t0: 0.0,
            t1: tau,
            values,
        }]);
        let cfg = Config::default();
        let rec = integrate(
            &StateVector::delta(WINDOW, 0),
            &field,
            &line,
            0.0,
            tau,
            &cfg,
            &IntegrateOpts::default(),
        )
        .unwrap();
        let z1 = rec.final_state.get(1);
        let predicted = Complex64::new(0.0, eta * tau);
        assert!(
            (z1 - predicted).norm() < 0.02 * predicted.norm(),
            "z1 = {z1}, predicted {predicted}"
        );
    }

    #[test]
    fn dyadic_trivial_on_pure_mode() {
        let spec = spectrum_2d(5);
        let cfg = Config::default();
        let z = StateVector::delta(WINDOW, 1);
        let (field, log) = dyadic_schedule(&z, &spec, &cfg).unwrap();
        assert!(log.entries.is_empty());
        assert_eq!(field.segments().len(), 1);
        assert!(matches!(field.segments()[0], Segment::Zero { .. }));
    }

    #[test]
    fn dyadic_contracts_small_error() {
        let spec = spectrum_2d(5);
        let cfg = Config {
            eps_start_max: 1e-2,
            ..Config::default()
        };
        let mut z = StateVector::delta(WINDOW, 1);
        z.set(2, Complex64::new(8e-4, 3e-4));
        z.set(0, Complex64::new(-5e-4, 2e-4));
        z.set(3, Complex64::new(1e-4, -2e-4));
        z.set(-2, Complex64::new(3e-5, 1e-4));
        let (field, log) = dyadic_schedule(&z, &spec, &cfg).unwrap();
        assert!(!log.entries.is_empty());
        let last = log.entries.last().unwrap();
        assert!(last.eps < cfg.eps_converged, "final eps {:.3e}", last.eps);
        assert!(log.entries.len() <= 10);
        assert!(log.d_fit.unwrap().is_finite());
        // Field tiles [0, 1].
        let span = field.span();
        assert_eq!(span, (0.0, 1.0));
    }

    #[test]
    fn dyadic_is_deterministic() {
        let spec = spectrum_2d(5);
        let cfg = Config {
            eps_start_max: 1e-2,
            ..Config::default()
        };
        let mut z = StateVector::delta(WINDOW, 1);
        z.set(2, Complex64::new(8e-4, 3e-4));
        z.set(-1, Complex64::new(-2e-4, 1e-4));
        let a = dyadic_schedule(&z, &spec, &cfg).unwrap();
        let b = dyadic_schedule(&z, &spec, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.0).unwrap(),
            serde_json::to_string(&b.0).unwrap()
        );
    }

    #[test]
    fn sup_norms_of_synthetic_field() {
        let mut values = BTreeMap::new();
        values.insert(2i64, Complex64::new(0.0, 0.25));
        values.insert(-2i64, Complex64::new(0.0, -0.25));
        let field = CoefficientField::new(vec![
            Segment::Feedback {
                t0: 0.0,
                t1: 1.0,
                gain: 256.0,
                switch_time: 1.0 / 1024.0,
                zero_tolerance: 1e-6,
            },
            Segment::Constant {
                t0: 1.0,
                t1: 1.5,
                values,
            },
            Segment::Zero { t0: 1.5, t1: 2.0 },
        ]);
        let sups = field_sup_norms(&field);
        assert_eq!(sups[&1], 256.0);
        assert_eq!(sups[&-1], 256.0);
        assert_eq!(sups[&2], 0.25);
    }
}
