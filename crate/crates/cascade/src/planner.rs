//! Mode-to-mode transfer planning: the 2D ladder, the 3D three-square lift,
//! the 4D uphill/downhill pair, and the per-instance sphere-geometry checks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::pde_bridge::{shear_geometry, BridgeError};
use crate::spectrum::{
    build_line_spectrum, check_assumptions, rat_from_f64, AssumptionReport, DiffusionSpectrum,
    Direction, LatticeVector, SpectrumError,
};

#[derive(Debug)]
pub enum PlanError {
    BadStart(String),
    AssumptionFail {
        step_index: usize,
        report: Box<AssumptionReport>,
    },
    LiftNotFound {
        n: i64,
    },
    DownhillNotDown {
        a_norm_sq: i128,
        c_norm_sq: i128,
    },
    Spectrum(SpectrumError),
    Bridge(BridgeError),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::BadStart(msg) => write!(f, "inadmissible start: {msg}"),
            PlanError::AssumptionFail { step_index, report } => write!(
                f,
                "assumption check failed at step {step_index}: M = {:.4} (floor {:.4}), \
                 S = {:.4} (ceiling {:.4}), spacing ok = {}",
                report.m_f64(),
                crate::spectrum::rat_to_f64(&report.m_min),
                report.s_f64(),
                crate::spectrum::rat_to_f64(&report.s_max),
                report.spacing_ok
            ),
            PlanError::LiftNotFound { n } => {
                write!(f, "no sum of three squares in ({n}, {}]", n + 8)
            }
            PlanError::DownhillNotDown { a_norm_sq, c_norm_sq } => write!(
                f,
                "downhill target is not below the source: |c|^2 = {c_norm_sq} >= |a|^2 = {a_norm_sq}"
            ),
            PlanError::Spectrum(e) => write!(f, "{e}"),
            PlanError::Bridge(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PlanError {}

impl From<SpectrumError> for PlanError {
    fn from(e: SpectrumError) -> Self {
        PlanError::Spectrum(e)
    }
}

impl From<BridgeError> for PlanError {
    fn from(e: BridgeError) -> Self {
        PlanError::Bridge(e)
    }
}

/// A signed coordinate permutation: normalized[i] = signs[i] * lab[perm[i]].
///
/// Records how a step's working frame relates to the frame of the previous
/// step's target, so synthesized fields can be mapped back.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    pub perm: Vec<usize>,
    pub signs: Vec<i64>,
}

impl AxisMap {
    pub fn identity(dim: usize) -> Self {
        AxisMap {
            perm: (0..dim).collect(),
            signs: vec![1; dim],
        }
    }

    /// The 2D coordinate swap used between ladder steps.
    pub fn swap_2d() -> Self {
        AxisMap {
            perm: vec![1, 0],
            signs: vec![1, 1],
        }
    }

    pub fn apply(&self, v: &LatticeVector) -> LatticeVector {
        LatticeVector(
            self.perm
                .iter()
                .zip(&self.signs)
                .map(|(&p, &s)| s * v.0[p])
                .collect(),
        )
    }

    pub fn apply_f64(&self, v: &[f64]) -> Vec<f64> {
        self.perm
            .iter()
            .zip(&self.signs)
            .map(|(&p, &s)| s as f64 * v[p])
            .collect()
    }

    pub fn inverse(&self) -> AxisMap {
        let dim = self.perm.len();
        let mut perm = vec![0usize; dim];
        let mut signs = vec![1i64; dim];
        for i in 0..dim {
            perm[self.perm[i]] = i;
            signs[self.perm[i]] = self.signs[i];
        }
        AxisMap { perm, signs }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| p == i) && self.signs.iter().all(|&s| s == 1)
    }
}

/// Sort |coordinates| ascending and make them nonnegative, recording the
/// signed permutation (stable on ties for determinism).
fn normalize_sorted(v: &[i64]) -> (AxisMap, Vec<i64>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by_key(|&i| (v[i].abs(), i));
    let signs: Vec<i64> = order
        .iter()
        .map(|&i| if v[i] < 0 { -1 } else { 1 })
        .collect();
    let sorted: Vec<i64> = order.iter().map(|&i| v[i].abs()).collect();
    (AxisMap { perm: order, signs }, sorted)
}

/// Normalize the first three coordinates of a 4D vector, fixing the fourth.
fn normalize_sorted_4d(v3: &[i64]) -> AxisMap {
    let (map3, _) = normalize_sorted(v3);
    let mut perm = map3.perm;
    let mut signs = map3.signs;
    perm.push(3);
    signs.push(1);
    AxisMap { perm, signs }
}

/// One mode-to-mode move a -> a + b, with its shear geometry and spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferStep {
    pub a: LatticeVector,
    pub b: LatticeVector,
    pub c: LatticeVector,
    pub direction: Direction,
    pub ell: Vec<f64>,
    pub alpha: f64,
    pub spectrum: DiffusionSpectrum,
    /// Maps the previous target's frame into this step's working frame.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_map: Option<AxisMap>,
}

impl TransferStep {
    fn assemble(
        a: LatticeVector,
        b: LatticeVector,
        direction: Direction,
        source_map: Option<AxisMap>,
        step_index: usize,
        config: &Config,
    ) -> Result<TransferStep, PlanError> {
        let c = a.add(&b);
        let spectrum = build_line_spectrum(&a, &b, direction, config.window())?;
        let report = check_assumptions(
            &spectrum,
            &rat_from_f64(config.m_min),
            &rat_from_f64(config.s_max),
        )?;
        if !report.pass {
            return Err(PlanError::AssumptionFail {
                step_index,
                report: Box::new(report),
            });
        }
        let geo = shear_geometry(&a, &b)?;
        Ok(TransferStep {
            a,
            b,
            c,
            direction,
            ell: geo.ell,
            alpha: geo.alpha,
            spectrum,
            source_map,
        })
    }

    /// The step expressed in the frame of the previous target (lab frame):
    /// a, b, c, and ell mapped back through the inverse permutation. The
    /// spectrum is frame-invariant.
    pub fn to_lab_frame(&self) -> TransferStep {
        match &self.source_map {
            None => self.clone(),
            Some(map) => {
                let inv = map.inverse();
                let mut step = self.clone();
                step.a = inv.apply(&self.a);
                step.b = inv.apply(&self.b);
                step.c = inv.apply(&self.c);
                step.ell = inv.apply_f64(&self.ell);
                step.source_map = None;
                step
            }
        }
    }

    /// Lab-frame target mode of this step.
    pub fn target_lab(&self) -> LatticeVector {
        match &self.source_map {
            None => self.c.clone(),
            Some(map) => map.inverse().apply(&self.c),
        }
    }
}

/// The 2D ladder step: a = (r, 0), b = (-r, r+1), target (0, r+1).
pub fn plan_2d(r: i64, config: &Config) -> Result<TransferStep, PlanError> {
    if r < 2 {
        return Err(PlanError::BadStart(format!(
            "2D ladder needs r >= 2, got {r}"
        )));
    }
    TransferStep::assemble(
        LatticeVector::new(&[r, 0]),
        LatticeVector::new(&[-r, r + 1]),
        Direction::Uphill,
        None,
        0,
        config,
    )
}

fn isqrt(n: i64) -> i64 {
    if n < 0 {
        return -1;
    }
    let mut r = (n as f64).sqrt() as i64;
    while r > 0 && r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Smallest m in (n, n+8] that is a sum of three squares, with the
/// lexicographically smallest sorted triple 0 <= x <= y <= z.
///
/// Legendre's theorem guarantees a representable value in every such window
/// (integers 1 mod 4 are sums of three squares), so the error never fires on
/// valid input.
pub fn three_square_lift(n: i64) -> Result<([i64; 3], i64), PlanError> {
    assert!(n >= 1, "lift needs n >= 1");
    for m in n + 1..=n + 8 {
        let mut x = 0i64;
        while 3 * x * x <= m {
            let rem_x = m - x * x;
            let mut y = x;
            while 2 * y * y <= rem_x {
                let rem = rem_x - y * y;
                let z = isqrt(rem);
                if z >= y && z * z == rem {
                    return Ok(([x, y, z], m));
                }
                y += 1;
            }
            x += 1;
        }
    }
    Err(PlanError::LiftNotFound { n })
}

/// The 3D step: normalize the source to sorted nonnegative order, lift its
/// squared norm through three squares, and aim at c = (x, -z, y).
pub fn plan_3d(source: &[i64; 3], config: &Config) -> Result<TransferStep, PlanError> {
    if source.iter().all(|&c| c == 0) {
        return Err(PlanError::BadStart("3D source must be nonzero".into()));
    }
    let (map, sorted) = normalize_sorted(source);
    let a = LatticeVector(sorted);
    let n = a.norm_sq() as i64;
    let ([x, y, z], _) = three_square_lift(n)?;
    let c = LatticeVector::new(&[x, -z, y]);
    let b = c.sub(&a);
    let source_map = if map.is_identity() { None } else { Some(map) };
    TransferStep::assemble(a, b, Direction::Uphill, source_map, 0, config)
}

/// The 4D pair: uphill (m,n,l,p) -> (m,n,l,-p-1) with b = (0,0,0,-2p-1),
/// then downhill (m,n,l,-p-1) -> (x,y,z,p) through the three-square lift.
pub fn plan_4d(
    source: &[i64; 3],
    p: i64,
    config: &Config,
) -> Result<(TransferStep, TransferStep), PlanError> {
    if source.iter().all(|&c| c == 0) {
        return Err(PlanError::BadStart("4D source must be nonzero".into()));
    }
    if p < 10 {
        return Err(PlanError::BadStart(format!(
            "4D construction needs p >= 10, got {p}"
        )));
    }
    let [m, n, l] = *source;
    let up_a = LatticeVector::new(&[m, n, l, p]);
    let up_b = LatticeVector::new(&[0, 0, 0, -2 * p - 1]);
    let uphill = TransferStep::assemble(up_a, up_b, Direction::Uphill, None, 0, config)?;

    let map = normalize_sorted_4d(source);
    let down_a = map.apply(&uphill.c);
    let nn = down_a.0[0] * down_a.0[0] + down_a.0[1] * down_a.0[1] + down_a.0[2] * down_a.0[2];
    let ([x, y, z], _) = three_square_lift(nn)?;
    let down_c = LatticeVector::new(&[x, -z, y, p]);
    if down_c.norm_sq() >= down_a.norm_sq() {
        // Cannot occur for 2p + 1 > 8; kept as a hard error.
        return Err(PlanError::DownhillNotDown {
            a_norm_sq: down_a.norm_sq(),
            c_norm_sq: down_c.norm_sq(),
        });
    }
    let down_b = down_c.sub(&down_a);
    let source_map = if map.is_identity() { None } else { Some(map) };
    let downhill =
        TransferStep::assemble(down_a, down_b, Direction::Downhill, source_map, 1, config)?;
    Ok((uphill, downhill))
}

/// Smallest p >= 10 whose 4D uphill and downhill spectra both pass the
/// configured thresholds for the given source.
pub fn smallest_admissible_p(source: &[i64; 3], config: &Config) -> Result<i64, PlanError> {
    for p in 10..=512 {
        match plan_4d(source, p, config) {
            Ok(_) => return Ok(p),
            Err(PlanError::AssumptionFail { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(PlanError::BadStart(
        "no admissible p <= 512 for the configured thresholds".into(),
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct GeometryItem {
    pub name: &'static str,
    pub ok: bool,
    pub margin: f64,
}

/// Per-instance sphere-geometry margins: the angle, growth, and separation
/// bounds that make a transfer admissible uniformly in k. Margins are literal
/// minima over the checked k-range and K is the smallest uniformity constant
/// making every item pass.
#[derive(Clone, Debug, Serialize)]
pub struct GeometryCheck {
    pub uniformity: f64,
    pub delta: f64,
    pub items: [GeometryItem; 4],
}

impl GeometryCheck {
    pub fn all_ok(&self) -> bool {
        self.items.iter().all(|item| item.ok)
    }
}

pub fn sphere_geometry_check(step: &TransferStep, k_range: (i64, i64)) -> GeometryCheck {
    let a = &step.a;
    let b = &step.b;
    let a_norm = a.norm();
    let aa = a.norm_sq();

    let difference = GeometryItem {
        name: "difference-nonzero",
        ok: !b.is_zero(),
        margin: b.norm() / a_norm,
    };
    let angle = GeometryItem {
        name: "angle-bound",
        ok: step.alpha > 0.0,
        margin: step.alpha,
    };

    // |a + kb| >= K^{-1} |a| |k| + |a| for k != 0, 1.
    let mut growth_ok = true;
    let mut growth_margin = f64::INFINITY;
    for k in k_range.0..=k_range.1 {
        if k == 0 || k == 1 {
            continue;
        }
        let site_sq = a.add_scaled(k, b).norm_sq();
        if site_sq <= aa {
            growth_ok = false;
            growth_margin = 0.0;
            continue;
        }
        let margin = ((site_sq as f64).sqrt() - a_norm) / (a_norm * k.abs() as f64);
        growth_margin = growth_margin.min(margin);
    }
    let growth = GeometryItem {
        name: "growth-bound",
        ok: growth_ok,
        margin: growth_margin,
    };

    // |a+(k+1)b|^2 - |a+(1-k)b|^2 >= K^{-1} |a| k for k >= 1; the difference
    // equals 4k(|c|^2 - c.a) identically.
    let mut sep_ok = true;
    let mut sep_margin = f64::INFINITY;
    for k in 1..k_range.1 {
        let sep = a.add_scaled(k + 1, b).norm_sq() - a.add_scaled(1 - k, b).norm_sq();
        if sep <= 0 {
            sep_ok = false;
            sep_margin = 0.0;
            continue;
        }
        sep_margin = sep_margin.min(sep as f64 / (a_norm * k as f64));
    }
    let separation = GeometryItem {
        name: "separation-bound",
        ok: sep_ok,
        margin: sep_margin,
    };

    let mut uniformity = 1.0 / angle.margin;
    if growth.ok && growth.margin > 0.0 {
        uniformity = uniformity.max(1.0 / growth.margin);
    }
    if separation.ok && separation.margin > 0.0 {
        uniformity = uniformity.max(1.0 / separation.margin);
    }
    let delta = step.c.norm() / a_norm - 1.0;

    GeometryCheck {
        uniformity,
        delta: delta.abs(),
        items: [difference, angle, growth, separation],
    }
}

/// A chained sequence of transfers. `mode_trace` records the lab-frame mode
/// at the start and after each block (one step in 3D, two in 2D and 4D);
/// intermediate modes live inside the blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CascadePlan {
    pub dimension: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p: Option<i64>,
    pub steps: Vec<TransferStep>,
    pub mode_trace: Vec<LatticeVector>,
}

impl CascadePlan {
    pub fn steps_per_block(&self) -> usize {
        match self.dimension {
            3 => 1,
            _ => 2,
        }
    }

    pub fn n_blocks(&self) -> usize {
        if self.steps.is_empty() {
            0
        } else {
            self.steps.len() / self.steps_per_block()
        }
    }
}

fn at_step<T>(index: usize, result: Result<T, PlanError>) -> Result<T, PlanError> {
    result.map_err(|e| match e {
        PlanError::AssumptionFail { report, .. } => PlanError::AssumptionFail {
            step_index: index,
            report,
        },
        other => other,
    })
}

/// Chain `n_steps` blocks starting from `start`.
///
/// 2D alternates the coordinate swap: (r,0) -> (0,r+1) -> (r+2,0) per block.
/// 3D chains single lift steps. 4D chains uphill/downhill pairs with the
/// fourth coordinate fixed at start[3].
pub fn build_cascade(
    dimension: usize,
    start: &LatticeVector,
    n_steps: usize,
    config: &Config,
) -> Result<CascadePlan, PlanError> {
    if start.dim() != dimension {
        return Err(PlanError::BadStart(format!(
            "start {start} does not have dimension {dimension}"
        )));
    }
    let mut steps = Vec::new();
    let mut mode_trace = vec![start.clone()];
    let mut p = None;

    match dimension {
        2 => {
            if start.0[1] != 0 || start.0[0] < 2 {
                return Err(PlanError::BadStart(format!(
                    "2D cascade starts from (r, 0) with r >= 2, got {start}"
                )));
            }
            let mut r = start.0[0];
            for block in 0..n_steps {
                let first = at_step(steps.len(), plan_2d(r, config))?;
                steps.push(first);
                let mut second = at_step(steps.len(), plan_2d(r + 1, config))?;
                second.source_map = Some(AxisMap::swap_2d());
                let target = second.target_lab();
                steps.push(second);
                mode_trace.push(target);
                r += 2;
                let _ = block;
            }
        }
        3 => {
            let mut current = [start.0[0], start.0[1], start.0[2]];
            for _ in 0..n_steps {
                let step = at_step(steps.len(), plan_3d(&current, config))?;
                let target = step.target_lab();
                current = [target.0[0], target.0[1], target.0[2]];
                steps.push(step);
                mode_trace.push(target);
            }
        }
        4 => {
            let start_p = start.0[3];
            p = Some(start_p);
            let mut current = [start.0[0], start.0[1], start.0[2]];
            for _ in 0..n_steps {
                let (uphill, downhill) = at_step(steps.len(), plan_4d(&current, start_p, config))?;
                let target = downhill.target_lab();
                steps.push(uphill);
                steps.push(downhill);
                current = [target.0[0], target.0[1], target.0[2]];
                mode_trace.push(target);
            }
        }
        other => {
            return Err(PlanError::BadStart(format!(
                "cascades exist in dimensions 2, 3, 4; got {other}"
            )))
        }
    }

    Ok(CascadePlan {
        dimension,
        p,
        steps,
        mode_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{rat_frac, rat_int};

    fn desk_config() -> Config {
        Config {
            m_min: 8.0,
            ..Config::default()
        }
    }

    #[test]
    fn plan_2d_r5_values() {
        let step = plan_2d(5, &desk_config()).unwrap();
        assert_eq!(step.a, LatticeVector::new(&[5, 0]));
        assert_eq!(step.c, LatticeVector::new(&[0, 6]));
        assert_eq!(step.spectrum.rescale, rat_int(11));
        assert!((step.alpha * step.alpha - 36.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_squared_at_least_half_2d() {
        use crate::pde_bridge::shear_geometry;
        use crate::spectrum::rat_frac;
        // The angle bound holds for every r; the planned step additionally
        // passes the assumption gate once r >= 4 at the desk threshold.
        for r in 2..200i64 {
            let a = LatticeVector::new(&[r, 0]);
            let b = LatticeVector::new(&[-r, r + 1]);
            let geo = shear_geometry(&a, &b).unwrap();
            assert!(geo.alpha_sq >= rat_frac(1, 2), "alpha^2 < 1/2 at r = {r}");
        }
        for r in [4, 5, 8, 16, 64] {
            let step = plan_2d(r, &desk_config()).unwrap();
            assert!(step.alpha * step.alpha >= 0.5 - 1e-12);
        }
    }

    #[test]
    fn lift_examples() {
        assert_eq!(three_square_lift(25).unwrap(), ([0, 1, 5], 26));
        assert_eq!(three_square_lift(1).unwrap(), ([0, 1, 1], 2));
        // 28 = 4*7 and 31 = 7 mod 8 are not sums of three squares.
        let (triple, m) = three_square_lift(27).unwrap();
        assert_eq!((triple, m), ([0, 2, 5], 29));
    }

    #[test]
    fn plan_3d_from_340() {
        let step = plan_3d(&[3, 4, 0], &desk_config()).unwrap();
        assert_eq!(step.a, LatticeVector::new(&[0, 3, 4]));
        assert_eq!(step.c, LatticeVector::new(&[0, -5, 1]));
        assert_eq!(step.c.norm_sq(), 26);
        assert_eq!(step.spectrum.rescale, rat_int(1));
        let map = step.source_map.as_ref().unwrap();
        assert_eq!(map.apply(&LatticeVector::new(&[3, 4, 0])), step.a);
    }

    #[test]
    fn plan_3d_small_norm_range() {
        let step = plan_3d(&[1, 1, 1], &desk_config()).unwrap();
        let c2 = step.c.norm_sq();
        assert!((4..=11).contains(&c2));
    }

    #[test]
    fn plan_4d_pair_values() {
        let mut cfg = desk_config();
        cfg.m_min = 8.0;
        let (up, down) = plan_4d(&[1, 0, 0], 10, &cfg).unwrap();
        assert_eq!(up.b, LatticeVector::new(&[0, 0, 0, -21]));
        assert_eq!(up.spectrum.rescale, rat_int(21));
        assert_eq!(up.c, LatticeVector::new(&[1, 0, 0, -11]));
        // alpha^2 = 1 - p^2/(p^2 + |mnl|^2) = 1/101 for (1,0,0).
        assert!((up.alpha * up.alpha - 1.0 / 101.0).abs() < 1e-12);

        assert_eq!(down.a, LatticeVector::new(&[0, 0, 1, -11]));
        assert_eq!(down.c.norm_sq(), 102);
        assert_eq!(down.spectrum.rescale, rat_int(20));
        assert_eq!(down.spectrum.shift, rat_frac(102, 20));
        assert!(down.c.norm_sq() < down.a.norm_sq());
    }

    #[test]
    fn plan_4d_rejects_small_p_at_default_thresholds() {
        let cfg = Config::default();
        assert!(matches!(
            plan_4d(&[1, 0, 0], 10, &cfg),
            Err(PlanError::AssumptionFail { .. })
        ));
        let p = smallest_admissible_p(&[1, 0, 0], &cfg).unwrap();
        assert_eq!(p, 16);
        assert!(plan_4d(&[1, 0, 0], p, &cfg).is_ok());
    }

    #[test]
    fn uphill_4d_shift_is_constant() {
        let cfg = desk_config();
        for source in [[1i64, 0, 0], [2, -3, 1], [0, 0, 7]] {
            let (up, _) = plan_4d(&source, 10, &cfg).unwrap();
            assert_eq!(up.b, LatticeVector::new(&[0, 0, 0, -21]));
            let max_abs = up.b.0.iter().map(|c| c.abs()).max().unwrap();
            assert_eq!(max_abs, 21);
        }
    }

    #[test]
    fn geometry_separation_identity() {
        // 3D step (0,3,4) -> (0,-5,1): separation at k = 1 equals
        // 4(|c|^2 - c.a) = 148.
        let step = plan_3d(&[3, 4, 0], &desk_config()).unwrap();
        let sep = step.a.add_scaled(2, &step.b).norm_sq() - step.a.norm_sq();
        assert_eq!(sep, 148);
        let check = sphere_geometry_check(&step, (-48, 49));
        assert!(check.all_ok());
        assert!(check.uniformity.is_finite());
    }

    #[test]
    fn geometry_growth_on_2d_ladder() {
        let step = plan_2d(5, &desk_config()).unwrap();
        let check = sphere_geometry_check(&step, (-48, 49));
        assert!(check.items[2].ok);
        assert!(check.items[2].margin > 0.0);
    }

    #[test]
    fn cascade_2d_trace() {
        let plan = build_cascade(2, &LatticeVector::new(&[8, 0]), 3, &desk_config()).unwrap();
        let norms: Vec<f64> = plan.mode_trace.iter().map(|m| m.norm()).collect();
        assert_eq!(norms, vec![8.0, 10.0, 12.0, 14.0]);
        assert_eq!(plan.steps.len(), 6);
        // Second step of each block sees the swapped frame.
        assert_eq!(plan.steps[1].a, LatticeVector::new(&[9, 0]));
        assert_eq!(plan.steps[1].source_map, Some(AxisMap::swap_2d()));
    }

    #[test]
    fn cascade_chaining_and_monotone_trace() {
        let cfg = desk_config();
        let plans = [
            build_cascade(2, &LatticeVector::new(&[8, 0]), 2, &cfg).unwrap(),
            build_cascade(3, &LatticeVector::new(&[5, 0, 0]), 3, &cfg).unwrap(),
            build_cascade(4, &LatticeVector::new(&[1, 0, 0, 16]), 2, &cfg).unwrap(),
        ];
        for plan in &plans {
            for pair in plan.steps.windows(2) {
                let prev_target = pair[0].target_lab();
                let mapped = match &pair[1].source_map {
                    Some(map) => map.apply(&prev_target),
                    None => prev_target,
                };
                // Within 4D blocks the chain passes from an uphill step to the
                // downhill step of the same block or on to the next block.
                assert_eq!(mapped, pair[1].a, "chain break in dim {}", plan.dimension);
            }
            for w in plan.mode_trace.windows(2) {
                assert!(
                    w[1].norm_sq() > w[0].norm_sq(),
                    "trace not strictly uphill in dim {}",
                    plan.dimension
                );
            }
        }
    }

    #[test]
    fn cascade_zero_steps() {
        let plan = build_cascade(3, &LatticeVector::new(&[5, 0, 0]), 0, &desk_config()).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.mode_trace, vec![LatticeVector::new(&[5, 0, 0])]);
    }

    #[test]
    fn axis_map_inverse_round_trip() {
        let (map, sorted) = normalize_sorted(&[3, -7, 0]);
        assert_eq!(sorted, vec![0, 3, 7]);
        let v = LatticeVector::new(&[3, -7, 0]);
        assert_eq!(map.apply(&v), LatticeVector::new(&[0, 3, 7]));
        assert_eq!(map.inverse().apply(&map.apply(&v)), v);
    }
}
