//! Diffusion coefficients on a Fourier line {a + kb}.
//!
//! All arithmetic here is exact rational: the normalizations d_0 = 0, d_1 = 1
//! (uphill) or d_0 = 1, d_1 = 0 (downhill) and the spacing margins are checked
//! with zero rounding error. Floating point enters only when a spectrum is
//! converted for the integrator.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

pub type Rational = BigRational;

pub fn rat_int(n: i128) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn rat_frac(num: i128, den: i128) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact rational from an f64 (every finite f64 is a dyadic rational).
pub fn rat_from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("rational in f64 range")
}

/// A lattice wavenumber in Z^d, d in {2, 3, 4}.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeVector(pub Vec<i64>);

impl LatticeVector {
    pub fn new(coords: &[i64]) -> Self {
        LatticeVector(coords.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn dot(&self, other: &LatticeVector) -> i128 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&x, &y)| x as i128 * y as i128)
            .sum()
    }

    pub fn norm_sq(&self) -> i128 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn add(&self, other: &LatticeVector) -> LatticeVector {
        LatticeVector(self.0.iter().zip(&other.0).map(|(&x, &y)| x + y).collect())
    }

    pub fn sub(&self, other: &LatticeVector) -> LatticeVector {
        LatticeVector(self.0.iter().zip(&other.0).map(|(&x, &y)| x - y).collect())
    }

    /// self + k * other, saturating nowhere: coordinates stay well inside i64
    /// for every window used here.
    pub fn add_scaled(&self, k: i64, other: &LatticeVector) -> LatticeVector {
        LatticeVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&x, &y)| x + k * y)
                .collect(),
        )
    }
}

impl fmt::Debug for LatticeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for LatticeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uphill,
    Downhill,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Uphill => write!(f, "uphill"),
            Direction::Downhill => write!(f, "downhill"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumError {
    ZeroVector,
    ParallelVectors,
    ZeroNormalization,
    WrongDirection { l: i128 },
    NegativeCoefficient { k: i64 },
    InvalidWindow,
    WindowTooSmall,
}

impl fmt::Display for SpectrumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumError::ZeroVector => write!(f, "a and b must be nonzero lattice vectors"),
            SpectrumError::ParallelVectors => write!(f, "a and b are parallel"),
            SpectrumError::ZeroNormalization => write!(f, "|a+b|^2 = |a|^2: normalization L = 0"),
            SpectrumError::WrongDirection { l } => {
                write!(
                    f,
                    "sign of |a+b|^2 - |a|^2 = {l} contradicts requested direction"
                )
            }
            SpectrumError::NegativeCoefficient { k } => {
                write!(f, "d_{k} < 0: line leaves the admissible ball")
            }
            SpectrumError::InvalidWindow => write!(f, "window must contain [-2, 2]"),
            SpectrumError::WindowTooSmall => {
                write!(f, "d_k not monotone at window edges: minimum not certified")
            }
        }
    }
}

impl std::error::Error for SpectrumError {}

fn serialize_small_rat<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    let num = r.numer().to_i64().ok_or_else(|| {
        serde::ser::Error::custom("rational numerator exceeds i64 in serialization")
    })?;
    let den = r.denom().to_i64().ok_or_else(|| {
        serde::ser::Error::custom("rational denominator exceeds i64 in serialization")
    })?;
    (num, den).serialize(s)
}

fn deserialize_small_rat<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
    let (num, den) = <(i64, i64)>::deserialize(d)?;
    Ok(rat_frac(num as i128, den as i128))
}

fn serialize_d_map<S: serde::Serializer>(
    v: &(i64, Vec<Rational>),
    s: S,
) -> Result<S::Ok, S::Error> {
    let (k_min, d) = v;
    let mut rows = Vec::with_capacity(d.len());
    for (i, r) in d.iter().enumerate() {
        let num = r
            .numer()
            .to_i64()
            .ok_or_else(|| serde::ser::Error::custom("d_k numerator exceeds i64"))?;
        let den = r
            .denom()
            .to_i64()
            .ok_or_else(|| serde::ser::Error::custom("d_k denominator exceeds i64"))?;
        rows.push((k_min + i as i64, num, den));
    }
    rows.serialize(s)
}

fn deserialize_d_map<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> Result<(i64, Vec<Rational>), D::Error> {
    let rows = <Vec<(i64, i64, i64)>>::deserialize(d)?;
    if rows.is_empty() {
        return Err(serde::de::Error::custom("empty d map"));
    }
    let k_min = rows[0].0;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (k, num, den)) in rows.iter().enumerate() {
        if *k != k_min + i as i64 {
            return Err(serde::de::Error::custom("d map indices not contiguous"));
        }
        out.push(rat_frac(*num as i128, *den as i128));
    }
    Ok((k_min, out))
}

/// The rescaled diffusion coefficients d_k = |a + kb|^2 / L - A on a window
/// of line indices, together with the normalization (L, A).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionSpectrum {
    pub a: LatticeVector,
    pub b: LatticeVector,
    pub direction: Direction,
    #[serde(
        rename = "L",
        serialize_with = "serialize_small_rat",
        deserialize_with = "deserialize_small_rat"
    )]
    pub rescale: Rational,
    #[serde(
        rename = "A",
        serialize_with = "serialize_small_rat",
        deserialize_with = "deserialize_small_rat"
    )]
    pub shift: Rational,
    pub window: (i64, i64),
    #[serde(
        rename = "d",
        serialize_with = "serialize_d_map",
        deserialize_with = "deserialize_d_map"
    )]
    d: (i64, Vec<Rational>),
}

impl DiffusionSpectrum {
    pub fn d(&self, k: i64) -> &Rational {
        let (k_min, ref d) = self.d;
        &d[(k - k_min) as usize]
    }

    pub fn d_f64(&self, k: i64) -> f64 {
        rat_to_f64(self.d(k))
    }

    pub fn k_min(&self) -> i64 {
        self.window.0
    }

    pub fn k_max(&self) -> i64 {
        self.window.1
    }

    /// Full d line as f64, for the integrator and controller.
    pub fn line_f64(&self) -> Vec<f64> {
        self.d.1.iter().map(rat_to_f64).collect()
    }

    /// |a + kb|^2 as an exact integer, valid for any k.
    pub fn site_norm_sq(&self, k: i64) -> i128 {
        self.a.add_scaled(k, &self.b).norm_sq()
    }

    /// Coefficients of d as a quadratic q(k) = q2 k^2 + q1 k + q0.
    fn quadratic(&self) -> (Rational, Rational, Rational) {
        let l = &self.rescale;
        let q2 = rat_int(self.b.norm_sq()) / l;
        let q1 = rat_int(2 * self.a.dot(&self.b)) / l;
        let q0 = rat_int(self.a.norm_sq()) / l - &self.shift;
        (q2, q1, q0)
    }
}

fn serialize_rat_exact<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    (r.to_string(), rat_to_f64(r)).serialize(s)
}

/// Margins and pass/fail for the admissibility conditions on a spectrum.
/// Rationals serialize as (exact "num/den" string, f64 approximation).
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    /// min_{k != 0,1} d_k over the window (certified global by edge monotonicity).
    #[serde(serialize_with = "serialize_rat_exact")]
    pub m: Rational,
    pub m_argmin: i64,
    /// sum over the window of 1/(1 + d_k) plus the quadratic-growth tail bound.
    #[serde(serialize_with = "serialize_rat_exact")]
    pub s: Rational,
    #[serde(serialize_with = "serialize_rat_exact")]
    pub s_window: Rational,
    #[serde(serialize_with = "serialize_rat_exact")]
    pub s_tail: Rational,
    /// Certified c > 0 with d_k >= c k^2 for all |k| >= 2.
    #[serde(serialize_with = "serialize_rat_exact")]
    pub growth_coefficient: Rational,
    pub spacing_ok: bool,
    /// min over k >= 1 of d_{k+1} - d_{1-k} - 1; linear in k so the minimum
    /// sits at k = 1 and the check covers all of N.
    #[serde(serialize_with = "serialize_rat_exact")]
    pub spacing_margin: Rational,
    #[serde(serialize_with = "serialize_rat_exact")]
    pub m_min: Rational,
    #[serde(serialize_with = "serialize_rat_exact")]
    pub s_max: Rational,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn m_f64(&self) -> f64 {
        rat_to_f64(&self.m)
    }

    pub fn s_f64(&self) -> f64 {
        rat_to_f64(&self.s)
    }
}

/// Build the exact coefficients d_k for the line {a + kb}.
///
/// Uphill: L = |a+b|^2 - |a|^2 > 0, A = |a|^2/L, so (d_0, d_1) = (0, 1).
/// Downhill: L = |a|^2 - |a+b|^2 > 0, A = |a+b|^2/L, so (d_0, d_1) = (1, 0).
pub fn build_line_spectrum(
    a: &LatticeVector,
    b: &LatticeVector,
    direction: Direction,
    window: (i64, i64),
) -> Result<DiffusionSpectrum, SpectrumError> {
    if a.is_zero() || b.is_zero() {
        return Err(SpectrumError::ZeroVector);
    }
    assert_eq!(a.dim(), b.dim(), "a and b must have the same dimension");
    let ab = a.dot(b);
    if ab * ab >= a.norm_sq() * b.norm_sq() {
        return Err(SpectrumError::ParallelVectors);
    }
    if window.0 > -2 || window.1 < 2 {
        return Err(SpectrumError::InvalidWindow);
    }

    let gap = a.add(b).norm_sq() - a.norm_sq();
    if gap == 0 {
        return Err(SpectrumError::ZeroNormalization);
    }
    let (l, anchor) = match direction {
        Direction::Uphill => {
            if gap < 0 {
                return Err(SpectrumError::WrongDirection { l: gap });
            }
            (gap, a.norm_sq())
        }
        Direction::Downhill => {
            if gap > 0 {
                return Err(SpectrumError::WrongDirection { l: gap });
            }
            (-gap, a.add(b).norm_sq())
        }
    };

    let mut d = Vec::with_capacity((window.1 - window.0 + 1) as usize);
    for k in window.0..=window.1 {
        let num = a.add_scaled(k, b).norm_sq() - anchor;
        if num < 0 {
            return Err(SpectrumError::NegativeCoefficient { k });
        }
        d.push(rat_frac(num, l));
    }

    let rescale = rat_int(l);
    let shift = rat_frac(anchor, l);
    Ok(DiffusionSpectrum {
        a: a.clone(),
        b: b.clone(),
        direction,
        rescale,
        shift,
        window,
        d: (window.0, d),
    })
}

/// Certify c > 0 with d_k >= c k^2 for every integer |k| >= 2, starting from
/// the exact window minimum of d_k / k^2 and halving until the beyond-window
/// margin q(k) - c k^2 is provably nonnegative on both sides.
fn certify_growth(spec: &DiffusionSpectrum) -> Result<Rational, SpectrumError> {
    let (q2, q1, q0) = spec.quadratic();
    let (k_min, k_max) = spec.window;

    let mut c: Option<Rational> = None;
    for k in k_min..=k_max {
        if k.abs() < 2 {
            continue;
        }
        let ratio = spec.d(k) / rat_int((k as i128) * (k as i128));
        if c.as_ref().is_none_or(|best| ratio < *best) {
            c = Some(ratio);
        }
    }
    let mut c = c.ok_or(SpectrumError::WindowTooSmall)?;
    if c <= Rational::zero() {
        return Err(SpectrumError::WindowTooSmall);
    }

    // Margin m(k) = (q2 - c) k^2 + q1 k + q0 must be >= 0 and growing away
    // from the window on both sides.
    let margin =
        |c: &Rational, k: i128| -> Rational { (&q2 - c) * rat_int(k * k) + &q1 * rat_int(k) + &q0 };
    let verified = |c: &Rational| -> bool {
        let lead = &q2 - c;
        if lead.is_negative() {
            return false;
        }
        let right = k_max as i128 + 1;
        let left = k_min as i128 - 1;
        let right_ok =
            margin(c, right) >= Rational::zero() && margin(c, right + 1) >= margin(c, right);
        let left_ok = margin(c, left) >= Rational::zero() && margin(c, left - 1) >= margin(c, left);
        right_ok && left_ok
    };

    for _ in 0..8 {
        if verified(&c) {
            return Ok(c);
        }
        c /= rat_int(2);
    }
    Err(SpectrumError::WindowTooSmall)
}

/// Compute exact M, S (window sum plus tail bound), and the spacing margin,
/// then compare against the configured thresholds.
pub fn check_assumptions(
    spec: &DiffusionSpectrum,
    m_min: &Rational,
    s_max: &Rational,
) -> Result<AssumptionReport, SpectrumError> {
    let (k_min, k_max) = spec.window;

    // The reported M is global only if d is monotone in |k| at both edges;
    // d is a quadratic in k so edge monotonicity propagates outward.
    if !(spec.d(k_max) > spec.d(k_max - 1) && spec.d(k_min) > spec.d(k_min + 1)) {
        return Err(SpectrumError::WindowTooSmall);
    }

    let mut m: Option<(Rational, i64)> = None;
    for k in k_min..=k_max {
        if k == 0 || k == 1 {
            continue;
        }
        let dk = spec.d(k);
        if m.as_ref().is_none_or(|(best, _)| dk < best) {
            m = Some((dk.clone(), k));
        }
    }
    let (m, m_argmin) = m.ok_or(SpectrumError::WindowTooSmall)?;

    let one = rat_int(1);
    let mut s_window = Rational::zero();
    for k in k_min..=k_max {
        s_window += (&one + spec.d(k)).recip();
    }

    let growth = certify_growth(spec)?;
    // Sum over |k| > K of 1/(1 + c k^2) <= 2/(c K).
    let edge = std::cmp::min(-k_min, k_max) as i128;
    let s_tail = rat_int(2) / (&growth * rat_int(edge));
    let s = &s_window + &s_tail;

    // d_{k+1} - d_{1-k} = 2k (2 q2 + q1) identically, so the minimum over
    // k >= 1 is attained at k = 1.
    let (q2, q1, _) = spec.quadratic();
    let spacing_margin = rat_int(2) * (rat_int(2) * &q2 + &q1) - &one;
    let spacing_ok = spacing_margin >= Rational::zero();

    let pass = m >= *m_min && s <= *s_max && spacing_ok;
    Ok(AssumptionReport {
        m,
        m_argmin,
        s,
        s_window,
        s_tail,
        growth_coefficient: growth,
        spacing_ok,
        spacing_margin,
        m_min: m_min.clone(),
        s_max: s_max.clone(),
        pass,
    })
}
