//! Frequency-response engine.
//!
//! Transfer elements are small expression trees over rational functions of
//! `s` and pure delays `e^{-sT}`. Delays are kept symbolic, so evaluating a
//! tree on the imaginary axis is exact: no Padé approximation is involved.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex frequency / complex transfer value.
pub type Complex = Complex64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TfError {
    #[error("pole at evaluation point s = {re} + j{im}")]
    PoleAtEvaluationPoint { re: f64, im: f64 },
    #[error("pole at grid point {index} (omega = {omega} rad/s)")]
    PoleAtGridPoint { index: usize, omega: f64 },
    #[error("evaluation point is not finite")]
    NonFiniteInput,
    #[error("evaluation produced a non-finite value")]
    NonFiniteResult,
    #[error("invalid frequency range: {0}")]
    InvalidRange(String),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("denominator coefficients are all zero")]
    ZeroDenominator,
    #[error("delay must be finite and non-negative, got {0}")]
    NegativeDelay(f64),
}

/// Evaluates an ascending-power polynomial with Horner's scheme.
pub(crate) fn horner(coeffs: &[f64], s: Complex) -> Complex {
    coeffs
        .iter()
        .rev()
        .fold(Complex::new(0.0, 0.0), |acc, &c| acc * s + c)
}

fn trim_trailing_zeros(mut coeffs: Vec<f64>) -> Vec<f64> {
    while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    if coeffs.is_empty() {
        coeffs.push(0.0);
    }
    coeffs
}

/// Ratio of two real polynomials in `s`, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rational {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl Rational {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, TfError> {
        let den = trim_trailing_zeros(den);
        if den.iter().all(|&c| c == 0.0) {
            return Err(TfError::ZeroDenominator);
        }
        Ok(Self {
            num: trim_trailing_zeros(num),
            den,
        })
    }

    pub fn constant(k: f64) -> Self {
        Self {
            num: vec![k],
            den: vec![1.0],
        }
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self {
            num: trim_trailing_zeros(coeffs),
            den: vec![1.0],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn evaluate(&self, s: Complex) -> Result<Complex, TfError> {
        let d = horner(&self.den, s);
        if d.re == 0.0 && d.im == 0.0 {
            return Err(TfError::PoleAtEvaluationPoint { re: s.re, im: s.im });
        }
        Ok(horner(&self.num, s) / d)
    }
}

/// Composable transfer element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransferElement {
    Rational(Rational),
    /// Pure delay `e^{-sT}` with `T` in seconds.
    Delay(f64),
    /// Product of the factors.
    Series(Vec<TransferElement>),
    /// Sum of the terms.
    Parallel(Vec<TransferElement>),
    Inverse(Box<TransferElement>),
    Scale(f64, Box<TransferElement>),
}

impl TransferElement {
    pub fn constant(k: f64) -> Self {
        Self::Rational(Rational::constant(k))
    }

    /// The element `s`.
    pub fn s() -> Self {
        Self::Rational(Rational::polynomial(vec![0.0, 1.0]))
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::Rational(Rational::polynomial(coeffs))
    }

    pub fn rational(num: Vec<f64>, den: Vec<f64>) -> Result<Self, TfError> {
        Rational::new(num, den).map(Self::Rational)
    }

    pub fn delay(seconds: f64) -> Result<Self, TfError> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(TfError::NegativeDelay(seconds));
        }
        Ok(Self::Delay(seconds))
    }

    pub fn series(self, other: TransferElement) -> Self {
        match self {
            Self::Series(mut factors) => {
                factors.push(other);
                Self::Series(factors)
            }
            first => Self::Series(vec![first, other]),
        }
    }

    pub fn parallel(self, other: TransferElement) -> Self {
        match self {
            Self::Parallel(mut terms) => {
                terms.push(other);
                Self::Parallel(terms)
            }
            first => Self::Parallel(vec![first, other]),
        }
    }

    pub fn inverse(self) -> Self {
        Self::Inverse(Box::new(self))
    }

    pub fn scale(self, k: f64) -> Self {
        Self::Scale(k, Box::new(self))
    }

    /// Exact value of the tree at `s`.
    pub fn evaluate(&self, s: Complex) -> Result<Complex, TfError> {
        if !(s.re.is_finite() && s.im.is_finite()) {
            return Err(TfError::NonFiniteInput);
        }
        let v = self.eval_inner(s)?;
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(TfError::NonFiniteResult);
        }
        Ok(v)
    }

    fn eval_inner(&self, s: Complex) -> Result<Complex, TfError> {
        match self {
            Self::Rational(r) => r.evaluate(s),
            Self::Delay(t) => Ok((-s * *t).exp()),
            Self::Series(factors) => factors
                .iter()
                .try_fold(Complex::new(1.0, 0.0), |acc, f| Ok(acc * f.eval_inner(s)?)),
            Self::Parallel(terms) => terms
                .iter()
                .try_fold(Complex::new(0.0, 0.0), |acc, t| Ok(acc + t.eval_inner(s)?)),
            Self::Inverse(inner) => {
                let v = inner.eval_inner(s)?;
                if v.re == 0.0 && v.im == 0.0 {
                    return Err(TfError::PoleAtEvaluationPoint { re: s.re, im: s.im });
                }
                Ok(v.inv())
            }
            Self::Scale(k, inner) => Ok(inner.eval_inner(s)? * *k),
        }
    }

    /// Value at `s = jω`.
    pub fn at_omega(&self, omega: f64) -> Result<Complex, TfError> {
        self.evaluate(Complex::new(0.0, omega))
    }

    pub fn at_hz(&self, f_hz: f64) -> Result<Complex, TfError> {
        self.at_omega(2.0 * PI * f_hz)
    }
}

impl From<Rational> for TransferElement {
    fn from(r: Rational) -> Self {
        Self::Rational(r)
    }
}

/// Strictly ascending angular frequencies in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, TfError> {
        if points.is_empty() {
            return Err(TfError::InvalidGrid("grid is empty".into()));
        }
        if let Some(bad) = points.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(TfError::InvalidGrid(format!(
                "point {bad} is not finite and positive"
            )));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TfError::InvalidGrid("points are not strictly ascending".into()));
        }
        Ok(Self { points })
    }

    pub fn from_hz(freqs_hz: &[f64]) -> Result<Self, TfError> {
        Self::new(freqs_hz.iter().map(|f| 2.0 * PI * f).collect())
    }

    /// Log-spaced grid from `f_min_hz` to `f_max_hz`, endpoints included.
    pub fn log(f_min_hz: f64, f_max_hz: f64, points_per_decade: usize) -> Result<Self, TfError> {
        log_grid(f_min_hz, f_max_hz, points_per_decade)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.points
    }

    pub fn hz(&self) -> Vec<f64> {
        self.points.iter().map(|w| w / (2.0 * PI)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copy of the grid without the points that fail `keep`.
    pub fn filter_hz(&self, keep: impl Fn(f64) -> bool) -> Result<Self, TfError> {
        Self::new(
            self.points
                .iter()
                .copied()
                .filter(|w| keep(w / (2.0 * PI)))
                .collect(),
        )
    }
}

pub fn log_grid(
    f_min_hz: f64,
    f_max_hz: f64,
    points_per_decade: usize,
) -> Result<FrequencyGrid, TfError> {
    if !(f_min_hz.is_finite() && f_max_hz.is_finite()) || f_min_hz <= 0.0 || f_max_hz <= f_min_hz {
        return Err(TfError::InvalidRange(format!(
            "need 0 < f_min < f_max, got [{f_min_hz}, {f_max_hz}]"
        )));
    }
    if points_per_decade == 0 {
        return Err(TfError::InvalidRange("points_per_decade must be >= 1".into()));
    }
    let decades = (f_max_hz / f_min_hz).log10();
    let intervals = ((decades * points_per_decade as f64) - 1e-9).ceil().max(1.0) as usize;
    let step = decades / intervals as f64;
    let mut points: Vec<f64> = (0..=intervals)
        .map(|k| 2.0 * PI * f_min_hz * 10f64.powf(step * k as f64))
        .collect();
    points[0] = 2.0 * PI * f_min_hz;
    points[intervals] = 2.0 * PI * f_max_hz;
    FrequencyGrid::new(points)
}

/// Element values sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex>,
}

impl FrequencyResponse {
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    pub fn phase_deg(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.arg().to_degrees()).collect()
    }

    /// Phase with 2π jumps removed, in radians.
    pub fn unwrapped_phase(&self) -> Vec<f64> {
        unwrap_phase(self.values.iter().map(|v| v.arg()))
    }
}

pub(crate) fn unwrap_phase(phases: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for p in phases {
        match out.last() {
            None => out.push(p),
            Some(&prev) => {
                let mut d = p - prev;
                d -= 2.0 * PI * (d / (2.0 * PI)).round();
                out.push(prev + d);
            }
        }
    }
    out
}

pub fn frequency_response(
    elem: &TransferElement,
    grid: &FrequencyGrid,
) -> Result<FrequencyResponse, TfError> {
    let values = grid
        .omegas()
        .iter()
        .enumerate()
        .map(|(index, &omega)| {
            elem.at_omega(omega).map_err(|e| match e {
                TfError::PoleAtEvaluationPoint { .. } => TfError::PoleAtGridPoint { index, omega },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrequencyResponse {
        grid: grid.clone(),
        values,
    })
}

impl fmt::Display for TransferElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rational(r) => write!(f, "({:?})/({:?})", r.num, r.den),
            Self::Delay(t) => write!(f, "exp(-s*{t})"),
            Self::Series(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(" * "))
            }
            Self::Parallel(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(" + "))
            }
            Self::Inverse(x) => write!(f, "1/{x}"),
            Self::Scale(k, x) => write!(f, "{k}*{x}"),
        }
    }
}
