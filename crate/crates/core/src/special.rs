//! Scalar special functions on the positive reals.
//!
//! Everything Dirichlet-related in this crate bottoms out in [`ln_gamma`] and
//! [`digamma`]. Both reject non-positive and non-finite arguments instead of
//! extending by reflection.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DomainError {
    #[error("{function} is defined only for finite x > 0, got {value}")]
    NotPositive { function: &'static str, value: f64 },
    #[error("{function} needs at least two components, got {len}")]
    TooFewComponents { function: &'static str, len: usize },
}

/// A finite, strictly positive real.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        check("PositiveReal", value).map(Self)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn ln_gamma(self) -> f64 {
        ln_gamma_unchecked(self.0)
    }

    pub fn digamma(self) -> f64 {
        digamma_unchecked(self.0)
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

fn check(function: &'static str, x: f64) -> Result<f64, DomainError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(DomainError::NotPositive { function, value: x })
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

// ln(sqrt(2*pi))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> Result<f64, DomainError> {
    check("ln_gamma", x).map(ln_gamma_unchecked)
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x) = Γ(x + 1) / x keeps the Lanczos sum away from its pole.
        return lanczos_ln_gamma(x + 1.0) - x.ln();
    }
    lanczos_ln_gamma(x)
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    let z = x - 1.0;
    let mut sum = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// Below this the recurrence ψ(x) = ψ(x + 1) − 1/x is applied before the
/// asymptotic series takes over.
const DIGAMMA_ASYMPTOTIC_THRESHOLD: f64 = 6.0;

/// B₂ₖ / 2k for k = 1..=8.
const DIGAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
    -3_617.0 / 8_160.0,
];

/// The digamma function ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> Result<f64, DomainError> {
    check("digamma", x).map(digamma_unchecked)
}

fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < DIGAMMA_ASYMPTOTIC_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner over powers of 1/x² from the highest term down.
    let mut tail = 0.0;
    for &c in DIGAMMA_SERIES.iter().rev() {
        tail = (tail + c) * inv2;
    }
    shift + x.ln() - 0.5 / x - tail
}

/// Multivariate log-beta, Σⱼ ln Γ(αⱼ) − ln Γ(Σⱼ αⱼ).
pub fn ln_beta_multivariate(alpha: &[f64]) -> Result<f64, DomainError> {
    if alpha.len() < 2 {
        return Err(DomainError::TooFewComponents {
            function: "ln_beta_multivariate",
            len: alpha.len(),
        });
    }
    let mut total = 0.0;
    let mut sum_ln = 0.0;
    for &a in alpha {
        check("ln_beta_multivariate", a)?;
        total += a;
        sum_ln += ln_gamma_unchecked(a);
    }
    let total = check("ln_beta_multivariate", total)?;
    Ok(sum_ln - ln_gamma_unchecked(total))
}
