//! Moments of `w(x) = exp(-x^β)` on `[0, ∞)` and the Hankel matrix they
//! generate.
//!
//! The k-th moment is `μ_k = (1/β) Γ((k+1)/β)`. Only exponents with
//! `2/β ∈ ℕ` are supported, so every Gamma argument is an integer or a
//! half-integer and can be evaluated exactly (integers) or to a controlled
//! number of bits (half-integers, through `√π`).

use std::fmt;

use rug::Integer;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fixedpoint::FixScalar;

/// The exponent β of the weight, stored as a fraction `beta_num / beta_den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WeightSpec {
    beta_num: u32,
    beta_den: u32,
}

impl WeightSpec {
    /// Validates `β = beta_num / beta_den` with `2/β` a positive integer.
    pub fn new(beta_num: u32, beta_den: u32) -> Result<Self> {
        if beta_num == 0 || beta_den == 0 {
            return Err(Error::InvalidInput(format!(
                "beta must be a positive fraction, got {beta_num}/{beta_den}"
            )));
        }
        if (2 * beta_den as u64) % beta_num as u64 != 0 {
            return Err(Error::InvalidInput(format!(
                "2/beta must be a positive integer, got beta = {beta_num}/{beta_den}"
            )));
        }
        let g = gcd(beta_num, beta_den);
        Ok(Self { beta_num: beta_num / g, beta_den: beta_den / g })
    }

    /// β = 1/2, the critical exponent.
    pub fn critical() -> Self {
        Self { beta_num: 1, beta_den: 2 }
    }

    pub fn beta_num(&self) -> u32 {
        self.beta_num
    }

    pub fn beta_den(&self) -> u32 {
        self.beta_den
    }

    pub fn beta(&self) -> f64 {
        self.beta_num as f64 / self.beta_den as f64
    }

    /// The integer `2/β`.
    pub fn two_over_beta(&self) -> u64 {
        2 * self.beta_den as u64 / self.beta_num as u64
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.beta_num, self.beta_den)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `Γ(arg_times_2 / 2)` at `frac_bits` fractional bits.
///
/// Integer arguments are exact factorials. Half-integer arguments use
/// `Γ(n + 1/2) = (n+1)(n+2)…(2n) · √π / 4^n`, with `√π` carried to enough
/// guard bits that the only rounding is the final one to `frac_bits`.
pub fn gamma_exact(arg_times_2: u64, frac_bits: u32) -> FixScalar {
    assert!(arg_times_2 >= 1, "Gamma argument must be positive");
    if arg_times_2 % 2 == 0 {
        let n = arg_times_2 / 2;
        let fact = Integer::from(Integer::factorial((n - 1) as u32));
        return FixScalar::from_integer(fact, frac_bits);
    }
    let n = (arg_times_2 - 1) / 2;
    let mut rising = Integer::from(1);
    for t in (n + 1)..=(2 * n) {
        rising *= t;
    }
    let guard = frac_bits + 64 + rising.significant_bits();
    let sqrt_pi = sqrt_pi_mantissa(guard);
    let mantissa = rising * sqrt_pi;
    // the 4^n denominator is absorbed into the fractional width
    let exact_frac = guard + 2 * n as u32;
    FixScalar::from_mantissa(mantissa, exact_frac).truncate(frac_bits)
}

/// `floor(√π · 2^bits)`.
fn sqrt_pi_mantissa(bits: u32) -> Integer {
    pi_mantissa(2 * bits).sqrt()
}

/// `π · 2^bits` (truncated, error below one unit) via Machin's formula
/// `π = 16 atan(1/5) − 4 atan(1/239)`.
pub(crate) fn pi_mantissa(bits: u32) -> Integer {
    const GUARD: u32 = 32;
    let work = bits + GUARD;
    let pi = Integer::from(16) * atan_inv(5, work) - Integer::from(4) * atan_inv(239, work);
    pi >> GUARD
}

/// `atan(1/x) · 2^bits` by its alternating Taylor series.
fn atan_inv(x: u32, bits: u32) -> Integer {
    let x2 = Integer::from(x) * x;
    let mut power = (Integer::from(1) << bits) / x;
    let mut sum = Integer::new();
    let mut k: u64 = 0;
    while power != 0 {
        let term = Integer::from(&power / (2 * k + 1));
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        power /= &x2;
        k += 1;
    }
    sum
}

/// `μ_k = (1/β) Γ((k+1)/β)` at `frac_bits` fractional bits. Exact when `1/β`
/// is an integer.
pub fn moment(spec: WeightSpec, k: usize, frac_bits: u32) -> FixScalar {
    let m = spec.two_over_beta();
    let gamma = gamma_exact(m * (k as u64 + 1), frac_bits + 1);
    // multiply by m/2: scale by m, then reinterpret one more fractional bit
    let scaled = FixScalar::from_mantissa(gamma.into_mantissa() * m, frac_bits + 2);
    scaled.truncate(frac_bits)
}

/// The moments `μ_0 … μ_{2N-2}` of a weight and the Hankel matrix
/// `H[i][j] = μ_{i+j}` they define.
#[derive(Clone, Debug)]
pub struct MomentTable {
    spec: WeightSpec,
    order: usize,
    frac_bits: u32,
    mu: Vec<FixScalar>,
}

impl MomentTable {
    pub fn spec(&self) -> WeightSpec {
        self.spec
    }

    /// Matrix order N.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn moments(&self) -> &[FixScalar] {
        &self.mu
    }

    pub fn entry(&self, i: usize, j: usize) -> &FixScalar {
        assert!(i < self.order && j < self.order, "entry ({i}, {j}) outside order {}", self.order);
        &self.mu[i + j]
    }

    /// Column `j` from the diagonal down (`H[j][j] … H[N-1][j]`) at
    /// `frac_bits` fractional bits.
    pub fn lower_column(&self, j: usize, frac_bits: u32) -> Vec<FixScalar> {
        (j..self.order).map(|k| self.mu[j + k].with_frac_bits(frac_bits)).collect()
    }

    /// All lower columns; this is the column-wise storage the factorization
    /// consumes.
    pub fn lower_columns(&self, frac_bits: u32) -> Vec<Vec<FixScalar>> {
        (0..self.order).map(|j| self.lower_column(j, frac_bits)).collect()
    }

    /// Row-major binary64 copy of the full matrix (entries may be infinite for
    /// large N).
    pub fn to_f64_matrix(&self) -> Vec<Vec<f64>> {
        let mu: Vec<f64> = self.mu.iter().map(FixScalar::to_f64).collect();
        (0..self.order).map(|i| (0..self.order).map(|j| mu[i + j]).collect()).collect()
    }
}

impl MomentTable {
    /// A Hankel matrix over an arbitrary moment sequence `μ_0 … μ_{2N-2}`,
    /// all at the same fractional width. `spec` is carried along as a label.
    pub fn from_moments(spec: WeightSpec, mu: Vec<FixScalar>) -> Result<Self> {
        if mu.is_empty() || mu.len() % 2 == 0 {
            return Err(Error::InvalidInput(format!("need 2N-1 moments, got {}", mu.len())));
        }
        let frac_bits = mu[0].frac_bits();
        if mu.iter().any(|m| m.frac_bits() != frac_bits) {
            return Err(Error::InvalidInput("moments must share fractional bits".into()));
        }
        Ok(Self { spec, order: (mu.len() + 1) / 2, frac_bits, mu })
    }
}

/// Builds the `N × N` Hankel matrix of `spec`'s moments at `frac_bits`.
pub fn build_hankel(spec: WeightSpec, order: usize, frac_bits: u32) -> Result<MomentTable> {
    if order == 0 {
        return Err(Error::InvalidInput("matrix order must be at least 1".into()));
    }
    let mu = (0..2 * order - 1).map(|k| moment(spec, k, frac_bits)).collect();
    Ok(MomentTable { spec, order, frac_bits, mu })
}

/// Order-of-magnitude estimates for the largest eigenvalue and the
/// condition number, in log2 form so they stay finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionEstimate {
    /// `log2` of `(1/β) Γ((2N-1)/β)`, the largest diagonal entry.
    pub log2_lambda_max: f64,
    /// `log2` of `λ_N / λ_1` assuming `λ_1 ≈ 1/10`.
    pub log2_cond: f64,
}

impl ConditionEstimate {
    pub fn lambda_max(&self) -> f64 {
        self.log2_lambda_max.exp2()
    }

    pub fn cond(&self) -> f64 {
        self.log2_cond.exp2()
    }
}

/// Smallest eigenvalue assumed by the estimate.
const ASSUMED_LAMBDA_MIN: f64 = 0.1;

pub fn condition_estimate(spec: WeightSpec, order: usize) -> ConditionEstimate {
    let inv_beta = 1.0 / spec.beta();
    let arg = (2 * order - 1) as f64 * inv_beta;
    let log2_lambda_max = inv_beta.log2() + ln_gamma(arg) / std::f64::consts::LN_2;
    ConditionEstimate { log2_lambda_max, log2_cond: log2_lambda_max - ASSUMED_LAMBDA_MIN.log2() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(n: u32) -> Integer {
        Integer::from(Integer::factorial(n))
    }

    #[test]
    fn weight_spec_validation() {
        assert!(WeightSpec::new(1, 2).is_ok());
        assert!(WeightSpec::new(1, 1).is_ok());
        assert!(WeightSpec::new(2, 1).is_ok());
        assert!(WeightSpec::new(1, 3).is_ok());
        assert!(WeightSpec::new(2, 3).is_ok());
        assert!(WeightSpec::new(3, 2).is_err());
        assert!(WeightSpec::new(0, 2).is_err());
        let s = WeightSpec::new(2, 4).unwrap();
        assert_eq!(s, WeightSpec::critical());
        assert_eq!(s.two_over_beta(), 4);
        assert_eq!(s.to_string(), "1/2");
    }

    #[test]
    fn gamma_of_integers_is_factorial() {
        assert_eq!(gamma_exact(4, 16), FixScalar::from_integer(1, 16));
        assert_eq!(gamma_exact(12, 0), FixScalar::from_integer(120, 0));
        assert_eq!(gamma_exact(2, 3), FixScalar::from_integer(1, 3));
    }

    #[test]
    fn gamma_of_one_half_is_sqrt_pi() {
        let g = gamma_exact(1, 256);
        assert!((g.to_f64() - 1.772_453_850_905_516).abs() < 1e-15);
        // Γ(5/2) = 3√π/4
        let g52 = gamma_exact(5, 128);
        assert!((g52.to_f64() - 0.75 * 1.772_453_850_905_516).abs() < 1e-15);
    }

    #[test]
    fn pi_digits() {
        let pi = FixScalar::from_mantissa(pi_mantissa(200), 200);
        assert_eq!(pi.to_f64(), std::f64::consts::PI);
        // 3.14159265358979323846264338327950288 against a 120-bit rendering
        let scaled = Integer::from(pi_mantissa(120) * Integer::from(Integer::u_pow_u(10, 30))) >> 120u32;
        assert_eq!(scaled.to_string(), "3141592653589793238462643383279");
    }

    #[test]
    fn half_integer_gamma_matches_sqrt_pi_product_at_high_precision() {
        // Γ(21/2) = (20)! √π / (4^10 · 10!) ; compare against an independent
        // evaluation at many more bits.
        let k = 200;
        let g = gamma_exact(21, k);
        let wide = FixScalar::from_mantissa(pi_mantissa(2 * (k + 400)).sqrt(), k + 400);
        let factor = Integer::from(fact(20) / fact(10));
        let reference = FixScalar::from_mantissa(factor * wide.mantissa(), k + 400 + 20).truncate(k);
        assert_eq!(g, reference);
    }

    #[test]
    fn critical_moments_are_twice_odd_factorials() {
        let spec = WeightSpec::critical();
        for k in 0..12usize {
            let expected = Integer::from(2) * fact(2 * k as u32 + 1);
            assert_eq!(moment(spec, k, 0), FixScalar::from_integer(expected.clone(), 0));
            assert_eq!(moment(spec, k, 77), FixScalar::from_integer(expected, 77));
        }
        assert_eq!(moment(spec, 0, 10), FixScalar::from_integer(2, 10));
        assert_eq!(moment(spec, 2, 10), FixScalar::from_integer(240, 10));
    }

    #[test]
    fn laguerre_moments() {
        let spec = WeightSpec::new(1, 1).unwrap();
        assert_eq!(moment(spec, 3, 8), FixScalar::from_integer(6, 8));
        assert_eq!(moment(spec, 0, 8), FixScalar::from_integer(1, 8));
    }

    #[test]
    fn gaussian_half_line_moments() {
        // β = 2: μ_k = Γ((k+1)/2) / 2 ; μ_0 = √π/2, μ_1 = 1/2
        let spec = WeightSpec::new(2, 1).unwrap();
        assert!((moment(spec, 0, 200).to_f64() - 0.886_226_925_452_758).abs() < 1e-15);
        assert_eq!(moment(spec, 1, 200).to_f64(), 0.5);
    }

    #[test]
    fn hankel_layout() {
        let spec = WeightSpec::critical();
        let h = build_hankel(spec, 2, 0).unwrap();
        let m = h.to_f64_matrix();
        assert_eq!(m, vec![vec![2.0, 12.0], vec![12.0, 240.0]]);
        let h1 = build_hankel(spec, 1, 0).unwrap();
        assert_eq!(h1.to_f64_matrix(), vec![vec![2.0]]);
        let h3 = build_hankel(spec, 3, 0).unwrap();
        let m3 = h3.to_f64_matrix();
        assert_eq!(m3[0], vec![2.0, 12.0, 240.0]);
        assert_eq!(m3[2][2], 725_760.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h3.entry(i, j), h3.entry(j, i));
            }
        }
        assert_eq!(h3.lower_column(1, 0).len(), 2);
        assert!(build_hankel(spec, 0, 0).is_err());
    }

    #[test]
    fn condition_estimates() {
        let spec = WeightSpec::critical();
        let est = condition_estimate(spec, 2);
        assert!((est.lambda_max() - 240.0).abs() < 1e-9);
        let h = build_hankel(spec, 2, 0).unwrap();
        assert!((est.lambda_max() - h.entry(1, 1).to_f64()).abs() < 1e-9);
        for n in 2..8usize {
            let est = condition_estimate(spec, n);
            let lam = 2.0 * fact(4 * n as u32 - 3).to_f64();
            assert!((est.lambda_max() / lam - 1.0).abs() < 1e-12, "n = {n}");
            let cond = 20.0 * fact(4 * n as u32 - 3).to_f64();
            assert!((est.cond() / cond - 1.0).abs() < 1e-12, "n = {n}");
        }
        // stays finite in log form far beyond binary64 range
        assert!(condition_estimate(spec, 4500).log2_cond.is_finite());
    }
}
