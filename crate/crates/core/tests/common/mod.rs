//! Exact rational oracles, independent of the fixed-point pipeline.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, v| acc * v)
}

/// Moments of `e^{-x^β}` for β = 1 (`k!`) and β = 1/2 (`2·(2k+1)!`).
pub fn exact_moment(beta_den: u32, k: usize) -> BigInt {
    match beta_den {
        1 => factorial(k as u64),
        2 => factorial(2 * k as u64 + 1) * 2,
        _ => panic!("oracle covers beta = 1 and beta = 1/2 only"),
    }
}

pub fn exact_hankel(beta_den: u32, n: usize) -> Vec<Vec<BigRational>> {
    (0..n)
        .map(|i| (0..n).map(|j| BigRational::from_integer(exact_moment(beta_den, i + j))).collect())
        .collect()
}

/// Gauss-Jordan inverse over the rationals.
pub fn exact_inverse(m: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    let n = m.len();
    let mut a: Vec<Vec<BigRational>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).find(|&r| !a[r][c].is_zero()).expect("singular matrix");
        a.swap(c, p);
        let piv = a[c][c].clone();
        for v in a[c].iter_mut() {
            *v = &*v / &piv;
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for j in 0..2 * n {
                    let t = &a[c][j] * &f;
                    a[r][j] -= t;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Number of eigenvalues strictly below `sigma`, by the inertia of `M − σI`.
pub fn count_below(m: &[Vec<BigRational>], sigma: &BigRational) -> usize {
    let n = m.len();
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= sigma;
    }
    let tiny = BigRational::new(BigInt::one(), BigInt::from(10).pow(200));
    let mut negatives = 0;
    for i in 0..n {
        if a[i][i].is_zero() {
            a[i][i] = tiny.clone();
        }
        let piv = a[i][i].clone();
        if piv.is_negative() {
            negatives += 1;
        }
        for j in i + 1..n {
            if a[j][i].is_zero() {
                continue;
            }
            let f = &a[j][i] / &piv;
            for k in i..n {
                let t = &a[i][k] * &f;
                a[j][k] -= t;
            }
        }
    }
    negatives
}

/// Smallest eigenvalue of a symmetric positive-definite rational matrix by
/// bisection on the inertia count.
pub fn smallest_eigenvalue(m: &[Vec<BigRational>]) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = m[0][0].to_f64().unwrap();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(m, &BigRational::from_f64(mid).unwrap()) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn to_f64_matrix(m: &[Vec<BigRational>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect()).collect()
}

/// Exact value of a fixed-point mantissa.
pub fn fix_to_rational(mantissa: &rug::Integer, frac_bits: u32) -> BigRational {
    let m: BigInt = mantissa.to_string().parse().unwrap();
    BigRational::new(m, BigInt::one() << frac_bits)
}

/// Reference results at β = 1/2: `(N, required bits, λ₁)`.
pub const REFERENCE: [(usize, u32, f64); 9] = [
    (500, 1024, 0.1204653471966412),
    (1000, 2048, 0.08208748342129053),
    (1500, 3072, 0.06529477501882298),
    (2000, 4096, 0.05543072589537470),
    (2500, 4096, 0.04878757749929328),
    (3000, 5120, 0.04394036934849594),
    (3500, 6144, 0.04021149503682476),
    (4000, 7168, 0.03723304780176154),
    (4500, 7168, 0.03478615399760864),
];

pub fn reference_points() -> Vec<(usize, f64)> {
    REFERENCE.iter().map(|&(n, _, l)| (n, l)).collect()
}
