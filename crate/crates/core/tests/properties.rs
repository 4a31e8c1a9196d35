mod common;

use common::{exact_hankel, exact_inverse, fix_to_rational};
use hankel::asymptotics::{fit_leading_exponent, weighted_line_fit};
use hankel::eigen::{smallest_eigs_of_h, symmetric_eigen};
use hankel::fixedpoint::FixScalar;
use hankel::inversion::{assemble_truncated_inverse, invert_l_partial_serial};
use hankel::ldlt::{assign_columns, decompose_parallel, decompose_serial, BroadcastPolicy, LdltFactors, ParallelConfig};
use hankel::moments::{build_hankel, WeightSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use rug::Integer;

fn fx(m: i64, f: u32) -> FixScalar {
    FixScalar::from_mantissa(Integer::from(m), f)
}

fn exact(x: &FixScalar) -> BigRational {
    fix_to_rational(x.mantissa(), x.frac_bits())
}

fn spec_strategy() -> impl Strategy<Value = WeightSpec> {
    prop_oneof![Just(WeightSpec::critical()), Just(WeightSpec::new(1, 1).unwrap()), Just(WeightSpec::new(2, 1).unwrap())]
}

fn pow2(e: u32) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << e)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn add_sub_mul_are_exact(a in any::<i64>(), b in any::<i64>(), f in 0u32..80) {
        let (x, y) = (fx(a, f), fx(b, f));
        prop_assert_eq!(exact(&(&x + &y)), exact(&x) + exact(&y));
        prop_assert_eq!(exact(&(&x - &y)), exact(&x) - exact(&y));
        let g = f / 2 + 3;
        let z = fx(b, g);
        prop_assert_eq!(exact(&(&x * &z)), exact(&x) * exact(&z));
    }

    #[test]
    fn division_rounds_to_nearest_even(a in any::<i64>(), b in any::<i64>().prop_filter("nonzero", |b| *b != 0),
                                       f in 0u32..40, out in 0u32..60) {
        let q = fx(a, f).div(&fx(b, f), out).unwrap();
        let truth = BigRational::new(BigInt::from(a), BigInt::from(b));
        let err = (exact(&q) - &truth).abs();
        let half = pow2(out + 1);
        prop_assert!(err <= half);
        if err == half {
            prop_assert!(q.mantissa().is_even());
        }
    }

    #[test]
    fn truncation_rounds_to_nearest(a in any::<i64>(), f in 0u32..64, drop in 0u32..64) {
        let x = fx(a, f + drop);
        let t = x.truncate(f);
        let err = (exact(&t) - exact(&x)).abs();
        prop_assert!(err <= pow2(f + 1));
    }

    #[test]
    fn to_f64_is_nearest(m in any::<i128>(), f in 0u32..200) {
        let x = FixScalar::from_mantissa(Integer::from(m), f);
        let v = x.to_f64();
        let truth = exact(&x);
        let err = (BigRational::from_float(v).unwrap() - &truth).abs();
        for nb in [v.next_up(), v.next_down()] {
            if nb.is_finite() {
                prop_assert!(err <= (BigRational::from_float(nb).unwrap() - &truth).abs());
            }
        }
    }

    #[test]
    fn jacobi_conserves_trace_and_is_orthogonally_invariant(
        entries in proptest::collection::vec(-10.0f64..10.0, 36),
        angles in proptest::collection::vec(-3.2f64..3.2, 15),
        n in 2usize..=6,
    ) {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                m[i][j] = entries[i * 6 + j];
                m[j][i] = entries[i * 6 + j];
            }
        }
        let eig = symmetric_eigen(&m).unwrap();
        let trace: f64 = (0..n).map(|i| m[i][i]).sum();
        let scale = eig.iter().map(|e| e.abs()).sum::<f64>().max(1.0);
        prop_assert!((eig.iter().sum::<f64>() - trace).abs() <= 1e-12 * scale);
        prop_assert!(eig.windows(2).all(|w| w[0] <= w[1]));

        // conjugate by a product of Givens rotations, then symmetrise exactly
        let mut q = vec![vec![0.0; n]; n];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut a = angles.iter();
        for p in 0..n {
            for r in p + 1..n {
                let t = *a.next().unwrap_or(&0.3);
                let (c, s) = (t.cos(), t.sin());
                for row in q.iter_mut() {
                    let (x, y) = (row[p], row[r]);
                    row[p] = c * x - s * y;
                    row[r] = s * x + c * y;
                }
            }
        }
        let mut qm = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        qm[i][j] += q[k][i] * m[k][l] * q[l][j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (qm[i][j] + qm[j][i]);
                qm[i][j] = v;
                qm[j][i] = v;
            }
        }
        let rotated = symmetric_eigen(&qm).unwrap();
        let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        for (x, y) in eig.iter().zip(&rotated) {
            prop_assert!((x - y).abs() <= 1e-12 * norm);
        }
    }

    #[test]
    fn fit_is_invariant_under_weight_scaling(scale in 1e-6f64..1e6, slope in -2.0f64..2.0,
                                             noise in proptest::collection::vec(-1e-3f64..1e-3, 6)) {
        let xs: Vec<f64> = (0..6).map(|i| 10.0 + i as f64).collect();
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.3 + slope * x + e).collect();
        let ws: Vec<f64> = (1..=6).map(|i| (i * i) as f64).collect();
        let scaled: Vec<f64> = ws.iter().map(|w| w * scale).collect();
        let a = weighted_line_fit(&xs, &ys, &ws).unwrap();
        let b = weighted_line_fit(&xs, &ys, &scaled).unwrap();
        prop_assert!((a.gradient - b.gradient).abs() < 1e-12);
        prop_assert!((a.intercept - b.intercept).abs() < 1e-12);
        prop_assert!((a.gradient_ci_low - b.gradient_ci_low).abs() < 1e-12);
        prop_assert!((a.gradient_ci_high - b.gradient_ci_high).abs() < 1e-12);
        prop_assert!(a.gradient_ci_low <= a.gradient && a.gradient <= a.gradient_ci_high);
    }
}

/// `Σ_l L[i][l] D[l] L[j][l]`, exact.
fn reconstruct(f: &LdltFactors, i: usize, j: usize) -> BigRational {
    (0..=i.min(j)).fold(BigRational::zero(), |acc, l| acc + exact(&f.l(i, l)) * exact(&f.d()[l]) * exact(&f.l(j, l)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ldlt_reconstructs_the_matrix(spec in spec_strategy(), n in 1usize..=16, bits in 256u32..=768) {
        let table = build_hankel(spec, n, bits).unwrap();
        let f = decompose_serial(&table).unwrap();
        let tol = pow2(bits / 2);
        for i in 0..n {
            for j in 0..=i {
                let h = exact(table.entry(i, j));
                let rel = (reconstruct(&f, i, j) - &h).abs() / h.abs();
                prop_assert!(rel <= tol, "entry ({}, {}) relative error {}", i, j, rel.to_f64().unwrap());
            }
        }
    }

    #[test]
    fn l_times_partial_inverse_is_identity(spec in spec_strategy(), n in 1usize..=16, m in 1usize..=16, bits in 256u32..=768) {
        let m = m.min(n);
        let f = decompose_serial(&build_hankel(spec, n, bits).unwrap()).unwrap();
        let inv = invert_l_partial_serial(&f, m).unwrap();
        let tol = pow2(bits / 2);
        for i in 0..n {
            for j in 0..m {
                let s = (j..=i).fold(BigRational::zero(), |acc, l| acc + exact(&f.l(i, l)) * exact(&inv.get(l, j)));
                let target = if i == j { BigRational::one() } else { BigRational::zero() };
                prop_assert!((s - target).abs() <= tol, "entry ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn parallel_ldlt_is_bit_identical(spec in spec_strategy(), n in 1usize..=40, workers in 1usize..=5,
                                      chunk_len in 0usize..8, min_out in 0u64..200, threads in 1usize..=2) {
        let table = build_hankel(spec, n, 128).unwrap();
        let serial = decompose_serial(&table).unwrap();
        let config = ParallelConfig {
            threads_per_worker: threads,
            policy: BroadcastPolicy { chunk_len, min_outstanding_mults: min_out, mults_per_chunk: 20 },
        };
        let par = decompose_parallel(&table, &assign_columns(n, workers).unwrap(), &config).unwrap();
        prop_assert!(par.values_eq(&serial));
    }

    #[test]
    fn largest_block_eigenvalue_grows_with_k(spec in spec_strategy(), n in 2usize..=24) {
        let f = decompose_serial(&build_hankel(spec, n, 512).unwrap()).unwrap();
        let kmax = n.min(10);
        let inv = invert_l_partial_serial(&f, kmax).unwrap();
        let mut prev = 0.0;
        for k in 1..=kmax {
            let block = assemble_truncated_inverse(&inv, f.d(), k).unwrap();
            let top = *symmetric_eigen(&block.matrix()).unwrap().last().unwrap();
            prop_assert!(top >= prev);
            prev = top;
            let r = smallest_eigs_of_h(&block, 3).unwrap();
            prop_assert!(r.trunc_err.iter().all(|&t| t <= 0.0));
        }
    }
}

#[test]
fn full_block_matches_exact_inverse() {
    for (den, spec) in [(2, WeightSpec::critical()), (1, WeightSpec::new(1, 1).unwrap())] {
        for n in 1..=8 {
            let f = decompose_serial(&build_hankel(spec, n, 256).unwrap()).unwrap();
            let inv = invert_l_partial_serial(&f, n).unwrap();
            let block = assemble_truncated_inverse(&inv, f.d(), n).unwrap();
            let truth = exact_inverse(&exact_hankel(den, n));
            for a in 0..n {
                for b in 0..n {
                    let t = truth[a][b].to_f64().unwrap();
                    assert!((block.get(a, b) - t).abs() < 1e-12, "beta den {den}, N = {n}, ({a}, {b})");
                    assert_eq!(block.get(a, b), block.get(b, a));
                }
            }
        }
    }
}

#[test]
fn three_by_three_inverse_of_l_is_exact_to_half_precision() {
    let f = decompose_serial(&build_hankel(WeightSpec::critical(), 3, 256).unwrap()).unwrap();
    let inv = invert_l_partial_serial(&f, 3).unwrap();
    // exact L from the rational factorization H = L D Lᵀ
    let h = exact_hankel(2, 3);
    let l10 = &h[1][0] / &h[0][0];
    let l20 = &h[2][0] / &h[0][0];
    let d1 = &h[1][1] - &l10 * &h[1][0];
    let l21 = (&h[2][1] - &l20 * &h[1][0]) / &d1;
    let exact_inv = [
        [BigRational::one(), BigRational::zero(), BigRational::zero()],
        [-l10.clone(), BigRational::one(), BigRational::zero()],
        [&l10 * &l21 - &l20, -l21.clone(), BigRational::one()],
    ];
    for i in 0..3 {
        for j in 0..3 {
            assert!((exact(&inv.get(i, j)) - &exact_inv[i][j]).abs() <= pow2(128));
        }
    }
}

#[test]
fn smallest_eigenvalue_does_not_grow_with_n() {
    let mut prev = f64::INFINITY;
    for n in 1..=40 {
        let f = decompose_serial(&build_hankel(WeightSpec::critical(), n, 512).unwrap()).unwrap();
        let k = n.min(8);
        let inv = invert_l_partial_serial(&f, k).unwrap();
        let r = smallest_eigs_of_h(&assemble_truncated_inverse(&inv, f.d(), k).unwrap(), 3).unwrap();
        assert!(r.lambda[0] <= prev, "N = {n}");
        prev = r.lambda[0];
    }
}

#[test]
fn reference_fit_residuals_tend_to_shrink() {
    let fit = fit_leading_exponent(&common::reference_points()).unwrap();
    let r: Vec<f64> = fit.residuals.iter().map(|v| v.abs()).collect();
    let half = r.len() / 2;
    let early = r[..half].iter().sum::<f64>() / half as f64;
    let late = r[half..].iter().sum::<f64>() / (r.len() - half) as f64;
    assert!(late < early);
    assert!(r[0] == r.iter().cloned().fold(0.0, f64::max));
}
