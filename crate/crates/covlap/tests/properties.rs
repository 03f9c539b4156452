// Randomized invariants over the small-matrix core: norm inequalities,
// pair indexing, closed forms the penalty and objective must reproduce,
// and the scalar minimizer's stationarity condition.

mod common;

use covlap::bcd::gamma_hat;
use covlap::objective::{
    objective_r, pair_at, pair_count, pair_index, penalty, EdgeSet, Hyperparams,
};
use covlap::symmat::SymMatrix;
use covlap::Error;
use proptest::prelude::*;
use rand::Rng;

/// Symmetric matrix with entries in [-10, 10), dimension 1..=8.
fn arb_symmetric() -> impl Strategy<Value = SymMatrix> {
    (1usize..=8).prop_flat_map(|p| {
        proptest::collection::vec(-10.0..10.0f64, p * (p + 1) / 2).prop_map(move |vals| {
            let mut m = SymMatrix::zeros(p);
            let mut it = vals.into_iter();
            for i in 0..p {
                for j in 0..=i {
                    m.set(i, j, it.next().unwrap());
                }
            }
            m
        })
    })
}

fn arb_hyper() -> impl Strategy<Value = Hyperparams> {
    (0.01..0.99f64, 0.1..3.0f64, 0.1..5.0f64).prop_map(|(q, v, lambda)| Hyperparams {
        q,
        v,
        lambda,
        ..Hyperparams::for_dim(4)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    // max|a_ij| <= ||A||_2 <= ||A||_F <= p * max|a_ij| for symmetric A.
    #[test]
    fn norm_chain(m in arb_symmetric()) {
        let p = m.dim() as f64;
        let (frob, max_abs) = m.norms();
        let spec = m.spectral_norm(1e-12, 20_000).value;
        let slack = 1e-6 * (1.0 + max_abs);
        prop_assert!(max_abs <= spec + slack, "max_abs {} > spectral {}", max_abs, spec);
        prop_assert!(spec <= frob + slack, "spectral {} > frobenius {}", spec, frob);
        prop_assert!(frob <= p * max_abs + slack, "frobenius {} > p*max_abs {}", frob, p * max_abs);
    }

    // quad_form(x, y) = x' A y and matches matvec from either side.
    #[test]
    fn quad_form_matches_matvec(m in arb_symmetric(), seed in 0u64..1000) {
        let p = m.dim();
        let mut r = common::rng(seed);
        let x: Vec<f64> = (0..p).map(|_| r.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..p).map(|_| r.gen_range(-2.0..2.0)).collect();
        let qf = m.quad_form(&x, &y);
        let via_y: f64 = x.iter().zip(m.matvec(&y)).map(|(a, b)| a * b).sum();
        let via_x: f64 = y.iter().zip(m.matvec(&x)).map(|(a, b)| a * b).sum();
        let tol = 1e-10 * (1.0 + qf.abs());
        prop_assert!((qf - via_y).abs() <= tol);
        prop_assert!((qf - via_x).abs() <= tol);
    }

    // For diagonal Sigma and empty structure the objective separates into
    // sum(log d_i) + sum(s_ii / d_i) + lambda/n * sum(d_i).
    #[test]
    fn objective_diagonal_closed_form(
        s in arb_symmetric(),
        h in arb_hyper(),
        dseed in 0u64..1000,
        n in 5usize..500,
    ) {
        let p = s.dim();
        let mut r = common::rng(dseed);
        let d: Vec<f64> = (0..p).map(|_| r.gen_range(0.1..5.0)).collect();
        let sigma = SymMatrix::from_diag(&d);
        let z = EdgeSet::empty(p);
        let got = objective_r(&sigma, &z, &s, &h, n).unwrap();
        let nf = n as f64;
        let want: f64 = d
            .iter()
            .enumerate()
            .map(|(i, &di)| di.ln() + s.get(i, i) / di + h.lambda * di / nf)
            .sum();
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{} vs {}", got, want);
    }

    // Penalty is nonnegative on positive definite matrices and equals the
    // slab quadratic plus the diagonal pull term.
    #[test]
    fn penalty_closed_form(seed in 0u64..10_000, h in arb_hyper(), n in 5usize..500) {
        let mut r = common::rng(seed);
        let p = r.gen_range(2..=6);
        let sigma = common::random_pd(p, &mut r);
        let z = common::random_edges(p, 0.5, &mut r);
        let got = penalty(&sigma, &z, &h, n).unwrap();
        let nf = n as f64;
        let slab: f64 = z.included_pairs().map(|(i, j)| sigma.get(i, j).powi(2)).sum();
        let trace: f64 = (0..p).map(|i| sigma.get(i, i)).sum();
        let want = slab / (nf * h.v * h.v) + h.lambda * trace / nf;
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        prop_assert!(got >= 0.0);
    }

    // gamma_hat solves rho*g^2 + g - u = 0, never exceeds the rho -> 0
    // limit u, and hits it exactly when rho = 0.
    #[test]
    fn gamma_hat_stationarity(u in 1e-6..1e4f64, rho in 0.0..10.0f64) {
        let g = gamma_hat(u, rho).unwrap();
        prop_assert!(g > 0.0);
        prop_assert!(g <= u * (1.0 + 1e-12));
        let residual = rho * g * g + g - u;
        prop_assert!(residual.abs() <= 1e-8 * (1.0 + u), "residual {}", residual);
        if rho == 0.0 {
            prop_assert_eq!(g, u);
        }
    }

    // Relabeling variables preserves edge count and commutes with lookups:
    // (i, j) in Z iff (perm[i], perm[j]) in Z.permuted(perm).
    #[test]
    fn edge_set_permutation(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let p = r.gen_range(2..=7);
        let z = common::random_edges(p, 0.4, &mut r);
        let mut perm: Vec<usize> = (0..p).collect();
        for k in (1..p).rev() {
            let j = r.gen_range(0..=k);
            perm.swap(k, j);
        }
        let zp = z.permuted(&perm);
        prop_assert_eq!(zp.count(), z.count());
        for i in 0..p {
            for j in (i + 1)..p {
                prop_assert_eq!(zp.contains(perm[i], perm[j]), z.contains(i, j));
            }
        }
        let mut inv = vec![0usize; p];
        for (a, &pa) in perm.iter().enumerate() {
            inv[pa] = a;
        }
        prop_assert_eq!(zp.permuted(&inv), z);
    }
}

#[test]
fn pair_indexing_round_trips() {
    for p in 2..=24 {
        for k in 0..pair_count(p) {
            let (i, j) = pair_at(p, k);
            assert!(i < j && j < p);
            assert_eq!(pair_index(p, i, j), k);
        }
        // Enumeration order is row-major over the upper triangle.
        let mut expect = 0;
        for i in 0..p {
            for j in (i + 1)..p {
                assert_eq!(pair_index(p, i, j), expect);
                expect += 1;
            }
        }
    }
}

#[test]
fn objective_rejects_structure_violations() {
    let mut sigma = SymMatrix::identity(3);
    sigma.set(0, 1, 0.5);
    let s = SymMatrix::identity(3);
    let h = Hyperparams::for_dim(3);
    let err = objective_r(&sigma, &EdgeSet::empty(3), &s, &h, 50).unwrap_err();
    match err {
        Error::StructureViolation { i, j, value } => {
            assert_eq!((i, j), (0, 1));
            assert!((value - 0.5).abs() < 1e-15);
        }
        other => panic!("expected structure violation, got {other}"),
    }
    // The same entry is fine once the edge is included.
    let mut z = EdgeSet::empty(3);
    z.set_pair(0, 1, true);
    objective_r(&sigma, &z, &s, &h, 50).unwrap();
}
