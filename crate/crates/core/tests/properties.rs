use lvdelay::attractivity::{check_theorem_3_1, find_alpha, verdict, verify_certificate};
use lvdelay::equilibria::{cramer_table, enumerate_equilibria, saturated_equilibrium};
use lvdelay::matrices::{classify_z_matrix, from_rows, principal_submatrix, MatrixClass, StructureMatrices};
use lvdelay::model::{kernel_tail_mass, lambda_vector};
use lvdelay::{load_spec, Kernel, SpecBuilder, SystemSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.0..3.0f64).prop_map(Kernel::dirac),
        (1u32..4, 0.3..4.0f64).prop_map(|(m, r)| Kernel::gamma(m, r)),
    ]
}

prop_compose! {
    fn spec_of(n: usize, a_lo: f64, a_hi: f64)(
        b in prop::collection::vec(-1.5..2.0f64, n),
        mu in prop::collection::vec(0.3..2.5f64, n),
        a in prop::collection::vec(prop::collection::vec(a_lo..a_hi, n), n),
        c in prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], n),
        d in prop::collection::vec(0.2..2.0f64, n),
        e in prop::collection::vec(0.2..2.0f64, n),
        k in prop::collection::vec(prop::collection::vec(kernel(), n), n),
        g in prop::collection::vec(kernel(), n),
    ) -> SystemSpec {
        SpecBuilder::new(b, mu, a).controls(c, d, e).kernels(k, g).build().unwrap()
    }
}

fn any_spec() -> impl Strategy<Value = SystemSpec> {
    (1usize..=4).prop_flat_map(|n| spec_of(n, -1.0, 1.0))
}

/// Z-matrices with small integer entries, so singular cases occur exactly.
fn integer_z_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=5).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(0i32..4, n), n).prop_map(move |raw| {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { raw[i][j] as f64 + 1.0 } else { -(raw[i][j] as f64) / 2.0 }).collect())
                .collect()
        })
    })
}

fn all_minors(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let b = from_rows(rows);
    (1u32..(1 << n))
        .map(|mask| {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            principal_submatrix(&b, &idx).determinant()
        })
        .collect()
}

fn is_nonsingular_m(b: &DMatrix<f64>) -> bool {
    classify_z_matrix(b).unwrap().class == MatrixClass::NonsingularM
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lambda_dominates_mu(spec in any_spec()) {
        let lambda = lambda_vector(&spec);
        for i in 0..spec.n() {
            prop_assert!(lambda[i] >= spec.mu()[i]);
            prop_assert_eq!(lambda[i] == spec.mu()[i], spec.c()[i] == 0.0);
        }
    }

    #[test]
    fn tail_mass_is_monotone(k in kernel(), mut ts in prop::collection::vec(0.0..20.0f64, 2..8)) {
        prop_assert!((kernel_tail_mass(&k, 0.0) - 1.0).abs() <= 1e-12);
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            prop_assert!(kernel_tail_mass(&k, w[1]) <= kernel_tail_mass(&k, w[0]) + 1e-15);
        }
    }

    #[test]
    fn config_round_trip(spec in any_spec()) {
        let back = load_spec(&spec.to_config_string()).unwrap();
        prop_assert_eq!(back.b(), spec.b());
        prop_assert_eq!(back.mu(), spec.mu());
        prop_assert_eq!(back.a(), spec.a());
        prop_assert_eq!(back.c(), spec.c());
        prop_assert_eq!(back.d(), spec.d());
        prop_assert_eq!(back.e(), spec.e());
        prop_assert_eq!(back.kernels(), spec.kernels());
        prop_assert_eq!(back.control_kernels(), spec.control_kernels());
    }

    #[test]
    fn classification_matches_minors(rows in integer_z_matrix()) {
        let minors = all_minors(&rows);
        let v = classify_z_matrix(&from_rows(&rows)).unwrap();
        let band = 1e-9;
        prop_assume!(minors.iter().all(|m| m.abs() > band || m.abs() < 1e-12));
        let all_pos = minors.iter().all(|m| *m > band);
        let all_nonneg = minors.iter().all(|m| *m > -band);
        match v.class {
            MatrixClass::NonsingularM => prop_assert!(all_pos),
            MatrixClass::SingularM => prop_assert!(all_nonneg && !all_pos),
            MatrixClass::NotM => prop_assert!(!all_nonneg),
            MatrixClass::Indeterminate => {}
            other => prop_assert!(false, "unexpected class {:?}", other),
        }
    }

    #[test]
    fn m_certificates_reverify(rows in integer_z_matrix()) {
        let b = from_rows(&rows);
        let v = classify_z_matrix(&b).unwrap();
        if let Some(c) = v.certificate {
            let bv = &b * DVector::from_vec(c.clone());
            prop_assert!(c.iter().all(|x| *x > 0.0));
            prop_assert!(bv.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn m_check_inherits_from_m0_hat(spec in any_spec()) {
        let s = StructureMatrices::build(&spec);
        if is_nonsingular_m(&s.m0_hat) {
            prop_assert!(is_nonsingular_m(&s.m_check));
        }
    }

    #[test]
    fn m0_minus_inherits_from_m0_hat_p(spec in any_spec(), mask in 0u32..16) {
        let s = StructureMatrices::build(&spec);
        let support: Vec<usize> = (0..spec.n()).filter(|i| mask & (1 << i) != 0).collect();
        if is_nonsingular_m(&s.m0_hat_p(&support)) {
            prop_assert!(is_nonsingular_m(&s.m0_minus));
        }
    }

    #[test]
    fn cramer_matches_solve_and_margins(spec in any_spec(), mask in 1u32..16) {
        let n = spec.n();
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        prop_assume!(!support.is_empty());
        let t = cramer_table(&spec, &support);
        prop_assert!(t.identity_holds(), "identity residual {}", t.identity_residual);
        prop_assume!(t.r0.abs() > 1e-6);
        let s = StructureMatrices::build(&spec);
        let p = support.len();
        let sub = DMatrix::from_fn(p, p, |r, c| s.m[(support[r], support[c])]);
        let rhs = DVector::from_fn(p, |r, _| spec.b()[support[r]]);
        let x = sub.lu().solve(&rhs).unwrap();
        for k in 0..p {
            prop_assert!((t.ratio(k) - x[k]).abs() <= 1e-10 * x[k].abs().max(1.0));
        }
        let set = enumerate_equilibria(&spec).unwrap();
        if let Some(cand) = set.candidates.iter().find(|c| c.support == support) {
            for &(q, rq) in &t.rq {
                let margin = cand.margins.iter().find(|m| m.0 == q).unwrap().1;
                prop_assert!((margin + rq / t.r0).abs() <= 1e-9 * (1.0 + margin.abs()));
            }
            if t.r0 > 0.0 && !cand.degenerate && cand.x_star.iter().all(|x| *x >= 0.0) {
                prop_assert_eq!(cand.saturated, t.rq.iter().all(|(_, rq)| *rq <= 0.0));
            }
        }
    }

    #[test]
    fn saturated_candidates_satisfy_invasion_inequality(spec in any_spec()) {
        let set = enumerate_equilibria(&spec).unwrap();
        for c in set.saturated() {
            for q in c.off_support() {
                let invasion: f64 = (0..spec.n()).map(|j| spec.a()[q][j] * c.x_star[j]).sum();
                prop_assert!(spec.b()[q] <= invasion + 1e-9);
            }
        }
    }

    #[test]
    fn p_matrix_gives_one_saturated(spec in (1usize..=4).prop_flat_map(|n| spec_of(n, -0.2, 0.2))) {
        let s = StructureMatrices::build(&spec);
        let dominant = (0..spec.n()).all(|i| {
            let off: f64 = (0..spec.n()).filter(|&j| j != i).map(|j| s.m[(i, j)].abs()).sum();
            s.m[(i, i)] > off
        });
        prop_assume!(dominant);
        let set = enumerate_equilibria(&spec).unwrap();
        let clean: Vec<_> = set.saturated().filter(|c| !c.degenerate).collect();
        let degenerate = set.saturated().any(|c| c.degenerate);
        prop_assert!(clean.len() == 1 || (degenerate && clean.len() <= 1));
    }

    #[test]
    fn verdict_certificates_reverify(spec in any_spec()) {
        let v = verdict(&spec).unwrap();
        if v.fired() {
            prop_assert!(v.certificate.is_some());
            if let Err(e) = verify_certificate(&spec, &v) {
                prop_assert!(false, "{}", e);
            }
        } else {
            prop_assert!(v.checks.iter().any(|c| !c.holds));
        }
    }

    #[test]
    fn alpha_certificates_reverify(spec in (2usize..=4).prop_flat_map(|n| spec_of(n, -1.0, 1.0)), mask in 0u32..16, q in 0usize..4) {
        let n = spec.n();
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        prop_assume!(q < n && !support.contains(&q));
        if let Some(cert) = find_alpha(&spec, &support, q) {
            prop_assert!(cert.eta_rate > 0.0);
            let s = StructureMatrices::build(&spec);
            let rate: f64 = support.iter().zip(&cert.alpha).map(|(&i, a)| a * spec.b()[i]).sum::<f64>() - spec.b()[q];
            prop_assert!((rate - cert.eta_rate).abs() <= 1e-9);
            for j in 0..n {
                let lhs: f64 = support
                    .iter()
                    .zip(&cert.alpha)
                    .map(|(&i, a)| a * if support.contains(&j) { s.m[(i, j)] } else { spec.a()[i][j] })
                    .sum();
                let rhs = if support.contains(&j) { spec.a()[q][j] } else { s.m[(q, j)] };
                prop_assert!(lhs <= rhs + 1e-9, "row {}: {} > {}", j, lhs, rhs);
            }
        }
    }

    #[test]
    fn m_hat_criterion_implies_new_criterion(spec in any_spec()) {
        let s = StructureMatrices::build(&spec);
        prop_assume!(is_nonsingular_m(&s.m_hat));
        prop_assert!(is_nonsingular_m(&s.m0_hat));
        if let Some(eq) = saturated_equilibrium(&spec).unwrap().unique() {
            prop_assert!(check_theorem_3_1(&spec, eq).is_some());
        }
    }

    #[test]
    fn t31_ignores_controls_at_fixed_support(
        spec in any_spec(),
        c in prop::collection::vec(0.0..2.0f64, 4),
        d in prop::collection::vec(0.2..2.0f64, 4),
        e in prop::collection::vec(0.2..2.0f64, 4),
    ) {
        let n = spec.n();
        let other = spec.to_builder().controls(c[..n].to_vec(), d[..n].to_vec(), e[..n].to_vec()).build().unwrap();
        let (Some(a), Some(b)) = (
            saturated_equilibrium(&spec).unwrap().unique().cloned(),
            saturated_equilibrium(&other).unwrap().unique().cloned(),
        ) else {
            return Ok(());
        };
        prop_assume!(a.support == b.support && !a.degenerate && !b.degenerate);
        prop_assert_eq!(check_theorem_3_1(&spec, &a).is_some(), check_theorem_3_1(&other, &b).is_some());
    }
}
