mod common;

use common::*;
use flexform_core::controller::{gradient_control, potential_energy, potential_gradient};
use flexform_core::oracle::{build_catalog, desired_realization};
use flexform_core::stability::{analyze, assemble_hessian, psd_check};
use flexform_core::{FormationGraph, Potential, PotentialFamily, Realization, Tolerances};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FAMILIES: [PotentialFamily; 2] = [PotentialFamily::Quadratic, PotentialFamily::Rational];

fn fd_hessian<P: Potential>(g: &FormationGraph, p: &Realization, fam: &P) -> DMatrix<f64> {
    let d = g.dimension();
    let minus_u = |x: &[f64]| {
        let q = Realization::new(d, x.to_vec()).unwrap();
        gradient_control(g, &q, fam).unwrap().into_iter().map(|v| -v).collect()
    };
    fd_jacobian(minus_u, p.as_slice(), 1e-5)
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

#[test]
fn hessian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in [triangle(), tetrahedron(), mixed_tetrahedron()] {
        for _ in 0..100 {
            let p = random_realization(&mut rng, g.dimension(), g.num_nodes(), 4.0);
            for fam in FAMILIES {
                let h = assemble_hessian(&g, &p, &fam).unwrap().hessian;
                let err = rel_err(&h, &fd_hessian(&g, &p, &fam));
                assert!(err < 1e-6, "relative error {err:e}");
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences_of_the_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for g in [triangle(), tetrahedron()] {
        let d = g.dimension();
        for _ in 0..20 {
            let p = random_realization(&mut rng, d, g.num_nodes(), 4.0);
            for fam in FAMILIES {
                let grad = potential_gradient(&g, &p, &fam).unwrap();
                let energy =
                    |x: &[f64]| vec![potential_energy(&g, &Realization::new(d, x.to_vec()).unwrap(), &fam).unwrap()];
                let fd = fd_jacobian(energy, p.as_slice(), 1e-6);
                let scale = grad.iter().fold(1.0f64, |a, x| a.max(x.abs()));
                for (k, gk) in grad.iter().enumerate() {
                    assert!((fd[(0, k)] - gk).abs() < 1e-6 * scale, "{} vs {gk}", fd[(0, k)]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_is_symmetric_with_zero_block_sums(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in [triangle(), tetrahedron()] {
            let p = random_realization(&mut rng, g.dimension(), g.num_nodes(), 4.0);
            for fam in FAMILIES {
                let b = assemble_hessian(&g, &p, &fam).unwrap();
                let scale = b.hessian.amax().max(1.0);
                prop_assert!(b.asymmetry() <= 1e-14 * scale);
                prop_assert!(b.max_block_sum() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn hessian_splits_into_gain_and_curvature_parts(seed in any::<u64>()) {
        // Edge-by-edge assembly of H and of B diag(g) B^T.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in [triangle(), tetrahedron()] {
            let d = g.dimension();
            let n = g.num_nodes();
            let p = random_realization(&mut rng, d, n, 4.0);
            for fam in FAMILIES {
                let b = assemble_hessian(&g, &p, &fam).unwrap();
                let mut h = DMatrix::zeros(n * d, n * d);
                for e in g.edges() {
                    let z: Vec<f64> = (0..d).map(|c| p.agent(e.i)[c] - p.agent(e.j)[c]).collect();
                    let err = z.iter().map(|x| x * x).sum::<f64>() - e.desired * e.desired;
                    let (gv, rho) = (fam.g(err, e.desired), fam.rho(err, e.desired));
                    for r in 0..d {
                        for c in 0..d {
                            let m = 2.0 * rho * z[r] * z[c] + if r == c { gv } else { 0.0 };
                            h[(e.i * d + r, e.i * d + c)] += m;
                            h[(e.j * d + r, e.j * d + c)] += m;
                            h[(e.i * d + r, e.j * d + c)] -= m;
                            h[(e.j * d + r, e.i * d + c)] -= m;
                        }
                    }
                }
                prop_assert!(rel_err(&h, &b.hessian) <= 1e-13);
                let mut e_mat = DMatrix::zeros(n, n);
                for s in g.edges().iter().zip(&b.states) {
                    let (e, st) = s;
                    e_mat[(e.i, e.i)] += st.g;
                    e_mat[(e.j, e.j)] += st.g;
                    e_mat[(e.i, e.j)] -= st.g;
                    e_mat[(e.j, e.i)] -= st.g;
                }
                prop_assert!(rel_err(&e_mat, &b.e) <= 1e-14);
            }
        }
    }

    #[test]
    fn spectrum_is_invariant_under_rigid_motions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = tetrahedron();
        let p = random_realization(&mut rng, 3, 5, 4.0);
        let q = random_rotation(&mut rng, 3);
        let moved = p.rotated(&q).translated(&[1.0, -2.0, 3.0]);
        for fam in FAMILIES {
            let s0 = psd_check(&assemble_hessian(&g, &p, &fam).unwrap().hessian, 0.0).unwrap().spectrum;
            let s1 = psd_check(&assemble_hessian(&g, &moved, &fam).unwrap().hessian, 0.0).unwrap().spectrum;
            let scale = s0.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            for (a, b) in s0.iter().zip(&s1) {
                prop_assert!((a - b).abs() <= 1e-10 * scale);
            }
        }
    }
}

/// Zero modes at the desired shape: translations and rotations of the whole
/// formation plus the flex agent's free rotation about its anchor.
#[test]
fn desired_shape_has_the_expected_number_of_zero_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (g, zeros) in [(triangle(), 4), (tetrahedron(), 8), (mixed_tetrahedron(), 8)] {
        let d = g.dimension();
        let base = desired_realization(&g).unwrap();
        for _ in 0..10 {
            let q = random_rotation(&mut rng, d);
            let p = base.rotated(&q);
            for fam in FAMILIES {
                let r = analyze(&g, &p, &fam, &Tolerances::default()).unwrap();
                assert_eq!(r.class().tag(), "desired");
                assert!(r.psd.psd);
                assert_eq!(r.psd.zero_count, zeros, "{:?}", r.spectrum);
                assert_eq!(r.psd.negative_count, 0);
            }
        }
    }
}

#[test]
fn witness_form_equals_the_full_hessian_form() {
    for g in [triangle(), tetrahedron(), mixed_tetrahedron()] {
        for fam in FAMILIES {
            for res in build_catalog(&g, &fam, None) {
                let Some(entry) = res.entry else { continue };
                let r = analyze(&g, &entry.realization, &fam, &Tolerances::default()).unwrap();
                let w = r.witness.as_ref().unwrap_or_else(|| panic!("{} has no witness", res.target));
                let v = DVector::from_column_slice(&w.padded);
                let form = (v.transpose() * &r.bundle.hessian * &v)[(0, 0)];
                let scale = r.bundle.hessian.amax().max(1.0);
                assert!((form - w.form).abs() < 1e-10 * scale, "{}: {form} vs {}", res.target, w.form);
                assert!(form < -1e-10 * r.bundle.norm(), "{}: {form}", res.target);
                assert!(r.psd.min_eigenvalue < 0.0);
            }
        }
    }
}
