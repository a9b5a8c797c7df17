mod common;

use common::*;
use flexform_core::oracle::{build_catalog, construct, find_collinear_equilibrium};
use flexform_core::stability::analyze;
use flexform_core::{
    EquilibriumClass, FormationGraph, Potential, PotentialFamily, Realization, SubformKind, Tolerances,
};

const Q: PotentialFamily = PotentialFamily::Quadratic;

/// Rigid agents given explicitly, flex agent 4 above agent 3 along z.
fn spatial(rigid: [[f64; 3]; 4]) -> Realization {
    let mut pts: Vec<[f64; 3]> = rigid.to_vec();
    let a = rigid[3];
    pts.push([a[0], a[1], a[2] + 4.0]);
    Realization::from_points(3, &pts).unwrap()
}

fn check<P: Potential>(g: &FormationGraph, p: &Realization, fam: &P, kind: SubformKind) {
    let r = analyze(g, p, fam, &Tolerances::default()).unwrap();
    let c = &r.classification;
    assert!(c.residual < 1e-12, "{kind:?}: residual {}", c.residual);
    assert_eq!(c.class.subform().map(|s| s.kind), Some(kind), "{:?}", c.class);
    assert!(r.witness.is_some(), "{kind:?}: {:?}", r.witness_failure);
    assert!(r.psd.negative_count > 0);
    let signs = r.signs.as_ref().unwrap();
    assert!(signs.all_passed(), "{kind:?}: {:?}", signs.failures().collect::<Vec<_>>());
}

// With all rigid lengths 4 and the quadratic potential the balance
// conditions reduce to scalar equations solved by hand below.

#[test]
fn square_of_side_squared_32_over_3() {
    let s = (32.0f64 / 3.0).sqrt();
    let p = spatial([[0.0, 0.0, 0.0], [s, 0.0, 0.0], [s, s, 0.0], [0.0, s, 0.0]]);
    check(&tetrahedron(), &p, &Q, SubformKind::ConvexQuadrilateral);
}

#[test]
fn centred_triangle_of_side_squared_19_2() {
    let a = 19.2f64.sqrt();
    let h = a * 3f64.sqrt() / 2.0;
    let p = spatial([[0.0, 0.0, 0.0], [a, 0.0, 0.0], [a / 2.0, h, 0.0], [a / 2.0, h / 3.0, 0.0]]);
    check(&tetrahedron(), &p, &Q, SubformKind::InteriorPoint);
}

#[test]
fn two_pairs_at_distance_four() {
    let p = spatial([[0.0; 3], [0.0; 3], [4.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
    check(&tetrahedron(), &p, &Q, SubformKind::TwoPairs);
}

#[test]
fn pair_between_two_agents_at_distance_squared_6_4() {
    let a = 6.4f64.sqrt();
    let p = spatial([[0.0; 3], [0.0; 3], [-a, 0.0, 0.0], [a, 0.0, 0.0]]);
    check(&tetrahedron(), &p, &Q, SubformKind::PairInMiddle);
}

#[test]
fn coincidences_are_equilibria_for_any_family() {
    let tri = triangle();
    let tet = tetrahedron();
    let fam = QuadQuartic;
    let p3 = Realization::from_points(2, [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 5.0]]).unwrap();
    check(&tri, &p3, &fam, SubformKind::AllCoincident3);
    let p4 = spatial([[0.5, 0.5, 0.5]; 4]);
    check(&tet, &p4, &fam, SubformKind::AllCoincident4);
    for kind in [SubformKind::PairCoincident3, SubformKind::AllCoincident3] {
        let e = construct(&tri, &fam, kind).unwrap();
        check(&tri, &e.realization, &fam, kind);
    }
    for kind in [SubformKind::AllCoincident4, SubformKind::TripleCoincident, SubformKind::TwoPairs] {
        let e = construct(&tet, &fam, kind).unwrap();
        check(&tet, &e.realization, &fam, kind);
    }
}

#[test]
fn collinear_equilibria_satisfy_the_gap_relation() {
    // Gaps a, b with a^2 + a b + b^2 = 16 balance three agents on a line.
    let g = triangle();
    for middle in 0..3 {
        let e = find_collinear_equilibrium(&g, &Q, Some(middle)).unwrap();
        let p = &e.realization;
        let ends: Vec<usize> = (0..3).filter(|&k| k != middle).collect();
        let a = dist(p.agent(ends[0]), p.agent(middle));
        let b = dist(p.agent(ends[1]), p.agent(middle));
        assert!((a * a + a * b + b * b - 16.0).abs() < 1e-8, "a={a}, b={b}");
        assert!((dist(p.agent(ends[0]), p.agent(ends[1])) - a - b).abs() < 1e-8);
        check(&g, p, &Q, SubformKind::Collinear3);
        assert_eq!(e.class.subform().unwrap().roles[1], middle);
    }
}

#[test]
fn catalog_entries_are_certified_undesired_equilibria() {
    for (g, required) in [
        (triangle(), &SubformKind::PLANAR[..]),
        (tetrahedron(), &[SubformKind::ConvexQuadrilateral, SubformKind::InteriorPoint, SubformKind::TwoPairs][..]),
        (mixed_tetrahedron(), &[SubformKind::PairAtEnd, SubformKind::Collinear4][..]),
    ] {
        for fam in [PotentialFamily::Quadratic, PotentialFamily::Rational] {
            let results = build_catalog(&g, &fam, None);
            for kind in required {
                if fam == PotentialFamily::Rational && has_pair(*kind) {
                    continue;
                }
                assert!(
                    results.iter().any(|r| r.target == kind.tag() && r.entry.is_some()),
                    "{} missing for {fam:?}",
                    kind.tag()
                );
            }
            for r in results {
                let Some(e) = r.entry else { continue };
                assert!(e.residual < 1e-10);
                let rep = analyze(&g, &e.realization, &fam, &Tolerances::default()).unwrap();
                assert!(rep.classification.class.is_undesired());
                assert!(rep.contract_holds(), "{}: {:?}", r.target, rep.witness_failure);
                if r.target == "flex_collapse" {
                    assert_eq!(rep.classification.class, EquilibriumClass::UndesiredQI1);
                } else {
                    assert_eq!(e.subform().map(|s| s.tag()), Some(r.target));
                    assert!(rep.signs.as_ref().is_some_and(|s| s.all_passed()), "{}", r.target);
                }
            }
        }
    }
}

fn has_pair(kind: SubformKind) -> bool {
    kind.is_coincidence() || matches!(kind, SubformKind::PairAtEnd | SubformKind::PairInMiddle)
}

#[test]
fn rational_family_has_no_coincident_equilibria() {
    let fam = PotentialFamily::Rational;
    for g in [triangle(), tetrahedron()] {
        for r in build_catalog(&g, &fam, None) {
            let pair = r.target == "flex_collapse" || SubformKind::from_tag(r.target).is_some_and(has_pair);
            if pair {
                assert!(r.entry.is_none());
                assert!(r.failure.as_deref().is_some_and(|f| f.contains("outside the domain")), "{:?}", r.failure);
            }
        }
    }
}
