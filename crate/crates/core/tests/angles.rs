use flexform_core::angles::{verify_angle_inequalities, PAIRS};
use flexform_core::Error;
use proptest::prelude::*;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn volume(p: &[[f64; 3]; 4]) -> f64 {
    let (a, b, c) = (sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0]));
    let cross = [b[1] * c[2] - b[2] * c[1], b[2] * c[0] - b[0] * c[2], b[0] * c[1] - b[1] * c[0]];
    dot(a, cross).abs() / 6.0
}

fn lengths(p: &[[f64; 3]; 4]) -> [f64; 6] {
    PAIRS.map(|(i, j)| dot(sub(p[i], p[j]), sub(p[i], p[j])).sqrt())
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-10.0f64..10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn embedded_tetrahedra_satisfy_the_face_angle_inequalities(p in prop::array::uniform4(point())) {
        let d = lengths(&p);
        let longest = d.iter().fold(0.0f64, |a, &x| a.max(x));
        prop_assume!(volume(&p) > 1e-3 * longest.powi(3));
        let r = verify_angle_inequalities(&d).unwrap();
        prop_assert!(r.all_hold());
        let v = volume(&p);
        prop_assert!((r.cayley_menger - 288.0 * v * v).abs() <= 1e-8 * longest.powi(6));
        for va in r.vertices {
            let others: Vec<usize> = (0..4).filter(|&x| x != va.vertex).collect();
            let pairs = [(others[0], others[1]), (others[1], others[2]), (others[0], others[2])];
            for (angle, (a, b)) in va.angles.iter().zip(pairs) {
                let (u, w) = (sub(p[a], p[va.vertex]), sub(p[b], p[va.vertex]));
                let cos = (dot(u, w) / (dot(u, u) * dot(w, w)).sqrt()).clamp(-1.0, 1.0);
                prop_assert!((cos.acos().to_degrees() - angle).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn flat_and_impossible_lengths_are_rejected() {
    // Four coplanar points: a unit square.
    let s2 = 2f64.sqrt();
    assert!(matches!(verify_angle_inequalities(&[1.0, s2, 1.0, 1.0, s2, 1.0]), Err(Error::NonRealizable)));
    // A face that breaks the triangle inequality.
    assert!(matches!(verify_angle_inequalities(&[1.0, 1.0, 1.0, 5.0, 1.0, 1.0]), Err(Error::NonRealizable)));
    // Faces fine, but the angles at vertex 0 would sum past a full turn.
    let d = [1.0, 1.0, 1.0, 1.95, 1.95, 1.95];
    assert!(matches!(verify_angle_inequalities(&d), Err(Error::NonRealizable)));
}
