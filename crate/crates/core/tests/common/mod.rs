#![allow(dead_code)]

use flexform_core::{FormationGraph, Potential, Realization};
use nalgebra::DMatrix;
use rand::Rng;

pub fn triangle() -> FormationGraph {
    FormationGraph::triangle_with_flex(4.0, 4.0, 4.0, 4.0).unwrap()
}

pub fn tetrahedron() -> FormationGraph {
    FormationGraph::tetrahedron_with_flex([4.0; 6], 4.0).unwrap()
}

/// Rigid lengths 01=4, 02=5, 03=4, 12=5, 13=5, 23=5; flex 4.
pub fn mixed_tetrahedron() -> FormationGraph {
    FormationGraph::tetrahedron_with_flex([4.0, 5.0, 4.0, 5.0, 5.0, 5.0], 4.0).unwrap()
}

pub fn random_realization<R: Rng>(rng: &mut R, dimension: usize, agents: usize, spread: f64) -> Realization {
    let coords = (0..dimension * agents).map(|_| rng.random_range(-spread..spread)).collect();
    Realization::new(dimension, coords).unwrap()
}

/// Proper rotation from Gram-Schmidt on a random matrix.
pub fn random_rotation<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    loop {
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let qr = a.qr();
        let mut q = qr.q();
        if q.determinant().abs() < 0.5 {
            continue;
        }
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        return q;
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..m {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// `phi = e^2/2 + e^4/4`: a third family used to check that results do not
/// hinge on the built-in ones.
pub struct QuadQuartic;

impl Potential for QuadQuartic {
    fn phi(&self, e: f64, _dbar: f64) -> f64 {
        0.5 * e * e + 0.25 * e.powi(4)
    }
    fn g(&self, e: f64, _dbar: f64) -> f64 {
        e + e.powi(3)
    }
    fn rho(&self, e: f64, _dbar: f64) -> f64 {
        1.0 + 3.0 * e * e
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
