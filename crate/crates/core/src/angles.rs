//! Face-angle inequalities of a tetrahedron given only its six edge lengths.
//!
//! At every vertex the three face angles satisfy the triangle inequalities
//! and sum to less than 360 degrees. Angles come from the law of cosines, so
//! no embedding is needed; realizability is checked first with the
//! Cayley–Menger determinant.

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::Error;

/// Vertex pairs in the order lengths are given: 01, 02, 03, 12, 13, 23.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VertexAngles {
    pub vertex: usize,
    /// Face angles at the vertex in degrees, one per incident face.
    pub angles: [f64; 3],
    pub sum: f64,
    pub sum_below_full_turn: bool,
    /// Each angle is smaller than the sum of the other two.
    pub triangle_inequalities: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AngleReport {
    pub vertices: [VertexAngles; 4],
    /// `288 V^2`.
    pub cayley_menger: f64,
}

impl AngleReport {
    pub fn all_hold(&self) -> bool {
        self.vertices.iter().all(|v| v.sum_below_full_turn && v.triangle_inequalities)
    }
}

fn length(d: &[f64; 6], a: usize, b: usize) -> f64 {
    let (i, j) = (a.min(b), a.max(b));
    let k = PAIRS.iter().position(|&p| p == (i, j)).expect("distinct vertices below 4");
    d[k]
}

/// `288 V^2` for the tetrahedron with the given edge lengths.
pub fn cayley_menger(d: &[f64; 6]) -> f64 {
    let mut m = DMatrix::from_element(5, 5, 1.0);
    m[(0, 0)] = 0.0;
    for a in 0..4 {
        m[(a + 1, a + 1)] = 0.0;
        for b in 0..4 {
            if a != b {
                m[(a + 1, b + 1)] = length(d, a, b).powi(2);
            }
        }
    }
    m.determinant()
}

/// Angle at `v` between the edges to `a` and `b`, in degrees.
fn face_angle(d: &[f64; 6], v: usize, a: usize, b: usize) -> f64 {
    let (x, y, z) = (length(d, v, a), length(d, v, b), length(d, a, b));
    let c = ((x * x + y * y - z * z) / (2.0 * x * y)).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn verify_angle_inequalities(d: &[f64; 6]) -> Result<AngleReport, Error> {
    if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::NonRealizable);
    }
    for face in [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
        let (x, y, z) = (length(d, face[0], face[1]), length(d, face[1], face[2]), length(d, face[0], face[2]));
        if !(x + y > z && y + z > x && x + z > y) {
            return Err(Error::NonRealizable);
        }
    }
    let cm = cayley_menger(d);
    let scale = d.iter().fold(0.0f64, |a, &x| a.max(x)).powi(6);
    if !(cm > 1e-12 * scale) {
        return Err(Error::NonRealizable);
    }
    let vertices = core::array::from_fn(|v| {
        let o: [usize; 3] = {
            let mut it = (0..4).filter(|&x| x != v);
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        };
        let angles = [face_angle(d, v, o[0], o[1]), face_angle(d, v, o[1], o[2]), face_angle(d, v, o[0], o[2])];
        let sum = angles.iter().sum::<f64>();
        let triangle_inequalities =
            angles[0] + angles[1] > angles[2] && angles[1] + angles[2] > angles[0] && angles[0] + angles[2] > angles[1];
        VertexAngles { vertex: v, angles, sum, sum_below_full_turn: sum < 360.0, triangle_inequalities }
    });
    Ok(AngleReport { vertices, cayley_menger: cm })
}
