//! Small fixed-size vector helpers. Points and directions are plain `[f64; 3]`.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm(&sub(a, b))
}

#[inline]
pub fn add_assign(a: &mut Vec3, b: &Vec3) {
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
}

#[inline]
pub fn axpy(a: &mut Vec3, s: f64, b: &Vec3) {
    a[0] += s * b[0];
    a[1] += s * b[1];
    a[2] += s * b[2];
}

/// Returns `None` for vectors shorter than `1e-300`.
pub fn normalize(a: &Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n > 1e-300 {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

/// A 3×3 matrix stored row-major.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix from a unit quaternion `(w, x, y, z)`; the input is normalized first.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// A rigid motion `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        add(&mat_vec(&self.rotation, p), &self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        mat_vec(&self.rotation, v)
    }

    /// Uniformly random rotation (Shoemake) plus a translation in `[-max_shift, max_shift]³`.
    pub fn random<R: rand::Rng>(rng: &mut R, max_shift: f64) -> Self {
        use std::f64::consts::TAU;
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let q = [
            b * (TAU * u3).cos(),
            a * (TAU * u2).sin(),
            a * (TAU * u2).cos(),
            b * (TAU * u3).sin(),
        ];
        let translation = [
            rng.gen_range(-max_shift..=max_shift),
            rng.gen_range(-max_shift..=max_shift),
            rng.gen_range(-max_shift..=max_shift),
        ];
        Rigid {
            rotation: rotation_from_quaternion(q),
            translation,
        }
    }
}
