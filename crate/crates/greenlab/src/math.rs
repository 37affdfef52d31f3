//! Small fixed-size linear algebra used throughout the crate.
//!
//! Nothing here is domain specific; we only ever need 3-vectors, symmetric
//! 3x3 tensors and tiny dense least-squares systems, so we keep the types
//! local instead of pulling in a full linear algebra crate.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            Vec3::ZERO
        } else {
            self.scale(1.0 / n)
        }
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Symmetric 3x3 tensor stored as the upper triangle
/// (xx, xy, xz, yy, yz, zz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym3 {
    pub m: [f64; 6],
}

impl Sym3 {
    pub const IDENTITY: Sym3 = Sym3 { m: [1.0, 0.0, 0.0, 1.0, 0.0, 1.0] };
    pub const ZERO: Sym3 = Sym3 { m: [0.0; 6] };

    pub fn diag(a: f64, b: f64, c: f64) -> Sym3 {
        Sym3 { m: [a, 0.0, 0.0, b, 0.0, c] }
    }

    pub fn scalar(s: f64) -> Sym3 {
        Sym3::diag(s, s, s)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match (i, j) {
            (0, 0) => self.m[0],
            (0, 1) => self.m[1],
            (0, 2) => self.m[2],
            (1, 1) => self.m[3],
            (1, 2) => self.m[4],
            (2, 2) => self.m[5],
            _ => unreachable!(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[3] + self.m[5]
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m[0] * v.x + self.m[1] * v.y + self.m[2] * v.z,
            self.m[1] * v.x + self.m[3] * v.y + self.m[4] * v.z,
            self.m[2] * v.x + self.m[4] * v.y + self.m[5] * v.z,
        )
    }

    pub fn quad(&self, v: Vec3) -> f64 {
        v.dot(self.apply(v))
    }

    pub fn scale(&self, s: f64) -> Sym3 {
        let mut m = self.m;
        for e in &mut m {
            *e *= s;
        }
        Sym3 { m }
    }

    pub fn add(&self, o: &Sym3) -> Sym3 {
        let mut m = self.m;
        for (e, oe) in m.iter_mut().zip(o.m.iter()) {
            *e += oe;
        }
        Sym3 { m }
    }

    pub fn det(&self) -> f64 {
        let [a, b, c, d, e, f] = self.m;
        // | a b c |
        // | b d e |
        // | c e f |
        a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d)
    }

    /// Eigenvalues via the closed-form for symmetric 3x3 matrices, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let [a, b, c, d, e, f] = self.m;
        let p1 = b * b + c * c + e * e;
        let q = self.trace() / 3.0;
        if p1 == 0.0 {
            let mut ev = [a, d, f];
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            return ev;
        }
        let p2 = (a - q).powi(2) + (d - q).powi(2) + (f - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let bmat = Sym3 {
            m: [
                (a - q) / p,
                b / p,
                c / p,
                (d - q) / p,
                e / p,
                (f - q) / p,
            ],
        };
        let r = (bmat.det() / 2.0).clamp(-1.0, 1.0);
        let theta = r.acos() / 3.0;
        let l1 = q + 2.0 * p * theta.cos();
        let l3 = q + 2.0 * p * (theta + 2.0 * std::f64::consts::PI / 3.0).cos();
        let l2 = 3.0 * q - l1 - l3;
        let mut ev = [l1, l2, l3];
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    pub fn is_positive_definite(&self) -> bool {
        // Sylvester's criterion.
        let [a, b, _c, d, _e, _f] = self.m;
        a > 0.0 && (a * d - b * b) > 0.0 && self.det() > 0.0
    }

    /// Inverse, valid for positive definite input.
    pub fn inverse(&self) -> Sym3 {
        let [a, b, c, d, e, f] = self.m;
        let det = self.det();
        let inv = 1.0 / det;
        Sym3 {
            m: [
                (d * f - e * e) * inv,
                (c * e - b * f) * inv,
                (b * e - c * d) * inv,
                (a * f - c * c) * inv,
                (b * c - a * e) * inv,
                (a * d - b * b) * inv,
            ],
        }
    }
}

/// Solve a small dense symmetric positive definite system in place with
/// Gaussian elimination and partial pivoting. Panics on a singular matrix
/// only through division; callers check conditioning beforehand.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for row in (col + 1)..n {
            let factor = a[row][col] / d;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Composite Gauss-Legendre quadrature of `f` on [a, b] with `panels`
/// panels of a 16-point rule. Good to ~1e-14 for smooth integrands.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    // 16-point Gauss-Legendre nodes/weights on [-1, 1].
    const X: [f64; 8] = [
        0.0950125098376374,
        0.2816035507792589,
        0.4580167776572274,
        0.6178762444026438,
        0.7554044083550030,
        0.8656312023878318,
        0.9445750230732326,
        0.9894009349916499,
    ];
    const W: [f64; 8] = [
        0.1894506104550685,
        0.1826034150449236,
        0.1691565193950025,
        0.1495959888165767,
        0.1246289712555339,
        0.0951585116824928,
        0.0622535239386479,
        0.0271524594117541,
    ];
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for i in 0..8 {
            s += W[i] * (f(mid + half * X[i]) + f(mid - half * X[i]));
        }
        total += s * half;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues_of_diagonal() {
        let s = Sym3::diag(3.0, 1.0, 2.0);
        let ev = s.eigenvalues();
        assert_relative_eq!(ev[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(ev[1], 2.0, max_relative = 1e-12);
        assert_relative_eq!(ev[2], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let s = Sym3 { m: [4.0, 1.0, 0.5, 3.0, 0.2, 5.0] };
        let inv = s.inverse();
        let v = Vec3::new(1.0, -2.0, 0.7);
        let back = inv.apply(s.apply(v));
        assert_relative_eq!(back.x, v.x, max_relative = 1e-12);
        assert_relative_eq!(back.y, v.y, max_relative = 1e-12);
        assert_relative_eq!(back.z, v.z, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_exact_polynomial() {
        let val = gauss_legendre(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 2);
        assert_relative_eq!(val, 4.0 - 4.0 + 2.0, max_relative = 1e-13);
    }

    #[test]
    fn dense_solve() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve_dense(a, vec![3.0, 5.0]);
        assert_relative_eq!(x[0], 0.8, max_relative = 1e-12);
        assert_relative_eq!(x[1], 1.4, max_relative = 1e-12);
    }
}
