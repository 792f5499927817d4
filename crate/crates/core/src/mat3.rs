//! Fixed-size 3-vector and 3×3 matrix helpers, including a Jacobi SVD.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3×3 matrix.
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn zeros<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub fn mul_vec<T: Real>(a: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = zeros();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det<T: Real>(a: &Mat3<T>) -> T {
    dot(a[0], cross(a[1], a[2]))
}

/// Rotation about the x axis: `y' = c·y − s·z`, `z' = s·y + c·z`.
pub fn rot_x<T: Real>(angle: T) -> Mat3<T> {
    let (s, c) = angle.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

/// Rotation about the y axis: `x' = c·x + s·z`, `z' = −s·x + c·z`.
pub fn rot_y<T: Real>(angle: T) -> Mat3<T> {
    let (s, c) = angle.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

/// Rotation about the z axis: `x' = c·x − s·y`, `y' = s·x + c·y`.
pub fn rot_z<T: Real>(angle: T) -> Mat3<T> {
    let (s, c) = angle.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

/// Singular value decomposition `a = u · diag(sigma) · vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd3<T> {
    pub u: Mat3<T>,
    pub sigma: Vec3<T>,
    pub v: Mat3<T>,
}

/// One-sided (Hestenes) Jacobi SVD. Singular values are sorted in descending
/// order; when `a` is rank deficient the missing left singular vectors are
/// completed to a right-handed orthonormal basis.
pub fn svd3<T: Real>(a: &Mat3<T>) -> Svd3<T> {
    // Work on columns: w = a, accumulate right rotations into v.
    let mut w = *a;
    let mut v = identity::<T>();
    let eps = T::epsilon();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let mut alpha = T::zero();
            let mut beta = T::zero();
            let mut gamma = T::zero();
            for row in &w {
                alpha += row[p] * row[p];
                beta += row[q] * row[q];
                gamma += row[p] * row[q];
            }
            if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (gamma + gamma);
            let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            for row in w.iter_mut().chain(v.iter_mut()) {
                let (xp, xq) = (row[p], row[q]);
                row[p] = c * xp - s * xq;
                row[q] = s * xp + c * xq;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sig = [T::zero(); 3];
    for (j, s) in sig.iter_mut().enumerate() {
        *s = (w[0][j] * w[0][j] + w[1][j] * w[1][j] + w[2][j] * w[2][j]).sqrt();
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sig[j].partial_cmp(&sig[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = zeros::<T>();
    let mut vs = zeros::<T>();
    let mut sigma = [T::zero(); 3];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = sig[src];
        for i in 0..3 {
            vs[i][dst] = v[i][src];
            u[i][dst] = if sig[src] > T::zero() { w[i][src] / sig[src] } else { T::zero() };
        }
    }

    // Complete U where singular values vanish (relative to the largest).
    let tiny = sigma[0] * eps * T::lit(8.0);
    let col = |m: &Mat3<T>, j: usize| [m[0][j], m[1][j], m[2][j]];
    if sigma[0] == T::zero() {
        u = identity();
    } else if sigma[1] <= tiny {
        let u0 = col(&u, 0);
        // Any unit vector orthogonal to u0.
        let pick = if u0[0].abs() < lit_half::<T>() { [T::one(), T::zero(), T::zero()] } else { [T::zero(), T::one(), T::zero()] };
        let mut u1 = sub(pick, scale(u0, dot(pick, u0)));
        u1 = scale(u1, T::one() / norm(u1));
        let u2 = cross(u0, u1);
        for i in 0..3 {
            u[i][1] = u1[i];
            u[i][2] = u2[i];
        }
    } else if sigma[2] <= tiny {
        let u2 = cross(col(&u, 0), col(&u, 1));
        let n = norm(u2);
        for i in 0..3 {
            u[i][2] = u2[i] / n;
        }
    }
    Svd3 { u, sigma, v: vs }
}

#[inline]
fn lit_half<T: Real>() -> T {
    T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(s: &Svd3<f64>) -> Mat3<f64> {
        let mut d = zeros();
        for i in 0..3 {
            d[i][i] = s.sigma[i];
        }
        mul(&mul(&s.u, &d), &transpose(&s.v))
    }

    fn max_abs_diff(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
        let mut m = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a[i][j] - b[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn svd_reconstructs_general_matrix() {
        let a = [[2.0, -1.0, 0.3], [0.5, 4.0, 1.0], [-3.0, 0.2, 1.5]];
        let s = svd3(&a);
        assert!(max_abs_diff(&reconstruct(&s), &a) < 1e-13);
        assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= s.sigma[2]);
        let utu = mul(&transpose(&s.u), &s.u);
        assert!(max_abs_diff(&utu, &identity()) < 1e-13);
        let vtv = mul(&transpose(&s.v), &s.v);
        assert!(max_abs_diff(&vtv, &identity()) < 1e-13);
    }

    #[test]
    fn svd_rank_one_completes_basis() {
        let a = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]];
        let s = svd3(&a);
        assert!(max_abs_diff(&reconstruct(&s), &a) < 1e-12);
        assert!(s.sigma[1] < 1e-12);
        assert!((det(&s.u).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_helpers_are_proper() {
        for r in [rot_x(0.7), rot_y(-1.2), rot_z(2.9)] {
            assert!((det(&r) - 1.0f64).abs() < 1e-15);
            assert!(max_abs_diff(&mul(&r, &transpose(&r)), &identity()) < 1e-15);
        }
        let p = mul_vec(&rot_y(std::f64::consts::FRAC_PI_2), [1.0, 0.0, 0.0]);
        assert!((p[2] + 1.0).abs() < 1e-15 && p[0].abs() < 1e-15);
    }
}
