//! Joint-position metrics. Skeletons are in meters; every reported error is in
//! millimeters.

use crate::error::{Error, Result};
use crate::geometry::Skeleton;
use crate::mat3::{self, Mat3, Vec3};
use crate::scalar::Real;

const MM_PER_M: f64 = 1000.0;

/// Relative size of the second singular value below which the centered
/// point sets are treated as collinear.
pub const COLLINEAR_TOL: f64 = 1e-12;

/// Similarity transform `g ≈ s·R·p + t` found by Procrustes analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult<T> {
    pub rotation: Mat3<T>,
    pub scale: T,
    pub translation: Vec3<T>,
    /// Per-point distance after alignment, in millimeters.
    pub residual_mm: Vec<T>,
}

impl<T: Real> AlignmentResult<T> {
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        mat3::add(mat3::scale(mat3::mul_vec(&self.rotation, p), self.scale), self.translation)
    }

    pub fn mean_residual_mm(&self) -> T {
        self.residual_mm.iter().copied().sum::<T>() / T::from_usize_lossy(self.residual_mm.len())
    }
}

fn check_pair<T>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted frames vs {} ground-truth", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("no frames to evaluate".into()));
    }
    Ok(())
}

fn dist_mm<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    mat3::norm(mat3::sub(a, b)) * T::lit(MM_PER_M)
}

/// Mean per-joint Euclidean error over all frames and joints, in mm.
pub fn mpjpe<T: Real>(pred: &[Skeleton<T>], gt: &[Skeleton<T>]) -> Result<T> {
    check_pair(pred, gt)?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.joints.iter().zip(&g.joints) {
            sum += dist_mm(*a, *b);
            n += 1;
        }
    }
    Ok(sum / T::from_usize_lossy(n))
}

fn centroid<T: Real>(pts: &[Vec3<T>]) -> Vec3<T> {
    let mut c = [T::zero(); 3];
    for p in pts {
        c = mat3::add(c, *p);
    }
    mat3::scale(c, T::one() / T::from_usize_lossy(pts.len()))
}

/// Optimal similarity transform taking `pred` onto `gt` in the least-squares
/// sense. Reflections are excluded: the rotation always has determinant +1.
pub fn procrustes_points<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<AlignmentResult<T>> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return Err(Error::ShapeMismatch(format!(
            "procrustes needs two equal sets of at least 3 points (got {} and {})",
            pred.len(),
            gt.len()
        )));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let mut h = mat3::zeros::<T>();
    let mut pred_ss = T::zero();
    for (p, g) in pred.iter().zip(gt) {
        let (pc, gc) = (mat3::sub(*p, mp), mat3::sub(*g, mg));
        pred_ss += mat3::dot(pc, pc);
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += pc[r] * gc[c];
            }
        }
    }
    let svd = mat3::svd3(&h);
    let [s1, s2, s3] = svd.sigma;
    if pred_ss <= T::zero() || s1 <= T::zero() || s2 <= T::lit(COLLINEAR_TOL) * s1 {
        return Err(Error::DegenerateConfiguration("points are collinear; rotation is not unique".into()));
    }
    // H = U Σ Vᵀ; R = V·diag(1, 1, d)·Uᵀ with d fixing the determinant.
    let vut = mat3::mul(&svd.v, &mat3::transpose(&svd.u));
    let d = if mat3::det(&vut) < T::zero() { -T::one() } else { T::one() };
    let mut vd = svd.v;
    for row in vd.iter_mut() {
        row[2] *= d;
    }
    let rotation = mat3::mul(&vd, &mat3::transpose(&svd.u));
    let scale = (s1 + s2 + d * s3) / pred_ss;
    let translation = mat3::sub(mg, mat3::scale(mat3::mul_vec(&rotation, mp), scale));
    let mut out = AlignmentResult { rotation, scale, translation, residual_mm: Vec::with_capacity(pred.len()) };
    for (p, g) in pred.iter().zip(gt) {
        let r = dist_mm(out.apply(*p), *g);
        out.residual_mm.push(r);
    }
    Ok(out)
}

/// [`procrustes_points`] over the joints of one frame.
pub fn procrustes_align<T: Real>(pred: &Skeleton<T>, gt: &Skeleton<T>) -> Result<AlignmentResult<T>> {
    procrustes_points(&pred.joints, &gt.joints)
}

/// MPJPE after per-frame Procrustes alignment, in mm.
pub fn pa_mpjpe<T: Real>(pred: &[Skeleton<T>], gt: &[Skeleton<T>]) -> Result<T> {
    check_pair(pred, gt)?;
    let mut sum = T::zero();
    for (p, g) in pred.iter().zip(gt) {
        sum += procrustes_align(p, g)?.mean_residual_mm();
    }
    Ok(sum / T::from_usize_lossy(pred.len()))
}

/// Mean over joints and interior frames of the distance between predicted
/// and true second differences, in mm/frame².
pub fn accel_error<T: Real>(pred: &[Skeleton<T>], gt: &[Skeleton<T>]) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted frames vs {} ground-truth", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::TooShort { need: 3, got: pred.len() });
    }
    let second = |s: &[Skeleton<T>], t: usize, j: usize| {
        let two = T::lit(2.0);
        let (a, b, c) = (s[t - 1].joints[j], s[t].joints[j], s[t + 1].joints[j]);
        [c[0] - two * b[0] + a[0], c[1] - two * b[1] + a[1], c[2] - two * b[2] + a[2]]
    };
    let mut sum = T::zero();
    let mut n = 0usize;
    for t in 1..pred.len() - 1 {
        for j in 0..pred[t].joints.len() {
            sum += dist_mm(second(pred, t, j), second(gt, t, j));
            n += 1;
        }
    }
    Ok(sum / T::from_usize_lossy(n))
}
