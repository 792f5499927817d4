use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Mean over frames of the trace of the across-view covariance (population,
/// `1/V`) of the frame's feature vectors. `features[v]` is view `v`'s `T×D`
/// matrix for the same clip.
pub fn cross_view_variance<T: Real>(features: &[Matrix<T>]) -> Result<T> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument("cross-view variance needs at least 2 views".into()));
    }
    let shape = features[0].shape();
    if shape.0 == 0 || features.iter().any(|f| f.shape() != shape) {
        return Err(Error::ShapeMismatch("per-view feature matrices must share a non-empty shape".into()));
    }
    let (frames, dim) = shape;
    let nv = T::from_usize_lossy(features.len());
    let mut total = T::zero();
    let mut mean = vec![T::zero(); dim];
    for t in 0..frames {
        mean.iter_mut().for_each(|m| *m = T::zero());
        for f in features {
            for (m, &x) in mean.iter_mut().zip(f.row(t)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nv);
        let mut trace = T::zero();
        for f in features {
            for (&m, &x) in mean.iter().zip(f.row(t)) {
                trace += (x - m) * (x - m);
            }
        }
        total += trace / nv;
    }
    Ok(total / T::from_usize_lossy(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_views_have_zero_variance() {
        let f = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(cross_view_variance(&[f.clone(), f.clone(), f]).unwrap(), 0.0);
    }

    #[test]
    fn opposite_pair_gives_squared_norm() {
        let e = Matrix::<f64>::from_vec(1, 3, vec![1.0, -2.0, 2.0]).unwrap();
        let neg = e.map(|v| -v);
        assert!((cross_view_variance(&[e, neg]).unwrap() - 9.0).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_per_dimension_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (views, frames, dim) = (5, 7, 4);
        let feats: Vec<Matrix<f64>> = (0..views)
            .map(|_| Matrix::from_vec(frames, dim, (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let mut naive = 0.0;
        for t in 0..frames {
            for d in 0..dim {
                let xs: Vec<f64> = feats.iter().map(|f| f.get(t, d)).collect();
                let mu = xs.iter().sum::<f64>() / views as f64;
                naive += xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / views as f64;
            }
        }
        naive /= frames as f64;
        assert!((cross_view_variance(&feats).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn needs_two_views() {
        assert!(cross_view_variance(&[Matrix::<f64>::zeros(2, 2)]).is_err());
    }
}
