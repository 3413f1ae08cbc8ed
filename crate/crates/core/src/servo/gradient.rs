//! Finite-difference directional derivatives and least-squares gradient
//! recovery.

use nalgebra::{DMatrix, DVector};

use crate::render::CameraArray;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Objective units per meter, end-effector frame.
    pub grad: Vec3,
    pub residual_norm: f64,
    pub per_camera_delta_f: Vec<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.grad.norm()
    }
}

/// Stack the raw offset vectors of the array, one row per camera.
pub fn direction_matrix(array: &CameraArray) -> Result<DMatrix<f64>> {
    let offsets = array.offsets();
    let v = DMatrix::from_fn(offsets.len(), 3, |i, j| offsets[i][j]);
    let rank = HouseholderQr::new(v.clone()).rank();
    if rank < 3 {
        return Err(Error::RankDeficient { rank });
    }
    Ok(v)
}

pub fn delta_f(f_ref: f64, f_cameras: &[f64]) -> Vec<f64> {
    f_cameras.iter().map(|f| f - f_ref).collect()
}

/// Least-squares solve of `V g = delta_f`.
pub fn estimate_gradient(v: &DMatrix<f64>, delta_f: &[f64]) -> Result<GradientEstimate> {
    if v.ncols() != 3 || v.nrows() != delta_f.len() {
        return Err(crate::error::config_err(format!(
            "direction matrix is {}x{} but {} differences were given",
            v.nrows(),
            v.ncols(),
            delta_f.len()
        )));
    }
    let qr = HouseholderQr::new(v.clone());
    let rank = qr.rank();
    if rank < 3 {
        return Err(Error::RankDeficient { rank });
    }
    let (x, residual_norm) = qr.solve(&DVector::from_column_slice(delta_f));
    Ok(GradientEstimate {
        grad: Vec3::new(x[0], x[1], x[2]),
        residual_norm,
        per_camera_delta_f: delta_f.to_vec(),
    })
}

/// Householder QR of a tall matrix, stored compactly: `R` in the upper
/// triangle, reflector tails below it.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    qr: DMatrix<f64>,
    /// Reflector head entries and scaling, one per column.
    heads: Vec<f64>,
    betas: Vec<f64>,
    diag: Vec<f64>,
}

impl HouseholderQr {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        assert!(m >= n, "HouseholderQr needs rows >= columns");
        let mut heads = vec![0.0; n];
        let mut betas = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for k in 0..n {
            let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
            // v = x - alpha e1, with v_k kept apart from the stored tail
            let vk = a[(k, k)] - alpha;
            let vnorm2 = vk * vk + (k + 1..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for j in k + 1..n {
                let mut s = vk * a[(k, j)];
                for i in k + 1..m {
                    s += a[(i, k)] * a[(i, j)];
                }
                s *= beta;
                a[(k, j)] -= s * vk;
                for i in k + 1..m {
                    let t = a[(i, k)];
                    a[(i, j)] -= s * t;
                }
            }
            heads[k] = vk;
            betas[k] = beta;
            diag[k] = alpha;
            a[(k, k)] = alpha;
        }
        Self {
            qr: a,
            heads,
            betas,
            diag,
        }
    }

    /// Numerical rank from the diagonal of `R`.
    pub fn rank(&self) -> usize {
        let max = self.diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        let tol = 1e-12 * max.max(f64::MIN_POSITIVE) * self.qr.nrows() as f64;
        self.diag.iter().filter(|d| d.abs() > tol).count()
    }

    /// Apply `Q^T` to `b`.
    fn apply_qt(&self, b: &mut DVector<f64>) {
        let (m, n) = self.qr.shape();
        for k in 0..n {
            if self.betas[k] == 0.0 {
                continue;
            }
            let mut s = self.heads[k] * b[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * b[i];
            }
            s *= self.betas[k];
            b[k] -= s * self.heads[k];
            for i in k + 1..m {
                b[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// Least-squares solution and residual norm `||A x - b||`.
    pub fn solve(&self, b: &DVector<f64>) -> (DVector<f64>, f64) {
        let (m, n) = self.qr.shape();
        let mut c = b.clone();
        self.apply_qt(&mut c);
        let mut x = DVector::zeros(n);
        for k in (0..n).rev() {
            let mut s = c[k];
            for j in k + 1..n {
                s -= self.qr[(k, j)] * x[j];
            }
            x[k] = s / self.diag[k];
        }
        let residual = (n..m).map(|i| c[i] * c[i]).sum::<f64>().sqrt();
        (x, residual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::CameraIntrinsics;
    use nalgebra::{Matrix3, Rotation3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(64, 64, 1.0).unwrap()
    }

    fn default_array() -> CameraArray {
        CameraArray::grid_layout(0.027, 0.027, 0.03, intr()).unwrap()
    }

    /// Normal-equations solve through nalgebra, independent of the QR above.
    fn normal_equations(v: &DMatrix<f64>, b: &[f64]) -> Vec3 {
        let vtv = v.transpose() * v;
        let vtb = v.transpose() * DVector::from_column_slice(b);
        let x = vtv.lu().solve(&vtb).unwrap();
        Vec3::new(x[0], x[1], x[2])
    }

    fn diffs_for(v: &DMatrix<f64>, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
        let f0 = f(&Vec3::zeros());
        (0..v.nrows())
            .map(|i| f(&Vec3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)])) - f0)
            .collect()
    }

    #[test]
    fn axis_aligned_array_is_scaled_identity() {
        let h = 0.05;
        let arr = CameraArray::new(
            vec![Vec3::new(h, 0.0, 0.0), Vec3::new(0.0, h, 0.0), Vec3::new(0.0, 0.0, h)],
            intr(),
        )
        .unwrap();
        let v = direction_matrix(&arr).unwrap();
        assert_eq!(v, DMatrix::identity(3, 3) * h);
        let est = estimate_gradient(&v, &[0.1, -0.2, 0.3]).unwrap();
        assert!((est.grad - Vec3::new(0.1, -0.2, 0.3) / h).norm() < 1e-12);
        assert!(est.residual_norm < 1e-14);
    }

    #[test]
    fn default_layout_has_full_rank() {
        let v = direction_matrix(&default_array()).unwrap();
        assert_eq!(v.shape(), (8, 3));
        assert_eq!(HouseholderQr::new(v).rank(), 3);
    }

    #[test]
    fn rank_deficient_system_is_rejected() {
        let v = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(estimate_gradient(&v, &[0.0; 4]), Err(Error::RankDeficient { rank: 2 })));
    }

    #[test]
    fn delta_f_cases() {
        assert_eq!(delta_f(0.3, &[0.3, 0.3]), vec![0.0, 0.0]);
        let g = Vec3::new(0.3, -1.0, 2.0);
        let v = direction_matrix(&default_array()).unwrap();
        let d = diffs_for(&v, |x| g.dot(x) + 0.7);
        for i in 0..v.nrows() {
            let vi = Vec3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]);
            assert!((d[i] - g.dot(&vi)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_differences_match_taylor() {
        let g = Vec3::new(0.3, -1.0, 2.0);
        let h = Matrix3::new(2.0, 0.5, 0.0, 0.5, -1.0, 0.3, 0.0, 0.3, 4.0);
        let f = |x: &Vec3| g.dot(x) + 0.5 * x.dot(&(h * x));
        let v = direction_matrix(&default_array()).unwrap();
        let d = diffs_for(&v, f);
        for i in 0..v.nrows() {
            let vi = Vec3::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]);
            let taylor = g.dot(&vi) + 0.5 * vi.dot(&(h * vi));
            assert!((d[i] - taylor).abs() < 1e-15);
        }
    }

    #[test]
    fn qr_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(3..12);
            let v = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-0.1..0.1));
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let est = estimate_gradient(&v, &b).unwrap();
            let oracle = normal_equations(&v, &b);
            assert!((est.grad - oracle).norm() <= 1e-9 * oracle.norm().max(1.0));
            let resid = (&v * DVector::from_column_slice(est.grad.as_slice()) - DVector::from_column_slice(&b)).norm();
            assert!((resid - est.residual_norm).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_rows_only_reweight() {
        let v = direction_matrix(&default_array()).unwrap();
        let g = Vec3::new(1.0, 2.0, -0.5);
        let d = diffs_for(&v, |x| g.dot(x));
        let mut v2 = DMatrix::zeros(v.nrows() + 2, 3);
        v2.rows_mut(0, v.nrows()).copy_from(&v);
        v2.row_mut(v.nrows()).copy_from(&v.row(0));
        v2.row_mut(v.nrows() + 1).copy_from(&v.row(3));
        let mut d2 = d.clone();
        d2.push(d[0]);
        d2.push(d[3]);
        let a = estimate_gradient(&v, &d).unwrap().grad;
        let b = estimate_gradient(&v2, &d2).unwrap().grad;
        assert!((a - b).norm() < 1e-10);
        // with inconsistent data the duplicate pulls the fit, oracle agrees
        let mut d3 = d2.clone();
        d3[0] += 0.01;
        let c = estimate_gradient(&v2, &d3).unwrap().grad;
        assert!((c - normal_equations(&v2, &d3)).norm() < 1e-9);
    }

    #[test]
    fn affine_fields_are_recovered_exactly() {
        let v = direction_matrix(&default_array()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let g = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let b = rng.random_range(-1.0..1.0);
            let est = estimate_gradient(&v, &diffs_for(&v, |x| g.dot(x) + b)).unwrap();
            assert!((est.grad - g).norm() / g.norm() < 1e-12);
            assert!(est.residual_norm < 1e-12);
        }
    }

    #[test]
    fn truncation_error_is_first_order() {
        let g = Vec3::new(0.4, -0.2, 1.0);
        let h = Matrix3::new(3.0, 1.0, 0.0, 1.0, -2.0, 0.5, 0.0, 0.5, 5.0);
        let f = |x: &Vec3| g.dot(x) + 0.5 * x.dot(&(h * x));
        let err = |r: f64| {
            let arr = CameraArray::with_radius(r, intr()).unwrap();
            let v = direction_matrix(&arr).unwrap();
            (estimate_gradient(&v, &diffs_for(&v, f)).unwrap().grad - g).norm()
        };
        let ratio = err(0.06) / err(0.03);
        assert!((1.6..=2.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn frame_rotation_is_equivariant() {
        let arr = default_array();
        let v = direction_matrix(&arr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let g = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let rot = Rotation3::from_scaled_axis(Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            // world field sampled at world offsets R v
            let d: Vec<f64> = arr.offsets().iter().map(|o| g.dot(&(rot * o))).collect();
            let local = estimate_gradient(&v, &d).unwrap().grad;
            assert!((rot * local - g).norm() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn scaling_differences_scales_gradient(c in -100.0f64..100.0, seed in 0u64..1000) {
            let v = direction_matrix(&default_array()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d: Vec<f64> = (0..v.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
            let a = estimate_gradient(&v, &d).unwrap().grad * c;
            let b = estimate_gradient(&v, &scaled).unwrap().grad;
            prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }

        #[test]
        fn residual_is_orthogonal_to_columns(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = estimate_gradient(&v, &b).unwrap().grad;
            let r = &v * DVector::from_column_slice(x.as_slice()) - DVector::from_column_slice(&b);
            prop_assert!((v.transpose() * r).norm() < 1e-12);
        }
    }
}
