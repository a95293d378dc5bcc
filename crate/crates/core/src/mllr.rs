//! Global MLLR mean adaptation: a single D x (D+1) affine transform on
//! the augmented means [1; mu], estimated row by row in closed form from
//! one E-step against the unadapted model.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::mat::Mat;

/// Augmented mean transform: new mean = matrix * [1; mu].
#[derive(Debug, Clone)]
pub struct MllrTransform {
    matrix: Mat,
}

impl MllrTransform {
    pub fn new(matrix: Mat) -> Result<Self> {
        if matrix.cols() != matrix.rows() + 1 {
            return Err(Error::Dimension {
                expected: matrix.rows() + 1,
                got: matrix.cols(),
                what: "transform columns",
            });
        }
        if matrix.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Usage("transform entries must be finite".into()));
        }
        Ok(MllrTransform { matrix })
    }

    pub fn identity(d: usize) -> Self {
        MllrTransform {
            matrix: Mat::from_fn(d, d + 1, |i, j| if j == i + 1 { 1.0 } else { 0.0 }),
        }
    }

    pub fn d(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// Applies the transform to a single mean vector.
    pub fn transform_mean(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        if mu.len() != d {
            return Err(Error::Dimension { expected: d, got: mu.len(), what: "mean" });
        }
        let mut out = vec![0.0; d];
        for i in 0..d {
            let row = self.matrix.row(i);
            let mut s = row[0];
            for j in 0..d {
                s += row[j + 1] * mu[j];
            }
            out[i] = s;
        }
        Ok(out)
    }
}

/// Estimates the global mean transform maximizing the EM auxiliary
/// function under the given diagonal-covariance mixture, with posteriors
/// taken from the unadapted model (one EM step). Row d solves
/// w_d = G_d^{-1} k_d with
///   G_d = sum_m (gamma_m / var_{m,d}) mu'_m mu'_m^T
///   k_d = sum_m (1 / var_{m,d}) (sum_n p(m|y_n) y_{n,d}) mu'_m.
pub fn estimate_global_mllr(gmm: &GaussianMixture, data: &Mat) -> Result<MllrTransform> {
    let vars = gmm
        .diag_variances()
        .ok_or_else(|| Error::Usage("MLLR estimation requires a diagonal-covariance mixture".into()))?
        .clone();
    if data.cols() != gmm.d() {
        return Err(Error::Dimension { expected: gmm.d(), got: data.cols(), what: "adaptation data" });
    }
    if data.rows() == 0 {
        return Err(Error::Estimation("no adaptation frames".into()));
    }
    let d = gmm.d();
    let m = gmm.m();
    // accumulate gamma_m and sum_n p(m|y_n) y_n
    let mut gamma = vec![0.0; m];
    let mut wsum = Mat::zeros(m, d);
    for t in 0..data.rows() {
        let y = data.row(t);
        let post = gmm.posteriors(y)?;
        for (k, &g) in post.iter().enumerate() {
            if g < 1e-14 {
                continue;
            }
            gamma[k] += g;
            for j in 0..d {
                wsum[(k, j)] += g * y[j];
            }
        }
    }
    estimate_from_stats(gmm, &vars, &gamma, &wsum)
}

/// Closed-form solve from precomputed occupancies and weighted data sums.
/// Exposed so callers with forced alignments can reuse the same math.
pub fn estimate_from_stats(
    gmm: &GaussianMixture,
    vars: &Mat,
    gamma: &[f64],
    weighted_sum: &Mat,
) -> Result<MllrTransform> {
    let d = gmm.d();
    let m = gmm.m();
    if gamma.len() != m || weighted_sum.rows() != m || weighted_sum.cols() != d {
        return Err(Error::Dimension { expected: m * d, got: weighted_sum.rows() * weighted_sum.cols(), what: "statistics" });
    }
    let mut out = Mat::zeros(d, d + 1);
    let mut aug = vec![0.0; d + 1];
    for dim in 0..d {
        let mut g_mat = Mat::zeros(d + 1, d + 1);
        let mut k_vec = vec![0.0; d + 1];
        for k in 0..m {
            if gamma[k] <= 0.0 {
                continue;
            }
            let var = vars[(k, dim)];
            aug[0] = 1.0;
            aug[1..].copy_from_slice(gmm.means().row(k));
            let gw = gamma[k] / var;
            for i in 0..=d {
                let gi = gw * aug[i];
                for j in i..=d {
                    g_mat[(i, j)] += gi * aug[j];
                }
                k_vec[i] += weighted_sum[(k, dim)] / var * aug[i];
            }
        }
        for i in 0..=d {
            for j in 0..i {
                g_mat[(i, j)] = g_mat[(j, i)];
            }
        }
        let sol = match g_mat.solve(&k_vec) {
            Ok(s) => s,
            Err(_) => {
                log::warn!("singular MLLR accumulator for dimension {dim}, applying ridge");
                let ridge = 1e-8 * g_mat.trace();
                let mut reg = g_mat.clone();
                for i in 0..=d {
                    reg[(i, i)] += ridge;
                }
                reg.solve(&k_vec)?
            }
        };
        out.row_mut(dim).copy_from_slice(&sol);
    }
    MllrTransform::new(out)
}

/// Replaces each mean with matrix * [1; mu]; weights, covariances and
/// component order are untouched.
pub fn apply_mllr(gmm: &GaussianMixture, t: &MllrTransform) -> Result<GaussianMixture> {
    if t.d() != gmm.d() {
        return Err(Error::Dimension { expected: gmm.d(), got: t.d(), what: "transform" });
    }
    let mut means = Mat::zeros(gmm.m(), gmm.d());
    for k in 0..gmm.m() {
        let new = t.transform_mean(gmm.means().row(k))?;
        means.row_mut(k).copy_from_slice(&new);
    }
    gmm.with_means(means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{Covariances, EmOptions, em_fit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn diag_gmm(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> GaussianMixture {
        GaussianMixture::new(
            weights,
            Mat::from_rows(&means),
            Covariances::Diagonal(Mat::from_rows(&vars)),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_translation_application() {
        let g = diag_gmm(
            vec![0.5, 0.5],
            vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
            vec![vec![1.0, 1.0], vec![2.0, 0.5]],
        );
        let id = MllrTransform::identity(2);
        let same = apply_mllr(&g, &id).unwrap();
        assert_eq!(same.means().data(), g.means().data());
        assert_eq!(same.weights(), g.weights());
        assert_eq!(
            same.diag_variances().unwrap().data(),
            g.diag_variances().unwrap().data()
        );
        let mut shift = id.matrix().clone();
        shift[(0, 0)] = 3.0;
        shift[(1, 0)] = -1.0;
        let shifted = apply_mllr(&g, &MllrTransform::new(shift).unwrap()).unwrap();
        assert!((shifted.means()[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((shifted.means()[(1, 1)] - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn random_transform_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 3;
        let g = diag_gmm(
            vec![0.25; 4],
            (0..4)
                .map(|_| (0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
                .collect(),
            (0..4).map(|_| vec![1.0; d]).collect(),
        );
        let t = MllrTransform::new(Mat::from_fn(d, d + 1, |_, _| rng.gen::<f64>() * 2.0 - 1.0))
            .unwrap();
        let out = apply_mllr(&g, &t).unwrap();
        for k in 0..4 {
            let mu = g.means().row(k);
            for i in 0..d {
                let mut want = t.matrix()[(i, 0)];
                for j in 0..d {
                    want += t.matrix()[(i, j + 1)] * mu[j];
                }
                assert!((out.means()[(k, i)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_at_model_means() {
        // one frame exactly at each mean; with well-separated means the
        // posteriors are effectively hard, and the data is already
        // explained by the identity transform
        let g = diag_gmm(
            vec![1.0 / 3.0; 3],
            vec![vec![0.0, 0.0], vec![20.0, 0.0], vec![0.0, 20.0]],
            vec![vec![1.0, 1.0]; 3],
        );
        let data = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![20.0, 0.0],
            vec![0.0, 20.0],
        ]);
        let t = estimate_global_mllr(&g, &data).unwrap();
        let id = MllrTransform::identity(2);
        for i in 0..2 {
            for j in 0..3 {
                assert!(
                    (t.matrix()[(i, j)] - id.matrix()[(i, j)]).abs() < 1e-6,
                    "entry ({i},{j}) = {}",
                    t.matrix()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn single_mixture_recovers_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = diag_gmm(vec![1.0], vec![vec![1.0, -1.0]], vec![vec![1.0, 1.0]]);
        let shift = [2.5, -3.0];
        let n = 5000;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..2)
                    .map(|j| {
                        g.means()[(0, j)] + shift[j] + rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect()
            })
            .collect();
        let data = Mat::from_rows(&rows);
        let t = estimate_global_mllr(&g, &data).unwrap();
        let adapted = apply_mllr(&g, &t).unwrap();
        let se = 3.0 / (n as f64).sqrt();
        for j in 0..2 {
            let want = g.means()[(0, j)] + shift[j];
            assert!(
                (adapted.means()[(0, j)] - want).abs() < 3.0 * se,
                "dim {j}: {} vs {want}",
                adapted.means()[(0, j)]
            );
        }
    }

    #[test]
    fn adaptation_does_not_decrease_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rows: Vec<Vec<f64>> = (0..800)
            .map(|_| {
                vec![
                    3.0 + rng.sample::<f64, _>(StandardNormal),
                    -2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let data = Mat::from_rows(&rows);
        // deliberately mismatched model
        let (g, _) = em_fit(
            &Mat::from_fn(400, 2, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
            3,
            &EmOptions { iterations: 5, seed: 1, ..Default::default() },
        )
        .unwrap();
        let before = g.total_log_likelihood(&data).unwrap();
        let t = estimate_global_mllr(&g, &data).unwrap();
        let after = apply_mllr(&g, &t).unwrap().total_log_likelihood(&data).unwrap();
        assert!(after >= before - 1e-6, "before {before} after {after}");
    }

    #[test]
    fn duplication_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = diag_gmm(
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![4.0, 4.0]],
            vec![vec![1.0, 2.0], vec![0.5, 1.0]],
        );
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen::<f64>() * 8.0 - 2.0, rng.gen::<f64>() * 8.0 - 2.0])
            .collect();
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let t1 = estimate_global_mllr(&g, &Mat::from_rows(&rows)).unwrap();
        let t2 = estimate_global_mllr(&g, &Mat::from_rows(&doubled)).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((t1.matrix()[(i, j)] - t2.matrix()[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn auxiliary_value_at_estimate_beats_identity() {
        // Q(M) = sum_n sum_m p(m|y_n) log N(y_n; M mu'_m, var_m)
        fn aux(g: &GaussianMixture, data: &Mat, t: &MllrTransform) -> f64 {
            let adapted = apply_mllr(g, t).unwrap();
            let vars = g.diag_variances().unwrap();
            let mut q = 0.0;
            for n in 0..data.rows() {
                let y = data.row(n);
                let post = g.posteriors(y).unwrap();
                for m in 0..g.m() {
                    if post[m] < 1e-14 {
                        continue;
                    }
                    let mut ll = 0.0;
                    for j in 0..g.d() {
                        let var = vars[(m, j)];
                        let z = y[j] - adapted.means()[(m, j)];
                        ll += -0.5
                            * (libm::log(2.0 * core::f64::consts::PI * var) + z * z / var);
                    }
                    q += post[m] * ll;
                }
            }
            q
        }
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = diag_gmm(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0], vec![2.0, -1.0]],
            vec![vec![1.0, 1.0], vec![2.0, 0.5]],
        );
        let data = Mat::from_fn(300, 2, |_, _| rng.gen::<f64>() * 6.0 - 2.0);
        let t = estimate_global_mllr(&g, &data).unwrap();
        let q_est = aux(&g, &data, &t);
        let q_id = aux(&g, &data, &MllrTransform::identity(2));
        assert!(q_est >= q_id - 1e-9, "estimated {q_est} identity {q_id}");
        // and perturbing the estimate can only lower the auxiliary value
        for trial in 0..5 {
            let mut pert = t.matrix().clone();
            let i = trial % 2;
            let j = trial % 3;
            pert[(i, j)] += 1e-3;
            let q_p = aux(&g, &data, &MllrTransform::new(pert).unwrap());
            assert!(q_p <= q_est + 1e-9, "perturbed {q_p} beats estimate {q_est}");
        }
    }
}
