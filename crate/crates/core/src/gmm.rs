//! Gaussian mixture modelling: densities, posteriors, EM training and
//! mergeable sufficient statistics (including paired clean/noisy
//! accumulation under the shared-alignment assumption).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

/// Full covariance with its precomputed Cholesky factor and log-determinant.
#[derive(Debug, Clone)]
pub struct FullCov {
    pub matrix: Mat,
    chol: Mat,
    logdet: f64,
}

impl FullCov {
    pub fn new(mut matrix: Mat) -> Result<Self> {
        matrix.symmetrize();
        let chol = matrix.cholesky()?;
        let logdet = 2.0 * (0..chol.rows()).map(|i| libm::log(chol[(i, i)])).sum::<f64>();
        Ok(FullCov { matrix, chol, logdet })
    }
}

#[derive(Debug, Clone)]
pub enum Covariances {
    /// M x D per-dimension variances.
    Diagonal(Mat),
    Full(Vec<FullCov>),
}

/// Immutable Gaussian mixture: weights, means (M x D) and covariances.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Mat,
    covs: Covariances,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Mat, covs: Covariances) -> Result<Self> {
        let m = weights.len();
        if means.rows() != m {
            return Err(Error::Dimension { expected: m, got: means.rows(), what: "mean rows" });
        }
        let wsum: f64 = weights.iter().sum();
        if libm::fabs(wsum - 1.0) > 1e-10 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Usage(format!("mixture weights must form a simplex (sum {wsum})")));
        }
        match &covs {
            Covariances::Diagonal(v) => {
                if v.rows() != m || v.cols() != means.cols() {
                    return Err(Error::Dimension {
                        expected: m * means.cols(),
                        got: v.rows() * v.cols(),
                        what: "diagonal covariances",
                    });
                }
                if v.data().iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::Usage("diagonal variances must be positive".into()));
                }
            }
            Covariances::Full(list) => {
                if list.len() != m {
                    return Err(Error::Dimension { expected: m, got: list.len(), what: "covariances" });
                }
            }
        }
        Ok(GaussianMixture { weights, means, covs })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Mat {
        &self.means
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covs
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        match self.covs {
            Covariances::Diagonal(_) => CovarianceKind::Diagonal,
            Covariances::Full(_) => CovarianceKind::Full,
        }
    }

    pub fn diag_variances(&self) -> Option<&Mat> {
        match &self.covs {
            Covariances::Diagonal(v) => Some(v),
            Covariances::Full(_) => None,
        }
    }

    /// Returns a copy with the means replaced; weights and covariances are
    /// shared bit-exactly and component order is preserved.
    pub fn with_means(&self, means: Mat) -> Result<Self> {
        if means.rows() != self.m() || means.cols() != self.d() {
            return Err(Error::Dimension { expected: self.m() * self.d(), got: means.rows() * means.cols(), what: "means" });
        }
        if means.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Usage("means must be finite".into()));
        }
        Ok(GaussianMixture { weights: self.weights.clone(), means, covs: self.covs.clone() })
    }

    fn component_log_density(&self, m: usize, y: &[f64]) -> f64 {
        let d = self.d();
        let mu = self.means.row(m);
        match &self.covs {
            Covariances::Diagonal(v) => {
                let mut quad = 0.0;
                let mut logdet = 0.0;
                for j in 0..d {
                    let var = v[(m, j)];
                    let z = y[j] - mu[j];
                    quad += z * z / var;
                    logdet += libm::log(var);
                }
                -0.5 * (d as f64 * LN_2PI + logdet + quad)
            }
            Covariances::Full(list) => {
                let fc = &list[m];
                // forward solve L z = (y - mu)
                let mut z: Vec<f64> = (0..d).map(|j| y[j] - mu[j]).collect();
                for i in 0..d {
                    let mut s = z[i];
                    for k in 0..i {
                        s -= fc.chol[(i, k)] * z[k];
                    }
                    z[i] = s / fc.chol[(i, i)];
                }
                let quad: f64 = z.iter().map(|x| x * x).sum();
                -0.5 * (d as f64 * LN_2PI + fc.logdet + quad)
            }
        }
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.d() {
            return Err(Error::Dimension { expected: self.d(), got: y.len(), what: "observation" });
        }
        Ok(())
    }

    /// log p(y) = log sum_m pi_m N(y; mu_m, Sigma_m), via log-sum-exp.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        let logs: Vec<f64> = (0..self.m())
            .map(|m| libm::log(self.weights[m].max(1e-300)) + self.component_log_density(m, y))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|&l| libm::exp(l - max)).sum();
        Ok(max + libm::log(sum))
    }

    /// p(m | y) for all m; sums to one.
    pub fn posteriors(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let mut logs: Vec<f64> = (0..self.m())
            .map(|m| libm::log(self.weights[m].max(1e-300)) + self.component_log_density(m, y))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logs.iter_mut() {
            *l = libm::exp(*l - max);
            sum += *l;
        }
        for l in logs.iter_mut() {
            *l /= sum;
        }
        Ok(logs)
    }

    /// Total log-likelihood of a data matrix (rows are observations).
    pub fn total_log_likelihood(&self, data: &Mat) -> Result<f64> {
        let mut total = 0.0;
        for t in 0..data.rows() {
            total += self.log_density(data.row(t))?;
        }
        Ok(total)
    }
}

/// EM training options.
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub iterations: usize,
    pub covariance_kind: CovarianceKind,
    pub seed: u64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_frac: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            iterations: 20,
            covariance_kind: CovarianceKind::Diagonal,
            seed: 0,
            variance_floor_frac: 1e-4,
        }
    }
}

fn global_mean_var(data: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (data.rows(), data.cols());
    let mut mean = vec![0.0; d];
    for t in 0..n {
        for j in 0..d {
            mean[j] += data[(t, j)];
        }
    }
    for v in mean.iter_mut() {
        *v /= n as f64;
    }
    let mut var = vec![0.0; d];
    for t in 0..n {
        for j in 0..d {
            let z = data[(t, j)] - mean[j];
            var[j] += z * z;
        }
    }
    for v in var.iter_mut() {
        *v = (*v / n as f64).max(1e-12);
    }
    (mean, var)
}

/// k-means++ style seeding: first center uniform, then each next center
/// drawn with probability proportional to squared distance from the
/// nearest chosen center.
fn kmeanspp_seed(data: &Mat, m: usize, rng: &mut ChaCha8Rng) -> Mat {
    let (n, d) = (data.rows(), data.cols());
    let mut centers = Mat::zeros(m, d);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(data.row(first));
    let mut dist2: Vec<f64> = (0..n)
        .map(|t| {
            data.row(t)
                .iter()
                .zip(centers.row(0))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    for k in 1..m {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (t, &w) in dist2.iter().enumerate() {
                if target < w {
                    idx = t;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(k).copy_from_slice(data.row(pick));
        for t in 0..n {
            let dd: f64 = data
                .row(t)
                .iter()
                .zip(centers.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dd < dist2[t] {
                dist2[t] = dd;
            }
        }
    }
    centers
}

struct EmAccum {
    gamma: Vec<f64>,
    sum: Mat,
    sum_sq: Mat,          // diagonal second moments
    sum_outer: Vec<Mat>,  // full second moments (only when needed)
}

fn em_iterate(
    mut weights: Vec<f64>,
    mut means: Mat,
    mut covs: Covariances,
    data: &Mat,
    iters: usize,
    global_var: &[f64],
    floor_frac: f64,
) -> Result<(GaussianMixture, Vec<f64>)> {
    let (n, d) = (data.rows(), data.cols());
    let m = weights.len();
    let full = matches!(covs, Covariances::Full(_));
    let floor: Vec<f64> = global_var.iter().map(|&v| v * floor_frac).collect();
    let mut trace = Vec::with_capacity(iters);
    for _it in 0..iters {
        let model = GaussianMixture::new(weights.clone(), means.clone(), covs.clone())?;
        let mut acc = EmAccum {
            gamma: vec![0.0; m],
            sum: Mat::zeros(m, d),
            sum_sq: Mat::zeros(m, d),
            sum_outer: if full { vec![Mat::zeros(d, d); m] } else { Vec::new() },
        };
        let mut ll = 0.0;
        for t in 0..n {
            let y = data.row(t);
            ll += model.log_density(y)?;
            let post = model.posteriors(y)?;
            for (k, &g) in post.iter().enumerate() {
                if g < 1e-14 {
                    continue;
                }
                acc.gamma[k] += g;
                let srow = acc.sum.row_mut(k);
                for j in 0..d {
                    srow[j] += g * y[j];
                }
                if full {
                    let outer = &mut acc.sum_outer[k];
                    for i in 0..d {
                        let gyi = g * y[i];
                        for j in i..d {
                            outer[(i, j)] += gyi * y[j];
                        }
                    }
                } else {
                    let qrow = acc.sum_sq.row_mut(k);
                    for j in 0..d {
                        qrow[j] += g * y[j] * y[j];
                    }
                }
            }
        }
        trace.push(ll);
        // M-step
        let mut starved: Vec<usize> = Vec::new();
        for k in 0..m {
            if acc.gamma[k] < 1e-8 {
                starved.push(k);
                continue;
            }
            let g = acc.gamma[k];
            weights[k] = g / n as f64;
            for j in 0..d {
                means[(k, j)] = acc.sum[(k, j)] / g;
            }
            match &mut covs {
                Covariances::Diagonal(v) => {
                    for j in 0..d {
                        let var = acc.sum_sq[(k, j)] / g - means[(k, j)] * means[(k, j)];
                        v[(k, j)] = var.max(floor[j]);
                    }
                }
                Covariances::Full(list) => {
                    let mut cov = Mat::zeros(d, d);
                    for i in 0..d {
                        for j in i..d {
                            let c = acc.sum_outer[k][(i, j)] / g - means[(k, i)] * means[(k, j)];
                            cov[(i, j)] = c;
                            cov[(j, i)] = c;
                        }
                    }
                    for j in 0..d {
                        if cov[(j, j)] < floor[j] {
                            cov[(j, j)] = floor[j];
                        }
                    }
                    // ridge until positive definite
                    let mut ridge = 0.0;
                    let base: f64 = floor.iter().sum::<f64>() / d as f64;
                    loop {
                        let mut try_cov = cov.clone();
                        if ridge > 0.0 {
                            for j in 0..d {
                                try_cov[(j, j)] += ridge;
                            }
                        }
                        match FullCov::new(try_cov) {
                            Ok(fc) => {
                                list[k] = fc;
                                break;
                            }
                            Err(_) => {
                                ridge = if ridge == 0.0 { base } else { ridge * 10.0 };
                                if ridge > 1e6 {
                                    return Err(Error::Numerical(format!(
                                        "covariance of mixture {k} cannot be made positive definite"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        // re-seed starved mixtures at the lowest-likelihood point, keeping
        // component order intact
        if !starved.is_empty() {
            let model = GaussianMixture::new(
                {
                    let s: f64 = weights.iter().sum();
                    weights.iter().map(|w| w / s).collect()
                },
                means.clone(),
                covs.clone(),
            )?;
            let mut worst = (0usize, f64::INFINITY);
            for t in 0..n {
                let l = model.log_density(data.row(t))?;
                if l < worst.1 {
                    worst = (t, l);
                }
            }
            for &k in &starved {
                log::warn!("re-seeding empty mixture {k}");
                means.row_mut(k).copy_from_slice(data.row(worst.0));
                weights[k] = 1.0 / n as f64;
                match &mut covs {
                    Covariances::Diagonal(v) => {
                        for j in 0..d {
                            v[(k, j)] = global_var[j];
                        }
                    }
                    Covariances::Full(list) => {
                        let mut cov = Mat::zeros(d, d);
                        for j in 0..d {
                            cov[(j, j)] = global_var[j];
                        }
                        list[k] = FullCov::new(cov)?;
                    }
                }
            }
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
    }
    Ok((GaussianMixture::new(weights, means, covs)?, trace))
}

/// Fits an M-mixture GMM with EM; k-means++ seeding on means, global
/// variance as the initial covariance, variance flooring throughout.
/// Returns the model and the per-iteration log-likelihood trace.
pub fn em_fit(data: &Mat, m: usize, opts: &EmOptions) -> Result<(GaussianMixture, Vec<f64>)> {
    let n = data.rows();
    if n < m {
        return Err(Error::Training(format!("{n} frames cannot support {m} mixtures")));
    }
    if data.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::Usage("training data must be finite".into()));
    }
    let d = data.cols();
    let (_, global_var) = global_mean_var(data);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let means = kmeanspp_seed(data, m, &mut rng);
    let weights = vec![1.0 / m as f64; m];
    let covs = match opts.covariance_kind {
        CovarianceKind::Diagonal => {
            Covariances::Diagonal(Mat::from_fn(m, d, |_, j| global_var[j]))
        }
        CovarianceKind::Full => {
            let mut cov = Mat::zeros(d, d);
            for j in 0..d {
                cov[(j, j)] = global_var[j];
            }
            let fc = FullCov::new(cov)?;
            Covariances::Full(vec![fc; m])
        }
    };
    em_iterate(weights, means, covs, data, opts.iterations.max(1), &global_var, opts.variance_floor_frac)
}

/// EM refinement from an existing model. Component order is preserved so
/// mixture correspondences survive; `iters == 0` returns the model
/// unchanged.
pub fn em_refine(
    gmm: &GaussianMixture,
    data: &Mat,
    iters: usize,
    variance_floor_frac: f64,
) -> Result<(GaussianMixture, Vec<f64>)> {
    if data.cols() != gmm.d() {
        return Err(Error::Dimension { expected: gmm.d(), got: data.cols(), what: "refine data" });
    }
    if iters == 0 {
        return Ok((gmm.clone(), Vec::new()));
    }
    let (_, global_var) = global_mean_var(data);
    em_iterate(
        gmm.weights.clone(),
        gmm.means.clone(),
        gmm.covs.clone(),
        data,
        iters,
        &global_var,
        variance_floor_frac,
    )
}

/// Per-mixture zeroth/first/second-moment accumulators, mergeable by
/// addition. When a paired clean stream is supplied, its statistics are
/// accumulated under the noisy-frame posteriors (the shared-alignment
/// assumption), including the cross moments.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub gamma: Vec<f64>,
    pub sum_y: Mat,
    pub sum_yy: Vec<Mat>,
    pub paired: Option<PairedStats>,
}

#[derive(Debug, Clone)]
pub struct PairedStats {
    pub sum_x: Mat,
    pub sum_xx: Vec<Mat>,
    pub sum_xy: Vec<Mat>,
}

impl SufficientStats {
    pub fn empty(m: usize, d: usize, paired: bool) -> Self {
        SufficientStats {
            gamma: vec![0.0; m],
            sum_y: Mat::zeros(m, d),
            sum_yy: vec![Mat::zeros(d, d); m],
            paired: paired.then(|| PairedStats {
                sum_x: Mat::zeros(m, d),
                sum_xx: vec![Mat::zeros(d, d); m],
                sum_xy: vec![Mat::zeros(d, d); m],
            }),
        }
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    pub fn d(&self) -> usize {
        self.sum_y.cols()
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += *b;
        }
        self.sum_y.add_assign(&other.sum_y);
        for (a, b) in self.sum_yy.iter_mut().zip(&other.sum_yy) {
            a.add_assign(b);
        }
        match (&mut self.paired, &other.paired) {
            (Some(p), Some(q)) => {
                p.sum_x.add_assign(&q.sum_x);
                for (a, b) in p.sum_xx.iter_mut().zip(&q.sum_xx) {
                    a.add_assign(b);
                }
                for (a, b) in p.sum_xy.iter_mut().zip(&q.sum_xy) {
                    a.add_assign(b);
                }
            }
            (None, None) => {}
            _ => panic!("cannot merge paired with unpaired statistics"),
        }
    }

    pub fn mean_y(&self, m: usize) -> Vec<f64> {
        let g = self.gamma[m].max(1e-300);
        self.sum_y.row(m).iter().map(|&s| s / g).collect()
    }

    pub fn mean_x(&self, m: usize) -> Vec<f64> {
        let p = self.paired.as_ref().expect("no paired statistics");
        let g = self.gamma[m].max(1e-300);
        p.sum_x.row(m).iter().map(|&s| s / g).collect()
    }

    /// Central covariance of the noisy stream for mixture m.
    pub fn cov_y(&self, m: usize) -> Mat {
        central_cov(&self.sum_yy[m], &self.mean_y(m), &self.mean_y(m), self.gamma[m])
    }

    pub fn cov_x(&self, m: usize) -> Mat {
        let p = self.paired.as_ref().expect("no paired statistics");
        central_cov(&p.sum_xx[m], &self.mean_x(m), &self.mean_x(m), self.gamma[m])
    }

    /// Central cross-covariance Sigma_xy for mixture m.
    pub fn cov_xy(&self, m: usize) -> Mat {
        let p = self.paired.as_ref().expect("no paired statistics");
        central_cov(&p.sum_xy[m], &self.mean_x(m), &self.mean_y(m), self.gamma[m])
    }
}

fn central_cov(second: &Mat, mean_a: &[f64], mean_b: &[f64], gamma: f64) -> Mat {
    let g = gamma.max(1e-300);
    Mat::from_fn(second.rows(), second.cols(), |i, j| second[(i, j)] / g - mean_a[i] * mean_b[j])
}

/// Accumulates gamma, gamma*y, gamma*yy^T and, when a paired stream is
/// given, gamma*x, gamma*xx^T and gamma*xy^T, all using p(m | y_n).
pub fn accumulate_stats(
    gmm: &GaussianMixture,
    ys: &Mat,
    xs: Option<&Mat>,
) -> Result<SufficientStats> {
    if ys.cols() != gmm.d() {
        return Err(Error::Dimension { expected: gmm.d(), got: ys.cols(), what: "noisy stream" });
    }
    if let Some(x) = xs {
        if x.rows() != ys.rows() {
            return Err(Error::Dimension { expected: ys.rows(), got: x.rows(), what: "paired frames" });
        }
        if x.cols() != ys.cols() {
            return Err(Error::Dimension { expected: ys.cols(), got: x.cols(), what: "paired dim" });
        }
    }
    let d = gmm.d();
    let mut stats = SufficientStats::empty(gmm.m(), d, xs.is_some());
    for t in 0..ys.rows() {
        let y = ys.row(t);
        let post = gmm.posteriors(y)?;
        for (k, &g) in post.iter().enumerate() {
            if g < 1e-14 {
                continue;
            }
            stats.gamma[k] += g;
            for j in 0..d {
                stats.sum_y[(k, j)] += g * y[j];
            }
            let outer = &mut stats.sum_yy[k];
            for i in 0..d {
                let gyi = g * y[i];
                for j in 0..d {
                    outer[(i, j)] += gyi * y[j];
                }
            }
            if let (Some(p), Some(xmat)) = (&mut stats.paired, xs) {
                let x = xmat.row(t);
                for j in 0..d {
                    p.sum_x[(k, j)] += g * x[j];
                }
                for i in 0..d {
                    let gxi = g * x[i];
                    for j in 0..d {
                        p.sum_xx[k][(i, j)] += gxi * x[j];
                        p.sum_xy[k][(i, j)] += gxi * y[j];
                    }
                }
            }
        }
    }
    Ok(stats)
}
