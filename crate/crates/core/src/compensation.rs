//! The SPLICE family of piecewise-linear feature compensations: stereo
//! SPLICE, M-SPLICE (full and diagonal), the non-stereo extension built
//! on MLLR mean adaptation, run-time bias adaptation, and the mixture
//! correspondence diagnostic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::gmm::{
    accumulate_stats, em_fit, em_refine, Covariances, EmOptions, GaussianMixture,
    SufficientStats,
};
use crate::mat::{sym_pow, Mat};
use crate::mllr::{apply_mllr, estimate_global_mllr};

/// Relative eigenvalue floor used for the symmetric covariance roots.
const EIG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpliceKind {
    Splice,
    Msplice,
    MspliceDiag,
    NonStereo,
}

/// Per-mixture linear parts: either full D x D matrices or per-dimension
/// scale vectors stored as rows of an M x D matrix.
#[derive(Debug, Clone)]
pub enum Transforms {
    Full(Vec<Mat>),
    Diagonal(Mat),
}

/// A trained compensation model. Immutable; run-time adaptation returns
/// a new model.
#[derive(Debug, Clone)]
pub struct SpliceModel {
    kind: SpliceKind,
    gmm: GaussianMixture,
    transforms: Transforms,
    biases: Mat,
    clean_means: Mat,
}

impl SpliceModel {
    pub fn new(
        kind: SpliceKind,
        gmm: GaussianMixture,
        transforms: Transforms,
        biases: Mat,
        clean_means: Mat,
    ) -> Result<Self> {
        let (m, d) = (gmm.m(), gmm.d());
        let ok = match &transforms {
            Transforms::Full(list) => {
                list.len() == m && list.iter().all(|a| a.rows() == d && a.cols() == d)
            }
            Transforms::Diagonal(c) => c.rows() == m && c.cols() == d,
        };
        if !ok {
            return Err(Error::Dimension { expected: m * d, got: 0, what: "transforms" });
        }
        if biases.rows() != m || biases.cols() != d {
            return Err(Error::Dimension { expected: m * d, got: biases.rows() * biases.cols(), what: "biases" });
        }
        if clean_means.rows() != m || clean_means.cols() != d {
            return Err(Error::Dimension { expected: m * d, got: clean_means.rows() * clean_means.cols(), what: "clean means" });
        }
        let finite = biases.data().iter().chain(clean_means.data()).all(|x| x.is_finite())
            && match &transforms {
                Transforms::Full(list) => list.iter().all(|a| a.data().iter().all(|x| x.is_finite())),
                Transforms::Diagonal(c) => c.data().iter().all(|x| x.is_finite()),
            };
        if !finite {
            return Err(Error::Numerical("non-finite model parameters".into()));
        }
        Ok(SpliceModel { kind, gmm, transforms, biases, clean_means })
    }

    pub fn kind(&self) -> SpliceKind {
        self.kind
    }

    pub fn gmm(&self) -> &GaussianMixture {
        &self.gmm
    }

    pub fn transforms(&self) -> &Transforms {
        &self.transforms
    }

    pub fn biases(&self) -> &Mat {
        &self.biases
    }

    pub fn clean_means(&self) -> &Mat {
        &self.clean_means
    }

    pub fn m(&self) -> usize {
        self.gmm.m()
    }

    pub fn d(&self) -> usize {
        self.gmm.d()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.transforms, Transforms::Diagonal(_))
    }

    /// C_k y + d_k for a single mixture.
    pub fn apply_mixture(&self, k: usize, y: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = self.biases.row(k).to_vec();
        match &self.transforms {
            Transforms::Full(list) => {
                let a = &list[k];
                for i in 0..d {
                    let row = a.row(i);
                    let mut s = 0.0;
                    for j in 0..d {
                        s += row[j] * y[j];
                    }
                    out[i] += s;
                }
            }
            Transforms::Diagonal(c) => {
                let row = c.row(k);
                for i in 0..d {
                    out[i] += row[i] * y[i];
                }
            }
        }
        out
    }
}

/// Frame-aligned clean/noisy feature pair streams.
#[derive(Debug, Clone)]
pub struct StereoBatch {
    clean: FeatureSequence,
    noisy: FeatureSequence,
}

impl StereoBatch {
    pub fn new(clean: FeatureSequence, noisy: FeatureSequence) -> Result<Self> {
        if clean.frames.rows() != noisy.frames.rows() {
            return Err(Error::Dimension {
                expected: clean.frames.rows(),
                got: noisy.frames.rows(),
                what: "stereo frame count",
            });
        }
        if clean.frames.cols() != noisy.frames.cols() {
            return Err(Error::Dimension {
                expected: clean.frames.cols(),
                got: noisy.frames.cols(),
                what: "stereo feature dim",
            });
        }
        Ok(StereoBatch { clean, noisy })
    }

    pub fn from_frames(clean: Mat, noisy: Mat) -> Result<Self> {
        use crate::frontend::FeatureKind;
        StereoBatch::new(
            FeatureSequence::new(clean, FeatureKind::Mfcc, 10.0),
            FeatureSequence::new(noisy, FeatureKind::Mfcc, 10.0),
        )
    }

    pub fn clean_frames(&self) -> &Mat {
        &self.clean.frames
    }

    pub fn noisy_frames(&self) -> &Mat {
        &self.noisy.frames
    }

    pub fn len(&self) -> usize {
        self.noisy.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Soft mixture co-assignment counts V_ij = sum_n p(i|x_n) p(j|y_n).
#[derive(Debug, Clone)]
pub struct CorrespondenceMatrix {
    pub counts: Mat,
}

impl CorrespondenceMatrix {
    pub fn total(&self) -> f64 {
        self.counts.data().iter().sum()
    }

    /// Fraction of the total mass on the diagonal.
    pub fn diagonal_fraction(&self) -> f64 {
        let diag: f64 = (0..self.counts.rows()).map(|i| self.counts[(i, i)]).sum();
        diag / self.total().max(1e-300)
    }
}

fn check_batch_against_gmm(batch: &StereoBatch, gmm: &GaussianMixture) -> Result<()> {
    if batch.noisy_frames().cols() != gmm.d() {
        return Err(Error::Dimension {
            expected: gmm.d(),
            got: batch.noisy_frames().cols(),
            what: "batch feature dim",
        });
    }
    if batch.is_empty() {
        return Err(Error::Training("empty stereo batch".into()));
    }
    Ok(())
}

fn clean_means_from_stats(stats: &SufficientStats) -> Mat {
    Mat::from_fn(stats.m(), stats.d(), |m, j| stats.mean_x(m)[j])
}

/// Per-mixture weighted least squares on the augmented system: the rows
/// of W_m solve W_m [sum g y'y'^T] = [sum g x y'^T] with y' = [1; y].
/// Returns (A_m list, bias matrix).
pub fn splice_from_raw_moments(stats: &SufficientStats) -> Result<(Vec<Mat>, Mat)> {
    let paired = stats
        .paired
        .as_ref()
        .ok_or_else(|| Error::Training("SPLICE needs paired statistics".into()))?;
    let (m, d) = (stats.m(), stats.d());
    let mut transforms = Vec::with_capacity(m);
    let mut biases = Mat::zeros(m, d);
    for k in 0..m {
        // Z = [[gamma, (sum g y)^T], [sum g y, sum g y y^T]]
        let mut z = Mat::zeros(d + 1, d + 1);
        z[(0, 0)] = stats.gamma[k];
        for j in 0..d {
            z[(0, j + 1)] = stats.sum_y[(k, j)];
            z[(j + 1, 0)] = stats.sum_y[(k, j)];
        }
        for i in 0..d {
            for j in 0..d {
                z[(i + 1, j + 1)] = stats.sum_yy[k][(i, j)];
            }
        }
        // B = [sum g x | sum g x y^T]
        let mut b = Mat::zeros(d, d + 1);
        for i in 0..d {
            b[(i, 0)] = paired.sum_x[(k, i)];
            for j in 0..d {
                b[(i, j + 1)] = paired.sum_xy[k][(i, j)];
            }
        }
        let w = match z.solve_right(&b) {
            Ok(w) => w,
            Err(_) => {
                log::warn!("singular SPLICE accumulator for mixture {k}, applying ridge");
                let ridge = 1e-8 * z.trace();
                let mut reg = z.clone();
                for i in 0..=d {
                    reg[(i, i)] += ridge;
                }
                reg.solve_right(&b)?
            }
        };
        let a = Mat::from_fn(d, d, |i, j| w[(i, j + 1)]);
        for i in 0..d {
            biases[(k, i)] = w[(i, 0)];
        }
        transforms.push(a);
    }
    Ok((transforms, biases))
}

/// The equivalent central-moment assembly: A_m = Sigma_xy Sigma_y^-1 and
/// b_m = mu_x - A_m mu_y. Agrees with `splice_from_raw_moments` up to
/// solver precision; kept separate so the equivalence stays testable.
pub fn splice_from_central_moments(stats: &SufficientStats) -> Result<(Vec<Mat>, Mat)> {
    if stats.paired.is_none() {
        return Err(Error::Training("SPLICE needs paired statistics".into()));
    }
    let (m, d) = (stats.m(), stats.d());
    let mut transforms = Vec::with_capacity(m);
    let mut biases = Mat::zeros(m, d);
    for k in 0..m {
        let mut cov_y = stats.cov_y(k);
        cov_y.symmetrize();
        let cov_xy = stats.cov_xy(k);
        let a = match cov_y.solve_right(&cov_xy) {
            Ok(a) => a,
            Err(_) => {
                log::warn!("singular noisy covariance for mixture {k}, applying ridge");
                let ridge = 1e-8 * cov_y.trace();
                let mut reg = cov_y.clone();
                for i in 0..d {
                    reg[(i, i)] += ridge;
                }
                reg.solve_right(&cov_xy)?
            }
        };
        let mu_x = stats.mean_x(k);
        let amu = a.mul_vec(&stats.mean_y(k));
        for i in 0..d {
            biases[(k, i)] = mu_x[i] - amu[i];
        }
        transforms.push(a);
    }
    Ok((transforms, biases))
}

/// Trains stereo SPLICE: per-mixture MMSE affine transforms under the
/// noisy-posterior weighting.
pub fn train_splice(batch: &StereoBatch, gmm_y: &GaussianMixture) -> Result<SpliceModel> {
    check_batch_against_gmm(batch, gmm_y)?;
    let stats = accumulate_stats(gmm_y, batch.noisy_frames(), Some(batch.clean_frames()))?;
    let (transforms, biases) = splice_from_raw_moments(&stats)?;
    SpliceModel::new(
        SpliceKind::Splice,
        gmm_y.clone(),
        Transforms::Full(transforms),
        biases,
        clean_means_from_stats(&stats),
    )
}

fn whiten_pair(cov_x: &Mat, cov_y: &Mat, k: usize) -> Result<Mat> {
    let root_x = sym_pow(cov_x, 0.5, EIG_FLOOR)
        .map_err(|e| Error::Estimation(format!("clean covariance of mixture {k}: {e}")))?;
    let inv_root_y = sym_pow(cov_y, -0.5, EIG_FLOOR)
        .map_err(|e| Error::Estimation(format!("noisy covariance of mixture {k}: {e}")))?;
    Ok(root_x.matmul(&inv_root_y))
}

/// Trains M-SPLICE: whitening transforms C_m = Sigma_x^{1/2} Sigma_y^{-1/2}
/// built from symmetric PSD roots, biases d_m = mu_x - C_m mu_y. Clean
/// statistics use the noisy-frame alignments.
pub fn train_msplice(batch: &StereoBatch, gmm_y: &GaussianMixture) -> Result<SpliceModel> {
    check_batch_against_gmm(batch, gmm_y)?;
    let stats = accumulate_stats(gmm_y, batch.noisy_frames(), Some(batch.clean_frames()))?;
    let (m, d) = (stats.m(), stats.d());
    let mut transforms = Vec::with_capacity(m);
    let mut biases = Mat::zeros(m, d);
    for k in 0..m {
        let mut cov_x = stats.cov_x(k);
        cov_x.symmetrize();
        let mut cov_y = stats.cov_y(k);
        cov_y.symmetrize();
        let c = whiten_pair(&cov_x, &cov_y, k)?;
        let mu_x = stats.mean_x(k);
        let cmu = c.mul_vec(&stats.mean_y(k));
        for i in 0..d {
            biases[(k, i)] = mu_x[i] - cmu[i];
        }
        transforms.push(c);
    }
    SpliceModel::new(
        SpliceKind::Msplice,
        gmm_y.clone(),
        Transforms::Full(transforms),
        biases,
        clean_means_from_stats(&stats),
    )
}

/// Diagonal M-SPLICE: per-dimension scales sigma_x / sigma_y.
pub fn train_msplice_diag(batch: &StereoBatch, gmm_y: &GaussianMixture) -> Result<SpliceModel> {
    check_batch_against_gmm(batch, gmm_y)?;
    let stats = accumulate_stats(gmm_y, batch.noisy_frames(), Some(batch.clean_frames()))?;
    let (m, d) = (stats.m(), stats.d());
    // variance floor in the spirit of the GMM floor: a fraction of the
    // global noisy variance per dimension
    let noisy = batch.noisy_frames();
    let n = noisy.rows() as f64;
    let mut gmean = vec![0.0; d];
    for t in 0..noisy.rows() {
        for j in 0..d {
            gmean[j] += noisy[(t, j)];
        }
    }
    for v in gmean.iter_mut() {
        *v /= n;
    }
    let mut gvar = vec![0.0; d];
    for t in 0..noisy.rows() {
        for j in 0..d {
            let z = noisy[(t, j)] - gmean[j];
            gvar[j] += z * z;
        }
    }
    let floor: Vec<f64> = gvar.iter().map(|&v| (v / n).max(1e-12) * 1e-4).collect();
    let mut scales = Mat::zeros(m, d);
    let mut biases = Mat::zeros(m, d);
    for k in 0..m {
        let cov_x = stats.cov_x(k);
        let cov_y = stats.cov_y(k);
        let mu_x = stats.mean_x(k);
        let mu_y = stats.mean_y(k);
        for j in 0..d {
            let vx = cov_x[(j, j)].max(0.0);
            let vy = cov_y[(j, j)].max(floor[j]);
            let c = libm::sqrt(vx / vy);
            scales[(k, j)] = c;
            biases[(k, j)] = mu_x[j] - c * mu_y[j];
        }
    }
    SpliceModel::new(
        SpliceKind::MspliceDiag,
        gmm_y.clone(),
        Transforms::Diagonal(scales),
        biases,
        clean_means_from_stats(&stats),
    )
}

/// Posterior-weighted enhancement: x_hat = sum_m p(m|y)(C_m y + d_m).
pub fn enhance(y: &[f64], model: &SpliceModel) -> Result<Vec<f64>> {
    let post = model.gmm().posteriors(y)?;
    let d = model.d();
    let mut out = vec![0.0; d];
    for (k, &p) in post.iter().enumerate() {
        if p < 1e-14 {
            continue;
        }
        let xk = model.apply_mixture(k, y);
        for i in 0..d {
            out[i] += p * xk[i];
        }
    }
    Ok(out)
}

/// Applies `enhance` to every row of a frame matrix.
pub fn enhance_frames(frames: &Mat, model: &SpliceModel) -> Result<Mat> {
    let mut out = Mat::zeros(frames.rows(), frames.cols());
    for t in 0..frames.rows() {
        let x = enhance(frames.row(t), model)?;
        out.row_mut(t).copy_from_slice(&x);
    }
    Ok(out)
}

/// Passes clean features through the compensation map so training and
/// test features see the same channel.
pub fn pseudo_clean(clean: &FeatureSequence, model: &SpliceModel) -> Result<FeatureSequence> {
    Ok(FeatureSequence::new(
        enhance_frames(&clean.frames, model)?,
        clean.kind,
        clean.frame_period_ms,
    ))
}

/// V_ij = sum_n p(i|x_n) p(j|y_n) over the aligned pairs.
pub fn correspondence_matrix(
    gmm_x: &GaussianMixture,
    gmm_y: &GaussianMixture,
    batch: &StereoBatch,
) -> Result<CorrespondenceMatrix> {
    if gmm_x.m() != gmm_y.m() {
        return Err(Error::Dimension { expected: gmm_x.m(), got: gmm_y.m(), what: "mixture counts" });
    }
    check_batch_against_gmm(batch, gmm_y)?;
    if batch.clean_frames().cols() != gmm_x.d() {
        return Err(Error::Dimension {
            expected: gmm_x.d(),
            got: batch.clean_frames().cols(),
            what: "clean feature dim",
        });
    }
    let m = gmm_x.m();
    let mut counts = Mat::zeros(m, m);
    for t in 0..batch.len() {
        let px = gmm_x.posteriors(batch.clean_frames().row(t))?;
        let py = gmm_y.posteriors(batch.noisy_frames().row(t))?;
        for i in 0..m {
            if px[i] < 1e-14 {
                continue;
            }
            for j in 0..m {
                counts[(i, j)] += px[i] * py[j];
            }
        }
    }
    Ok(CorrespondenceMatrix { counts })
}

#[derive(Debug, Clone)]
pub struct NonStereoOptions {
    pub mixtures: usize,
    pub em: EmOptions,
    pub refine_iterations: usize,
}

impl Default for NonStereoOptions {
    fn default() -> Self {
        NonStereoOptions { mixtures: 128, em: EmOptions::default(), refine_iterations: 3 }
    }
}

/// The trained non-stereo model together with the intermediate clean GMM
/// (useful for the correspondence diagnostic).
#[derive(Debug, Clone)]
pub struct NonStereoOutcome {
    pub model: SpliceModel,
    pub clean_gmm: GaussianMixture,
}

/// Non-stereo training: fit a noisy GMM, adapt its means to the clean
/// set with global MLLR, refine with a few order-preserving EM passes on
/// the clean set, then build whitening transforms between corresponding
/// mixtures of the two models.
pub fn train_nonstereo(clean: &Mat, noisy: &Mat, opts: &NonStereoOptions) -> Result<NonStereoOutcome> {
    if clean.cols() != noisy.cols() {
        return Err(Error::Dimension { expected: noisy.cols(), got: clean.cols(), what: "clean feature dim" });
    }
    let (gmm_y, _) = em_fit(noisy, opts.mixtures, &opts.em)?;
    let t = estimate_global_mllr(&gmm_y, clean)?;
    let adapted = apply_mllr(&gmm_y, &t)?;
    let (gmm_x, _) = em_refine(&adapted, clean, opts.refine_iterations, opts.em.variance_floor_frac)?;
    let (m, d) = (gmm_y.m(), gmm_y.d());
    let mut biases = Mat::zeros(m, d);
    let transforms = match (gmm_y.covariances(), gmm_x.covariances()) {
        (Covariances::Diagonal(vy), Covariances::Diagonal(vx)) => {
            let mut scales = Mat::zeros(m, d);
            for k in 0..m {
                for j in 0..d {
                    let c = libm::sqrt(vx[(k, j)] / vy[(k, j)]);
                    scales[(k, j)] = c;
                    biases[(k, j)] = gmm_x.means()[(k, j)] - c * gmm_y.means()[(k, j)];
                }
            }
            Transforms::Diagonal(scales)
        }
        (Covariances::Full(ly), Covariances::Full(lx)) => {
            let mut list = Vec::with_capacity(m);
            for k in 0..m {
                let c = whiten_pair(&lx[k].matrix, &ly[k].matrix, k)?;
                let cmu = c.mul_vec(gmm_y.means().row(k));
                for j in 0..d {
                    biases[(k, j)] = gmm_x.means()[(k, j)] - cmu[j];
                }
                list.push(c);
            }
            Transforms::Full(list)
        }
        _ => return Err(Error::Training("mismatched covariance kinds".into())),
    };
    let model = SpliceModel::new(
        SpliceKind::NonStereo,
        gmm_y,
        transforms,
        biases,
        gmm_x.means().clone(),
    )?;
    Ok(NonStereoOutcome { model, clean_gmm: gmm_x })
}

/// Run-time adaptation: re-estimate the noisy GMM means on test data
/// with a global MLLR transform and recompute only the biases as
/// d_m = mu_x,m - C_m mu_y,m^(a). Transforms are untouched; posteriors
/// at enhancement time come from the adapted GMM.
pub fn runtime_adapt(model: &SpliceModel, test_noisy: &Mat) -> Result<SpliceModel> {
    runtime_adapt_with(model, test_noisy, true)
}

/// As `runtime_adapt`, with an explicit choice of which GMM serves the
/// enhancement-time posteriors: the adapted one (default) or the
/// original noisy GMM (the literal step order, alignments first).
pub fn runtime_adapt_with(
    model: &SpliceModel,
    test_noisy: &Mat,
    use_adapted_posteriors: bool,
) -> Result<SpliceModel> {
    let d = model.d();
    if test_noisy.cols() != d {
        return Err(Error::Dimension { expected: d, got: test_noisy.cols(), what: "adaptation data" });
    }
    if test_noisy.rows() < d + 1 {
        log::warn!(
            "only {} adaptation frames for dimension {d}, skipping run-time adaptation",
            test_noisy.rows()
        );
        return Ok(model.clone());
    }
    let t = estimate_global_mllr(model.gmm(), test_noisy)?;
    let adapted = apply_mllr(model.gmm(), &t)?;
    if use_adapted_posteriors {
        rebias_with_gmm(model, adapted)
    } else {
        let rebias = rebias_with_gmm(model, adapted)?;
        SpliceModel::new(
            model.kind(),
            model.gmm().clone(),
            rebias.transforms().clone(),
            rebias.biases().clone(),
            model.clean_means().clone(),
        )
    }
}

/// Rebuilds the biases of a model against a replacement noisy GMM with
/// identical mixture order; the linear transforms are reused bit-exactly.
pub fn rebias_with_gmm(model: &SpliceModel, gmm: GaussianMixture) -> Result<SpliceModel> {
    if gmm.m() != model.m() || gmm.d() != model.d() {
        return Err(Error::Dimension { expected: model.m() * model.d(), got: gmm.m() * gmm.d(), what: "replacement gmm" });
    }
    let (m, d) = (model.m(), model.d());
    let mut biases = Mat::zeros(m, d);
    for k in 0..m {
        let mu_y = gmm.means().row(k);
        let cmu = match model.transforms() {
            Transforms::Full(list) => list[k].mul_vec(mu_y),
            Transforms::Diagonal(c) => (0..d).map(|j| c[(k, j)] * mu_y[j]).collect(),
        };
        for j in 0..d {
            biases[(k, j)] = model.clean_means()[(k, j)] - cmu[j];
        }
    }
    SpliceModel::new(model.kind(), gmm, model.transforms().clone(), biases, model.clean_means().clone())
}
