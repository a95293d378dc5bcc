//! Binary file formats for features and models. Everything is
//! little-endian with a 4-byte ASCII magic; floats are stored as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rft_core::compensation::{CorrespondenceMatrix, SpliceKind, SpliceModel, Transforms};
use rft_core::frontend::{FeatureKind, FeatureSequence};
use rft_core::gmm::{Covariances, FullCov, GaussianMixture};
use rft_core::heq::QuantileTable;
use rft_core::mllr::MllrTransform;
use rft_core::nmf::Dictionary;
use rft_core::Mat;

use crate::{Result, RftError};

fn w_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f32<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&(v as f32).to_le_bytes())
}

fn r_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f32<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f64::from(f32::from_le_bytes(b)))
}

fn check_magic<R: Read>(r: &mut R, expect: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| RftError::Format(format!("truncated {what} header: {e}")))?;
    if &b != expect {
        return Err(RftError::Format(format!(
            "bad magic for {what}: expected {:?}, found {:?}",
            String::from_utf8_lossy(expect),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn open_r(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| RftError::io(path.display().to_string(), e))?,
    ))
}

fn open_w(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| RftError::io(path.display().to_string(), e))?,
    ))
}

fn ioerr(path: &Path) -> impl Fn(std::io::Error) -> RftError + '_ {
    move |e| RftError::io(path.display().to_string(), e)
}

// ---- RFT1 feature archives ----

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut w = open_w(path)?;
    let err = ioerr(path);
    (|| -> std::io::Result<()> {
        w.write_all(b"RFT1")?;
        w_u32(&mut w, seq.frames.rows() as u32)?;
        w_u32(&mut w, seq.frames.cols() as u32)?;
        w_u32(&mut w, seq.kind.code())?;
        w_u32(&mut w, (seq.frame_period_ms * 1000.0).round() as u32)?;
        for &v in seq.frames.data() {
            w_f32(&mut w, v)?;
        }
        w.flush()
    })()
    .map_err(err)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let mut r = open_r(path)?;
    check_magic(&mut r, b"RFT1", "feature archive")?;
    let err = ioerr(path);
    let n = r_u32(&mut r).map_err(&err)? as usize;
    let d = r_u32(&mut r).map_err(&err)? as usize;
    let kind = FeatureKind::from_code(r_u32(&mut r).map_err(&err)?)?;
    let period_us = r_u32(&mut r).map_err(&err)?;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(r_f32(&mut r).map_err(&err)?);
    }
    Ok(FeatureSequence::new(
        Mat::from_vec(n, d, data),
        kind,
        f64::from(period_us) / 1000.0,
    ))
}

pub fn features_to_csv<W: Write>(w: &mut W, seq: &FeatureSequence) -> std::io::Result<()> {
    for t in 0..seq.frames.rows() {
        let row: Vec<String> = seq.frames.row(t).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

// ---- RFTW dictionaries ----

pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    let mut w = open_w(path)?;
    let err = ioerr(path);
    (|| -> std::io::Result<()> {
        w.write_all(b"RFTW")?;
        w_u32(&mut w, dict.d() as u32)?;
        w_u32(&mut w, dict.r() as u32)?;
        w_u64(&mut w, dict.iterations_trained)?;
        for c in 0..dict.r() {
            for d in 0..dict.d() {
                w_f32(&mut w, dict.basis[(d, c)])?;
            }
        }
        w.flush()
    })()
    .map_err(err)
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let mut r = open_r(path)?;
    check_magic(&mut r, b"RFTW", "dictionary")?;
    let err = ioerr(path);
    let d = r_u32(&mut r).map_err(&err)? as usize;
    let rank = r_u32(&mut r).map_err(&err)? as usize;
    let iters = r_u64(&mut r).map_err(&err)?;
    let mut basis = Mat::zeros(d, rank);
    for c in 0..rank {
        for row in 0..d {
            basis[(row, c)] = r_f32(&mut r).map_err(&err)?;
        }
    }
    Ok(Dictionary { basis, iterations_trained: iters })
}

pub fn dictionary_to_csv<W: Write>(w: &mut W, dict: &Dictionary) -> std::io::Result<()> {
    for d in 0..dict.d() {
        let row: Vec<String> = (0..dict.r()).map(|c| format!("{}", dict.basis[(d, c)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

// ---- RFTQ quantile tables ----

pub fn write_tables(path: &Path, tables: &[QuantileTable]) -> Result<()> {
    if tables.is_empty() {
        return Err(RftError::Format("no quantile tables to write".into()));
    }
    let nq = tables[0].n_quantiles();
    if tables.iter().any(|t| t.n_quantiles() != nq) {
        return Err(RftError::Format("quantile tables have mixed sizes".into()));
    }
    let mut w = open_w(path)?;
    let err = ioerr(path);
    (|| -> std::io::Result<()> {
        w.write_all(b"RFTQ")?;
        w_u32(&mut w, tables.len() as u32)?;
        w_u32(&mut w, nq as u32)?;
        for t in tables {
            for v in t.values() {
                w_f32(&mut w, v)?;
            }
        }
        w.flush()
    })()
    .map_err(err)
}

pub fn read_tables(path: &Path) -> Result<Vec<QuantileTable>> {
    let mut r = open_r(path)?;
    check_magic(&mut r, b"RFTQ", "quantile tables")?;
    let err = ioerr(path);
    let dims = r_u32(&mut r).map_err(&err)? as usize;
    let nq = r_u32(&mut r).map_err(&err)? as usize;
    let mut out = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut vals = Vec::with_capacity(nq);
        for _ in 0..nq {
            vals.push(r_f32(&mut r).map_err(&err)?);
        }
        out.push(QuantileTable::from_values(&vals));
    }
    Ok(out)
}

// ---- RFTG Gaussian mixtures ----

fn write_gmm_body<W: Write>(w: &mut W, gmm: &GaussianMixture) -> std::io::Result<()> {
    w.write_all(b"RFTG")?;
    let (m, d) = (gmm.m(), gmm.d());
    w_u32(w, m as u32)?;
    w_u32(w, d as u32)?;
    let kind = match gmm.covariances() {
        Covariances::Diagonal(_) => 0u32,
        Covariances::Full(_) => 1u32,
    };
    w_u32(w, kind)?;
    for &x in gmm.weights() {
        w_f32(w, x)?;
    }
    for &x in gmm.means().data() {
        w_f32(w, x)?;
    }
    match gmm.covariances() {
        Covariances::Diagonal(v) => {
            for &x in v.data() {
                w_f32(w, x)?;
            }
        }
        Covariances::Full(list) => {
            for fc in list {
                for &x in fc.matrix.data() {
                    w_f32(w, x)?;
                }
            }
        }
    }
    Ok(())
}

fn read_gmm_body<R: Read>(r: &mut R) -> Result<GaussianMixture> {
    check_magic(r, b"RFTG", "gmm")?;
    let err = |e: std::io::Error| RftError::Format(format!("truncated gmm: {e}"));
    let m = r_u32(r).map_err(err)? as usize;
    let d = r_u32(r).map_err(err)? as usize;
    let kind = r_u32(r).map_err(err)?;
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        weights.push(r_f32(r).map_err(err)?);
    }
    // f32 storage perturbs the simplex; renormalize before validation
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(RftError::Format("gmm weights are degenerate".into()));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    let mut means = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        means.push(r_f32(r).map_err(err)?);
    }
    let covs = match kind {
        0 => {
            let mut v = Vec::with_capacity(m * d);
            for _ in 0..m * d {
                v.push(r_f32(r).map_err(err)?);
            }
            Covariances::Diagonal(Mat::from_vec(m, d, v))
        }
        1 => {
            let mut list = Vec::with_capacity(m);
            for _ in 0..m {
                let mut v = Vec::with_capacity(d * d);
                for _ in 0..d * d {
                    v.push(r_f32(r).map_err(err)?);
                }
                list.push(FullCov::new(Mat::from_vec(d, d, v))?);
            }
            Covariances::Full(list)
        }
        k => return Err(RftError::Format(format!("unknown covariance kind {k}"))),
    };
    Ok(GaussianMixture::new(weights, Mat::from_vec(m, d, means), covs)?)
}

pub fn write_gmm(path: &Path, gmm: &GaussianMixture) -> Result<()> {
    let mut w = open_w(path)?;
    let err = ioerr(path);
    write_gmm_body(&mut w, gmm).map_err(&err)?;
    w.flush().map_err(&err)
}

pub fn read_gmm(path: &Path) -> Result<GaussianMixture> {
    let mut r = open_r(path)?;
    read_gmm_body(&mut r)
}

// ---- RFTM transforms ----

pub fn write_transform(path: &Path, t: &MllrTransform) -> Result<()> {
    let mut w = open_w(path)?;
    let err = ioerr(path);
    (|| -> std::io::Result<()> {
        w.write_all(b"RFTM")?;
        w_u32(&mut w, t.d() as u32)?;
        for &x in t.matrix().data() {
            w_f32(&mut w, x)?;
        }
        w.flush()
    })()
    .map_err(err)
}

pub fn read_transform(path: &Path) -> Result<MllrTransform> {
    let mut r = open_r(path)?;
    check_magic(&mut r, b"RFTM", "transform")?;
    let err = ioerr(path);
    let d = r_u32(&mut r).map_err(&err)? as usize;
    let mut data = Vec::with_capacity(d * (d + 1));
    for _ in 0..d * (d + 1) {
        data.push(r_f32(&mut r).map_err(&err)?);
    }
    Ok(MllrTransform::new(Mat::from_vec(d, d + 1, data))?)
}

// ---- RFTS compensation models ----

fn kind_code(kind: SpliceKind) -> u32 {
    match kind {
        SpliceKind::Splice => 0,
        SpliceKind::Msplice => 1,
        SpliceKind::MspliceDiag => 2,
        SpliceKind::NonStereo => 3,
    }
}

fn kind_from_code(c: u32) -> Result<SpliceKind> {
    match c {
        0 => Ok(SpliceKind::Splice),
        1 => Ok(SpliceKind::Msplice),
        2 => Ok(SpliceKind::MspliceDiag),
        3 => Ok(SpliceKind::NonStereo),
        _ => Err(RftError::Format(format!("unknown compensation kind code {c}"))),
    }
}

pub fn write_splice(path: &Path, model: &SpliceModel) -> Result<()> {
    let mut w = open_w(path)?;
    let err = ioerr(path);
    (|| -> std::io::Result<()> {
        w.write_all(b"RFTS")?;
        w_u32(&mut w, kind_code(model.kind()))?;
        w_u32(&mut w, model.m() as u32)?;
        w_u32(&mut w, model.d() as u32)?;
        w_u32(&mut w, u32::from(model.is_diagonal()))?;
        write_gmm_body(&mut w, model.gmm())?;
        match model.transforms() {
            Transforms::Full(list) => {
                for a in list {
                    for &x in a.data() {
                        w_f32(&mut w, x)?;
                    }
                }
            }
            Transforms::Diagonal(c) => {
                for &x in c.data() {
                    w_f32(&mut w, x)?;
                }
            }
        }
        for &x in model.biases().data() {
            w_f32(&mut w, x)?;
        }
        for &x in model.clean_means().data() {
            w_f32(&mut w, x)?;
        }
        w.flush()
    })()
    .map_err(err)
}

pub fn read_splice(path: &Path) -> Result<SpliceModel> {
    let mut r = open_r(path)?;
    check_magic(&mut r, b"RFTS", "compensation model")?;
    let err = |e: std::io::Error| RftError::Format(format!("truncated compensation model: {e}"));
    let kind = kind_from_code(r_u32(&mut r).map_err(err)?)?;
    let m = r_u32(&mut r).map_err(err)? as usize;
    let d = r_u32(&mut r).map_err(err)? as usize;
    let diag = r_u32(&mut r).map_err(err)? != 0;
    let gmm = read_gmm_body(&mut r)?;
    if gmm.m() != m || gmm.d() != d {
        return Err(RftError::Format("embedded gmm shape disagrees with header".into()));
    }
    let transforms = if diag {
        let mut data = Vec::with_capacity(m * d);
        for _ in 0..m * d {
            data.push(r_f32(&mut r).map_err(err)?);
        }
        Transforms::Diagonal(Mat::from_vec(m, d, data))
    } else {
        let mut list = Vec::with_capacity(m);
        for _ in 0..m {
            let mut data = Vec::with_capacity(d * d);
            for _ in 0..d * d {
                data.push(r_f32(&mut r).map_err(err)?);
            }
            list.push(Mat::from_vec(d, d, data));
        }
        Transforms::Full(list)
    };
    let mut biases = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        biases.push(r_f32(&mut r).map_err(err)?);
    }
    let mut clean = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        clean.push(r_f32(&mut r).map_err(err)?);
    }
    Ok(SpliceModel::new(
        kind,
        gmm,
        transforms,
        Mat::from_vec(m, d, biases),
        Mat::from_vec(m, d, clean),
    )?)
}

// ---- correspondence matrix exports ----

pub fn correspondence_to_csv<W: Write>(
    w: &mut W,
    v: &CorrespondenceMatrix,
) -> std::io::Result<()> {
    let m = v.counts.rows();
    for i in 0..m {
        let row: Vec<String> = (0..m).map(|j| format!("{}", v.counts[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Binary PGM (P5) with log-scaled counts, brightest = largest count.
pub fn correspondence_to_pgm<W: Write>(
    w: &mut W,
    v: &CorrespondenceMatrix,
) -> std::io::Result<()> {
    let m = v.counts.rows();
    let max = v.counts.data().iter().cloned().fold(0.0f64, f64::max);
    let scale = (1.0 + max).ln();
    writeln!(w, "P5")?;
    writeln!(w, "{m} {m}")?;
    writeln!(w, "255")?;
    let mut pixels = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let level = if scale > 0.0 {
                ((1.0 + v.counts[(i, j)]).ln() / scale * 255.0).round()
            } else {
                0.0
            };
            pixels.push(level.clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&pixels)
}
