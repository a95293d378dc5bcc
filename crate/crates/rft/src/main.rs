//! Batch CLI for the noise-robust feature toolkit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use rft_core::compensation::{
    self, train_msplice, train_msplice_diag, train_nonstereo, train_splice, NonStereoOptions,
    SpliceKind, StereoBatch,
};
use rft_core::frontend::{dct_and_lifter, FeatureKind, FeatureSequence};
use rft_core::gmm::{em_fit, EmOptions};
use rft_core::heq::{build_table, equalize_sequence, TestTables};
use rft_core::nmf::{learn_dictionary, project, reconstruct, robustw_train, NmfConfig};
use rft_core::Mat;

use rft::config::RunConfig;
use rft::corpus::{build_stereo_batches, extract_corpus, mix_noise, Manifest, Stage};
use rft::eval::{render_table, Evaluation};
use rft::formats;
use rft::wav::{read_wav, write_wav};
use rft::{Result, RftError};

#[derive(Parser)]
#[command(name = "rft", about = "Noise-robust feature toolkit", version)]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override individual config keys, e.g. --set nmf.rank=10.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root random seed; all randomness flows from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap for per-utterance parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for batch artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract feature archives for every manifest entry.
    Extract {
        manifest: PathBuf,
        #[arg(long, default_value = "mfcc")]
        stage: String,
    },
    /// Dictionary learning and subspace projection.
    Nmf {
        #[command(subcommand)]
        sub: NmfCmd,
    },
    /// Histogram equalization tables and application.
    Heq {
        #[command(subcommand)]
        sub: HeqCmd,
    },
    /// Gaussian mixture fitting.
    Gmm {
        #[command(subcommand)]
        sub: GmmCmd,
    },
    /// SPLICE-family training, enhancement and adaptation.
    Splice {
        #[command(subcommand)]
        sub: SpliceCmd,
    },
    /// Mix noise into clean audio at a target SNR.
    Mix {
        clean: PathBuf,
        noise: PathBuf,
        /// Target SNR in dB, or "clean" for pass-through.
        #[arg(long)]
        snr: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare processed archives against clean references.
    Eval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        processed: PathBuf,
        /// Unprocessed archives for relative-reduction reporting.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Manifest supplying condition/SNR tags per id.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NmfCmd {
    /// Learn a dictionary with joint W/H updates.
    TrainPlain {
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn, equalize activations, and refit the dictionary.
    TrainRobustw {
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project archives onto a dictionary and emit reconstructed MFCCs.
    Apply {
        features: Vec<PathBuf>,
        #[arg(long)]
        dict: PathBuf,
    },
}

#[derive(Subcommand)]
enum HeqCmd {
    /// Build per-dimension reference quantile tables.
    Build {
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equalize archives against reference tables.
    Apply {
        features: Vec<PathBuf>,
        #[arg(long)]
        tables: PathBuf,
        /// Corpus-level test tables; default is per-utterance test tables.
        #[arg(long)]
        test_tables: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GmmCmd {
    /// Fit a mixture model on feature archives.
    Fit {
        features: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mixtures: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SpliceCmd {
    /// Stereo SPLICE training from a paired manifest.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a fitted noisy GMM instead of training one.
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// M-SPLICE training (whitening transforms).
    TrainM {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// Diagonal M-SPLICE training.
    TrainMDiag {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// Non-stereo training from unpaired clean and noisy archives.
    TrainNonstereo {
        #[arg(long, num_args = 1.., required = true)]
        clean: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        noisy: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance feature archives with a trained model.
    Enhance {
        features: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run-time bias adaptation on test-condition archives.
    Adapt {
        features: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the original (unadapted) GMM for enhancement posteriors.
        #[arg(long)]
        original_posteriors: bool,
    },
}

/// Expands directories into sorted `.rft` listings; files pass through.
fn list_archives(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| RftError::io(p.display().to_string(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "rft"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(RftError::Config("no feature archives given".into()));
    }
    Ok(out)
}

/// Reads archives and checks they share dimension and kind.
fn read_archives(paths: &[PathBuf]) -> Result<Vec<(PathBuf, FeatureSequence)>> {
    let mut out: Vec<(PathBuf, FeatureSequence)> = Vec::new();
    for p in paths {
        let seq = formats::read_features(p)?;
        if let Some((_, first)) = out.first() {
            if first.dim() != seq.dim() || first.kind != seq.kind {
                return Err(RftError::Format(format!(
                    "{} disagrees with the first archive in dimension or kind",
                    p.display()
                )));
            }
        }
        out.push((p.clone(), seq));
    }
    Ok(out)
}

fn concat_frames(archives: &[(PathBuf, FeatureSequence)]) -> Mat {
    let d = archives[0].1.dim();
    let total: usize = archives.iter().map(|(_, s)| s.n_frames()).sum();
    let mut out = Mat::zeros(total, d);
    let mut row = 0;
    for (_, seq) in archives {
        for t in 0..seq.n_frames() {
            out.row_mut(row).copy_from_slice(seq.frames.row(t));
            row += 1;
        }
    }
    out
}

fn require_kind(archives: &[(PathBuf, FeatureSequence)], kind: FeatureKind, what: &str) -> Result<()> {
    if archives[0].1.kind != kind {
        return Err(RftError::Config(format!(
            "{what} expects {kind:?}-stage archives, found {:?}",
            archives[0].1.kind
        )));
    }
    Ok(())
}

fn out_path(out_dir: &Path, input: &Path) -> PathBuf {
    out_dir.join(input.file_name().expect("archive file name"))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| RftError::Config(format!("--set needs KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fit_noisy_gmm(
    cfg: &RunConfig,
    noisy: &Mat,
    gmm_path: &Option<PathBuf>,
) -> Result<rft_core::gmm::GaussianMixture> {
    match gmm_path {
        Some(p) => formats::read_gmm(p),
        None => {
            let opts = EmOptions {
                iterations: cfg.gmm.em_iters,
                covariance_kind: cfg.gmm.covariance_kind,
                seed: cfg.seed,
                ..Default::default()
            };
            Ok(em_fit(noisy, cfg.gmm.mixtures, &opts)?.0)
        }
    }
}

fn merge_batches(batches: &[rft::corpus::TaggedBatch]) -> Result<StereoBatch> {
    let d = batches
        .first()
        .ok_or_else(|| RftError::Config("manifest has no stereo pairs".into()))?
        .batch
        .noisy_frames()
        .cols();
    let total: usize = batches.iter().map(|b| b.batch.len()).sum();
    let mut clean = Mat::zeros(total, d);
    let mut noisy = Mat::zeros(total, d);
    let mut row = 0;
    for b in batches {
        for t in 0..b.batch.len() {
            clean.row_mut(row).copy_from_slice(b.batch.clean_frames().row(t));
            noisy.row_mut(row).copy_from_slice(b.batch.noisy_frames().row(t));
            row += 1;
        }
    }
    Ok(StereoBatch::from_frames(clean, noisy)?)
}

fn train_stereo(
    cli: &Cli,
    cfg: &RunConfig,
    kind: SpliceKind,
    manifest: &Path,
    gmm_path: &Option<PathBuf>,
    out: &Path,
) -> Result<serde_json::Value> {
    let manifest = Manifest::load(manifest)?;
    let batches = build_stereo_batches(&manifest, &cfg.frontend, Stage::Mfcc13)?;
    let merged = merge_batches(&batches)?;
    let gmm = fit_noisy_gmm(cfg, merged.noisy_frames(), gmm_path)?;
    let model = match kind {
        SpliceKind::Splice => train_splice(&merged, &gmm)?,
        SpliceKind::Msplice => train_msplice(&merged, &gmm)?,
        SpliceKind::MspliceDiag => train_msplice_diag(&merged, &gmm)?,
        SpliceKind::NonStereo => unreachable!("non-stereo has its own entry point"),
    };
    fs::create_dir_all(&cli.out_dir).ok();
    formats::write_splice(out, &model)?;
    Ok(json!({
        "command": "splice-train",
        "kind": format!("{kind:?}"),
        "pairs": batches.len(),
        "frames": merged.len(),
        "mixtures": model.m(),
        "model": out.display().to_string(),
        "seed": cfg.seed,
    }))
}

fn tag_lookup(manifest: &Option<PathBuf>) -> Result<BTreeMap<String, (String, String)>> {
    let mut map = BTreeMap::new();
    if let Some(p) = manifest {
        let m = Manifest::load(p)?;
        for e in &m.entries {
            map.insert(e.id.clone(), (e.condition.clone(), e.snr.clone()));
        }
    }
    Ok(map)
}

fn run(cli: &Cli) -> Result<(serde_json::Value, u8)> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Extract { manifest, stage } => {
            let stage = Stage::parse(stage)?;
            let manifest = Manifest::load(manifest)?;
            let summary = extract_corpus(&manifest, &cfg.frontend, stage, &cli.out_dir)?;
            let code = if summary.failures.is_empty() { 0 } else { 2 };
            Ok((serde_json::to_value(&summary).expect("summary json"), code))
        }
        Cmd::Nmf { sub } => run_nmf(cli, &cfg, sub),
        Cmd::Heq { sub } => run_heq(cli, &cfg, sub),
        Cmd::Gmm { sub } => run_gmm(&cfg, sub),
        Cmd::Splice { sub } => run_splice(cli, &cfg, sub),
        Cmd::Mix { clean, noise, snr, out } => {
            let snr_db = match snr.as_str() {
                "clean" | "inf" => f64::INFINITY,
                s => s
                    .parse()
                    .map_err(|_| RftError::Config(format!("invalid snr '{s}'")))?,
            };
            let clean_audio = read_wav(clean)?;
            let noise_audio = read_wav(noise)?;
            let mixed = mix_noise(&clean_audio, &noise_audio, snr_db, cfg.seed)?;
            write_wav(out, &mixed)?;
            Ok((
                json!({
                    "command": "mix",
                    "snr_db": snr,
                    "samples": mixed.samples.len(),
                    "out": out.display().to_string(),
                    "seed": cfg.seed,
                }),
                0,
            ))
        }
        Cmd::Eval { clean, processed, baseline, manifest } => {
            let tags = tag_lookup(manifest)?;
            let clean_files = list_archives(std::slice::from_ref(clean))?;
            let mut eval = Evaluation::default();
            let mut compared = 0usize;
            for cpath in &clean_files {
                let name = cpath.file_name().expect("file name");
                let ppath = processed.join(name);
                if !ppath.exists() {
                    continue;
                }
                let id = cpath.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
                let (condition, snr) = tags
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| ("-".into(), "-".into()));
                let cseq = formats::read_features(cpath)?;
                let pseq = formats::read_features(&ppath)?;
                let bseq = match baseline {
                    Some(bdir) => Some(formats::read_features(&bdir.join(name))?),
                    None => None,
                };
                eval.add(&condition, &snr, &cseq, &pseq, bseq.as_ref())?;
                compared += 1;
            }
            if compared == 0 {
                return Err(RftError::Config("no matching archive pairs to evaluate".into()));
            }
            let reports = eval.reports(baseline.is_some());
            eprint!("{}", render_table(&reports));
            Ok((
                json!({ "command": "eval", "utterances": compared, "groups": reports }),
                0,
            ))
        }
    }
}

fn run_nmf(cli: &Cli, cfg: &RunConfig, sub: &NmfCmd) -> Result<(serde_json::Value, u8)> {
    match sub {
        NmfCmd::TrainPlain { features, out } | NmfCmd::TrainRobustw { features, out } => {
            let robust = matches!(sub, NmfCmd::TrainRobustw { .. });
            let archives = read_archives(&list_archives(features)?)?;
            require_kind(&archives, FeatureKind::Lmfb, "nmf training")?;
            let v = concat_frames(&archives).transpose();
            let nmf_cfg = NmfConfig {
                rank: cfg.nmf.rank,
                iterations: cfg.nmf.iterations,
                seed: cfg.seed,
                early_stop_rel: None,
            };
            let run = if robust {
                robustw_train(&v, &nmf_cfg, cfg.heq.n_quantiles)?
            } else {
                learn_dictionary(&v, &nmf_cfg)?
            };
            formats::write_dictionary(out, &run.dictionary)?;
            let final_div = run.divergence_trace.last().copied().unwrap_or(0.0);
            Ok((
                json!({
                    "command": if robust { "nmf-train-robustw" } else { "nmf-train-plain" },
                    "rank": cfg.nmf.rank,
                    "iterations": cfg.nmf.iterations,
                    "frames": v.cols(),
                    "final_divergence": final_div,
                    "dictionary": out.display().to_string(),
                    "seed": cfg.seed,
                }),
                0,
            ))
        }
        NmfCmd::Apply { features, dict } => {
            let dict = formats::read_dictionary(dict)?;
            let archives = read_archives(&list_archives(features)?)?;
            require_kind(&archives, FeatureKind::Lmfb, "nmf apply")?;
            fs::create_dir_all(&cli.out_dir)
                .map_err(|e| RftError::io(cli.out_dir.display().to_string(), e))?;
            let mut files = Vec::new();
            for (path, seq) in &archives {
                let v = seq.frames.transpose();
                let (h, trace) = project(&v, &dict, cfg.nmf.iterations, cfg.seed)?;
                let vhat = reconstruct(&dict, &h);
                let lmfb = FeatureSequence::new(vhat.transpose(), FeatureKind::Lmfb, seq.frame_period_ms);
                let mfcc = dct_and_lifter(&lmfb, &cfg.frontend)?;
                let dest = out_path(&cli.out_dir, path);
                formats::write_features(&dest, &mfcc)?;
                files.push(json!({
                    "archive": dest.display().to_string(),
                    "frames": mfcc.n_frames(),
                    "divergence": trace.last().copied().unwrap_or(0.0),
                }));
            }
            Ok((
                json!({ "command": "nmf-apply", "utterances": files.len(), "files": files, "seed": cfg.seed }),
                0,
            ))
        }
    }
}

fn run_heq(cli: &Cli, cfg: &RunConfig, sub: &HeqCmd) -> Result<(serde_json::Value, u8)> {
    match sub {
        HeqCmd::Build { features, out } => {
            let archives = read_archives(&list_archives(features)?)?;
            let all = concat_frames(&archives);
            let mut tables = Vec::with_capacity(all.cols());
            for j in 0..all.cols() {
                tables.push(build_table(&all.col(j), cfg.heq.n_quantiles)?);
            }
            formats::write_tables(out, &tables)?;
            Ok((
                json!({
                    "command": "heq-build",
                    "dims": tables.len(),
                    "quantiles": cfg.heq.n_quantiles,
                    "frames": all.rows(),
                    "tables": out.display().to_string(),
                }),
                0,
            ))
        }
        HeqCmd::Apply { features, tables, test_tables } => {
            let references = formats::read_tables(tables)?;
            let corpus_tables = test_tables.as_ref().map(|p| formats::read_tables(p)).transpose()?;
            let archives = read_archives(&list_archives(features)?)?;
            fs::create_dir_all(&cli.out_dir)
                .map_err(|e| RftError::io(cli.out_dir.display().to_string(), e))?;
            let mut written = 0usize;
            for (path, seq) in &archives {
                let mode = match &corpus_tables {
                    Some(t) => TestTables::Given(t),
                    None => TestTables::PerUtterance { n_quantiles: cfg.heq.n_quantiles },
                };
                let eq = equalize_sequence(seq, &references, mode)?;
                formats::write_features(&out_path(&cli.out_dir, path), &eq)?;
                written += 1;
            }
            Ok((json!({ "command": "heq-apply", "utterances": written }), 0))
        }
    }
}

fn run_gmm(cfg: &RunConfig, sub: &GmmCmd) -> Result<(serde_json::Value, u8)> {
    match sub {
        GmmCmd::Fit { features, out, mixtures } => {
            let archives = read_archives(&list_archives(features)?)?;
            let data = concat_frames(&archives);
            let m = mixtures.unwrap_or(cfg.gmm.mixtures);
            let opts = EmOptions {
                iterations: cfg.gmm.em_iters,
                covariance_kind: cfg.gmm.covariance_kind,
                seed: cfg.seed,
                ..Default::default()
            };
            let (gmm, trace) = em_fit(&data, m, &opts)?;
            formats::write_gmm(out, &gmm)?;
            Ok((
                json!({
                    "command": "gmm-fit",
                    "mixtures": m,
                    "frames": data.rows(),
                    "final_log_likelihood": trace.last().copied().unwrap_or(0.0),
                    "model": out.display().to_string(),
                    "seed": cfg.seed,
                }),
                0,
            ))
        }
    }
}

fn run_splice(cli: &Cli, cfg: &RunConfig, sub: &SpliceCmd) -> Result<(serde_json::Value, u8)> {
    match sub {
        SpliceCmd::Train { manifest, out, gmm } => {
            Ok((train_stereo(cli, cfg, SpliceKind::Splice, manifest, gmm, out)?, 0))
        }
        SpliceCmd::TrainM { manifest, out, gmm } => {
            Ok((train_stereo(cli, cfg, SpliceKind::Msplice, manifest, gmm, out)?, 0))
        }
        SpliceCmd::TrainMDiag { manifest, out, gmm } => {
            Ok((train_stereo(cli, cfg, SpliceKind::MspliceDiag, manifest, gmm, out)?, 0))
        }
        SpliceCmd::TrainNonstereo { clean, noisy, out } => {
            let clean_arch = read_archives(&list_archives(clean)?)?;
            let noisy_arch = read_archives(&list_archives(noisy)?)?;
            let opts = NonStereoOptions {
                mixtures: cfg.gmm.mixtures,
                em: EmOptions {
                    iterations: cfg.gmm.em_iters,
                    covariance_kind: cfg.gmm.covariance_kind,
                    seed: cfg.seed,
                    ..Default::default()
                },
                refine_iterations: 3,
            };
            let outcome = train_nonstereo(&concat_frames(&clean_arch), &concat_frames(&noisy_arch), &opts)?;
            formats::write_splice(out, &outcome.model)?;
            Ok((
                json!({
                    "command": "splice-train-nonstereo",
                    "mixtures": outcome.model.m(),
                    "model": out.display().to_string(),
                    "seed": cfg.seed,
                }),
                0,
            ))
        }
        SpliceCmd::Enhance { features, model } => {
            let model = formats::read_splice(model)?;
            let archives = read_archives(&list_archives(features)?)?;
            fs::create_dir_all(&cli.out_dir)
                .map_err(|e| RftError::io(cli.out_dir.display().to_string(), e))?;
            let mut written = 0usize;
            for (path, seq) in &archives {
                let frames = compensation::enhance_frames(&seq.frames, &model)?;
                let out_seq = FeatureSequence::new(frames, seq.kind, seq.frame_period_ms);
                formats::write_features(&out_path(&cli.out_dir, path), &out_seq)?;
                written += 1;
            }
            Ok((json!({ "command": "splice-enhance", "utterances": written }), 0))
        }
        SpliceCmd::Adapt { features, model, out, original_posteriors } => {
            let model = formats::read_splice(model)?;
            let archives = read_archives(&list_archives(features)?)?;
            let data = concat_frames(&archives);
            let skipped = data.rows() < model.d() + 1;
            let adapted =
                compensation::runtime_adapt_with(&model, &data, !original_posteriors)?;
            formats::write_splice(out, &adapted)?;
            Ok((
                json!({
                    "command": "splice-adapt",
                    "frames": data.rows(),
                    "skipped": skipped,
                    "model": out.display().to_string(),
                }),
                0,
            ))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: could not configure {workers} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok((summary, code)) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary json"));
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
