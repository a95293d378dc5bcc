//! Run configuration: a plain text file of `section.key = value` lines
//! with `#` comments; command-line flags override file values.

use std::fs;
use std::path::Path;

use rft_core::frontend::FrontendConfig;
use rft_core::gmm::CovarianceKind;

use crate::{Result, RftError};

#[derive(Debug, Clone)]
pub struct NmfSettings {
    pub rank: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GmmSettings {
    pub mixtures: usize,
    pub em_iters: usize,
    pub covariance_kind: CovarianceKind,
}

#[derive(Debug, Clone)]
pub struct HeqSettings {
    pub n_quantiles: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub nmf: NmfSettings,
    pub gmm: GmmSettings,
    pub heq: HeqSettings,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frontend: FrontendConfig::default(),
            nmf: NmfSettings { rank: 20, iterations: 500 },
            gmm: GmmSettings {
                mixtures: 128,
                em_iters: 20,
                covariance_kind: CovarianceKind::Diagonal,
            },
            heq: HeqSettings { n_quantiles: 100 },
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| RftError::Config(format!("invalid value '{value}' for {key}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| RftError::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RftError::Config(format!(
                    "{}:{}: expected 'section.key = value'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key; used both by the file parser and by
    /// `--set section.key=value` flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frontend.frame_length_ms" => self.frontend.frame_length_ms = parse_num(key, value)?,
            "frontend.frame_rate_fps" => self.frontend.frame_rate_fps = parse_num(key, value)?,
            "frontend.preemphasis" => self.frontend.preemphasis = parse_num(key, value)?,
            "frontend.n_mel_filters" => self.frontend.n_mel_filters = parse_num(key, value)?,
            "frontend.mel_floor" => self.frontend.mel_floor = parse_num(key, value)?,
            "frontend.n_cepstra" => self.frontend.n_cepstra = parse_num(key, value)?,
            "frontend.lifter_coeff" => self.frontend.lifter_coeff = parse_num(key, value)?,
            "frontend.dft_size" => self.frontend.dft_size = parse_num(key, value)?,
            "frontend.delta_window" => self.frontend.delta_window = parse_num(key, value)?,
            "nmf.rank" => self.nmf.rank = parse_num(key, value)?,
            "nmf.iterations" => self.nmf.iterations = parse_num(key, value)?,
            "gmm.mixtures" => self.gmm.mixtures = parse_num(key, value)?,
            "gmm.em_iters" => self.gmm.em_iters = parse_num(key, value)?,
            "gmm.covariance_kind" => {
                self.gmm.covariance_kind = match value {
                    "diagonal" => CovarianceKind::Diagonal,
                    "full" => CovarianceKind::Full,
                    other => {
                        return Err(RftError::Config(format!(
                            "invalid value '{other}' for gmm.covariance_kind (diagonal or full)"
                        )))
                    }
                }
            }
            "heq.n_quantiles" => self.heq.n_quantiles = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(RftError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nmf.rank == 0 {
            return Err(RftError::Config("nmf.rank must be positive".into()));
        }
        if self.gmm.mixtures == 0 {
            return Err(RftError::Config("gmm.mixtures must be positive".into()));
        }
        if self.heq.n_quantiles < 2 {
            return Err(RftError::Config("heq.n_quantiles must be at least 2".into()));
        }
        Ok(())
    }
}
