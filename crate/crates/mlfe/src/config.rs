//! Run configuration. One JSON document drives one command; unknown keys are
//! rejected and every value is checked before any compute starts.

use std::path::{Path, PathBuf};

use mlfe_core::cayley::CayleyConfig;
use mlfe_core::flow::FlowConfig;
use mlfe_core::particles::{InitSampler, ParticleConfig, ParticleRun};
use mlfe_core::{Axis, PotentialPair};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// Smallest axis the CLI accepts.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kappa: usize,
    pub potentials: PotentialsConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub init: Option<InitConfig>,
    #[serde(default)]
    pub particles: Option<ParticlesSection>,
    #[serde(default)]
    pub chain: Option<ChainSection>,
    #[serde(default)]
    pub cayley: Option<CayleySection>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialsConfig {
    Quadratic { alpha: f64, beta: f64 },
    Quartic { a4: f64, a2: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    #[serde(default = "one")]
    pub symmetrize_every: usize,
    /// Write a density snapshot every this many steps.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    GaussianProduct {
        mean: f64,
        var: f64,
    },
    GaussianMixture {
        m: f64,
        var: f64,
    },
    /// The stationary joint law: loaded from a density file when `path` is
    /// given, otherwise solved for.
    Cayley {
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    pub n: usize,
    pub seed: u64,
    pub bins: usize,
    #[serde(default)]
    pub n_min: Option<usize>,
    /// Defaults to `flow.dt`, then 1e-3.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Defaults to `flow.t_end`.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub n_list: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CayleySection {
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub damping: Option<f64>,
}

fn one() -> usize {
    1
}

fn invalid(e: mlfe_core::Error) -> CliError {
    CliError::validation(e)
}

impl RunConfig {
    /// Reads, parses and validates a config file. A missing or unreadable
    /// file is a validation error.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok(cfg.resolve_paths(path.parent().unwrap_or(Path::new("."))))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative init paths are taken relative to the config file.
    fn resolve_paths(mut self, base: &Path) -> Self {
        if let Some(InitConfig::Cayley { path: Some(p) }) = &mut self.init {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        self.pair()?;
        self.axis()?;
        if let Some(f) = &self.flow {
            self.flow_config()?;
            if f.snapshot_every == Some(0) {
                return Err(CliError::validation("flow.snapshot_every must be positive"));
            }
        }
        if let Some(init) = &self.init {
            match *init {
                InitConfig::GaussianProduct { mean, var } if !(mean.is_finite() && var > 0.0 && var.is_finite()) => {
                    return Err(CliError::validation("init: need finite mean and positive var"));
                }
                InitConfig::GaussianMixture { m, var } if !(m.is_finite() && var > 0.0 && var.is_finite()) => {
                    return Err(CliError::validation("init: need finite m and positive var"));
                }
                _ => {}
            }
        }
        if self.particles.is_some() {
            self.particle_setup()?;
        }
        if let Some(c) = &self.chain {
            check_n_list(&c.n_list)?;
        }
        self.cayley_config()?;
        Ok(())
    }

    pub fn pair(&self) -> CliResult<PotentialPair> {
        match self.potentials {
            PotentialsConfig::Quadratic { alpha, beta } => PotentialPair::quadratic(alpha, beta, self.kappa),
            PotentialsConfig::Quartic { a4, a2, beta } => PotentialPair::quartic(a4, a2, beta, self.kappa),
        }
        .map_err(invalid)
    }

    pub fn axis(&self) -> CliResult<Axis> {
        if self.grid.points < MIN_POINTS {
            return Err(CliError::validation(format!("grid.points must be at least {MIN_POINTS}")));
        }
        if !(self.grid.half_width > 0.0 && self.grid.half_width.is_finite()) {
            return Err(CliError::validation("grid.half_width must be positive"));
        }
        Axis::symmetric(self.grid.half_width, self.grid.points).map_err(invalid)
    }

    pub fn flow_section(&self) -> CliResult<&FlowSection> {
        self.flow.as_ref().ok_or_else(|| CliError::validation("config has no flow section"))
    }

    pub fn flow_config(&self) -> CliResult<FlowConfig> {
        let f = self.flow_section()?;
        let cfg = FlowConfig {
            dt: f.dt,
            t_end: f.t_end,
            output_every: f.output_every,
            symmetrize_every: f.symmetrize_every,
            ..FlowConfig::default()
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn init(&self) -> CliResult<&InitConfig> {
        self.init.as_ref().ok_or_else(|| CliError::validation("config has no init section"))
    }

    pub fn cayley_config(&self) -> CliResult<CayleyConfig> {
        let d = CayleyConfig::default();
        let cfg = match self.cayley {
            None => d,
            Some(c) => CayleyConfig {
                tol: c.tol.unwrap_or(d.tol),
                max_iter: c.max_iter.unwrap_or(d.max_iter),
                damping: c.damping.unwrap_or(d.damping),
            },
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    /// Particle count, seed and run schedule.
    pub fn particle_setup(&self) -> CliResult<(ParticleConfig, ParticleRun)> {
        let p = self.particles.as_ref().ok_or_else(|| CliError::validation("config has no particles section"))?;
        let d = ParticleConfig::default();
        let cfg = ParticleConfig { n: p.n, seed: p.seed, bins: p.bins, n_min: p.n_min.unwrap_or(d.n_min) };
        if cfg.n < mlfe_core::particles::MIN_PARTICLES {
            return Err(CliError::validation(format!(
                "particles.n must be at least {}",
                mlfe_core::particles::MIN_PARTICLES
            )));
        }
        if cfg.bins < 2 || cfg.n_min == 0 {
            return Err(CliError::validation("particles.bins must be at least 2 and n_min positive"));
        }
        let dt = p.dt.or(self.flow.map(|f| f.dt)).unwrap_or(1e-3);
        let t_end = p
            .t_end
            .or(self.flow.map(|f| f.t_end))
            .ok_or_else(|| CliError::validation("particles.t_end missing and no flow section to inherit from"))?;
        if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
            return Err(CliError::validation("particles need dt > 0 and t_end >= 0"));
        }
        let record_every = p.record_every.or(self.flow.map(|f| f.output_every)).unwrap_or(1);
        if record_every == 0 {
            return Err(CliError::validation("particles.record_every must be positive"));
        }
        Ok((cfg, ParticleRun { dt, t_end, record_every, bins: cfg.bins, n_min: cfg.n_min }))
    }

    pub fn particle_init(&self) -> CliResult<InitSampler> {
        match *self.init()? {
            InitConfig::GaussianProduct { mean, var } => Ok(InitSampler::GaussianProduct { mean, var }),
            InitConfig::GaussianMixture { m, var } => Ok(InitSampler::GaussianMixture { m, var }),
            InitConfig::Cayley { .. } => Err(CliError::validation("particles cannot start from a cayley init")),
        }
    }

    pub fn n_list(&self) -> CliResult<Vec<usize>> {
        let c = self.chain.as_ref().ok_or_else(|| CliError::validation("config has no chain section and no --n-list"))?;
        check_n_list(&c.n_list)?;
        Ok(c.n_list.clone())
    }
}

pub fn check_n_list(list: &[usize]) -> CliResult<()> {
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::validation("n_list must be non-empty with every n >= 1"));
    }
    Ok(())
}

/// Parses `1,2,4,8`.
pub fn parse_n_list(s: &str) -> CliResult<Vec<usize>> {
    let list = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::validation(format!("--n-list: {e}")))?;
    check_n_list(&list)?;
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"{
        "kappa": 2,
        "potentials": {"family": "quadratic", "alpha": 2.0, "beta": 1.5},
        "grid": {"half_width": 6.0, "points": 64},
        "flow": {"dt": 0.001, "t_end": 1.5, "output_every": 10},
        "init": {"type": "gaussian_mixture", "m": 1.2, "var": 0.25}
    }"#;

    #[test]
    fn parses_mixture_config() {
        let cfg = RunConfig::parse(FIG1).unwrap();
        assert_eq!(cfg.kappa, 2);
        assert_eq!(cfg.flow_config().unwrap().output_every, 10);
        assert!(matches!(cfg.init, Some(InitConfig::GaussianMixture { .. })));
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = FIG1.replace("\"kappa\": 2,", "\"kappa\": 2, \"colour\": 1,");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Validation(_))));
        let bad = FIG1.replace("\"beta\": 1.5", "\"beta\": 1.5, \"gamma\": 0");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = FIG1.replace("\"var\": 0.25", "\"var\": 0.25, \"sd\": 0.5");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("\"kappa\": 2", "\"kappa\": 4"),
            ("\"points\": 64", "\"points\": 4"),
            ("\"dt\": 0.001", "\"dt\": -1"),
            ("\"var\": 0.25", "\"var\": 0"),
            ("\"output_every\": 10", "\"output_every\": 0"),
        ] {
            assert!(RunConfig::parse(&FIG1.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn n_list_parsing() {
        assert_eq!(parse_n_list("1, 2,4").unwrap(), vec![1, 2, 4]);
        assert!(parse_n_list("1,0").is_err());
        assert!(parse_n_list("a").is_err());
    }

    #[test]
    fn particles_inherit_the_flow_schedule() {
        let with = FIG1.replace("\"init\"", "\"particles\": {\"n\": 2000, \"seed\": 7, \"bins\": 32}, \"init\"");
        let (p, run) = RunConfig::parse(&with).unwrap().particle_setup().unwrap();
        assert_eq!((p.n, p.seed), (2000, 7));
        assert_eq!((run.dt, run.t_end, run.record_every), (0.001, 1.5, 10));
    }
}
