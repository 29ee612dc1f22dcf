use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channels::{random_channel_seeded, standard_channel, ChannelFile, KrausChannel, RandomChannel, StandardChannel};
use crate::error::Error;
use crate::feedback::{ErrorModel, FeedbackProtocol, ProtocolFile};
use crate::linalg::{ComplexMatrix, HermitianOperator};
use crate::random::{random_hermitian, seeded_rng};
use crate::sweep::Suite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Validate,
    Jarzynski,
    Crooks,
    Heat,
    Feedback,
    Randomsuite,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Jarzynski => "jarzynski",
            Kind::Crooks => "crooks",
            Kind::Heat => "heat",
            Kind::Feedback => "feedback",
            Kind::Randomsuite => "randomsuite",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Where a channel comes from. Random families draw from the config seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity { dim: usize },
    Unitary { matrix: ComplexMatrix },
    Depolarizing { p: f64 },
    PhaseDamping { lambda: f64 },
    AmplitudeDamping { gamma: f64 },
    Swap { dim: usize },
    MubIsometry { dim_in: usize, dim_out: usize },
    HaarUnitary { dim: usize },
    MixtureOfUnitaries { dim: usize, count: usize },
    Stinespring { dim_in: usize, dim_out: usize, env: usize },
    Kraus(ChannelFile),
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Diagonal(Vec<f64>),
    Matrix(HermitianOperator),
    /// Random Hermitian of this dimension drawn from the config seed.
    Random(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSource {
    File(PathBuf),
    Inline(Box<ProtocolFile>),
}

/// Experiment description read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    #[serde(default)]
    pub a: Option<ObservableSpec>,
    #[serde(default)]
    pub b: Option<ObservableSpec>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta0: Option<f64>,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub protocol: Option<ProtocolSource>,
    #[serde(default)]
    pub error_matrix: Option<ErrorModel>,
    #[serde(default)]
    pub suite: Option<Suite>,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Config rejected before any experiment ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Parses and validates a config. `kind` and `seed` from the command line or
/// environment take effect before validation.
pub fn parse_config_str(text: &str, kind: Option<Kind>, seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
    if let (Some(cli), Some(file)) = (kind, cfg.kind) {
        if cli != file {
            return Err(bad(format!("kind: config says {}, command line says {}", file.name(), cli.name())));
        }
    }
    if let Some(k) = kind {
        cfg.kind = Some(k);
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. I/O failures are reported separately
/// from parse errors.
pub fn parse_config(
    path: &Path,
    kind: Option<Kind>,
    seed: Option<u64>,
) -> Result<std::result::Result<ExperimentConfig, ConfigError>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_config_str(&text, kind, seed).map(|mut c| {
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        c
    }))
}

impl ExperimentConfig {
    pub fn kind(&self) -> Kind {
        self.kind.expect("validated config has a kind")
    }

    pub fn trials(&self) -> u64 {
        self.trials.unwrap_or(1)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(crate::fluctuation::IDENTITY_TOL)
    }

    fn needs_seed(&self) -> bool {
        let random_channel = matches!(
            self.channel,
            Some(ChannelSpec::HaarUnitary { .. } | ChannelSpec::MixtureOfUnitaries { .. } | ChannelSpec::Stinespring { .. })
        );
        let random_obs = [&self.a, &self.b].iter().any(|o| matches!(o, Some(ObservableSpec::Random(_))));
        self.kind == Some(Kind::Randomsuite) || random_channel || random_obs
    }

    fn require<T: Copy>(&self, field: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| bad(format!("{field}: required for {}", self.kind().name())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.kind.ok_or_else(|| bad("kind: missing; give it on the command line or in the config"))?;
        if self.trials == Some(0) {
            return Err(bad("trials: must be at least 1"));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(bad(format!("tolerance: must be positive, got {t}")));
            }
        }
        if self.needs_seed() && self.seed.is_none() {
            return Err(bad("seed required"));
        }
        match kind {
            Kind::Validate => {
                self.channel.as_ref().ok_or_else(|| bad("channel: required for validate"))?;
            }
            Kind::Jarzynski => {
                self.channel_and_observables()?;
                let two_temperature = self.beta0.is_some() || self.beta1.is_some();
                if two_temperature {
                    self.require("beta0", self.beta0)?;
                    self.require("beta1", self.beta1)?;
                } else {
                    self.require("alpha", self.alpha)?;
                    self.require("beta", self.beta)?;
                }
            }
            Kind::Crooks => {
                self.channel_and_observables()?;
                self.require("alpha", self.alpha)?;
            }
            Kind::Heat => {
                self.channel_and_observables()?;
                self.require("alpha", self.alpha)?;
                self.require("beta", self.beta)?;
            }
            Kind::Feedback => {
                self.protocol.as_ref().ok_or_else(|| bad("protocol: required for feedback"))?;
            }
            Kind::Randomsuite => {
                self.suite.ok_or_else(|| bad("suite: required for randomsuite"))?;
            }
        }
        Ok(())
    }

    fn channel_and_observables(&self) -> Result<(), ConfigError> {
        let k = self.kind().name();
        self.channel.as_ref().ok_or_else(|| bad(format!("channel: required for {k}")))?;
        self.a.as_ref().ok_or_else(|| bad(format!("a: required for {k}")))?;
        self.b.as_ref().ok_or_else(|| bad(format!("b: required for {k}")))?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn build_channel(&self) -> crate::Result<KrausChannel> {
        let spec = self.channel.as_ref().ok_or_else(|| Error::Structure("no channel configured".into()))?;
        let std = |k: StandardChannel| standard_channel(&k);
        let rnd = |k: RandomChannel| random_channel_seeded(k, self.seed());
        match spec.clone() {
            ChannelSpec::Identity { dim } => std(StandardChannel::Identity(dim)),
            ChannelSpec::Unitary { matrix } => std(StandardChannel::Unitary(matrix)),
            ChannelSpec::Depolarizing { p } => std(StandardChannel::Depolarizing(p)),
            ChannelSpec::PhaseDamping { lambda } => std(StandardChannel::PhaseDamping(lambda)),
            ChannelSpec::AmplitudeDamping { gamma } => std(StandardChannel::AmplitudeDamping(gamma)),
            ChannelSpec::Swap { dim } => std(StandardChannel::Swap(dim)),
            ChannelSpec::MubIsometry { dim_in, dim_out } => std(StandardChannel::MubIsometry { dim_in, dim_out }),
            ChannelSpec::HaarUnitary { dim } => rnd(RandomChannel::HaarUnitary(dim)),
            ChannelSpec::MixtureOfUnitaries { dim, count } => rnd(RandomChannel::MixtureOfUnitaries { dim, count }),
            ChannelSpec::Stinespring { dim_in, dim_out, env } => rnd(RandomChannel::Stinespring { dim_in, dim_out, env }),
            ChannelSpec::Kraus(file) => file.into_channel().map(|c| c.0),
            ChannelSpec::File { path } => KrausChannel::load(self.resolve(&path)).map(|c| c.0),
        }
    }

    /// `a` and `b`; random observables draw from streams split off the seed.
    pub fn build_observables(&self) -> crate::Result<(HermitianOperator, HermitianOperator)> {
        let build = |spec: &Option<ObservableSpec>, stream: u64| -> crate::Result<HermitianOperator> {
            match spec.as_ref().ok_or_else(|| Error::Structure("observable missing".into()))? {
                ObservableSpec::Diagonal(d) => HermitianOperator::from_real_diagonal(d),
                ObservableSpec::Matrix(h) => Ok(h.clone()),
                ObservableSpec::Random(d) => {
                    let seed = crate::random::derive_seed(self.seed(), stream);
                    Ok(random_hermitian(*d, &mut seeded_rng(seed)))
                }
            }
        };
        Ok((build(&self.a, 1)?, build(&self.b, 2)?))
    }

    pub fn build_protocol(&self) -> crate::Result<FeedbackProtocol> {
        let mut p = match self.protocol.as_ref().ok_or_else(|| Error::Structure("no protocol configured".into()))? {
            ProtocolSource::File(path) => ProtocolFile::load(self.resolve(path))?,
            ProtocolSource::Inline(file) => file.as_ref().clone().into_protocol()?,
        };
        if let Some(r) = &self.error_matrix {
            p.error_model = Some(r.clone());
        }
        if let Some(alpha) = self.alpha {
            p.alpha = alpha;
        }
        p.validate()?;
        Ok(p)
    }
}
