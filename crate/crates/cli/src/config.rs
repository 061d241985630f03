//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use memsched::sim::TableConfig;
use memsched::{
    Belief, DownlinkSystem, EvalConfig, EvalMode, MarkovChannel, PayoffPair, PolicyKind,
    RewardModel, SystemState, UserModel,
};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IndexCurve,
    Threshold,
    Simulate,
    HorizonSweep,
    MemorySweep,
    Table,
    Trace,
    Validate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub p: f64,
    pub r: f64,
    pub delta: f64,
    /// `(gamma_h, gamma_l)` estimator pairs; the mid pair when omitted.
    pub reward_pairs: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialBeliefs {
    Named(String),
    Values(Vec<f64>),
}

impl Default for InitialBeliefs {
    fn default() -> Self {
        InitialBeliefs::Named("steady".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub horizon: usize,
    pub mode: ModeSpec,
    pub runs: usize,
    pub convergence_pct: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            horizon: 10,
            mode: ModeSpec::Exact,
            runs: 10_000,
            convergence_pct: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSpec {
    pub points: usize,
}

impl Default for IndexSpec {
    fn default() -> Self {
        IndexSpec { points: 1001 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSpec {
    pub omegas: Vec<f64>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            omegas: (0..=110).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySweepSpec {
    pub users: usize,
    pub p_grid: Vec<f64>,
    pub delta: f64,
    pub reward_pairs: Option<Vec<[f64; 2]>>,
}

impl Default for MemorySweepSpec {
    fn default() -> Self {
        MemorySweepSpec {
            users: 10,
            p_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            delta: 0.2,
            reward_pairs: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    pub count: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub delta: f64,
    pub reward_pairs: Option<Vec<[f64; 2]>>,
    pub max_horizon: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            count: 20,
            n_min: 4,
            n_max: 5,
            beta_min: 0.45,
            beta_max: 0.67,
            delta: 0.2,
            reward_pairs: None,
            max_horizon: 14,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSpec {
    pub pi0: f64,
    pub horizon: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            pi0: 0.3,
            horizon: 20,
        }
    }
}

fn default_policies() -> Vec<String> {
    PolicyKind::ALL
        .iter()
        .map(|k| k.name().to_string())
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    pub beta: Option<f64>,
    #[serde(default)]
    pub initial_beliefs: InitialBeliefs,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalSpec,
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub index: IndexSpec,
    #[serde(default)]
    pub threshold: ThresholdSpec,
    #[serde(default)]
    pub memory_sweep: MemorySweepSpec,
    #[serde(default)]
    pub table: TableSpec,
    #[serde(default)]
    pub trace: TraceSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Configuration used by `validate` when no file is given: the five
    /// channels of the horizon-sweep setup.
    pub fn builtin() -> Self {
        let pairs = [
            (0.2, 0.75),
            (0.6, 0.25),
            (0.8, 0.3),
            (0.4, 0.7),
            (0.65, 0.55),
        ];
        let mut cfg = Self::parse("beta = 0.8").expect("builtin config");
        cfg.users = pairs
            .iter()
            .map(|&(p, r)| UserSpec {
                p,
                r,
                delta: 0.2,
                reward_pairs: None,
            })
            .collect();
        cfg
    }

    pub fn beta(&self) -> Result<f64> {
        let Some(beta) = self.beta else {
            bail!("config field `beta` is required for this experiment");
        };
        if !(0.0..1.0).contains(&beta) {
            bail!("config field `beta` = {beta} must lie in [0, 1)");
        }
        Ok(beta)
    }

    pub fn user_models(&self) -> Result<Vec<UserModel>> {
        if self.users.is_empty() {
            bail!("config needs at least one [[users]] entry");
        }
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let reward = reward_model(u.delta, u.reward_pairs.as_deref())
                    .with_context(|| format!("users[{i}].reward_pairs"))?;
                let channel =
                    MarkovChannel::new(u.p, u.r, u.delta).with_context(|| format!("users[{i}]"))?;
                Ok(UserModel::new(channel, reward)?)
            })
            .collect()
    }

    pub fn system(&self) -> Result<DownlinkSystem> {
        Ok(DownlinkSystem::new(self.user_models()?, self.beta()?)?)
    }

    pub fn initial_state(&self, sys: &DownlinkSystem) -> Result<SystemState> {
        match &self.initial_beliefs {
            InitialBeliefs::Named(name) if name == "steady" => Ok(sys.steady_state()),
            InitialBeliefs::Named(name) => {
                bail!("initial_beliefs must be \"steady\" or a list of beliefs, got {name:?}")
            }
            InitialBeliefs::Values(v) => {
                if v.len() != sys.len() {
                    bail!(
                        "initial_beliefs has {} entries for {} users",
                        v.len(),
                        sys.len()
                    );
                }
                Ok(SystemState::from_values(v).context("initial_beliefs")?)
            }
        }
    }

    /// A single shared initial belief, `None` for steady state.
    pub fn common_initial(&self) -> Result<Option<f64>> {
        match &self.initial_beliefs {
            InitialBeliefs::Named(name) if name == "steady" => Ok(None),
            InitialBeliefs::Named(name) => {
                bail!("initial_beliefs must be \"steady\" or a list of beliefs, got {name:?}")
            }
            InitialBeliefs::Values(v) => match v.as_slice() {
                [x] => Ok(Some(Belief::new(*x).context("initial_beliefs")?.get())),
                _ => bail!("this experiment needs a single initial belief"),
            },
        }
    }

    pub fn policies(&self) -> Result<Vec<PolicyKind>> {
        self.policies
            .iter()
            .map(|s| s.parse::<PolicyKind>().context("policies"))
            .collect()
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let mode = match self.eval.mode {
            ModeSpec::Exact => EvalMode::Exact,
            ModeSpec::MonteCarlo => EvalMode::MonteCarlo {
                runs: self.eval.runs,
                seed: self.seed,
            },
        };
        let cfg = EvalConfig {
            horizon: self.eval.horizon,
            mode,
            convergence_pct: self.eval.convergence_pct,
        };
        cfg.validate().context("[eval]")?;
        Ok(cfg)
    }

    pub fn table_config(&self) -> Result<TableConfig> {
        let t = &self.table;
        Ok(TableConfig {
            count: t.count,
            n_min: t.n_min,
            n_max: t.n_max,
            beta_min: t.beta_min,
            beta_max: t.beta_max,
            reward: reward_model(t.delta, t.reward_pairs.as_deref()).context("[table]")?,
            seed: self.seed,
            convergence_pct: self.eval.convergence_pct,
            max_horizon: t.max_horizon,
        })
    }

    pub fn memory_reward(&self) -> Result<RewardModel> {
        let m = &self.memory_sweep;
        reward_model(m.delta, m.reward_pairs.as_deref()).context("[memory_sweep]")
    }
}

fn reward_model(delta: f64, pairs: Option<&[[f64; 2]]>) -> Result<RewardModel> {
    Ok(match pairs {
        None => RewardModel::default_for(delta)?,
        Some(pairs) => {
            let pairs: Vec<PayoffPair> =
                pairs.iter().map(|&[h, l]| PayoffPair::new(h, l)).collect();
            RewardModel::with_pairs(delta, &pairs)?
        }
    })
}
