//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use erl_core::envs::Side;
use erl_core::transfer::CompositionFnDocument;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    ShapeCompare,
    ComposeCompare,
    DynamicsTransfer,
    InverseRl,
    Identifiability,
    /// Shaping sweeps over maze size and wall height.
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::ShapeCompare => "shape-compare",
            ExperimentKind::ComposeCompare => "compose-compare",
            ExperimentKind::DynamicsTransfer => "dynamics-transfer",
            ExperimentKind::InverseRl => "inverse-rl",
            ExperimentKind::Identifiability => "identifiability",
            ExperimentKind::Bench => "bench",
        }
    }

    fn default_beta_gamma(self) -> (f64, f64) {
        match self {
            ExperimentKind::ComposeCompare => (2.0, 0.98),
            _ => (3.0, 0.99),
        }
    }
}

/// Where the environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSource {
    WallMaze {
        size: usize,
        #[serde(default = "default_wall_height")]
        wall_height: usize,
        #[serde(default)]
        goal: Option<Side>,
    },
    Spiral {
        size: usize,
    },
    /// Inline map rows using `#`, `.`, `G`, `S`.
    Map {
        rows: Vec<String>,
    },
    /// Grid document (`grid`, `slip_prob`, `step_reward`, `goal_reward`, `goal_values`).
    File {
        path: PathBuf,
    },
}

fn default_wall_height() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub grid: Option<GridSource>,
    #[serde(default)]
    pub task_file: Option<PathBuf>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Stopping tolerance of the traced solves.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_inits")]
    pub num_random_inits: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Bound on every verified identity residual.
    #[serde(default = "default_identity_tolerance")]
    pub identity_tolerance: f64,
    /// Initial tables are drawn from `U[-s/(1-gamma), s/(1-gamma)]`; `0` starts from zeros.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub slip: f64,
    /// Slip probability of the second environment (dynamics transfer, identifiability).
    #[serde(default)]
    pub target_slip: Option<f64>,
    #[serde(default)]
    pub composition: Option<CompositionFnDocument>,
    /// Member task files for a composition.
    #[serde(default)]
    pub members: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub potential: Option<PathBuf>,
    #[serde(default)]
    pub potential_from_solution: Option<PathBuf>,
    #[serde(default)]
    pub psi: Option<PathBuf>,
    #[serde(default)]
    pub target_task_file: Option<PathBuf>,
    #[serde(default)]
    pub gamma_tilde: Option<f64>,
    #[serde(default)]
    pub identifiability_literal: bool,
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub value_file: Option<PathBuf>,
    /// Size of the random inverse-RL instance when no task file is given.
    #[serde(default = "default_num_states")]
    pub num_states: usize,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub wall_heights: Option<Vec<usize>>,
    #[serde(default)]
    pub svg: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    erl_core::solver::DEFAULT_MAX_ITER
}

fn default_thresholds() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}

fn default_inits() -> usize {
    10
}

fn default_identity_tolerance() -> f64 {
    1e-8
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_num_states() -> usize {
    6
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub slip: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub svg: bool,
    pub identifiability_literal: bool,
}

impl ExperimentConfig {
    /// Config with every field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut config: ExperimentConfig =
            serde_json::from_str("{}").expect("defaults deserialize");
        config.kind = Some(kind);
        config
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            serde_json::from_str(text).map_err(|source| HarnessError::Parse {
                path: base_dir.to_path_buf(),
                source,
            })?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Fixes the kind (the subcommand wins over a missing `kind`, but a
    /// conflicting `kind` is an error) and applies overrides.
    pub fn resolve(mut self, kind: ExperimentKind, overrides: &Overrides) -> Result<Self> {
        match self.kind {
            Some(k) if k != kind => {
                return Err(HarnessError::Input(format!(
                    "config is for `{}` but the command runs `{}`",
                    k.name(),
                    kind.name()
                )))
            }
            _ => self.kind = Some(kind),
        }
        if let Some(out) = &overrides.out {
            self.output_dir = Some(out.clone());
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(slip) = overrides.slip {
            self.slip = slip;
        }
        if let Some(beta) = overrides.beta {
            self.beta = Some(beta);
        }
        if let Some(gamma) = overrides.gamma {
            self.gamma = Some(gamma);
        }
        if let Some(size) = overrides.size {
            self.grid = Some(match self.grid.take() {
                Some(GridSource::WallMaze {
                    wall_height, goal, ..
                }) => GridSource::WallMaze {
                    size,
                    wall_height,
                    goal,
                },
                Some(GridSource::Spiral { .. }) => GridSource::Spiral { size },
                Some(other) => {
                    return Err(HarnessError::Input(format!(
                        "--size applies to generated mazes, not {other:?}"
                    )))
                }
                None => default_grid(kind, size),
            });
        }
        self.svg |= overrides.svg;
        self.identifiability_literal |= overrides.identifiability_literal;
        let (beta, gamma) = kind.default_beta_gamma();
        self.beta.get_or_insert(beta);
        self.gamma.get_or_insert(gamma);
        self.validate()?;
        Ok(self)
    }

    pub fn kind(&self) -> ExperimentKind {
        self.kind.unwrap_or(ExperimentKind::Solve)
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.kind().default_beta_gamma().0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(self.kind().default_beta_gamma().1)
    }

    /// The configured grid, or the kind's default maze.
    pub fn grid_or_default(&self) -> GridSource {
        self.grid
            .clone()
            .unwrap_or_else(|| default_grid(self.kind(), 11))
    }

    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.kind().name()))
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Input(msg));
        if !(self.tolerance > 0.0) {
            return bad(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if !(self.identity_tolerance > 0.0) {
            return bad(format!(
                "identity_tolerance must be positive, got {}",
                self.identity_tolerance
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if self.num_random_inits == 0 {
            return bad("num_random_inits must be at least 1".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!(
                "init_scale must be finite and non-negative, got {}",
                self.init_scale
            ));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("thresholds must be positive".into());
        }
        let needs_task_source = matches!(
            self.kind(),
            ExperimentKind::Solve
                | ExperimentKind::DynamicsTransfer
                | ExperimentKind::Identifiability
        );
        if needs_task_source && self.grid.is_some() && self.task_file.is_some() {
            return bad("give either `grid` or `task_file`, not both".into());
        }
        if self.kind() == ExperimentKind::ComposeCompare
            && self.members.is_some()
            && self.grid.is_some()
        {
            return bad("give either `members` or `grid`, not both".into());
        }
        Ok(())
    }
}

fn default_grid(kind: ExperimentKind, size: usize) -> GridSource {
    match kind {
        ExperimentKind::ComposeCompare => GridSource::Spiral { size },
        _ => GridSource::WallMaze {
            size,
            wall_height: 1,
            goal: None,
        },
    }
}
