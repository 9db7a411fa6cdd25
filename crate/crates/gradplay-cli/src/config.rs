//! Experiment configuration: JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gradplay::game::{build_coordination_game, build_game, build_prisoners_dilemma, GameSpec};
use gradplay::Game;

/// How the game is named: a spec file, an inline dense spec, or one of the
/// built-in builders.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<GameSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

impl GameConfig {
    pub fn coordination_default() -> Self {
        GameConfig {
            builder: Some("coordination".into()),
            epsilon: Some(0.1),
            gamma: Some(0.95),
            ..GameConfig::default()
        }
    }

    pub fn dilemma_default() -> Self {
        GameConfig {
            builder: Some("prisoners_dilemma".into()),
            epsilon: Some(0.1),
            gamma: Some(0.95),
            ..GameConfig::default()
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(0.1)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(0.95)
    }

    /// Builds the configured game. Precedence: spec file, inline spec, builder.
    pub fn resolve(&self) -> Result<Game, String> {
        if let Some(path) = &self.spec_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let spec: GameSpec = serde_json::from_str(&text)
                .map_err(|e| format!("cannot parse {}: {e}", path.display()))?;
            return build_game(&spec).map_err(|e| e.to_string());
        }
        if let Some(spec) = &self.spec {
            return build_game(spec).map_err(|e| e.to_string());
        }
        let builder = self.builder.as_deref().unwrap_or("coordination");
        let rho = self.rho.as_deref();
        match builder {
            "coordination" => {
                build_coordination_game(self.epsilon(), self.gamma(), rho).map_err(|e| e.to_string())
            }
            "prisoners_dilemma" => {
                build_prisoners_dilemma(self.epsilon(), self.gamma(), rho).map_err(|e| e.to_string())
            }
            other => Err(format!("unknown builder \"{other}\"")),
        }
    }

    /// True when the config names the coordination builder (used to pick the
    /// default reference policy for near-policy initialization).
    pub fn is_coordination_builder(&self) -> bool {
        self.spec_file.is_none()
            && self.spec.is_none()
            && self.builder.as_deref().unwrap_or("coordination") == "coordination"
    }
}

/// Initial-policy scheme for experiment trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// Rows sampled uniformly from each simplex.
    Uniform,
    /// Random feasible policy within Euclidean distance `delta` of a
    /// reference policy (the coordination game's fully mixed equilibrium by
    /// default, or a policy file).
    NearPolicy {
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference_file: Option<PathBuf>,
    },
    /// Dilemma-style start: cooperate with probability `1 - 0.4 u_i` in
    /// state 1 (`u_i` uniform), betray in state 2.
    Game2,
}

/// One config file drives every subcommand; unused fields are ignored by the
/// commands that do not need them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_gap_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))
    }
}
