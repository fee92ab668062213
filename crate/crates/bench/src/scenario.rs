use std::path::{Path, PathBuf};

use blockflow_core::costalloc::CostProfile;
use blockflow_core::model::{generate_random_model, parse_model, BlockGraph, RandomSpec};
use blockflow_core::node::Pattern;
use blockflow_core::reference::{four_chain, parallel_chains, waiting_time_model, WaitingTimeWeights};
use blockflow_runtime::Pinning;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Model XML file; relative paths resolve against the grid file.
    File(PathBuf),
    Random(RandomSpec),
    Builtin(Builtin),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Builtin {
    FourChain { weight: u64 },
    ParallelChains { chains: usize, weight: u64 },
    WaitingTime,
}

impl ModelSource {
    pub fn load(&self) -> Result<BlockGraph, BenchError> {
        Ok(match self {
            ModelSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
                parse_model(&text)?
            }
            ModelSource::Random(spec) => generate_random_model(spec)?,
            ModelSource::Builtin(Builtin::FourChain { weight }) => four_chain(*weight),
            ModelSource::Builtin(Builtin::ParallelChains { chains, weight }) => parallel_chains(*chains, *weight),
            ModelSource::Builtin(Builtin::WaitingTime) => waiting_time_model(WaitingTimeWeights::default()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSource {
    Inline(CostProfile),
    File(PathBuf),
}

impl ProfileSource {
    pub fn load(&self) -> Result<CostProfile, BenchError> {
        match self {
            ProfileSource::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
            ProfileSource::File(path) => Ok(CostProfile::load(path)?),
        }
    }
}

fn default_warmup() -> usize {
    50
}

/// One benchmark configuration. Inputs are bound to topics named
/// `<inport>_topic` and outputs to `<outport>_topic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub model: ModelSource,
    pub profile: ProfileSource,
    pub n_cores: usize,
    /// Cores to allocate for before folding onto `n_cores`; defaults to
    /// `n_cores` (no folding).
    #[serde(default)]
    pub virtual_cores: Option<usize>,
    pub pattern: Pattern,
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub pinning: Option<Pinning>,
    /// Pause between stimuli; defaults to twice the plan's estimated makespan.
    #[serde(default)]
    pub stimulus_gap_ns: Option<u64>,
}

impl Scenario {
    pub fn virtual_cores(&self) -> usize {
        self.virtual_cores.unwrap_or(self.n_cores)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidScenario(format!("{}: {m}", self.id)));
        if self.reps == 0 {
            return bad("reps must be ≥ 1".into());
        }
        if self.n_cores == 0 {
            return bad("n_cores must be ≥ 1".into());
        }
        if self.virtual_cores() < self.n_cores {
            return bad(format!(
                "virtual_cores {} < n_cores {}",
                self.virtual_cores(),
                self.n_cores
            ));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        if let ModelSource::File(p) = &mut self.model {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let ProfileSource::File(p) = &mut self.profile {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    List(Vec<Scenario>),
    Wrapped { scenarios: Vec<Scenario> },
}

/// Reads a JSON list of scenarios, either bare or as `{"scenarios": [...]}`.
pub fn load_grid(path: &Path) -> Result<Vec<Scenario>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let grid: GridFile =
        serde_json::from_str(&text).map_err(|e| BenchError::InvalidScenario(format!("{}: {e}", path.display())))?;
    let mut scenarios = match grid {
        GridFile::List(s) | GridFile::Wrapped { scenarios: s } => s,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut scenarios {
        s.resolve(base);
        s.validate()?;
    }
    Ok(scenarios)
}
