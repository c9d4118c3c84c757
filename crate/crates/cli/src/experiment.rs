use std::path::{Path, PathBuf};
use std::sync::Arc;

use distmeta::blocks::{Block, Setup};
use distmeta::graph::{erdos_renyi, Network};
use distmeta::instance::read_instance;
use distmeta::interconnection::{assemble, default_bindings, AssemblyConfig, DistributedAlgorithm};
use distmeta::problem::{
    generate_quadratic_aggregative, generate_quadratic_cc, generate_quadratic_consensus,
    generate_quadratic_game,
};

use crate::config::{ExperimentConfig, SetupKind};
use crate::{CliError, Overrides};

/// Problem instance described by a configuration (generated or loaded).
pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    if let Some(path) = &cfg.instance {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let setup = read_instance(&text)?;
        let kind = match &setup {
            Setup::Consensus(_) => SetupKind::Consensus,
            Setup::ConstraintCoupled(_) => SetupKind::ConstraintCoupled,
            Setup::Aggregative(_) => SetupKind::Aggregative,
            Setup::Game(_) => SetupKind::Game,
        };
        if kind != cfg.setup {
            return Err(CliError::Config {
                line: 0,
                msg: format!("instance file holds {kind:?}, config says {:?}", cfg.setup),
            });
        }
        return Ok(setup);
    }
    let (n, d, s) = (cfg.agents, cfg.local_dim, cfg.problem_seed);
    Ok(match cfg.setup {
        SetupKind::Consensus => Setup::Consensus(Arc::new(generate_quadratic_consensus(n, d, s)?)),
        SetupKind::ConstraintCoupled => {
            Setup::ConstraintCoupled(Arc::new(generate_quadratic_cc(n, d, cfg.constraints, s)?))
        }
        SetupKind::Aggregative => {
            Setup::Aggregative(Arc::new(generate_quadratic_aggregative(n, d, cfg.agg_dim, s)?))
        }
        SetupKind::Game => Setup::Game(Arc::new(generate_quadratic_game(
            n,
            d,
            cfg.agg_dim,
            cfg.constraints,
            s,
        )?)),
    })
}

/// Random communication graph with Metropolis weights for `n_agents`.
pub fn build_network(cfg: &ExperimentConfig, n_agents: usize) -> Result<Arc<Network>, CliError> {
    let graph = erdos_renyi(n_agents, cfg.edge_prob, cfg.graph_seed, cfg.graph_retries)?;
    Ok(Arc::new(Network::metropolis(graph)?))
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub block: Block,
    pub network: Arc<Network>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self, CliError> {
        let setup = build_setup(&config)?;
        let block = Block::new(setup, config.block);
        let network = build_network(&config, block.n_agents())?;
        Ok(Self {
            config,
            block,
            network,
        })
    }

    /// Assembles the block with one tracker of the configured kind per
    /// aggregate component.
    pub fn algorithm(&self, delta: f64) -> Result<DistributedAlgorithm, CliError> {
        Ok(assemble(AssemblyConfig {
            delta,
            block: self.block.clone(),
            bindings: default_bindings(&self.block, self.config.tracker),
            network: self.network.clone(),
        })?)
    }
}

/// Loads a configuration and applies the seed override.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match overrides.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

/// Output directory: `--out`, then the config's `out`, then the environment
/// root joined with the config file stem, then `runs/<stem>`.
pub fn output_dir(config_path: &Path, cfg: &ExperimentConfig, overrides: &Overrides) -> PathBuf {
    if let Some(out) = overrides.out.clone().or_else(|| cfg.out.clone()) {
        return out;
    }
    let stem = config_path
        .file_stem()
        .map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned());
    overrides
        .env_root
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(stem)
}
