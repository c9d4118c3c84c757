//! Experiment configuration files.
//!
//! Line-oriented `key = value` text grouped under section headers. Blank lines
//! and lines starting with `#` are ignored. Unknown sections or keys are
//! errors.
//!
//! ```text
//! [problem]
//! setup = constraint_coupled   # consensus | constraint_coupled | aggregative | game
//! agents = 10
//! local_dim = 2
//! constraints = 2              # constraint_coupled, game
//! agg_dim = 2                  # aggregative, game
//! seed = 1
//! instance = saved.txt         # optional, replaces the generator; relative to this file
//!
//! [graph]
//! edge_prob = 0.3
//! seed = 1                     # defaults to the problem seed
//! retries = 100
//!
//! [block]
//! gamma = 0.1
//! nu = 1
//! rho = 0.9
//!
//! [tracker]
//! kind = perturbed             # perturbed | pi_dac | r_admm | exact
//! k_p = 0.4                    # pi_dac
//! k_i = 0.1                    # pi_dac
//! gamma = 0.1                  # pi_dac
//! rho = 0.9                    # r_admm
//! beta = 0.5                   # r_admm
//!
//! [run]
//! delta = 0.1                  # used by `run`
//! deltas = 1, 0.5, 0.1, 0.05   # used by `sweep`
//! horizon = 100000
//! record_every = 100
//! states = false               # full-state columns in trace files
//! out = results/baseline       # optional, relative to this file
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use distmeta::blocks::BlockParams;
use distmeta::trackers::{PiDacParams, RAdmmParams, TrackerKind};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupKind {
    Consensus,
    ConstraintCoupled,
    Aggregative,
    Game,
}

impl FromStr for SetupKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "consensus" => Ok(Self::Consensus),
            "constraint_coupled" => Ok(Self::ConstraintCoupled),
            "aggregative" => Ok(Self::Aggregative),
            "game" => Ok(Self::Game),
            other => Err(format!("unknown setup `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setup: SetupKind,
    /// Serialized instance used instead of the generator.
    pub instance: Option<PathBuf>,
    pub agents: usize,
    pub local_dim: usize,
    pub constraints: usize,
    pub agg_dim: usize,
    pub problem_seed: u64,
    pub edge_prob: f64,
    pub graph_seed: u64,
    pub graph_retries: usize,
    pub block: BlockParams,
    pub tracker: TrackerKind,
    pub delta: Option<f64>,
    pub deltas: Vec<f64>,
    pub horizon: usize,
    pub record_every: usize,
    pub record_states: bool,
    pub out: Option<PathBuf>,
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("problem", &["setup", "instance", "agents", "local_dim", "constraints", "agg_dim", "seed"]),
    ("graph", &["edge_prob", "seed", "retries"]),
    ("block", &["gamma", "nu", "rho"]),
    ("tracker", &["kind", "k_p", "k_i", "gamma", "rho", "beta"]),
    ("run", &["delta", "deltas", "horizon", "record_every", "states", "out"]),
];

struct Entries {
    values: HashMap<(String, String), (usize, String)>,
}

impl Entries {
    fn raw(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.values.get(&(section.to_string(), key.to_string()))
    }

    fn get<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| CliError::Config {
                line: *line,
                msg: format!("[{section}] {key}: cannot parse `{v}`"),
            }),
        }
    }

    fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        self.raw(section, key)
            .map(|(line, v)| {
                v.parse().map_err(|_| CliError::Config {
                    line: *line,
                    msg: format!("[{section}] {key}: cannot parse `{v}`"),
                })
            })
            .transpose()
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config {
        line: 0,
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses configuration text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config { line: line_no, msg };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                let known = SECTIONS.iter().find(|(s, _)| *s == name);
                section = Some(known.ok_or_else(|| err(format!("unknown section [{name}]")))?.0);
                continue;
            }
            let sec = section.ok_or_else(|| err("key outside of a section".into()))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let allowed = SECTIONS.iter().find(|(s, _)| *s == sec).map_or(&[][..], |(_, k)| *k);
            if !allowed.contains(&key) {
                return Err(err(format!("unknown key `{key}` in [{sec}]")));
            }
            let slot = (sec.to_string(), key.to_string());
            if values.contains_key(&slot) {
                return Err(err(format!("duplicate key `{key}` in [{sec}]")));
            }
            values.insert(slot, (line_no, value.trim().to_string()));
        }
        let e = Entries { values };

        let setup: SetupKind = match e.raw("problem", "setup") {
            Some((line, v)) => v.parse().map_err(|msg| CliError::Config { line: *line, msg })?,
            None => return Err(invalid("[problem] setup is required")),
        };
        let problem_seed = e.get("problem", "seed", 1u64)?;
        let tracker = match e.get("tracker", "kind", String::from("perturbed"))?.as_str() {
            "perturbed" => TrackerKind::Perturbed,
            "exact" => TrackerKind::Exact,
            "pi_dac" => {
                let d = PiDacParams::default();
                TrackerKind::PiDac(PiDacParams {
                    gamma: e.get("tracker", "gamma", d.gamma)?,
                    k_p: e.get("tracker", "k_p", d.k_p)?,
                    k_i: e.get("tracker", "k_i", d.k_i)?,
                })
            }
            "r_admm" => {
                let d = RAdmmParams::default();
                TrackerKind::RAdmm(RAdmmParams {
                    rho: e.get("tracker", "rho", d.rho)?,
                    beta: e.get("tracker", "beta", d.beta)?,
                })
            }
            other => return Err(invalid(format!("unknown tracker kind `{other}`"))),
        };
        let d = BlockParams::default();
        let block = BlockParams::new(
            e.get("block", "gamma", d.gamma)?,
            e.get("block", "nu", d.nu)?,
            e.get("block", "rho", d.rho)?,
        )
        .map_err(|err| invalid(err.to_string()))?;
        let deltas = match e.raw("run", "deltas") {
            None => Vec::new(),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Config {
                    line: *line,
                    msg: format!("[run] deltas: cannot parse `{v}`"),
                })?,
        };
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let cfg = Self {
            setup,
            instance: e.opt::<PathBuf>("problem", "instance")?.map(resolve),
            agents: e.get("problem", "agents", 10)?,
            local_dim: e.get("problem", "local_dim", 2)?,
            constraints: e.get("problem", "constraints", 2)?,
            agg_dim: e.get("problem", "agg_dim", 2)?,
            problem_seed,
            edge_prob: e.get("graph", "edge_prob", 0.3)?,
            graph_seed: e.get("graph", "seed", problem_seed)?,
            graph_retries: e.get("graph", "retries", 100)?,
            block,
            tracker,
            delta: e.opt("run", "delta")?,
            deltas,
            horizon: e.get("run", "horizon", 100_000)?,
            record_every: e.get("run", "record_every", 100)?,
            record_states: e.get("run", "states", false)?,
            out: e.opt::<PathBuf>("run", "out")?.map(resolve),
        };
        cfg.check_ranges()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn check_ranges(&self) -> Result<(), CliError> {
        if self.instance.is_none() && (self.agents == 0 || self.local_dim == 0) {
            return Err(invalid("agents and local_dim must be positive"));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(invalid(format!("edge_prob must lie in [0, 1], got {}", self.edge_prob)));
        }
        for d in self.delta.iter().chain(&self.deltas) {
            if !(0.0..=1.0).contains(d) {
                return Err(invalid(format!("delta must lie in [0, 1], got {d}")));
            }
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be positive"));
        }
        if let Some(p) = &self.instance {
            if !p.exists() {
                return Err(invalid(format!("instance file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Replaces the problem and graph seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.problem_seed = seed;
        self.graph_seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[problem]\nsetup = constraint_coupled\n";

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text, Path::new("."))
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.agents, 10);
        assert_eq!(c.graph_seed, c.problem_seed);
        assert_eq!(c.tracker, TrackerKind::Perturbed);
        assert_eq!(c.block, BlockParams::default());
        assert!(c.delta.is_none());
    }

    #[test]
    fn full_file() {
        let text = format!(
            "{BASE}seed = 4 # trailing comment\n[graph]\nedge_prob = 0.5\n[tracker]\nkind = pi_dac\nk_p = 2\n\
             [run]\ndelta = 0.2\ndeltas = 1, 0.5\nhorizon = 0\n"
        );
        let c = parse(&text).unwrap();
        assert_eq!(c.problem_seed, 4);
        assert_eq!(c.graph_seed, 4);
        assert_eq!(c.edge_prob, 0.5);
        assert!(matches!(c.tracker, TrackerKind::PiDac(p) if p.k_p == 2.0 && p.k_i == 0.1));
        assert_eq!(c.deltas, vec![1.0, 0.5]);
        assert_eq!(c.horizon, 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse(&format!("{BASE}agents = many\n")) {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse(&format!("{BASE}colour = red\n")).is_err());
        assert!(parse("[nope]\n").is_err());
        assert!(parse("setup = game\n").is_err());
        assert!(parse(&format!("{BASE}[run]\ndelta = 1.5\n")).is_err());
        assert!(parse(&format!("{BASE}[block]\ngamma = -1\n")).is_err());
        assert!(parse(&format!("{BASE}seed = 1\nseed = 2\n")).is_err());
        assert!(parse("[problem]\nsetup = nope\n").is_err());
    }

    #[test]
    fn seed_override_applies_to_graph() {
        let c = parse(&format!("{BASE}[graph]\nseed = 9\n")).unwrap().with_seed(3);
        assert_eq!((c.problem_seed, c.graph_seed), (3, 3));
    }
}
