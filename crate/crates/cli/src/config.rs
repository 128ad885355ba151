use std::path::{Path, PathBuf};

use replimarket::evolution::PlausibilityBounds;
use replimarket::tuning::ParameterGrid;
use replimarket::{Domain, Mode, SimConfig, TrainConfig};
use replimarket_service::exchange::CreateEvent;
use replimarket_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Built-in generated corpora, for demos without real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticCorpus {
    /// 402 claims with the discipline mix of the replication record, plus
    /// the 30 held-out claims as the test set.
    Training,
    /// 20 well-separated claims; no test set.
    TwoCluster,
}

/// Input locations. Unset paths fall back to the files earlier stages
/// wrote into the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub market: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    /// JSON lines of scripted human orders (`tick`, `participant`, `side`, `action`).
    pub trace: Option<PathBuf>,
    pub synthetic: Option<SyntheticCorpus>,
    /// Restrict simulation to these claims.
    pub claims: Vec<String>,
    pub discipline: Option<Domain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mode: Mode,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub grid: ParameterGrid,
    pub plausibility: PlausibilityBounds,
    pub sim: SimConfig,
    pub service: ServiceConfig,
    /// Event created and opened by `serve` when the journal has none.
    pub event: Option<CreateEvent>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            mode: Mode::Hybrid,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            grid: ParameterGrid::default(),
            plausibility: PlausibilityBounds::default(),
            sim: SimConfig::default(),
            service: ServiceConfig::default(),
            event: None,
        }
    }
}

/// Command-line values that win over the file and `--set`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub ticks: Option<u64>,
}

impl Config {
    /// Defaults, then the file, then `key.path=value` pairs, then flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut doc = match Value::try_from(Config::default()) {
            Ok(Value::Table(t)) => t,
            other => return Err(CliError::Runtime(format!("default config: {other:?}"))),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let user: Table = text
                .parse()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, user);
        }
        for pair in &overrides.set {
            apply_set(&mut doc, pair)?;
        }
        let mut config: Config = Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;

        if let Some(seed) = overrides.seed {
            config.train.seed = seed;
            config.sim.seed = seed;
        }
        if let Some(mode) = overrides.mode {
            config.mode = mode;
            if let Some(event) = config.event.as_mut() {
                event.mode = Some(mode);
            }
        }
        if let Some(ticks) = overrides.ticks {
            config.sim.ticks = ticks;
            config.sim.effective_tick_floor = config.sim.effective_tick_floor.min(ticks);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| CliError::Config(format!("sim: {e}")))?;
        let b = &self.plausibility;
        if !(b.lower <= b.upper) {
            return Err(CliError::Config("plausibility: lower exceeds upper".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }

    /// Writes the resolved config next to a command's outputs.
    pub fn record(&self, out: &Path, command: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join(format!("{command}.config.toml"));
        std::fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Recursively overlays `top` onto `base`; non-table values replace.
pub fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value
/// when it parses as one, otherwise as a bare string.
pub fn apply_set(doc: &mut Table, pair: &str) -> Result<(), CliError> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{pair}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));

    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = doc;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(CliError::Config(format!(
                    "`{key}`: `{part}` is not a table"
                )))
            }
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = Config::default().to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, Config::default());
    }

    #[test]
    fn partial_nested_tables_keep_their_defaults() {
        let mut doc = match Value::try_from(Config::default()).unwrap() {
            Value::Table(t) => t,
            _ => unreachable!(),
        };
        merge(
            &mut doc,
            "[train.genome]\nbase_radius = 1.3\n".parse().unwrap(),
        );
        let c: Config = Value::Table(doc).try_into().unwrap();
        assert_eq!(c.train.genome.base_radius, 1.3);
        assert_eq!(c.train.genome.reservation_price, 0.75);
        assert_eq!(c.train.lambda, 0.2);
    }

    #[test]
    fn set_overrides_parse_values_and_strings() {
        let o = Overrides {
            set: vec![
                "train.generations=0".into(),
                "sim.lambda=0.01".into(),
                "grid.base_radius=[0.5, 1.0]".into(),
                "data.train=some/file.csv".into(),
                "mode=human-only".into(),
            ],
            ..Overrides::default()
        };
        let c = Config::resolve(None, &o).unwrap();
        assert_eq!(c.train.generations, 0);
        assert_eq!(c.sim.lambda, Some(0.01));
        assert_eq!(c.grid.base_radius, vec![0.5, 1.0]);
        assert_eq!(c.data.train.as_deref(), Some(Path::new("some/file.csv")));
        assert_eq!(c.mode, Mode::HumanOnly);
    }

    #[test]
    fn flags_win_and_ticks_clamp_the_floor() {
        let o = Overrides {
            set: vec!["sim.seed=4".into()],
            seed: Some(9),
            ticks: Some(100),
            mode: Some(Mode::Artificial),
        };
        let c = Config::resolve(None, &o).unwrap();
        assert_eq!((c.sim.seed, c.train.seed), (9, 9));
        assert_eq!((c.sim.ticks, c.sim.effective_tick_floor), (100, 100));
        assert_eq!(c.mode, Mode::Artificial);
    }

    #[test]
    fn typos_and_bad_values_are_config_errors() {
        for set in ["trian.lambda=0.1", "train.lambda=2.0", "train=3", "nokey"] {
            let o = Overrides {
                set: vec![set.into()],
                ..Overrides::default()
            };
            let err = Config::resolve(None, &o).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{set}: {err}");
        }
    }
}
