//! Declarative run configuration read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use superstar_core::bartik::Skill;
use superstar_core::decomposition::WindowSpec;
use superstar_core::econometrics::RegressionSpec;
use superstar_core::model::{ModelParams, SimPanelConfig};
use superstar_core::panel::{CapitalScope, Field, Schema};
use superstar_core::spillovers::{SuperstarRule, UnknownSectorPolicy};
use superstar_core::tfp::ProxySpec;
use superstar_core::Error;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Root of all randomness. Required whenever a simulation runs.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub impute: ImputeOptions,
    #[serde(default)]
    pub superstar: SuperstarRule,
    #[serde(default)]
    pub tfp: ProxySpec,
    #[serde(default)]
    pub spillovers: SpilloverOptions,
    #[serde(default)]
    pub instruments: InstrumentOptions,
    #[serde(default)]
    pub selection: SelectionOptions,
    #[serde(default)]
    pub regressions: Vec<NamedRegression>,
    #[serde(default)]
    pub windows: Vec<WindowSpec>,
    #[serde(default)]
    pub decomposition: DecompositionOptions,
    pub simulate: Option<SimulateSection>,
    /// Directory the manifest was read from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub panel: Option<PathBuf>,
    pub io_table: Option<PathBuf>,
    pub tariffs: Option<PathBuf>,
    pub deflators: Option<PathBuf>,
    #[serde(default = "default_base_year")]
    pub deflator_base_year: i32,
    pub regions: Option<PathBuf>,
    pub province_island: Option<PathBuf>,
    /// Canonical column name to the header used in the panel file.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

fn default_base_year() -> i32 {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub deflate: bool,
    pub impute: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            deflate: true,
            impute: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeOptions {
    pub gap_year: Option<i32>,
    pub gap_fields: Vec<Field>,
    pub capital_year: Option<i32>,
    pub capital_scope: CapitalScope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpilloverOptions {
    /// Batch runs drop cells of sectors missing from the IO table and warn.
    pub unknown_sector: UnknownSectorPolicy,
}

impl Default for SpilloverOptions {
    fn default() -> Self {
        SpilloverOptions {
            unknown_sector: UnknownSectorPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstrumentOptions {
    /// Defaults to the first panel year.
    pub base_year: Option<i32>,
    pub skill: Skill,
}

/// Logit selection model behind the `ipw` weight column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionOptions {
    pub indicator: String,
    pub controls: Vec<String>,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            indicator: "non_superstar".into(),
            controls: vec!["absorptive".into(), "hhi".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedRegression {
    pub name: String,
    /// Dummies interacted with every endogenous regressor and, pairwise, its
    /// instrument.
    #[serde(default)]
    pub interact_with: Vec<String>,
    #[serde(flatten)]
    pub spec: RegressionSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionOptions {
    pub splits: Vec<Split>,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        DecompositionOptions {
            splits: vec![Split::General, Split::Ownership],
        }
    }
}

/// How firms are labelled for the grouped decompositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// `superstar` / `non_superstar`.
    General,
    /// `foreign` / `domestic` superstars and `non_superstar`.
    Ownership,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub panel: SimPanelConfig,
    #[serde(default)]
    pub model: ModelParams,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: RunManifest =
            toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        match cli_out {
            Some(p) => p.to_path_buf(),
            None => self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("out"))),
        }
    }

    /// Simulation supplies the inputs when no panel file is named.
    pub fn simulates(&self) -> bool {
        self.inputs.panel.is_none() && self.simulate.is_some()
    }

    pub fn schema(&self) -> Schema {
        self.inputs
            .columns
            .iter()
            .fold(Schema::default(), |s, (canon, header)| s.with(canon, header))
    }

    /// Checks every cross-reference and parameter; errors name a dotted field
    /// path.
    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = &self.simulate {
            if self.seed.is_none() {
                bail!(field_error("seed", "required when a simulation is requested"));
            }
            scoped("simulate", sim.panel.validate())?;
            scoped("simulate.model", sim.model.validate())?;
        }
        if !self.simulates() {
            let required = [
                ("inputs.panel", &self.inputs.panel),
                ("inputs.io_table", &self.inputs.io_table),
                ("inputs.tariffs", &self.inputs.tariffs),
            ];
            for (field, p) in required {
                if p.is_none() {
                    bail!(field_error(field, "must be set when no simulation supplies it"));
                }
            }
            if self.stages.deflate && self.inputs.deflators.is_none() {
                bail!(field_error(
                    "inputs.deflators",
                    "must be set while the deflate stage is on"
                ));
            }
            let named = [
                ("inputs.panel", &self.inputs.panel),
                ("inputs.io_table", &self.inputs.io_table),
                ("inputs.tariffs", &self.inputs.tariffs),
                ("inputs.deflators", &self.inputs.deflators),
                ("inputs.regions", &self.inputs.regions),
                ("inputs.province_island", &self.inputs.province_island),
            ];
            for (field, p) in named {
                if let Some(p) = p {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        bail!(field_error(field, &format!("{} does not exist", full.display())));
                    }
                }
            }
        }
        if self.stages.impute && self.impute.gap_year.is_some() && self.impute.gap_fields.is_empty() {
            bail!(field_error(
                "impute.gap_fields",
                "must list fields when gap_year is set"
            ));
        }
        scoped("superstar", self.superstar.validate())?;
        scoped("tfp", self.tfp.validate())?;
        let mut names = std::collections::BTreeSet::new();
        for (i, r) in self.regressions.iter().enumerate() {
            if r.name.is_empty() || !names.insert(r.name.as_str()) {
                bail!(field_error(
                    &format!("regressions[{i}].name"),
                    "must be non-empty and unique"
                ));
            }
            if !r.interact_with.is_empty() && r.spec.endogenous.len() != r.spec.instruments.len() {
                bail!(field_error(
                    &format!("regressions[{i}].interact_with"),
                    "needs exactly one instrument per endogenous regressor",
                ));
            }
            scoped(&format!("regressions[{i}]"), r.spec.validate())?;
        }
        for (i, w) in self.windows.iter().enumerate() {
            scoped(&format!("windows[{i}]"), w.validate())?;
        }
        Ok(())
    }
}

fn field_error(field: &str, reason: &str) -> Error {
    Error::config(field, reason)
}

/// Prefixes the field of a configuration error with `prefix`.
fn scoped(prefix: &str, r: superstar_core::Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { field, reason } => Error::config(format!("{prefix}.{field}"), reason).into(),
        other => anyhow::Error::from(other).context(prefix.to_string()),
    })
}
