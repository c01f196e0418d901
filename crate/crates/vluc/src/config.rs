//! TOML experiment specifications.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use crate::dataset::WindowSpec;
use crate::error::{Result, VlucError};
use crate::models::TrainConfig;
use crate::rasterize::MeshSpec;

fn default_seed() -> u64 {
    0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_delta_tau() -> i64 {
    600
}
fn default_max_speed() -> f64 {
    50.0
}
fn default_k() -> u64 {
    10
}
fn default_filters() -> usize {
    32
}
fn default_lambda() -> f64 {
    0.3
}
fn default_variant() -> String {
    "plain".to_string()
}
fn default_target() -> String {
    "density".to_string()
}
fn default_records_per_day() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Raw trajectory CSV; omitted when the run is fully synthetic.
    pub raw_csv: Option<PathBuf>,
    #[serde(default = "default_delta_tau")]
    pub delta_tau: i64,
    /// Implausible-speed threshold for cleaning, m/s.
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    #[serde(default = "default_k")]
    pub k_anonymity: u64,
}

impl Default for DataSpec {
    fn default() -> DataSpec {
        DataSpec {
            raw_csv: None,
            delta_tau: default_delta_tau(),
            max_speed: default_max_speed(),
            k_anonymity: default_k(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_objects: usize,
    pub n_days: usize,
    /// YYYY-MM-DD
    pub start_date: String,
    #[serde(default = "default_records_per_day")]
    pub records_per_day: usize,
    #[serde(default)]
    pub closed_world: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// ha | cy | cnn | convlstm | multitask | vluc-net
    pub kind: String,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// density | flow
    #[serde(default = "default_target")]
    pub target: String,
}

impl Default for ModelSpec {
    fn default() -> ModelSpec {
        ModelSpec {
            kind: "vluc-net".to_string(),
            variant: default_variant(),
            filters: default_filters(),
            lambda: default_lambda(),
            target: default_target(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub data: DataSpec,
    pub synth: Option<SynthSpec>,
    pub windows: WindowSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Holiday dates, YYYY-MM-DD.
    #[serde(default)]
    pub holidays: Vec<String>,
}

pub fn parse_date(text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|e| VlucError::Config(format!("bad date '{text}': {e}")))
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = toml::from_str(&text)
            .map_err(|e| VlucError::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        self.windows.validate()?;
        if self.data.raw_csv.is_none() && self.synth.is_none() {
            return Err(VlucError::Config(
                "specify either data.raw_csv or a [synth] section".into(),
            ));
        }
        if self.data.delta_tau <= 0 {
            return Err(VlucError::Config("data.delta_tau must be positive".into()));
        }
        match self.model.kind.as_str() {
            "ha" | "cy" | "cnn" | "convlstm" | "multitask" | "vluc-net" => {}
            other => {
                return Err(VlucError::Config(format!(
                    "unknown model kind '{other}' (expected ha|cy|cnn|convlstm|multitask|vluc-net)"
                )))
            }
        }
        match self.model.target.as_str() {
            "density" | "flow" => {}
            other => {
                return Err(VlucError::Config(format!(
                    "unknown target '{other}' (expected density|flow)"
                )))
            }
        }
        for h in &self.holidays {
            parse_date(h)?;
        }
        if let Some(synth) = &self.synth {
            parse_date(&synth.start_date)?;
            if synth.n_objects == 0 || synth.n_days == 0 {
                return Err(VlucError::Config("synth.n_objects/n_days must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn holiday_dates(&self) -> Result<Vec<NaiveDate>> {
        self.holidays.iter().map(|h| parse_date(h)).collect()
    }
}
