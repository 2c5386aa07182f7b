use std::path::Path;

use ntk_core::data_io::DatasetManifest;
use ntk_core::export::write_json;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: resolved settings, datasets and outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub settings: serde_json::Value,
    pub datasets: Vec<DatasetManifest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &impl Serialize, datasets: Vec<DatasetManifest>, outputs: &[&str]) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::to_value(settings)?,
            datasets,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST_FILE), self)?;
        Ok(())
    }
}
