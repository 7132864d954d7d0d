//! Scene configuration: the JSON document describing wavelength, receiver
//! array, and scatterer clusters. Field names are the wire contract; unknown
//! keys are rejected.
//!
//! ```json
//! {
//!   "wavelength": 0.05,
//!   "array": { "ny": 17, "nz": 17, "dy": 0.025, "dz": 0.025 },
//!   "scatterers": [
//!     { "center": [25.0, 25.0, 25.0], "normal": [-1.0, -1.0, -1.0],
//!       "radius": 2.0, "concentration": 0.0, "power": 1.0 }
//!   ]
//! }
//! ```
//!
//! Units are meters throughout; `normal` is renormalized on load.

use crate::correlation::CorrelationKernel;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, ScattererCluster, Vec3, Wave};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub wavelength: f64,
    pub array: ArraySection,
    pub scatterers: Vec<ScattererSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub ny: usize,
    pub nz: usize,
    pub dy: f64,
    pub dz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererSection {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub radius: f64,
    pub concentration: f64,
    pub power: f64,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scene JSON: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("scene JSON encode: {e}")))?;
        Ok(std::fs::write(path, text)?)
    }

    pub fn wave(&self) -> Result<Wave> {
        Wave::new(self.wavelength)
    }

    pub fn array(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.array.ny, self.array.nz, self.array.dy, self.array.dz)
    }

    pub fn clusters(&self) -> Result<Vec<ScattererCluster>> {
        self.scatterers
            .iter()
            .map(|s| {
                ScattererCluster::new(
                    Vec3::from(s.center),
                    Vec3::from(s.normal),
                    s.radius,
                    s.concentration,
                    s.power,
                )
            })
            .collect()
    }

    /// Validates everything and builds the correlation kernel.
    pub fn kernel(&self) -> Result<CorrelationKernel> {
        CorrelationKernel::new(self.clusters()?, self.wave()?)
    }
}
