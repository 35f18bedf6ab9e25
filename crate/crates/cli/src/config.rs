use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use plfn::dataset::{SynthConfig, SyntheticScene};
use plfn::geometry::{Camera, RigidTransform};
use plfn::pronet::ArchSpec;
use plfn::train::{OccupancyConfig, TrainConfig};

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFile {
    pub scene: SyntheticScene,
    pub synth: SynthConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub occupancy: Option<OccupancyConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraSpec {
    pub pose: [f64; 12],
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraSpec {
    pub fn camera(&self) -> plfn::Result<Camera> {
        let pose = RigidTransform::from_row_major_3x4(&self.pose)?;
        Camera::new(self.width, self.height, self.fx, self.fy, self.cx, self.cy, pose)
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("bad {what} value '{p}' in '{s}'").into())
        })
        .collect()
}
