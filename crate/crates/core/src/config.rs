//! Pipeline configuration: one JSON block per module, every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classification::VotingParams;
use crate::clustering::ClusteringParams;
use crate::error::{Error, Result};
use crate::evaluation::{MotParams, StaticPrecisionParams};
use crate::filtering::FilterParams;
use crate::fusion::FusionParams;
use crate::grid::GridParams;
use crate::motion::MotionParams;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterParams,
    pub clustering: ClusteringParams,
    pub voting: VotingParams,
    pub fusion: FusionParams,
    pub motion: MotionParams,
    pub grid: GridParams,
    pub mot: MotParams,
    pub static_precision: StaticPrecisionParams,
    /// Fuse recorded person detections; `false` skips box tracking and fusion.
    #[serde(default = "default_true")]
    pub use_detector: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            clustering: ClusteringParams::default(),
            voting: VotingParams::default(),
            fusion: FusionParams::default(),
            motion: MotionParams::default(),
            grid: GridParams::default(),
            mot: MotParams::default(),
            static_precision: StaticPrecisionParams::default(),
            use_detector: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.clustering.validate()?;
        self.voting.validate()?;
        self.fusion.validate()?;
        self.motion.validate()?;
        self.grid.validate()?;
        self.mot.validate()?;
        self.static_precision.validate()
    }

    /// Parses and validates a config. Blank text yields the defaults.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = if text.trim().is_empty() {
            Self::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::json(origin, e))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        let p = Path::new("x.json");
        assert_eq!(PipelineConfig::from_json("", p).unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::from_json(" \n", p).unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::from_json("{}", p).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn defaults_match_field_parameterization() {
        let c = PipelineConfig::default();
        assert_eq!(c.filter.depth_limit, 5.0);
        assert_eq!(c.filter.ground_height, 0.15);
        assert_eq!(c.filter.ceiling_height, 1.8);
        assert_eq!(c.filter.voxel_leaf, 0.05);
        assert_eq!(c.filter.min_neighbors, 30);
        assert_eq!(c.filter.neighbor_radius, 0.5);
        assert_eq!(c.mot.match_threshold, 0.4);
        assert_eq!(c.static_precision.error_threshold, 0.4);
        assert_eq!(c.static_precision.accuracy_limit, 0.8);
        assert!(c.use_detector);
    }

    #[test]
    fn partial_blocks_keep_other_defaults() {
        let c = PipelineConfig::from_json(
            r#"{"filter": {"depth_limit": 4.0}, "use_detector": false}"#,
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(c.filter.depth_limit, 4.0);
        assert_eq!(c.filter.voxel_leaf, 0.05);
        assert!(!c.use_detector);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let p = Path::new("x");
        assert!(PipelineConfig::from_json(r#"{"filtr": {}}"#, p).is_err());
        assert!(PipelineConfig::from_json(r#"{"filter": {"depth": 1}}"#, p).is_err());
        assert!(PipelineConfig::from_json(r#"{"filter": {"ground_height": 2.0}}"#, p).is_err());
        assert!(PipelineConfig::from_json(r#"{"mot": {"match_threshold": 0}}"#, p).is_err());
    }
}
