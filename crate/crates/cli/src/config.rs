//! JSON run configuration and rig description. Every knob carries the
//! benchmark default, so an empty section is a valid section.

use std::fs;
use std::path::{Path, PathBuf};

use pomcrf::field::GaussianModeBank;
use pomcrf::geometry::{
    build_projection_table, corner_rig, CameraModel, CylinderSpec, GroundGrid, ProjectionTable,
};
use pomcrf::inference::{default_thresholds, InferenceConfig};
use pomcrf::potentials::{HighOrderMode, PairKernel, PotentialBundle, UnaryScores};
use pomcrf::scene::OcclusionParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Sequence directory: written by `scene`, read by everything else.
    pub dataset: PathBuf,
    /// Where derived artifacts go; defaults to the dataset directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Rig description consumed by `scene` (other commands read the copy
    /// stored inside the dataset).
    #[serde(default)]
    pub rig: Option<PathBuf>,
    pub seed: u64,
    pub frames: usize,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default = "default_occlusion")]
    pub occlusion: f64,
    #[serde(default = "default_noise")]
    pub field_noise: f64,
    #[serde(default = "default_noise")]
    pub unary_noise: f64,
    #[serde(default)]
    pub bank: BankSection,
    #[serde(default)]
    pub potentials: PotentialSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub track: TrackSection,
}

fn default_occlusion() -> f64 {
    0.9
}

fn default_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub people_min: usize,
    pub people_max: usize,
    pub min_separation: usize,
    /// `None` draws frames independently; `Some(r)` makes every person walk
    /// with Chebyshev steps of at most `r` cells.
    pub walk_radius: Option<usize>,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection { people_min: 10, people_max: 15, min_separation: 2, walk_radius: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankSection {
    pub columns: usize,
    pub rows: usize,
}

impl Default for BankSection {
    fn default() -> Self {
        BankSection { columns: 2, rows: 4 }
    }
}

impl BankSection {
    pub fn build(&self) -> CliResult<GaussianModeBank<f64>> {
        Ok(GaussianModeBank::body_grid(self.columns, self.rows)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighOrder {
    Full,
    Simple,
    Off,
}

impl From<HighOrder> for HighOrderMode {
    fn from(h: HighOrder) -> Self {
        match h {
            HighOrder::Full => HighOrderMode::Full,
            HighOrder::Simple => HighOrderMode::Simple,
            HighOrder::Off => HighOrderMode::Off,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub unary_scale: f64,
    pub high_order_scale: f64,
    /// Pairwise repulsion weight; 0 disables the term.
    pub pair_weight: f64,
    pub pair_radius: usize,
    pub epsilon: f64,
    pub high_order: HighOrder,
    /// Feed stored unary scores into the model.
    pub use_unaries: bool,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            unary_scale: 1.0,
            high_order_scale: 0.1,
            pair_weight: 10.0,
            pair_radius: 1,
            epsilon: 1e-6,
            high_order: HighOrder::Full,
            use_unaries: true,
        }
    }
}

impl PotentialSection {
    pub fn kernel(&self) -> CliResult<PairKernel<f64>> {
        if self.pair_weight == 0.0 {
            Ok(PairKernel::zero())
        } else {
            Ok(PairKernel::uniform(self.pair_weight, self.pair_radius)?)
        }
    }

    pub fn bundle(
        &self,
        occlusion: OcclusionParams<f64>,
        unary: Option<UnaryScores<f64>>,
    ) -> CliResult<PotentialBundle<f64>> {
        Ok(PotentialBundle::new(
            self.unary_scale,
            self.high_order_scale,
            self.kernel()?,
            occlusion,
            self.epsilon,
            unary,
        )?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub iterations: usize,
    pub step: f64,
    pub prior: f64,
    /// Field thresholds; by default derived from occlusion, field noise and
    /// the bank size.
    pub tau_b: Option<f64>,
    pub tau_h: Option<f64>,
    pub early_stop: Option<f64>,
    /// Optional fitted model whose bank, scales and unary calibration
    /// override the configured ones.
    pub model: Option<PathBuf>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            iterations: 30,
            step: 0.01,
            prior: 0.01,
            tau_b: None,
            tau_h: None,
            early_stop: None,
            model: None,
        }
    }
}

impl InferenceSection {
    pub fn build(&self, occlusion: f64, noise: f64, modes: usize) -> InferenceConfig<f64> {
        let (tau_b, tau_h) = default_thresholds(occlusion, noise, modes);
        InferenceConfig {
            iterations: self.iterations,
            step: self.step,
            prior: self.prior,
            tau_b: self.tau_b.unwrap_or(tau_b),
            tau_h: self.tau_h.unwrap_or(tau_h),
            early_stop: self.early_stop,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Presence probability above which a cell becomes a detection.
    pub threshold: f64,
    /// Match radius in meters.
    pub radius: f64,
    pub curve_radii: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold: 0.5,
            radius: 0.5,
            curve_radii: (1..=10).map(|k| 0.1 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub modes: usize,
    pub em_iters: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { modes: 8, em_iters: 60 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub unary_scales: Vec<f64>,
    pub high_order_scales: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            unary_scales: vec![0.5, 1.0, 2.0, 4.0],
            high_order_scales: vec![0.0, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSection {
    pub rounds: usize,
    pub samples_per_frame: usize,
    pub em_iters: usize,
    /// MODA radius of the per-round diagnostic.
    pub radius: f64,
    /// Starting bank; defaults to the configured body grid.
    pub init_model: Option<PathBuf>,
}

impl Default for EmSection {
    fn default() -> Self {
        EmSection { rounds: 6, samples_per_frame: 1, em_iters: 25, radius: 0.5, init_model: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    /// Chebyshev transition radius in cells.
    pub radius: usize,
    pub access_cost: f64,
    pub max_tracks: usize,
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection { radius: 1, access_cost: 2.0, max_tracks: 20 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::config(anyhow::anyhow!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::config(anyhow::anyhow!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.frames == 0 {
            return Err(CliError::msg(2, "frames must be at least 1"));
        }
        if self.scene.people_min == 0 || self.scene.people_min > self.scene.people_max {
            return Err(CliError::msg(2, "scene.people_min must be in 1..=scene.people_max"));
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(CliError::msg(2, "occlusion must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.field_noise) {
            return Err(CliError::msg(2, "field_noise must be in [0, 1)"));
        }
        if !(0.0..0.5).contains(&self.unary_noise) {
            return Err(CliError::msg(2, "unary_noise must be in [0, 0.5)"));
        }
        if self.eval.curve_radii.is_empty() {
            return Err(CliError::msg(2, "eval.curve_radii must be nonempty"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> &Path {
        self.output.as_deref().unwrap_or(&self.dataset)
    }

    pub fn occlusion_params(&self) -> CliResult<OcclusionParams<f64>> {
        Ok(OcclusionParams::new(self.occlusion)?)
    }
}

/// Camera rig: a grid, a body cylinder, and either an explicit camera list
/// or a corner-rig shorthand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub grid: GroundGrid,
    #[serde(default)]
    pub cylinder: CylinderSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<Vec<CameraModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corner: Option<CornerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_height: f64,
    pub margin: f64,
    #[serde(default = "default_corner_count")]
    pub count: usize,
}

fn default_corner_count() -> usize {
    4
}

/// A rig with the camera list resolved and the projection table built.
pub struct Rig {
    pub grid: GroundGrid,
    pub cylinder: CylinderSpec,
    pub cameras: Vec<CameraModel>,
    pub table: ProjectionTable,
}

impl RigConfig {
    pub fn load(path: &Path, code: i32) -> CliResult<RigConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::msg(code, format!("cannot read rig {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::msg(code, format!("invalid rig {}: {e}", path.display())))
    }

    pub fn resolve(&self) -> CliResult<Rig> {
        // Deserialization bypasses the constructors, so re-validate.
        let grid = GroundGrid::new(self.grid.rows, self.grid.cols, self.grid.cell_size)?;
        let cameras = match (&self.cameras, &self.corner) {
            (Some(list), None) => list.clone(),
            (None, Some(c)) => {
                if c.count == 0 || c.count > 4 {
                    return Err(CliError::msg(2, "corner.count must be in 1..=4"));
                }
                let mut all = corner_rig(
                    &grid,
                    c.width,
                    c.height,
                    c.focal,
                    c.camera_height,
                    c.margin,
                );
                all.truncate(c.count);
                all
            }
            _ => {
                return Err(CliError::msg(
                    2,
                    "rig must give exactly one of `cameras` or `corner`",
                ))
            }
        };
        let table = build_projection_table(&grid, &cameras, &self.cylinder)?;
        Ok(Rig { grid, cylinder: self.cylinder, cameras, table })
    }

    /// The stored form is always the resolved camera list.
    pub fn resolved_document(rig: &Rig) -> RigConfig {
        RigConfig {
            grid: rig.grid,
            cylinder: rig.cylinder,
            cameras: Some(rig.cameras.clone()),
            corner: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(r#"{{"dataset": "d", "seed": 1, "frames": 2{extra}}}"#)
    }

    #[test]
    fn defaults_fill_every_section() {
        let cfg: RunConfig = serde_json::from_str(&minimal("")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.occlusion, 0.9);
        assert_eq!(cfg.field_noise, 0.2);
        assert_eq!(cfg.unary_noise, 0.2);
        assert_eq!(cfg.inference.iterations, 30);
        assert_eq!(cfg.inference.step, 0.01);
        assert_eq!(cfg.bank.columns * cfg.bank.rows, 8);
        assert_eq!(cfg.scene.people_min, 10);
        assert_eq!(cfg.scene.people_max, 15);
        assert_eq!(cfg.eval.threshold, 0.5);
        assert_eq!(cfg.eval.radius, 0.5);
        assert_eq!(cfg.em.rounds, 6);
        assert_eq!(cfg.output_dir(), Path::new("d"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = serde_json::from_str::<RunConfig>(&minimal(r#", "typo": 1"#));
        assert!(e.is_err());
    }

    #[test]
    fn range_violations_are_config_errors() {
        for extra in [
            r#", "frames": 0"#,
            r#", "occlusion": 1.5"#,
            r#", "field_noise": 1.0"#,
            r#", "unary_noise": 0.5"#,
            r#", "scene": {"people_min": 5, "people_max": 3}"#,
        ] {
            let cfg: RunConfig =
                serde_json::from_str(&minimal(extra)).expect("parse should succeed");
            assert_eq!(cfg.validate().unwrap_err().code, 2, "{extra}");
        }
    }

    #[test]
    fn corner_rig_resolves_and_roundtrips() {
        let rig: RigConfig = serde_json::from_str(
            r#"{"grid": {"rows": 6, "cols": 6, "cell_size": 0.25},
                "corner": {"width": 16, "height": 12, "focal": 9.0,
                            "camera_height": 0.7, "margin": 4.0, "count": 2}}"#,
        )
        .unwrap();
        let resolved = rig.resolve().unwrap();
        assert_eq!(resolved.cameras.len(), 2);
        let doc = RigConfig::resolved_document(&resolved);
        let text = serde_json::to_string(&doc).unwrap();
        let back: RigConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.resolve().unwrap().cameras, resolved.cameras);
    }

    #[test]
    fn rig_requires_exactly_one_camera_source() {
        let none: RigConfig =
            serde_json::from_str(r#"{"grid": {"rows": 2, "cols": 2, "cell_size": 0.5}}"#).unwrap();
        assert_eq!(none.resolve().unwrap_err().code, 2);
    }
}
