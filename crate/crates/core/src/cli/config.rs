//! `key = value` run configuration. `#` starts a comment; unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_text, CliError};
use crate::evalkit::DepthAlignmentMode;
use crate::geom::ImageSize;
use crate::optim::{LrSchedule, OptimSchedule};
use crate::oracle::{DynamicPointmaps, NoiseSpec, SceneSpec};
use crate::pairwise::{default_alpha, RansacParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScenePreset {
    #[default]
    DollyOrbit,
    Dolly,
    StaticCamera,
}

/// Synthetic scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub preset: ScenePreset,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Relative depth noise in the pairwise pointmaps.
    pub depth_noise: f64,
    pub confidence_floor: f64,
    pub dynamic_pointmaps: DynamicPointmaps,
    /// `depth radius orbit period` of a sphere circling in front of the
    /// first camera.
    pub moving_sphere: Option<[f64; 4]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: ScenePreset::DollyOrbit,
            frames: 30,
            width: 64,
            height: 48,
            focal: 50.0,
            depth_noise: 0.0,
            confidence_floor: 0.0,
            dynamic_pointmaps: DynamicPointmaps::PerTimestep,
            moving_sphere: None,
        }
    }
}

impl SceneConfig {
    pub fn build(&self, seed: u64) -> Result<SceneSpec, CliError> {
        let size = ImageSize::new(self.height, self.width)?;
        let base = match self.preset {
            ScenePreset::DollyOrbit => SceneSpec::dolly_orbit(self.frames, size, self.focal),
            ScenePreset::Dolly => SceneSpec::dolly(self.frames, size, self.focal),
            ScenePreset::StaticCamera => SceneSpec::static_camera(self.frames, size, self.focal),
        };
        let mut spec = match self.moving_sphere {
            Some([depth, radius, orbit, period]) => base.with_circling_sphere(depth, radius, orbit, period),
            None => base,
        }
        .with_noise(NoiseSpec {
            depth_sigma: self.depth_noise,
            confidence_floor: self.confidence_floor,
        });
        spec.dynamic_pointmaps = self.dynamic_pointmaps;
        spec.seed = seed;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    pub schedule: OptimSchedule,
    pub ransac: RansacParams,
    /// Static-mask threshold in pixels; `None` picks 1% of the image diagonal.
    pub alpha: Option<f64>,
    pub align: DepthAlignmentMode,
    pub scene: SceneConfig,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: 9,
            stride: 2,
            seed: 0,
            schedule: OptimSchedule::default(),
            ransac: RansacParams::default(),
            alpha: None,
            align: DepthAlignmentMode::ScaleShift,
            scene: SceneConfig::default(),
            input: None,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got {value:?}")),
    }
}

pub fn parse_align_mode(value: &str) -> Result<DepthAlignmentMode, String> {
    Ok(match value {
        "scale_shift" => DepthAlignmentMode::ScaleShift,
        "scale" => DepthAlignmentMode::Scale,
        "per_frame_median" => DepthAlignmentMode::PerFrameMedian,
        "none" => DepthAlignmentMode::None,
        _ => return Err(format!("unknown alignment mode {value:?} (scale_shift, scale, per_frame_median, none)")),
    })
}

pub fn align_mode_name(mode: DepthAlignmentMode) -> &'static str {
    match mode {
        DepthAlignmentMode::ScaleShift => "scale_shift",
        DepthAlignmentMode::Scale => "scale",
        DepthAlignmentMode::PerFrameMedian => "per_frame_median",
        DepthAlignmentMode::None => "none",
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read_text(path)?).map_err(|e| e.at(path))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config { line: i + 1, message: "expected `key = value`".into() })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|message| CliError::Config { line: i + 1, message })?;
        }
        config
            .schedule
            .validate()
            .map_err(|e| CliError::format(format!("invalid configuration: {e}")))?;
        Ok(config)
    }

    /// Sets one key. The error names the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let s = &mut self.schedule;
        let scene = &mut self.scene;
        match key {
            "window" => self.window = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alpha" => self.alpha = if value == "auto" { None } else { Some(parse(key, value)?) },
            "align" => self.align = parse_align_mode(value)?,
            "input" => self.input = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "iterations" => s.iterations = parse(key, value)?,
            "learning_rate" => s.learning_rate = parse(key, value)?,
            "lr_schedule" => {
                s.lr_schedule = match value {
                    "cosine" => LrSchedule::Cosine,
                    "constant" => LrSchedule::Constant,
                    _ => return Err(format!("{key}: expected cosine or constant, got {value:?}")),
                }
            }
            "w_smooth" => s.w_smooth = parse(key, value)?,
            "w_flow" => s.w_flow = parse(key, value)?,
            "flow_enable_threshold" => s.flow_enable_threshold = parse(key, value)?,
            "mask_update_threshold" => s.mask_update_threshold = parse(key, value)?,
            "mask_update_interval" => s.mask_update_interval = parse(key, value)?,
            "adam_beta1" => s.adam_betas.0 = parse(key, value)?,
            "adam_beta2" => s.adam_betas.1 = parse(key, value)?,
            "adam_eps" => s.adam_eps = parse(key, value)?,
            "shared_focal" => s.shared_focal = parse_bool(key, value)?,
            "step_scale.rotation" => s.step_scales.rotation = parse(key, value)?,
            "step_scale.translation" => s.step_scales.translation = parse(key, value)?,
            "step_scale.focal" => s.step_scales.focal = parse(key, value)?,
            "step_scale.depth" => s.step_scales.depth = parse(key, value)?,
            "step_scale.edge_scale" => s.step_scales.edge_scale = parse(key, value)?,
            "ransac_iterations" => self.ransac.iterations = parse(key, value)?,
            "ransac_threshold" => self.ransac.threshold = parse(key, value)?,
            "ransac_confidence_weighted" => self.ransac.confidence_weighted = parse_bool(key, value)?,
            "scene.preset" => {
                scene.preset = match value {
                    "dolly_orbit" => ScenePreset::DollyOrbit,
                    "dolly" => ScenePreset::Dolly,
                    "static_camera" => ScenePreset::StaticCamera,
                    _ => return Err(format!("{key}: unknown preset {value:?}")),
                }
            }
            "scene.frames" => scene.frames = parse(key, value)?,
            "scene.width" => scene.width = parse(key, value)?,
            "scene.height" => scene.height = parse(key, value)?,
            "scene.focal" => scene.focal = parse(key, value)?,
            "scene.depth_noise" => scene.depth_noise = parse(key, value)?,
            "scene.confidence_floor" => scene.confidence_floor = parse(key, value)?,
            "scene.dynamic_pointmaps" => {
                scene.dynamic_pointmaps = match value {
                    "per_timestep" => DynamicPointmaps::PerTimestep,
                    "frozen" => DynamicPointmaps::Frozen,
                    _ => return Err(format!("{key}: expected per_timestep or frozen, got {value:?}")),
                }
            }
            "scene.moving_sphere" => {
                scene.moving_sphere = if value == "none" {
                    None
                } else {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(|x| parse(key, x))
                        .collect::<Result<_, _>>()?;
                    Some(v.try_into().map_err(|_| format!("{key}: expected `depth radius orbit period`"))?)
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn alpha_for(&self, size: ImageSize) -> f64 {
        self.alpha.unwrap_or_else(|| default_alpha(size))
    }

    /// Every key, in a form [`RunConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let sc = &self.scene;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("window", self.window.to_string());
        kv("stride", self.stride.to_string());
        kv("seed", self.seed.to_string());
        kv("alpha", self.alpha.map_or("auto".into(), |a| format!("{a:?}")));
        kv("align", align_mode_name(self.align).into());
        kv("iterations", s.iterations.to_string());
        kv("learning_rate", format!("{:?}", s.learning_rate));
        kv(
            "lr_schedule",
            match s.lr_schedule {
                LrSchedule::Cosine => "cosine",
                LrSchedule::Constant => "constant",
            }
            .into(),
        );
        kv("w_smooth", format!("{:?}", s.w_smooth));
        kv("w_flow", format!("{:?}", s.w_flow));
        kv("flow_enable_threshold", format!("{:?}", s.flow_enable_threshold));
        kv("mask_update_threshold", format!("{:?}", s.mask_update_threshold));
        kv("mask_update_interval", s.mask_update_interval.to_string());
        kv("adam_beta1", format!("{:?}", s.adam_betas.0));
        kv("adam_beta2", format!("{:?}", s.adam_betas.1));
        kv("adam_eps", format!("{:?}", s.adam_eps));
        kv("shared_focal", s.shared_focal.to_string());
        let st = &s.step_scales;
        kv("step_scale.rotation", format!("{:?}", st.rotation));
        kv("step_scale.translation", format!("{:?}", st.translation));
        kv("step_scale.focal", format!("{:?}", st.focal));
        kv("step_scale.depth", format!("{:?}", st.depth));
        kv("step_scale.edge_scale", format!("{:?}", st.edge_scale));
        kv("ransac_iterations", self.ransac.iterations.to_string());
        kv("ransac_threshold", format!("{:?}", self.ransac.threshold));
        kv("ransac_confidence_weighted", self.ransac.confidence_weighted.to_string());
        kv(
            "scene.preset",
            match sc.preset {
                ScenePreset::DollyOrbit => "dolly_orbit",
                ScenePreset::Dolly => "dolly",
                ScenePreset::StaticCamera => "static_camera",
            }
            .into(),
        );
        kv("scene.frames", sc.frames.to_string());
        kv("scene.width", sc.width.to_string());
        kv("scene.height", sc.height.to_string());
        kv("scene.focal", format!("{:?}", sc.focal));
        kv("scene.depth_noise", format!("{:?}", sc.depth_noise));
        kv("scene.confidence_floor", format!("{:?}", sc.confidence_floor));
        kv(
            "scene.dynamic_pointmaps",
            match sc.dynamic_pointmaps {
                DynamicPointmaps::PerTimestep => "per_timestep",
                DynamicPointmaps::Frozen => "frozen",
            }
            .into(),
        );
        kv(
            "scene.moving_sphere",
            sc.moving_sphere
                .map_or("none".into(), |v| v.map(|x| format!("{x:?}")).join(" ")),
        );
        if let Some(p) = &self.input {
            kv("input", p.display().to_string());
        }
        if let Some(p) = &self.output {
            kv("output", p.display().to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_schedule() {
        let c = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.schedule.w_smooth, 0.01);
        assert_eq!(c.schedule.w_flow, 0.01);
        assert_eq!(c.schedule.learning_rate, 0.01);
        assert_eq!(c.schedule.iterations, 300);
    }

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(
            "window = 5  # short window\nstride=1\nalpha = 2.5\nalign = scale\n\
             scene.moving_sphere = 2.2 0.55 0.25 16\nscene.dynamic_pointmaps = frozen\n\
             scene.depth_noise = 0.02\nlr_schedule = constant\nshared_focal = true\nstep_scale.focal = 0.5\n",
        )
        .unwrap();
        assert_eq!((c.window, c.stride, c.alpha), (5, 1, Some(2.5)));
        assert_eq!(c.align, DepthAlignmentMode::Scale);
        assert_eq!(c.scene.moving_sphere, Some([2.2, 0.55, 0.25, 16.0]));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = RunConfig::parse("window = 3\nwindw = 4\n").unwrap_err();
        assert!(matches!(e, CliError::Config { line: 2, .. }), "{e}");
        assert!(RunConfig::parse("window 3\n").is_err());
        assert!(RunConfig::parse("window = three\n").is_err());
        assert!(RunConfig::parse("scene.moving_sphere = 1 2 3\n").is_err());
        assert!(RunConfig::parse("iterations = 10\nlearning_rate = -1\n").is_err());
    }

    #[test]
    fn scene_spec_builds() {
        let mut c = RunConfig::default();
        c.scene.moving_sphere = Some([2.2, 0.55, 0.25, 16.0]);
        let spec = c.scene.build(7).unwrap();
        assert_eq!(spec.num_frames, 30);
        assert_eq!(spec.dynamic_objects.len(), 1);
        assert_eq!(spec.seed, 7);
        assert!((spec.path_length() - 1.0).abs() < 1e-9);
    }
}
