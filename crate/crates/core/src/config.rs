//! Run configuration (TOML) shared by the command-line tools.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cnn::TrainConfig;
use crate::preprocess::PreprocessConfig;
use crate::svc::{DEFAULT_EPOCHS, DEFAULT_LAMBDA};
use crate::synthgen::{Configuration, SessionSpec, Speed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for everything that is not session data: the SVC split and
    /// shuffles, CNN initialisation and batch order.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub grid: GridConfig,
    pub generator: GeneratorConfig,
    pub preprocess: StagePreprocess,
    pub svc: SvcConfig,
    pub cnn: TrainConfig,
    pub demo: DemoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub configurations: Vec<String>,
    pub speeds: Vec<String>,
    /// One session per (configuration, speed, seed).
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub duration: f64,
    pub frame_rate: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagePreprocess {
    pub svc: PreprocessConfig,
    pub cnn: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvcConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub test_split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    /// Speed whose CNNs go into the combined-pipeline bundle.
    pub bundle_speed: String,
    /// Session streamed through the demo.
    pub configuration: String,
    pub speed: String,
    pub seed: u64,
    pub frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            grid: GridConfig::default(),
            generator: GeneratorConfig::default(),
            preprocess: StagePreprocess::default(),
            svc: SvcConfig::default(),
            cnn: TrainConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            configurations: Configuration::CLASSES.iter().map(|c| c.name().to_string()).collect(),
            speeds: Speed::ALL.iter().map(|s| s.name().to_string()).collect(),
            seeds: vec![1],
        }
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            duration: 56.0,
            frame_rate: 25.0,
            image_height: 128,
            image_width: 64,
            noise_level: 0.1,
        }
    }
}

impl Default for StagePreprocess {
    fn default() -> Self {
        Self {
            svc: PreprocessConfig::new(32, 16),
            cnn: PreprocessConfig::new(32, 32),
        }
    }
}

impl Default for SvcConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            test_split: 0.3,
        }
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            bundle_speed: Speed::Medium.name().to_string(),
            configuration: Configuration::C1.name().to_string(),
            speed: Speed::Medium.name().to_string(),
            seed: 1001,
            frames: 100,
        }
    }
}

/// One grid cell: a single generated session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub configuration: Configuration,
    pub speed: Speed,
    pub seed: u64,
}

impl Cell {
    /// Directory / file stem, e.g. `C3_fast_s7`.
    pub fn key(&self) -> String {
        format!("{}_{}_s{}", self.configuration, self.speed, self.seed)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn configurations(&self) -> Result<Vec<Configuration>, String> {
        self.grid
            .configurations
            .iter()
            .map(|s| s.parse::<Configuration>().map_err(|e| e.to_string()))
            .collect()
    }

    pub fn speeds(&self) -> Result<Vec<Speed>, String> {
        self.grid
            .speeds
            .iter()
            .map(|s| s.parse::<Speed>().map_err(|e| e.to_string()))
            .collect()
    }

    /// Grid cells in configuration, speed, seed order.
    pub fn cells(&self) -> Result<Vec<Cell>, String> {
        let speeds = self.speeds()?;
        let mut cells = Vec::new();
        for configuration in self.configurations()? {
            for &speed in &speeds {
                for &seed in &self.grid.seeds {
                    cells.push(Cell {
                        configuration,
                        speed,
                        seed,
                    });
                }
            }
        }
        Ok(cells)
    }

    pub fn session_spec(&self, configuration: Configuration, speed: Speed, seed: u64) -> SessionSpec {
        let g = &self.generator;
        SessionSpec::new(configuration, speed, seed)
            .with_dims(g.image_height, g.image_width)
            .with_timing(g.duration, g.frame_rate)
            .with_noise(g.noise_level)
    }

    /// CNN settings with the run seed applied.
    pub fn cnn_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.cnn.clone()
        }
    }

    pub fn bundle_speed(&self) -> Result<Speed, String> {
        self.demo.bundle_speed.parse::<Speed>().map_err(|e| e.to_string())
    }

    /// Every problem with the config, one message each; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut configurations = Vec::new();
        for name in &self.grid.configurations {
            match name.parse::<Configuration>() {
                Ok(Configuration::Open) => errs.push("grid.configurations: Open is not a classifiable configuration".into()),
                Ok(c) if configurations.contains(&c) => errs.push(format!("grid.configurations: {c} listed twice")),
                Ok(c) => configurations.push(c),
                Err(e) => errs.push(format!("grid.configurations: {e}")),
            }
        }
        let mut speeds = Vec::new();
        for name in &self.grid.speeds {
            match name.parse::<Speed>() {
                Ok(s) if speeds.contains(&s) => errs.push(format!("grid.speeds: {s} listed twice")),
                Ok(s) => speeds.push(s),
                Err(e) => errs.push(format!("grid.speeds: {e}")),
            }
        }
        let mut seeds = self.grid.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.grid.seeds.len() {
            errs.push("grid.seeds: duplicate seed".into());
        }
        if self.grid.configurations.is_empty() || self.grid.speeds.is_empty() || self.grid.seeds.is_empty() {
            errs.push("grid: configurations, speeds and seeds must all be non-empty".into());
        }

        let probe = self.session_spec(Configuration::C1, Speed::Medium, 0);
        if let Err(e) = probe.validate() {
            errs.push(format!("generator: {e}"));
        }
        let (h, w) = (self.generator.image_height, self.generator.image_width);
        for (stage, cfg) in [("svc", &self.preprocess.svc), ("cnn", &self.preprocess.cnn)] {
            if let Err(e) = cfg.validate_for(h, w) {
                errs.push(format!("preprocess.{stage}: {e}"));
            }
        }
        if self.cnn.architecture.is_none() && (self.preprocess.cnn.target_height < 4 || self.preprocess.cnn.target_width < 4) {
            errs.push("preprocess.cnn: the default network needs at least 4x4 inputs".into());
        }

        if !(self.svc.lambda > 0.0 && self.svc.lambda.is_finite()) {
            errs.push(format!("svc.lambda must be positive, got {}", self.svc.lambda));
        }
        if self.svc.epochs == 0 {
            errs.push("svc.epochs must be at least 1".into());
        }
        if !(self.svc.test_split > 0.0 && self.svc.test_split < 1.0) {
            errs.push(format!("svc.test_split must be in (0, 1), got {}", self.svc.test_split));
        }
        errs.extend(self.cnn.validate());
        if !(self.cnn.test_split > 0.0 && self.cnn.validation_split > 0.0) {
            errs.push("cnn.test_split and cnn.validation_split must be positive".into());
        }

        match self.demo.bundle_speed.parse::<Speed>() {
            Ok(s) if !self.grid.speeds.is_empty() && !speeds.contains(&s) => {
                errs.push(format!("demo.bundle_speed: {s} is not in grid.speeds"))
            }
            Ok(_) => {}
            Err(e) => errs.push(format!("demo.bundle_speed: {e}")),
        }
        if let Err(e) = self.demo.configuration.parse::<Configuration>() {
            errs.push(format!("demo.configuration: {e}"));
        }
        if let Err(e) = self.demo.speed.parse::<Speed>() {
            errs.push(format!("demo.speed: {e}"));
        }
        if self.out_dir.as_os_str().is_empty() {
            errs.push("out_dir must not be empty".into());
        }
        errs
    }
}
