use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cqed::{device, mhz, NamedState, ParamsMhz, Qubit, Rotation, SystemParams};
use crate::detection::{DetectionConfig, MAX_SAMPLING_CUTOFF};
use crate::dynamics::IntegratorConfig;
use crate::tomography::MIN_SHOTS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    Decay,
    Tomo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Tomo => "tomo",
        }
    }
}

/// Base rate set that `params` overrides are applied to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSet {
    #[default]
    Measured,
    Ideal,
}

/// Per-field overrides in `/2π` MHz. After [`ExperimentConfig::resolve`] every field is set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamOverrides {
    pub g_a_mhz: Option<f64>,
    pub g_b_mhz: Option<f64>,
    pub kappa_mhz: Option<f64>,
    pub gamma_nr_a_mhz: Option<f64>,
    pub gamma_nr_b_mhz: Option<f64>,
    pub gamma_phi_a_mhz: Option<f64>,
    pub gamma_phi_b_mhz: Option<f64>,
    pub delta_a_mhz: Option<f64>,
    pub delta_b_mhz: Option<f64>,
    pub n_max: Option<usize>,
}

impl ParamOverrides {
    fn apply(&self, base: ParamsMhz) -> ParamsMhz {
        ParamsMhz {
            g_a_mhz: self.g_a_mhz.unwrap_or(base.g_a_mhz),
            g_b_mhz: self.g_b_mhz.unwrap_or(base.g_b_mhz),
            kappa_mhz: self.kappa_mhz.unwrap_or(base.kappa_mhz),
            gamma_nr_a_mhz: self.gamma_nr_a_mhz.unwrap_or(base.gamma_nr_a_mhz),
            gamma_nr_b_mhz: self.gamma_nr_b_mhz.unwrap_or(base.gamma_nr_b_mhz),
            gamma_phi_a_mhz: self.gamma_phi_a_mhz.unwrap_or(base.gamma_phi_a_mhz),
            gamma_phi_b_mhz: self.gamma_phi_b_mhz.unwrap_or(base.gamma_phi_b_mhz),
            delta_a_mhz: self.delta_a_mhz.unwrap_or(base.delta_a_mhz),
            delta_b_mhz: self.delta_b_mhz.unwrap_or(base.delta_b_mhz),
            n_max: self.n_max.unwrap_or(base.n_max),
        }
    }

    fn from_full(p: ParamsMhz) -> Self {
        Self {
            g_a_mhz: Some(p.g_a_mhz),
            g_b_mhz: Some(p.g_b_mhz),
            kappa_mhz: Some(p.kappa_mhz),
            gamma_nr_a_mhz: Some(p.gamma_nr_a_mhz),
            gamma_nr_b_mhz: Some(p.gamma_nr_b_mhz),
            gamma_phi_a_mhz: Some(p.gamma_phi_a_mhz),
            gamma_phi_b_mhz: Some(p.gamma_phi_b_mhz),
            delta_a_mhz: Some(p.delta_a_mhz),
            delta_b_mhz: Some(p.delta_b_mhz),
            n_max: Some(p.n_max),
        }
    }
}

/// A named preparation or an explicit list of rotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(NamedState),
    Rotations(Vec<Rotation>),
}

impl InitialState {
    pub fn rotations(&self) -> Vec<Rotation> {
        match self {
            InitialState::Named(s) => s.rotations(),
            InitialState::Rotations(r) => r.clone(),
        }
    }

    pub fn parked_qubit(&self) -> Option<Qubit> {
        match self {
            InitialState::Named(s) => s.parked_qubit(),
            InitialState::Rotations(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSettings {
    pub qubit: Qubit,
    /// Probe detuning from the cavity, `/2π` MHz.
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub step_mhz: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self { qubit: Qubit::A, start_mhz: -60.0, stop_mhz: 60.0, step_mhz: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomoSettings {
    /// Fock cutoff of the reconstruction.
    pub cutoff: usize,
    /// Also write the signal and off records in binary form.
    pub write_records: bool,
}

impl Default for TomoSettings {
    fn default() -> Self {
        Self { cutoff: 3, write_records: false }
    }
}

/// Output file names, relative to the output directory. Unset names get
/// kind-specific defaults on resolution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputNames {
    pub data: Option<String>,
    pub summary: Option<String>,
    pub manifest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub param_set: ParamSet,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    /// Qubit detuning during decay, `/2π` MHz.
    #[serde(default = "default_delta_r")]
    pub delta_r_mhz: f64,
    /// Decay duration, µs.
    #[serde(default)]
    pub duration_us: Option<f64>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    /// Detected shots; zero skips the detection chain in decay runs.
    #[serde(default)]
    pub n_shots: Option<usize>,
    /// Scale applied to the model curves of a decay run.
    #[serde(default)]
    pub scale_s: Option<f64>,
    #[serde(default)]
    pub spectrum: SpectrumSettings,
    #[serde(default)]
    pub tomo: TomoSettings,
    #[serde(default)]
    pub outputs: OutputNames,
}

fn default_delta_r() -> f64 {
    device::DECAY_DETUNING_MHZ
}

pub const DEFAULT_DECAY_DURATION_US: f64 = 20.0;
pub const DEFAULT_TOMO_SHOTS: usize = 100_000;

/// Validation failure located by a JSON pointer into the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self { pointer: pointer.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "(root)" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Apply a `key.sub=value` override. The value is parsed as JSON and taken
/// as a plain string if that fails; missing objects along the path are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new("", format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new("", format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut pointer = String::new();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(pointer.clone(), "override path runs through a non-object"))?;
        pointer.push('/');
        pointer.push_str(part);
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    s
}

/// Parse a config, apply `--set` overrides and an optional seed, and resolve it
/// for `kind`.
pub fn load_config(
    text: &str,
    overrides: &[String],
    kind: ExperimentKind,
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
    if !value.is_object() {
        return Err(ConfigError::new("", "config must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, &format!("detection.rng_seed={seed}"))?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError::new(pointer, e.into_inner().to_string())
    })?;
    cfg.resolve(kind)
}

impl ExperimentConfig {
    /// Validate and materialize every default for `kind`.
    pub fn resolve(mut self, kind: ExperimentKind) -> Result<Self, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "/schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        match self.kind {
            Some(k) if k != kind => {
                return Err(ConfigError::new(
                    "/kind",
                    format!("config is for `{}`, command is `{}`", k.name(), kind.name()),
                ))
            }
            _ => self.kind = Some(kind),
        }
        let base = match self.param_set {
            ParamSet::Measured => SystemParams::measured(),
            ParamSet::Ideal => SystemParams::ideal(),
        };
        let full = self.params.apply(ParamsMhz::from(base));
        SystemParams::try_from(full).map_err(|e| ConfigError::new("/params", e.to_string()))?;
        self.params = ParamOverrides::from_full(full);
        self.integrator.validate().map_err(|e| ConfigError::new("/integrator", e.to_string()))?;
        self.detection.validate().map_err(|e| ConfigError::new("/detection", e.to_string()))?;
        if !self.delta_r_mhz.is_finite() {
            return Err(ConfigError::new("/delta_r_mhz", "must be finite"));
        }
        if let Some(s) = self.scale_s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::new("/scale_s", format!("scale {s} must be positive")));
            }
        }
        if kind != ExperimentKind::Spectrum {
            let state = self
                .initial_state
                .as_ref()
                .ok_or_else(|| ConfigError::new("/initial_state", format!("required for `{}`", kind.name())))?;
            let rots = state.rotations();
            for (i, r) in rots.iter().enumerate() {
                r.validate().map_err(|e| ConfigError::new(format!("/initial_state/{i}"), e.to_string()))?;
            }
        }
        match kind {
            ExperimentKind::Spectrum => {
                let s = &self.spectrum;
                if !(s.step_mhz > 0.0) {
                    return Err(ConfigError::new("/spectrum/step_mhz", "must be positive"));
                }
                if !(s.start_mhz < s.stop_mhz) || !s.start_mhz.is_finite() || !s.stop_mhz.is_finite() {
                    return Err(ConfigError::new("/spectrum", "start_mhz must be below stop_mhz"));
                }
                if (s.stop_mhz - s.start_mhz) / s.step_mhz > 1e7 {
                    return Err(ConfigError::new("/spectrum/step_mhz", "more than 10⁷ scan points"));
                }
            }
            ExperimentKind::Decay => {
                let d = *self.duration_us.get_or_insert(DEFAULT_DECAY_DURATION_US);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(ConfigError::new("/duration_us", format!("duration {d} must be positive")));
                }
                let shots = *self.n_shots.get_or_insert(0);
                if shots > 0 && (self.detection.sample_dt - self.integrator.sample_dt).abs() > 1e-12 {
                    return Err(ConfigError::new(
                        "/detection/sample_dt",
                        format!(
                            "detection sample spacing {} differs from integrator sample_dt {}",
                            self.detection.sample_dt, self.integrator.sample_dt
                        ),
                    ));
                }
            }
            ExperimentKind::Tomo => {
                let shots = *self.n_shots.get_or_insert(DEFAULT_TOMO_SHOTS);
                if shots < MIN_SHOTS {
                    return Err(ConfigError::new("/n_shots", format!("{shots} shots, at least {MIN_SHOTS} needed")));
                }
                let c = self.tomo.cutoff;
                if !(2..=MAX_SAMPLING_CUTOFF).contains(&c) {
                    return Err(ConfigError::new(
                        "/tomo/cutoff",
                        format!("cutoff {c} outside 2..={MAX_SAMPLING_CUTOFF}"),
                    ));
                }
            }
        }
        let o = &mut self.outputs;
        o.data.get_or_insert_with(|| {
            match kind {
                ExperimentKind::Spectrum => "spectrum.csv",
                ExperimentKind::Decay => "decay.csv",
                ExperimentKind::Tomo => "density_matrix.json",
            }
            .to_string()
        });
        o.summary.get_or_insert_with(|| "summary.json".to_string());
        o.manifest.get_or_insert_with(|| "manifest.json".to_string());
        for (ptr, name) in [("/outputs/data", &o.data), ("/outputs/summary", &o.summary), ("/outputs/manifest", &o.manifest)] {
            let n = name.as_deref().unwrap_or_default();
            if n.is_empty() || n.contains('/') || n.contains('\\') || n == "." || n == ".." {
                return Err(ConfigError::new(ptr, format!("`{n}` is not a plain file name")));
            }
        }
        if o.data == o.summary || o.data == o.manifest || o.summary == o.manifest {
            return Err(ConfigError::new("/outputs", "output names must differ"));
        }
        Ok(self)
    }

    /// Rate set of a resolved config.
    pub fn system_params(&self) -> SystemParams {
        let full = self.params.apply(ParamsMhz::from(SystemParams::measured()));
        SystemParams::try_from(full).expect("resolved parameters are valid")
    }

    pub fn delta_r(&self) -> f64 {
        mhz(self.delta_r_mhz)
    }
}
