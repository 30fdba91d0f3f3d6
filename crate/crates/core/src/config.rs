//! Simulation parameters.
//!
//! Every parameter has a flat lowercase key (`spawnposx`, `numlayers`,
//! `fogdensity`, ...). The same keys are used as command-line flags
//! (`--numlayers 15`) and in `key=value` configuration files, and the
//! canonical serialization is a `key=value` line per parameter in a fixed
//! order. That serialization is also what [`config_hash`] digests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};
use sha2::{Digest, Sha256};

/// Errors raised while building a [`SimConfig`].
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("`{key}` out of range: {value} (must be {bound})")]
    OutOfRange {
        key: &'static str,
        value: String,
        bound: &'static str,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("failed to read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cli(#[from] clap::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightType {
    Spot,
    Directional,
    Point,
}

impl FromStr for LightType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spot" => Ok(LightType::Spot),
            "directional" => Ok(LightType::Directional),
            "point" => Ok(LightType::Point),
            _ => Err("expected one of spot, directional, point".into()),
        }
    }
}

impl fmt::Display for LightType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LightType::Spot => "spot",
            LightType::Directional => "directional",
            LightType::Point => "point",
        })
    }
}

/// Horizontal distribution of spawn positions over the spawn footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionDistribution {
    Uniform,
    /// Truncated normal centred on the spawn position; the standard deviation
    /// per axis is `position_sigma` times the half-extent.
    Gaussian,
}

impl FromStr for PositionDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PositionDistribution::Uniform),
            "gaussian" => Ok(PositionDistribution::Gaussian),
            _ => Err("expected one of uniform, gaussian".into()),
        }
    }
}

impl fmt::Display for PositionDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionDistribution::Uniform => "uniform",
            PositionDistribution::Gaussian => "gaussian",
        })
    }
}

/// Default selection weights for the bundled asset catalog.
pub const DEFAULT_ASSET_WEIGHTS: &[(&str, f64)] = &[
    ("brick", 4.0),
    ("cinder_block", 4.0),
    ("culvert", 1.0),
    ("rubble_chunk", 2.0),
    ("slab", 2.0),
];

/// The full parameter set for one pile, its lighting and its participating
/// media. Immutable once built; share it by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Centre of the spawn volume, meters.
    pub spawn_pos: [f64; 3],
    /// Half-extents of the spawn volume, meters.
    pub spawn_bound: [f64; 3],
    pub num_layers: u32,
    pub num_objs: u32,
    /// Use `light_rot` verbatim; otherwise the rotation is drawn at random.
    pub set_light_rot: bool,
    pub light_type: LightType,
    pub light_intensity: f64,
    /// Degrees about X, Y, Z.
    pub light_rot: [f64; 3],
    pub light_pos: [f64; 3],
    /// Full cone angle of a spot light, degrees.
    pub light_cone: f64,
    /// Baseline extinction coefficient, 1/m.
    pub fog_density: f64,
    /// Amplitude of the value-noise modulation of the extinction, 1/m.
    pub fog_intensity: f64,
    /// Spatial scale of the fog noise, meters.
    pub fog_scale: f64,
    pub headlamp_on: bool,
    pub headlamp_intensity: f64,
    pub position_distribution: PositionDistribution,
    pub position_sigma: f64,
    pub voxel_resolution: f64,
    pub dust_plumes: u32,
    pub dust_period: f64,
    pub dust_duration: f64,
    pub dust_radius: f64,
    pub dust_density: f64,
    pub asset_weights: BTreeMap<String, f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1234,
            spawn_pos: [0.0, 0.0, 0.0],
            spawn_bound: [5.0, 5.0, 0.25],
            num_layers: 5,
            num_objs: 50,
            set_light_rot: true,
            light_type: LightType::Directional,
            light_intensity: 1.0,
            light_rot: [0.0, 0.0, 0.0],
            light_pos: [0.0, 0.0, 10.0],
            light_cone: 30.0,
            fog_density: 0.0,
            fog_intensity: 0.0,
            fog_scale: 1.0,
            headlamp_on: false,
            headlamp_intensity: 1.0,
            position_distribution: PositionDistribution::Uniform,
            position_sigma: 0.5,
            voxel_resolution: 0.10,
            dust_plumes: 0,
            dust_period: 8.0,
            dust_duration: 2.0,
            dust_radius: 1.5,
            dust_density: 1.5,
            asset_weights: DEFAULT_ASSET_WEIGHTS
                .iter()
                .map(|&(id, w)| (id.to_string(), w))
                .collect(),
        }
    }
}

/// Every parameter key with its help text, in canonical serialization order.
pub const PARAMETERS: &[(&str, &str)] = &[
    ("seed", "Random seed; a pile is a pure function of seed, parameters and catalog"),
    ("spawnposx", "Center position of spawn volume, X (m)"),
    ("spawnposy", "Center position of spawn volume, Y (m)"),
    ("spawnposz", "Center position of spawn volume, Z (m); offsets the first layer"),
    ("spawnboundx", "Spawn volume half-extent along X (m)"),
    ("spawnboundy", "Spawn volume half-extent along Y (m)"),
    ("spawnboundz", "Spawn volume half-extent along Z (m); drop jitter spans twice this"),
    ("numlayers", "Number of layers in pile"),
    ("numobjs", "Objects per layer"),
    ("setlightrot", "Enable fixed light rotation (else random)"),
    ("lighttype", "Global light type: spot, directional or point"),
    ("lightintensity", "Global light intensity"),
    ("lightrotx", "Light rotation about X (deg)"),
    ("lightroty", "Light rotation about Y (deg)"),
    ("lightrotz", "Light rotation about Z (deg)"),
    ("lightposx", "Light position along X (m)"),
    ("lightposy", "Light position along Y (m)"),
    ("lightposz", "Light position along Z (m)"),
    ("lightcone", "Spot light full cone angle (deg)"),
    ("fogdensity", "Baseline density for fog/smoke effect (1/m)"),
    ("fogintensity", "Fog/smoke noise variation (1/m)"),
    ("fogscale", "Fog noise spatial scale (m)"),
    ("headlamp_on", "Enable the camera-mounted headlamp"),
    ("headlamp_intensity", "Headlamp intensity"),
    ("position_distribution", "Spawn position distribution: uniform or gaussian"),
    ("position_sigma", "Gaussian standard deviation as a fraction of the half-extent"),
    ("voxel_resolution", "Voxel edge length for void analysis (m)"),
    ("dust_plumes", "Number of periodic dust plumes"),
    ("dust_period", "Dust plume period (s)"),
    ("dust_duration", "Dust plume active duration per period (s)"),
    ("dust_radius", "Dust plume radius (m)"),
    ("dust_density", "Extra extinction inside an active dust plume (1/m)"),
    ("asset_weights", "Asset selection weights, e.g. brick:4,slab:2"),
];

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.trim().parse().map_err(|_| invalid(key, value, "expected a number"))?;
    if !v.is_finite() {
        return Err(invalid(key, value, "must be finite"));
    }
    Ok(v)
}

fn parse_u32(key: &str, value: &str) -> Result<u32, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(key, value, "expected a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_weights(key: &str, value: &str) -> Result<BTreeMap<String, f64>, ConfigError> {
    let mut weights = BTreeMap::new();
    for entry in value.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (id, w) = entry
            .split_once(':')
            .ok_or_else(|| invalid(key, value, format!("entry `{entry}` is not id:weight")))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(invalid(key, value, "empty asset id"));
        }
        let w = parse_f64(key, w)?;
        if weights.insert(id.to_string(), w).is_some() {
            return Err(invalid(key, value, format!("duplicate asset id `{id}`")));
        }
    }
    Ok(weights)
}

impl SimConfig {
    /// Set one parameter from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let axis = |k: &str| match k.as_bytes().last() {
            Some(b'x') => 0,
            Some(b'y') => 1,
            _ => 2,
        };
        match key {
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| invalid(key, value, "expected an unsigned 64-bit integer"))?
            }
            "spawnposx" | "spawnposy" | "spawnposz" => self.spawn_pos[axis(key)] = parse_f64(key, value)?,
            "spawnboundx" | "spawnboundy" | "spawnboundz" => {
                self.spawn_bound[axis(key)] = parse_f64(key, value)?
            }
            "numlayers" => self.num_layers = parse_u32(key, value)?,
            "numobjs" => self.num_objs = parse_u32(key, value)?,
            "setlightrot" => self.set_light_rot = parse_bool(key, value)?,
            "lighttype" => self.light_type = value.trim().parse().map_err(|e: String| invalid(key, value, e))?,
            "lightintensity" => self.light_intensity = parse_f64(key, value)?,
            "lightrotx" | "lightroty" | "lightrotz" => self.light_rot[axis(key)] = parse_f64(key, value)?,
            "lightposx" | "lightposy" | "lightposz" => self.light_pos[axis(key)] = parse_f64(key, value)?,
            "lightcone" => self.light_cone = parse_f64(key, value)?,
            "fogdensity" => self.fog_density = parse_f64(key, value)?,
            "fogintensity" => self.fog_intensity = parse_f64(key, value)?,
            "fogscale" => self.fog_scale = parse_f64(key, value)?,
            "headlamp_on" => self.headlamp_on = parse_bool(key, value)?,
            "headlamp_intensity" => self.headlamp_intensity = parse_f64(key, value)?,
            "position_distribution" => {
                self.position_distribution =
                    value.trim().parse().map_err(|e: String| invalid(key, value, e))?
            }
            "position_sigma" => self.position_sigma = parse_f64(key, value)?,
            "voxel_resolution" => self.voxel_resolution = parse_f64(key, value)?,
            "dust_plumes" => self.dust_plumes = parse_u32(key, value)?,
            "dust_period" => self.dust_period = parse_f64(key, value)?,
            "dust_duration" => self.dust_duration = parse_f64(key, value)?,
            "dust_radius" => self.dust_radius = parse_f64(key, value)?,
            "dust_density" => self.dust_density = parse_f64(key, value)?,
            "asset_weights" => self.asset_weights = parse_weights(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Textual value of one parameter, as written by [`SimConfig::serialize`].
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "spawnposx" => self.spawn_pos[0].to_string(),
            "spawnposy" => self.spawn_pos[1].to_string(),
            "spawnposz" => self.spawn_pos[2].to_string(),
            "spawnboundx" => self.spawn_bound[0].to_string(),
            "spawnboundy" => self.spawn_bound[1].to_string(),
            "spawnboundz" => self.spawn_bound[2].to_string(),
            "numlayers" => self.num_layers.to_string(),
            "numobjs" => self.num_objs.to_string(),
            "setlightrot" => self.set_light_rot.to_string(),
            "lighttype" => self.light_type.to_string(),
            "lightintensity" => self.light_intensity.to_string(),
            "lightrotx" => self.light_rot[0].to_string(),
            "lightroty" => self.light_rot[1].to_string(),
            "lightrotz" => self.light_rot[2].to_string(),
            "lightposx" => self.light_pos[0].to_string(),
            "lightposy" => self.light_pos[1].to_string(),
            "lightposz" => self.light_pos[2].to_string(),
            "lightcone" => self.light_cone.to_string(),
            "fogdensity" => self.fog_density.to_string(),
            "fogintensity" => self.fog_intensity.to_string(),
            "fogscale" => self.fog_scale.to_string(),
            "headlamp_on" => self.headlamp_on.to_string(),
            "headlamp_intensity" => self.headlamp_intensity.to_string(),
            "position_distribution" => self.position_distribution.to_string(),
            "position_sigma" => self.position_sigma.to_string(),
            "voxel_resolution" => self.voxel_resolution.to_string(),
            "dust_plumes" => self.dust_plumes.to_string(),
            "dust_period" => self.dust_period.to_string(),
            "dust_duration" => self.dust_duration.to_string(),
            "dust_radius" => self.dust_radius.to_string(),
            "dust_density" => self.dust_density.to_string(),
            "asset_weights" => self
                .asset_weights
                .iter()
                .map(|(id, w)| format!("{id}:{w}"))
                .collect::<Vec<_>>()
                .join(","),
            _ => return None,
        };
        Some(v)
    }

    /// Check every range invariant. The error names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(key: &'static str, value: f64, ok: bool, bound: &'static str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key,
                    value: value.to_string(),
                    bound,
                })
            }
        }
        let positive = |key, v: f64| check(key, v, v > 0.0, "> 0");
        let non_negative = |key, v: f64| check(key, v, v >= 0.0, ">= 0");

        positive("spawnboundx", self.spawn_bound[0])?;
        positive("spawnboundy", self.spawn_bound[1])?;
        positive("spawnboundz", self.spawn_bound[2])?;
        check("numlayers", self.num_layers as f64, self.num_layers >= 1, ">= 1")?;
        check("numobjs", self.num_objs as f64, self.num_objs >= 1, ">= 1")?;
        non_negative("lightintensity", self.light_intensity)?;
        check(
            "lightcone",
            self.light_cone,
            self.light_cone > 0.0 && self.light_cone < 180.0,
            "in (0, 180)",
        )?;
        non_negative("fogdensity", self.fog_density)?;
        non_negative("fogintensity", self.fog_intensity)?;
        positive("fogscale", self.fog_scale)?;
        non_negative("headlamp_intensity", self.headlamp_intensity)?;
        positive("position_sigma", self.position_sigma)?;
        positive("voxel_resolution", self.voxel_resolution)?;
        positive("dust_period", self.dust_period)?;
        positive("dust_duration", self.dust_duration)?;
        positive("dust_radius", self.dust_radius)?;
        non_negative("dust_density", self.dust_density)?;
        if self.asset_weights.is_empty() {
            return Err(ConfigError::OutOfRange {
                key: "asset_weights",
                value: String::new(),
                bound: "non-empty",
            });
        }
        for &w in self.asset_weights.values() {
            non_negative("asset_weights", w)?;
        }
        if !self.asset_weights.values().any(|&w| w > 0.0) {
            return Err(ConfigError::OutOfRange {
                key: "asset_weights",
                value: self.get("asset_weights").unwrap_or_default(),
                bound: "at least one weight > 0",
            });
        }
        Ok(())
    }

    /// Canonical `key=value` serialization, one line per parameter.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (key, _) in PARAMETERS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).expect("every listed parameter has a value"));
            out.push('\n');
        }
        out
    }

    /// Parse a `key=value` document. Missing keys keep their defaults.
    pub fn parse_str(text: &str, origin: &Path) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        cfg.apply_str(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_str(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |msg: String| ConfigError::Malformed {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("expected key=value, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(|e| malformed(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SimConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        SimConfig::parse_str(&text, path)
    }

    pub fn total_assets(&self) -> u64 {
        self.num_layers as u64 * self.num_objs as u64
    }
}

/// Stable 64-bit digest of a configuration: the first eight bytes of the
/// SHA-256 of its canonical serialization.
pub fn config_hash(cfg: &SimConfig) -> u64 {
    let digest = Sha256::digest(cfg.serialize().as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// 16 lowercase hex characters.
pub fn format_hash(hash: u64) -> String {
    format!("{hash:016x}")
}

/// Command-line view of the parameter set: an optional `--config` file plus
/// one flag per parameter. Flags override file values.
#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(&'static str, String)>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            cfg.apply_str(&text, path)?;
        }
        for (key, value) in &self.overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl clap::FromArgMatches for ConfigArgs {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut args = ConfigArgs::default();
        args.update_from_arg_matches(matches)?;
        Ok(args)
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(path) = matches.get_one::<PathBuf>("config") {
            self.config = Some(path.clone());
        }
        for (key, _) in PARAMETERS {
            if let Some(value) = matches.get_one::<String>(key) {
                self.overrides.retain(|(k, _)| k != key);
                self.overrides.push((key, value.clone()));
            }
        }
        Ok(())
    }
}

impl clap::Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value parameter file; flags override its values"),
        );
        PARAMETERS.iter().fold(cmd, |cmd, &(key, help)| {
            let arg = Arg::new(key).long(key).help(help).action(ArgAction::Set);
            let arg = if matches!(key, "setlightrot" | "headlamp_on") {
                arg.num_args(0..=1).default_missing_value("true").value_name("BOOL")
            } else {
                arg.value_name("VALUE").allow_negative_numbers(true)
            };
            cmd.arg(arg)
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

/// Parse a flag list (without the program name) into a validated config.
pub fn parse_config<I, T>(args: I) -> Result<SimConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = <ConfigArgs as clap::Args>::augment_args(Command::new("rubble").no_binary_name(true));
    let matches = cmd.try_get_matches_from(args)?;
    let args = <ConfigArgs as clap::FromArgMatches>::from_arg_matches(&matches)?;
    args.resolve()
}

/// Help text listing every parameter flag.
pub fn help_text() -> String {
    let mut cmd = <ConfigArgs as clap::Args>::augment_args(Command::new("rubble"));
    cmd.render_long_help().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_flags() {
        let cfg = parse_config(["--numlayers", "15", "--numobjs", "250"]).unwrap();
        assert_eq!(cfg.num_layers, 15);
        assert_eq!(cfg.num_objs, 250);
        assert_eq!(cfg.total_assets(), 3750);
    }

    #[test]
    fn no_arguments_gives_defaults() {
        let cfg = parse_config(Vec::<String>::new()).unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert_eq!(cfg.light_type, LightType::Directional);
        assert_eq!(cfg.light_intensity, 1.0);
        assert_eq!(cfg.fog_density, 0.0);
        assert_eq!(cfg.voxel_resolution, 0.10);
        assert_eq!(cfg.spawn_bound[0] * 2.0, 10.0);
        assert_eq!(cfg.spawn_bound[1] * 2.0, 10.0);
    }

    #[test]
    fn zero_layers_names_the_field() {
        let err = parse_config(["--numlayers", "0"]).unwrap_err();
        match &err {
            ConfigError::OutOfRange { key, .. } => assert_eq!(*key, "numlayers"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("numlayers"));
    }

    #[test]
    fn unknown_flag_is_rejected() {
        assert!(matches!(parse_config(["--numlayer", "3"]), Err(ConfigError::Cli(_))));
    }

    #[test]
    fn negative_fog_is_rejected() {
        let err = parse_config(["--fogdensity", "-0.1"]).unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { key: "fogdensity", .. }));
    }

    #[test]
    fn bare_boolean_flag_means_true() {
        let cfg = parse_config(["--headlamp_on", "--setlightrot", "false"]).unwrap();
        assert!(cfg.headlamp_on);
        assert!(!cfg.set_light_rot);
    }

    #[test]
    fn enums_parse() {
        let cfg = parse_config(["--lighttype", "spot", "--position_distribution", "gaussian"]).unwrap();
        assert_eq!(cfg.light_type, LightType::Spot);
        assert_eq!(cfg.position_distribution, PositionDistribution::Gaussian);
        assert!(parse_config(["--lighttype", "laser"]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pile.cfg");
        fs::write(&path, "# test pile\nnumlayers=7\nnumobjs = 12\nseed=99\n").unwrap();
        let cfg = parse_config(["--config", path.to_str().unwrap(), "--numobjs", "30"]).unwrap();
        assert_eq!(cfg.num_layers, 7);
        assert_eq!(cfg.num_objs, 30);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn malformed_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        fs::write(&path, "numlayers=3\nthis line has no equals\n").unwrap();
        match SimConfig::load(&path).unwrap_err() {
            ConfigError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        fs::write(&path, "warp_factor=9\n").unwrap();
        assert!(SimConfig::load(&path).is_err());
    }

    #[test]
    fn weights_must_have_a_positive_entry() {
        assert!(parse_config(["--asset_weights", "brick:0,slab:0"]).is_err());
        assert!(parse_config(["--asset_weights", "brick:-1,slab:2"]).is_err());
        assert!(parse_config(["--asset_weights", "brick"]).is_err());
        let cfg = parse_config(["--asset_weights", "slab:3, brick:1"]).unwrap();
        assert_eq!(cfg.asset_weights.len(), 2);
        assert_eq!(cfg.get("asset_weights").unwrap(), "brick:1,slab:3");
    }

    #[test]
    fn hash_round_trips_and_is_field_sensitive() {
        let c = SimConfig::default();
        let back = SimConfig::parse_str(&c.serialize(), Path::new("<mem>")).unwrap();
        assert_eq!(config_hash(&c), config_hash(&back));
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(config_hash(&c), config_hash(&d));
        assert_eq!(format_hash(config_hash(&c)).len(), 16);
    }

    #[test]
    fn hundred_configs_hundred_digests() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..100u64 {
            let mut c = SimConfig::default();
            c.seed = i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            c.num_objs = 1 + (i % 7) as u32;
            assert!(seen.insert(config_hash(&c)));
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn help_lists_every_parameter() {
        let help = help_text();
        for (key, _) in PARAMETERS {
            assert!(help.contains(&format!("--{key}")), "help is missing --{key}");
        }
    }

    #[test]
    fn every_parameter_round_trips_through_set_and_get() {
        let c = SimConfig::default();
        for (key, _) in PARAMETERS {
            let mut d = SimConfig::default();
            d.set(key, &c.get(key).unwrap()).unwrap();
            assert_eq!(c, d, "{key}");
        }
    }
}
