//! Run configuration: file format, validation, canonical hashing.
//!
//! The on-disk format is one `key = value` pair per line.  `#` starts a
//! comment, blank lines are ignored, and numeric values carry unit
//! suffixes (`1.56 kHz um^3`, `300 K`, `5.96 km/s`).  Parsed values are
//! converted to the internal unit system immediately; nothing downstream
//! ever sees a bare Hz or kelvin.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::units::{self, Dim};
use crate::{Error, Result};

/// Fully validated run configuration in internal units.
///
/// Energies (`c3` per unit volume, `a_repulsion`, `continuum_emax`,
/// `shallow_cutoff`, `secular_window`) are angular frequencies in rad/s;
/// temperatures are thermal angular frequencies `k_B T / hbar`; lengths
/// are meters, masses kilograms.
#[derive(Clone, Debug, Serialize)]
pub struct Config {
    /// Dispersion coefficient of the attractive tail, rad/s m^3.
    pub c3: f64,
    /// Amplitude of the exponential wall, rad/s.
    pub a_repulsion: f64,
    /// Decay constant of the exponential wall, 1/m.
    pub alpha: f64,
    /// Mass of the trapped atom, kg.
    pub atom_mass: f64,
    /// Mass per lattice unit of the solid, kg.
    pub solid_mass: f64,
    /// Mass density of the solid, kg/m^3.
    pub solid_density: f64,
    /// Longitudinal sound velocity in the solid, m/s.
    pub sound_velocity: f64,
    /// Temperature of the solid, as k_B T / hbar in rad/s.
    pub bath_temperature: f64,
    /// Temperature of the incoming gas, as k_B T0 / hbar in rad/s.
    pub gas_temperature: f64,
    /// Quantization box length for the quasicontinuum, m.
    pub box_length: f64,
    /// Nominal outer edge of the solver domain, m.  Extended automatically
    /// when shallow states need more room.
    pub x_outer: f64,
    /// Grid points per local de Broglie wavelength.
    pub step_points_per_wavelength: f64,
    /// Default upper energy for free-state sweeps, rad/s.
    pub continuum_emax: f64,
    /// Number of points in free-state sweep meshes.
    pub continuum_mesh: usize,
    /// Order of the Gauss-Laguerre rule used for thermal averages.
    pub laguerre_order: usize,
    /// Minimum binding energy kept in the bound catalog, rad/s.  Levels
    /// bound less tightly than this sit microns from the surface and are
    /// dropped rather than resolved.
    pub shallow_cutoff: f64,
    /// Width of the resonance window for off-diagonal generator terms,
    /// rad/s.  Zero keeps only exactly resonant channels.
    pub secular_window: f64,
    /// Explicit catalog cache file.  Defaults to a hash-named file under
    /// the cache directory.
    pub catalog_path: Option<PathBuf>,
    /// Directory for CSV and manifest output.
    pub out_dir: PathBuf,
}

/// Everything `=`-separated to the right of a key, before unit handling.
struct RawValue<'a> {
    key: &'a str,
    text: &'a str,
    line: usize,
}

fn expected_dim(key: &str) -> Option<(Dim, bool)> {
    // (dimension, is_external_energy): external energies pick up 2 pi.
    let d = match key {
        "c3" => (Dim::FREQUENCY_VOLUME, true),
        "a_repulsion" => (Dim::FREQUENCY, true),
        "alpha" => (Dim::INV_LENGTH, false),
        "atom_mass" | "solid_mass" => (Dim::MASS, false),
        "solid_density" => (Dim::MASS_DENSITY, false),
        "sound_velocity" => (Dim::VELOCITY, false),
        "bath_temperature" | "gas_temperature" => (Dim::TEMPERATURE, false),
        "box_length" | "x_outer" => (Dim::LENGTH, false),
        "continuum_emax" | "shallow_cutoff" | "secular_window" => (Dim::FREQUENCY, true),
        "step_points_per_wavelength" => (Dim::NONE, false),
        _ => return None,
    };
    Some(d)
}

fn parse_scalar(raw: &RawValue) -> Result<f64> {
    let (dim, is_energy) = expected_dim(raw.key).expect("caller checked key");
    let mut parts = raw.text.splitn(2, char::is_whitespace);
    let num_txt = parts.next().unwrap_or("");
    let number: f64 = num_txt.parse().map_err(|_| {
        Error::config(format!(
            "line {}: key `{}`: `{}` is not a number",
            raw.line, raw.key, num_txt
        ))
    })?;
    let unit_txt = parts.next().unwrap_or("").trim();
    let (scale, got_dim) = if unit_txt.is_empty() {
        (1.0, Dim::NONE)
    } else {
        units::parse_unit(unit_txt).map_err(|e| {
            Error::config(format!("line {}: key `{}`: {}", raw.line, raw.key, e))
        })?
    };
    if got_dim != dim {
        return Err(Error::config(format!(
            "line {}: key `{}` wants {} but `{}` has {}",
            raw.line,
            raw.key,
            dim.describe(),
            unit_txt,
            got_dim.describe()
        )));
    }
    let si = number * scale;
    let internal = match raw.key {
        _ if is_energy => units::hz_to_internal(si),
        "bath_temperature" | "gas_temperature" => units::kelvin_to_internal(si),
        _ => si,
    };
    Ok(internal)
}

fn parse_count(raw: &RawValue) -> Result<usize> {
    raw.text.parse().map_err(|_| {
        Error::config(format!(
            "line {}: key `{}`: `{}` is not a positive integer",
            raw.line, raw.key, raw.text
        ))
    })
}

/// Parse a config file.  Unknown keys are rejected so that typos do not
/// silently fall back to defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut raw: BTreeMap<&str, RawValue> = BTreeMap::new();
    for (idx, full_line) in text.lines().enumerate() {
        let line = full_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::config(format!("line {}: key `{key}` has no value", idx + 1)));
        }
        let known = matches!(
            key,
            "c3" | "a_repulsion"
                | "alpha"
                | "atom_mass"
                | "solid_mass"
                | "solid_density"
                | "sound_velocity"
                | "bath_temperature"
                | "gas_temperature"
                | "box_length"
                | "x_outer"
                | "step_points_per_wavelength"
                | "continuum_emax"
                | "continuum_mesh"
                | "laguerre_order"
                | "shallow_cutoff"
                | "secular_window"
                | "catalog_path"
                | "out_dir"
        );
        if !known {
            return Err(Error::config(format!("line {}: unknown key `{key}`", idx + 1)));
        }
        if raw
            .insert(key, RawValue { key, text: value, line: idx + 1 })
            .is_some()
        {
            return Err(Error::config(format!("line {}: key `{key}` given twice", idx + 1)));
        }
    }

    let require = |key: &'static str| -> Result<f64> {
        match raw.get(key) {
            Some(rv) => parse_scalar(rv),
            None => Err(Error::config(format!("missing key `{key}`"))),
        }
    };

    let c3 = require("c3")?;
    let a_repulsion = require("a_repulsion")?;
    let alpha = require("alpha")?;
    let atom_mass = require("atom_mass")?;
    let solid_mass = require("solid_mass")?;
    let solid_density = require("solid_density")?;
    let sound_velocity = require("sound_velocity")?;
    let bath_temperature = require("bath_temperature")?;

    let optional = |key: &'static str, default: f64| -> Result<f64> {
        match raw.get(key) {
            Some(rv) => parse_scalar(rv),
            None => Ok(default),
        }
    };
    let gas_temperature = optional("gas_temperature", units::kelvin_to_internal(200e-6))?;
    let box_length = optional("box_length", 1e-3)?;
    let x_outer = optional("x_outer", 500e-9)?;
    let step_points_per_wavelength = optional("step_points_per_wavelength", 20.0)?;
    let continuum_emax = optional("continuum_emax", units::hz_to_internal(20e6))?;
    let shallow_cutoff = optional("shallow_cutoff", units::hz_to_internal(100e3))?;
    let secular_window = optional("secular_window", 0.0)?;

    let continuum_mesh = match raw.get("continuum_mesh") {
        Some(rv) => parse_count(rv)?,
        None => 200,
    };
    let laguerre_order = match raw.get("laguerre_order") {
        Some(rv) => parse_count(rv)?,
        None => 48,
    };
    let catalog_path = raw.get("catalog_path").map(|rv| PathBuf::from(rv.text));
    let out_dir = raw
        .get("out_dir")
        .map(|rv| PathBuf::from(rv.text))
        .unwrap_or_else(|| PathBuf::from("out"));

    let config = Config {
        c3,
        a_repulsion,
        alpha,
        atom_mass,
        solid_mass,
        solid_density,
        sound_velocity,
        bath_temperature,
        gas_temperature,
        box_length,
        x_outer,
        step_points_per_wavelength,
        continuum_emax,
        continuum_mesh,
        laguerre_order,
        shallow_cutoff,
        secular_window,
        catalog_path,
        out_dir,
    };
    config.validate()?;
    Ok(config)
}

impl Config {
    /// Reject values a later stage would choke on, naming the key.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c3", self.c3),
            ("a_repulsion", self.a_repulsion),
            ("alpha", self.alpha),
            ("atom_mass", self.atom_mass),
            ("solid_mass", self.solid_mass),
            ("solid_density", self.solid_density),
            ("sound_velocity", self.sound_velocity),
            ("box_length", self.box_length),
            ("x_outer", self.x_outer),
            ("shallow_cutoff", self.shallow_cutoff),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("key `{key}` must be positive, got {v:e}")));
            }
        }
        for (key, v) in [
            ("bath_temperature", self.bath_temperature),
            ("gas_temperature", self.gas_temperature),
            ("secular_window", self.secular_window),
            ("continuum_emax", self.continuum_emax),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("key `{key}` must be >= 0, got {v:e}")));
            }
        }
        if self.step_points_per_wavelength < 4.0 {
            return Err(Error::config(format!(
                "key `step_points_per_wavelength` must be at least 4, got {}",
                self.step_points_per_wavelength
            )));
        }
        if self.box_length <= self.x_outer {
            return Err(Error::config(format!(
                "key `box_length` ({:e} m) must exceed `x_outer` ({:e} m)",
                self.box_length, self.x_outer
            )));
        }
        if self.continuum_mesh < 2 {
            return Err(Error::config("key `continuum_mesh` must be at least 2".to_owned()));
        }
        if self.laguerre_order < 2 || self.laguerre_order > 512 {
            return Err(Error::config("key `laguerre_order` must lie in 2..=512".to_owned()));
        }
        Ok(())
    }

    /// Override one key with a raw value string (units allowed), as used by
    /// CLI flags.  Only scalar keys can be overridden this way.
    pub fn override_key(&mut self, key: &str, value: &str) -> Result<()> {
        let rv = RawValue { key, text: value.trim(), line: 0 };
        match key {
            "bath_temperature" => self.bath_temperature = parse_scalar(&rv)?,
            "gas_temperature" => self.gas_temperature = parse_scalar(&rv)?,
            "box_length" => self.box_length = parse_scalar(&rv)?,
            "continuum_emax" => self.continuum_emax = parse_scalar(&rv)?,
            "x_outer" => self.x_outer = parse_scalar(&rv)?,
            "step_points_per_wavelength" => {
                self.step_points_per_wavelength = parse_scalar(&rv)?
            }
            _ => {
                return Err(Error::config(format!("key `{key}` cannot be overridden")));
            }
        }
        self.validate()
    }

    /// Canonical text form in external units.  Parsing it back reproduces
    /// the config to full precision.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let hz = units::internal_to_hz;
        let k = units::internal_to_kelvin;
        let _ = writeln!(s, "c3 = {:.17e} Hz m^3", hz(self.c3));
        let _ = writeln!(s, "a_repulsion = {:.17e} Hz", hz(self.a_repulsion));
        let _ = writeln!(s, "alpha = {:.17e} 1/m", self.alpha);
        let _ = writeln!(s, "atom_mass = {:.17e} kg", self.atom_mass);
        let _ = writeln!(s, "solid_mass = {:.17e} kg", self.solid_mass);
        let _ = writeln!(s, "solid_density = {:.17e} kg/m^3", self.solid_density);
        let _ = writeln!(s, "sound_velocity = {:.17e} m/s", self.sound_velocity);
        let _ = writeln!(s, "bath_temperature = {:.17e} K", k(self.bath_temperature));
        let _ = writeln!(s, "gas_temperature = {:.17e} K", k(self.gas_temperature));
        let _ = writeln!(s, "box_length = {:.17e} m", self.box_length);
        let _ = writeln!(s, "x_outer = {:.17e} m", self.x_outer);
        let _ = writeln!(s, "step_points_per_wavelength = {:.17e}", self.step_points_per_wavelength);
        let _ = writeln!(s, "continuum_emax = {:.17e} Hz", hz(self.continuum_emax));
        let _ = writeln!(s, "continuum_mesh = {}", self.continuum_mesh);
        let _ = writeln!(s, "laguerre_order = {}", self.laguerre_order);
        let _ = writeln!(s, "shallow_cutoff = {:.17e} Hz", hz(self.shallow_cutoff));
        let _ = writeln!(s, "secular_window = {:.17e} Hz", hz(self.secular_window));
        if let Some(p) = &self.catalog_path {
            let _ = writeln!(s, "catalog_path = {}", p.display());
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }

    /// SHA-256 over every field that influences computed numbers (paths are
    /// excluded).  Cached catalogs and CSV headers carry this hash.
    pub fn provenance_hash(&self) -> String {
        let mut body = String::new();
        for line in self.serialize().lines() {
            if line.starts_with("catalog_path") || line.starts_with("out_dir") {
                continue;
            }
            body.push_str(line);
            body.push('\n');
        }
        let digest = Sha256::digest(body.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }

    /// First 16 hex digits of [`Config::provenance_hash`], for file names.
    pub fn short_hash(&self) -> String {
        self.provenance_hash()[..16].to_owned()
    }

    /// Reference configuration: a ground-state cesium atom against a fused
    /// silica surface, bath at 300 K, gas at 200 uK.
    pub fn silica_cesium() -> Config {
        Config {
            c3: units::hz_to_internal(1.56e3 * 1e-18),
            a_repulsion: units::hz_to_internal(1.6e18),
            alpha: 53e9,
            atom_mass: 2.21e-25,
            solid_mass: 9.98e-26,
            solid_density: 2.2e3,
            sound_velocity: 5.96e3,
            bath_temperature: units::kelvin_to_internal(300.0),
            gas_temperature: units::kelvin_to_internal(200e-6),
            box_length: 1e-3,
            x_outer: 500e-9,
            step_points_per_wavelength: 20.0,
            continuum_emax: units::hz_to_internal(20e6),
            continuum_mesh: 200,
            laguerre_order: 48,
            shallow_cutoff: units::hz_to_internal(100e3),
            secular_window: 0.0,
            catalog_path: None,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Atom-side potential parameters.
    pub fn potential(&self) -> crate::potential::SurfacePotential {
        crate::potential::SurfacePotential::new(self.c3, self.a_repulsion, self.alpha, self.atom_mass)
    }

    /// Solid-side constants derived from the config.
    pub fn solid(&self) -> crate::rates::DebyeSolid {
        crate::rates::DebyeSolid::derive(
            self.solid_mass,
            self.solid_density,
            self.sound_velocity,
            self.bath_temperature,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TWO_PI;
    use approx::assert_relative_eq;

    const REFERENCE: &str = "\
# surface + atom
c3 = 1.56 kHz um^3
a_repulsion = 1.6e18 Hz
alpha = 53 1/nm
atom_mass = 2.21e-25 kg
# solid
solid_mass = 9.98e-26 kg
solid_density = 2.2 g/cm^3
sound_velocity = 5.96 km/s
bath_temperature = 300 K
gas_temperature = 200 uK
box_length = 1 mm
";

    #[test]
    fn reference_file_parses_to_internal_units() {
        let c = parse_config(REFERENCE).unwrap();
        assert_relative_eq!(c.c3, TWO_PI * 1.56e-15, max_relative = 1e-12);
        assert_relative_eq!(c.a_repulsion, TWO_PI * 1.6e18, max_relative = 1e-12);
        assert_relative_eq!(c.alpha, 5.3e10, max_relative = 1e-12);
        assert_relative_eq!(c.atom_mass, 2.21e-25, max_relative = 1e-15);
        assert_relative_eq!(c.bath_temperature, units::kelvin_to_internal(300.0), max_relative = 1e-15);
        assert_relative_eq!(c.gas_temperature, units::kelvin_to_internal(200e-6), max_relative = 1e-12);
        assert_relative_eq!(c.box_length, 1e-3, max_relative = 1e-15);
        // defaults fill in
        assert_eq!(c.laguerre_order, 48);
        assert_relative_eq!(c.step_points_per_wavelength, 20.0);
        assert_relative_eq!(c.shallow_cutoff, TWO_PI * 1e5, max_relative = 1e-12);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = REFERENCE.replace("a_repulsion = 1.6e18 Hz", "a_repulsion = -1 Hz");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("a_repulsion"), "{err}");

        let bad = REFERENCE.replace("alpha = 53 1/nm", "alpha = 53 parsec");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");

        let missing = REFERENCE.replace("sound_velocity = 5.96 km/s\n", "");
        let err = parse_config(&missing).unwrap_err().to_string();
        assert!(err.contains("sound_velocity"), "{err}");

        let unknown = format!("{REFERENCE}\nspeed_of_sound = 1 km/s\n");
        let err = parse_config(&unknown).unwrap_err().to_string();
        assert!(err.contains("speed_of_sound"), "{err}");

        // wrong dimension
        let bad = REFERENCE.replace("atom_mass = 2.21e-25 kg", "atom_mass = 2.21e-25 K");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("atom_mass"), "{err}");
    }

    #[test]
    fn serialize_round_trips() {
        let c = Config::silica_cesium();
        let text = c.serialize();
        let back = parse_config(&text).unwrap();
        for (a, b) in [
            (c.c3, back.c3),
            (c.a_repulsion, back.a_repulsion),
            (c.alpha, back.alpha),
            (c.atom_mass, back.atom_mass),
            (c.solid_mass, back.solid_mass),
            (c.solid_density, back.solid_density),
            (c.sound_velocity, back.sound_velocity),
            (c.bath_temperature, back.bath_temperature),
            (c.gas_temperature, back.gas_temperature),
            (c.box_length, back.box_length),
            (c.x_outer, back.x_outer),
            (c.continuum_emax, back.continuum_emax),
            (c.shallow_cutoff, back.shallow_cutoff),
        ] {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert_eq!(c.continuum_mesh, back.continuum_mesh);
        assert_eq!(c.laguerre_order, back.laguerre_order);
        assert_eq!(c.provenance_hash(), back.provenance_hash());
    }

    #[test]
    fn hash_tracks_physics_not_paths() {
        let a = Config::silica_cesium();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.provenance_hash(), b.provenance_hash());
        let mut c = a.clone();
        c.bath_temperature = units::kelvin_to_internal(30.0);
        assert_ne!(a.provenance_hash(), c.provenance_hash());
    }

    #[test]
    fn override_applies_and_validates() {
        let mut c = Config::silica_cesium();
        c.override_key("bath_temperature", "30 K").unwrap();
        assert_relative_eq!(c.bath_temperature, units::kelvin_to_internal(30.0), max_relative = 1e-12);
        assert!(c.override_key("box_length", "100 nm").is_err());
        assert!(c.override_key("c3", "2 kHz um^3").is_err());
    }
}
