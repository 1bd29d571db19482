//! Physical constants and unit conversions.
//!
//! Internal convention: every energy-like quantity is an angular frequency
//! in rad/s (the energy divided by hbar), every length is in meters, every
//! time in seconds, every mass in kilograms.  Temperatures are carried as
//! the thermal angular frequency `k_B T / hbar`.  External text (config
//! files, CSV reports) quotes energies as ordinary frequencies -- Hz and
//! its multiples, meaning energy divided by h -- and temperatures in
//! kelvin, so conversions in and out of the internal system happen exactly
//! once, here.

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380_649e-23;
/// Unified atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Ordinary frequency (energy over h, in Hz) to internal rad/s.
#[inline]
pub fn hz_to_internal(f: f64) -> f64 {
    TWO_PI * f
}

/// Internal rad/s back to ordinary frequency in Hz.
#[inline]
pub fn internal_to_hz(w: f64) -> f64 {
    w / TWO_PI
}

/// Temperature in kelvin to the thermal angular frequency `k_B T / hbar`.
#[inline]
pub fn kelvin_to_internal(t: f64) -> f64 {
    KB * t / HBAR
}

/// Inverse of [`kelvin_to_internal`].
#[inline]
pub fn internal_to_kelvin(w: f64) -> f64 {
    w * HBAR / KB
}

/// Dimension exponents over the base units (m, kg, s, K).
///
/// Frequencies carry dimension 1/s; config keys that are "energies" in the
/// external sense (quoted in Hz) are therefore checked against `FREQUENCY`
/// and scaled by two pi when they enter the internal system.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dim(pub [i32; 4]);

impl Dim {
    pub const NONE: Dim = Dim([0, 0, 0, 0]);
    pub const LENGTH: Dim = Dim([1, 0, 0, 0]);
    pub const MASS: Dim = Dim([0, 1, 0, 0]);
    pub const TEMPERATURE: Dim = Dim([0, 0, 0, 1]);
    pub const FREQUENCY: Dim = Dim([0, 0, -1, 0]);
    pub const INV_LENGTH: Dim = Dim([-1, 0, 0, 0]);
    pub const VELOCITY: Dim = Dim([1, 0, -1, 0]);
    pub const MASS_DENSITY: Dim = Dim([-3, 1, 0, 0]);
    /// Frequency times volume, the dimension of the C3 coefficient when the
    /// potential is quoted as an ordinary frequency.
    pub const FREQUENCY_VOLUME: Dim = Dim([3, 0, -1, 0]);

    fn combine(self, other: Dim, power: i32) -> Dim {
        let mut out = self.0;
        for (o, e) in out.iter_mut().zip(other.0) {
            *o += e * power;
        }
        Dim(out)
    }

    /// Human-readable form for error messages, e.g. `m^3 s^-1`.
    pub fn describe(self) -> String {
        if self == Dim::NONE {
            return "dimensionless".to_owned();
        }
        let names = ["m", "kg", "s", "K"];
        let mut parts = Vec::new();
        for (name, &e) in names.iter().zip(self.0.iter()) {
            match e {
                0 => {}
                1 => parts.push((*name).to_owned()),
                _ => parts.push(format!("{name}^{e}")),
            }
        }
        parts.join(" ")
    }
}

/// One recognized unit token: SI scale factor plus dimension.
fn lookup_token(tok: &str) -> Option<(f64, Dim)> {
    let t = match tok {
        // lengths
        "m" => (1.0, Dim::LENGTH),
        "cm" => (1e-2, Dim::LENGTH),
        "mm" => (1e-3, Dim::LENGTH),
        "um" => (1e-6, Dim::LENGTH),
        "nm" => (1e-9, Dim::LENGTH),
        "pm" => (1e-12, Dim::LENGTH),
        "km" => (1e3, Dim::LENGTH),
        // masses
        "kg" => (1.0, Dim::MASS),
        "g" => (1e-3, Dim::MASS),
        "amu" | "u" => (AMU, Dim::MASS),
        // times
        "s" => (1.0, Dim([0, 0, 1, 0])),
        "ms" => (1e-3, Dim([0, 0, 1, 0])),
        "us" => (1e-6, Dim([0, 0, 1, 0])),
        "ns" => (1e-9, Dim([0, 0, 1, 0])),
        // ordinary frequencies (external energies)
        "Hz" => (1.0, Dim::FREQUENCY),
        "kHz" => (1e3, Dim::FREQUENCY),
        "MHz" => (1e6, Dim::FREQUENCY),
        "GHz" => (1e9, Dim::FREQUENCY),
        "THz" => (1e12, Dim::FREQUENCY),
        // temperatures
        "K" => (1.0, Dim::TEMPERATURE),
        "mK" => (1e-3, Dim::TEMPERATURE),
        "uK" => (1e-6, Dim::TEMPERATURE),
        "nK" => (1e-9, Dim::TEMPERATURE),
        // bare "1" as the numerator of reciprocals like 1/nm
        "1" => (1.0, Dim::NONE),
        _ => return None,
    };
    Some(t)
}

/// Parse one factor of a unit expression: `name`, `name^int`, or a quotient
/// `a/b` where both sides follow the same form.
fn parse_factor(tok: &str) -> Result<(f64, Dim), String> {
    if let Some((num, den)) = tok.split_once('/') {
        if den.contains('/') {
            return Err(format!("unit factor `{tok}` has more than one `/`"));
        }
        let (fnum, dnum) = parse_factor(num)?;
        let (fden, dden) = parse_factor(den)?;
        return Ok((fnum / fden, dnum.combine(dden, -1)));
    }
    let (name, power) = match tok.split_once('^') {
        Some((name, raw)) => {
            let p: i32 = raw
                .parse()
                .map_err(|_| format!("bad exponent `{raw}` in unit factor `{tok}`"))?;
            (name, p)
        }
        None => (tok, 1),
    };
    let (scale, dim) = lookup_token(name).ok_or_else(|| format!("unknown unit `{name}`"))?;
    Ok((scale.powi(power), Dim::NONE.combine(dim, power)))
}

/// Parse a unit expression such as `kHz um^3`, `g/cm^3` or `1/nm` into an
/// SI scale factor plus dimension exponents.  Factors may be separated by
/// whitespace or `*`.
pub fn parse_unit(expr: &str) -> Result<(f64, Dim), String> {
    let mut scale = 1.0;
    let mut dim = Dim::NONE;
    let mut seen = false;
    for tok in expr.split(|c: char| c.is_whitespace() || c == '*') {
        if tok.is_empty() {
            continue;
        }
        seen = true;
        let (s, d) = parse_factor(tok)?;
        scale *= s;
        dim = dim.combine(d, 1);
    }
    if !seen {
        return Err("empty unit expression".to_owned());
    }
    Ok((scale, dim))
}
