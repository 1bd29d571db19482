//! Batch front end: read one config file, compute the requested tables,
//! and write CSV artifacts plus a run manifest under the output
//! directory.
//!
//! Exit codes: 1 for configuration problems (bad flags, bad config file,
//! bad selections), 2 for numerical failures inside the solvers, 3 for
//! filesystem trouble.

mod emit;
mod tasks;

use clap::{Parser, Subcommand};
use emit::Emitter;
use phonon_decay::catalog::SpectrumCatalog;
use phonon_decay::rates::DebyeSolid;
use phonon_decay::units::{self, Dim};
use phonon_decay::{Config, Error, Result};
use std::path::PathBuf;
use tasks::Survey;

#[derive(Parser)]
#[command(
    name = "phonon-decay",
    version,
    about = "Bound levels of an atom in a surface well and the phonon-driven rates between them",
    propagate_version = true
)]
struct Cli {
    /// Run configuration file (`key = value` lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's `out_dir`
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for the data-parallel kernels (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Rewrite one config key, e.g. `--set x_outer=800nm`.  Changes the
    /// provenance hash, so the catalog cache is re-keyed accordingly.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the bound spectrum and write the level table
    Spectrum,
    /// Force matrix elements between one level and every other
    Elements {
        /// Source level index
        #[arg(long = "from-nu", value_name = "NU", default_value_t = 0)]
        from_nu: usize,
    },
    /// Phonon transition rates out of one level
    Rates {
        /// Source level index
        #[arg(long = "from-nu", value_name = "NU", default_value_t = 0)]
        from_nu: usize,
        /// Bath temperature for this run, e.g. `30K` (default: config value)
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
    },
    /// Per-level escape budget: emission, bound absorption, desorption
    Depletion {
        /// Bath temperature for this run, e.g. `30K`
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
    },
    /// Sticking of slow free atoms: per-level rates, totals, thermal averages
    Adsorption {
        /// Bath temperature for this run
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
        /// Gas temperature for the thermal tables, e.g. `200uK`
        #[arg(long = "T0", value_name = "TEMP")]
        t0: Option<String>,
        /// Probe energy of the incoming atom as a frequency, e.g. `2MHz`
        #[arg(long = "Ef", value_name = "ENERGY")]
        ef: Option<String>,
        /// Quantization box length, e.g. `1mm`
        #[arg(long = "L", value_name = "LENGTH")]
        box_length: Option<String>,
    },
    /// Heating and cooling of free atoms that stay free
    Freefree {
        /// Bath temperature for this run
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
        /// Quantization box length, e.g. `1mm`
        #[arg(long = "L", value_name = "LENGTH")]
        box_length: Option<String>,
    },
    /// Bath-induced shifts of the level energies
    Shifts {
        /// Bath temperature for this run
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
        /// Levels to treat: `all`, `A..B`, or a comma list
        #[arg(long, value_name = "SEL", default_value = "all")]
        subset: String,
    },
    /// Integrate the reduced density matrix over a level subset
    Evolve {
        /// Levels to keep: `A..B` (inclusive) or a comma list of indices
        #[arg(long, value_name = "SEL")]
        subset: String,
        /// Bath temperature for this run
        #[arg(long, value_name = "TEMP")]
        temperature: Option<String>,
        /// Initial state: `pure:NU`, `boltzmann`, `uniform`, `super:NU,NU`,
        /// or a comma list of populations (default: pure at the top level)
        #[arg(long, value_name = "STATE")]
        rho0: Option<String>,
        /// Integration horizon in seconds
        #[arg(long = "t-final", value_name = "SECONDS")]
        t_final: f64,
        /// Integrator step in seconds (default: set by the fastest element)
        #[arg(long, value_name = "SECONDS")]
        dt: Option<f64>,
        /// Number of output rows along the trajectory
        #[arg(long, value_name = "N", default_value_t = 200)]
        samples: usize,
        /// Coherence magnitudes to report, e.g. `12:11,12:10`
        #[arg(long, value_name = "PAIRS")]
        pairs: Option<String>,
    },
    /// Emit the full survey table set at pinned scenario parameters
    #[command(name = "reproduce-figures")]
    ReproduceFigures,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Spectrum => "spectrum",
            Cmd::Elements { .. } => "elements",
            Cmd::Rates { .. } => "rates",
            Cmd::Depletion { .. } => "depletion",
            Cmd::Adsorption { .. } => "adsorption",
            Cmd::Freefree { .. } => "freefree",
            Cmd::Shifts { .. } => "shifts",
            Cmd::Evolve { .. } => "evolve",
            Cmd::ReproduceFigures => "reproduce-figures",
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is a bad
            // invocation and exits like a config problem.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = match err {
            Error::Config(_) => 1,
            Error::Numerics(_) => 2,
            Error::Io(_) => 3,
        };
        std::process::exit(code);
    }
}

/// Split `30K` / `2 MHz` / `1e-3` into a number and a unit expression.
fn split_quantity(text: &str) -> Result<(f64, String)> {
    let t = text.trim();
    let mut best: Option<(f64, usize)> = None;
    for end in 1..=t.len() {
        if !t.is_char_boundary(end) {
            continue;
        }
        if let Ok(v) = t[..end].parse::<f64>() {
            best = Some((v, end));
        }
    }
    match best {
        Some((v, end)) if v.is_finite() => Ok((v, t[end..].trim().to_owned())),
        _ => Err(Error::config(format!(
            "`{t}`: expected a number with an optional unit"
        ))),
    }
}

/// Normalize a flag value for [`Config::override_key`], which wants the
/// number and the unit separated by whitespace.
fn normalize_quantity(text: &str) -> Result<String> {
    let (v, unit) = split_quantity(text)?;
    if unit.is_empty() {
        Ok(format!("{v}"))
    } else {
        Ok(format!("{v} {unit}"))
    }
}

/// Temperature flag to internal units.  A bare number means kelvin.
fn parse_temperature(text: &str) -> Result<f64> {
    let (v, unit) = split_quantity(text)?;
    let kelvin = if unit.is_empty() {
        v
    } else {
        let (scale, dim) = units::parse_unit(&unit).map_err(Error::config)?;
        if dim != Dim::TEMPERATURE {
            return Err(Error::config(format!("`{text}`: expected a temperature")));
        }
        v * scale
    };
    if !(kelvin >= 0.0) {
        return Err(Error::config(format!("`{text}`: temperature must be >= 0")));
    }
    Ok(units::kelvin_to_internal(kelvin))
}

/// Energy flag (as a frequency) to internal units.  A bare number means Hz.
fn parse_energy(text: &str) -> Result<f64> {
    let (v, unit) = split_quantity(text)?;
    let hz = if unit.is_empty() {
        v
    } else {
        let (scale, dim) = units::parse_unit(&unit).map_err(Error::config)?;
        if dim != Dim::FREQUENCY {
            return Err(Error::config(format!("`{text}`: expected a frequency")));
        }
        v * scale
    };
    if !(hz > 0.0) {
        return Err(Error::config(format!("`{text}`: energy must be positive")));
    }
    Ok(units::hz_to_internal(hz))
}

/// Length flag to meters.  A bare number means meters.
fn parse_length(text: &str) -> Result<f64> {
    let (v, unit) = split_quantity(text)?;
    let meters = if unit.is_empty() {
        v
    } else {
        let (scale, dim) = units::parse_unit(&unit).map_err(Error::config)?;
        if dim != Dim::LENGTH {
            return Err(Error::config(format!("`{text}`: expected a length")));
        }
        v * scale
    };
    if !(meters > 0.0) {
        return Err(Error::config(format!("`{text}`: length must be positive")));
    }
    Ok(meters)
}

/// Level selection: `all`, an inclusive `A..B` range, or a comma list.
/// Lists are sorted; duplicates are rejected.
fn parse_subset(text: &str, catalog_len: usize) -> Result<Vec<usize>> {
    let t = text.trim();
    let parse_index = |raw: &str| -> Result<usize> {
        raw.trim()
            .parse()
            .map_err(|_| Error::config(format!("flag --subset: `{raw}` is not a level index")))
    };
    let indices: Vec<usize> = if t == "all" {
        (0..catalog_len).collect()
    } else if let Some((a, b)) = t.split_once("..") {
        let (a, b) = (parse_index(a)?, parse_index(b)?);
        if a > b {
            return Err(Error::config(format!("flag --subset: `{t}` is an empty range")));
        }
        (a..=b).collect()
    } else {
        let mut list: Vec<usize> = t.split(',').map(parse_index).collect::<Result<_>>()?;
        list.sort_unstable();
        if list.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::config("flag --subset: duplicate level index"));
        }
        list
    };
    match indices.last() {
        None => Err(Error::config("flag --subset: empty selection")),
        Some(&last) if last >= catalog_len => Err(Error::config(format!(
            "flag --subset: level {last} does not exist; the catalog holds {catalog_len} levels"
        ))),
        _ => Ok(indices),
    }
}

/// Coherence pair list `L:K,L:K` in catalog indices.
fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|chunk| {
            let (l, k) = chunk
                .split_once(':')
                .ok_or_else(|| Error::config(format!("flag --pairs: `{chunk}` wants L:K")))?;
            let parse = |raw: &str| -> Result<usize> {
                raw.trim().parse().map_err(|_| {
                    Error::config(format!("flag --pairs: `{raw}` is not a level index"))
                })
            };
            Ok((parse(l)?, parse(k)?))
        })
        .collect()
}

/// Resolve the bath for one run: the config's solid, possibly at a
/// flag-supplied temperature.  Returns the solid and the kelvin value.
fn resolve_bath(cfg: &Config, flag: Option<&str>) -> Result<(DebyeSolid, f64)> {
    let solid = cfg.solid();
    match flag {
        None => Ok((solid, units::internal_to_kelvin(cfg.bath_temperature))),
        Some(text) => {
            let theta = parse_temperature(text)?;
            Ok((solid.at_temperature(theta), units::internal_to_kelvin(theta)))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("flag --threads: must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("flag --config is required"))?;
    let text = std::fs::read_to_string(config_path)?;
    let mut cfg = phonon_decay::config::parse_config(&text)?;

    let mut overrides: Vec<String> = Vec::new();
    for kv in &cli.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("flag --set: `{kv}` is not KEY=VALUE")))?;
        let normalized = normalize_quantity(value)?;
        cfg.override_key(key.trim(), &normalized)?;
        overrides.push(format!("set {} = {normalized}", key.trim()));
    }
    if let Some(dir) = &cli.out {
        cfg.out_dir = dir.clone();
    }

    // Scenario flags stay outside the config hash; record them in the
    // manifest so a table's provenance is still complete.
    let mut note_flag = |name: &str, value: &Option<String>| {
        if let Some(v) = value {
            overrides.push(format!("{name} {v}"));
        }
    };
    match &cli.cmd {
        Cmd::Rates { temperature, .. } | Cmd::Depletion { temperature } => {
            note_flag("temperature", temperature);
        }
        Cmd::Adsorption { temperature, t0, ef, box_length } => {
            note_flag("temperature", temperature);
            note_flag("T0", t0);
            note_flag("Ef", ef);
            note_flag("L", box_length);
        }
        Cmd::Freefree { temperature, box_length } => {
            note_flag("temperature", temperature);
            note_flag("L", box_length);
        }
        Cmd::Shifts { temperature, .. } | Cmd::Evolve { temperature, .. } => {
            note_flag("temperature", temperature);
        }
        _ => {}
    }

    let mut emitter = Emitter::new(&cfg.out_dir, &cfg.provenance_hash(), cli.cmd.name(), overrides)?;

    // Everything except the free-free tables needs the level catalog.
    let catalog = if matches!(cli.cmd, Cmd::Freefree { .. }) {
        None
    } else {
        let (catalog, cache_hit) = SpectrumCatalog::load_or_build(&cfg)?;
        eprintln!(
            "catalog: {} ({} levels)",
            if cache_hit { "cache hit" } else { "built" },
            catalog.len()
        );
        emitter.set_catalog(&SpectrumCatalog::cache_file(&cfg), cache_hit);
        Some(catalog)
    };
    let survey = catalog.as_ref().map(|catalog| Survey { cfg: &cfg, catalog });

    match &cli.cmd {
        Cmd::Spectrum => tasks::spectrum(survey.as_ref().unwrap(), &mut emitter)?,
        Cmd::Elements { from_nu } => {
            tasks::elements(survey.as_ref().unwrap(), &mut emitter, *from_nu)?;
        }
        Cmd::Rates { from_nu, temperature } => {
            let sv = survey.as_ref().unwrap();
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            tasks::rates(sv, &mut emitter, &solid, kelvin, *from_nu)?;
        }
        Cmd::Depletion { temperature } => {
            let sv = survey.as_ref().unwrap();
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            let ladder = tasks::desorption_ladder(sv, &solid)?;
            tasks::depletion(sv, &mut emitter, &solid, kelvin, &ladder, "depletion.csv")?;
        }
        Cmd::Adsorption { temperature, t0, ef, box_length } => {
            let sv = survey.as_ref().unwrap();
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            let theta0 = match t0 {
                Some(text) => parse_temperature(text)?,
                None => cfg.gas_temperature,
            };
            let probe = match ef {
                Some(text) => parse_energy(text)?,
                None => units::hz_to_internal(2e6),
            };
            let length = match box_length {
                Some(text) => parse_length(text)?,
                None => cfg.box_length,
            };
            tasks::adsorption(sv, &mut emitter, &solid, kelvin, theta0, probe, length)?;
        }
        Cmd::Freefree { temperature, box_length } => {
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            let length = match box_length {
                Some(text) => parse_length(text)?,
                None => cfg.box_length,
            };
            let x_inner = cfg.potential().inner_wall()?;
            tasks::freefree(&cfg, &mut emitter, &solid, kelvin, length, x_inner)?;
        }
        Cmd::Shifts { temperature, subset } => {
            let sv = survey.as_ref().unwrap();
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            let selection = parse_subset(subset, sv.catalog.len())?;
            tasks::shifts(sv, &mut emitter, &solid, kelvin, &selection)?;
        }
        Cmd::Evolve {
            subset,
            temperature,
            rho0,
            t_final,
            dt,
            samples,
            pairs,
        } => {
            let sv = survey.as_ref().unwrap();
            let (solid, kelvin) = resolve_bath(&cfg, temperature.as_deref())?;
            let selection = parse_subset(subset, sv.catalog.len())?;
            let pair_list = match pairs {
                Some(text) => parse_pairs(text)?,
                None => Vec::new(),
            };
            tasks::evolve(
                sv,
                &mut emitter,
                &solid,
                kelvin,
                &selection,
                rho0.as_deref(),
                *t_final,
                *dt,
                *samples,
                &pair_list,
            )?;
        }
        Cmd::ReproduceFigures => {
            tasks::reproduce_figures(survey.as_ref().unwrap(), &mut emitter)?;
        }
    }
    emitter.finish()?;
    Ok(())
}
