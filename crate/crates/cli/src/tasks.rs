//! Drivers behind the subcommands: each one turns the catalog plus a few
//! scenario parameters (bath temperature, gas temperature, box length,
//! probe energy) into CSV tables.
//!
//! Scenario parameters deliberately stay outside the provenance hash.
//! The catalog depends only on the potential and the solver meshes, so a
//! different bath temperature probes the same cached catalog instead of
//! rebuilding it.  Each table records the scenario it was computed at in
//! its `#` preamble.

use crate::emit::{idx, num, Emitter, Table};
use nalgebra::DMatrix;
use num_complex::Complex64;
use phonon_decay::catalog::SpectrumCatalog;
use phonon_decay::config::Config;
use phonon_decay::dynamics::{
    build_generator, evolve as integrate_rk4, rate_evolve, DensityMatrix, GeneratorOptions,
    LevelSubset,
};
use phonon_decay::potential::{PotentialModel, SurfacePotential};
use phonon_decay::rates::{
    depletion_rates, free_free_rates, transition_rate, BoundFreeLadder, CaptureTable, DebyeSolid,
    FreeFreeOpts, ThermalBalanceKernel,
};
use phonon_decay::shifts::level_shift;
use phonon_decay::spectrum::ContinuumOptions;
use phonon_decay::units::{hz_to_internal, internal_to_hz, internal_to_kelvin, kelvin_to_internal};
use phonon_decay::{Error, Result};
use rayon::prelude::*;
use serde_json::json;

/// Everything the catalog-backed drivers share.
pub struct Survey<'a> {
    pub cfg: &'a Config,
    pub catalog: &'a SpectrumCatalog,
}

impl Survey<'_> {
    fn energies(&self) -> Vec<f64> {
        self.catalog.spectrum.energies()
    }

    fn pot(&self) -> SurfacePotential {
        self.cfg.potential()
    }

    fn copts(&self) -> ContinuumOptions {
        ContinuumOptions::from_config(self.cfg, self.catalog.spectrum.x_w)
    }
}

/// Geometric grid from `lo` to `hi` inclusive.
fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// Square-root-spaced energy mesh up to `e_top`, origin excluded.
fn sqrt_mesh(e_top: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|j| e_top * (j as f64 / count as f64).powi(2))
        .collect()
}

pub fn spectrum(sv: &Survey, emit: &mut Emitter) -> Result<()> {
    let mut t = Table::new("levels.csv", &["nu", "energy_hz", "x_cross_nm"]);
    t.note("levels", &idx(sv.catalog.len()));
    for st in &sv.catalog.spectrum.states {
        t.row(vec![
            idx(st.nu),
            num(internal_to_hz(st.energy)),
            num(st.x_cross * 1e9),
        ]);
    }
    emit.table(t)?;
    emit.json("levels.json", &sv.catalog.level_table())
}

pub fn elements(sv: &Survey, emit: &mut Emitter, from_nu: usize) -> Result<()> {
    let n = sv.catalog.len();
    if from_nu >= n {
        return Err(Error::config(format!(
            "flag --from-nu: level {from_nu} does not exist; the catalog holds {n} levels"
        )));
    }
    let name = format!("elements-nu{from_nu}.csv");
    let mut t = Table::new(&name, &["nu", "omega_hz", "element_hz_per_m"]);
    t.note("from_nu", &idx(from_nu));
    for nu in 0..n {
        t.row(vec![
            idx(nu),
            num(internal_to_hz(sv.catalog.omega(from_nu, nu))),
            num(internal_to_hz(sv.catalog.force[(from_nu, nu)])),
        ]);
    }
    emit.table(t)
}

/// Transition rates out of one level.  Positive `omega_hz` rows emit a
/// phonon (the destination lies below), negative rows absorb one.
pub fn rates(
    sv: &Survey,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    from_nu: usize,
) -> Result<()> {
    let energies = sv.energies();
    let n = energies.len();
    if from_nu >= n {
        return Err(Error::config(format!(
            "flag --from-nu: level {from_nu} does not exist; the catalog holds {n} levels"
        )));
    }
    let name = format!("transition-rates-nu{from_nu}.csv");
    let mut t = Table::new(&name, &["nu", "omega_hz", "rate_per_s"]);
    t.note("from_nu", &idx(from_nu));
    t.note("bath_temperature_k", &num(bath_kelvin));
    for nu in 0..n {
        if nu == from_nu {
            continue;
        }
        let r = transition_rate(solid, energies[from_nu], energies[nu], sv.catalog.force[(from_nu, nu)]);
        t.row(vec![
            idx(nu),
            num(internal_to_hz(energies[from_nu] - energies[nu])),
            num(r),
        ]);
    }
    emit.table(t)
}

/// Free-state ladder for desorption sums: covers every energy a single
/// acoustic phonon can reach from a bound level.
pub fn desorption_ladder(sv: &Survey, solid: &DebyeSolid) -> Result<BoundFreeLadder> {
    BoundFreeLadder::build(
        &sv.pot(),
        &sv.catalog.spectrum,
        &sv.copts(),
        solid.debye_frequency,
        sv.cfg.continuum_mesh,
    )
}

/// Per-level desorption rates over the whole catalog.
pub fn desorption_rates(
    sv: &Survey,
    solid: &DebyeSolid,
    ladder: &BoundFreeLadder,
) -> Vec<f64> {
    sv.energies()
        .iter()
        .enumerate()
        .map(|(nu, &e)| ladder.desorption_rate(solid, e, nu))
        .collect()
}

pub fn depletion(
    sv: &Survey,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    ladder: &BoundFreeLadder,
    name: &str,
) -> Result<()> {
    let energies = sv.energies();
    let desorb = desorption_rates(sv, solid, ladder);
    let dep = depletion_rates(solid, &energies, &sv.catalog.force, &desorb);
    let mut t = Table::new(
        name,
        &[
            "nu",
            "energy_hz",
            "emission_per_s",
            "absorption_bound_per_s",
            "desorption_per_s",
            "depletion_per_s",
        ],
    );
    t.note("bath_temperature_k", &num(bath_kelvin));
    t.note("ladder_tail_worst", &num(ladder.tail_worst));
    for d in &dep {
        t.row(vec![
            idx(d.nu),
            num(internal_to_hz(energies[d.nu])),
            num(d.emission),
            num(d.absorption_bound),
            num(d.absorption_free),
            num(d.total()),
        ]);
    }
    emit.table(t)
}

/// Sticking of slow free atoms: per-level rates at one probe energy, the
/// total against probe energy, and thermal averages for a cold gas.
pub fn adsorption(
    sv: &Survey,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    theta0: f64,
    probe_energy: f64,
    box_length: f64,
) -> Result<()> {
    let energies = sv.energies();
    let table = CaptureTable::build(
        &sv.pot(),
        &sv.catalog.spectrum,
        &sv.copts(),
        sv.cfg.continuum_emax,
        sv.cfg.continuum_mesh,
    )?;
    // The probe snaps to the nearest mesh node; the tables record the
    // energy actually used.
    let j_probe = table
        .energies
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - probe_energy).abs().total_cmp(&(b.1 - probe_energy).abs()))
        .map(|(j, _)| j)
        .expect("capture mesh is never empty");
    let snapped = table.energies[j_probe];
    let g = table.capture_rates(solid, &energies, box_length);

    let mut per_level = Table::new("capture-levels.csv", &["nu", "energy_hz", "capture_per_s"]);
    per_level.note("bath_temperature_k", &num(bath_kelvin));
    per_level.note("box_length_m", &num(box_length));
    per_level.note("probe_energy_hz", &num(internal_to_hz(snapped)));
    for nu in 0..energies.len() {
        per_level.row(vec![
            idx(nu),
            num(internal_to_hz(energies[nu])),
            num(g[(j_probe, nu)]),
        ]);
    }
    emit.table(per_level)?;

    let totals = table.capture_totals(solid, &energies, box_length);
    let mut sweep = Table::new("capture-totals.csv", &["ef_hz", "capture_per_s"]);
    sweep.note("bath_temperature_k", &num(bath_kelvin));
    sweep.note("box_length_m", &num(box_length));
    for (j, &total) in totals.iter().enumerate() {
        sweep.row(vec![num(internal_to_hz(table.energies[j])), num(total)]);
    }
    emit.table(sweep)?;

    let (per, total) = table.thermal_capture(
        solid,
        &energies,
        box_length,
        theta0,
        sv.cfg.laguerre_order,
    )?;
    let t0_kelvin = internal_to_kelvin(theta0);
    let mut thermal = Table::new(
        "thermal-capture-levels.csv",
        &["nu", "energy_hz", "capture_per_s"],
    );
    thermal.note("bath_temperature_k", &num(bath_kelvin));
    thermal.note("gas_temperature_k", &num(t0_kelvin));
    thermal.note("box_length_m", &num(box_length));
    thermal.note("total_per_s", &num(total));
    for nu in 0..energies.len() {
        thermal.row(vec![idx(nu), num(internal_to_hz(energies[nu])), num(per[nu])]);
    }
    emit.table(thermal)?;

    let mut t0_sweep = Table::new("thermal-capture-sweep.csv", &["t0_k", "capture_per_s"]);
    t0_sweep.note("bath_temperature_k", &num(bath_kelvin));
    t0_sweep.note("box_length_m", &num(box_length));
    for t0k in log_grid(50e-6, 1e-3, 21) {
        let (_, tot) = table.thermal_capture(
            solid,
            &energies,
            box_length,
            kelvin_to_internal(t0k),
            sv.cfg.laguerre_order,
        )?;
        t0_sweep.row(vec![num(t0k), num(tot)]);
    }
    emit.table(t0_sweep)?;

    emit.json(
        "adsorption.json",
        &json!({
            "bath_temperature_k": bath_kelvin,
            "gas_temperature_k": t0_kelvin,
            "box_length_m": box_length,
            "probe_energy_hz": internal_to_hz(snapped),
            "thermal_total_per_s": total,
            "mesh": {
                "count": table.energies.len(),
                "emax_hz": internal_to_hz(sv.cfg.continuum_emax),
                "tail_worst": table.tail_worst,
            },
        }),
    )
}

/// Heating and cooling of free atoms that never bind: per-energy rates,
/// then thermal averages for a cold gas and across the bath temperature.
pub fn freefree(
    cfg: &Config,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    box_length: f64,
    x_inner: f64,
) -> Result<()> {
    let pot = cfg.potential();
    let copts = ContinuumOptions::from_config(cfg, x_inner);
    let w = pot.wavenumber_scale();

    let mesh = sqrt_mesh(cfg.continuum_emax, 48);
    let ff = free_free_rates(&pot, &copts, solid, &mesh, FreeFreeOpts::default())?;
    let mut per_energy = Table::new(
        "freefree-rates.csv",
        &["ef_hz", "heating_per_s", "cooling_per_s"],
    );
    per_energy.note("bath_temperature_k", &num(bath_kelvin));
    per_energy.note("box_length_m", &num(box_length));
    for (j, &e) in ff.energies.iter().enumerate() {
        // Box normalization of the initial state: one atom on length L.
        let norm = std::f64::consts::PI * 2.0 * (e / w).sqrt() / box_length;
        per_energy.row(vec![
            num(internal_to_hz(e)),
            num(norm * ff.upward[j]),
            num(norm * ff.downward[j]),
        ]);
    }
    emit.table(per_energy)?;

    let cold_cap = 36.0 * kelvin_to_internal(1e-3);
    let cold = ThermalBalanceKernel::build(&pot, &copts, solid, cold_cap, 96, 32)?;
    let mut cold_sweep = Table::new(
        "freefree-thermal.csv",
        &["t0_k", "cooling_per_s", "heating_per_s"],
    );
    cold_sweep.note("bath_temperature_k", &num(bath_kelvin));
    cold_sweep.note("box_length_m", &num(box_length));
    for t0k in log_grid(50e-6, 1e-3, 21) {
        let (emission, absorption) =
            cold.rates(solid.temperature, kelvin_to_internal(t0k), box_length);
        cold_sweep.row(vec![num(t0k), num(emission), num(absorption)]);
    }
    emit.table(cold_sweep)?;

    let warm_cap = 12.0 * kelvin_to_internal(350.0);
    let warm = ThermalBalanceKernel::build(&pot, &copts, solid, warm_cap, 64, 32)?;
    let mut warm_sweep = Table::new(
        "freefree-balance.csv",
        &["t0_k", "cooling_per_s", "heating_per_s"],
    );
    warm_sweep.note("bath_temperature_k", &num(bath_kelvin));
    warm_sweep.note("box_length_m", &num(box_length));
    for i in 0..31 {
        let t0k = 50.0 + 10.0 * i as f64;
        let (emission, absorption) =
            warm.rates(solid.temperature, kelvin_to_internal(t0k), box_length);
        warm_sweep.row(vec![num(t0k), num(emission), num(absorption)]);
    }
    emit.table(warm_sweep)
}

/// Bath-induced shift of each selected level, split into its vacuum and
/// thermal parts.
pub fn shifts(
    sv: &Survey,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    subset: &[usize],
) -> Result<()> {
    let energies = sv.energies();
    let ladder = BoundFreeLadder::build(
        &sv.pot(),
        &sv.catalog.spectrum,
        &sv.copts(),
        3.0 * solid.debye_frequency,
        sv.cfg.continuum_mesh,
    )?;
    let results: Vec<_> = subset
        .par_iter()
        .map(|&l| level_shift(solid, &energies, &sv.catalog.force, Some(&ladder), l, 1e-6))
        .collect::<Result<_>>()?;
    let mut t = Table::new(
        "level-shifts.csv",
        &[
            "nu",
            "energy_hz",
            "zero_point_hz",
            "thermal_hz",
            "total_hz",
            "tail_fraction",
        ],
    );
    t.note("bath_temperature_k", &num(bath_kelvin));
    t.note("ladder_tail_worst", &num(ladder.tail_worst));
    for (&l, shift) in subset.iter().zip(&results) {
        t.row(vec![
            idx(l),
            num(internal_to_hz(energies[l])),
            num(internal_to_hz(shift.zero_point)),
            num(internal_to_hz(shift.thermal)),
            num(internal_to_hz(shift.total())),
            num(shift.tail_fraction),
        ]);
    }
    emit.table(t)
}

/// Initial state of the reduced density matrix, in subset positions.
enum Init {
    Pure(usize),
    Boltzmann,
    Uniform,
    Super(usize, usize),
    List(Vec<f64>),
}

fn parse_init(spec: Option<&str>, subset: &LevelSubset) -> Result<Init> {
    let position = |raw: &str| -> Result<usize> {
        let level: usize = raw
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("flag --rho0: `{raw}` is not a level index")))?;
        subset
            .indices
            .binary_search(&level)
            .map_err(|_| Error::config(format!("flag --rho0: level {level} is not in the subset")))
    };
    let Some(text) = spec else {
        return Ok(Init::Pure(subset.len() - 1));
    };
    let text = text.trim();
    if text == "boltzmann" {
        return Ok(Init::Boltzmann);
    }
    if text == "uniform" {
        return Ok(Init::Uniform);
    }
    if let Some(rest) = text.strip_prefix("pure:") {
        return Ok(Init::Pure(position(rest)?));
    }
    if let Some(rest) = text.strip_prefix("super:") {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| Error::config("flag --rho0: `super:` wants two levels"))?;
        let (pa, pb) = (position(a)?, position(b)?);
        if pa == pb {
            return Err(Error::config("flag --rho0: `super:` wants two distinct levels"));
        }
        return Ok(Init::Super(pa.min(pb), pa.max(pb)));
    }
    let pops: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("flag --rho0: `{p}` is not a population")))
        })
        .collect::<Result<_>>()?;
    if pops.len() != subset.len() {
        return Err(Error::config(format!(
            "flag --rho0: {} populations given for {} levels",
            pops.len(),
            subset.len()
        )));
    }
    if pops.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::config("flag --rho0: populations must lie in [0, 1]"));
    }
    let total: f64 = pops.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::config("flag --rho0: populations sum above one"));
    }
    Ok(Init::List(pops))
}

fn initial_populations(init: &Init, subset: &LevelSubset, solid: &DebyeSolid) -> Vec<f64> {
    let n = subset.len();
    match init {
        Init::Pure(p) => {
            let mut v = vec![0.0; n];
            v[*p] = 1.0;
            v
        }
        Init::Uniform => vec![1.0 / n as f64; n],
        Init::Boltzmann => {
            if solid.temperature <= 0.0 {
                let mut v = vec![0.0; n];
                v[0] = 1.0;
                return v;
            }
            let e0 = subset.energies[0];
            let weights: Vec<f64> = subset
                .energies
                .iter()
                .map(|&e| (-(e - e0) / solid.temperature).exp())
                .collect();
            let z: f64 = weights.iter().sum();
            weights.iter().map(|w| w / z).collect()
        }
        Init::List(pops) => pops.clone(),
        Init::Super(..) => unreachable!("superpositions take the full integrator"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evolve(
    sv: &Survey,
    emit: &mut Emitter,
    solid: &DebyeSolid,
    bath_kelvin: f64,
    indices: &[usize],
    rho0_spec: Option<&str>,
    t_final: f64,
    dt: Option<f64>,
    samples: usize,
    pairs: &[(usize, usize)],
) -> Result<()> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::config("flag --t-final: must be a positive time in seconds"));
    }
    if samples == 0 {
        return Err(Error::config("flag --samples: must be positive"));
    }
    let energies = sv.energies();
    let subset = LevelSubset::new(indices.to_vec(), &energies)?;
    let n = subset.len();

    let pair_positions: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(l, k)| {
            let find = |level: usize| {
                subset.indices.binary_search(&level).map_err(|_| {
                    Error::config(format!("flag --pairs: level {level} is not in the subset"))
                })
            };
            let (pl, pk) = (find(l)?, find(k)?);
            if pl == pk {
                return Err(Error::config("flag --pairs: a pair needs two distinct levels"));
            }
            Ok((pl, pk))
        })
        .collect::<Result<_>>()?;

    // Desorption only matters when a single phonon can unbind some kept
    // level; deep subsets skip the free-state ladder entirely.
    let desorb = if subset.energies.last().unwrap() + solid.debye_frequency > 0.0 {
        let ladder = desorption_ladder(sv, solid)?;
        desorption_rates(sv, solid, &ladder)
    } else {
        Vec::new()
    };
    let opts = GeneratorOptions {
        include_offdiagonal_gain: true,
        secular_window: sv.cfg.secular_window,
        shift_matrix: None,
    };
    let generator = build_generator(&subset, solid, &energies, &sv.catalog.force, &desorb, &opts)?;
    let init = parse_init(rho0_spec, &subset)?;

    let mut columns: Vec<String> = vec!["t_s".to_owned()];
    for &i in &subset.indices {
        columns.push(format!("pop_{i}"));
    }
    for &(l, k) in pairs {
        columns.push(format!("abs_rho_{l}_{k}"));
    }
    columns.push("leaked".to_owned());
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut t = Table::new("evolve.csv", &column_refs);
    t.note("bath_temperature_k", &num(bath_kelvin));
    t.note("subset_size", &idx(n));

    match init {
        Init::Super(pa, pb) => {
            // A coherent start needs the full matrix integrator.
            let mut m = DMatrix::zeros(n, n);
            let half = Complex64::new(0.5, 0.0);
            m[(pa, pa)] = half;
            m[(pb, pb)] = half;
            m[(pa, pb)] = half;
            m[(pb, pa)] = half;
            let rho0 = DensityMatrix::new(m, 0.0)?;
            let speed = generator.speed();
            let step = match dt {
                Some(v) if v > 0.0 => v,
                Some(_) => return Err(Error::config("flag --dt: must be positive")),
                None if speed > 0.0 => 0.08 / speed,
                None => t_final / (10.0 * samples as f64),
            };
            let steps = (t_final / step).ceil();
            if steps > 5e6 {
                return Err(Error::numerics(format!(
                    "evolve: {steps:.0} integrator steps needed; raise --dt or shorten --t-final"
                )));
            }
            let traj = integrate_rk4(&rho0, &generator, t_final, step)?;
            let last = traj.len() - 1;
            let stride = (last / samples).max(1);
            for (i, state) in traj.iter().enumerate() {
                if i % stride != 0 && i != last {
                    continue;
                }
                let mut row = vec![num(state.time)];
                for p in 0..n {
                    row.push(num(state.population(p)));
                }
                for &(pl, pk) in &pair_positions {
                    row.push(num(state.matrix[(pl, pk)].norm()));
                }
                row.push(num(1.0 - state.trace()));
                t.row(row);
            }
        }
        _ => {
            // Diagonal starts never grow coherences, so the population
            // block with its absorbing leak column is exact.
            let pops = initial_populations(&init, &subset, solid);
            let rows = rate_evolve(&pops, &generator, t_final, samples)?;
            for (time, values) in &rows {
                let mut row = vec![num(*time)];
                for p in 0..n {
                    row.push(num(values[p]));
                }
                for _ in &pair_positions {
                    row.push(num(0.0));
                }
                row.push(num(values[n]));
                t.row(row);
            }
        }
    }
    emit.table(t)
}

/// The full survey: every table the other subcommands produce, at pinned
/// scenario parameters.  Material constants and solver meshes come from
/// the config; bath temperatures (300 K and 30 K), the gas ensemble and
/// the 1 mm box are fixed so that the emitted files mean the same thing
/// for every config.
pub fn reproduce_figures(sv: &Survey, emit: &mut Emitter) -> Result<()> {
    let base = sv.cfg.solid();
    let hot = base.at_temperature(kelvin_to_internal(300.0));
    let cold = base.at_temperature(kelvin_to_internal(30.0));
    let box_length = 1e-3;

    spectrum(sv, emit)?;

    let n = sv.catalog.len();
    for probe in [120usize, 280] {
        rates(sv, emit, &hot, 300.0, probe.min(n - 1))?;
    }

    let ladder = desorption_ladder(sv, &hot)?;
    depletion(sv, emit, &hot, 300.0, &ladder, "depletion-300K.csv")?;
    depletion(sv, emit, &cold, 30.0, &ladder, "depletion-30K.csv")?;

    adsorption(
        sv,
        emit,
        &hot,
        300.0,
        kelvin_to_internal(200e-6),
        hz_to_internal(2e6),
        box_length,
    )?;
    freefree(sv.cfg, emit, &hot, 300.0, box_length, sv.catalog.spectrum.x_w)
}
