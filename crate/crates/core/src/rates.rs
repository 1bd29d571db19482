//! One-phonon transition rates between well levels.
//!
//! The solid is a Debye continuum: an isotropic acoustic branch with a
//! sharp frequency cutoff set by the atomic density and sound speed.  A
//! transition of the trapped atom at frequency `omega` exchanges exactly
//! one phonon, so its golden-rule rate is

//! ```text
//! R = 3 pi hbar / (M w_D^3) * omega * occ * (F / hbar)^2,
//! ```
//!
//! with `M` the mass of one solid atom, `F` the matrix element of the
//! potential gradient between the two levels, and `occ` the thermal
//! factor: `nbar + 1` going down (emission), `nbar` going up
//! (absorption).  Outside `0 < omega < w_D` the bath has no mode to take
//! or give the quantum and the rate is exactly zero.

use crate::coupling;
use crate::grid::resample;
use crate::potential::PotentialModel;
use crate::quad::GaussLaguerre;
use crate::spectrum::{continuum_state, BoundSpectrum, ContinuumOptions, ContinuumState};
use crate::units::HBAR;
use crate::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Acoustic constants of the substrate, all derived from three inputs.
#[derive(Clone, Copy, Debug)]
pub struct DebyeSolid {
    /// Mass of one lattice unit, kg.
    pub unit_mass: f64,
    /// Lattice units per cubic meter.
    pub number_density: f64,
    /// Sound speed, m/s.
    pub sound_velocity: f64,
    /// Cutoff wavenumber `(6 pi^2 n)^(1/3)`, 1/m.
    pub debye_wavenumber: f64,
    /// Cutoff frequency `v q_D`, rad/s.
    pub debye_frequency: f64,
    /// Bath temperature as `k_B T / hbar`, rad/s.
    pub temperature: f64,
}

impl DebyeSolid {
    /// Derive the cutoffs from mass density and sound speed.
    pub fn derive(
        unit_mass: f64,
        mass_density: f64,
        sound_velocity: f64,
        temperature: f64,
    ) -> DebyeSolid {
        let number_density = mass_density / unit_mass;
        let debye_wavenumber = (6.0 * PI * PI * number_density).cbrt();
        let debye_frequency = sound_velocity * debye_wavenumber;
        DebyeSolid {
            unit_mass,
            number_density,
            sound_velocity,
            debye_wavenumber,
            debye_frequency,
            temperature,
        }
    }

    /// Same solid, different bath temperature (rad/s).
    pub fn at_temperature(&self, temperature: f64) -> DebyeSolid {
        DebyeSolid { temperature, ..*self }
    }

    /// Cutoff expressed in kelvin.
    pub fn debye_temperature_kelvin(&self) -> f64 {
        crate::units::internal_to_kelvin(self.debye_frequency)
    }

    /// Thermal phonon number at `omega` (rad/s).  Evaluated through
    /// `expm1` so that emission and absorption obey detailed balance to
    /// rounding even deep in the Wien tail.
    pub fn occupation(&self, omega: f64) -> f64 {
        occupation(self.temperature, omega)
    }

    /// Rate prefactor `3 pi hbar / (M w_D^3)`; multiply by
    /// `omega * occ * f_tilde^2` for a rate.
    pub fn rate_prefactor(&self) -> f64 {
        3.0 * PI * HBAR / (self.unit_mass * self.debye_frequency.powi(3))
    }
}

/// `1 / (exp(omega / theta) - 1)`, with the zero-temperature and
/// zero-frequency edges handled exactly.
pub fn occupation(theta: f64, omega: f64) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    let x = omega / theta;
    let d = x.exp_m1();
    if d.is_infinite() {
        0.0
    } else {
        1.0 / d
    }
}

/// Emission rate for a downward transition at `omega > 0` with gradient
/// element `f_tilde = F / hbar` (rad/s per m).
pub fn emission_rate(solid: &DebyeSolid, omega: f64, f_tilde: f64) -> f64 {
    if omega <= 0.0 || omega >= solid.debye_frequency {
        return 0.0;
    }
    solid.rate_prefactor() * omega * (solid.occupation(omega) + 1.0) * f_tilde * f_tilde
}

/// Absorption rate for an upward transition at `omega > 0`.
pub fn absorption_rate(solid: &DebyeSolid, omega: f64, f_tilde: f64) -> f64 {
    if omega <= 0.0 || omega >= solid.debye_frequency {
        return 0.0;
    }
    solid.rate_prefactor() * omega * solid.occupation(omega) * f_tilde * f_tilde
}

/// Rate of the transition `e_from -> e_to`, whichever direction that is.
pub fn transition_rate(solid: &DebyeSolid, e_from: f64, e_to: f64, f_tilde: f64) -> f64 {
    let omega = e_from - e_to;
    if omega > 0.0 {
        emission_rate(solid, omega, f_tilde)
    } else {
        absorption_rate(solid, -omega, f_tilde)
    }
}

/// Brute-force golden rule over an explicit mode mesh: each acoustic mode
/// contributes through a narrow triangular window standing in for the
/// energy delta.  Converges to the closed-form rate as the window
/// shrinks; kept as an independent check of the continuum reduction.
pub fn mode_sum_rate(
    solid: &DebyeSolid,
    omega: f64,
    f_tilde: f64,
    emission: bool,
    window: f64,
    mesh: f64,
) -> f64 {
    if omega <= 0.0 || omega >= solid.debye_frequency {
        return 0.0;
    }
    let lo = (omega - window).max(0.0);
    let hi = (omega + window).min(solid.debye_frequency);
    // Midpoint mode ladder across the window support.
    let i0 = (lo / mesh).floor() as i64;
    let i1 = (hi / mesh).ceil() as i64;
    let mut sum = 0.0;
    for i in i0..=i1 {
        let w_i = (i as f64 + 0.5) * mesh;
        if w_i <= 0.0 || w_i >= solid.debye_frequency {
            continue;
        }
        let t = 1.0 - (omega - w_i).abs() / window;
        if t <= 0.0 {
            continue;
        }
        let occ = if emission {
            solid.occupation(w_i) + 1.0
        } else {
            solid.occupation(w_i)
        };
        // Per-mode golden rule with the Debye mode density; the number of
        // lattice units cancels between density and coupling.
        sum += solid.rate_prefactor() * w_i * occ * f_tilde * f_tilde * (t / window) * mesh;
    }
    sum
}

/// All pairwise one-phonon rates inside the bound set:
/// `R[(j, nu)]` moves population from level `nu` into level `j`.  The
/// diagonal is zero, as is every pair whose splitting falls outside the
/// acoustic band.
pub fn rate_matrix(solid: &DebyeSolid, energies: &[f64], force: &DMatrix<f64>) -> DMatrix<f64> {
    let n = energies.len();
    DMatrix::from_fn(n, n, |j, nu| {
        if j == nu {
            0.0
        } else {
            transition_rate(solid, energies[nu], energies[j], force[(j, nu)])
        }
    })
}

/// Loss rates out of one bound level, split by destination.
#[derive(Clone, Copy, Debug)]
pub struct Depletion {
    pub nu: usize,
    /// Phonon emission into deeper bound levels.
    pub emission: f64,
    /// Phonon absorption into shallower bound levels.
    pub absorption_bound: f64,
    /// Phonon absorption past the dissociation edge.
    pub absorption_free: f64,
}

impl Depletion {
    pub fn absorption(&self) -> f64 {
        self.absorption_bound + self.absorption_free
    }

    pub fn total(&self) -> f64 {
        self.emission + self.absorption()
    }
}

/// Per-level depletion rates.  `desorb` carries the free-band absorption
/// integral per level; pass an empty slice to count bound exits only.
pub fn depletion_rates(
    solid: &DebyeSolid,
    energies: &[f64],
    force: &DMatrix<f64>,
    desorb: &[f64],
) -> Vec<Depletion> {
    assert!(desorb.is_empty() || desorb.len() == energies.len());
    let n = energies.len();
    (0..n)
        .map(|nu| {
            let mut emission = 0.0;
            let mut absorption_bound = 0.0;
            for j in 0..n {
                if j == nu {
                    continue;
                }
                let r = transition_rate(solid, energies[nu], energies[j], force[(j, nu)]);
                if energies[j] < energies[nu] {
                    emission += r;
                } else {
                    absorption_bound += r;
                }
            }
            Depletion {
                nu,
                emission,
                absorption_bound,
                absorption_free: desorb.get(nu).copied().unwrap_or(0.0),
            }
        })
        .collect()
}

/// Decay rate of the coherence between levels `l` and `k`: half the sum
/// of their total depletion rates.
pub fn coherence_rate(depletion: &[Depletion], l: usize, k: usize) -> f64 {
    0.5 * (depletion[l].total() + depletion[k].total())
}

/// Clamped table lookup on a square-root energy axis: outside the table
/// the nearest entry extends flat, so quadratures against the table see
/// a bounded continuous function instead of a hard zero.
fn interp_clamped(ts: &[f64], vals: &[f64], t: f64) -> f64 {
    let t = t.clamp(ts[0], *ts.last().unwrap());
    resample(ts, vals, &[t])[0]
}

/// Free states on a square-root energy mesh above the dissociation edge,
/// with force elements against every bound level.  The mesh energies are
/// `e_top (j / count)^2`, so nodes crowd toward threshold where the
/// elements vary fastest; integrals over the band become trapezoid sums
/// in `t = sqrt(e)`.
pub struct BoundFreeLadder {
    pub energies: Vec<f64>,
    pub states: Vec<ContinuumState>,
    /// `elements[(j, nu)]`: ladder state `j` against bound level `nu`.
    pub elements: DMatrix<f64>,
    /// Worst truncation diagnostic over all elements, relative.
    pub tail_worst: f64,
}

impl BoundFreeLadder {
    pub fn build(
        pot: &(impl PotentialModel + Sync),
        sp: &BoundSpectrum,
        copts: &ContinuumOptions,
        e_top: f64,
        count: usize,
    ) -> Result<Self> {
        if count < 2 || !(e_top > 0.0) {
            return Err(Error::numerics("free ladder: bad mesh request"));
        }
        let energies: Vec<f64> = (1..=count)
            .map(|j| e_top * (j as f64 / count as f64).powi(2))
            .collect();
        let solved: Vec<(ContinuumState, Vec<coupling::Element>)> = energies
            .par_iter()
            .map(|&e| {
                let st = continuum_state(pot, e, copts)?;
                let row = coupling::bound_block(pot, sp, &st);
                Ok((st, row))
            })
            .collect::<Result<_>>()?;
        let mut elements = DMatrix::zeros(count, sp.len());
        let mut tail_worst = 0.0f64;
        let mut states = Vec::with_capacity(count);
        for (j, (st, row)) in solved.into_iter().enumerate() {
            // Normalize each tail bound by its row's peak element: tiny
            // elements riding under a large row are allowed tails on the
            // row's scale, not their own.
            let peak = row.iter().fold(0.0f64, |m, el| m.max(el.value.abs()));
            for (nu, el) in row.iter().enumerate() {
                elements[(j, nu)] = el.value;
                if peak > 0.0 {
                    tail_worst = tail_worst.max(el.tail_bound / peak);
                }
            }
            states.push(st);
        }
        Ok(BoundFreeLadder {
            energies,
            states,
            elements,
            tail_worst,
        })
    }

    fn dt(&self) -> f64 {
        self.energies[0].sqrt()
    }

    /// Absorption rate from a bound level at energy `e_k` (negative)
    /// into the whole free band: the integral of the upward rate density
    /// over final energies reachable within the acoustic band.  Exactly
    /// zero when even the band edge cannot lift the level over the
    /// dissociation threshold.
    pub fn desorption_rate(&self, solid: &DebyeSolid, e_k: f64, nu: usize) -> f64 {
        let e_up = e_k + solid.debye_frequency;
        if e_up <= 0.0 {
            return 0.0;
        }
        let dt = self.dt();
        let t_up = e_up.sqrt();
        let value = |j: usize| -> f64 {
            let f = self.elements[(j, nu)];
            2.0 * self.energies[j].sqrt() * absorption_rate(solid, self.energies[j] - e_k, f)
        };
        // Uniform trapezoid in t = sqrt(e) starting from the threshold,
        // where the integrand vanishes exactly, up to the last mesh node
        // under the band edge, then one partial panel to the true edge.
        let mut total = 0.0;
        let mut last: Option<(f64, f64)> = None;
        for j in 0..self.energies.len() {
            let t = self.energies[j].sqrt();
            if t > t_up {
                break;
            }
            let v = value(j);
            total += v * dt;
            last = Some((t, v));
        }
        let v_up = self.edge_value(solid, e_k, e_up, nu);
        match last {
            // Edge sits below the first node: single panel from zero.
            None => 0.5 * t_up * v_up,
            Some((tj, vj)) => total - 0.5 * dt * vj + 0.5 * (t_up - tj) * (vj + v_up),
        }
    }

    /// Rate density at the band edge, where the gated rate would return
    /// zero; the ungated formula stays finite there.
    fn edge_value(&self, solid: &DebyeSolid, e_k: f64, e_up: f64, nu: usize) -> f64 {
        let f = self.element_at(e_up, nu);
        let omega = e_up - e_k;
        2.0 * e_up.sqrt() * solid.rate_prefactor() * omega * solid.occupation(omega) * f * f
    }

    /// Force element against bound level `nu`, interpolated to an
    /// arbitrary band energy.
    pub fn element_at(&self, e: f64, nu: usize) -> f64 {
        let ts: Vec<f64> = self.energies.iter().map(|v| v.sqrt()).collect();
        let col: Vec<f64> = (0..self.energies.len())
            .map(|j| self.elements[(j, nu)])
            .collect();
        interp_clamped(&ts, &col, e.sqrt())
    }
}

/// Force elements between a fine mesh of low free energies and the bound
/// set, for sticking calculations.  Unlike [`BoundFreeLadder`] the solved
/// free wavefunctions are discarded after their element row is extracted,
/// so the mesh can afford many near-threshold nodes.
pub struct CaptureTable {
    pub wavenumber_scale: f64,
    pub energies: Vec<f64>,
    /// `elements[(j, nu)]`: free mesh node `j` against bound level `nu`.
    pub elements: DMatrix<f64>,
    pub tail_worst: f64,
}

impl CaptureTable {
    pub fn build(
        pot: &(impl PotentialModel + Sync),
        sp: &BoundSpectrum,
        copts: &ContinuumOptions,
        e_top: f64,
        count: usize,
    ) -> Result<Self> {
        if count < 2 || !(e_top > 0.0) {
            return Err(Error::numerics("capture table: bad mesh request"));
        }
        let energies: Vec<f64> = (1..=count)
            .map(|j| e_top * (j as f64 / count as f64).powi(2))
            .collect();
        let rows: Vec<Vec<coupling::Element>> = energies
            .par_iter()
            .map(|&e| {
                let st = continuum_state(pot, e, copts)?;
                Ok(coupling::bound_block(pot, sp, &st))
            })
            .collect::<Result<_>>()?;
        let mut elements = DMatrix::zeros(count, sp.len());
        let mut tail_worst = 0.0f64;
        for (j, row) in rows.into_iter().enumerate() {
            let peak = row.iter().fold(0.0f64, |m, el| m.max(el.value.abs()));
            for (nu, el) in row.iter().enumerate() {
                elements[(j, nu)] = el.value;
                if peak > 0.0 {
                    tail_worst = tail_worst.max(el.tail_bound / peak);
                }
            }
        }
        Ok(CaptureTable {
            wavenumber_scale: pot.wavenumber_scale(),
            energies,
            elements,
            tail_worst,
        })
    }

    /// Asymptotic velocity of the free atom at mesh node `j`.
    fn velocity(&self, j: usize) -> f64 {
        2.0 * (self.energies[j] / self.wavenumber_scale).sqrt()
    }

    /// Sticking rates for a single atom in a box of length `box_length`:
    /// `G[(j, nu)]` is the capture rate from free mesh node `j` into
    /// bound level `nu`.  Capture releases a phonon, so each entry is an
    /// emission rate scaled by the box normalization of the free state.
    pub fn capture_rates(
        &self,
        solid: &DebyeSolid,
        bound_energies: &[f64],
        box_length: f64,
    ) -> DMatrix<f64> {
        let n = self.energies.len();
        let nb = bound_energies.len();
        DMatrix::from_fn(n, nb, |j, nu| {
            let f = self.elements[(j, nu)];
            let norm = PI * self.velocity(j) / box_length;
            norm * emission_rate(solid, self.energies[j] - bound_energies[nu], f)
        })
    }

    /// Total sticking rate per free mesh node: capture summed over every
    /// bound destination.
    pub fn capture_totals(
        &self,
        solid: &DebyeSolid,
        bound_energies: &[f64],
        box_length: f64,
    ) -> Vec<f64> {
        let g = self.capture_rates(solid, bound_energies, box_length);
        (0..self.energies.len())
            .map(|j| g.row(j).iter().sum())
            .collect()
    }

    /// Flux-weighted thermal average of the capture rate into each bound
    /// level for a gas at temperature `theta0`, plus the total.  The
    /// average over the box-normalized Boltzmann ensemble collapses to a
    /// Gauss-Laguerre sum with the thermal wavelength carrying the box
    /// normalization.
    pub fn thermal_capture(
        &self,
        solid: &DebyeSolid,
        bound_energies: &[f64],
        box_length: f64,
        theta0: f64,
        order: usize,
    ) -> Result<(Vec<f64>, f64)> {
        if !(theta0 > 0.0) {
            return Err(Error::numerics("thermal capture: temperature must be positive"));
        }
        let lambda = 2.0 * (PI / (self.wavenumber_scale * theta0)).sqrt();
        let quad = GaussLaguerre::new(order, 0.0)?;
        let ts: Vec<f64> = self.energies.iter().map(|v| v.sqrt()).collect();
        let mut per_level = vec![0.0; bound_energies.len()];
        for (nu, per) in per_level.iter_mut().enumerate() {
            let col: Vec<f64> = (0..self.energies.len())
                .map(|j| self.elements[(j, nu)])
                .collect();
            let e_nu = bound_energies[nu];
            *per = lambda * theta0 / box_length
                * quad.integrate(|x| {
                    let e = theta0 * x;
                    let f = interp_clamped(&ts, &col, e.sqrt());
                    emission_rate(solid, e - e_nu, f)
                });
        }
        let total = per_level.iter().sum();
        Ok((per_level, total))
    }
}

/// Boltzmann average of a tabulated function of free energy at gas
/// temperature `theta0`.  The table is interpolated on a square-root
/// energy axis; the density-of-states weight is folded into the
/// half-integer Gauss-Laguerre rule, so a table of ones averages to one.
pub fn thermal_average(
    energies: &[f64],
    values: &[f64],
    theta0: f64,
    order: usize,
) -> Result<f64> {
    if energies.len() != values.len() || energies.len() < 2 {
        return Err(Error::numerics("thermal average: bad table"));
    }
    if !(theta0 > 0.0) {
        return Err(Error::numerics("thermal average: temperature must be positive"));
    }
    let quad = GaussLaguerre::new(order, -0.5)?;
    let ts: Vec<f64> = energies.iter().map(|v| v.sqrt()).collect();
    let sum = quad.integrate(|x| {
        let e = theta0 * x;
        interp_clamped(&ts, values, e.sqrt())
    });
    Ok(sum / PI.sqrt())
}

/// Mesh sizes for the free-free redistribution integrals.
#[derive(Clone, Copy, Debug)]
pub struct FreeFreeOpts {
    pub absorption_nodes: usize,
    pub emission_nodes: usize,
}

impl Default for FreeFreeOpts {
    fn default() -> Self {
        FreeFreeOpts {
            absorption_nodes: 48,
            emission_nodes: 32,
        }
    }
}

/// Phonon-exchange rates of a free atom with the surface, staying free:
/// per listed energy, the total rate of jumping up (absorption) and down
/// (emission) within the band.
pub struct FreeFreeRates {
    pub energies: Vec<f64>,
    pub upward: Vec<f64>,
    pub downward: Vec<f64>,
}

/// Free-free redistribution rates at the listed free energies.  Each
/// entry integrates the rate density over the exchanged phonon frequency,
/// solving the partner free state per quadrature node.
pub fn free_free_rates(
    pot: &(impl PotentialModel + Sync),
    copts: &ContinuumOptions,
    solid: &DebyeSolid,
    energies: &[f64],
    opts: FreeFreeOpts,
) -> Result<FreeFreeRates> {
    let results: Vec<(f64, f64)> = energies
        .par_iter()
        .map(|&e| {
            let st = continuum_state(pot, e, copts)?;
            let up = free_absorption(pot, copts, solid, &st, opts.absorption_nodes)?;
            let down = free_emission(pot, copts, solid, &st, opts.emission_nodes)?;
            Ok((up, down))
        })
        .collect::<Result<_>>()?;
    Ok(FreeFreeRates {
        energies: energies.to_vec(),
        upward: results.iter().map(|r| r.0).collect(),
        downward: results.iter().map(|r| r.1).collect(),
    })
}

/// Upward rate of one free state: absorb a phonon of frequency `omega`
/// and land at `e + omega`.  Trapezoid in `t = sqrt(omega)` over the
/// acoustic band; the integrand vanishes at the origin through the
/// Jacobian while the rate density stays finite.
fn free_absorption(
    pot: &(impl PotentialModel + Sync),
    copts: &ContinuumOptions,
    solid: &DebyeSolid,
    st: &ContinuumState,
    nodes: usize,
) -> Result<f64> {
    let e = st.energy;
    let t_max = solid.debye_frequency.sqrt();
    let dt = t_max / nodes as f64;
    let mut total = 0.0;
    for j in 1..=nodes {
        let t = dt * j as f64;
        let omega = t * t;
        let partner = continuum_state(pot, e + omega, copts)?;
        let f = coupling::continuum_element(pot, st, &partner).value;
        // The gate in `absorption_rate` would drop the endpoint panel;
        // the band-edge limit of the density is finite, so evaluate the
        // formula directly.
        let rate = solid.rate_prefactor() * omega * solid.occupation(omega) * f * f;
        let weight = if j == nodes { 0.5 * dt } else { dt };
        total += weight * 2.0 * t * rate;
    }
    Ok(total)
}

/// Downward rate of one free state: emit a phonon and land at
/// `e - omega`, limited to partners above the dissociation edge.  A
/// midpoint rule in `t = sqrt(omega)` keeps the partner energy strictly
/// positive.
fn free_emission(
    pot: &(impl PotentialModel + Sync),
    copts: &ContinuumOptions,
    solid: &DebyeSolid,
    st: &ContinuumState,
    nodes: usize,
) -> Result<f64> {
    let e = st.energy;
    let span = e.min(solid.debye_frequency);
    if !(span > 0.0) {
        return Ok(0.0);
    }
    let t_max = span.sqrt();
    let dt = t_max / nodes as f64;
    let mut total = 0.0;
    for j in 1..=nodes {
        let t = dt * (j as f64 - 0.5);
        let omega = t * t;
        let partner = continuum_state(pot, e - omega, copts)?;
        let f = coupling::continuum_element(pot, st, &partner).value;
        let rate = solid.rate_prefactor() * omega * (solid.occupation(omega) + 1.0) * f * f;
        total += dt * 2.0 * t * rate;
    }
    Ok(total)
}

/// Precomputed rate kernel over a rectangle of (free energy, phonon
/// frequency) nodes, for thermally averaged heating and cooling rates of
/// a cold free gas.  The same kernel element serves the absorption sum at
/// `e` and the emission sum at `e + omega`, so at equal gas and solid
/// temperatures the two averages balance identically, mesh by mesh.
pub struct ThermalBalanceKernel {
    pub wavenumber_scale: f64,
    pub e_nodes: Vec<f64>,
    e_weights: Vec<f64>,
    pub omega_nodes: Vec<f64>,
    omega_weights: Vec<f64>,
    /// `kernel[(i, m)]`: prefactor, frequency, and squared element for
    /// the pair (`e_nodes[i]`, `e_nodes[i] + omega_nodes[m]`).
    kernel: DMatrix<f64>,
}

impl ThermalBalanceKernel {
    pub fn build(
        pot: &(impl PotentialModel + Sync),
        copts: &ContinuumOptions,
        solid: &DebyeSolid,
        e_cap: f64,
        ne: usize,
        nm: usize,
    ) -> Result<Self> {
        if ne < 2 || nm < 2 || !(e_cap > 0.0) {
            return Err(Error::numerics("balance kernel: bad mesh request"));
        }
        // Energy mesh on a square-root axis with plain trapezoid weights
        // mapped through the Jacobian; the origin node carries weight
        // zero exactly.
        let te = e_cap.sqrt();
        let de = te / ne as f64;
        let e_nodes: Vec<f64> = (1..=ne).map(|i| (de * i as f64).powi(2)).collect();
        let e_weights: Vec<f64> = (1..=ne)
            .map(|i| {
                let t = de * i as f64;
                let w = if i == ne { 0.5 * de } else { de };
                2.0 * t * w
            })
            .collect();
        let tm = solid.debye_frequency.sqrt();
        let dm = tm / nm as f64;
        let omega_nodes: Vec<f64> = (1..=nm).map(|m| (dm * m as f64).powi(2)).collect();
        let omega_weights: Vec<f64> = (1..=nm)
            .map(|m| {
                let t = dm * m as f64;
                let w = if m == nm { 0.5 * dm } else { dm };
                2.0 * t * w
            })
            .collect();
        let prefactor = solid.rate_prefactor();
        let rows: Vec<Vec<f64>> = e_nodes
            .par_iter()
            .map(|&e| {
                let st = continuum_state(pot, e, copts)?;
                let mut row = Vec::with_capacity(nm);
                for &omega in &omega_nodes {
                    let partner = continuum_state(pot, e + omega, copts)?;
                    let f = coupling::continuum_element(pot, &st, &partner).value;
                    row.push(prefactor * omega * f * f);
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let kernel = DMatrix::from_fn(ne, nm, |i, m| rows[i][m]);
        Ok(ThermalBalanceKernel {
            wavenumber_scale: pot.wavenumber_scale(),
            e_nodes,
            e_weights,
            omega_nodes,
            omega_weights,
            kernel,
        })
    }

    /// Thermally averaged per-atom cooling (emission) and heating
    /// (absorption) rates for a box-normalized gas at `theta0` over a
    /// solid bath at `theta_bath`, returned as `(emission, absorption)`.
    ///
    /// Both averages run over the same kernel rectangle: the absorption
    /// sum weights node `(i, m)` by the gas population at `e_i`, the
    /// emission sum by the population at `e_i + omega_m`.  When the two
    /// temperatures coincide the detailed-balance identity
    /// `(n+1) e^{-(e+omega)/theta} = n e^{-e/theta}` makes the sums equal
    /// term by term, independent of mesh resolution.
    pub fn rates(&self, theta_bath: f64, theta0: f64, box_length: f64) -> (f64, f64) {
        let lambda = 2.0 * (PI / (self.wavenumber_scale * theta0)).sqrt();
        let norm = lambda / box_length;
        let mut emission = 0.0;
        let mut absorption = 0.0;
        for (i, &we) in self.e_weights.iter().enumerate() {
            let boltz_e = (-self.e_nodes[i] / theta0).exp();
            for (m, (&omega, &wm)) in self.omega_nodes.iter().zip(&self.omega_weights).enumerate() {
                let k = self.kernel[(i, m)] * we * wm;
                let n_bar = occupation(theta_bath, omega);
                absorption += k * n_bar * boltz_e;
                emission += k * (n_bar + 1.0) * boltz_e * (-omega / theta0).exp();
            }
        }
        (norm * emission, norm * absorption)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Config;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn reference_solid() -> DebyeSolid {
        Config::silica_cesium().solid()
    }

    #[test]
    fn derived_cutoffs_match_hand_arithmetic() {
        let s = reference_solid();
        // n = 2.2e3 / 9.98e-26, q_D = (6 pi^2 n)^(1/3), w_D = v q_D.
        assert_relative_eq!(s.number_density, 2.20441e28, max_relative = 1e-4);
        assert_relative_eq!(s.debye_wavenumber, 1.0929e10, max_relative = 1e-3);
        assert_relative_eq!(s.debye_frequency, 6.514e13, max_relative = 1e-3);
        assert_relative_eq!(s.debye_temperature_kelvin(), 497.5, max_relative = 1e-3);
    }

    #[test]
    fn occupation_obeys_detailed_balance_to_rounding() {
        let s = reference_solid();
        for &frac in &[1e-8, 1e-4, 0.03, 0.4, 1.3, 5.0, 40.0] {
            let w = frac * s.temperature;
            if w >= s.debye_frequency {
                continue;
            }
            let nb = s.occupation(w);
            let ratio = (nb + 1.0) / nb;
            assert_relative_eq!(ratio, (w / s.temperature).exp(), max_relative = 1e-12);
            // And the same holds at the rate level.
            let up = absorption_rate(&s, w, 1.0);
            let down = emission_rate(&s, w, 1.0);
            assert_relative_eq!(down / up, (w / s.temperature).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rates_vanish_exactly_outside_the_acoustic_band() {
        let s = reference_solid();
        assert_eq!(emission_rate(&s, s.debye_frequency, 1e3), 0.0);
        assert_eq!(emission_rate(&s, s.debye_frequency * 1.7, 1e3), 0.0);
        assert_eq!(absorption_rate(&s, 0.0, 1e3), 0.0);
        assert_eq!(absorption_rate(&s, -1.0, 1e3), 0.0);
        assert_eq!(transition_rate(&s, -5.0, -5.0, 1e3), 0.0);
        // Cold bath: absorption dies, emission survives.
        let cold = s.at_temperature(0.0);
        assert_eq!(absorption_rate(&cold, 0.5 * s.debye_frequency, 1e3), 0.0);
        assert!(emission_rate(&cold, 0.5 * s.debye_frequency, 1e3) > 0.0);
    }

    #[test]
    fn classical_limit_is_equipartition() {
        // For omega far below the thermal scale, omega (nbar + 1) tends to
        // theta + omega / 2.
        let s = reference_solid();
        let w = 1e-3 * s.temperature;
        let lhs = w * (s.occupation(w) + 1.0);
        assert_relative_eq!(lhs, s.temperature + 0.5 * w, max_relative = 1e-6);
    }

    #[test]
    fn mode_sum_reproduces_closed_form() {
        let s = reference_solid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let window = s.debye_frequency / 1e4;
        let mesh = window / 64.0;
        for _ in 0..12 {
            let omega = rng.random_range(0.01..0.98) * s.debye_frequency;
            let f_tilde = 10f64.powf(rng.random_range(3.0..9.0));
            let emission = rng.random_bool(0.5);
            let closed = if emission {
                emission_rate(&s, omega, f_tilde)
            } else {
                absorption_rate(&s, omega, f_tilde)
            };
            let brute = mode_sum_rate(&s, omega, f_tilde, emission, window, mesh);
            assert_relative_eq!(brute, closed, max_relative = 1e-3);
        }
    }

    #[test]
    fn transition_rate_picks_the_direction_from_the_energies() {
        let s = reference_solid();
        let e_hi = -1e12;
        let e_lo = -3e12;
        let down = transition_rate(&s, e_hi, e_lo, 2e5);
        let up = transition_rate(&s, e_lo, e_hi, 2e5);
        assert_relative_eq!(down, emission_rate(&s, 2e12, 2e5), max_relative = 1e-14);
        assert_relative_eq!(up, absorption_rate(&s, 2e12, 2e5), max_relative = 1e-14);
        assert!(down > up);
    }

    use crate::spectrum::{solve_bound_spectrum, SpectrumOptions};
    use crate::units::TWO_PI;

    /// Weakened copy of the real surface well, as in the coupling tests:
    /// same shape, about a dozen levels, quick to solve.
    fn shallow_toy() -> (crate::SurfacePotential, BoundSpectrum, DMatrix<f64>) {
        let mut cfg = Config::silica_cesium();
        cfg.a_repulsion *= 1e-3;
        cfg.c3 *= 1e-3;
        cfg.x_outer = 100e-9;
        let pot = cfg.potential();
        let xw = pot.inner_wall().unwrap();
        let sp = solve_bound_spectrum(&pot, &SpectrumOptions::from_config(&cfg, xw)).unwrap();
        assert!(sp.len() > 5, "toy well holds {} levels", sp.len());
        let force = coupling::bound_matrix(&pot, &sp);
        (pot, sp, force)
    }

    fn toy_copts(sp: &BoundSpectrum) -> ContinuumOptions {
        ContinuumOptions {
            x_inner: sp.x_w,
            points_per_wavelength: 20.0,
            energy_floor: TWO_PI * 1e6,
        }
    }

    #[test]
    fn bound_rate_matrix_splits_and_balances() {
        let (_pot, sp, force) = shallow_toy();
        let s = reference_solid();
        let energies = sp.energies();
        let r = rate_matrix(&s, &energies, &force);
        for nu in 0..energies.len() {
            assert_eq!(r[(nu, nu)], 0.0);
        }
        // Detailed balance pair by pair inside the band.
        for nu in 0..energies.len() {
            for j in 0..nu {
                let gap = energies[nu] - energies[j];
                if gap >= s.debye_frequency || r[(nu, j)] == 0.0 {
                    continue;
                }
                let ratio = r[(j, nu)] / r[(nu, j)];
                assert_relative_eq!(ratio, (gap / s.temperature).exp(), max_relative = 1e-12);
            }
        }
        // The split depletion rates add back to the matrix column sums.
        let dep = depletion_rates(&s, &energies, &force, &[]);
        for (nu, d) in dep.iter().enumerate() {
            assert_eq!(d.nu, nu);
            assert_eq!(d.absorption_free, 0.0);
            let column: f64 = (0..energies.len()).map(|j| r[(j, nu)]).sum();
            assert_relative_eq!(d.total(), column, max_relative = 1e-12);
        }
        let c = coherence_rate(&dep, 0, 2);
        assert_relative_eq!(
            c,
            0.5 * (dep[0].total() + dep[2].total()),
            max_relative = 1e-14
        );
    }

    #[test]
    fn desorption_shuts_off_beyond_the_acoustic_band() {
        let (pot, sp, _force) = shallow_toy();
        let s0 = reference_solid();
        // Slow the sound down until the band edge sits at half the
        // binding of the deepest level: the deep half of the well is
        // then stuck while the shallow edge still escapes.
        let target = 0.5 * sp.states[0].energy.abs();
        let v = target / s0.debye_wavenumber;
        let s = DebyeSolid::derive(
            s0.unit_mass,
            s0.unit_mass * s0.number_density,
            v,
            s0.temperature,
        );
        assert_relative_eq!(s.debye_frequency, target, max_relative = 1e-12);
        let ladder =
            BoundFreeLadder::build(&pot, &sp, &toy_copts(&sp), 3.05 * s.debye_frequency, 72)
                .unwrap();
        let deep = ladder.desorption_rate(&s, sp.states[0].energy, 0);
        assert_eq!(deep, 0.0);
        let last = sp.len() - 1;
        let shallow = ladder.desorption_rate(&s, sp.states[last].energy, last);
        assert!(shallow > 0.0, "shallow level should escape, got {shallow:e}");
    }

    #[test]
    fn desorption_is_stable_under_mesh_doubling() {
        let (pot, sp, _force) = shallow_toy();
        let s = reference_solid();
        let copts = toy_copts(&sp);
        let e_top = 3.05 * s.debye_frequency;
        let coarse = BoundFreeLadder::build(&pot, &sp, &copts, e_top, 96).unwrap();
        let fine = BoundFreeLadder::build(&pot, &sp, &copts, e_top, 192).unwrap();
        // The stiffest rows pair a band-top free state, whose grid stops
        // right past the well, with near-threshold levels still at full
        // amplitude there; a couple percent of analytic-continuation
        // slack on those is the honest price of the truncation.
        assert!(coarse.tail_worst < 5e-2, "tail {:.2e}", coarse.tail_worst);
        for nu in [0, sp.len() / 2, sp.len() - 1] {
            let e_nu = sp.states[nu].energy;
            let a = coarse.desorption_rate(&s, e_nu, nu);
            let b = fine.desorption_rate(&s, e_nu, nu);
            assert!(a > 0.0);
            // Trapezoid in t converges quadratically; at this density the
            // band integrals sit a few parts in a thousand apart.
            assert_relative_eq!(a, b, max_relative = 5e-3);
        }
    }

    #[test]
    fn capture_scales_inversely_with_the_box() {
        let (pot, sp, _force) = shallow_toy();
        let s = reference_solid();
        let table =
            CaptureTable::build(&pot, &sp, &toy_copts(&sp), TWO_PI * 1e9, 48).unwrap();
        let energies = sp.energies();
        let g1 = table.capture_rates(&s, &energies, 1e-3);
        let g2 = table.capture_rates(&s, &energies, 2e-3);
        for j in 0..table.energies.len() {
            for nu in 0..energies.len() {
                assert!(g1[(j, nu)] >= 0.0);
                if g1[(j, nu)] > 0.0 {
                    assert_relative_eq!(g1[(j, nu)], 2.0 * g2[(j, nu)], max_relative = 1e-14);
                }
            }
        }
        let totals = table.capture_totals(&s, &energies, 1e-3);
        assert!(totals.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(totals.iter().any(|v| *v > 0.0));
    }

    #[test]
    fn thermal_capture_agrees_with_direct_quadrature() {
        let (pot, sp, _force) = shallow_toy();
        let s = reference_solid();
        let e_top = TWO_PI * 1e9;
        let table = CaptureTable::build(&pot, &sp, &toy_copts(&sp), e_top, 48).unwrap();
        let energies = sp.energies();
        let theta0 = e_top / 100.0;
        let box_length = 1e-3;
        let (per, total) = table
            .thermal_capture(&s, &energies, box_length, theta0, 32)
            .unwrap();
        assert_relative_eq!(total, per.iter().sum::<f64>(), max_relative = 1e-12);
        // The interpolated element table is only piecewise smooth, which
        // caps the Gauss rule near a part in a thousand no matter the
        // order; downstream consumers of this average live with tens of
        // percent, so that is plenty.
        let (_, total_hi) = table
            .thermal_capture(&s, &energies, box_length, theta0, 64)
            .unwrap();
        assert_relative_eq!(total, total_hi, max_relative = 5e-3);
        // Independent check: adaptive quadrature over the Boltzmann
        // weight with the same interpolated elements.
        let ts: Vec<f64> = table.energies.iter().map(|v| v.sqrt()).collect();
        let lambda = 2.0 * (PI / (table.wavenumber_scale * theta0)).sqrt();
        let brute = crate::quad::adaptive_simpson(
            |x| {
                let e = theta0 * x;
                let mut sum = 0.0;
                for nu in 0..energies.len() {
                    let col: Vec<f64> = (0..table.energies.len())
                        .map(|j| table.elements[(j, nu)])
                        .collect();
                    let f = interp_clamped(&ts, &col, e.sqrt());
                    sum += emission_rate(&s, e - energies[nu], f);
                }
                (-x).exp() * sum
            },
            1e-9,
            50.0,
            1e-8,
            0.0,
        )
        .unwrap()
            * lambda
            * theta0
            / box_length;
        assert_relative_eq!(total, brute, max_relative = 5e-3);
    }

    #[test]
    fn thermal_average_reproduces_simple_moments() {
        let e_top = 1e12;
        let n = 64;
        let energies: Vec<f64> = (0..=n)
            .map(|j| e_top * (j as f64 / n as f64).powi(2))
            .collect();
        let theta0 = e_top / 120.0;
        let ones = vec![1.0; n + 1];
        let avg = thermal_average(&energies, &ones, theta0, 24).unwrap();
        assert_relative_eq!(avg, 1.0, max_relative = 1e-12);
        let avg_e = thermal_average(&energies, &energies, theta0, 24).unwrap();
        assert_relative_eq!(avg_e, 0.5 * theta0, max_relative = 1e-10);
    }

    #[test]
    fn balance_kernel_matches_bath_at_equal_temperatures() {
        let (pot, sp, _force) = shallow_toy();
        let s = reference_solid();
        let theta = s.temperature;
        let kernel = ThermalBalanceKernel::build(
            &pot,
            &toy_copts(&sp),
            &s,
            60.0 * theta,
            6,
            6,
        )
        .unwrap();
        let box_length = 1e-3;
        // Gas in equilibrium with the bath: emission and absorption
        // balance identically, term by term, on any mesh.
        let (em, ab) = kernel.rates(theta, theta, box_length);
        assert!(ab > 0.0);
        assert_relative_eq!(em, ab, max_relative = 1e-12);
        // Colder gas heats up, hotter gas cools down.
        let (em_cold, ab_cold) = kernel.rates(theta, 0.5 * theta, box_length);
        assert!(ab_cold > em_cold);
        let (em_hot, ab_hot) = kernel.rates(theta, 1.5 * theta, box_length);
        assert!(em_hot > ab_hot);
    }

    #[test]
    fn cold_free_atoms_absorb_more_than_they_emit() {
        let (pot, sp, _force) = shallow_toy();
        let s = reference_solid();
        let copts = toy_copts(&sp);
        let energies = [TWO_PI * 1e8, TWO_PI * 1e9];
        let opts = FreeFreeOpts {
            absorption_nodes: 12,
            emission_nodes: 8,
        };
        let ff = free_free_rates(&pot, &copts, &s, &energies, opts).unwrap();
        for i in 0..energies.len() {
            assert!(ff.upward[i] > 10.0 * ff.downward[i]);
            assert!(ff.downward[i] > 0.0);
        }
        // Node doubling moves the integrals by little.
        let fine = free_free_rates(
            &pot,
            &copts,
            &s,
            &energies[..1],
            FreeFreeOpts {
                absorption_nodes: 24,
                emission_nodes: 16,
            },
        )
        .unwrap();
        assert_relative_eq!(ff.upward[0], fine.upward[0], max_relative = 1e-2);
        assert_relative_eq!(ff.downward[0], fine.downward[0], max_relative = 1e-2);
    }
}
