//! Bound and continuum stationary states of the one-dimensional well.
//!
//! Bound levels come from node-count bisection: the number of interior
//! sign changes of the regular solution grown from the inner wall is a
//! monotone staircase in energy whose step `nu -> nu + 1` sits exactly at
//! the `nu`-th eigenvalue, so bisecting that predicate converges on each
//! level without any matching heuristics.  The wavefunction is then
//! assembled from an outward and an inward sweep glued at the outermost
//! classical turning point.  Continuum states at `e > 0` are grown
//! outward on their own grid and normalized per unit (angular) energy by
//! fitting the asymptotic free wave once the potential has died away.

use crate::grid::Grid;
use crate::numerov::{sweep_inward, sweep_outward};
use crate::potential::PotentialModel;
use crate::units::TWO_PI;
use crate::{Error, Result};
use rayon::prelude::*;

/// Decay action kept beyond the outer turning point: the stored tail
/// falls to `exp(-25) ~ 1e-11` of the interior amplitude.
const TAIL_ACTION: f64 = 25.0;

/// How the bound-state solver discretizes and where it stops.
#[derive(Clone, Copy, Debug)]
pub struct SpectrumOptions {
    /// Hard-wall inner boundary (m).
    pub x_inner: f64,
    /// Initial outer cutoff (m); grown automatically until the weakest
    /// level's tail fits, up to `max_x_outer`.
    pub x_outer: f64,
    pub max_x_outer: f64,
    pub points_per_wavelength: f64,
    /// Envelope floor (rad/s): the grid never coarsens past the
    /// wavelength of this energy.
    pub energy_floor: f64,
    /// Catalog ceiling (rad/s): levels with `e < e_top` are kept.
    pub e_top: f64,
}

impl SpectrumOptions {
    /// Options for the surface well described by `cfg`, with the wall at
    /// `x_inner` (normally `SurfacePotential::inner_wall`).
    pub fn from_config(cfg: &crate::Config, x_inner: f64) -> SpectrumOptions {
        SpectrumOptions {
            x_inner,
            x_outer: cfg.x_outer,
            max_x_outer: 20e-6,
            points_per_wavelength: cfg.step_points_per_wavelength,
            energy_floor: TWO_PI * 1e6,
            e_top: -cfg.shallow_cutoff,
        }
    }
}

/// One bound level on the shared grid.
#[derive(Clone, Debug)]
pub struct BoundState {
    pub nu: usize,
    /// Level energy, rad/s (negative for a well).
    pub energy: f64,
    /// Unit-normalized wavefunction sampled on the shared grid.
    pub values: Vec<f64>,
    /// Rightmost `u(x) = e` crossing (NaN when the shape defines none).
    pub x_cross: f64,
}

/// The full ladder of bound levels sharing one grid.
#[derive(Clone, Debug)]
pub struct BoundSpectrum {
    pub grid: Grid,
    pub states: Vec<BoundState>,
    pub x_w: f64,
}

impl BoundSpectrum {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.energy).collect()
    }
}

/// Solve every level below `opts.e_top`.
pub fn solve_bound_spectrum(
    pot: &dyn PotentialModel,
    opts: &SpectrumOptions,
) -> Result<BoundSpectrum> {
    let w = pot.wavenumber_scale();
    let mut x_out = opts.x_outer;
    loop {
        let grid = Grid::build(
            pot,
            opts.x_inner,
            x_out,
            opts.e_top,
            opts.energy_floor,
            opts.points_per_wavelength,
        )?;
        let u: Vec<f64> = grid.nodes.iter().map(|&x| pot.value(x)).collect();
        let n = grid.len();
        let count = |e: f64| -> usize {
            let f: Vec<f64> = u.iter().map(|&ui| w * (ui - e)).collect();
            sweep_outward(&grid, &f, 0, n - 1, 0.0, 1.0).sign_changes
        };
        let u_min = u.iter().cloned().fold(f64::INFINITY, f64::min);
        if u_min >= opts.e_top {
            return Err(Error::numerics("potential well lies entirely above the ceiling"));
        }
        let n_levels = count(opts.e_top);
        if n_levels == 0 {
            return Err(Error::numerics("no bound levels below the catalog ceiling"));
        }
        let solved: Result<Vec<(BoundState, bool)>> = (0..n_levels)
            .into_par_iter()
            .map(|nu| {
                let mut lo = u_min;
                let mut hi = opts.e_top;
                loop {
                    let tol = (1e-10 * lo.abs().max(hi.abs())).max(TWO_PI);
                    if hi - lo <= tol {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if count(mid) >= nu + 1 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                assemble(&grid, &u, w, nu, 0.5 * (lo + hi), pot)
            })
            .collect();
        let solved = solved?;
        // The weakest level decides whether the box was big enough.
        let tail_ok = solved.last().map(|(_, ok)| *ok).unwrap_or(false);
        if tail_ok || x_out >= opts.max_x_outer {
            if !tail_ok {
                return Err(Error::numerics(format!(
                    "outer cutoff {:.3e} m cannot contain the weakest level's tail",
                    x_out
                )));
            }
            let states = solved.into_iter().map(|(s, _)| s).collect::<Vec<_>>();
            // Energies must come out strictly ordered; anything else means
            // the count staircase was corrupted.
            for pair in states.windows(2) {
                if pair[1].energy <= pair[0].energy {
                    return Err(Error::numerics(format!(
                        "levels {} and {} came out unordered: {:.9e} then {:.9e} Hz",
                        pair[0].nu,
                        pair[1].nu,
                        crate::units::internal_to_hz(pair[0].energy),
                        crate::units::internal_to_hz(pair[1].energy),
                    )));
                }
            }
            return Ok(BoundSpectrum { grid, states, x_w: opts.x_inner });
        }
        x_out = (x_out * 1.6).min(opts.max_x_outer);
    }
}

/// Build the normalized wavefunction at a converged energy.  The second
/// return says whether the decaying tail fit inside the grid.
fn assemble(
    grid: &Grid,
    u: &[f64],
    w: f64,
    nu: usize,
    e: f64,
    pot: &dyn PotentialModel,
) -> Result<(BoundState, bool)> {
    let n = grid.len();
    let f: Vec<f64> = u.iter().map(|&ui| w * (ui - e)).collect();
    let mut m = match (0..n).rev().find(|&i| u[i] <= e) {
        Some(i) => i,
        None => return Err(Error::numerics("no classical region for a bound level")),
    };
    m = m.clamp(2, n - 3);
    // March the decay action to find where the tail is spent.
    let mut i_end = n - 1;
    let mut tail_ok = false;
    let mut act = 0.0;
    for i in m..n - 1 {
        act += f[i].max(0.0).sqrt() * (grid.nodes[i + 1] - grid.nodes[i]);
        if act >= TAIL_ACTION {
            i_end = (i + 1).min(n - 1);
            tail_ok = true;
            break;
        }
    }
    // Give the inward sweep a few uniform intervals to seed in.
    while i_end < n - 1 && !uniform_behind(grid, i_end, 3) {
        i_end += 1;
    }
    let out = sweep_outward(grid, &f, 0, m, 0.0, 1.0);
    let inn = sweep_inward(grid, &f, m, i_end, 0.0, 1.0);
    let mut phi = vec![0.0; n];
    phi[..=m].copy_from_slice(&out.values);
    let anchor = inn.value(m);
    if anchor == 0.0 || !anchor.is_finite() {
        return Err(Error::numerics("degenerate glue point while assembling a level"));
    }
    let scale = out.value(m) / anchor;
    for i in m + 1..=i_end {
        phi[i] = inn.value(i) * scale;
    }
    let sq: Vec<f64> = phi.iter().map(|v| v * v).collect();
    let norm = grid.integrate(&sq).sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::numerics("level normalization failed"));
    }
    let peak = phi.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
    let flip = phi
        .iter()
        .find(|v| v.abs() > 0.1 * peak)
        .map(|v| if *v < 0.0 { -1.0 } else { 1.0 })
        .unwrap_or(1.0);
    for v in phi.iter_mut() {
        *v *= flip / norm;
    }
    let x_cross = pot.energy_crossing(e).unwrap_or(f64::NAN);
    Ok((BoundState { nu, energy: e, values: phi, x_cross }, tail_ok))
}

/// True when the `count` grid intervals ending at node `i` share one step.
fn uniform_behind(grid: &Grid, i: usize, count: usize) -> bool {
    if i < count {
        return false;
    }
    let h = grid.nodes[i] - grid.nodes[i - 1];
    (1..count).all(|k| {
        let d = grid.nodes[i - k] - grid.nodes[i - k - 1];
        (d - h).abs() <= 1e-9 * h
    })
}

/// How continuum states are discretized.
#[derive(Clone, Copy, Debug)]
pub struct ContinuumOptions {
    pub x_inner: f64,
    pub points_per_wavelength: f64,
    pub energy_floor: f64,
}

impl ContinuumOptions {
    pub fn from_config(cfg: &crate::Config, x_inner: f64) -> ContinuumOptions {
        ContinuumOptions {
            x_inner,
            points_per_wavelength: cfg.step_points_per_wavelength,
            energy_floor: TWO_PI * 1e6,
        }
    }
}

/// One energy-normalized scattering state on its own grid.
///
/// Asymptotically `phi(x) = sqrt(w / (pi k)) sin(k x + delta)`, which makes
/// `<phi_e | phi_e'> = delta(e - e')` with `e` in rad/s.
#[derive(Clone, Debug)]
pub struct ContinuumState {
    /// Kinetic energy at infinity, rad/s (> 0).
    pub energy: f64,
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Asymptotic phase shift (radians, in (-pi, pi]).
    pub delta: f64,
    /// Asymptotic wavenumber `sqrt(w e)`, 1/m.
    pub k_asym: f64,
    /// RMS mismatch of the asymptotic fit relative to its amplitude.
    pub fit_residual: f64,
}

/// Solve the scattering state at energy `e` (rad/s, > 0).
pub fn continuum_state(
    pot: &dyn PotentialModel,
    e: f64,
    opts: &ContinuumOptions,
) -> Result<ContinuumState> {
    if !(e > 0.0) {
        return Err(Error::numerics(format!("continuum energy must be positive, got {e:e}")));
    }
    let w = pot.wavenumber_scale();
    let k = (w * e).sqrt();
    let lambda = TWO_PI / k;
    // The asymptotic fit starts once |u| has fallen to 1e-4 of e; any
    // residual tail phase drift across the fit window is then below the
    // 1e-3 residual budget.
    let x_fit = match pot.energy_crossing(-1e-4 * e) {
        Some(x) => x,
        None => {
            let mut x = opts.x_inner * 2.0;
            while pot.value(x).abs() > 1e-4 * e && x < 1.0 {
                x *= 1.5;
            }
            x
        }
    };
    let x_fit = x_fit.max(opts.x_inner * 4.0);
    let x_end = x_fit + 3.5 * lambda;
    let grid = Grid::build(
        pot,
        opts.x_inner,
        x_end,
        e,
        opts.energy_floor,
        opts.points_per_wavelength,
    )?;
    let n = grid.len();
    let f: Vec<f64> = grid.nodes.iter().map(|&x| w * (pot.value(x) - e)).collect();
    let sw = sweep_outward(&grid, &f, 0, n - 1, 0.0, 1.0);
    // Least-squares a sin(kx) + b cos(kx) over the asymptotic window.
    let i0 = grid.index_at(x_fit).min(n - 8);
    let (mut ss, mut sc, mut cc, mut sy, mut cy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in i0..n {
        let (s, c) = (k * grid.nodes[i]).sin_cos();
        let y = sw.values[i];
        ss += s * s;
        sc += s * c;
        cc += c * c;
        sy += s * y;
        cy += c * y;
    }
    let det = ss * cc - sc * sc;
    if det.abs() < 1e-9 * ss.max(cc).powi(2) {
        return Err(Error::numerics("asymptotic fit window is degenerate"));
    }
    let a = (cc * sy - sc * cy) / det;
    let b = (ss * cy - sc * sy) / det;
    let amp = a.hypot(b);
    if !(amp > 0.0) {
        return Err(Error::numerics("scattering solution vanished in the fit window"));
    }
    let mut resid = 0.0;
    for i in i0..n {
        let (s, c) = (k * grid.nodes[i]).sin_cos();
        let d = sw.values[i] - a * s - b * c;
        resid += d * d;
    }
    let fit_residual = (resid / (n - i0) as f64).sqrt() / amp;
    if fit_residual > 1e-2 {
        return Err(Error::numerics(format!(
            "asymptotic fit residual {fit_residual:.2e} at e = {:.6e} Hz: window not asymptotic",
            crate::units::internal_to_hz(e)
        )));
    }
    let target = (w / (std::f64::consts::PI * k)).sqrt();
    let scale = target / amp;
    let values: Vec<f64> = sw.values.iter().map(|v| v * scale).collect();
    Ok(ContinuumState {
        energy: e,
        grid,
        values,
        delta: b.atan2(a),
        k_asym: k,
        fit_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{internal_to_hz, HBAR};
    use crate::Config;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::sync::OnceLock;

    /// Harmonic well used as an exactly solvable cross-check.
    struct HarmOsc {
        m: f64,
        omega: f64,
        x0: f64,
    }

    impl PotentialModel for HarmOsc {
        fn value(&self, x: f64) -> f64 {
            0.5 * self.m * self.omega * self.omega * (x - self.x0).powi(2) / HBAR
        }
        fn derivative(&self, x: f64) -> f64 {
            self.m * self.omega * self.omega * (x - self.x0) / HBAR
        }
        fn mass(&self) -> f64 {
            self.m
        }
    }

    #[test]
    fn harmonic_ladder_to_a_part_per_million() {
        let m = 2.21e-25;
        let omega = 2.0 * std::f64::consts::PI * 1e12;
        let x0 = 1e-9;
        let a_ho = (HBAR / (m * omega)).sqrt();
        let pot = HarmOsc { m, omega, x0 };
        let opts = SpectrumOptions {
            x_inner: x0 - 17.0 * a_ho,
            x_outer: x0 + 17.0 * a_ho,
            max_x_outer: x0 + 17.0 * a_ho,
            points_per_wavelength: 20.0,
            energy_floor: 0.05 * omega,
            e_top: 40.6 * omega,
        };
        let sp = solve_bound_spectrum(&pot, &opts).unwrap();
        assert_eq!(sp.len(), 41, "levels below 40.6 hw: n = 0..=40");
        for &nu in &[0usize, 1, 5, 17, 40] {
            let exact = omega * (nu as f64 + 0.5);
            assert_relative_eq!(sp.states[nu].energy, exact, max_relative = 1e-6);
        }
        // Ground state is the textbook Gaussian; compare its peak (the
        // nearest node can sit up to h/2 off the center).
        let g = &sp.states[0];
        let peak = g.values.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        let gauss = (std::f64::consts::PI * a_ho * a_ho).powf(-0.25);
        assert_relative_eq!(peak, gauss, max_relative = 1e-4);
        // Parity: the odd state vanishes at the center. No node sits
        // exactly at x0, so interpolate onto it.
        let o = &sp.states[1];
        let at_center = crate::grid::resample(&sp.grid.nodes, &o.values, &[x0])[0];
        let o_peak = o.values.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(at_center.abs() < 1e-3 * o_peak, "center value {:.2e} of peak", at_center.abs() / o_peak);
    }

    fn surface_spectrum() -> &'static BoundSpectrum {
        static SPEC: OnceLock<BoundSpectrum> = OnceLock::new();
        SPEC.get_or_init(|| {
            let cfg = Config::silica_cesium();
            let pot = cfg.potential();
            let xw = pot.inner_wall().unwrap();
            solve_bound_spectrum(&pot, &SpectrumOptions::from_config(&cfg, xw)).unwrap()
        })
    }

    #[test]
    fn surface_well_level_count_and_depth() {
        let sp = surface_spectrum();
        assert!(
            sp.len() >= 280 && sp.len() <= 360,
            "expected a few hundred levels, got {}",
            sp.len()
        );
        // Deepest level sits near the bottom of the -160 THz well.
        let e0 = internal_to_hz(sp.states[0].energy);
        assert!(
            (-e0 - 1.58e14).abs() < 0.05 * 1.58e14,
            "ground level at {e0:.4e} Hz"
        );
        // Energies rise monotonically and stay below the ceiling.
        for s in &sp.states {
            assert!(s.energy < 0.0);
        }
    }

    #[test]
    fn weakest_level_tail_is_contained() {
        let sp = surface_spectrum();
        let last = sp.states.last().unwrap();
        let peak = last.values.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        let edge = last.values.last().unwrap().abs();
        assert!(edge <= 1e-8 * peak, "tail at box edge: {:.3e} of peak", edge / peak);
        assert!(last.x_cross <= 0.9 * *sp.grid.nodes.last().unwrap());
    }

    #[test]
    fn levels_are_energy_eigenstates() {
        // <phi|H|phi>/hbar must reproduce the eigenvalue: kinetic term via
        // the gradient, potential term via quadrature.
        let sp = surface_spectrum();
        let cfg = Config::silica_cesium();
        let pot = cfg.potential();
        let w = pot.wavenumber_scale();
        for &nu in &[3usize, 60, 150] {
            let s = &sp.states[nu];
            let d = sp.grid.gradient(&s.values);
            let integrand: Vec<f64> = sp
                .grid
                .nodes
                .iter()
                .enumerate()
                .map(|(i, &x)| d[i] * d[i] / w + pot.value(x) * s.values[i] * s.values[i])
                .collect();
            let h_exp = sp.grid.integrate(&integrand);
            assert_relative_eq!(h_exp, s.energy, max_relative = 1e-5);
        }
    }

    #[test]
    fn free_particle_scattering_normalization() {
        // Zero potential with a wall: exact solution sin(k (x - x_w)) up to
        // the energy-normalizing amplitude.
        struct Wall;
        impl PotentialModel for Wall {
            fn value(&self, _x: f64) -> f64 {
                0.0
            }
            fn derivative(&self, _x: f64) -> f64 {
                0.0
            }
            fn mass(&self) -> f64 {
                2.21e-25
            }
        }
        let pot = Wall;
        let e = crate::units::hz_to_internal(5e6);
        let opts = ContinuumOptions {
            x_inner: 20e-9,
            points_per_wavelength: 20.0,
            energy_floor: TWO_PI * 1e6,
        };
        let st = continuum_state(&pot, e, &opts).unwrap();
        let w = pot.wavenumber_scale();
        let k = (w * e).sqrt();
        assert_relative_eq!(st.k_asym, k, max_relative = 1e-12);
        let amp = (w / (std::f64::consts::PI * k)).sqrt();
        for i in (10..st.grid.len()).step_by(57) {
            let x = st.grid.nodes[i];
            let exact = amp * (k * (x - 20e-9)).sin();
            assert_abs_diff_eq!(st.values[i], exact, epsilon = 1e-5 * amp);
        }
        // Phase shift of a hard wall at x_w: delta = -k x_w (mod pi here,
        // sign convention of the fit).
        let expect = -k * 20e-9;
        let got = st.delta;
        let diff = (got - expect).rem_euclid(std::f64::consts::PI);
        let diff = diff.min(std::f64::consts::PI - diff);
        assert!(diff < 1e-4, "delta {got} vs {expect}");
    }

    #[test]
    fn surface_scattering_state_is_sane() {
        let cfg = Config::silica_cesium();
        let pot = cfg.potential();
        let xw = pot.inner_wall().unwrap();
        let e = crate::units::hz_to_internal(5e6);
        let st = continuum_state(&pot, e, &ContinuumOptions::from_config(&cfg, xw)).unwrap();
        assert!(st.fit_residual < 1e-3, "residual {:.2e}", st.fit_residual);
        // Inside the well the local wavelength is far shorter, so the
        // amplitude there is far smaller than the asymptotic one (WKB
        // 1/sqrt(k) suppression).
        let amp_asym = (pot.wavenumber_scale() / (std::f64::consts::PI * st.k_asym)).sqrt();
        let i_in = st.grid.index_at(1e-9);
        assert!(st.values[i_in].abs() < 0.2 * amp_asym);
        // And the state oscillates inside the well: count a few nodes.
        let i_hi = st.grid.index_at(5e-9);
        let mut flips = 0;
        let mut last = 0.0f64;
        for &v in &st.values[i_in..i_hi] {
            if v != 0.0 {
                if last != 0.0 && v.signum() != last {
                    flips += 1;
                }
                last = v.signum();
            }
        }
        assert!(flips > 10, "only {flips} oscillations inside the well");
    }
}
