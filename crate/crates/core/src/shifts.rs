//! Bath-induced level shifts: principal-value integrals over the
//! acoustic band.
//!
//! The same one-phonon coupling that drives transitions also displaces
//! the levels in second order.  Each partner level `mu` pulls level `l`
//! through every virtual mode of the band, and the two channels (bath
//! gains a quantum, bath loses one) combine into
//!
//! ```text
//! delta_l = pref / (2 pi) * sum_mu F_{l mu}^2 * [ I0(w0) + IT(w0) ],
//! ```
//!
//! with `w0 = E_l - E_mu`, `pref` the golden-rule prefactor, and the
//! band integrals
//!
//! ```text
//! I0(w0) = int_0^W  w / (w0 - w) dw          (vacuum part)
//! IT(w0) = PV int_0^W  2 w0 bw(w) / (w0^2 - w^2) dw,
//! ```
//!
//! where `bw(w) = w nbar(w)` is the occupied-mode weight.  `I0` has the
//! closed form `-W + w0 ln|w0 / (w0 - W)|`; `IT` keeps its principal
//! value because the pole at `|w0|` sits inside the band whenever the
//! transition is resonant with a real mode.  Free states enter the sum
//! as a trapezoid over the square-root energy mesh of a
//! [`BoundFreeLadder`].
//!
//! Only shift differences are observable; [`transition_shift`] returns
//! the displacement of the `l -> k` line, which vanishes identically on
//! the diagonal.

use crate::quad::principal_value;
use crate::rates::{BoundFreeLadder, DebyeSolid};
use crate::{Error, Result};
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Occupied-mode weight `w nbar(w) = w / (exp(w / theta) - 1)`, extended
/// continuously to `theta` at `w = 0`.
fn bose_weight(omega: f64, theta: f64) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    let x = omega / theta;
    if x.abs() < 1e-8 {
        // w / expm1(x) = theta (1 - x/2 + x^2/12 - ...).
        return theta * (1.0 - 0.5 * x);
    }
    let d = x.exp_m1();
    if d.is_infinite() {
        0.0
    } else {
        omega / d
    }
}

/// Vacuum band integral `int_0^W w / (w0 - w) dw` in closed form.
///
/// Diverges logarithmically as `w0` approaches the band edge `W` from
/// either side; discrete spectra never land there exactly, and a
/// non-finite total is rejected by [`level_shift`].
fn zero_point_integral(w0: f64, w_d: f64) -> f64 {
    if w0 == 0.0 {
        return -w_d;
    }
    -w_d + w0 * (w0 / (w0 - w_d)).abs().ln()
}

/// Thermal band integral `IT(w0)`, as a principal value when the pole
/// `|w0|` falls inside the band.
///
/// Both signs of `w0` reduce to the same form: with `p = |w0|`,
/// `2 w0 / (w0^2 - w^2) = -2 w0 / ((p + w)(w - p))`, so the smooth
/// numerator handed to the quadrature is `-2 w0 bw(w) / (p + w)`.
fn thermal_integral(w0: f64, w_d: f64, theta: f64, rel_tol: f64) -> Result<f64> {
    if w0 == 0.0 || theta <= 0.0 {
        return Ok(0.0);
    }
    let p = w0.abs();
    principal_value(
        |w| -2.0 * w0 * bose_weight(w, theta) / (p + w),
        0.0,
        w_d,
        p,
        rel_tol,
    )
}

/// Second-order displacement of one level, split by mechanism.
#[derive(Clone, Copy, Debug)]
pub struct LevelShift {
    /// Part that survives at zero temperature, rad/s.
    pub zero_point: f64,
    /// Part carried by thermally occupied modes, rad/s.
    pub thermal: f64,
    /// Magnitude contributed by the top nine tenths of the free-state
    /// mesh, relative to the total; small once the band sum has
    /// converged in the mesh ceiling.
    pub tail_fraction: f64,
}

impl LevelShift {
    /// Full displacement, rad/s.
    pub fn total(&self) -> f64 {
        self.zero_point + self.thermal
    }
}

/// Shift of bound level `l` from its coupling to every bound partner
/// and, when a ladder is supplied, to the free band above threshold.
///
/// `force` is the bound-bound gradient matrix (rad/s per m) and
/// `bound_energies` the matching level energies.  `rel_tol` bounds the
/// relative error of each principal-value quadrature.
pub fn level_shift(
    solid: &DebyeSolid,
    bound_energies: &[f64],
    force: &DMatrix<f64>,
    ladder: Option<&BoundFreeLadder>,
    l: usize,
    rel_tol: f64,
) -> Result<LevelShift> {
    let n = bound_energies.len();
    if l >= n {
        return Err(Error::numerics("level shift: level index out of range"));
    }
    if force.nrows() != n || force.ncols() != n {
        return Err(Error::numerics("level shift: force matrix shape mismatch"));
    }
    let w_d = solid.debye_frequency;
    let theta = solid.temperature;
    let e_l = bound_energies[l];

    let mut zero_point = 0.0;
    let mut thermal = 0.0;
    for (mu, &e_mu) in bound_energies.iter().enumerate() {
        let f = force[(l, mu)];
        if f == 0.0 {
            continue;
        }
        let w0 = e_l - e_mu;
        zero_point += f * f * zero_point_integral(w0, w_d);
        thermal += f * f * thermal_integral(w0, w_d, theta, rel_tol)?;
    }

    let mut tail_sum = 0.0;
    if let Some(lad) = ladder {
        if lad.elements.ncols() != n {
            return Err(Error::numerics("level shift: ladder level count mismatch"));
        }
        let m = lad.energies.len();
        let dt = lad.energies[0].sqrt();
        let e_cut = lad.energies[m - 1] / 10.0;
        for j in 0..m {
            let f = lad.elements[(j, l)];
            if f == 0.0 {
                continue;
            }
            let e = lad.energies[j];
            let w0 = e_l - e;
            let i0 = zero_point_integral(w0, w_d);
            let it = thermal_integral(w0, w_d, theta, rel_tol)?;
            // Uniform trapezoid in t = sqrt(e): the integrand vanishes
            // at the origin, the last node takes half weight.
            let half = if j + 1 == m { 0.5 } else { 1.0 };
            let wj = 2.0 * e.sqrt() * dt * half * f * f;
            zero_point += wj * i0;
            thermal += wj * it;
            if e > e_cut {
                tail_sum += wj * (i0 + it);
            }
        }
    }

    let pref = solid.rate_prefactor() / (2.0 * PI);
    zero_point *= pref;
    thermal *= pref;
    let total = zero_point + thermal;
    if !total.is_finite() {
        return Err(Error::numerics("level shift: band integral diverged"));
    }
    let tail_fraction = if total != 0.0 {
        (pref * tail_sum / total).abs()
    } else {
        0.0
    };
    Ok(LevelShift {
        zero_point,
        thermal,
        tail_fraction,
    })
}

/// Displacement of the `l -> k` transition frequency: the difference of
/// the two level shifts.  Exactly zero for `l == k`.
pub fn transition_shift(
    solid: &DebyeSolid,
    bound_energies: &[f64],
    force: &DMatrix<f64>,
    ladder: Option<&BoundFreeLadder>,
    l: usize,
    k: usize,
    rel_tol: f64,
) -> Result<f64> {
    let dl = level_shift(solid, bound_energies, force, ladder, l, rel_tol)?;
    let dk = level_shift(solid, bound_energies, force, ladder, k, rel_tol)?;
    Ok(dl.total() - dk.total())
}
