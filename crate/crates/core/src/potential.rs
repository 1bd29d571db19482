//! The one-dimensional atom-surface potential: a steep exponential wall
//! right at the surface plus the attractive `-C3/x^3` dispersion tail.
//!
//! In internal units the potential is an angular frequency,
//! `u(x) = A exp(-alpha x) - C3 / x^3`, with `A` and `C3` already scaled
//! by two pi.  Going toward the surface `u` diverges to minus infinity
//! (the `x^-3` term wins), so the physical inner boundary is the top of
//! the repulsive barrier, where solvers place a hard wall.

use crate::{Error, Result};

/// Anything the solvers need from a potential: value, gradient, and the
/// atom mass that fixes the kinetic scale.
pub trait PotentialModel: Sync {
    /// Potential at `x`, rad/s.
    fn value(&self, x: f64) -> f64;
    /// Spatial derivative at `x`, rad/s per meter.
    fn derivative(&self, x: f64) -> f64;
    /// Mass of the moving atom, kg.
    fn mass(&self) -> f64;

    /// `2 m / hbar`, the factor turning energies into squared wavenumbers:
    /// `k^2(x) = wavenumber_scale * (e - u(x))`.
    fn wavenumber_scale(&self) -> f64 {
        2.0 * self.mass() / crate::units::HBAR
    }

    /// Rightmost solution of `u(x) = e`, if the potential shape defines
    /// one.  Used to report how far out a level's classical region ends.
    fn energy_crossing(&self, _e: f64) -> Option<f64> {
        None
    }
}

/// Exponential wall plus dispersion tail, with the atom mass attached.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePotential {
    /// Tail coefficient, rad/s m^3.
    pub c3: f64,
    /// Wall amplitude, rad/s.
    pub a: f64,
    /// Wall decay constant, 1/m.
    pub alpha: f64,
    /// Atom mass, kg.
    pub atom_mass: f64,
}

impl SurfacePotential {
    pub fn new(c3: f64, a: f64, alpha: f64, atom_mass: f64) -> SurfacePotential {
        SurfacePotential { c3, a, alpha, atom_mass }
    }

    /// Top of the repulsive barrier: the maximum of `u` between the x^-3
    /// divergence and the well.  Solvers treat it as a hard wall; the
    /// barrier there is several orders of magnitude taller than the well
    /// is deep, so nothing physical leaks past it.
    ///
    /// Fails when the parameters give no barrier at all (wall too weak
    /// against the tail).
    pub fn inner_wall(&self) -> Result<f64> {
        // u' changes sign from + to - at the barrier top.  x^4 exp(-alpha x)
        // is unimodal with its peak at 4/alpha, so a barrier exists exactly
        // when u' < 0 there.
        let peak = 4.0 / self.alpha;
        if self.derivative(peak) >= 0.0 {
            return Err(Error::numerics(
                "potential has no repulsive barrier: wall term is too weak against the tail",
            ));
        }
        let mut lo = peak * 1e-6;
        while self.derivative(lo) <= 0.0 {
            lo *= 0.5;
            if lo < peak * 1e-30 {
                return Err(Error::numerics("failed to bracket the inner barrier top"));
            }
        }
        let mut hi = peak;
        // Bisect on the sign of u' to a 1e-12 relative bracket.
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.derivative(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Location and depth of the well minimum, beyond the barrier.
    pub fn well_minimum(&self) -> Result<(f64, f64)> {
        let peak = 4.0 / self.alpha;
        if self.derivative(peak) >= 0.0 {
            return Err(Error::numerics("potential has no well: no barrier, no minimum"));
        }
        let lo0 = peak;
        let mut hi = peak * 2.0;
        while self.derivative(hi) <= 0.0 {
            hi *= 2.0;
            if hi > 1.0 {
                return Err(Error::numerics("failed to bracket the well minimum"));
            }
        }
        let mut lo = lo0;
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.derivative(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        Ok((x, self.value(x)))
    }

    /// Outermost classical turning point for a bound energy `e < 0`:
    /// the largest `x` with `u(x) = e`.  For tail-dominated energies this
    /// is close to `(C3/|e|)^(1/3)`.
    pub fn rightmost_crossing(&self, e: f64) -> Result<f64> {
        if e >= 0.0 {
            return Err(Error::numerics(format!(
                "rightmost crossing needs a bound energy below zero, got {e:e}"
            )));
        }
        let (x_min, u_min) = self.well_minimum()?;
        if e <= u_min {
            return Err(Error::numerics(format!(
                "energy {e:e} rad/s lies below the well bottom {u_min:e} rad/s"
            )));
        }
        // Beyond the minimum u rises monotonically to zero, so the crossing
        // is unique.  Start from the tail estimate and widen.
        let mut lo = x_min;
        let mut hi = (self.c3 / -e).cbrt().max(2.0 * x_min);
        while self.value(hi) < e {
            hi *= 2.0;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.value(mid) < e {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

impl PotentialModel for SurfacePotential {
    fn value(&self, x: f64) -> f64 {
        self.a * (-self.alpha * x).exp() - self.c3 / (x * x * x)
    }

    fn derivative(&self, x: f64) -> f64 {
        let x2 = x * x;
        -self.alpha * self.a * (-self.alpha * x).exp() + 3.0 * self.c3 / (x2 * x2)
    }

    fn mass(&self) -> f64 {
        self.atom_mass
    }

    fn energy_crossing(&self, e: f64) -> Option<f64> {
        self.rightmost_crossing(e).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{internal_to_hz, TWO_PI};
    use crate::Config;
    use approx::assert_relative_eq;

    fn reference() -> SurfacePotential {
        Config::silica_cesium().potential()
    }

    #[test]
    fn value_matches_hand_arithmetic() {
        let p = reference();
        // Evaluated in external units straight from the defining formula.
        let at = |x_nm: f64| {
            let x = x_nm * 1e-9;
            1.6e18 * (-53e9 * x).exp() - 1.56e-15 / (x * x * x)
        };
        assert_relative_eq!(internal_to_hz(p.value(1e-9)), at(1.0), max_relative = 1e-12);
        assert_relative_eq!(internal_to_hz(p.value(10e-9)), at(10.0), max_relative = 1e-12);
        // The tail dominates at both points: about -1.56 THz and -1.56 GHz.
        assert_relative_eq!(internal_to_hz(p.value(1e-9)), -1.56e12, max_relative = 1e-4);
        assert_relative_eq!(internal_to_hz(p.value(10e-9)), -1.56e9, max_relative = 1e-6);
    }

    #[test]
    fn gradient_matches_hand_arithmetic() {
        let p = reference();
        // At 10 nm the wall term has decayed to nothing: u' = 3 C3 / x^4.
        let expect_hz_per_m = 3.0 * 1.56e-15 / 1e-8f64.powi(4);
        assert_relative_eq!(internal_to_hz(p.derivative(10e-9)), expect_hz_per_m, max_relative = 1e-9);
        assert_relative_eq!(expect_hz_per_m, 4.68e17, max_relative = 1e-12);
    }

    #[test]
    fn gradient_agrees_with_central_differences() {
        let p = reference();
        // Step scaled with x keeps the truncation error of the exponential
        // term below the tolerance at every point of the range.
        let n = 61;
        for i in 0..n {
            let x = 0.1e-9 * (1000.0f64).powf(i as f64 / (n - 1) as f64);
            let h = 1e-5 * x;
            let fd = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
            assert_relative_eq!(p.derivative(x), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn wall_term_is_strictly_repulsive() {
        let p = reference();
        for i in 0..200 {
            let x = 1e-12 * (1e6f64).powf(i as f64 / 199.0);
            // u(x) never drops below the bare tail.  Allow rounding slop:
            // where the wall term is many orders below the tail term, the
            // subtraction in value() cannot represent it.
            let tail = -p.c3 / (x * x * x);
            assert!(p.value(x) - tail >= 1e-12 * tail);
        }
    }

    #[test]
    fn inner_wall_agrees_with_scan_oracle() {
        let p = reference();
        // Independent oracle: dense log scan for the argmax of u between
        // the divergence and the well.
        let n = 20_000;
        let (mut best_x, mut best_u) = (f64::NAN, f64::NEG_INFINITY);
        for i in 0..n {
            let x = 1e-12 * (1e3f64).powf(i as f64 / (n - 1) as f64);
            let u = p.value(x);
            if u > best_u {
                best_u = u;
                best_x = x;
            }
        }
        let xw = p.inner_wall().unwrap();
        assert_relative_eq!(xw, best_x, max_relative = 1e-3);
        // Barrier top sits around 0.02 nm and is far taller than the well
        // is deep (beyond 1e15 Hz against a 1.6e14 Hz well depth).
        assert!(xw > 0.01e-9 && xw < 0.15e-9, "xw = {xw:e}");
        assert!(p.value(xw) > TWO_PI * 1e15);
        // It is a maximum: derivative flips from + to -.
        assert!(p.derivative(xw * 0.99) > 0.0);
        assert!(p.derivative(xw * 1.01) < 0.0);
    }

    #[test]
    fn well_minimum_is_where_fig_level_depths_say() {
        let p = reference();
        let (x_min, u_min) = p.well_minimum().unwrap();
        // Scan oracle for the minimum beyond the barrier.
        let n = 20_000;
        let (mut best_x, mut best_u) = (f64::NAN, f64::INFINITY);
        for i in 0..n {
            let x = 0.05e-9 * (100.0f64).powf(i as f64 / (n - 1) as f64);
            let u = p.value(x);
            if u < best_u {
                best_u = u;
                best_x = x;
            }
        }
        assert_relative_eq!(x_min, best_x, max_relative = 1e-3);
        assert_relative_eq!(u_min, best_u, max_relative = 1e-6);
        // Depth is a bit over 160 THz, which bounds the deepest level.
        let depth_thz = -internal_to_hz(u_min) / 1e12;
        assert!(depth_thz > 140.0 && depth_thz < 190.0, "depth {depth_thz} THz");
    }

    #[test]
    fn rightmost_crossing_tracks_the_tail() {
        let p = reference();
        // At -1.56 GHz the wall term is immeasurably small, so the crossing
        // is the pure tail inversion at 10 nm.
        let x = p.rightmost_crossing(TWO_PI * -1.56e9).unwrap();
        assert_relative_eq!(x, 10e-9, max_relative = 1e-9);
        // Shallower energies cross further out.
        let mut last = 0.0;
        for e_hz in [-1e12, -1e10, -1e8, -1e6, -322e3] {
            let x = p.rightmost_crossing(TWO_PI * e_hz).unwrap();
            assert!(x > last);
            last = x;
        }
        // 322 kHz binding reaches about 170 nm.
        assert_relative_eq!(last, (1.56e-15f64 / 322e3).cbrt(), max_relative = 1e-6);
        assert!(p.rightmost_crossing(1.0).is_err());
        assert!(p.rightmost_crossing(TWO_PI * -1e15).is_err());
    }
}
