//! Piecewise-uniform spatial grids tied to the local de Broglie wavelength.
//!
//! A grid is a sorted set of nodes split into segments of uniform step;
//! neighboring segments differ in step by exactly a factor of two.  The
//! step bound at `x` comes from two scales: the local wavelength
//! `2 pi / sqrt(w s(x))` for the envelope energy
//! `s(x) = max(|e_ref - u|, |u|, floor)`, divided by the configured points
//! per wavelength, and an Airy-length cap `(w |u'|)^(-1/3)` that keeps
//! turning-point regions resolved even where the wavelength bound goes
//! soft.  One grid built with `e_ref = 0` resolves every bound state of
//! the potential at once; continuum states get their own grid at their
//! own energy.

use crate::potential::PotentialModel;
use crate::{Error, Result};

/// Start index and step of one uniform run of nodes.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub start: usize,
    pub step: f64,
}

/// A piecewise-uniform grid.  Segment `j` owns nodes
/// `segments[j].start ..= segments[j+1].start` (the boundary node is
/// shared); the last segment runs to the final node.
#[derive(Clone, Debug)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub segments: Vec<Segment>,
    pub points_per_wavelength: f64,
}

/// Hard ceiling on grid size; hitting it means the step rule collapsed.
const MAX_NODES: usize = 40_000_000;

impl Grid {
    /// Build a grid on `[x_in, x_out]` resolving oscillations up to the
    /// envelope energy `max(|e_ref - u|, |u|, floor)` (all rad/s).
    pub fn build(
        pot: &dyn PotentialModel,
        x_in: f64,
        x_out: f64,
        e_ref: f64,
        floor: f64,
        points_per_wavelength: f64,
    ) -> Result<Grid> {
        assert!(x_out > x_in && x_in > 0.0);
        let w = pot.wavenumber_scale();
        let p = points_per_wavelength;
        let h_max = |x: f64| -> f64 {
            let u = pot.value(x);
            let s = (e_ref - u).abs().max(u.abs()).max(floor);
            let h_wave = std::f64::consts::TAU / (p * (w * s).sqrt());
            let du = pot.derivative(x).abs();
            if du > 0.0 {
                let airy = (w * du).cbrt().recip();
                h_wave.min(8.0 * airy / p)
            } else {
                h_wave
            }
        };

        let mut nodes = vec![x_in];
        let mut segments = Vec::new();
        let mut h = h_max(x_in);
        segments.push(Segment { start: 0, step: h });
        let mut steps_in_segment = 0usize;
        let mut x = x_in;
        while x < x_out {
            // Shrink until the step obeys the bound at its far end.
            while h > h_max(x + h) && steps_in_segment >= 1 {
                h *= 0.5;
                segments.push(Segment { start: nodes.len() - 1, step: h });
                steps_in_segment = 0;
            }
            // Grow once the bound allows it with some margin, but only a
            // few steps past the last change so Numerov reseeding always
            // has two same-step nodes behind it.
            if steps_in_segment >= 4 && 2.0 * h <= 0.9 * h_max(x + 2.0 * h) {
                h *= 2.0;
                segments.push(Segment { start: nodes.len() - 1, step: h });
                steps_in_segment = 0;
            }
            x += h;
            nodes.push(x);
            steps_in_segment += 1;
            if nodes.len() > MAX_NODES {
                return Err(Error::numerics(format!(
                    "grid on [{x_in:e}, {x_out:e}] m exceeded {MAX_NODES} nodes"
                )));
            }
        }
        // Drop empty trailing segment records (possible when a segment
        // change lands exactly on the final node).
        while let Some(last) = segments.last() {
            if last.start + 1 >= nodes.len() && segments.len() > 1 {
                segments.pop();
            } else {
                break;
            }
        }
        Ok(Grid { nodes, segments, points_per_wavelength: p })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the last node of segment `j` (shared with segment `j+1`).
    pub fn segment_end(&self, j: usize) -> usize {
        if j + 1 < self.segments.len() {
            self.segments[j + 1].start
        } else {
            self.nodes.len() - 1
        }
    }

    /// Largest node index with `nodes[i] <= x` (clamped to the range).
    pub fn index_at(&self, x: f64) -> usize {
        match self.nodes.binary_search_by(|n| n.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Composite trapezoid with an Euler-Maclaurin end correction per
    /// uniform segment.  The correction cancels the h^2 error committed
    /// where segments of different step meet, leaving the quadrature
    /// fourth-order for integrands that are smooth inside segments.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.nodes.len());
        let mut total = 0.0;
        for (j, seg) in self.segments.iter().enumerate() {
            let a = seg.start;
            let b = self.segment_end(j);
            if b <= a {
                continue;
            }
            let h = seg.step;
            let mut s = 0.5 * (f[a] + f[b]);
            for v in &f[a + 1..b] {
                s += *v;
            }
            total += h * s;
            let n = b - a + 1;
            // One-sided derivative estimates at the segment ends.
            let (da, db) = if n >= 5 {
                let da = (-25.0 / 12.0 * f[a] + 4.0 * f[a + 1] - 3.0 * f[a + 2]
                    + 4.0 / 3.0 * f[a + 3]
                    - 0.25 * f[a + 4])
                    / h;
                let db = (25.0 / 12.0 * f[b] - 4.0 * f[b - 1] + 3.0 * f[b - 2]
                    - 4.0 / 3.0 * f[b - 3]
                    + 0.25 * f[b - 4])
                    / h;
                (da, db)
            } else if n >= 3 {
                let da = (-1.5 * f[a] + 2.0 * f[a + 1] - 0.5 * f[a + 2]) / h;
                let db = (1.5 * f[b] - 2.0 * f[b - 1] + 0.5 * f[b - 2]) / h;
                (da, db)
            } else {
                (0.0, 0.0)
            };
            total -= h * h / 12.0 * (db - da);
        }
        total
    }

    /// The same quadrature as `integrate`, folded into one weight per
    /// node: `integrate(f)` equals the dot product of these weights with
    /// `f` up to rounding.  Worth precomputing when many integrands share
    /// one grid (matrix-element assembly is a weighted dot product).
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.nodes.len()];
        for (j, seg) in self.segments.iter().enumerate() {
            let a = seg.start;
            let b = self.segment_end(j);
            if b <= a {
                continue;
            }
            let h = seg.step;
            w[a] += 0.5 * h;
            w[b] += 0.5 * h;
            for wi in &mut w[a + 1..b] {
                *wi += h;
            }
            let n = b - a + 1;
            // -h^2/12 (f'(b) - f'(a)) with the one-sided stencils of
            // `integrate` becomes +-h/12 times the stencil coefficients.
            let c5 = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
            let c3 = [-1.5, 2.0, -0.5];
            let c: &[f64] = if n >= 5 {
                &c5
            } else if n >= 3 {
                &c3
            } else {
                &[]
            };
            for (i, ci) in c.iter().enumerate() {
                w[a + i] += h / 12.0 * ci;
                w[b - i] += h / 12.0 * ci;
            }
        }
        w
    }

    /// First derivative of sampled values, eighth order inside segments,
    /// one-sided stencils of the same width at segment edges.
    pub fn gradient(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.nodes.len());
        let mut out = vec![0.0; f.len()];
        for (j, seg) in self.segments.iter().enumerate() {
            let a = seg.start;
            let b = self.segment_end(j);
            if b <= a {
                continue;
            }
            let h = seg.step;
            let lo = if j == 0 { a } else { a + 1 }; // boundary node owned by the earlier segment
            for i in lo..=b {
                if i >= a + 4 && i + 4 <= b {
                    out[i] = (0.8 * (f[i + 1] - f[i - 1]) - 0.2 * (f[i + 2] - f[i - 2])
                        + 4.0 / 105.0 * (f[i + 3] - f[i - 3])
                        - (f[i + 4] - f[i - 4]) / 280.0)
                        / h;
                } else {
                    // Clamped 9-point window inside the segment.
                    let w0 = i.saturating_sub(4).max(a);
                    let w1 = (w0 + 8).min(b);
                    let w0 = w1.saturating_sub(8).max(a);
                    let xs = &self.nodes[w0..=w1];
                    let ws = fd_weights(self.nodes[i], xs, 1);
                    out[i] = ws.iter().zip(&f[w0..=w1]).map(|(w, v)| w * v).sum();
                }
            }
        }
        out
    }
}

/// Finite-difference weights by Fornberg's recursion: for samples at `xs`,
/// returns the weights whose dot product with the sample values gives the
/// `m`-th derivative at `z` (order 0 = interpolation).
pub fn fd_weights(z: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > m);
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Interpolate `(src_x, src_f)` onto ascending `dst_x` with local 6-point
/// Lagrange stencils.  Points outside the source range map to zero, which
/// is the right continuation for wavefunctions that have died off.
pub fn resample(src_x: &[f64], src_f: &[f64], dst_x: &[f64]) -> Vec<f64> {
    assert_eq!(src_x.len(), src_f.len());
    let n = src_x.len();
    let mut out = Vec::with_capacity(dst_x.len());
    let mut lo = 0usize;
    for &x in dst_x {
        if x < src_x[0] || x > src_x[n - 1] {
            out.push(0.0);
            continue;
        }
        while lo + 1 < n && src_x[lo + 1] <= x {
            lo += 1;
        }
        // Exact hits are common when grids share nodes; skip the stencil.
        if src_x[lo] == x {
            out.push(src_f[lo]);
            continue;
        }
        let w0 = lo.saturating_sub(2).min(n.saturating_sub(6));
        let w1 = (w0 + 5).min(n - 1);
        let ws = fd_weights(x, &src_x[w0..=w1], 0);
        out.push(ws.iter().zip(&src_f[w0..=w1]).map(|(w, v)| w * v).sum());
    }
    out
}

/// Precomputed stencils for repeating `resample` from one fixed source
/// grid onto one fixed destination grid.  Building the plan does the node
/// search and weight solve once; `apply` is then a short dot product per
/// destination node, which pays off when hundreds of functions share the
/// same pair of grids.
pub struct ResamplePlan {
    /// (window start in source, stencil weights); `None` marks a
    /// destination node outside the source range, which maps to zero.
    stencils: Vec<Option<(usize, [f64; 6])>>,
    src_len: usize,
}

impl ResamplePlan {
    pub fn new(src_x: &[f64], dst_x: &[f64]) -> Self {
        let n = src_x.len();
        let mut stencils = Vec::with_capacity(dst_x.len());
        let mut lo = 0usize;
        for &x in dst_x {
            if x < src_x[0] || x > src_x[n - 1] {
                stencils.push(None);
                continue;
            }
            while lo + 1 < n && src_x[lo + 1] <= x {
                lo += 1;
            }
            let w0 = lo.saturating_sub(2).min(n.saturating_sub(6));
            let w1 = (w0 + 5).min(n - 1);
            let ws = fd_weights(x, &src_x[w0..=w1], 0);
            let mut arr = [0.0; 6];
            arr[..ws.len()].copy_from_slice(&ws);
            stencils.push(Some((w0, arr)));
        }
        ResamplePlan {
            stencils,
            src_len: n,
        }
    }

    pub fn apply(&self, src_f: &[f64]) -> Vec<f64> {
        assert_eq!(src_f.len(), self.src_len);
        self.stencils
            .iter()
            .map(|s| match s {
                None => 0.0,
                Some((w0, ws)) => {
                    let hi = (w0 + 6).min(self.src_len);
                    ws.iter()
                        .zip(&src_f[*w0..hi])
                        .map(|(w, v)| w * v)
                        .sum()
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TWO_PI;
    use crate::Config;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn fornberg_reproduces_known_stencils() {
        // Five-point first derivative on a uniform grid.
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let ws = fd_weights(0.0, &xs, 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (w, e) in ws.iter().zip(expect) {
            assert_abs_diff_eq!(*w, e, epsilon = 1e-14);
        }
        // Interpolation weights sum to one.
        let ws = fd_weights(0.37, &xs, 0);
        assert_abs_diff_eq!(ws.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
    }

    fn reference_grid() -> (crate::potential::SurfacePotential, Grid) {
        let p = Config::silica_cesium().potential();
        let xw = p.inner_wall().unwrap();
        let g = Grid::build(&p, xw, 500e-9, 0.0, TWO_PI * 1e6, 20.0).unwrap();
        (p, g)
    }

    #[test]
    fn grid_respects_step_rule_and_stays_small() {
        let (p, g) = reference_grid();
        let w = p.wavenumber_scale();
        assert!(g.len() > 500 && g.len() < 200_000, "nodes = {}", g.len());
        for (j, seg) in g.segments.iter().enumerate() {
            let b = g.segment_end(j);
            for i in seg.start..b {
                let x = g.nodes[i + 1];
                let u = p.value(x);
                let s = u.abs().max(TWO_PI * 1e6);
                let h_wave = std::f64::consts::TAU / (20.0 * (w * s).sqrt());
                // Within a factor two of the bound: halving happens after
                // the violated step is detected.
                assert!(seg.step <= 2.0 * h_wave * 1.0001, "step {} vs {} at {:e}", seg.step, h_wave, x);
            }
        }
        // Neighboring segments differ by exactly a factor of two.
        for pair in g.segments.windows(2) {
            let r = pair[1].step / pair[0].step;
            assert!((r - 2.0).abs() < 1e-12 || (r - 0.5).abs() < 1e-12, "ratio {r}");
        }
        // Nodes strictly increase and match the segment structure.
        for (j, seg) in g.segments.iter().enumerate() {
            let b = g.segment_end(j);
            for i in seg.start..b {
                assert_relative_eq!(g.nodes[i + 1] - g.nodes[i], seg.step, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn integration_handles_oscillatory_integrands() {
        // sin(k x) with k chosen near the finest resolved scale of a toy
        // uniform-enough region: use the reference grid against an
        // analytically integrable function that dies at both ends like the
        // real integrands do.
        let (_, g) = reference_grid();
        let a = g.nodes[0];
        let b = *g.nodes.last().unwrap();
        let width = b - a;
        // Smooth bump: f = sin^2(pi t) with t in [0,1]; integral = width/2.
        let f: Vec<f64> = g
            .nodes
            .iter()
            .map(|&x| {
                let t = (x - a) / width;
                (std::f64::consts::PI * t).sin().powi(2)
            })
            .collect();
        assert_relative_eq!(g.integrate(&f), width / 2.0, max_relative = 1e-8);
    }

    #[test]
    fn gradient_is_accurate_inside_segments() {
        let (_, g) = reference_grid();
        // Pick a gently varying function on the outer part of the grid.
        let f: Vec<f64> = g.nodes.iter().map(|&x| (x * 1e7).sin()).collect();
        let df = g.gradient(&f);
        let i = g.index_at(300e-9);
        assert_relative_eq!(df[i], 1e7 * (g.nodes[i] * 1e7).cos(), max_relative = 1e-9);
    }

    #[test]
    fn resample_recovers_smooth_functions() {
        let src: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let f: Vec<f64> = src.iter().map(|&x| (3.0 * x).sin()).collect();
        let dst: Vec<f64> = (0..500).map(|i| 0.004 + i as f64 * 0.00395).collect();
        let g = resample(&src, &f, &dst);
        for (&x, &v) in dst.iter().zip(&g) {
            assert_abs_diff_eq!(v, (3.0 * x).sin(), epsilon = 1e-9);
        }
        // Outside the source range the continuation is zero.
        let outside = resample(&src, &f, &[-1.0, 5.0]);
        assert_eq!(outside, vec![0.0, 0.0]);
    }

    #[test]
    fn quadrature_weights_reproduce_integrate() {
        let (_, g) = reference_grid();
        let w = g.quadrature_weights();
        for scale in [2e7, 9e8] {
            let f: Vec<f64> = g.nodes.iter().map(|&x| (x * scale).sin() + 0.3).collect();
            let direct = g.integrate(&f);
            let dotted: f64 = w.iter().zip(&f).map(|(w, v)| w * v).sum();
            assert_relative_eq!(dotted, direct, max_relative = 1e-12);
        }
        // Total weight is the grid span.
        let span: f64 = w.iter().sum();
        let expect = g.nodes[g.nodes.len() - 1] - g.nodes[0];
        assert_relative_eq!(span, expect, max_relative = 1e-12);
    }

    #[test]
    fn resample_plan_matches_one_shot_resample() {
        let src: Vec<f64> = (0..300).map(|i| (i as f64 * 0.007).powi(2) * 0.1).collect();
        let dst: Vec<f64> = (0..700).map(|i| -0.1 + i as f64 * 0.0008).collect();
        let plan = ResamplePlan::new(&src, &dst);
        for k in [1.0, 4.5] {
            let f: Vec<f64> = src.iter().map(|&x| (k * x).cos()).collect();
            let a = resample(&src, &f, &dst);
            let b = plan.apply(&f);
            for (u, v) in a.iter().zip(&b) {
                assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
            }
        }
    }
}
