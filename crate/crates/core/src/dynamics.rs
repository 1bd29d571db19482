//! Density-matrix evolution under the one-phonon generator.
//!
//! A truncated set of levels carries a complex Hermitian density matrix.
//! Its populations exchange through the golden-rule rates and leak to
//! everything outside the set (other bound levels, the free band), which
//! is treated as absorbing.  Coherences rotate at their level gap,
//! optionally dressed by bath shifts, and damp at the half-sum of the
//! two depletion rates.  Pairs of coherences whose gaps agree within a
//! configurable window also exchange amplitude; those channels carry the
//! product of two gradient elements with its sign, not a square, so they
//! can pump a coherence as well as drain it.
//!
//! Two integrators are provided: a classical RK4 stepper for the full
//! matrix, re-symmetrized every step, and a matrix-exponential
//! propagator for the diagonal sector alone, which handles stiff rate
//! ladders in one jump and tracks the leaked fraction exactly.

use crate::rates::{
    absorption_rate, depletion_rates, emission_rate, transition_rate, DebyeSolid,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

/// Ordered selection of catalog levels retained in the simulation.
#[derive(Clone, Debug)]
pub struct LevelSubset {
    /// Positions of the retained levels in the full catalog.
    pub indices: Vec<usize>,
    /// Their energies, rad/s, strictly ascending.
    pub energies: Vec<f64>,
}

impl LevelSubset {
    /// Select `indices` out of a catalog energy list.
    pub fn new(indices: Vec<usize>, catalog: &[f64]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::numerics("level subset: empty selection"));
        }
        for pair in indices.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::numerics("level subset: indices must ascend"));
            }
        }
        if *indices.last().unwrap() >= catalog.len() {
            return Err(Error::numerics("level subset: index past the catalog"));
        }
        let energies: Vec<f64> = indices.iter().map(|&i| catalog[i]).collect();
        for pair in energies.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::numerics("level subset: energies must ascend"));
            }
        }
        Ok(LevelSubset { indices, energies })
    }

    /// Every level of the catalog, in order.
    pub fn full(catalog: &[f64]) -> Result<Self> {
        LevelSubset::new((0..catalog.len()).collect(), catalog)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Knobs for [`build_generator`].
#[derive(Clone, Debug)]
pub struct GeneratorOptions {
    /// Keep the coherence-to-coherence exchange channels.
    pub include_offdiagonal_gain: bool,
    /// Largest gap mismatch, rad/s, at which two coherences still
    /// exchange amplitude.  Zero keeps only exact degeneracies.
    pub secular_window: f64,
    /// Frequency dressing added to each gap, antisymmetric
    /// `shift[(j, k)] = -shift[(k, j)]`, indexed like the subset.
    pub shift_matrix: Option<DMatrix<f64>>,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            include_offdiagonal_gain: true,
            secular_window: 0.0,
            shift_matrix: None,
        }
    }
}

/// One secular exchange channel: `rate * rho[source]` feeds
/// `d rho[target] / dt`.
#[derive(Clone, Copy, Debug)]
pub struct CoherenceChannel {
    pub target: (usize, usize),
    pub source: (usize, usize),
    pub rate: f64,
}

/// Linear generator of the reduced dynamics over a level subset.
#[derive(Clone, Debug)]
pub struct Generator {
    /// Subset energies, rad/s.
    pub energies: Vec<f64>,
    /// Population gains: `rates[(j, nu)]` feeds level `j` from `nu`.
    pub rates: DMatrix<f64>,
    /// Total loss rate of each level, in-subset plus leakage.
    pub depletion: Vec<f64>,
    /// Loss to destinations outside the subset.
    pub leakage: Vec<f64>,
    /// Optional antisymmetric gap dressing, rad/s.
    pub shifts: Option<DMatrix<f64>>,
    /// Secular coherence exchange channels.
    pub channels: Vec<CoherenceChannel>,
}

impl Generator {
    /// Time derivative of a density matrix under this generator.
    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.energies.len();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                let mut w = self.energies[j] - self.energies[k];
                if let Some(s) = &self.shifts {
                    w += s[(j, k)];
                }
                let damp = 0.5 * (self.depletion[j] + self.depletion[k]);
                // -i (w + shift) - (G_j + G_k) / 2, acting elementwise.
                d[(j, k)] = Complex64::new(-damp, -w) * rho[(j, k)];
            }
        }
        for j in 0..n {
            let mut gain = Complex64::new(0.0, 0.0);
            for nu in 0..n {
                gain += self.rates[(j, nu)] * rho[(nu, nu)];
            }
            d[(j, j)] += gain;
        }
        for ch in &self.channels {
            d[ch.target] += ch.rate * rho[ch.source];
        }
        d
    }

    /// Generator of the diagonal sector: gains minus total loss.  Column
    /// `nu` sums to minus the leakage rate of level `nu`.
    pub fn population_block(&self) -> DMatrix<f64> {
        let n = self.energies.len();
        DMatrix::from_fn(n, n, |j, nu| {
            self.rates[(j, nu)] - if j == nu { self.depletion[nu] } else { 0.0 }
        })
    }

    /// Largest element speed `|w| + (G_j + G_k) / 2`; an RK4 step must
    /// stay below a tenth of its inverse.
    pub fn speed(&self) -> f64 {
        let n = self.energies.len();
        let mut s = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                let mut w = self.energies[j] - self.energies[k];
                if let Some(sh) = &self.shifts {
                    w += sh[(j, k)];
                }
                s = s.max(w.abs() + 0.5 * (self.depletion[j] + self.depletion[k]));
            }
        }
        s
    }
}

/// Assemble the generator for a subset out of catalog-wide data.
///
/// `catalog` and `force` describe every bound level; `desorb` carries
/// the per-level loss to the free band (empty to ignore it).  Levels
/// outside the subset only absorb: their rates enter the depletion of
/// the retained levels but nothing flows back.
pub fn build_generator(
    subset: &LevelSubset,
    solid: &DebyeSolid,
    catalog: &[f64],
    force: &DMatrix<f64>,
    desorb: &[f64],
    opts: &GeneratorOptions,
) -> Result<Generator> {
    let n = subset.len();
    if force.nrows() != catalog.len() || force.ncols() != catalog.len() {
        return Err(Error::numerics("generator: force matrix shape mismatch"));
    }
    if !desorb.is_empty() && desorb.len() != catalog.len() {
        return Err(Error::numerics("generator: desorption list length mismatch"));
    }
    if *subset.indices.last().unwrap() >= catalog.len() {
        return Err(Error::numerics("generator: subset past the catalog"));
    }
    if let Some(s) = &opts.shift_matrix {
        if s.nrows() != n || s.ncols() != n {
            return Err(Error::numerics("generator: shift matrix shape mismatch"));
        }
    }

    let rates = DMatrix::from_fn(n, n, |j, nu| {
        if j == nu {
            0.0
        } else {
            let (cj, cn) = (subset.indices[j], subset.indices[nu]);
            transition_rate(solid, catalog[cn], catalog[cj], force[(cj, cn)])
        }
    });
    let catalog_depletion = depletion_rates(solid, catalog, force, desorb);
    let (depletion, leakage): (Vec<f64>, Vec<f64>) = subset
        .indices
        .par_iter()
        .enumerate()
        .map(|(nu, &cnu)| {
            let total = catalog_depletion[cnu].total();
            let inside: f64 = (0..n).map(|j| rates[(j, nu)]).sum();
            (total, total - inside)
        })
        .unzip();

    let mut channels = Vec::new();
    if opts.include_offdiagonal_gain {
        channels = secular_channels(subset, solid, force, opts.secular_window);
    }

    Ok(Generator {
        energies: subset.energies.clone(),
        rates,
        depletion,
        leakage,
        shifts: opts.shift_matrix.clone(),
        channels,
    })
}

/// Enumerate coherence pairs whose gaps agree within `window` and give
/// each surviving channel its signed exchange rate.
fn secular_channels(
    subset: &LevelSubset,
    solid: &DebyeSolid,
    force: &DMatrix<f64>,
    window: f64,
) -> Vec<CoherenceChannel> {
    let n = subset.len();
    let e = &subset.energies;
    // All ordered off-diagonal pairs, sorted by gap so that candidate
    // partners sit in a contiguous run.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n - n);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                pairs.push((e[a] - e[b], a, b));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let gaps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut channels = Vec::new();
    for &(w_t, a, b) in &pairs {
        let lo = gaps.partition_point(|&g| g < w_t - window);
        let hi = gaps.partition_point(|&g| g <= w_t + window);
        for &(_, c, d) in &pairs[lo..hi] {
            if (c, d) == (a, b) {
                continue;
            }
            // Half-sum of the gated one-phonon rate functions at the two
            // transition frequencies, times the signed gradient product.
            let down = emission_rate(solid, e[c] - e[a], 1.0)
                + emission_rate(solid, e[d] - e[b], 1.0);
            let up = absorption_rate(solid, e[a] - e[c], 1.0)
                + absorption_rate(solid, e[b] - e[d], 1.0);
            let f_prod = force[(subset.indices[a], subset.indices[c])]
                * force[(subset.indices[b], subset.indices[d])];
            let rate = 0.5 * (down + up) * f_prod;
            if rate != 0.0 {
                channels.push(CoherenceChannel {
                    target: (a, b),
                    source: (c, d),
                    rate,
                });
            }
        }
    }
    channels
}

/// Complex Hermitian state over a level subset, stamped with its time.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub matrix: DMatrix<Complex64>,
    pub time: f64,
}

impl DensityMatrix {
    /// Validate and wrap a matrix: Hermitian, real diagonal inside
    /// `[0, 1]`, trace at most one, all to rounding-level slack.
    pub fn new(matrix: DMatrix<Complex64>, time: f64) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::numerics("density matrix: not square"));
        }
        let scale = matrix
            .iter()
            .fold(1.0f64, |m, v| m.max(v.norm()));
        for j in 0..n {
            for k in 0..=j {
                if (matrix[(j, k)] - matrix[(k, j)].conj()).norm() > 1e-12 * scale {
                    return Err(Error::numerics("density matrix: not Hermitian"));
                }
            }
            let p = matrix[(j, j)].re;
            if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(Error::numerics("density matrix: population outside [0, 1]"));
            }
        }
        let trace: f64 = (0..n).map(|j| matrix[(j, j)].re).sum();
        if trace > 1.0 + 1e-9 {
            return Err(Error::numerics("density matrix: trace above one"));
        }
        Ok(DensityMatrix { matrix, time })
    }

    /// All weight on one level.
    pub fn pure(n: usize, level: usize) -> Result<Self> {
        if level >= n {
            return Err(Error::numerics("density matrix: level out of range"));
        }
        let mut m = DMatrix::zeros(n, n);
        m[(level, level)] = Complex64::new(1.0, 0.0);
        DensityMatrix::new(m, 0.0)
    }

    /// Diagonal state from a population list.
    pub fn from_populations(pops: &[f64]) -> Result<Self> {
        let n = pops.len();
        let mut m = DMatrix::zeros(n, n);
        for (j, &p) in pops.iter().enumerate() {
            m[(j, j)] = Complex64::new(p, 0.0);
        }
        DensityMatrix::new(m, 0.0)
    }

    pub fn trace(&self) -> f64 {
        (0..self.matrix.nrows()).map(|j| self.matrix[(j, j)].re).sum()
    }

    pub fn population(&self, j: usize) -> f64 {
        self.matrix[(j, j)].re
    }

    /// True when every off-diagonal element is exactly zero, in which
    /// case the evolution never leaves the diagonal sector.
    pub fn is_diagonal(&self) -> bool {
        let n = self.matrix.nrows();
        (0..n).all(|j| {
            (0..n).all(|k| j == k || self.matrix[(j, k)] == Complex64::new(0.0, 0.0))
        })
    }
}

/// Integrate the full matrix with classical RK4 steps of at most `dt`.
///
/// The step must resolve the fastest element: `dt <= 0.1 / speed` with
/// `speed` from [`Generator::speed`].  Each step is re-symmetrized, and
/// populations drifting below `-1e-8` abort the run.  The returned
/// trajectory holds every step, starting from `rho0` itself.
pub fn evolve(
    rho0: &DensityMatrix,
    generator: &Generator,
    t_final: f64,
    dt: f64,
) -> Result<Vec<DensityMatrix>> {
    let n = generator.energies.len();
    if rho0.matrix.nrows() != n {
        return Err(Error::numerics("evolve: state size mismatch"));
    }
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::numerics("evolve: nonpositive time request"));
    }
    let speed = generator.speed();
    if speed > 0.0 && dt * speed > 0.1 * (1.0 + 1e-12) {
        return Err(Error::numerics("evolve: step too coarse for the fastest element"));
    }
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(rho0.clone());
    let mut m = rho0.matrix.clone();
    let half = Complex64::new(0.5 * h, 0.0);
    let full = Complex64::new(h, 0.0);
    let sixth = Complex64::new(h / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    for i in 1..=steps {
        let k1 = generator.apply(&m);
        let k2 = generator.apply(&(&m + &k1 * half));
        let k3 = generator.apply(&(&m + &k2 * half));
        let k4 = generator.apply(&(&m + &k3 * full));
        m += (k1 + k2 * two + k3 * two + k4) * sixth;
        // Hermiticity is exact for the generator but not for floating
        // point; fold the matrix back onto its adjoint every step.
        let adj = m.adjoint();
        m = (m + adj) * Complex64::new(0.5, 0.0);
        for j in 0..n {
            let p = m[(j, j)].re;
            if !(-1e-8..=1.0 + 1e-8).contains(&p) {
                return Err(Error::numerics("evolve: population left the physical range"));
            }
            m[(j, j)] = Complex64::new(p.clamp(0.0, 1.0), 0.0);
        }
        traj.push(DensityMatrix {
            matrix: m.clone(),
            time: rho0.time + i as f64 * h,
        });
    }
    Ok(traj)
}

/// Propagate the diagonal sector alone through the matrix exponential of
/// the population block, augmented with an absorbing row that tallies
/// the leaked fraction.
///
/// Each returned row is `(time, values)` with `values` holding the
/// subset populations followed by the cumulative leak; their sum is
/// conserved to rounding, so stiff ladders cost one exponential no
/// matter how long the horizon.
pub fn rate_evolve(
    pops0: &[f64],
    generator: &Generator,
    t_final: f64,
    samples: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = generator.energies.len();
    if pops0.len() != n {
        return Err(Error::numerics("rate evolve: population size mismatch"));
    }
    if !(t_final > 0.0) || samples == 0 {
        return Err(Error::numerics("rate evolve: empty time request"));
    }
    let total: f64 = pops0.iter().sum();
    if pops0.iter().any(|&p| p < -1e-12) || total > 1.0 + 1e-9 {
        return Err(Error::numerics("rate evolve: populations outside [0, 1]"));
    }
    let block = generator.population_block();
    let mut b = DMatrix::zeros(n + 1, n + 1);
    b.view_mut((0, 0), (n, n)).copy_from(&block);
    for nu in 0..n {
        b[(n, nu)] = generator.leakage[nu];
    }
    let h = t_final / samples as f64;
    let prop = (b * h).exp();
    let mut v = DVector::zeros(n + 1);
    for (j, &p) in pops0.iter().enumerate() {
        v[j] = p;
    }
    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, v.iter().cloned().collect()));
    for i in 1..=samples {
        v = &prop * v;
        out.push((i as f64 * h, v.iter().cloned().collect()));
    }
    Ok(out)
}
