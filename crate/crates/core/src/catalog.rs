//! Persistent catalog of the bound spectrum and its force matrix.
//!
//! Solving every bound level of the full well costs the better part of a
//! minute, and everything downstream reuses the same states and elements.
//! The catalog packs them into one hash-named binary file next to a small
//! JSON summary of the level table.  Files carry the configuration hash
//! they were built from and refuse to load under any other configuration,
//! so a cache can never be silently stale.

use crate::coupling;
use crate::grid::{Grid, Segment};
use crate::spectrum::{solve_bound_spectrum, BoundSpectrum, BoundState, SpectrumOptions};
use crate::units::internal_to_hz;
use crate::{Config, Error, Result};
use nalgebra::DMatrix;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"ATSURF1\n";

/// The solved bound levels of the configured well, together with the
/// dense matrix of force elements between them.
pub struct SpectrumCatalog {
    pub spectrum: BoundSpectrum,
    /// `force[(l, k)] = -<l| dU/dx |k>`, rad/s per meter.
    pub force: DMatrix<f64>,
    /// Hash of the configuration this catalog was built from.
    pub provenance: String,
}

impl SpectrumCatalog {
    /// Solve the spectrum and assemble the force matrix from scratch.
    pub fn build(cfg: &Config) -> Result<Self> {
        let pot = cfg.potential();
        let x_w = pot.inner_wall()?;
        let opts = SpectrumOptions::from_config(cfg, x_w);
        let spectrum = solve_bound_spectrum(&pot, &opts)?;
        let force = coupling::bound_matrix(&pot, &spectrum);
        Ok(SpectrumCatalog {
            spectrum,
            force,
            provenance: cfg.provenance_hash(),
        })
    }

    /// Where the cache for this configuration lives: an explicit
    /// `catalog_path` wins, then the `PHONON_DECAY_CACHE` directory, then
    /// `cache/` under the output directory.
    pub fn cache_file(cfg: &Config) -> PathBuf {
        if let Some(p) = &cfg.catalog_path {
            return p.clone();
        }
        let dir = std::env::var_os("PHONON_DECAY_CACHE")
            .map(PathBuf::from)
            .unwrap_or_else(|| cfg.out_dir.join("cache"));
        dir.join(format!("catalog-{}.bin", cfg.short_hash()))
    }

    /// Reuse a cached catalog when one matches the configuration hash;
    /// otherwise build and cache.  The flag reports a cache hit.
    pub fn load_or_build(cfg: &Config) -> Result<(Self, bool)> {
        let path = Self::cache_file(cfg);
        let expect = cfg.provenance_hash();
        if path.is_file() {
            if let Ok(cat) = Self::load(&path, Some(&expect)) {
                return Ok((cat, true));
            }
            // A file that fails to load is stale or damaged either way;
            // fall through and rebuild over it.
        }
        let cat = Self::build(cfg)?;
        cat.save(&path)?;
        Ok((cat, false))
    }

    pub fn len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrum.is_empty()
    }

    /// Level splitting `e_l - e_k`, rad/s.
    pub fn omega(&self, l: usize, k: usize) -> f64 {
        self.spectrum.states[l].energy - self.spectrum.states[k].energy
    }

    /// Serialize to `path` and a JSON level table next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut w = BufWriter::with_capacity(1 << 20, fs::File::create(path)?);
        w.write_all(MAGIC)?;
        put_bytes(&mut w, self.provenance.as_bytes())?;
        let sp = &self.spectrum;
        put_f64(&mut w, sp.x_w)?;
        put_f64(&mut w, sp.grid.points_per_wavelength)?;
        put_u64(&mut w, sp.grid.nodes.len() as u64)?;
        for &x in &sp.grid.nodes {
            put_f64(&mut w, x)?;
        }
        put_u64(&mut w, sp.grid.segments.len() as u64)?;
        for s in &sp.grid.segments {
            put_u64(&mut w, s.start as u64)?;
            put_f64(&mut w, s.step)?;
        }
        put_u64(&mut w, sp.states.len() as u64)?;
        for st in &sp.states {
            put_u64(&mut w, st.nu as u64)?;
            put_f64(&mut w, st.energy)?;
            put_f64(&mut w, st.x_cross)?;
            for &v in &st.values {
                put_f64(&mut w, v)?;
            }
        }
        put_u64(&mut w, self.force.nrows() as u64)?;
        for v in self.force.iter() {
            put_f64(&mut w, *v)?;
        }
        w.flush()?;
        fs::write(path.with_extension("json"), self.level_table().to_string())?;
        Ok(())
    }

    /// Read a catalog back, optionally insisting on a provenance hash.
    pub fn load(path: &Path, expect_hash: Option<&str>) -> Result<Self> {
        let mut r = BufReader::with_capacity(1 << 20, fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::numerics("catalog: unrecognized file header"));
        }
        let provenance = String::from_utf8(get_bytes(&mut r, 256)?)
            .map_err(|_| Error::numerics("catalog: malformed provenance"))?;
        if let Some(h) = expect_hash {
            if provenance != h {
                return Err(Error::numerics(
                    "catalog: file was built from a different configuration",
                ));
            }
        }
        let x_w = get_f64(&mut r)?;
        let ppw = get_f64(&mut r)?;
        let n = get_u64(&mut r)? as usize;
        if n == 0 || n > 100_000_000 {
            return Err(Error::numerics("catalog: implausible node count"));
        }
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(get_f64(&mut r)?);
        }
        let ns = get_u64(&mut r)? as usize;
        if ns == 0 || ns > n {
            return Err(Error::numerics("catalog: implausible segment count"));
        }
        let mut segments = Vec::with_capacity(ns);
        for _ in 0..ns {
            let start = get_u64(&mut r)? as usize;
            let step = get_f64(&mut r)?;
            if start >= n {
                return Err(Error::numerics("catalog: segment out of range"));
            }
            segments.push(Segment { start, step });
        }
        let count = get_u64(&mut r)? as usize;
        if count > n {
            return Err(Error::numerics("catalog: implausible state count"));
        }
        let mut states = Vec::with_capacity(count);
        for _ in 0..count {
            let nu = get_u64(&mut r)? as usize;
            let energy = get_f64(&mut r)?;
            let x_cross = get_f64(&mut r)?;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(get_f64(&mut r)?);
            }
            states.push(BoundState {
                nu,
                energy,
                values,
                x_cross,
            });
        }
        let dim = get_u64(&mut r)? as usize;
        if dim != count {
            return Err(Error::numerics("catalog: force matrix dimension mismatch"));
        }
        let mut force = DMatrix::zeros(dim, dim);
        for v in force.iter_mut() {
            *v = get_f64(&mut r)?;
        }
        Ok(SpectrumCatalog {
            spectrum: BoundSpectrum {
                grid: Grid {
                    nodes,
                    segments,
                    points_per_wavelength: ppw,
                },
                states,
                x_w,
            },
            force,
            provenance,
        })
    }

    /// JSON level table: index, energy and classical range per level.
    pub fn level_table(&self) -> serde_json::Value {
        let levels: Vec<serde_json::Value> = self
            .spectrum
            .states
            .iter()
            .map(|s| {
                serde_json::json!({
                    "nu": s.nu,
                    "energy_hz": internal_to_hz(s.energy),
                    "x_cross_nm": s.x_cross * 1e9,
                })
            })
            .collect();
        serde_json::json!({
            "provenance": self.provenance,
            "count": levels.len(),
            "levels": levels,
        })
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    put_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read, cap: usize) -> Result<Vec<u8>> {
    let len = get_u64(r)? as usize;
    if len > cap {
        return Err(Error::numerics("catalog: oversized string field"));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Weakened copy of the real well: same shape, a handful of levels,
    /// fast enough to solve inside a unit test.
    fn toy_config() -> Config {
        let mut cfg = Config::silica_cesium();
        cfg.a_repulsion *= 1e-3;
        cfg.c3 *= 1e-3;
        cfg.x_outer = 100e-9;
        cfg
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let cfg = toy_config();
        let cat = SpectrumCatalog::build(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cat.bin");
        cat.save(&path).unwrap();
        let back = SpectrumCatalog::load(&path, Some(&cfg.provenance_hash())).unwrap();

        assert_eq!(back.provenance, cat.provenance);
        assert_eq!(back.spectrum.grid.nodes, cat.spectrum.grid.nodes);
        assert_eq!(back.len(), cat.len());
        for (a, b) in back.spectrum.states.iter().zip(&cat.spectrum.states) {
            assert_eq!(a.nu, b.nu);
            assert!(a.energy.to_bits() == b.energy.to_bits());
            assert_eq!(a.values, b.values);
        }
        assert_eq!(back.force, cat.force);

        // The sidecar is valid JSON with one row per level.
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(side["count"].as_u64().unwrap() as usize, cat.len());
        assert!(side["levels"][0]["energy_hz"].as_f64().unwrap() < 0.0);
    }

    #[test]
    fn stale_configurations_are_rejected() {
        let cfg = toy_config();
        let cat = SpectrumCatalog::build(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cat.bin");
        cat.save(&path).unwrap();

        let mut other = cfg.clone();
        other.bath_temperature *= 2.0;
        assert!(SpectrumCatalog::load(&path, Some(&other.provenance_hash())).is_err());
        // Truncated files fail cleanly too.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(SpectrumCatalog::load(&path, None).is_err());
    }

    #[test]
    fn cache_is_reused_only_under_the_same_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config();
        cfg.catalog_path = Some(dir.path().join("toy.bin"));
        let (_, hit) = SpectrumCatalog::load_or_build(&cfg).unwrap();
        assert!(!hit, "first pass must build");
        let (again, hit) = SpectrumCatalog::load_or_build(&cfg).unwrap();
        assert!(hit, "second pass must reuse the file");
        assert_eq!(again.provenance, cfg.provenance_hash());

        // Same explicit path, different physics: the stale file is
        // rebuilt in place rather than reused.
        let mut warm = cfg.clone();
        warm.bath_temperature *= 3.0;
        let (rebuilt, hit) = SpectrumCatalog::load_or_build(&warm).unwrap();
        assert!(!hit);
        assert_eq!(rebuilt.provenance, warm.provenance_hash());
        let (_, hit) = SpectrumCatalog::load_or_build(&warm).unwrap();
        assert!(hit);
    }
}
