//! Multi-resolution hash encoding of normalised 3D coordinates.

use rand::Rng;

use super::FieldError;
use crate::autodiff::{AutodiffError, ParamId, ParamStore, Real, Tape, Var};
use crate::kv::KvMap;

/// Default multipliers. The first is a large prime instead of 1 so every axis
/// is mixed.
pub const DEFAULT_PRIMES: [u32; 3] = [73_856_093, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEncoderConfig {
    pub levels: usize,
    pub features: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub table_size: u32,
    pub primes: [u32; 3],
}

impl Default for HashEncoderConfig {
    fn default() -> Self {
        Self { levels: 11, features: 8, base_resolution: 4, max_resolution: 128, table_size: 1 << 14, primes: DEFAULT_PRIMES }
    }
}

impl HashEncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    /// `T_l = floor(T₁ · b^l)` with `b = (T_L / T₁)^(1 / (L − 1))`.
    pub fn resolutions(&self) -> Vec<u32> {
        if self.levels == 1 {
            return vec![self.base_resolution];
        }
        let b = (self.max_resolution as f64 / self.base_resolution as f64).powf(1.0 / (self.levels - 1) as f64);
        (0..self.levels)
            // the nudge keeps exact powers such as 4·b² = 8 from flooring to 7
            .map(|l| (self.base_resolution as f64 * b.powi(l as i32) + 1e-9).floor() as u32)
            .collect()
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.levels == 0 || self.features == 0 || self.table_size == 0 || self.base_resolution == 0 {
            return Err(FieldError::Config("hash levels, features, table size and base resolution must be positive".into()));
        }
        if self.max_resolution < self.base_resolution {
            return Err(FieldError::Config("hash max resolution is below the base resolution".into()));
        }
        let r = self.resolutions();
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldError::Config(format!("hash resolutions {r:?} are not strictly increasing")));
        }
        Ok(())
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("hash.levels", self.levels);
        map.set("hash.features", self.features);
        map.set("hash.base_resolution", self.base_resolution);
        map.set("hash.max_resolution", self.max_resolution);
        map.set("hash.table_size", self.table_size);
        map.set("hash.primes", self.primes.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","));
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, FieldError> {
        let d = Self::default();
        let primes = match map.parse_list::<u32>("hash.primes", "unsigned integers")? {
            Some(p) if p.len() == 3 => [p[0], p[1], p[2]],
            Some(p) => return Err(FieldError::Config(format!("hash.primes needs 3 values, got {}", p.len()))),
            None => d.primes,
        };
        let c = Self {
            levels: map.parse_or("hash.levels", d.levels, "integer")?,
            features: map.parse_or("hash.features", d.features, "integer")?,
            base_resolution: map.parse_or("hash.base_resolution", d.base_resolution, "integer")?,
            max_resolution: map.parse_or("hash.max_resolution", d.max_resolution, "integer")?,
            table_size: map.parse_or("hash.table_size", d.table_size, "integer")?,
            primes,
        };
        c.validate()?;
        Ok(c)
    }
}

/// `((x·p₁) ⊕ (y·p₂) ⊕ (z·p₃)) mod table_size` in wrapping 32-bit arithmetic.
pub fn hash_index(v: [u32; 3], primes: [u32; 3], table_size: u32) -> u32 {
    (v[0].wrapping_mul(primes[0]) ^ v[1].wrapping_mul(primes[1]) ^ v[2].wrapping_mul(primes[2])) % table_size
}

/// Learnable tables `field.hash.level{l}`, each `[table_size, F]`.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    pub config: HashEncoderConfig,
    resolutions: Vec<u32>,
    tables: Vec<ParamId>,
}

pub const HASH_PREFIX: &str = "field.hash.";

impl HashEncoder {
    pub fn new<T: Real, R: Rng>(config: HashEncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self, FieldError> {
        config.validate()?;
        let resolutions = config.resolutions();
        let tables = (0..config.levels)
            .map(|l| store.add_uniform(&format!("{HASH_PREFIX}level{l}"), &[config.table_size as usize, config.features], 1e-4, rng))
            .collect::<Result<_, AutodiffError>>()?;
        Ok(Self { config, resolutions, tables })
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn table(&self, level: usize) -> ParamId {
        self.tables[level]
    }

    /// Whether level `l` indexes its `(T_l + 1)³` vertices directly.
    pub fn is_dense(&self, level: usize) -> bool {
        let n = self.resolutions[level] as u64 + 1;
        n * n * n <= self.config.table_size as u64
    }

    /// Table row of grid vertex `v` at `level`.
    pub fn vertex_row(&self, level: usize, v: [u32; 3]) -> u32 {
        if self.is_dense(level) {
            let n = self.resolutions[level] + 1;
            v[0] + n * (v[1] + n * v[2])
        } else {
            hash_index(v, self.config.primes, self.config.table_size)
        }
    }

    /// The 8 enclosing vertices of `x` at `level` and their trilinear weights.
    /// Corner `j` offsets by `(j & 1, (j >> 1) & 1, (j >> 2) & 1)`.
    pub fn corners(&self, level: usize, x: [f64; 3]) -> Result<([u32; 8], [f64; 8]), FieldError> {
        let t = self.resolutions[level];
        let mut base = [0u32; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            if !(x[a] >= -1e-9 && x[a] <= 1.0 + 1e-9) {
                return Err(FieldError::Domain(format!("coordinate {x:?} lies outside [0, 1]^3")));
            }
            let u = x[a].clamp(0.0, 1.0) * t as f64;
            let i = (u.floor() as u32).min(t - 1);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut rows = [0u32; 8];
        let mut w = [0.0f64; 8];
        for j in 0..8 {
            let d = [j & 1, (j >> 1) & 1, (j >> 2) & 1];
            let mut wj = 1.0;
            let mut v = [0u32; 3];
            for a in 0..3 {
                v[a] = base[a] + d[a] as u32;
                wj *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            rows[j] = self.vertex_row(level, v);
            w[j] = wj;
        }
        Ok((rows, w))
    }

    /// `γ(x)` for every point, as `[P, L·F]` on `tape`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, points: &[[f64; 3]]) -> Result<Var, FieldError> {
        let mut per_level = Vec::with_capacity(self.config.levels);
        for l in 0..self.config.levels {
            let mut idx = Vec::with_capacity(points.len() * 8);
            let mut wts = Vec::with_capacity(points.len() * 8);
            for &p in points {
                let (rows, w) = self.corners(l, p)?;
                idx.extend_from_slice(&rows);
                wts.extend(w.iter().map(|&x| T::of(x)));
            }
            let table = tape.param(store, self.tables[l])?;
            let g = tape.gather_rows(table, idx)?;
            per_level.push(tape.trilinear_blend(g, wts)?);
        }
        Ok(tape.concat(&per_level, 1)?)
    }
}
