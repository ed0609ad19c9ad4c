//! Image-conditioned implicit field: hash encoding of coordinates, bilinear
//! sampling of both view feature maps at each point's detector projection,
//! and an MLP decoder emitting intensity plus class logits.

mod decoder;
pub mod hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use decoder::{Decoder, DecoderConfig, DecoderTopology, Mlp, DECODER_PREFIX};
pub use hash::{hash_index, HashEncoder, HashEncoderConfig, DEFAULT_PRIMES, HASH_PREFIX};

use crate::autodiff::{AutodiffError, BilinearTap, ParamStore, Real, Tape, Var};
use crate::encoder::{UNet, UNetConfig};
use crate::kv::{KvError, KvMap};
use crate::projector::{project_point, DetectorSpec, Projection, ViewPose};
use crate::volume::{normalized_coord, Dims, VolumeGeometry};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

/// Bilinear tap for detector coordinates `(u, v)` on an `nu × nv` map.
///
/// Points inside the detector footprint (`[−½, n − ½]` on both axes) are
/// clamped onto the hull of pixel centres; anything beyond gets `None`, i.e.
/// zero features.
pub fn detector_tap(u: f64, v: f64, nu: usize, nv: usize) -> Option<(u32, u32, f64, f64)> {
    if nu < 2 || nv < 2 {
        return None;
    }
    let inside = |x: f64, n: usize| x >= -0.5 && x <= n as f64 - 0.5;
    if !inside(u, nu) || !inside(v, nv) {
        return None;
    }
    let u = u.clamp(0.0, (nu - 1) as f64);
    let v = v.clamp(0.0, (nv - 1) as f64);
    let x0 = (u.floor() as usize).min(nu - 2);
    let y0 = (v.floor() as usize).min(nv - 2);
    Some((x0 as u32, y0 as u32, u - x0 as f64, v - y0 as f64))
}

fn view_taps<T: Real>(pose: &ViewPose, det: &DetectorSpec, volume: &VolumeGeometry, points: &[[f64; 3]]) -> Vec<Option<BilinearTap<T>>> {
    points
        .iter()
        .map(|&p| {
            let (u, v) = project_point(pose, det, volume.to_mm(p));
            detector_tap(u, v, det.nu, det.nv).map(|(x0, y0, fx, fy)| BilinearTap { x0, y0, fx: T::of(fx), fy: T::of(fy) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldConfig {
    pub encoder: UNetConfig,
    pub hash: HashEncoderConfig,
    pub decoder: DecoderConfig,
    /// Softmax channels, background included.
    pub classes: usize,
}

impl FieldConfig {
    pub fn new(classes: usize) -> Self {
        Self { encoder: UNetConfig::default(), hash: HashEncoderConfig::default(), decoder: DecoderConfig::default(), classes }
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.encoder.out_channels + self.hash.output_dim()
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        self.encoder.to_kv(map);
        self.hash.to_kv(map);
        self.decoder.to_kv(map);
        map.set("field.classes", self.classes);
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, FieldError> {
        let d = UNetConfig::default();
        let channels = map.parse_list::<usize>("encoder.channels", "integers")?.unwrap_or(d.channels);
        let encoder = UNetConfig {
            depth: map.parse_or("encoder.depth", channels.len(), "integer")?,
            channels,
            out_channels: map.parse_or("encoder.out_channels", d.out_channels, "integer")?,
        };
        encoder.validate()?;
        let classes = map.parse_value::<usize>("field.classes", "integer")?.ok_or_else(|| FieldError::Config("missing field.classes".into()))?;
        Ok(Self { encoder, hash: HashEncoderConfig::from_kv(map)?, decoder: DecoderConfig::from_kv(map)?, classes })
    }
}

/// Feature maps of one subject's two views, with the geometry they were
/// simulated under.
#[derive(Debug, Clone, Copy)]
pub struct ViewFeatures {
    pub pa: Var,
    pub lat: Var,
    pub pose_pa: ViewPose,
    pub pose_lat: ViewPose,
    pub det_pa: DetectorSpec,
    pub det_lat: DetectorSpec,
}

/// Tape handles for a batch of field evaluations.
#[derive(Debug, Clone, Copy)]
pub struct FieldVars {
    pub features: Var,
    pub intensity: Var,
    pub logits: Var,
}

/// Decoded field value at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub intensity: f64,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl FieldOutput {
    pub fn from_raw(intensity: f64, logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        let predicted_class = argmax(&probabilities);
        Self { intensity, logits, probabilities, predicted_class }
    }
}

/// Encoder, hash tables and decoder with their parameter handles.
#[derive(Debug, Clone)]
pub struct SpiderModel {
    pub config: FieldConfig,
    pub encoder: UNet,
    pub hash: HashEncoder,
    pub decoder: Decoder,
}

impl SpiderModel {
    /// Registers all parameters in `store`, initialised from `seed`.
    pub fn new<T: Real>(config: FieldConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self, FieldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = UNet::new(config.encoder.clone(), store, &mut rng)?;
        let hash = HashEncoder::new(config.hash.clone(), store, &mut rng)?;
        let decoder = Decoder::new(config.decoder, config.feature_dim(), config.classes, store, &mut rng)?;
        Ok(Self { config, encoder, hash, decoder })
    }

    /// Encodes both normalised DRRs with the shared encoder.
    pub fn encode_views<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, pa: &Projection, lat: &Projection) -> Result<ViewFeatures, FieldError> {
        let fpa = self.encoder.encode(tape, store, &pa.normalized(), pa.detector.nv, pa.detector.nu)?;
        let flat = self.encoder.encode(tape, store, &lat.normalized(), lat.detector.nv, lat.detector.nu)?;
        Ok(ViewFeatures { pa: fpa, lat: flat, pose_pa: pa.pose, pose_lat: lat.pose, det_pa: pa.detector, det_lat: lat.detector })
    }

    /// Places previously computed feature maps on a fresh tape as constants.
    pub fn constant_views<T: Real>(&self, tape: &mut Tape<T>, src: &Tape<T>, views: &ViewFeatures) -> Result<ViewFeatures, FieldError> {
        let pa = tape.constant(src.value(views.pa)?.clone())?;
        let lat = tape.constant(src.value(views.lat)?.clone())?;
        Ok(ViewFeatures { pa, lat, ..*views })
    }

    /// `concat(F_pa(Π_pa x), F_lat(Π_lat x), γ(x))` for normalised points.
    pub fn sample_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        views: &ViewFeatures,
        volume: &VolumeGeometry,
        points: &[[f64; 3]],
    ) -> Result<Var, FieldError> {
        let c = self.config.encoder.out_channels;
        for (map, det) in [(views.pa, &views.det_pa), (views.lat, &views.det_lat)] {
            let s = tape.shape(map)?;
            if s != [c, det.nv, det.nu] {
                return Err(FieldError::Shape(format!("feature map {s:?} does not match [{c}, {}, {}]", det.nv, det.nu)));
            }
        }
        let fpa = tape.bilinear_sample(views.pa, view_taps(&views.pose_pa, &views.det_pa, volume, points))?;
        let flat = tape.bilinear_sample(views.lat, view_taps(&views.pose_lat, &views.det_lat, volume, points))?;
        let h = self.hash.encode(tape, store, points)?;
        Ok(tape.concat(&[fpa, flat, h], 1)?)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        views: &ViewFeatures,
        volume: &VolumeGeometry,
        points: &[[f64; 3]],
    ) -> Result<FieldVars, FieldError> {
        let features = self.sample_features(tape, store, views, volume, points)?;
        let (intensity, logits) = self.decoder.forward(tape, store, features)?;
        Ok(FieldVars { features, intensity, logits })
    }

    /// Evaluates the field at every voxel centre of `out_dims` (normalised
    /// coordinates), in chunks of `chunk` points on fresh tapes. Returns raw
    /// intensities and argmax labels, x fastest.
    pub fn predict_grid<T: Real>(
        &self,
        store: &ParamStore<T>,
        pa: &Projection,
        lat: &Projection,
        volume: &VolumeGeometry,
        out_dims: Dims,
        chunk: usize,
    ) -> Result<(Vec<f64>, Vec<u16>), FieldError> {
        out_dims.validate().map_err(|e| FieldError::Config(e.to_string()))?;
        let mut enc_tape = Tape::new();
        let views = self.encode_views(&mut enc_tape, store, pa, lat)?;
        let n = out_dims.len();
        let mut intensity = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let points: Vec<[f64; 3]> = (start..end)
                .map(|i| normalized_coord(out_dims.coords(i), out_dims).expect("index in range"))
                .collect();
            let mut tape = Tape::new();
            let v = self.constant_views(&mut tape, &enc_tape, &views)?;
            let out = self.forward(&mut tape, store, &v, volume, &points)?;
            intensity.extend(tape.value(out.intensity)?.data.iter().map(|x| x.as_f64()));
            let logits = tape.value(out.logits)?;
            for row in logits.data.chunks(self.config.classes) {
                let r: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
                labels.push(argmax(&r) as u16);
            }
            start = end;
        }
        Ok((intensity, labels))
    }
}
