//! Shared-weight 2D UNet that turns one normalised radiograph into a
//! full-resolution `C`-channel feature map.

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::kv::KvMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub channels: Vec<usize>,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 3, channels: vec![16, 32, 64], out_channels: 32 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.depth == 0 || self.channels.len() != self.depth {
            return Err(AutodiffError::Config(format!(
                "encoder depth {} needs {} channel counts, got {:?}",
                self.depth, self.depth, self.channels
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.out_channels == 0 {
            return Err(AutodiffError::Config("encoder channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("encoder.depth", self.depth);
        map.set("encoder.channels", self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        map.set("encoder.out_channels", self.out_channels);
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Result<Self, AutodiffError> {
        let w = store.add_xavier(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k, cout * k * k, rng)?;
        let b = store.add_zeros(&format!("{name}.b"), &[cout])?;
        Ok(Self { w, b })
    }

    fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.conv2d(x, w, Some(b))
    }

    fn apply_relu<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let y = self.apply(tape, store, x)?;
        tape.relu(y)
    }
}

/// Parameter handles of the encoder; all names live under `encoder.`.
#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    down: Vec<[Conv; 2]>,
    up: Vec<(Conv, [Conv; 2])>,
    head: Conv,
}

pub const ENCODER_PREFIX: &str = "encoder.";

impl UNet {
    pub fn new<T: Real, R: Rng>(config: UNetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self, AutodiffError> {
        config.validate()?;
        let ch = &config.channels;
        let mut down = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let cin = if l == 0 { 1 } else { ch[l - 1] };
            down.push([
                Conv::new(store, &format!("encoder.down{l}.conv0"), cin, ch[l], 3, rng)?,
                Conv::new(store, &format!("encoder.down{l}.conv1"), ch[l], ch[l], 3, rng)?,
            ]);
        }
        let mut up = Vec::with_capacity(config.depth - 1);
        for l in (0..config.depth - 1).rev() {
            up.push((
                Conv::new(store, &format!("encoder.up{l}.proj"), ch[l + 1], ch[l], 3, rng)?,
                [
                    Conv::new(store, &format!("encoder.up{l}.conv0"), 2 * ch[l], ch[l], 3, rng)?,
                    Conv::new(store, &format!("encoder.up{l}.conv1"), ch[l], ch[l], 3, rng)?,
                ],
            ));
        }
        let head = Conv::new(store, "encoder.head", ch[0], config.out_channels, 1, rng)?;
        Ok(Self { config, down, up, head })
    }

    /// Encodes a `H×W` image (row-major, values in `[0, 1]`) into a
    /// `[C, H, W]` feature map on `tape`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, image: &[f64], h: usize, w: usize) -> Result<Var, AutodiffError> {
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(AutodiffError::Shape(format!("encoder input {h}×{w} is not divisible by {d}")));
        }
        if image.len() != h * w {
            return Err(AutodiffError::Shape(format!("encoder input has {} values, expected {h}×{w}", image.len())));
        }
        let x = tape.constant(Tensor::from_f64(&[1, 1, h, w], image)?)?;
        self.encode_var(tape, store, x)
    }

    /// As [`UNet::encode`] for an input already on the tape, shaped `[1, 1, H, W]`.
    pub fn encode_var<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, AutodiffError> {
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut cur = x;
        for (l, [c0, c1]) in self.down.iter().enumerate() {
            cur = c0.apply_relu(tape, store, cur)?;
            cur = c1.apply_relu(tape, store, cur)?;
            if l + 1 < self.config.depth {
                skips.push(cur);
                cur = tape.avg_pool2(cur)?;
            }
        }
        for (proj, [c0, c1]) in &self.up {
            let skip = skips.pop().expect("one skip per upsampling stage");
            let u = tape.upsample2(cur)?;
            let u = proj.apply_relu(tape, store, u)?;
            let cat = tape.concat(&[skip, u], 1)?;
            cur = c0.apply_relu(tape, store, cat)?;
            cur = c1.apply_relu(tape, store, cur)?;
        }
        let y = self.head.apply(tape, store, cur)?;
        let s = tape.shape(y)?.to_vec();
        tape.reshape(y, &[s[1], s[2], s[3]])
    }
}
