use rand::Rng;

use super::FieldError;
use crate::autodiff::{AutodiffError, ParamId, ParamStore, Real, Tape, Var};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderTopology {
    /// One MLP emitting intensity and class logits together.
    Shared,
    /// Separate intensity and segmentation MLPs on the same features.
    TwoBranch,
    /// Intensity MLP first; a second MLP maps its last hidden layer plus the
    /// predicted intensity to class logits.
    TwoStage,
}

impl std::str::FromStr for DecoderTopology {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, FieldError> {
        match s {
            "shared" => Ok(Self::Shared),
            "two_branch" => Ok(Self::TwoBranch),
            "two_stage" => Ok(Self::TwoStage),
            _ => Err(FieldError::Config(format!("unknown decoder topology `{s}` (expected shared, two_branch or two_stage)"))),
        }
    }
}

impl std::fmt::Display for DecoderTopology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Shared => "shared",
            Self::TwoBranch => "two_branch",
            Self::TwoStage => "two_stage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub topology: DecoderTopology,
    pub hidden_layers: usize,
    pub width: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { topology: DecoderTopology::Shared, hidden_layers: 4, width: 128 }
    }
}

impl DecoderConfig {
    pub fn to_kv(&self, map: &mut KvMap) {
        map.set("decoder.topology", self.topology);
        map.set("decoder.hidden_layers", self.hidden_layers);
        map.set("decoder.width", self.width);
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, FieldError> {
        let d = Self::default();
        let c = Self {
            topology: map.get("decoder.topology").map(str::parse).transpose()?.unwrap_or(d.topology),
            hidden_layers: map.parse_or("decoder.hidden_layers", d.hidden_layers, "integer")?,
            width: map.parse_or("decoder.width", d.width, "integer")?,
        };
        if c.hidden_layers == 0 || c.width == 0 {
            return Err(FieldError::Config("decoder needs at least one hidden layer of positive width".into()));
        }
        Ok(c)
    }
}

/// Fully connected stack: `hidden` ReLU layers of `width`, then a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        width: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut fan_in = input_dim;
        for l in 0..=hidden {
            let fan_out = if l == hidden { output_dim } else { width };
            let w = store.add_xavier(&format!("{prefix}.l{l}.w"), &[fan_in, fan_out], fan_in, fan_out, rng)?;
            let b = store.add_zeros(&format!("{prefix}.l{l}.b"), &[fan_out])?;
            layers.push((w, b));
            fan_in = fan_out;
        }
        Ok(Self { layers, input_dim, output_dim })
    }

    /// Returns `(last hidden activation, output)`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var), AutodiffError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        let mut hidden = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            h = tape.linear(h, wv, Some(bv))?;
            if l < last {
                h = tape.relu(h)?;
                hidden = h;
            }
        }
        Ok((hidden, h))
    }
}

/// Decoder heads; every parameter lives under `field.decoder.`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub classes: usize,
    first: Mlp,
    second: Option<Mlp>,
}

pub const DECODER_PREFIX: &str = "field.decoder.";

impl Decoder {
    pub fn new<T: Real, R: Rng>(config: DecoderConfig, input_dim: usize, classes: usize, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self, FieldError> {
        if classes < 2 {
            return Err(FieldError::Config(format!("decoder needs at least 2 softmax channels, got {classes}")));
        }
        let (h, w) = (config.hidden_layers, config.width);
        let (first, second) = match config.topology {
            DecoderTopology::Shared => (Mlp::new(store, "field.decoder.shared", input_dim, h, w, classes + 1, rng)?, None),
            DecoderTopology::TwoBranch => (
                Mlp::new(store, "field.decoder.int", input_dim, h, w, 1, rng)?,
                Some(Mlp::new(store, "field.decoder.seg", input_dim, h, w, classes, rng)?),
            ),
            DecoderTopology::TwoStage => (
                Mlp::new(store, "field.decoder.int", input_dim, h, w, 1, rng)?,
                Some(Mlp::new(store, "field.decoder.seg", w + 1, h, w, classes, rng)?),
            ),
        };
        Ok(Self { config, classes, first, second })
    }

    /// Maps features `[P, D]` to `(intensity [P, 1], logits [P, classes])`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, f: Var) -> Result<(Var, Var), FieldError> {
        let d = tape.shape(f)?.to_vec();
        if d.len() != 2 || d[1] != self.first.input_dim {
            return Err(FieldError::Config(format!("decoder expects [P, {}] features, got {d:?}", self.first.input_dim)));
        }
        let (hidden, out) = self.first.forward(tape, store, f)?;
        match (self.config.topology, &self.second) {
            (DecoderTopology::Shared, _) => {
                let i = tape.narrow(out, 1, 0, 1)?;
                let s = tape.narrow(out, 1, 1, self.classes)?;
                Ok((i, s))
            }
            (DecoderTopology::TwoBranch, Some(seg)) => {
                let (_, s) = seg.forward(tape, store, f)?;
                Ok((out, s))
            }
            (DecoderTopology::TwoStage, Some(seg)) => {
                let x = tape.concat(&[hidden, out], 1)?;
                let (_, s) = seg.forward(tape, store, x)?;
                Ok((out, s))
            }
            _ => Err(FieldError::Config("decoder topology and weights disagree".into())),
        }
    }
}
