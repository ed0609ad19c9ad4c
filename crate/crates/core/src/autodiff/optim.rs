use super::{AutodiffError, ParamStore, Real};

/// Step-decay schedule: `lr(epoch) = base · decay^floor(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, decay: f64, decay_every: usize) -> Result<Self, AutodiffError> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(AutodiffError::Config(format!("learning rate must be positive, got {base_lr}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(AutodiffError::Config(format!("decay factor must lie in (0, 1], got {decay}")));
        }
        if decay_every == 0 {
            return Err(AutodiffError::Config("decay interval must be at least one epoch".into()));
        }
        Ok(Self { base_lr, decay, decay_every })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(AutodiffError::Config(format!("unknown optimizer `{s}` (expected sgd or adam)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Optimizer state. Plain SGD keeps only the schedule and the current epoch;
/// Adam additionally keeps first and second moments per parameter.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub schedule: LrSchedule,
    pub epoch: usize,
    pub kind: OptimizerKind,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl SgdState {
    pub fn new(schedule: LrSchedule) -> Self {
        Self::with_kind(schedule, OptimizerKind::Sgd)
    }

    pub fn with_kind(schedule: LrSchedule, kind: OptimizerKind) -> Self {
        Self { schedule, epoch: 0, kind, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr_at(self.epoch)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Applies one update to every trainable parameter using its accumulated
/// gradient: `θ ← θ − lr·g` for SGD. Frozen parameters are left untouched.
/// Gradients are not cleared.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, state: &mut SgdState) -> Result<(), AutodiffError> {
    let lr = state.lr();
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(AutodiffError::Config(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            let lr_t = T::of(lr);
            for p in store.iter_mut().filter(|p| p.trainable) {
                p.value.data.iter_mut().zip(&p.grad).for_each(|(w, &g)| *w -= lr_t * g);
            }
        }
        OptimizerKind::Adam => {
            if state.m.len() != store.len() {
                state.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
                state.v = state.m.clone();
            }
            let t = state.step as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
                if !p.trainable {
                    continue;
                }
                for k in 0..p.grad.len() {
                    let g = p.grad[k].as_f64();
                    m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                    v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                    let upd = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    p.value.data[k] -= T::of(upd);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn schedule_decays_stepwise() {
        let s = LrSchedule::new(1e-3, 0.5, 1000).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(999), 1e-3);
        assert_eq!(s.lr_at(1000), 5e-4);
        assert_eq!(s.lr_at(2500), 2.5e-4);
        assert!(LrSchedule::new(0.0, 0.5, 10).is_err());
        assert!(LrSchedule::new(-1.0, 0.5, 10).is_err());
        assert!(LrSchedule::new(1e-3, 0.5, 0).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient_and_skips_frozen() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("enc.w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        let b = store.add("dec.w", Tensor::new(&[1], vec![3.0]).unwrap()).unwrap();
        store.get_mut(a).grad = vec![0.5, -1.0];
        store.get_mut(b).grad = vec![2.0];
        store.freeze_prefixes(&["dec."]);
        let mut st = SgdState::new(LrSchedule::new(0.1, 0.5, 1000).unwrap());
        sgd_step(&mut store, &mut st).unwrap();
        assert_eq!(store.get(a).value.data, vec![1.0 - 0.05, 2.0 + 0.1]);
        assert_eq!(store.get(b).value.data, vec![3.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("w", Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
        store.get_mut(a).grad = vec![3.0, -0.01];
        let mut st = SgdState::with_kind(LrSchedule::new(0.01, 1.0, 1).unwrap(), OptimizerKind::Adam);
        sgd_step(&mut store, &mut st).unwrap();
        let w = &store.get(a).value.data;
        assert!((w[0] + 0.01).abs() < 1e-9 && (w[1] - 0.01).abs() < 1e-7);
    }
}
