//! Central finite-difference reference for gradient tests.
//!
//! The numeric gradient is formed purely from forward evaluations, so it
//! shares no code with the reverse sweep it is compared against.

use super::{AutodiffError, Tape, Tensor, Var};

/// Per-input comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` per input (0 when both vanish), maximised
    /// over inputs.
    pub fn max_relative_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = na.max(nn);
            if scale > 1e-12 {
                worst = worst.max(diff / scale);
            } else {
                worst = worst.max(diff);
            }
        }
        worst
    }
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect::<Result<_, _>>()?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out)?.item())
}

/// Differentiates the scalar `f(inputs)` both ways with step `h`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect::<Result<_, _>>()?;
    let loss = f(&mut tape, &vars)?;
    let g = tape.gradients(loss)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.get(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].numel());
        for k in 0..inputs[i].numel() {
            let x0 = inputs[i].data[k];
            probe[i].data[k] = x0 + h;
            let fp = eval(&probe, &f)?;
            probe[i].data[k] = x0 - h;
            let fm = eval(&probe, &f)?;
            probe[i].data[k] = x0;
            col.push((fp - fm) / (2.0 * h));
        }
        numeric.push(col);
    }
    Ok(GradCheck { analytic, numeric })
}
