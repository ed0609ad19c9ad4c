//! Reconstruction metrics, surface distances and mesh export.

pub mod mesh;
pub mod metrics;

use thiserror::Error;

pub use mesh::{class_mesh, marching_cubes, Mesh};
pub use metrics::{boundary_voxels, chamfer, dice_masks, dice_metric, distance_transform, hd95, percentile, psnr, psnr_values, ssim, ssim_2d};

use crate::volume::{LabelGrid, VoxelGrid};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Per-class segmentation scores for one class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub class: u16,
    pub dice: f64,
    pub hd95: f64,
    pub chamfer: f64,
    /// The class occurs in the prediction or the ground truth.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub subject: String,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub classes: Vec<ClassScores>,
}

impl MetricsReport {
    fn mean_over_present(&self, f: impl Fn(&ClassScores) -> f64) -> f64 {
        let v: Vec<f64> = self.classes.iter().filter(|c| c.present).map(f).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn mean_dice(&self) -> f64 {
        self.mean_over_present(|c| c.dice)
    }

    pub fn mean_hd95(&self) -> f64 {
        self.mean_over_present(|c| c.hd95)
    }

    pub fn mean_chamfer(&self) -> f64 {
        self.mean_over_present(|c| c.chamfer)
    }

    pub fn csv_header(classes: u16) -> String {
        let mut h = vec!["subject".to_string(), "method".into(), "psnr".into(), "ssim".into(), "mean_dice".into(), "mean_hd95".into(), "mean_chamfer".into()];
        for metric in ["dice", "hd95", "chamfer"] {
            h.extend((1..=classes).map(|c| format!("{metric}_{c}")));
        }
        h.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut r = vec![
            self.subject.clone(),
            self.method.clone(),
            self.psnr.to_string(),
            self.ssim.to_string(),
            self.mean_dice().to_string(),
            self.mean_hd95().to_string(),
            self.mean_chamfer().to_string(),
        ];
        r.extend(self.classes.iter().map(|c| c.dice.to_string()));
        r.extend(self.classes.iter().map(|c| c.hd95.to_string()));
        r.extend(self.classes.iter().map(|c| c.chamfer.to_string()));
        r.join(",")
    }
}

/// Scores a reconstruction against ground truth. Intensity data range is 1.
pub fn evaluate(
    subject: &str,
    method: &str,
    pred_volume: &VoxelGrid,
    pred_labels: Option<&LabelGrid>,
    truth_volume: &VoxelGrid,
    truth_labels: &LabelGrid,
) -> Result<MetricsReport, EvalError> {
    let psnr = psnr(pred_volume, truth_volume, 1.0)?;
    let ssim = ssim(pred_volume, truth_volume)?;
    let mut classes = Vec::new();
    if let Some(pred) = pred_labels {
        if pred.dims != truth_labels.dims {
            return Err(EvalError::Shape(format!("label dims {} and {} differ", pred.dims, truth_labels.dims)));
        }
        let (dims, spacing) = (truth_labels.dims, truth_labels.spacing);
        for class in 1..=truth_labels.classes() {
            let a = pred.mask(class);
            let b = truth_labels.mask(class);
            let present = a.iter().chain(&b).any(|&x| x);
            classes.push(ClassScores {
                class,
                dice: dice_masks(&a, &b),
                hd95: hd95(&a, &b, dims, spacing),
                chamfer: chamfer(&a, &b, dims, spacing),
                present,
            });
        }
    }
    Ok(MetricsReport { subject: subject.into(), method: method.into(), psnr, ssim, classes })
}

/// Writes reports as CSV with one header line.
pub fn write_reports_csv(path: &std::path::Path, classes: u16, reports: &[MetricsReport]) -> Result<(), EvalError> {
    let mut s = MetricsReport::csv_header(classes);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })
}
