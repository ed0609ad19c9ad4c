use std::path::Path;

use super::TrainError;
use crate::kv::KvMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_int: f64,
    pub l_seg: f64,
    /// NaN when no validation ran this epoch.
    pub val_psnr: f64,
    pub val_dice: f64,
    pub wall_ms: u128,
}

/// Per-epoch training record plus the configuration that produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub config: KvMap,
    pub rows: Vec<EpochRow>,
}

impl RunLog {
    pub fn new(config: KvMap) -> Self {
        Self { config, rows: Vec::new() }
    }

    pub fn push(&mut self, row: EpochRow) -> Result<(), TrainError> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(TrainError::Validation(format!("epoch {} logged after {}", row.epoch, last.epoch)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// CSV with one row per epoch. Wall time is left out when
    /// `with_time` is false so that reruns compare byte for byte.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut s = String::from("epoch,lr,loss,l_int,l_seg,val_psnr,val_dice");
        if with_time {
            s.push_str(",wall_ms");
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{},{}", r.epoch, r.lr, r.loss, r.l_int, r.l_seg, r.val_psnr, r.val_dice));
            if with_time {
                s.push_str(&format!(",{}", r.wall_ms));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>.config.txt` next to each other.
    pub fn write(&self, csv: &Path) -> Result<(), TrainError> {
        let io = |p: &Path, e| TrainError::Io { path: p.display().to_string(), source: e };
        std::fs::write(csv, self.to_csv(true)).map_err(|e| io(csv, e))?;
        let cfg = csv.with_extension("config.txt");
        std::fs::write(&cfg, self.config.to_text()).map_err(|e| io(&cfg, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> EpochRow {
        EpochRow { epoch, lr: 0.001, loss: 0.5, l_int: 0.25, l_seg: 0.5, val_psnr: f64::NAN, val_dice: f64::NAN, wall_ms: 7 }
    }

    #[test]
    fn epochs_must_increase() {
        let mut log = RunLog::default();
        log.push(row(0)).unwrap();
        assert!(log.push(row(0)).is_err());
        log.push(row(1)).unwrap();
        assert_eq!(log.to_csv(false), "epoch,lr,loss,l_int,l_seg,val_psnr,val_dice\n0,0.001,0.5,0.25,0.5,NaN,NaN\n1,0.001,0.5,0.25,0.5,NaN,NaN\n");
        assert!(log.to_csv(true).ends_with(",7\n"));
    }
}
