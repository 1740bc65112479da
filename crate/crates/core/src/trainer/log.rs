use std::fmt::Write as _;
use std::path::Path;

use super::Result;
use crate::unmixing::LossValues;

pub const CSV_HEADER: &str = "epoch,step,loss_total,loss_l1,loss_sad,loss_tv_or_abun,lr";

/// Epoch-mean losses. `step` counts optimizer steps completed so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossValues,
    pub lr: f64,
}

pub fn to_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch, r.step, r.loss.total, r.loss.l1, r.loss.sad, r.loss.aux, r.lr
        )
        .expect("write to string");
    }
    s
}

pub fn write_csv(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_csv(records))?;
    Ok(())
}
