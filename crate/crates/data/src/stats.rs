//! Value-distribution statistics over normalized channels.

use crate::types::{DataError, ModalityKind, Result, Sample};

/// Exact integer histogram of one channel kind over uniform bins on [0, 1].
/// The final bin is right-closed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub kind: ModalityKind,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub pixel_total: u64,
}

impl DatasetStats {
    /// CSV rows `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        out
    }

    /// Fraction of mass at or below `value`.
    pub fn mass_below(&self, value: f64) -> f64 {
        if self.pixel_total == 0 {
            return 0.0;
        }
        let mut acc = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            if self.bin_edges[i + 1] <= value + 1e-12 {
                acc += c;
            }
        }
        acc as f64 / self.pixel_total as f64
    }
}

pub fn histogram<'a, I>(samples: I, kind: ModalityKind, bins: usize) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a Sample>,
{
    if bins < 2 {
        return Err(DataError::InvalidConfig(format!("bins = {bins}, need >= 2")));
    }
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    let mut saw_sample = false;
    for sample in samples {
        saw_sample = true;
        for mp in sample.modality.iter().filter(|p| p.kind == kind) {
            for &v in mp.plane.iter() {
                let idx = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
                counts[idx] += 1;
                total += 1;
            }
        }
    }
    if !saw_sample || total == 0 {
        return Err(DataError::EmptyInput);
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    Ok(DatasetStats {
        kind,
        bin_edges,
        counts,
        pixel_total: total,
    })
}
