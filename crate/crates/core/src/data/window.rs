use serde::{Deserialize, Serialize};

use super::{SeriesDataset, TextDoc};
use crate::error::{Error, Result};

/// Window and patch geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub stride: usize,
    pub patch: usize,
    pub patch_stride: usize,
    pub mask_ratio: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window: 96,
            stride: 96,
            patch: 6,
            patch_stride: 6,
            mask_ratio: 0.5,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.patch == 0 || self.patch_stride == 0 {
            return Err(Error::Config("window, stride, patch and patch stride must be ≥ 1".into()));
        }
        if self.patch > self.window {
            return Err(Error::Config(format!(
                "patch size {} exceeds window {}",
                self.patch, self.window
            )));
        }
        if (self.window - self.patch) % self.patch_stride != 0 {
            return Err(Error::Config(format!(
                "(window {} - patch {}) not divisible by patch stride {}",
                self.window, self.patch, self.patch_stride
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0,1]", self.mask_ratio)));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.window - self.patch) / self.patch_stride + 1
    }
}

/// A window of consecutive rows, identified by its offset in the source series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawWindow {
    pub offset: usize,
    pub len: usize,
    pub t_start: i64,
    pub t_end: i64,
}

impl RawWindow {
    pub fn values<'a>(&self, ds: &'a SeriesDataset) -> &'a [f64] {
        ds.rows(self.offset, self.len)
    }

    /// Documents intersecting the window's closed timestamp range.
    pub fn overlapping<'d>(&self, docs: &'d [TextDoc]) -> Vec<&'d TextDoc> {
        docs.iter()
            .filter(|d| d.overlap(self.t_start, self.t_end).is_some())
            .collect()
    }
}

/// Windows of length `window` starting at `0, stride, 2·stride, …`;
/// `⌊(T−w)/s⌋ + 1` of them.
pub fn make_windows(ds: &SeriesDataset, window: usize, stride: usize) -> Result<Vec<RawWindow>> {
    let t = ds.len();
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be ≥ 1".into()));
    }
    if window > t {
        return Err(Error::Config(format!("window {window} longer than series ({t} rows)")));
    }
    let count = (t - window) / stride + 1;
    Ok((0..count)
        .map(|k| at(ds, k * stride, window))
        .collect())
}

/// Like [`make_windows`] but appends a final window flush with the series end
/// when the stride does not reach it, so every row is covered.
pub fn covering_windows(ds: &SeriesDataset, window: usize, stride: usize) -> Result<Vec<RawWindow>> {
    let mut out = make_windows(ds, window, stride)?;
    let last = out.last().map_or(0, |w| w.offset + w.len);
    if last < ds.len() {
        out.push(at(ds, ds.len() - window, window));
    }
    Ok(out)
}

fn at(ds: &SeriesDataset, offset: usize, len: usize) -> RawWindow {
    RawWindow {
        offset,
        len,
        t_start: ds.timestamps()[offset],
        t_end: ds.timestamps()[offset + len - 1],
    }
}
