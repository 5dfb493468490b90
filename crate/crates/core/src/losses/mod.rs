//! Training loss for distance-mask regression: a log-scaled inverse
//! frequency weighted squared difference per class, plus a windowed maximin
//! connectivity term on the cable head. Every term returns its exact
//! subgradient with respect to the predicted values.

pub mod gradcheck;
pub mod malis;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DistanceMask, Grid};

pub use malis::{
    gt_background_components, malis_loss, malis_window_loss, pair_maximin, PairAffinity, WindowLoss,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Keeps the weight denominator away from zero; caps weights at `1 / ln(1 + epsilon)`.
    pub epsilon: f64,
    /// Weight of the connectivity term.
    pub lambda: f64,
    pub d_max: u32,
    /// Side of the square tiles the connectivity term is evaluated on, in cells.
    pub malis_window: usize,
    pub use_lif_weights: bool,
    pub use_malis: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 0.02,
            lambda: 0.2,
            d_max: crate::DEFAULT_D_MAX,
            malis_window: 16,
            use_lif_weights: true,
            use_malis: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.d_max == 0 {
            return Err(Error::invalid("d_max must be at least 1"));
        }
        if self.malis_window < 2 {
            return Err(Error::invalid(format!(
                "malis_window must be >= 2, got {}",
                self.malis_window
            )));
        }
        Ok(())
    }
}

/// Scalar loss together with its gradient per class head.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    pub grad_cables: Grid<f64>,
    pub grad_pylons: Grid<f64>,
}

/// Single-class loss and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TermValue {
    pub scalar: f64,
    pub grad: Grid<f64>,
}

/// Occurrence counts of discretized distance values `round(value * d_max)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn d_max(&self) -> u32 {
        (self.counts.len() - 1) as u32
    }

    /// Relative frequency of a bin, 0 for an empty table.
    pub fn frequency(&self, bin: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(bin).copied().unwrap_or(0) as f64 / self.total as f64
    }

    /// Frequency of the bin a normalized distance value falls into.
    pub fn frequency_of(&self, value: f64) -> f64 {
        self.frequency(bin_of(value, self.d_max()))
    }
}

/// Integer bin of a normalized distance value.
pub fn bin_of(value: f64, d_max: u32) -> usize {
    (value * d_max as f64).round().clamp(0.0, d_max as f64) as usize
}

pub fn frequency(gt: &DistanceMask) -> FrequencyTable {
    let d_max = gt.d_max();
    let mut counts = vec![0u64; d_max as usize + 1];
    for &v in gt.values().as_slice() {
        counts[bin_of(v, d_max)] += 1;
    }
    FrequencyTable {
        counts,
        total: gt.values().len() as u64,
    }
}

/// `1 / ln(1 + epsilon + f)`.
pub fn lif_weight(f: f64, epsilon: f64) -> f64 {
    1.0 / (1.0 + epsilon + f).ln()
}

/// Weighted squared difference `sum_i w(x_i) (pred_i - gt_i)^2` with weights
/// from the ground truth's own value frequencies (or 1 with weights disabled).
pub fn ldat(pred: &DistanceMask, gt: &DistanceMask, cfg: &LossConfig) -> Result<TermValue> {
    pred.values().ensure_same_dims(gt.values())?;
    let weights: Vec<f64> = if cfg.use_lif_weights {
        let table = frequency(gt);
        // One weight per bin; cells share them.
        let per_bin: Vec<f64> = (0..table.counts().len())
            .map(|b| lif_weight(table.frequency(b), cfg.epsilon))
            .collect();
        gt.values()
            .as_slice()
            .iter()
            .map(|&v| per_bin[bin_of(v, gt.d_max())])
            .collect()
    } else {
        vec![1.0; gt.values().len()]
    };
    let mut scalar = 0.0;
    let grad: Vec<f64> = pred
        .values()
        .as_slice()
        .iter()
        .zip(gt.values().as_slice())
        .zip(&weights)
        .map(|((&p, &g), &w)| {
            let diff = p - g;
            scalar += w * diff * diff;
            2.0 * w * diff
        })
        .collect();
    let (width, height) = pred.dims();
    Ok(TermValue {
        scalar,
        grad: Grid::from_vec(width, height, grad)?,
    })
}

/// Breakdown of [`composite_loss`] into its three terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ldat_cables: f64,
    pub ldat_pylons: f64,
    /// Unweighted connectivity term; 0 when disabled.
    pub malis: f64,
    pub total: f64,
}

/// Cable and pylon data terms plus `lambda` times the cable connectivity term.
pub fn composite_loss(
    pred_cables: &DistanceMask,
    pred_pylons: &DistanceMask,
    gt_cables: &DistanceMask,
    gt_pylons: &DistanceMask,
    cfg: &LossConfig,
) -> Result<LossValue> {
    composite_loss_terms(pred_cables, pred_pylons, gt_cables, gt_pylons, cfg).map(|(v, _)| v)
}

pub fn composite_loss_terms(
    pred_cables: &DistanceMask,
    pred_pylons: &DistanceMask,
    gt_cables: &DistanceMask,
    gt_pylons: &DistanceMask,
    cfg: &LossConfig,
) -> Result<(LossValue, LossTerms)> {
    cfg.validate()?;
    pred_cables
        .values()
        .ensure_same_dims(pred_pylons.values())?;
    pred_cables.values().ensure_same_dims(gt_pylons.values())?;
    let cables = ldat(pred_cables, gt_cables, cfg)?;
    let pylons = ldat(pred_pylons, gt_pylons, cfg)?;
    let mut scalar = cables.scalar + pylons.scalar;
    let mut grad_cables = cables.grad;
    let mut malis_scalar = 0.0;
    if cfg.use_malis {
        let m = malis_loss(pred_cables, gt_cables, cfg)?;
        malis_scalar = m.scalar;
        scalar += cfg.lambda * m.scalar;
        for (g, mg) in grad_cables.as_mut_slice().iter_mut().zip(m.grad.as_slice()) {
            *g += cfg.lambda * mg;
        }
    }
    Ok((
        LossValue {
            scalar,
            grad_cables,
            grad_pylons: pylons.grad,
        },
        LossTerms {
            ldat_cables: cables.scalar,
            ldat_pylons: pylons.scalar,
            malis: malis_scalar,
            total: scalar,
        },
    ))
}
