//! Central finite-difference verification of the analytic subgradients.

use serde::Serialize;

use crate::error::Result;
use crate::grid::{DistanceMask, Grid, ObjectClass};

use super::malis::window_tiles;
use super::{composite_loss, LossConfig};

/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub checked: usize,
    /// Cells left out because the piecewise structure could change within one step.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_cell: Option<(ObjectClass, usize, usize)>,
}

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Cells whose predicted value lies within `margin` of another cell's value in
/// the same connectivity window. Moving such a cell by less than `margin` can
/// reorder the edge sweep, so their subgradient is not a derivative.
pub fn near_tie_cells(pred: &Grid<f64>, window: usize, margin: f64) -> Grid<bool> {
    let (w, h) = pred.dims();
    let mut tied = Grid::new(w, h, false);
    for (x0, y0, ww, wh) in window_tiles(w, h, window) {
        let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(ww * wh);
        for r in y0..y0 + wh {
            for c in x0..x0 + ww {
                cells.push((pred[(r, c)], r, c));
            }
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in cells.windows(2) {
            if pair[1].0 - pair[0].0 <= margin {
                tied[(pair[0].1, pair[0].2)] = true;
                tied[(pair[1].1, pair[1].2)] = true;
            }
        }
    }
    tied
}

/// Compares the composite-loss gradients against central differences with
/// step `h` at the requested cells (all cells when `cells` is `None`).
pub fn check_composite(
    pred_cables: &DistanceMask,
    pred_pylons: &DistanceMask,
    gt_cables: &DistanceMask,
    gt_pylons: &DistanceMask,
    cfg: &LossConfig,
    h: f64,
    cells: Option<&[(ObjectClass, usize, usize)]>,
) -> Result<GradCheckReport> {
    let analytic = composite_loss(pred_cables, pred_pylons, gt_cables, gt_pylons, cfg)?;
    let (w, ht) = pred_cables.dims();
    let all: Vec<(ObjectClass, usize, usize)>;
    let cells = match cells {
        Some(c) => c,
        None => {
            all = ObjectClass::ALL
                .iter()
                .flat_map(|&k| (0..ht).flat_map(move |r| (0..w).map(move |c| (k, r, c))))
                .collect();
            &all
        }
    };
    let margin = 2.0 * h + 1e-6;
    let cable_ties = if cfg.use_malis {
        near_tie_cells(pred_cables.values(), cfg.malis_window, margin)
    } else {
        Grid::new(w, ht, false)
    };

    let mut report = GradCheckReport {
        step: h,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_cell: None,
    };
    for &(class, r, c) in cells {
        let base = match class {
            ObjectClass::Cables => pred_cables,
            ObjectClass::Pylons => pred_pylons,
        };
        let v = base.values()[(r, c)];
        let tied = class == ObjectClass::Cables && cable_ties[(r, c)];
        if tied || v - h < 0.0 || v + h > 1.0 {
            report.skipped += 1;
            continue;
        }
        let eval = |x: f64| -> Result<f64> {
            let mut values = base.values().clone();
            values[(r, c)] = x;
            let moved = DistanceMask::new(values, base.d_max())?;
            let (pc, pp) = match class {
                ObjectClass::Cables => (&moved, pred_pylons),
                ObjectClass::Pylons => (pred_cables, &moved),
            };
            Ok(composite_loss(pc, pp, gt_cables, gt_pylons, cfg)?.scalar)
        };
        let numeric = (eval(v + h)? - eval(v - h)?) / (2.0 * h);
        let exact = match class {
            ObjectClass::Cables => analytic.grad_cables[(r, c)],
            ObjectClass::Pylons => analytic.grad_pylons[(r, c)],
        };
        let err = relative_error(exact, numeric);
        report.checked += 1;
        if report.worst_cell.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_cell = Some((class, r, c));
        }
    }
    Ok(report)
}
