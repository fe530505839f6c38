//! Original-scale marginal density grids for plotting.

use modcut::fit::VariableTransform;
use modcut::{Error, GaussianMixture, Result};

/// Probability left out in each tail of a grid's span.
pub const GRID_TAIL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub label: String,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityGrid {
    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// `points` equally spaced original-scale values spanning the `GRID_TAIL`
/// and `1 - GRID_TAIL` quantiles of `marginal` (a scalar mixture on the
/// normal scale), with density `p_z(z(x)) dz/dx`.
pub fn density_grid(marginal: &GaussianMixture, var: &VariableTransform, points: usize) -> Result<DensityGrid> {
    if marginal.dim() != 1 {
        return Err(Error::contract("density grids need a scalar marginal"));
    }
    let x_lo = var.inverse(marginal.quantile_1d(GRID_TAIL)?);
    let x_hi = var.inverse(marginal.quantile_1d(1.0 - GRID_TAIL)?);
    if !(x_hi > x_lo) {
        return Err(Error::Degenerate(var.label.clone()));
    }
    let step = (x_hi - x_lo) / (points - 1) as f64;
    let x: Vec<f64> = (0..points).map(|k| x_lo + k as f64 * step).collect();
    let density = x
        .iter()
        .map(|&xi| {
            let (z, _) = var.forward(xi);
            Ok(marginal.log_density(&[z])?.exp() * var.dz_dx(xi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityGrid {
        label: var.label.clone(),
        x,
        density,
    })
}
