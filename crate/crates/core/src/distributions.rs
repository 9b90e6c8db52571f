//! Information densities over the workspace and their cosine coefficients.

use serde::{Deserialize, Serialize};

use crate::ergodic::{BasisSet, Workspace};
use crate::error::{Error, Result};
use crate::par;

/// Default midpoint quadrature resolution (points per axis).
pub const DEFAULT_RESOLUTION: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionKind {
    Uniform,
    /// `sum_i exp(-decay * ||w - c_i||^2)`, normalized afterwards.
    GaussianMixture { centers: Vec<Vec<f64>>, decay: f64 },
    /// Piecewise-constant raster covering the workspace. `shape[i]` cells
    /// along axis `i`; `values` is flattened with axis 0 varying fastest.
    Gridded { shape: Vec<usize>, values: Vec<f64> },
}

/// A nonnegative density normalized to unit mass over its workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoDistribution {
    kind: DistributionKind,
    ws: Workspace,
    normalization: f64,
}

impl InfoDistribution {
    pub fn uniform(ws: &Workspace) -> Self {
        Self {
            kind: DistributionKind::Uniform,
            ws: ws.clone(),
            normalization: 1.0 / ws.volume(),
        }
    }

    pub fn gaussian_mixture(
        ws: &Workspace,
        centers: Vec<Vec<f64>>,
        decay: f64,
        resolution: usize,
    ) -> Result<Self> {
        Self::new(DistributionKind::GaussianMixture { centers, decay }, ws, resolution)
    }

    /// Builds and normalizes a distribution. `resolution` is the midpoint grid
    /// used to integrate kinds without a closed-form mass.
    pub fn new(kind: DistributionKind, ws: &Workspace, resolution: usize) -> Result<Self> {
        let mut dist = Self {
            kind,
            ws: ws.clone(),
            normalization: 1.0,
        };
        dist.validate()?;
        let mass = match &dist.kind {
            DistributionKind::Uniform => ws.volume(),
            DistributionKind::GaussianMixture { .. } => {
                if resolution == 0 {
                    return Err(Error::contract("quadrature resolution must be positive"));
                }
                let grid = MidpointGrid::new(ws, resolution);
                let vals = grid.sample(|w| dist.raw(w));
                vals.iter().sum::<f64>() * grid.cell_volume()
            }
            DistributionKind::Gridded { shape, values } => {
                let cells: usize = shape.iter().product();
                values.iter().sum::<f64>() * ws.volume() / cells as f64
            }
        };
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::contract(format!(
                "distribution mass must be positive, got {mass}"
            )));
        }
        dist.normalization = 1.0 / mass;
        Ok(dist)
    }

    fn validate(&self) -> Result<()> {
        let v = self.ws.dims();
        match &self.kind {
            DistributionKind::Uniform => Ok(()),
            DistributionKind::GaussianMixture { centers, decay } => {
                if centers.is_empty() {
                    return Err(Error::contract("mixture needs at least one center"));
                }
                if centers.iter().any(|c| c.len() != v || c.iter().any(|x| !x.is_finite())) {
                    return Err(Error::contract(format!(
                        "mixture centers must have {v} finite coordinates"
                    )));
                }
                if !(decay.is_finite() && *decay > 0.0) {
                    return Err(Error::contract("mixture decay must be positive"));
                }
                Ok(())
            }
            DistributionKind::Gridded { shape, values } => {
                if shape.len() != v || shape.iter().any(|&s| s == 0) {
                    return Err(Error::contract(format!(
                        "raster shape must have {v} positive entries"
                    )));
                }
                if values.len() != shape.iter().product::<usize>() {
                    return Err(Error::contract("raster value count does not match its shape"));
                }
                if values.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::contract("raster values must be finite and nonnegative"));
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> &DistributionKind {
        &self.kind
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    /// Scale applied to the raw density so that it integrates to one.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    fn raw(&self, w: &[f64]) -> f64 {
        match &self.kind {
            DistributionKind::Uniform => 1.0,
            DistributionKind::GaussianMixture { centers, decay } => centers
                .iter()
                .map(|c| {
                    let d2: f64 = c.iter().zip(w).map(|(ci, wi)| (wi - ci) * (wi - ci)).sum();
                    (-decay * d2).exp()
                })
                .sum(),
            DistributionKind::Gridded { shape, values } => {
                let mut flat = 0;
                let mut stride = 1;
                for (axis, &cells) in shape.iter().enumerate() {
                    let rel = (w[axis] - self.ws.lower(axis)) / self.ws.lengths()[axis];
                    let idx = ((rel * cells as f64).floor().max(0.0) as usize).min(cells - 1);
                    flat += idx * stride;
                    stride *= cells;
                }
                values[flat]
            }
        }
    }

    /// Normalized density at `w`.
    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        self.ws.check(w)?;
        Ok(self.normalization * self.raw(w))
    }

    /// Reads a 2-D raster from CSV text. The first record holds the extents
    /// `x_min,x_max,y_min,y_max`; each following record is one row of cells
    /// at increasing `y`, with cells at increasing `x` along the row.
    pub fn gridded_from_csv(text: &str, ws: &Workspace) -> Result<Self> {
        if ws.dims() != 2 {
            return Err(Error::contract("CSV rasters are two-dimensional"));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::config("raster", e.to_string()))?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        Error::config("raster", format!("record {line}: `{s}`: {e}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let (header, cells) = rows
            .split_first()
            .ok_or_else(|| Error::config("raster", "empty file"))?;
        if header.len() != 4 {
            return Err(Error::config("raster", "header must be x_min,x_max,y_min,y_max"));
        }
        let expected = [ws.lower(0), ws.upper(0), ws.lower(1), ws.upper(1)];
        if header
            .iter()
            .zip(expected)
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
        {
            return Err(Error::config(
                "raster",
                format!("extents {header:?} do not match workspace {expected:?}"),
            ));
        }
        if cells.is_empty() {
            return Err(Error::config("raster", "no data rows"));
        }
        let nx = cells[0].len();
        if nx == 0 || cells.iter().any(|r| r.len() != nx) {
            return Err(Error::config("raster", "rows must be non-empty and equally long"));
        }
        let values = cells.concat();
        Self::new(
            DistributionKind::Gridded {
                shape: vec![nx, cells.len()],
                values,
            },
            ws,
            DEFAULT_RESOLUTION,
        )
    }
}

/// Midpoint tensor grid over a workspace.
#[derive(Debug, Clone)]
pub struct MidpointGrid {
    ws: Workspace,
    resolution: usize,
}

impl MidpointGrid {
    pub fn new(ws: &Workspace, resolution: usize) -> Self {
        Self {
            ws: ws.clone(),
            resolution,
        }
    }

    pub fn points(&self) -> usize {
        self.resolution.pow(self.ws.dims() as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.ws.volume() / self.points() as f64
    }

    /// Midpoint coordinate `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        self.ws.lower(axis) + (j as f64 + 0.5) * self.ws.lengths()[axis] / self.resolution as f64
    }

    /// Grid point `flat`, row-major with axis 0 slowest.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let v = self.ws.dims();
        let mut w = vec![0.0; v];
        let mut rem = flat;
        for axis in (0..v).rev() {
            w[axis] = self.coordinate(axis, rem % self.resolution);
            rem /= self.resolution;
        }
        w
    }

    /// Samples `f` at every grid point (row-major, axis 0 slowest).
    pub fn sample<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        par::map_range(self.points(), |flat| f(&self.point(flat)))
    }
}

/// Coefficients `Phi_k = int_W phi(w) F_k(w) dw`, aligned with a [`BasisSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiCoefficients {
    pub values: Vec<f64>,
    pub quadrature_resolution: usize,
}

/// Midpoint-rule tensor quadrature of `phi * F_k` for every basis index.
pub fn phi_coefficients(
    dist: &InfoDistribution,
    basis: &BasisSet,
    ws: &Workspace,
    resolution: usize,
) -> Result<PhiCoefficients> {
    if resolution < 2 * basis.k_max() {
        return Err(Error::contract(format!(
            "quadrature resolution {resolution} is below the floor 2*k_max = {}",
            2 * basis.k_max()
        )));
    }
    if ws.dims() != basis.dims() || dist.workspace() != ws {
        return Err(Error::contract("distribution, basis and workspace disagree"));
    }
    let grid = MidpointGrid::new(ws, resolution);
    let samples = grid.sample(|w| dist.normalization * dist.raw(w));
    let k_max = basis.k_max();
    // cos tables per axis, k_max x resolution
    let tables: Vec<Vec<f64>> = (0..ws.dims())
        .map(|axis| {
            let mut t = vec![0.0; k_max * resolution];
            for k in 0..k_max {
                for j in 0..resolution {
                    let x = grid.coordinate(axis, j) - ws.lower(axis);
                    t[k * resolution + j] =
                        (k as f64 * std::f64::consts::PI * x / ws.lengths()[axis]).cos();
                }
            }
            t
        })
        .collect();
    // Contract one axis at a time: shape[axis] goes from resolution to k_max.
    let mut shape = vec![resolution; ws.dims()];
    let mut tensor = samples;
    for (axis, table) in tables.iter().enumerate() {
        let pre: usize = shape[..axis].iter().product();
        let post: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let src = &tensor;
        let next = par::map_range(pre * k_max * post, |flat| {
            let p = flat % post;
            let k = (flat / post) % k_max;
            let q = flat / (post * k_max);
            let row = &table[k * resolution..(k + 1) * resolution];
            let mut acc = 0.0;
            for (j, c) in row.iter().enumerate().take(len) {
                acc += c * src[(q * len + j) * post + p];
            }
            acc
        });
        tensor = next;
        shape[axis] = k_max;
    }
    let cell = grid.cell_volume();
    let values = tensor
        .iter()
        .zip(basis.indices())
        .map(|(s, b)| s * cell / b.h_k)
        .collect();
    Ok(PhiCoefficients {
        values,
        quadrature_resolution: resolution,
    })
}
