//! Cosine Fourier basis over a box workspace, trajectory spectral
//! coefficients, the ergodic metric and the extended ergodic state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Tolerance used when checking that a point lies inside the workspace.
pub const WORKSPACE_TOL: f64 = 1e-9;

/// Axis-aligned exploration box `[o_0, o_0 + L_0] x ... x [o_{v-1}, o_{v-1} + L_{v-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    lengths: Vec<f64>,
    offsets: Vec<f64>,
}

impl Workspace {
    pub fn new(lengths: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::contract("workspace needs at least one dimension"));
        }
        if lengths.len() != offsets.len() {
            return Err(Error::contract(format!(
                "workspace has {} lengths but {} offsets",
                lengths.len(),
                offsets.len()
            )));
        }
        if let Some((i, l)) = lengths
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::contract(format!(
                "workspace length {i} must be positive and finite, got {l}"
            )));
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::contract("workspace offsets must be finite"));
        }
        Ok(Self { lengths, offsets })
    }

    /// Box with the given lengths anchored at the origin.
    pub fn from_lengths(lengths: Vec<f64>) -> Result<Self> {
        let offsets = vec![0.0; lengths.len()];
        Self::new(lengths, offsets)
    }

    /// Box from explicit `[lower, upper]` bounds per axis.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let lengths = bounds.iter().map(|(lo, hi)| hi - lo).collect();
        let offsets = bounds.iter().map(|(lo, _)| *lo).collect();
        Self::new(lengths, offsets)
    }

    pub fn unit(dims: usize) -> Self {
        Self {
            lengths: vec![1.0; dims],
            offsets: vec![0.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.offsets[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.offsets[axis] + self.lengths[axis]
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Checks membership with [`WORKSPACE_TOL`], naming the first violating axis.
    pub fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dims() {
            return Err(Error::contract(format!(
                "point has {} coordinates, workspace has {}",
                w.len(),
                self.dims()
            )));
        }
        for (axis, &value) in w.iter().enumerate() {
            let (lower, upper) = (self.lower(axis), self.upper(axis));
            if !(value >= lower - WORKSPACE_TOL && value <= upper + WORKSPACE_TOL) {
                return Err(Error::OutsideWorkspace {
                    axis,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        self.check(w).is_ok()
    }
}

/// Convention for the basis normalizer `h_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `h_k = sqrt(prod l_i)` with `l_i = L_i` when `k_i = 0`, else `L_i / 2`.
    /// Makes the basis orthonormal in L2 over the workspace.
    #[default]
    Orthonormal,
    /// `h_k = 1` for every index.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisIndex {
    pub k: Vec<usize>,
    pub h_k: f64,
    pub lambda_k: f64,
}

impl BasisIndex {
    fn new(k: Vec<usize>, ws: &Workspace, normalization: Normalization) -> Self {
        let v = k.len() as f64;
        let norm = k.iter().map(|&ki| (ki * ki) as f64).sum::<f64>().sqrt();
        let lambda_k = (1.0 + norm).powf(-(v + 1.0) / 2.0);
        let h_k = match normalization {
            Normalization::Orthonormal => k
                .iter()
                .zip(ws.lengths())
                .map(|(&ki, &l)| if ki == 0 { l } else { l / 2.0 })
                .product::<f64>()
                .sqrt(),
            Normalization::Unit => 1.0,
        };
        Self { k, h_k, lambda_k }
    }

    pub fn norm(&self) -> f64 {
        self.k.iter().map(|&ki| (ki * ki) as f64).sum::<f64>().sqrt()
    }
}

/// All multi-indices with `0 <= k_i < k_max`, in row-major order (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    indices: Vec<BasisIndex>,
    k_max: usize,
    dims: usize,
    normalization: Normalization,
    inv_h: Vec<f64>,
}

impl BasisSet {
    pub fn new(ws: &Workspace, k_max: usize, normalization: Normalization) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::contract("k_max must be at least 1"));
        }
        let dims = ws.dims();
        let count = k_max
            .checked_pow(dims as u32)
            .ok_or_else(|| Error::contract("basis size overflows"))?;
        let mut indices = Vec::with_capacity(count);
        let mut k = vec![0usize; dims];
        for _ in 0..count {
            indices.push(BasisIndex::new(k.clone(), ws, normalization));
            for axis in (0..dims).rev() {
                k[axis] += 1;
                if k[axis] < k_max {
                    break;
                }
                k[axis] = 0;
            }
        }
        let inv_h = indices.iter().map(|b| 1.0 / b.h_k).collect();
        Ok(Self {
            indices,
            inv_h,
            k_max,
            dims,
            normalization,
        })
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn weights(&self) -> Vec<f64> {
        self.indices.iter().map(|b| b.lambda_k).collect()
    }

    /// Writes `F_k(w)` for every index into `values`. No workspace check.
    pub fn eval_into(&self, ws: &Workspace, w: &[f64], values: &mut [f64]) {
        let tables = AxisTables::new(ws, self.k_max, w, false);
        // tensor product built in place, last axis fastest
        let k = self.k_max;
        values[0] = 1.0;
        let mut len = 1;
        for axis in 0..self.dims {
            let c = tables.axis_cos(axis);
            for i in (0..len).rev() {
                let o = values[i];
                for j in (0..k).rev() {
                    values[i * k + j] = o * c[j];
                }
            }
            len *= k;
        }
        for (out, ih) in values.iter_mut().zip(&self.inv_h) {
            *out *= ih;
        }
    }

    /// `sum_k weights_k grad F_k(w)`, written into `out` (one entry per axis).
    /// `scratch` needs `2 * len()` entries. No workspace check.
    pub fn weighted_gradient_into(
        &self,
        ws: &Workspace,
        w: &[f64],
        weights: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        let scaled: Vec<f64> = weights.iter().zip(&self.inv_h).map(|(a, b)| a * b).collect();
        self.scaled_gradient_into(ws, w, &scaled, scratch, out);
    }

    /// As [`Self::weighted_gradient_into`] with weights already divided by `h_k`.
    fn scaled_gradient_into(
        &self,
        ws: &Workspace,
        w: &[f64],
        scaled: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        let k = self.k_max;
        let v = self.dims;
        let tables = AxisTables::new(ws, k, w, true);
        let dcos = |axis: usize, j: usize| -PI / ws.lengths()[axis] * j as f64 * tables.sin(axis, j);
        // The contraction along the last axis is shared by every target but the last.
        let rows = scaled.len() / k;
        let last = v - 1;
        let (head, tail) = scratch.split_at_mut(rows);
        let c_last = tables.axis_cos(last);
        for r in 0..rows {
            let row = &scaled[r * k..(r + 1) * k];
            let (mut a, mut b) = (0.0, 0.0);
            for j in 0..k {
                a += row[j] * c_last[j];
                b += row[j] * dcos(last, j);
            }
            head[r] = a;
            tail[r] = b;
        }
        // tail[..rows] holds the last-axis derivative channel.
        let contract = |buf: &mut [f64], target: Option<usize>| -> f64 {
            let mut len = rows;
            for axis in (0..last).rev() {
                len /= k;
                for m in 0..len {
                    let mut acc = 0.0;
                    for j in 0..k {
                        let f = if Some(axis) == target { dcos(axis, j) } else { tables.cos(axis, j) };
                        acc += buf[m * k + j] * f;
                    }
                    buf[m] = acc;
                }
            }
            buf[0]
        };
        out[last] = contract(&mut tail[..rows], None);
        if last == 0 {
            return;
        }
        for target in 0..last {
            let buf = &mut tail[..rows];
            buf.copy_from_slice(head);
            out[target] = contract(buf, Some(target));
        }
    }

    /// Values and gradients of every basis function at `w`. `grads` is
    /// row-major `len() x dims`. No workspace check.
    pub fn eval_with_gradient_into(
        &self,
        ws: &Workspace,
        w: &[f64],
        values: &mut [f64],
        grads: &mut [f64],
    ) {
        let v = self.dims;
        let tables = AxisTables::new(ws, self.k_max, w, true);
        for (idx, b) in self.indices.iter().enumerate() {
            let mut prod = 1.0;
            for (axis, &ki) in b.k.iter().enumerate() {
                prod *= tables.cos(axis, ki);
            }
            values[idx] = prod / b.h_k;
            let g = &mut grads[idx * v..(idx + 1) * v];
            for (i, gi) in g.iter_mut().enumerate() {
                let ki = b.k[i];
                if ki == 0 {
                    *gi = 0.0;
                    continue;
                }
                let mut other = 1.0;
                for (axis, &kj) in b.k.iter().enumerate() {
                    if axis != i {
                        other *= tables.cos(axis, kj);
                    }
                }
                *gi = -(ki as f64) * PI / ws.lengths()[i] * tables.sin(i, ki) * other / b.h_k;
            }
        }
    }
}

/// Per-axis `cos(j pi (w_i - o_i) / L_i)` and `sin(...)` for `j < k_max`.
struct AxisTables {
    k_max: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AxisTables {
    fn new(ws: &Workspace, k_max: usize, w: &[f64], with_sin: bool) -> Self {
        let v = ws.dims();
        let mut cos = vec![0.0; v * k_max];
        let mut sin = if with_sin { vec![0.0; v * k_max] } else { Vec::new() };
        for axis in 0..v {
            let theta = PI * (w[axis] - ws.offsets()[axis]) / ws.lengths()[axis];
            let (s1, c1) = theta.sin_cos();
            // angle addition from (cos, sin) of theta
            let (mut c, mut s) = (1.0, 0.0);
            for j in 0..k_max {
                cos[axis * k_max + j] = c;
                if with_sin {
                    sin[axis * k_max + j] = s;
                }
                (c, s) = (c * c1 - s * s1, s * c1 + c * s1);
            }
        }
        Self { k_max, cos, sin }
    }

    #[inline]
    fn axis_cos(&self, axis: usize) -> &[f64] {
        &self.cos[axis * self.k_max..(axis + 1) * self.k_max]
    }

    #[inline]
    fn cos(&self, axis: usize, j: usize) -> f64 {
        self.cos[axis * self.k_max + j]
    }

    #[inline]
    fn sin(&self, axis: usize, j: usize) -> f64 {
        self.sin[axis * self.k_max + j]
    }
}

/// `F_k(w) = (1/h_k) prod_i cos((w_i - o_i) k_i pi / L_i)`.
pub fn fourier_basis(k: &BasisIndex, w: &[f64], ws: &Workspace) -> Result<f64> {
    ws.check(w)?;
    check_index(k, ws)?;
    let mut prod = 1.0;
    for (i, &ki) in k.k.iter().enumerate() {
        prod *= ((w[i] - ws.offsets()[i]) * ki as f64 * PI / ws.lengths()[i]).cos();
    }
    Ok(prod / k.h_k)
}

/// Analytic gradient of [`fourier_basis`] with respect to `w`.
pub fn basis_gradient(k: &BasisIndex, w: &[f64], ws: &Workspace) -> Result<Vec<f64>> {
    ws.check(w)?;
    check_index(k, ws)?;
    let v = ws.dims();
    let args: Vec<f64> = (0..v)
        .map(|i| (w[i] - ws.offsets()[i]) * k.k[i] as f64 * PI / ws.lengths()[i])
        .collect();
    Ok((0..v)
        .map(|i| {
            let other: f64 = (0..v).filter(|&j| j != i).map(|j| args[j].cos()).product();
            -(k.k[i] as f64 * PI / ws.lengths()[i]) * args[i].sin() * other / k.h_k
        })
        .collect())
}

fn check_index(k: &BasisIndex, ws: &Workspace) -> Result<()> {
    if k.k.len() != ws.dims() {
        return Err(Error::contract(format!(
            "basis index has {} components, workspace has {} dimensions",
            k.k.len(),
            ws.dims()
        )));
    }
    Ok(())
}

/// How knot states map to workspace points: `g(x) = I_p x`.
///
/// `knots` is row-major with `state_dim` entries per knot.
#[derive(Debug, Clone, Copy)]
pub struct KnotView<'a> {
    pub knots: &'a [f64],
    pub state_dim: usize,
    pub selector: &'a [usize],
}

impl<'a> KnotView<'a> {
    pub fn new(knots: &'a [f64], state_dim: usize, selector: &'a [usize]) -> Self {
        Self {
            knots,
            state_dim,
            selector,
        }
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len() / self.state_dim
    }

    pub fn position(&self, t: usize) -> Vec<f64> {
        let x = &self.knots[t * self.state_dim..(t + 1) * self.state_dim];
        self.selector.iter().map(|&i| x[i]).collect()
    }
}

fn check_view(view: &KnotView<'_>, ws: &Workspace, n_intervals: usize) -> Result<()> {
    if n_intervals == 0 {
        return Err(Error::contract("number of intervals N must be at least 1"));
    }
    if view.state_dim == 0 || view.knots.len() % view.state_dim != 0 {
        return Err(Error::contract("knot buffer length is not a multiple of the state dimension"));
    }
    if view.num_knots() < n_intervals {
        return Err(Error::contract(format!(
            "need at least {n_intervals} knots, got {}",
            view.num_knots()
        )));
    }
    if view.selector.len() != ws.dims() || view.selector.iter().any(|&i| i >= view.state_dim) {
        return Err(Error::contract("position selector does not match state and workspace dimensions"));
    }
    Ok(())
}

/// Knots handled per parallel task, sharing scratch buffers.
const KNOT_BLOCK: usize = 8;

/// Per-knot basis values for knots `0..n_intervals`, row-major `n_intervals x |K|`.
fn knot_basis_values(view: &KnotView<'_>, ws: &Workspace, basis: &BasisSet, n_intervals: usize) -> Vec<f64> {
    let kn = basis.len();
    let mut values = vec![0.0; n_intervals * kn];
    par::for_each_chunk(&mut values, kn * KNOT_BLOCK, |blk, rows| {
        let mut p = vec![0.0; ws.dims()];
        for (i, row) in rows.chunks_mut(kn).enumerate() {
            let x = &view.knots[(blk * KNOT_BLOCK + i) * view.state_dim..];
            for (pa, &sel) in p.iter_mut().zip(view.selector) {
                *pa = x[sel];
            }
            basis.eval_into(ws, &p, row);
        }
    });
    values
}

fn sum_rows(values: &[f64], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for row in values.chunks(width) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

/// Left-Riemann coefficients `c_k = (1/N) sum_{t<N} F_k(g(x_t))` without
/// the workspace check. Used on solver iterates that may leave the box.
pub fn coefficients_unchecked(
    view: &KnotView<'_>,
    ws: &Workspace,
    basis: &BasisSet,
    n_intervals: usize,
) -> Vec<f64> {
    let values = knot_basis_values(view, ws, basis, n_intervals);
    let scale = 1.0 / n_intervals as f64;
    sum_rows(&values, basis.len())
        .into_iter()
        .map(|s| s * scale)
        .collect()
}

/// Trajectory coefficients over knots `0..n_intervals`; every used knot must
/// map inside the workspace.
pub fn trajectory_coefficients(
    view: &KnotView<'_>,
    ws: &Workspace,
    basis: &BasisSet,
    n_intervals: usize,
) -> Result<Vec<f64>> {
    check_view(view, ws, n_intervals)?;
    check_knots_inside(view, ws, n_intervals)?;
    Ok(coefficients_unchecked(view, ws, basis, n_intervals))
}

fn check_knots_inside(view: &KnotView<'_>, ws: &Workspace, n_intervals: usize) -> Result<()> {
    for t in 0..n_intervals {
        if let Err(Error::OutsideWorkspace {
            axis,
            value,
            lower,
            upper,
        }) = ws.check(&view.position(t))
        {
            return Err(Error::KnotOutsideWorkspace {
                knot: t,
                axis,
                value,
                lower,
                upper,
            });
        }
    }
    Ok(())
}

/// `sum_k Lambda_k (c_k - phi_k)^2`.
pub fn ergodic_metric(c: &[f64], phi_k: &[f64], basis: &BasisSet) -> Result<f64> {
    if c.len() != basis.len() || phi_k.len() != basis.len() {
        return Err(Error::contract(format!(
            "coefficient lengths {} and {} do not match basis size {}",
            c.len(),
            phi_k.len(),
            basis.len()
        )));
    }
    Ok(c.iter()
        .zip(phi_k)
        .zip(basis.indices())
        .map(|((ci, pi), b)| b.lambda_k * (ci - pi) * (ci - pi))
        .sum())
}

/// Metric value and its gradient with respect to every knot state.
///
/// The gradient buffer has the same layout as `view.knots`; knots at or after
/// `n_intervals` receive zero.
pub fn metric_and_gradient(
    view: &KnotView<'_>,
    ws: &Workspace,
    basis: &BasisSet,
    phi_k: &[f64],
    n_intervals: usize,
) -> Result<(f64, Vec<f64>)> {
    let c = coefficients_unchecked(view, ws, basis, n_intervals);
    let metric = ergodic_metric(&c, phi_k, basis)?;
    let scale = 2.0 / n_intervals as f64;
    let weights: Vec<f64> = c
        .iter()
        .zip(phi_k)
        .zip(basis.indices())
        .map(|((ci, pi), b)| scale * b.lambda_k * (ci - pi) / b.h_k)
        .collect();
    let n = view.state_dim;
    let v = ws.dims();
    let kn = basis.len();
    let mut grad = vec![0.0; view.knots.len()];
    par::for_each_chunk(&mut grad[..n_intervals * n], n * KNOT_BLOCK, |blk, gx| {
        let mut p = vec![0.0; v];
        let mut scratch = vec![0.0; 2 * kn];
        let mut g = vec![0.0; v];
        for (i, gx) in gx.chunks_mut(n).enumerate() {
            let x = &view.knots[(blk * KNOT_BLOCK + i) * n..];
            for (pa, &sel) in p.iter_mut().zip(view.selector) {
                *pa = x[sel];
            }
            basis.scaled_gradient_into(ws, &p, &weights, &mut scratch, &mut g);
            for (axis, &sel) in view.selector.iter().enumerate() {
                gx[sel] += g[axis];
            }
        }
    });
    Ok((metric, grad))
}

/// Accumulated coefficient defect `z`, with `z(t_0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedErgodicState {
    pub z: Vec<f64>,
}

impl ExtendedErgodicState {
    pub fn zeros(len: usize) -> Self {
        Self { z: vec![0.0; len] }
    }

    /// `(1/t_f^2) ||z||^2_Lambda`.
    pub fn metric(&self, basis: &BasisSet, t_f: f64) -> f64 {
        self.z
            .iter()
            .zip(basis.indices())
            .map(|(z, b)| b.lambda_k * z * z)
            .sum::<f64>()
            / (t_f * t_f)
    }
}

/// Cumulative extended state `z_0 = 0, z_{t+1} = z_t + (F(g(x_t)) - phi) dt`
/// for `t = 0..n_intervals`, returned as `n_intervals + 1` rows.
pub fn extended_state_trajectory(
    view: &KnotView<'_>,
    phi_k: &[f64],
    ws: &Workspace,
    basis: &BasisSet,
    n_intervals: usize,
    t_f: f64,
) -> Result<Vec<ExtendedErgodicState>> {
    check_view(view, ws, n_intervals)?;
    if !(t_f > 0.0) {
        return Err(Error::contract(format!("t_f must be positive, got {t_f}")));
    }
    if phi_k.len() != basis.len() {
        return Err(Error::contract("phi coefficient length does not match basis"));
    }
    check_knots_inside(view, ws, n_intervals)?;
    let dt = t_f / n_intervals as f64;
    let kn = basis.len();
    let values = knot_basis_values(view, ws, basis, n_intervals);
    let mut out = Vec::with_capacity(n_intervals + 1);
    let mut z = ExtendedErgodicState::zeros(kn);
    out.push(z.clone());
    for row in values.chunks(kn) {
        for ((zk, f), p) in z.z.iter_mut().zip(row).zip(phi_k) {
            *zk += (f - p) * dt;
        }
        out.push(z.clone());
    }
    Ok(out)
}

/// Terminal extended state `z(t_f)` under the left-Riemann sum.
pub fn extended_state_terminal(
    view: &KnotView<'_>,
    phi_k: &[f64],
    ws: &Workspace,
    basis: &BasisSet,
    n_intervals: usize,
    t_f: f64,
) -> Result<ExtendedErgodicState> {
    let mut traj = extended_state_trajectory(view, phi_k, ws, basis, n_intervals, t_f)?;
    Ok(traj.pop().expect("trajectory has at least the initial state"))
}
