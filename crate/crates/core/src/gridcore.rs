//! Rectilinear N-dimensional grids, multilinear interpolation and
//! finite-difference derivatives.
//!
//! Node storage is row-major with the last axis varying fastest. Periodic
//! axes identify `lo` with `hi`, so a periodic axis with `n` nodes has
//! spacing `(hi - lo) / n` and no duplicated end node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("axis {axis}: need at least 3 nodes, got {n}")]
    TooFewNodes { axis: usize, n: usize },
    #[error("axis {axis}: bounds [{lo}, {hi}] are empty or not finite")]
    BadBounds { axis: usize, lo: f64, hi: f64 },
    #[error("grid must have at least one axis")]
    NoAxes,
    #[error("query has {got} coordinates, grid has {expected} axes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {coord} outside axis {axis}; clamped value {clamped}")]
    OutOfBounds {
        axis: usize,
        coord: f64,
        /// Interpolant evaluated at the clamped query, for callers that
        /// prefer clamping over failing.
        clamped: f64,
    },
    #[error("non-finite query coordinate on axis {axis}")]
    NonFinite { axis: usize },
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite value at node {index}")]
    NonFiniteValue { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lo,
            hi,
            n,
            periodic: false,
        }
    }

    pub fn periodic(lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lo,
            hi,
            n,
            periodic: true,
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.n as f64
        } else {
            (self.hi - self.lo) / (self.n - 1) as f64
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    fn validate(&self, axis: usize) -> Result<(), GridError> {
        if self.n < 3 {
            return Err(GridError::TooFewNodes { axis, n: self.n });
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(GridError::BadBounds {
                axis,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    /// Wraps a coordinate into `[lo, hi)`. Identity on non-periodic axes.
    pub fn wrap(&self, x: f64) -> f64 {
        if !self.periodic {
            return x;
        }
        let period = self.hi - self.lo;
        let mut y = (x - self.lo).rem_euclid(period) + self.lo;
        if y >= self.hi {
            y = self.lo;
        }
        y
    }
}

/// Cell location of a coordinate along one axis: lower node, upper node and
/// the weight of the upper node.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: usize,
    hi: usize,
    w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct Grid {
    axes: Vec<Axis>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl TryFrom<Vec<Axis>> for Grid {
    type Error = GridError;

    fn try_from(axes: Vec<Axis>) -> Result<Self, GridError> {
        Grid::new(axes)
    }
}

impl From<Grid> for Vec<Axis> {
    fn from(g: Grid) -> Self {
        g.axes
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::NoAxes);
        }
        for (i, a) in axes.iter().enumerate() {
            a.validate(i)?;
        }
        Ok(Self::build_unchecked(axes))
    }

    fn build_unchecked(axes: Vec<Axis>) -> Self {
        let spacing = axes.iter().map(Axis::spacing).collect();
        let mut strides = vec![1usize; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].n;
        }
        let len = axes.iter().map(|a| a.n).product();
        Self {
            axes,
            spacing,
            strides,
            len,
        }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for (k, s) in self.strides.iter().enumerate() {
            out[k] = index / s;
            index %= s;
        }
        out
    }

    pub fn node_coords(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.node(i))
            .collect()
    }

    /// Index of node `i` on `axis` shifted by `delta`, wrapping on periodic
    /// axes. `None` if it falls off a non-periodic axis.
    fn shifted(&self, axis: usize, i: usize, delta: isize) -> Option<usize> {
        let n = self.axes[axis].n as isize;
        let j = i as isize + delta;
        if self.axes[axis].periodic {
            Some(j.rem_euclid(n) as usize)
        } else if (0..n).contains(&j) {
            Some(j as usize)
        } else {
            None
        }
    }

    /// Brackets `x` on every axis. Out-of-range coordinates on non-periodic
    /// axes are clamped; the first offending axis is reported.
    fn bracket(&self, x: &[f64]) -> Result<(Vec<Bracket>, Option<(usize, f64)>), GridError> {
        if x.len() != self.ndim() {
            return Err(GridError::DimensionMismatch {
                expected: self.ndim(),
                got: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.ndim());
        let mut violation = None;
        for (k, (a, &xk)) in self.axes.iter().zip(x).enumerate() {
            if !xk.is_finite() {
                return Err(GridError::NonFinite { axis: k });
            }
            let h = self.spacing[k];
            if a.periodic {
                let t = (a.wrap(xk) - a.lo) / h;
                let lo = (t.floor() as usize).min(a.n - 1);
                let w = (t - lo as f64).clamp(0.0, 1.0);
                out.push(Bracket {
                    lo,
                    hi: (lo + 1) % a.n,
                    w,
                });
            } else {
                let slack = 1e-9 * h;
                if (xk < a.lo - slack || xk > a.hi + slack) && violation.is_none() {
                    violation = Some((k, xk));
                }
                let t = ((xk - a.lo) / h).clamp(0.0, (a.n - 1) as f64);
                let lo = (t.floor() as usize).min(a.n - 2);
                out.push(Bracket {
                    lo,
                    hi: lo + 1,
                    w: t - lo as f64,
                });
            }
        }
        Ok((out, violation))
    }

    /// Visits the `2^d` cell corners of a bracketed query with their weights.
    fn for_each_corner(&self, br: &[Bracket], mut f: impl FnMut(usize, f64)) {
        let d = br.len();
        for mask in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for (k, b) in br.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    idx += b.hi * self.strides[k];
                    w *= b.w;
                } else {
                    idx += b.lo * self.strides[k];
                    w *= 1.0 - b.w;
                }
            }
            if w != 0.0 {
                f(idx, w);
            }
        }
    }
}

/// Samples of a scalar function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue { index });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, GridError> {
        let values = (0..grid.len()).map(|i| f(&grid.node_coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multilinear interpolation. Outside a non-periodic axis this returns
    /// [`GridError::OutOfBounds`] carrying the clamped interpolant.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64, GridError> {
        let (br, violation) = self.grid.bracket(x)?;
        let mut acc = 0.0;
        self.grid
            .for_each_corner(&br, |i, w| acc += w * self.values[i]);
        match violation {
            None => Ok(acc),
            Some((axis, coord)) => Err(GridError::OutOfBounds {
                axis,
                coord,
                clamped: acc,
            }),
        }
    }

    /// Interpolates at the clamped query; the flag is set when clamping
    /// happened.
    pub fn interpolate_clamped(&self, x: &[f64]) -> Result<(f64, bool), GridError> {
        match self.interpolate(x) {
            Ok(v) => Ok((v, false)),
            Err(GridError::OutOfBounds { clamped, .. }) => Ok((clamped, true)),
            Err(e) => Err(e),
        }
    }

    /// Derivative along `axis` at a node: central differences in the
    /// interior and on periodic axes, one-sided at non-periodic ends.
    pub fn node_derivative(&self, index: usize, axis: usize) -> f64 {
        let g = &self.grid;
        let stride = g.strides[axis];
        let i = (index / stride) % g.axes[axis].n;
        let base = index - i * stride;
        let h = g.spacing[axis];
        let at = |j: usize| self.values[base + j * stride];
        match (g.shifted(axis, i, -1), g.shifted(axis, i, 1)) {
            (Some(l), Some(r)) => (at(r) - at(l)) / (2.0 * h),
            (None, Some(r)) => (at(r) - at(i)) / h,
            (Some(l), None) => (at(i) - at(l)) / h,
            (None, None) => 0.0,
        }
    }

    /// Gradient at an arbitrary point: node derivatives interpolated
    /// multilinearly to `x`.
    pub fn gradient_at(&self, x: &[f64]) -> Result<Vec<f64>, GridError> {
        let (br, violation) = self.grid.bracket(x)?;
        let mut grad = vec![0.0; self.grid.ndim()];
        self.grid.for_each_corner(&br, |i, w| {
            for (k, gk) in grad.iter_mut().enumerate() {
                *gk += w * self.node_derivative(i, k);
            }
        });
        match violation {
            None => Ok(grad),
            Some((axis, coord)) => {
                let clamped = self.interpolate_clamped(x)?.0;
                Err(GridError::OutOfBounds {
                    axis,
                    coord,
                    clamped,
                })
            }
        }
    }

    /// Gradient at the clamped query plus an out-of-range flag.
    pub fn gradient_clamped(&self, x: &[f64]) -> Result<(Vec<f64>, bool), GridError> {
        let (br, violation) = self.grid.bracket(x)?;
        let mut grad = vec![0.0; self.grid.ndim()];
        self.grid.for_each_corner(&br, |i, w| {
            for (k, gk) in grad.iter_mut().enumerate() {
                *gk += w * self.node_derivative(i, k);
            }
        });
        Ok((grad, violation.is_some()))
    }

    /// One-sided (backward, forward) differences per axis at a node.
    /// Non-periodic ends use a linearly extrapolated ghost node, so the
    /// missing side repeats the available one.
    pub fn upwind_derivatives(&self, index: usize) -> Vec<(f64, f64)> {
        (0..self.grid.ndim())
            .map(|k| upwind_pair(&self.grid, &self.values, index, k))
            .collect()
    }

    /// Linear combination `a * self + b * other` on the same grid.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field, GridError> {
        if other.values.len() != self.values.len() {
            return Err(GridError::LengthMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Field::new(self.grid.clone(), values)
    }
}

pub(crate) fn upwind_pair(grid: &Grid, values: &[f64], index: usize, axis: usize) -> (f64, f64) {
    let stride = grid.strides[axis];
    let i = (index / stride) % grid.axes[axis].n;
    let base = index - i * stride;
    let h = grid.spacing[axis];
    let v = values[index];
    let left = grid.shifted(axis, i, -1).map(|l| values[base + l * stride]);
    let right = grid.shifted(axis, i, 1).map(|r| values[base + r * stride]);
    match (left, right) {
        (Some(l), Some(r)) => ((v - l) / h, (r - v) / h),
        (None, Some(r)) => ((r - v) / h, (r - v) / h),
        (Some(l), None) => ((v - l) / h, (v - l) / h),
        (None, None) => (0.0, 0.0),
    }
}

/// Per-axis node derivatives precomputed once for repeated gradient
/// queries against an immutable field.
#[derive(Debug, Clone)]
pub struct GradientCache {
    components: Vec<Field>,
}

impl GradientCache {
    pub fn new(field: &Field) -> Self {
        let g = field.grid();
        let components = (0..g.ndim())
            .map(|k| Field {
                grid: g.clone(),
                values: (0..g.len()).map(|i| field.node_derivative(i, k)).collect(),
            })
            .collect();
        Self { components }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Result<(Vec<f64>, bool), GridError> {
        let mut out = Vec::with_capacity(self.components.len());
        let mut flagged = false;
        for c in &self.components {
            let (v, f) = c.interpolate_clamped(x)?;
            flagged |= f;
            out.push(v);
        }
        Ok((out, flagged))
    }
}
