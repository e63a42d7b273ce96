//! Bilinear sampling and splatting, ego-motion compensation of frame stacks
//! and warping by dense flow.
//!
//! Sampling and splatting share one domain: a coordinate is usable iff it
//! lies in `[0, W-1] × [0, H-1]`. Outside that box sampling returns 0 and
//! splatting drops the whole contribution, which keeps the two operators
//! exact adjoints of each other.

use rayon::prelude::*;

use crate::camera::{interpolate_pose, DepthMap, FlowField, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::events::EventFrameStack;
use crate::grid::{Grid, Tensor3};
use crate::linalg;
use crate::scalar::Real;

/// Lower neighbour, upper neighbour and fractional weight along one axis.
#[inline]
fn axis_cell<T: Real>(x: T, n: usize) -> Option<(usize, usize, T)> {
    if !(x >= T::zero() && x <= T::from_usize_lossy(n - 1)) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, T::zero()));
    }
    let i0 = x.floor().to_usize().unwrap_or(0).min(n - 2);
    Some((i0, i0 + 1, x - T::from_usize_lossy(i0)))
}

/// Bilinear neighbourhood of a continuous coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Footprint<T> {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: T,
    pub fy: T,
}

impl<T: Real> Footprint<T> {
    #[inline]
    pub fn locate(x: T, y: T, height: usize, width: usize) -> Option<Self> {
        let (x0, x1, fx) = axis_cell(x, width)?;
        let (y0, y1, fy) = axis_cell(y, height)?;
        Some(Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
        })
    }

    /// `(index, weight, ∂weight/∂x, ∂weight/∂y)` for the four neighbours.
    #[inline]
    pub fn taps(&self, width: usize) -> [(usize, T, T, T); 4] {
        let one = T::one();
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.y0 * width + self.x0, (one - fx) * (one - fy), -(one - fy), -(one - fx)),
            (self.y0 * width + self.x1, fx * (one - fy), one - fy, -fx),
            (self.y1 * width + self.x0, (one - fx) * fy, -fy, one - fx),
            (self.y1 * width + self.x1, fx * fy, fy, fx),
        ]
    }
}

/// Bilinear value at `(x, y)` of a row-major `height`×`width` plane.
#[inline]
pub fn sample_plane<T: Real>(data: &[T], height: usize, width: usize, x: T, y: T) -> Option<T> {
    let fp = Footprint::locate(x, y, height, width)?;
    let mut acc = T::zero();
    for (i, w, _, _) in fp.taps(width) {
        acc += w * data[i];
    }
    Some(acc)
}

/// Bilinear value and its partial derivatives `(v, ∂v/∂x, ∂v/∂y)`.
#[inline]
pub fn sample_plane_grad<T: Real>(
    data: &[T],
    height: usize,
    width: usize,
    x: T,
    y: T,
) -> Option<(T, T, T)> {
    let fp = Footprint::locate(x, y, height, width)?;
    let (mut v, mut dx, mut dy) = (T::zero(), T::zero(), T::zero());
    for (i, w, wx, wy) in fp.taps(width) {
        v += w * data[i];
        dx += wx * data[i];
        dy += wy * data[i];
    }
    Some((v, dx, dy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub values: Vec<T>,
    pub in_bounds: Vec<bool>,
}

fn check_coords<T: Real>(coords: &[(T, T)]) -> Result<()> {
    if let Some(i) = coords
        .iter()
        .position(|(x, y)| !(x.is_finite() && y.is_finite()))
    {
        return Err(Error::NonFinite(format!("coordinate {i}")));
    }
    Ok(())
}

/// Samples `field` at each coordinate; out-of-domain samples are 0 and flagged.
pub fn bilinear_sample<T: Real>(field: &Grid<T>, coords: &[(T, T)]) -> Result<Samples<T>> {
    check_coords(coords)?;
    if !field.is_finite() {
        return Err(Error::NonFinite("sampled field".into()));
    }
    let (h, w) = field.dims();
    let mut values = Vec::with_capacity(coords.len());
    let mut in_bounds = Vec::with_capacity(coords.len());
    for &(x, y) in coords {
        match sample_plane(field.as_slice(), h, w, x, y) {
            Some(v) => {
                values.push(v);
                in_bounds.push(true);
            }
            None => {
                values.push(T::zero());
                in_bounds.push(false);
            }
        }
    }
    Ok(Samples { values, in_bounds })
}

/// Jacobian `(∂v/∂x, ∂v/∂y)` of [`bilinear_sample`] per coordinate (zero outside).
pub fn bilinear_sample_jacobian<T: Real>(field: &Grid<T>, coords: &[(T, T)]) -> Result<Vec<(T, T)>> {
    check_coords(coords)?;
    let (h, w) = field.dims();
    Ok(coords
        .iter()
        .map(|&(x, y)| {
            sample_plane_grad(field.as_slice(), h, w, x, y)
                .map(|(_, dx, dy)| (dx, dy))
                .unwrap_or((T::zero(), T::zero()))
        })
        .collect())
}

/// Adds `value` at `(x, y)` into a row-major plane with bilinear weights.
#[inline]
pub fn splat_into<T: Real>(plane: &mut [T], height: usize, width: usize, x: T, y: T, value: T) -> bool {
    match Footprint::locate(x, y, height, width) {
        Some(fp) => {
            for (i, w, _, _) in fp.taps(width) {
                plane[i] += w * value;
            }
            true
        }
        None => false,
    }
}

/// Forward-splats values onto an `height`×`width` grid; the adjoint of sampling.
pub fn splat_bilinear<T: Real>(values: &[T], coords: &[(T, T)], height: usize, width: usize) -> Result<Grid<T>> {
    if values.len() != coords.len() {
        return Err(Error::shape(format!(
            "{} values vs {} coordinates",
            values.len(),
            coords.len()
        )));
    }
    check_coords(coords)?;
    let mut out = Grid::zeros(height, width);
    for (&v, &(x, y)) in values.iter().zip(coords) {
        splat_into(out.as_mut_slice(), height, width, x, y, v);
    }
    Ok(out)
}

/// Stack warped to the end of its window.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedStack<T> {
    /// Warped frames, one per stack channel.
    pub per_bin: Tensor3<T>,
    /// Sum of `per_bin` over channels.
    pub collapsed: Grid<T>,
    /// False where any channel's warp left the sensor.
    pub valid_mask: Grid<bool>,
}

impl<T: Real> CompensatedStack<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.collapsed.dims()
    }

    /// Packs `per_bin`, `collapsed` and the validity mask (as 0/1) into one tensor.
    pub fn to_tensor(&self) -> Tensor3<T> {
        let (c, h, w) = self.per_bin.dims();
        let mut data = Vec::with_capacity((c + 2) * h * w);
        data.extend_from_slice(self.per_bin.as_slice());
        data.extend_from_slice(self.collapsed.as_slice());
        data.extend(
            self.valid_mask
                .as_slice()
                .iter()
                .map(|&v| if v { T::one() } else { T::zero() }),
        );
        Tensor3::from_vec(c + 2, h, w, data).expect("dims")
    }

    /// Inverse of [`CompensatedStack::to_tensor`].
    pub fn from_tensor(t: &Tensor3<T>) -> Result<Self> {
        let (c, h, w) = t.dims();
        if c < 3 {
            return Err(Error::shape(format!(
                "compensated tensor needs >= 3 channels, got {c}"
            )));
        }
        let n = c - 2;
        let per_bin = Tensor3::from_vec(n, h, w, t.as_slice()[..n * h * w].to_vec())?;
        let collapsed = t.channel_grid(n);
        let valid_mask = t.channel_grid(n + 1).map(|v| *v > T::lit(0.5));
        Ok(Self {
            per_bin,
            collapsed,
            valid_mask,
        })
    }
}

/// Backward-warps each channel with `warp(channel, y, x) -> source coordinate`.
fn compensate_with<T, F>(stack: &EventFrameStack<T>, warp: F) -> CompensatedStack<T>
where
    T: Real,
    F: Fn(usize, usize, usize) -> Option<(T, T)> + Sync,
{
    let (c, h, w) = stack.data().dims();
    let mut per_bin = Tensor3::zeros(c, h, w);
    let mut valid = vec![true; h * w];
    for ch in 0..c {
        let frame = stack.frame(ch);
        let rows: Vec<(Vec<T>, Vec<bool>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut vals = Vec::with_capacity(w);
                let mut ok = Vec::with_capacity(w);
                for x in 0..w {
                    let s = warp(ch, y, x).and_then(|(sx, sy)| sample_plane(frame, h, w, sx, sy));
                    vals.push(s.unwrap_or(T::zero()));
                    ok.push(s.is_some());
                }
                (vals, ok)
            })
            .collect();
        let out = per_bin.channel_mut(ch);
        for (y, (vals, ok)) in rows.into_iter().enumerate() {
            out[y * w..(y + 1) * w].copy_from_slice(&vals);
            for (v, o) in valid[y * w..(y + 1) * w].iter_mut().zip(ok) {
                *v &= o;
            }
        }
    }
    let collapsed = per_bin.channel_sum();
    CompensatedStack {
        per_bin,
        collapsed,
        valid_mask: Grid::from_vec(h, w, valid).expect("dims"),
    }
}

/// Projection of `p`, written as an offset from pixel `(x, y)` whose unit-depth
/// ray is `ray`, so that an unmoved ray lands exactly back on its pixel.
#[inline]
fn project_from<T: Real>(k: &Intrinsics<T>, x: T, y: T, ray: &[T; 3], p: &[T; 3]) -> Option<(T, T)> {
    if p[2] <= T::zero() {
        return None;
    }
    Some((x + k.fx * (p[0] / p[2] - ray[0]), y + k.fy * (p[1] / p[2] - ray[1])))
}

fn bin_poses<T: Real>(stack: &EventFrameStack<T>, total: &Pose<T>) -> Vec<Pose<T>> {
    let bins = stack.config().bins;
    (0..bins)
        .map(|b| interpolate_pose(total, b, bins).expect("b < bins"))
        .collect()
}

/// Pure-rotation compensation: `p(b) ~ K·R(b)·K⁻¹·p_mc`.
pub fn compensate_rotational<T: Real>(
    stack: &EventFrameStack<T>,
    k: &Intrinsics<T>,
    total: &Pose<T>,
) -> Result<CompensatedStack<T>> {
    if !total.has_zero_translation(T::lit(1e-12)) {
        return Err(Error::invalid(
            "pose has nonzero translation; use compensate_full with a depth map",
        ));
    }
    let poses = bin_poses(stack, total);
    let cfg = *stack.config();
    Ok(compensate_with(stack, |ch, y, x| {
        let pose = &poses[cfg.bin_of_channel(ch)];
        let (px, py) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
        let ray = k.backproject(px, py);
        project_from(k, px, py, &ray, &pose.rotate(&ray))
    }))
}

/// Full 6-DoF compensation using depth at the target timestamp.
///
/// With an exactly zero translation the depth cancels and the computation is
/// the same as [`compensate_rotational`], bit for bit.
pub fn compensate_full<T: Real>(
    stack: &EventFrameStack<T>,
    k: &Intrinsics<T>,
    total: &Pose<T>,
    depth: &DepthMap<T>,
) -> Result<CompensatedStack<T>> {
    let cfg = *stack.config();
    if depth.dims() != (cfg.height, cfg.width) {
        return Err(Error::shape(format!(
            "depth {:?} vs stack {}x{}",
            depth.dims(),
            cfg.height,
            cfg.width
        )));
    }
    let poses = bin_poses(stack, total);
    let rotation_only = total.translation().iter().all(|v| *v == T::zero());
    Ok(compensate_with(stack, |ch, y, x| {
        let pose = &poses[cfg.bin_of_channel(ch)];
        let (px, py) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
        let ray = k.backproject(px, py);
        let p = if rotation_only {
            pose.rotate(&ray)
        } else {
            pose.transform(&linalg::scale_vec(&ray, depth.at(y, x)))
        };
        project_from(k, px, py, &ray, &p)
    }))
}

/// Compensation under a global image-plane translation: `displacement` is the
/// total `t1 → t0` shift in pixels, interpolated per bin like a pose.
pub fn compensate_translation<T: Real>(stack: &EventFrameStack<T>, displacement: (T, T)) -> CompensatedStack<T> {
    let cfg = *stack.config();
    compensate_with(stack, |ch, y, x| {
        let a: T = crate::camera::bin_alpha(cfg.bin_of_channel(ch), cfg.bins);
        Some((
            T::from_usize_lossy(x) + a * displacement.0,
            T::from_usize_lossy(y) + a * displacement.1,
        ))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warped<T> {
    pub image: Grid<T>,
    pub valid: Grid<bool>,
}

/// `out(p) = field(p + flow(p))` by backward bilinear sampling.
pub fn warp_by_flow<T: Real>(field: &Grid<T>, flow: &FlowField<T>) -> Result<Warped<T>> {
    field.check_dims(&flow.u, "field vs flow")?;
    let (h, w) = field.dims();
    let mut image = Grid::zeros(h, w);
    let mut valid = Grid::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            let sx = T::from_usize_lossy(x) + u;
            let sy = T::from_usize_lossy(y) + v;
            if let Some(s) = sample_plane(field.as_slice(), h, w, sx, sy) {
                *image.get_mut(y, x) = s;
                *valid.get_mut(y, x) = true;
            }
        }
    }
    Ok(Warped { image, valid })
}
