//! Image of warped events, contrast objectives and motion fitting.

use rayon::prelude::*;

use crate::camera::{so3_exp, so3_left_jacobian, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::events::{Event, EventWindow};
use crate::grid::Grid;
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::Real;
use crate::warp::{sample_plane_grad, splat_into};

const CHUNK: usize = 4096;
const NS_PER_S: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    /// Camera angular velocity (rad/s).
    Rotation3,
    /// Global image-plane velocity (px/s).
    Flow2,
}

impl MotionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rotation3" => Ok(Self::Rotation3),
            "flow2" => Ok(Self::Flow2),
            other => Err(Error::invalid(format!("unknown motion model '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Rotation3 => "rotation3",
            Self::Flow2 => "flow2",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Rotation3 => 3,
            Self::Flow2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel<T> {
    kind: MotionKind,
    params: Vec<T>,
}

impl<T: Real> MotionModel<T> {
    pub fn new(kind: MotionKind, params: Vec<T>) -> Result<Self> {
        if params.len() != kind.dim() {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                kind.name(),
                kind.dim(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("motion parameters".into()));
        }
        Ok(Self { kind, params })
    }

    pub fn zero(kind: MotionKind) -> Self {
        Self {
            kind,
            params: vec![T::zero(); kind.dim()],
        }
    }

    pub fn kind(&self) -> MotionKind {
        self.kind
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }
}

/// Per-window constants of a motion model, shared by all events.
enum Displacer<T> {
    Rotation {
        k: Intrinsics<T>,
        omega: Vec3<T>,
    },
    Flow {
        v: [T; 2],
    },
}

/// Displaced coordinates and their Jacobian rows w.r.t. the parameters.
struct Displaced<T> {
    x: T,
    y: T,
    dx: [T; 3],
    dy: [T; 3],
}

impl<T: Real> Displacer<T> {
    fn new(k: &Intrinsics<T>, model: &MotionModel<T>) -> Self {
        let p = &model.params;
        match model.kind {
            MotionKind::Rotation3 => Self::Rotation {
                k: *k,
                omega: [p[0], p[1], p[2]],
            },
            MotionKind::Flow2 => Self::Flow { v: [p[0], p[1]] },
        }
    }

    /// `None` when the displaced ray points behind the camera.
    #[inline]
    fn displace(&self, e: &Event, t_ref: i64, jacobian: bool) -> Option<Displaced<T>> {
        let tau = T::lit((t_ref - e.t) as f64 / NS_PER_S);
        let (x, y) = (T::from(e.x).unwrap(), T::from(e.y).unwrap());
        let zero = T::zero();
        match self {
            Self::Flow { v } => Some(Displaced {
                x: x + v[0] * tau,
                y: y + v[1] * tau,
                dx: [tau, zero, zero],
                dy: [zero, tau, zero],
            }),
            Self::Rotation { k, omega } => {
                // the camera turns by ω·τ between the event and t_ref, so the
                // ray is counter-rotated: r' = exp(−ω τ) r
                let phi = linalg::scale_vec(omega, -tau);
                let r = k.backproject(x, y);
                let rot = so3_exp(&phi);
                let rp = linalg::mul_vec(&rot, &r);
                if rp[2] <= T::lit(1e-9) {
                    return None;
                }
                let iz = T::one() / rp[2];
                // written as an offset so a zero rotation is bit-exact
                let px = x + k.fx * (rp[0] * iz - r[0]);
                let py = y + k.fy * (rp[1] * iz - r[1]);
                let (mut dx, mut dy) = ([zero; 3], [zero; 3]);
                if jacobian {
                    // ∂r'/∂ω = τ [r']ₓ J_l(φ)
                    let d: Mat3<T> = linalg::scale(&linalg::mul(&linalg::hat(&rp), &so3_left_jacobian(&phi)), tau);
                    let jx = [k.fx * iz, zero, -k.fx * rp[0] * iz * iz];
                    let jy = [zero, k.fy * iz, -k.fy * rp[1] * iz * iz];
                    for c in 0..3 {
                        dx[c] = jx[0] * d[0][c] + jx[1] * d[1][c] + jx[2] * d[2][c];
                        dy[c] = jy[0] * d[0][c] + jy[1] * d[1][c] + jy[2] * d[2][c];
                    }
                }
                Some(Displaced { x: px, y: py, dx, dy })
            }
        }
    }
}

/// Image of warped events.
#[derive(Debug, Clone, PartialEq)]
pub struct Iwe<T> {
    pub image: Grid<T>,
    /// Events whose displaced position fell inside the sensor.
    pub count: usize,
}

fn check_inputs(w: &EventWindow, height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::invalid("IWE needs at least 2×2 pixels"));
    }
    w.check_sensor(width, height)
}

/// Splats every event, displaced to `t_ref`, into an unsigned count image.
pub fn build_iwe<T: Real>(
    w: &EventWindow,
    k: &Intrinsics<T>,
    model: &MotionModel<T>,
    t_ref: i64,
    height: usize,
    width: usize,
) -> Result<Iwe<T>> {
    check_inputs(w, height, width)?;
    let disp = Displacer::new(k, model);
    let partials: Vec<(Vec<T>, usize)> = w
        .events()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut plane = vec![T::zero(); height * width];
            let mut n = 0;
            for e in chunk {
                if let Some(d) = disp.displace(e, t_ref, false) {
                    if splat_into(&mut plane, height, width, d.x, d.y, T::one()) {
                        n += 1;
                    }
                }
            }
            (plane, n)
        })
        .collect();
    let mut image = vec![T::zero(); height * width];
    let mut count = 0;
    for (plane, n) in partials {
        for (a, b) in image.iter_mut().zip(plane) {
            *a += b;
        }
        count += n;
    }
    Ok(Iwe {
        image: Grid::from_vec(height, width, image)?,
        count,
    })
}

/// Contrast functional of an IWE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Population variance.
    #[default]
    Variance,
    /// Mean of squares.
    SumOfSquares,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(Self::Variance),
            "sum_of_squares" | "sos" => Ok(Self::SumOfSquares),
            other => Err(Error::invalid(format!("unknown objective '{other}'"))),
        }
    }

    pub fn evaluate<T: Real>(self, image: &Grid<T>) -> T {
        let data = image.as_slice();
        let n = T::from_usize_lossy(data.len());
        match self {
            Self::Variance => {
                let mean = data.iter().copied().sum::<T>() / n;
                data.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n
            }
            Self::SumOfSquares => data.iter().map(|&v| v * v).sum::<T>() / n,
        }
    }

    /// `∂objective/∂image` at every pixel.
    fn pixel_gradient<T: Real>(self, image: &Grid<T>) -> Vec<T> {
        let data = image.as_slice();
        let n = T::from_usize_lossy(data.len());
        let two = T::lit(2.0);
        match self {
            Self::Variance => {
                let mean = data.iter().copied().sum::<T>() / n;
                data.iter().map(|&v| two * (v - mean) / n).collect()
            }
            Self::SumOfSquares => data.iter().map(|&v| two * v / n).collect(),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with zero padding; the operator is self-adjoint.
pub fn gaussian_blur<T: Real>(image: &Grid<T>, sigma: f64) -> Grid<T> {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let r = (kernel.len() / 2) as isize;
    let (h, w) = image.dims();
    let src = image.as_slice();
    let mut tmp = vec![T::zero(); h * w];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, kv) in kernel.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += *kv * src[y * w + xx as usize];
                }
            }
            *out = acc;
        }
    });
    let mut out = vec![T::zero(); h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, kv) in kernel.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += *kv * tmp[yy as usize * w + x];
                }
            }
            *o = acc;
        }
    });
    Grid::from_vec(h, w, out).expect("same dims")
}

/// Population variance of the IWE.
pub fn contrast<T: Real>(iwe: &Iwe<T>) -> T {
    Objective::Variance.evaluate(&iwe.image)
}

/// Objective of the IWE blurred by a Gaussian of width `sigma` (px, 0 for
/// none) and its gradient w.r.t. the model parameters.
pub fn contrast_and_grad<T: Real>(
    w: &EventWindow,
    k: &Intrinsics<T>,
    model: &MotionModel<T>,
    t_ref: i64,
    height: usize,
    width: usize,
    objective: Objective,
    sigma: f64,
) -> Result<(T, Vec<T>)> {
    let iwe = build_iwe(w, k, model, t_ref, height, width)?;
    let smooth = gaussian_blur(&iwe.image, sigma);
    let value = objective.evaluate(&smooth);
    let g = gaussian_blur(&Grid::from_vec(height, width, objective.pixel_gradient(&smooth))?, sigma).into_vec();
    let disp = Displacer::new(k, model);
    let dim = model.kind.dim();
    // each event's splat weights are differentiated through its displaced
    // coordinates; the weight derivatives equal the bilinear sampling gradient
    let partials: Vec<[T; 3]> = w
        .events()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = [T::zero(); 3];
            for e in chunk {
                let Some(d) = disp.displace(e, t_ref, true) else {
                    continue;
                };
                let Some((_, gx, gy)) = sample_plane_grad(&g, height, width, d.x, d.y) else {
                    continue;
                };
                for c in 0..dim {
                    acc[c] += gx * d.dx[c] + gy * d.dy[c];
                }
            }
            acc
        })
        .collect();
    let mut grad = vec![T::zero(); dim];
    for p in partials {
        for c in 0..dim {
            grad[c] += p[c];
        }
    }
    if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contrast objective".into()));
    }
    Ok((value, grad))
}

/// Gradient of the IWE variance w.r.t. the model parameters.
pub fn contrast_grad<T: Real>(
    w: &EventWindow,
    k: &Intrinsics<T>,
    model: &MotionModel<T>,
    t_ref: i64,
    height: usize,
    width: usize,
) -> Result<Vec<T>> {
    Ok(contrast_and_grad(w, k, model, t_ref, height, width, Objective::Variance, 0.0)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Length of the first trial step, as the mean event displacement (px).
    pub step: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// Stop once no step longer than this (px) improves the objective.
    pub min_step: f64,
    pub objective: Objective,
    /// Gaussian smoothing of the IWE (px). Integer event coordinates make the
    /// raw count image a spurious local maximum at zero motion.
    pub sigma: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step: 1.0,
            tol: 1e-10,
            min_step: 1e-3,
            objective: Objective::Variance,
            sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub model: MotionModel<T>,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

pub const MIN_FIT_EVENTS: usize = 100;

/// Maximises the contrast of the IWE referenced at the window midpoint.
///
/// Gradient ascent with backtracking. Steps are measured as the mean event
/// displacement they cause, grown after every accepted step and halved on
/// every rejected one; only non-decreasing steps are accepted.
pub fn fit_motion<T: Real>(
    w: &EventWindow,
    k: &Intrinsics<T>,
    init: &MotionModel<T>,
    height: usize,
    width: usize,
    opts: &FitOptions,
) -> Result<FitResult<T>> {
    if w.len() < MIN_FIT_EVENTS {
        return Err(Error::UnderConstrained(format!(
            "{} events, at least {MIN_FIT_EVENTS} needed",
            w.len()
        )));
    }
    if !(opts.step > 0.0) || !(opts.min_step > 0.0) || !(opts.tol >= 0.0) || !(opts.sigma >= 0.0) {
        return Err(Error::invalid("step and min_step must be > 0, tol and sigma >= 0"));
    }
    let t_ref = w.t0() + w.duration() / 2;
    let kind = init.kind;
    let eval = |p: &[T]| -> Result<(T, Vec<T>)> {
        let m = MotionModel::new(kind, p.to_vec())?;
        contrast_and_grad(w, k, &m, t_ref, height, width, opts.objective, opts.sigma)
    };
    let scales = pixel_scales(w, k, init, t_ref);
    let mut params = init.params.clone();
    let (mut value, mut grad) = eval(&params)?;
    let mut trace = vec![value];
    let mut step_px = opts.step;
    let tol = T::lit(opts.tol);
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iters {
        let gnorm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
        if gnorm < tol {
            converged = true;
            break;
        }
        let px_per_unit: T = grad.iter().zip(&scales).map(|(g, s)| g.abs() / gnorm * *s).sum();
        if px_per_unit <= T::zero() {
            converged = true;
            break;
        }
        iterations += 1;
        loop {
            if step_px < opts.min_step {
                converged = true;
                break 'outer;
            }
            // the full gradient first, then single coordinates: events sit on
            // the pixel lattice, so the objective has ridges where the
            // one-sided gradient of a stalled coordinate is misleading
            let scale = T::lit(step_px) / (px_per_unit * gnorm);
            let mut directions = vec![grad.iter().map(|g| scale * *g).collect::<Vec<T>>()];
            for c in 0..grad.len() {
                if grad[c] != T::zero() && scales[c] > T::zero() {
                    let mut d = vec![T::zero(); grad.len()];
                    d[c] = T::lit(step_px) / scales[c] * grad[c].signum();
                    directions.push(d);
                }
            }
            for d in directions {
                let cand: Vec<T> = params.iter().zip(&d).map(|(p, d)| *p + *d).collect();
                let (v, g) = eval(&cand)?;
                if v > value {
                    params = cand;
                    grad = g;
                    value = v;
                    trace.push(value);
                    step_px *= 1.5;
                    continue 'outer;
                }
            }
            step_px *= 0.5;
        }
    }
    Ok(FitResult {
        model: MotionModel::new(kind, params)?,
        trace,
        iterations,
        converged,
    })
}

/// Mean displacement (px) of the events per unit change of each parameter.
fn pixel_scales<T: Real>(w: &EventWindow, k: &Intrinsics<T>, model: &MotionModel<T>, t_ref: i64) -> Vec<T> {
    let disp = Displacer::new(k, model);
    let dim = model.kind.dim();
    let mut acc = vec![T::zero(); dim];
    let mut n = 0usize;
    for e in w.events().iter().step_by((w.len() / 2000).max(1)) {
        if let Some(d) = disp.displace(e, t_ref, true) {
            for c in 0..dim {
                acc[c] += (d.dx[c] * d.dx[c] + d.dy[c] * d.dy[c]).sqrt();
            }
            n += 1;
        }
    }
    let n = T::from_usize_lossy(n.max(1));
    acc.into_iter().map(|a| a / n).collect()
}

/// Total camera rotation over a window of `duration_ns` for angular velocity `omega`.
pub fn rotation_over<T: Real>(omega: &[T], duration_ns: i64) -> Vec3<T> {
    let s = T::lit(duration_ns as f64 / NS_PER_S);
    [omega[0] * s, omega[1] * s, omega[2] * s]
}

/// The `t1 → t0` pose of a window of `duration_ns` under constant angular
/// velocity `omega`.
pub fn rotation_pose<T: Real>(omega: &[T], duration_ns: i64) -> Pose<T> {
    Pose::new(so3_exp(&rotation_over(omega, duration_ns)), [T::zero(); 3]).expect("rotation matrix")
}
