//! Pinhole intrinsics, SE(3) poses, depth maps and rigid optical flow.
//!
//! A `Pose` maps points expressed in one camera frame into another:
//! `X' = R·X + t`. The pose "from t1 to t0" used throughout maps points of
//! the camera frame at `t1` into the camera frame at `t0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::Real;

/// Twist `[ω; v]`: rotation vector (rad) followed by translation part (m).
pub type Twist<T> = [T; 6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid(format!(
                "intrinsics need fx, fy > 0 and finite principal point (fx={fx}, fy={fy}, cx={cx}, cy={cy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Ray through pixel `(x, y)` with unit depth.
    #[inline]
    pub fn backproject(&self, x: T, y: T) -> Vec3<T> {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, T::one()]
    }

    /// Pixel of a camera-frame point, `None` when `z <= 0`.
    #[inline]
    pub fn project(&self, p: &Vec3<T>) -> Option<(T, T)> {
        if p[2] <= T::zero() {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
        }
    }
}

fn rotation_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(100.0))
}

/// Rigid transform with an orthonormal rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    rotation: Mat3<T>,
    translation: Vec3<T>,
}

const SMALL_ANGLE: f64 = 1e-8;

/// SO(3) exponential of a rotation vector.
pub fn so3_exp<T: Real>(w: &Vec3<T>) -> Mat3<T> {
    let theta = linalg::norm(w);
    let k = linalg::hat(w);
    let k2 = linalg::mul(&k, &k);
    let (a, b) = if theta < T::lit(SMALL_ANGLE) {
        (T::one(), T::lit(0.5))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / (theta * theta))
    };
    linalg::add(
        &linalg::add(&linalg::identity(), &linalg::scale(&k, a)),
        &linalg::scale(&k2, b),
    )
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian<T: Real>(w: &Vec3<T>) -> Mat3<T> {
    let theta = linalg::norm(w);
    let k = linalg::hat(w);
    let k2 = linalg::mul(&k, &k);
    let (a, b) = if theta < T::lit(SMALL_ANGLE) {
        (T::lit(0.5), T::lit(1.0 / 6.0))
    } else {
        let t2 = theta * theta;
        (
            (T::one() - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    linalg::add(
        &linalg::add(&linalg::identity(), &linalg::scale(&k, a)),
        &linalg::scale(&k2, b),
    )
}

/// SO(3) logarithm, robust near the identity and near a half turn.
pub fn so3_log<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let half = T::lit(0.5);
    let cos = ((r[0][0] + r[1][1] + r[2][2] - T::one()) * half)
        .max(-T::one())
        .min(T::one());
    let theta = cos.acos();
    let skew = linalg::vee(&linalg::add(r, &linalg::scale(&linalg::transpose(r), -T::one())));
    if theta < T::lit(1e-4) {
        // theta / sin(theta) ≈ 1 + theta²/6
        let f = half * (T::one() + theta * theta / T::lit(6.0));
        return linalg::scale_vec(&skew, f);
    }
    let sin = theta.sin();
    if sin > T::lit(1e-3) || theta < T::FRAC_PI_2() {
        return linalg::scale_vec(&skew, theta / (T::lit(2.0) * sin));
    }
    // near a half turn: n nᵀ = ((R + Rᵀ)/2 - cos I) / (1 - cos)
    let one_minus = T::one() - cos;
    let mut nn = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sym = (r[i][j] + r[j][i]) * half;
            let id = if i == j { cos } else { T::zero() };
            nn[i][j] = (sym - id) / one_minus;
        }
    }
    let k = (0..3)
        .max_by(|&a, &b| nn[a][a].partial_cmp(&nn[b][b]).unwrap())
        .unwrap();
    let d = nn[k][k].max(T::zero()).sqrt();
    let mut n = [nn[k][0] / d, nn[k][1] / d, nn[k][2] / d];
    let dot = n[0] * skew[0] + n[1] * skew[1] + n[2] * skew[2];
    if dot < T::zero() {
        n = linalg::scale_vec(&n, -T::one());
    }
    linalg::scale_vec(&n, theta)
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: linalg::identity(),
            translation: [T::zero(); 3],
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let tol = rotation_tolerance::<T>();
        let rtr = linalg::mul(&linalg::transpose(&rotation), &rotation);
        let err = linalg::frobenius_diff(&rtr, &linalg::identity());
        let det = linalg::det(&rotation);
        if !(err <= tol) || !((det - T::one()).abs() <= tol * T::lit(10.0)) {
            return Err(Error::invalid(format!(
                "rotation not orthonormal: |RᵀR - I| = {err}, det = {det}"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3<T>) -> Self {
        Self {
            rotation: linalg::identity(),
            translation,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vec3<T> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        Pose {
            rotation: linalg::mul(&self.rotation, &other.rotation),
            translation: linalg::add_vec(
                &linalg::mul_vec(&self.rotation, &other.translation),
                &self.translation,
            ),
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let rt = linalg::transpose(&self.rotation);
        let t = linalg::mul_vec(&rt, &self.translation);
        Pose {
            rotation: rt,
            translation: linalg::scale_vec(&t, -T::one()),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vec3<T>) -> Vec3<T> {
        linalg::add_vec(&linalg::mul_vec(&self.rotation, p), &self.translation)
    }

    #[inline]
    pub fn rotate(&self, p: &Vec3<T>) -> Vec3<T> {
        linalg::mul_vec(&self.rotation, p)
    }

    pub fn has_zero_translation(&self, tol: T) -> bool {
        linalg::norm(&self.translation) < tol
    }

    /// SE(3) exponential of `[ω; v]`.
    pub fn exp(twist: &Twist<T>) -> Result<Self> {
        if twist.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("twist {twist:?}")));
        }
        let w = [twist[0], twist[1], twist[2]];
        let v = [twist[3], twist[4], twist[5]];
        Ok(Self {
            rotation: so3_exp(&w),
            translation: linalg::mul_vec(&so3_left_jacobian(&w), &v),
        })
    }

    /// SE(3) logarithm, inverse of [`Pose::exp`] for rotation angles below π.
    pub fn log(&self) -> Twist<T> {
        let w = so3_log(&self.rotation);
        let theta = linalg::norm(&w);
        let k = linalg::hat(&w);
        let k2 = linalg::mul(&k, &k);
        let c = if theta < T::lit(1e-4) {
            T::lit(1.0 / 12.0) + theta * theta / T::lit(720.0)
        } else {
            let t2 = theta * theta;
            (T::one() - theta * theta.sin() / (T::lit(2.0) * (T::one() - theta.cos()))) / t2
        };
        let v_inv = linalg::add(
            &linalg::add(&linalg::identity(), &linalg::scale(&k, -T::lit(0.5))),
            &linalg::scale(&k2, c),
        );
        let v = linalg::mul_vec(&v_inv, &self.translation);
        [w[0], w[1], w[2], v[0], v[1], v[2]]
    }

    /// Screw-linear scaling `exp(alpha · log(self))`; exact at 0 and 1.
    pub fn scaled(&self, alpha: T) -> Pose<T> {
        if alpha == T::one() {
            return *self;
        }
        if alpha == T::zero() {
            return Pose::identity();
        }
        let xi = self.log().map(|v| v * alpha);
        Pose::exp(&xi).expect("finite twist")
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|r| r.map(|v| U::lit(v.to_f64_lossy()))),
            translation: self.translation.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Fraction of the total pose change left between bin `b`'s midpoint and `t1`.
pub fn bin_alpha<T: Real>(b: usize, bins: usize) -> T {
    T::one() - (T::from_usize_lossy(b) + T::lit(0.5)) / T::from_usize_lossy(bins)
}

/// Pose from `t1` to the midpoint of bin `b`, interpolated in the Lie algebra.
pub fn interpolate_pose<T: Real>(total: &Pose<T>, b: usize, bins: usize) -> Result<Pose<T>> {
    if b >= bins {
        return Err(Error::IndexOutOfRange { index: b, len: bins });
    }
    Ok(total.scaled(bin_alpha(b, bins)))
}

/// Per-pixel metric depth, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    data: Grid<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn new(data: Grid<T>) -> Result<Self> {
        if let Some(i) = data
            .as_slice()
            .iter()
            .position(|v| !(v.is_finite() && *v > T::zero()))
        {
            return Err(Error::invalid(format!(
                "depth must be finite and > 0 (pixel {i} = {})",
                data.as_slice()[i]
            )));
        }
        Ok(Self { data })
    }

    pub fn constant(height: usize, width: usize, z: T) -> Result<Self> {
        Self::new(Grid::filled(height, width, z))
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        *self.data.get(y, x)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }
}

/// Dense displacement field; NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    pub u: Grid<T>,
    pub v: Grid<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(u: Grid<T>, v: Grid<T>) -> Result<Self> {
        u.check_dims(&v, "flow components")?;
        Ok(Self { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Grid::zeros(height, width),
            v: Grid::zeros(height, width),
        }
    }

    pub fn constant(height: usize, width: usize, du: T, dv: T) -> Self {
        Self {
            u: Grid::filled(height, width, du),
            v: Grid::filled(height, width, dv),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        (*self.u.get(y, x), *self.v.get(y, x))
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.u.get(y, x).is_finite() && self.v.get(y, x).is_finite()
    }
}

/// Where pixel `(x, y)` at depth `z` lands after `pose`.
#[inline]
pub fn warp_pixel<T: Real>(k: &Intrinsics<T>, pose: &Pose<T>, x: T, y: T, z: T) -> Option<(T, T)> {
    let ray = k.backproject(x, y);
    let p = pose.transform(&linalg::scale_vec(&ray, z));
    k.project(&p)
}

/// Flow induced by camera motion over a static scene.
///
/// `pose` maps the `t1` camera frame to `t0`; `depth` is sampled at `t1`.
/// Pixels that reproject behind the camera are NaN.
pub fn rigid_flow<T: Real>(k: &Intrinsics<T>, pose: &Pose<T>, depth: &DepthMap<T>) -> FlowField<T> {
    let (h, w) = depth.dims();
    let rows: Vec<(Vec<T>, Vec<T>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut us = Vec::with_capacity(w);
            let mut vs = Vec::with_capacity(w);
            let yf = T::from_usize_lossy(y);
            for x in 0..w {
                let xf = T::from_usize_lossy(x);
                match warp_pixel(k, pose, xf, yf, depth.at(y, x)) {
                    Some((px, py)) => {
                        us.push(px - xf);
                        vs.push(py - yf);
                    }
                    None => {
                        us.push(T::nan());
                        vs.push(T::nan());
                    }
                }
            }
            (us, vs)
        })
        .collect();
    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    for (ru, rv) in rows {
        u.extend(ru);
        v.extend(rv);
    }
    FlowField {
        u: Grid::from_vec(h, w, u).expect("dims"),
        v: Grid::from_vec(h, w, v).expect("dims"),
    }
}

/// [`rigid_flow`] with a dimension check against an expected field size.
pub fn rigid_flow_checked<T: Real>(
    k: &Intrinsics<T>,
    pose: &Pose<T>,
    depth: &DepthMap<T>,
    height: usize,
    width: usize,
) -> Result<FlowField<T>> {
    if depth.dims() != (height, width) {
        return Err(Error::shape(format!(
            "depth {:?} vs target field {height}x{width}",
            depth.dims()
        )));
    }
    Ok(rigid_flow(k, pose, depth))
}
