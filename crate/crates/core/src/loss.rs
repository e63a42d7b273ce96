//! Training losses as plain scalar kernels with analytic gradients.
//!
//! Each `*_grad` variant returns the loss value together with its gradient
//! with respect to the differentiable inputs. Guides and targets are treated
//! as constants. Where `|·|` or `‖·‖` hits zero the subgradient 0 is used.

use crate::camera::{FlowField, Intrinsics};
use crate::contrast::{self, contrast_and_grad, Iwe, MotionModel, Objective};
use crate::error::{Error, Result};
use crate::events::EventWindow;
use crate::grid::{Grid, Tensor3};
use crate::scalar::Real;
use crate::warp::Footprint;

/// Charbonnier ε.
pub const CHARBONNIER_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub img: f64,
    pub sm: f64,
    pub cm: f64,
    pub sup: f64,
    pub reg: f64,
    pub cyc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            img: 1.0,
            sm: 0.1,
            cm: 0.1,
            sup: 1.0,
            reg: 0.1,
            cyc: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("img", self.img),
            ("sm", self.sm),
            ("cm", self.cm),
            ("sup", self.sup),
            ("reg", self.reg),
            ("cyc", self.cyc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Terms of the motion-compensation objective. `sup` is taken as given.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McParts {
    pub img: f64,
    pub sm: f64,
    pub cm: f64,
    pub sup: f64,
}

/// Terms of the optical-flow objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OfParts {
    pub img: f64,
    pub reg: f64,
    pub cyc: f64,
}

pub fn combine_mc(p: &McParts, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.img * p.img + w.sm * p.sm + w.cm * p.cm + w.sup * p.sup)
}

pub fn combine_of(p: &OfParts, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.img * p.img + w.reg * p.reg + w.cyc * p.cyc)
}

fn check_finite<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Mean Charbonnier penalty `√(r² + ε²) − ε` of the residual.
pub fn l_img<T: Real>(pred: &Tensor3<T>, target: &Tensor3<T>) -> Result<T> {
    Ok(l_img_grad(pred, target)?.0)
}

/// Value and gradient w.r.t. `pred`.
pub fn l_img_grad<T: Real>(pred: &Tensor3<T>, target: &Tensor3<T>) -> Result<(T, Tensor3<T>)> {
    if !pred.same_dims(target) {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    check_finite(pred.as_slice(), "prediction")?;
    check_finite(target.as_slice(), "target")?;
    let (c, h, w) = pred.dims();
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok((T::zero(), Tensor3::zeros(c, h, w)));
    }
    let eps = T::lit(CHARBONNIER_EPS);
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n);
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        let r = *p - *t;
        let root = (r * r + eps * eps).sqrt();
        total += root - eps;
        grad.push(r / root * inv_n);
    }
    Ok((total * inv_n, Tensor3::from_vec(c, h, w, grad)?))
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Edge-aware smoothness of a multi-channel field (one disparity plane or
/// the two flow components) guided by an image. Forward differences over
/// the pixels that have both a right and a lower neighbour; channels are
/// summed per pixel.
pub fn l_smooth<T: Real>(field: &[Grid<T>], guide: &Grid<T>) -> Result<T> {
    Ok(l_smooth_grad(field, guide)?.0)
}

/// Value and gradient w.r.t. each field channel.
pub fn l_smooth_grad<T: Real>(field: &[Grid<T>], guide: &Grid<T>) -> Result<(T, Vec<Grid<T>>)> {
    if field.is_empty() {
        return Err(Error::shape("smoothness field has no channels"));
    }
    for ch in field {
        ch.check_dims(guide, "field vs guide")?;
        check_finite(ch.as_slice(), "smoothness field")?;
    }
    check_finite(guide.as_slice(), "guide")?;
    let (h, w) = guide.dims();
    let mut grads: Vec<Grid<T>> = field.iter().map(|_| Grid::zeros(h, w)).collect();
    if h < 2 || w < 2 {
        return Ok((T::zero(), grads));
    }
    let inv_n = T::one() / T::from_usize_lossy((h - 1) * (w - 1));
    let g = guide.as_slice();
    let mut total = T::zero();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let i = y * w + x;
            let (ix, iy) = (i + 1, i + w);
            let wx = (-(g[ix] - g[i]).abs()).exp();
            let wy = (-(g[iy] - g[i]).abs()).exp();
            for (ch, gr) in field.iter().zip(grads.iter_mut()) {
                let f = ch.as_slice();
                let (dx, dy) = (f[ix] - f[i], f[iy] - f[i]);
                total += dx.abs() * wx + dy.abs() * wy;
                let gx = sign(dx) * wx * inv_n;
                let gy = sign(dy) * wy * inv_n;
                let s = gr.as_mut_slice();
                s[ix] += gx;
                s[i] -= gx;
                s[iy] += gy;
                s[i] -= gy;
            }
        }
    }
    Ok((total * inv_n, grads))
}

/// Flow regulariser: smoothness of both flow components, guided by the
/// event count image.
pub fn l_reg<T: Real>(flow: &FlowField<T>, count_image: &Grid<T>) -> Result<T> {
    l_smooth(&[flow.u.clone(), flow.v.clone()], count_image)
}

/// Negated IWE contrast.
pub fn l_cm<T: Real>(iwe: &Iwe<T>) -> T {
    -contrast::contrast(iwe)
}

/// Negated contrast and its gradient w.r.t. the motion parameters.
pub fn l_cm_grad<T: Real>(
    w: &EventWindow,
    k: &Intrinsics<T>,
    model: &MotionModel<T>,
    t_ref: i64,
    height: usize,
    width: usize,
) -> Result<(T, Vec<T>)> {
    let (v, g) = contrast_and_grad(w, k, model, t_ref, height, width, Objective::Variance, 0.0)?;
    Ok((-v, g.into_iter().map(|x| -x).collect()))
}

/// Gradients of [`l_cyc_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGrads<T> {
    pub fwd: FlowField<T>,
    pub bwd: FlowField<T>,
    /// Pixels that entered the mean.
    pub valid: usize,
}

/// Mean over valid pixels of `‖f(p) + b(p + f(p))‖₂`, with `b` sampled
/// bilinearly. A pixel is valid when `f(p)` is finite, `p + f(p)` lies in the
/// sampling domain and the four taps of `b` there are finite.
pub fn l_cyc<T: Real>(fwd: &FlowField<T>, bwd: &FlowField<T>) -> Result<T> {
    Ok(l_cyc_grad(fwd, bwd)?.0)
}

pub fn l_cyc_grad<T: Real>(fwd: &FlowField<T>, bwd: &FlowField<T>) -> Result<(T, CycleGrads<T>)> {
    fwd.u.check_dims(&bwd.u, "forward vs backward flow")?;
    let (h, w) = fwd.dims();
    let mut gf = FlowField::zeros(h, w);
    let mut gb = FlowField::zeros(h, w);
    let (bu, bv) = (bwd.u.as_slice(), bwd.v.as_slice());
    // (pixel, footprint, residual)
    let mut terms = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (fu, fv) = fwd.at(y, x);
            if !(fu.is_finite() && fv.is_finite()) {
                continue;
            }
            let sx = T::from_usize_lossy(x) + fu;
            let sy = T::from_usize_lossy(y) + fv;
            let Some(fp) = Footprint::locate(sx, sy, h, w) else {
                continue;
            };
            let taps = fp.taps(w);
            if taps.iter().any(|(i, ..)| !(bu[*i].is_finite() && bv[*i].is_finite())) {
                continue;
            }
            let (mut su, mut sv) = (T::zero(), T::zero());
            let (mut dux, mut duy, mut dvx, mut dvy) = (T::zero(), T::zero(), T::zero(), T::zero());
            for &(i, wt, wx, wy) in &taps {
                su += wt * bu[i];
                sv += wt * bv[i];
                dux += wx * bu[i];
                duy += wy * bu[i];
                dvx += wx * bv[i];
                dvy += wy * bv[i];
            }
            terms.push((y * w + x, taps, fu + su, fv + sv, [dux, duy, dvx, dvy]));
        }
    }
    if terms.is_empty() {
        return Ok((T::zero(), CycleGrads { fwd: gf, bwd: gb, valid: 0 }));
    }
    let inv_n = T::one() / T::from_usize_lossy(terms.len());
    let mut total = T::zero();
    for (p, taps, ru, rv, [dux, duy, dvx, dvy]) in &terms {
        let norm = (*ru * *ru + *rv * *rv).sqrt();
        total += norm;
        if norm == T::zero() {
            continue;
        }
        let (eu, ev) = (*ru / norm * inv_n, *rv / norm * inv_n);
        gf.u.as_mut_slice()[*p] += eu * (T::one() + *dux) + ev * *dvx;
        gf.v.as_mut_slice()[*p] += eu * *duy + ev * (T::one() + *dvy);
        for &(i, wt, _, _) in taps {
            gb.u.as_mut_slice()[i] += eu * wt;
            gb.v.as_mut_slice()[i] += ev * wt;
        }
    }
    let valid = terms.len();
    Ok((total * inv_n, CycleGrads { fwd: gf, bwd: gb, valid }))
}

/// Mean binary cross entropy on logits, `softplus(l) − t·l`.
pub fn l_bce<T: Real>(logits: &Grid<T>, target: &Grid<T>) -> Result<T> {
    Ok(l_bce_grad(logits, target)?.0)
}

/// Value and gradient w.r.t. the logits.
pub fn l_bce_grad<T: Real>(logits: &Grid<T>, target: &Grid<T>) -> Result<(T, Grid<T>)> {
    logits.check_dims(target, "logits vs target")?;
    check_finite(logits.as_slice(), "logits")?;
    if let Some(i) = target
        .as_slice()
        .iter()
        .position(|t| !(*t >= T::zero() && *t <= T::one()))
    {
        return Err(Error::invalid(format!("target {i} is outside [0, 1]")));
    }
    let (h, w) = logits.dims();
    let n = h * w;
    if n == 0 {
        return Ok((T::zero(), Grid::zeros(h, w)));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n);
    for (l, t) in logits.as_slice().iter().zip(target.as_slice()) {
        let softplus = l.max(T::zero()) + (-l.abs()).exp().ln_1p();
        total += softplus - *t * *l;
        let sigmoid = if *l >= T::zero() {
            T::one() / (T::one() + (-*l).exp())
        } else {
            let e = l.exp();
            e / (T::one() + e)
        };
        grad.push((sigmoid - *t) * inv_n);
    }
    Ok((total * inv_n, Grid::from_vec(h, w, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::{build_iwe, MotionKind};
    use crate::synth::{make_sample, presets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize, s: f64) -> Grid<f64> {
        Grid::from_fn(h, w, |_, _| rng.gen_range(-s..s))
    }

    /// Largest central-difference error relative to the gradient norm.
    fn fd_check(x: &[f64], grad: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
        let scale = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
        let mut worst: f64 = 0.0;
        let mut p = x.to_vec();
        for i in 0..x.len() {
            p[i] = x[i] + eps;
            let up = f(&p);
            p[i] = x[i] - eps;
            let down = f(&p);
            p[i] = x[i];
            worst = worst.max(((up - down) / (2.0 * eps) - grad[i]).abs() / scale);
        }
        worst
    }

    #[test]
    fn charbonnier_values() {
        let t = Tensor3::from_vec(2, 2, 3, (0..12).map(|i| i as f64 * 0.3).collect()).unwrap();
        assert_eq!(l_img(&t, &t).unwrap(), 0.0);
        let p = Tensor3::from_vec(2, 2, 3, t.as_slice().iter().map(|v| v + 1.0).collect()).unwrap();
        let expect = (1.0f64 + 1e-6).sqrt() - 1e-3;
        assert!((l_img(&p, &t).unwrap() - expect).abs() < 1e-12);
        let other = Tensor3::<f64>::zeros(2, 3, 2);
        assert!(l_img(&t, &other).is_err());
    }

    #[test]
    fn charbonnier_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, h, w) = (3, 4, 5);
        let target = Tensor3::from_vec(c, h, w, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let pred: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = Tensor3::from_vec(c, h, w, pred.clone()).unwrap();
        let (_, g) = l_img_grad(&p, &target).unwrap();
        let worst = fd_check(&pred, g.as_slice(), 1e-6, |v| {
            l_img(&Tensor3::from_vec(c, h, w, v.to_vec()).unwrap(), &target).unwrap()
        });
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn smoothness_values() {
        let guide = Grid::from_fn(5, 6, |y, x| (x * y) as f64);
        let flat = Grid::filled(5, 6, 2.5);
        assert_eq!(l_smooth(&[flat.clone(), flat], &guide).unwrap(), 0.0);
        let ramp = Grid::from_fn(5, 6, |_, x| -0.7 * x as f64);
        let uniform = Grid::filled(5, 6, 3.0);
        assert!((l_smooth(&[ramp.clone()], &uniform).unwrap() - 0.7).abs() < 1e-12);
        assert!(l_smooth(&[ramp], &Grid::zeros(4, 6)).is_err());
    }

    #[test]
    fn uniform_guide_is_total_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (6, 7);
        let f = grid(&mut rng, h, w, 2.0);
        let mut tv = 0.0;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                tv += (f.get(y, x + 1) - f.get(y, x)).abs() + (f.get(y + 1, x) - f.get(y, x)).abs();
            }
        }
        tv /= ((h - 1) * (w - 1)) as f64;
        let v = l_smooth(&[f], &Grid::filled(h, w, -1.0)).unwrap();
        assert!((v - tv).abs() < 1e-12);
    }

    #[test]
    fn smoothness_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (5, 6);
        let guide = grid(&mut rng, h, w, 1.0);
        let u = grid(&mut rng, h, w, 1.0);
        let v = grid(&mut rng, h, w, 1.0);
        let (_, g) = l_smooth_grad(&[u.clone(), v.clone()], &guide).unwrap();
        let x: Vec<f64> = [u.as_slice(), v.as_slice()].concat();
        let grad: Vec<f64> = [g[0].as_slice(), g[1].as_slice()].concat();
        let worst = fd_check(&x, &grad, 1e-7, |p| {
            let a = Grid::from_vec(h, w, p[..h * w].to_vec()).unwrap();
            let b = Grid::from_vec(h, w, p[h * w..].to_vec()).unwrap();
            l_smooth(&[a, b], &guide).unwrap()
        });
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn contrast_loss_is_negated_contrast() {
        let flat = Iwe {
            image: Grid::filled(4, 4, 3.0f64),
            count: 16,
        };
        assert_eq!(l_cm(&flat), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let iwe = Iwe {
            image: grid(&mut rng, 5, 5, 4.0),
            count: 25,
        };
        assert_eq!(l_cm(&iwe).to_bits(), (-contrast::contrast(&iwe)).to_bits());
        assert!(l_cm(&iwe) <= 0.0);
    }

    #[test]
    fn contrast_loss_falls_towards_true_rotation() {
        let spec = presets::pure_rotation(3);
        let s = make_sample(&spec, 3).unwrap();
        let gt = &spec.camera_twist[..3];
        let t_ref = s.events.t0() + s.events.duration() / 2;
        let losses: Vec<f64> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|a| {
                let m = MotionModel::new(MotionKind::Rotation3, gt.iter().map(|g| g * a).collect()).unwrap();
                let iwe = build_iwe(&s.events, &spec.intrinsics, &m, t_ref, spec.height, spec.width).unwrap();
                l_cm(&iwe)
            })
            .collect();
        for pair in losses.windows(2) {
            assert!(pair[1] < pair[0], "{losses:?}");
        }
        let m = MotionModel::new(MotionKind::Rotation3, gt.to_vec()).unwrap();
        let (v, g) = l_cm_grad(&s.events, &spec.intrinsics, &m, t_ref, spec.height, spec.width).unwrap();
        assert_eq!(v, losses[3]);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn cycle_values() {
        let zero = FlowField::<f64>::zeros(6, 8);
        assert_eq!(l_cyc(&zero, &zero).unwrap(), 0.0);
        let f = FlowField::constant(6, 8, 1.5, 0.0);
        let b = FlowField::constant(6, 8, -1.5, 0.0);
        assert_eq!(l_cyc(&f, &b).unwrap(), 0.0);
        let (_, g) = l_cyc_grad(&f, &b).unwrap();
        // columns 0..=5 land inside the 8-wide domain
        assert_eq!(g.valid, 6 * 6);
        let off = FlowField::constant(6, 8, 0.0f64, 0.0);
        let b2 = FlowField::constant(6, 8, 0.3, -0.4);
        assert!((l_cyc(&off, &b2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cycle_skips_invalid_pixels() {
        let mut f = FlowField::<f64>::constant(4, 4, 0.0, 0.0);
        *f.u.get_mut(0, 0) = f64::NAN;
        let mut b = FlowField::constant(4, 4, 0.3, -0.4);
        *b.v.get_mut(3, 3) = f64::NAN;
        let (v, g) = l_cyc_grad(&f, &b).unwrap();
        // (0,0) has no forward flow; every pixel whose footprint touches (3,3) drops
        assert_eq!(g.valid, 11);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cycle_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (6, 7);
        let mk = |rng: &mut ChaCha8Rng| FlowField::new(grid(rng, h, w, 1.3), grid(rng, h, w, 1.3)).unwrap();
        let (f, b) = (mk(&mut rng), mk(&mut rng));
        let (_, g) = l_cyc_grad(&f, &b).unwrap();
        let n = h * w;
        let x: Vec<f64> = [f.u.as_slice(), f.v.as_slice(), b.u.as_slice(), b.v.as_slice()].concat();
        let grad: Vec<f64> = [g.fwd.u.as_slice(), g.fwd.v.as_slice(), g.bwd.u.as_slice(), g.bwd.v.as_slice()].concat();
        let unpack = |p: &[f64], k: usize| Grid::from_vec(h, w, p[k * n..(k + 1) * n].to_vec()).unwrap();
        let worst = fd_check(&x, &grad, 1e-7, |p| {
            let f = FlowField::new(unpack(p, 0), unpack(p, 1)).unwrap();
            let b = FlowField::new(unpack(p, 2), unpack(p, 3)).unwrap();
            l_cyc(&f, &b).unwrap()
        });
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn bce_values() {
        let l = Grid::filled(1, 1, 0.0f64);
        let one = Grid::filled(1, 1, 1.0f64);
        assert!((l_bce(&l, &one).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = Grid::filled(1, 1, 20.0f64);
        let v = l_bce(&big, &one).unwrap();
        assert!((v - 2.061e-9).abs() < 1e-12, "{v}");
        let huge = Grid::filled(1, 1, -800.0f64);
        assert!((l_bce(&huge, &one).unwrap() - 800.0).abs() < 1e-9);
        assert!(l_bce(&l, &Grid::filled(1, 1, 1.5)).is_err());
    }

    #[test]
    fn bce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = grid(&mut rng, 4, 5, 4.0);
        let target = Grid::from_fn(4, 5, |_, _| rng.gen_range(0.0..1.0));
        let (_, g) = l_bce_grad(&logits, &target).unwrap();
        let worst = fd_check(logits.as_slice(), g.as_slice(), 1e-6, |p| {
            l_bce(&Grid::from_vec(4, 5, p.to_vec()).unwrap(), &target).unwrap()
        });
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn weighted_sums() {
        let zero = LossWeights {
            img: 0.0,
            sm: 0.0,
            cm: 0.0,
            sup: 0.0,
            reg: 0.0,
            cyc: 0.0,
        };
        let mc = McParts {
            img: 1.0,
            sm: 2.0,
            cm: 3.0,
            sup: 4.0,
        };
        assert_eq!(combine_mc(&mc, &zero).unwrap(), 0.0);
        let unit = LossWeights {
            img: 1.0,
            sm: 1.0,
            cm: 1.0,
            sup: 1.0,
            reg: 1.0,
            cyc: 1.0,
        };
        assert_eq!(combine_mc(&mc, &unit).unwrap(), 10.0);
        let of = OfParts {
            img: 1.0,
            reg: 2.0,
            cyc: 3.0,
        };
        assert_eq!(combine_of(&of, &unit).unwrap(), 6.0);
        assert!(combine_of(&of, &LossWeights { cyc: -1.0, ..unit }).is_err());
    }

    proptest! {
        #[test]
        fn combinations_are_linear_in_each_weight(
            parts in prop::array::uniform4(-5.0f64..5.0),
            base in prop::array::uniform4(0.0f64..3.0),
            k in 0usize..4,
            s in 0.0f64..4.0,
        ) {
            let p = McParts { img: parts[0], sm: parts[1], cm: parts[2], sup: parts[3] };
            let w = |b: [f64; 4]| LossWeights { img: b[0], sm: b[1], cm: b[2], sup: b[3], ..Default::default() };
            let mut scaled = base;
            scaled[k] *= s;
            let lhs = combine_mc(&p, &w(scaled)).unwrap() - combine_mc(&p, &w(base)).unwrap();
            prop_assert!((lhs - (s - 1.0) * base[k] * parts[k]).abs() < 1e-9);
        }

        #[test]
        fn losses_are_nonnegative(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = grid(&mut rng, 4, 4, 3.0);
            let b = grid(&mut rng, 4, 4, 3.0);
            let t = |g: &Grid<f64>| Tensor3::from_channels(vec![g.clone()]).unwrap();
            prop_assert!(l_img(&t(&a), &t(&b)).unwrap() >= 0.0);
            prop_assert!(l_smooth(&[a.clone()], &b).unwrap() >= 0.0);
            let f = FlowField::new(a.clone(), b.clone()).unwrap();
            prop_assert!(l_cyc(&f, &f).unwrap() >= 0.0);
            let target = b.map(|v| (v / 6.0 + 0.5).clamp(0.0, 1.0));
            prop_assert!(l_bce(&a, &target).unwrap() >= 0.0);
        }
    }
}
