//! Cue-based motion segmentation: per-pixel cues from a compensated stack and
//! from flow, thresholding, small-component removal and flow-guided temporal
//! fusion.

use std::collections::VecDeque;

use crate::camera::FlowField;
use crate::config::{ConfigWriter, KeyValues};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::Mask;
use crate::scalar::Real;
use crate::warp::{warp_by_flow, CompensatedStack};

const DISPERSION_EPS: f64 = 1e-9;

/// How the blur of compensated events is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SharpnessCue {
    /// `1 − |Σ_b s_b| / Σ_b |s_b|` on a signed stack. Aligned static edges
    /// keep one polarity per pixel; a smeared moving edge lays positive and
    /// negative events over the same pixels.
    #[default]
    Cancellation,
    /// `1 − max_b m_b / Σ_b m_b` on per-bin mass.
    Dispersion,
}

impl SharpnessCue {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cancellation" => Ok(Self::Cancellation),
            "dispersion" => Ok(Self::Dispersion),
            _ => Err(Error::invalid(format!(
                "unknown sharpness cue '{s}' (cancellation|dispersion)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cancellation => "cancellation",
            Self::Dispersion => "dispersion",
        }
    }
}

/// Temporal dispersion of each pixel's event mass over the warped bins:
/// `1 − max_b m_b / (Σ_b m_b + ε)` with `m_b = |per_bin(b, p)|`, 0 without mass.
pub fn sharpness_cue<T: Real>(comp: &CompensatedStack<T>) -> Grid<T> {
    let (c, h, w) = comp.per_bin.dims();
    let eps = T::lit(DISPERSION_EPS);
    Grid::from_fn(h, w, |y, x| {
        let (mut max, mut sum) = (T::zero(), T::zero());
        for b in 0..c {
            let m = comp.per_bin.get(b, y, x).abs();
            max = max.max(m);
            sum += m;
        }
        if sum > T::zero() {
            T::one() - max / (sum + eps)
        } else {
            T::zero()
        }
    })
}

/// Polarity cancellation `1 − |Σ_b s_b| / Σ_b |s_b|`; 0 where `Σ_b |s_b|`
/// is below `min_mass`.
pub fn cancellation_cue<T: Real>(comp: &CompensatedStack<T>, min_mass: T) -> Grid<T> {
    let (c, h, w) = comp.per_bin.dims();
    Grid::from_fn(h, w, |y, x| {
        let (mut signed, mut mass) = (T::zero(), T::zero());
        for b in 0..c {
            let s = *comp.per_bin.get(b, y, x);
            signed += s;
            mass += s.abs();
        }
        if mass > T::zero() && mass >= min_mass {
            T::one() - signed.abs() / mass
        } else {
            T::zero()
        }
    })
}

/// Absolute compensated event mass in the `(2r+1)²` box around each pixel,
/// clipped at the sensor border.
pub fn activity_map<T: Real>(comp: &CompensatedStack<T>, radius: usize) -> Grid<T> {
    let (c, h, w) = comp.per_bin.dims();
    let mass = Grid::from_fn(h, w, |y, x| (0..c).map(|b| comp.per_bin.get(b, y, x).abs()).sum());
    box_sum(&mass, radius)
}

fn box_sum<T: Real>(g: &Grid<T>, r: usize) -> Grid<T> {
    if r == 0 {
        return g.clone();
    }
    let (h, w) = g.dims();
    let rows = Grid::from_fn(h, w, |y, x| {
        (x.saturating_sub(r)..(x + r + 1).min(w)).map(|xx| *g.get(y, xx)).sum()
    });
    Grid::from_fn(h, w, |y, x| {
        (y.saturating_sub(r)..(y + r + 1).min(h)).map(|yy| *rows.get(yy, x)).sum()
    })
}

/// `‖observed − rigid‖₂` per pixel; NaN where either flow is invalid.
pub fn flow_discrepancy_cue<T: Real>(observed: &FlowField<T>, rigid: &FlowField<T>) -> Result<Grid<T>> {
    observed.u.check_dims(&rigid.u, "observed vs rigid flow")?;
    let (h, w) = observed.dims();
    Ok(Grid::from_fn(h, w, |y, x| {
        if !(observed.is_valid(y, x) && rigid.is_valid(y, x)) {
            return T::nan();
        }
        let (ou, ov) = observed.at(y, x);
        let (ru, rv) = rigid.at(y, x);
        (ou - ru).hypot(ov - rv)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueMaps<T> {
    /// Higher means blurrier, i.e. more likely dynamic.
    pub sharpness: Grid<T>,
    /// Pixels; NaN marks pixels without flow.
    pub flow_disc: Grid<T>,
    pub activity: Grid<T>,
    pub timestamp: i64,
}

impl<T: Real> CueMaps<T> {
    pub fn new(sharpness: Grid<T>, flow_disc: Grid<T>, activity: Grid<T>, timestamp: i64) -> Result<Self> {
        sharpness.check_dims(&flow_disc, "sharpness vs flow discrepancy")?;
        sharpness.check_dims(&activity, "sharpness vs activity")?;
        for (name, g) in [("sharpness", &sharpness), ("activity", &activity)] {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("{name} cue")));
            }
        }
        if flow_disc.as_slice().iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFinite("flow discrepancy cue".into()));
        }
        Ok(Self {
            sharpness,
            flow_disc,
            activity,
            timestamp,
        })
    }

    /// Cues of one window from its compensated stack and flows.
    pub fn compute(
        comp: &CompensatedStack<T>,
        observed: &FlowField<T>,
        rigid: &FlowField<T>,
        th: &Thresholds,
        timestamp: i64,
    ) -> Result<Self> {
        comp.collapsed.check_dims(&observed.u, "compensated stack vs flow")?;
        let sharpness = match th.cue {
            SharpnessCue::Cancellation => cancellation_cue(comp, T::lit(th.sharp_min_mass)),
            SharpnessCue::Dispersion => sharpness_cue(comp),
        };
        Self::new(
            sharpness,
            flow_discrepancy_cue(observed, rigid)?,
            activity_map(comp, th.activity_radius),
            timestamp,
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        self.sharpness.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tau_sharp: f64,
    /// Pixels.
    pub tau_flow: f64,
    pub min_activity: f64,
    /// Activity counts events within this many pixels (box).
    pub activity_radius: usize,
    /// Pixels; smaller 4-connected components are dropped.
    pub min_area: usize,
    pub cue: SharpnessCue,
    /// Mass below which the cancellation cue reports 0.
    pub sharp_min_mass: f64,
    /// Weight of the propagated prior in temporal fusion.
    pub gamma: f64,
    pub tau_fuse: f64,
    /// Exponent of the soft score's logistic in the cue ratio.
    pub score_steepness: f64,
    /// Soft score where the activity gate fails. Below 0.5, so it reads as
    /// static on its own but lets a confident prior carry the pixel.
    pub inactive_score: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_sharp: 0.5,
            tau_flow: 3.0,
            min_activity: 2.0,
            activity_radius: 1,
            min_area: 20,
            cue: SharpnessCue::Cancellation,
            sharp_min_mass: 2.0,
            gamma: 0.3,
            tau_fuse: 0.5,
            score_steepness: 4.0,
            inactive_score: 0.45,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        finite_nonneg("tau_sharp", self.tau_sharp)?;
        finite_nonneg("tau_flow", self.tau_flow)?;
        finite_nonneg("min_activity", self.min_activity)?;
        finite_nonneg("sharp_min_mass", self.sharp_min_mass)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma = {} must lie in [0, 1]", self.gamma)));
        }
        finite_nonneg("tau_fuse", self.tau_fuse)?;
        if !(self.score_steepness.is_finite() && self.score_steepness > 0.0) {
            return Err(Error::invalid(format!("score_steepness = {} must be finite and > 0", self.score_steepness)));
        }
        if !(0.0..0.5).contains(&self.inactive_score) {
            return Err(Error::invalid(format!("inactive_score = {} must lie in [0, 0.5)", self.inactive_score)));
        }
        Ok(())
    }

    /// Missing keys keep their defaults.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cue = match kv.raw("sharpness_cue") {
            Some(s) => SharpnessCue::parse(s)?,
            None => d.cue,
        };
        let th = Self {
            tau_sharp: kv.get_or("tau_sharp", d.tau_sharp)?,
            tau_flow: kv.get_or("tau_flow", d.tau_flow)?,
            min_activity: kv.get_or("min_activity", d.min_activity)?,
            activity_radius: kv.get_or("activity_radius", d.activity_radius)?,
            min_area: kv.get_or("min_area", d.min_area)?,
            cue,
            sharp_min_mass: kv.get_or("sharp_min_mass", d.sharp_min_mass)?,
            gamma: kv.get_or("gamma", d.gamma)?,
            tau_fuse: kv.get_or("tau_fuse", d.tau_fuse)?,
            score_steepness: kv.get_or("score_steepness", d.score_steepness)?,
            inactive_score: kv.get_or("inactive_score", d.inactive_score)?,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn to_config(&self) -> String {
        ConfigWriter::new()
            .entry("tau_sharp", self.tau_sharp)
            .entry("tau_flow", self.tau_flow)
            .entry("min_activity", self.min_activity)
            .entry("activity_radius", self.activity_radius)
            .entry("min_area", self.min_area)
            .entry("sharpness_cue", self.cue.name())
            .entry("sharp_min_mass", self.sharp_min_mass)
            .entry("gamma", self.gamma)
            .entry("tau_fuse", self.tau_fuse)
            .entry("score_steepness", self.score_steepness)
            .entry("inactive_score", self.inactive_score)
            .finish()
    }
}

#[inline]
fn passes<T: Real>(v: T, tau: f64) -> bool {
    v.is_finite() && v >= T::lit(tau)
}

/// The threshold rule before small components are removed.
pub fn raw_dynamic<T: Real>(cues: &CueMaps<T>, th: &Thresholds) -> Grid<bool> {
    let (h, w) = cues.dims();
    Grid::from_fn(h, w, |y, x| {
        passes(*cues.activity.get(y, x), th.min_activity)
            && (passes(*cues.sharpness.get(y, x), th.tau_sharp) || passes(*cues.flow_disc.get(y, x), th.tau_flow))
    })
}

/// Clears 4-connected components with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &Grid<bool>, min_area: usize) -> Grid<bool> {
    let (h, w) = mask.dims();
    let src = mask.as_slice();
    let mut out = src.to_vec();
    if min_area <= 1 {
        return mask.clone();
    }
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if !src[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        component.clear();
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if src[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if component.len() < min_area {
            for &i in &component {
                out[i] = false;
            }
        }
    }
    Grid::from_vec(h, w, out).expect("dims")
}

pub fn segment<T: Real>(cues: &CueMaps<T>, th: &Thresholds) -> Mask {
    Mask::new(remove_small_components(&raw_dynamic(cues, th), th.min_area), cues.timestamp)
}

/// Continuous version of the threshold rule, in [0, 1]: `r^k / (1 + r^k)` of
/// the largest cue-to-threshold ratio `r`, and `inactive_score` where the
/// activity gate fails. It reaches 0.5 exactly where [`raw_dynamic`] switches on.
pub fn soft_score<T: Real>(cues: &CueMaps<T>, th: &Thresholds) -> Grid<T> {
    let (h, w) = cues.dims();
    let k = T::lit(-th.score_steepness);
    let inactive = T::lit(th.inactive_score);
    let ratio = |v: T, tau: f64| -> T {
        if !v.is_finite() {
            T::zero()
        } else if tau > 0.0 {
            v / T::lit(tau)
        } else if v >= T::zero() {
            // a zero threshold passes everything
            T::lit(2.0)
        } else {
            T::zero()
        }
    };
    Grid::from_fn(h, w, |y, x| {
        if !passes(*cues.activity.get(y, x), th.min_activity) {
            return inactive;
        }
        let r = ratio(*cues.sharpness.get(y, x), th.tau_sharp).max(ratio(*cues.flow_disc.get(y, x), th.tau_flow));
        // written with r^-k so that r = 0 and huge r both stay finite
        (T::one() + r.max(T::zero()).powf(k)).recip()
    })
}

/// Carries the previous mask to the current time: `prior(p) = prev(p + flow(p))`
/// with `flow` pointing from the current window back to the previous one.
pub fn propagate_mask<T: Real>(prev: &Mask, flow: &FlowField<T>) -> Result<Grid<T>> {
    let field = prev.data.map(|&b| if b { T::one() } else { T::zero() });
    let warped = warp_by_flow(&field, flow)?;
    Ok(warped.image.map(|v| v.max(T::zero()).min(T::one())))
}

/// `((1 − γ)·current + γ·prior) ≥ τ`.
pub fn temporal_fuse<T: Real>(current: &Grid<T>, prior: &Grid<T>, gamma: f64, tau: f64, timestamp: i64) -> Result<Mask> {
    current.check_dims(prior, "current score vs prior")?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma = {gamma} must lie in [0, 1]")));
    }
    let g = T::lit(gamma);
    let keep = T::one() - g;
    let tau = T::lit(tau);
    let (h, w) = current.dims();
    let data = current
        .as_slice()
        .iter()
        .zip(prior.as_slice())
        .map(|(c, p)| keep * *c + g * *p >= tau)
        .collect();
    Ok(Mask::new(Grid::from_vec(h, w, data)?, timestamp))
}

/// Segments a time-ordered sequence, fusing each frame with the previous
/// output carried forward by flow. The first frame has no prior.
#[derive(Debug, Clone)]
pub struct SequenceSegmenter {
    pub thresholds: Thresholds,
    prev: Option<Mask>,
}

impl SequenceSegmenter {
    pub fn new(thresholds: Thresholds) -> Result<Self> {
        thresholds.validate()?;
        Ok(Self { thresholds, prev: None })
    }

    /// Continues a sequence whose last output was `prev`.
    pub fn resume(thresholds: Thresholds, prev: Mask) -> Result<Self> {
        thresholds.validate()?;
        Ok(Self { thresholds, prev: Some(prev) })
    }

    /// `back_flow` maps this frame's pixels to the previous frame.
    pub fn step<T: Real>(&mut self, cues: &CueMaps<T>, back_flow: &FlowField<T>) -> Result<Mask> {
        let th = &self.thresholds;
        let mask = match &self.prev {
            None => segment(cues, th),
            Some(prev) => {
                let prior = propagate_mask(prev, back_flow)?;
                let fused = temporal_fuse(&soft_score(cues, th), &prior, th.gamma, th.tau_fuse, cues.timestamp)?;
                Mask::new(remove_small_components(&fused.data, th.min_area), cues.timestamp)
            }
        };
        self.prev = Some(mask.clone());
        Ok(mask)
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}
