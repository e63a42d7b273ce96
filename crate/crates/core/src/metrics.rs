//! Mask and event level overlap scores and sequence reports.
//!
//! A class that is empty in both prediction and ground truth scores 1.

use rayon::prelude::*;
use serde_json::json;

use crate::camera::FlowField;
use crate::error::{Error, Result};
use crate::events::EventWindow;
use crate::mask::Mask;
use crate::segment::propagate_mask;

fn check(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Intersection and union sizes of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub inter: u64,
    pub union: u64,
}

impl Overlap {
    pub fn ratio(self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }

    fn add(self, o: Overlap) -> Overlap {
        Overlap {
            inter: self.inter + o.inter,
            union: self.union + o.union,
        }
    }
}

/// Overlaps of the dynamic and the static class.
pub fn overlaps(pred: &Mask, gt: &Mask) -> Result<(Overlap, Overlap)> {
    check(pred, gt)?;
    let (mut d, mut s) = (Overlap::default(), Overlap::default());
    for (p, g) in pred.data.as_slice().iter().zip(gt.data.as_slice()) {
        d.inter += (*p && *g) as u64;
        d.union += (*p || *g) as u64;
        s.inter += (!*p && !*g) as u64;
        s.union += (!*p || !*g) as u64;
    }
    Ok((d, s))
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(overlaps(pred, gt)?.0.ratio())
}

/// Mean of the dynamic and static IoU.
pub fn miou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (d, s) = overlaps(pred, gt)?;
    Ok((d.ratio() + s.ratio()) / 2.0)
}

/// Dynamic-class overlap counted over events, each labelled by the masks at
/// its pixel.
pub fn event_overlap(pred: &Mask, gt: &Mask, events: &EventWindow) -> Result<Overlap> {
    check(pred, gt)?;
    let (h, w) = pred.dims();
    events.check_sensor(w, h)?;
    let mut o = Overlap::default();
    for e in events.events() {
        let (y, x) = (e.y as usize, e.x as usize);
        let (p, g) = (pred.at(y, x), gt.at(y, x));
        o.inter += (p && g) as u64;
        o.union += (p || g) as u64;
    }
    Ok(o)
}

pub fn piou(pred: &Mask, gt: &Mask, events: &EventWindow) -> Result<f64> {
    Ok(event_overlap(pred, gt, events)?.ratio())
}

/// Overlap of `mask` with the previous mask carried along `flow` and cut at 0.5.
fn carried_overlap(prev: &Mask, mask: &Mask, flow: &FlowField<f64>) -> Result<Overlap> {
    let prior = propagate_mask(prev, flow)?;
    let carried = Mask::new(prior.map(|v| *v >= 0.5), mask.timestamp);
    Ok(overlaps(mask, &carried)?.0)
}

/// Mean IoU between each mask and its predecessor carried forward by
/// `flows[i]`, the flow from `masks[i + 1]` back to `masks[i]`.
pub fn temporal_consistency(masks: &[Mask], flows: &[FlowField<f64>]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::UnderConstrained(
            "temporal consistency needs at least two masks".into(),
        ));
    }
    if flows.len() != masks.len() - 1 {
        return Err(Error::shape(format!(
            "{} masks need {} flows, got {}",
            masks.len(),
            masks.len() - 1,
            flows.len()
        )));
    }
    let scores = pair_overlaps(masks, flows)?;
    Ok(scores.iter().map(|o| o.ratio()).sum::<f64>() / scores.len() as f64)
}

fn pair_overlaps(masks: &[Mask], flows: &[FlowField<f64>]) -> Result<Vec<Overlap>> {
    masks
        .par_windows(2)
        .zip(flows.par_iter())
        .map(|(pair, f)| carried_overlap(&pair[0], &pair[1], f))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Mean of per-frame scores.
    #[default]
    Macro,
    /// Ratios of counts pooled over all frames.
    Micro,
}

impl Averaging {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Self::Macro),
            "micro" => Ok(Self::Micro),
            _ => Err(Error::invalid(format!("unknown averaging '{s}' (macro|micro)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Macro => "macro",
            Self::Micro => "micro",
        }
    }

    fn reduce(self, items: &[Overlap]) -> f64 {
        match self {
            Self::Macro => items.iter().map(|o| o.ratio()).sum::<f64>() / items.len() as f64,
            Self::Micro => items.iter().fold(Overlap::default(), |a, o| a.add(*o)).ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub averaging: Averaging,
    pub iou: f64,
    pub miou: f64,
    pub piou: Option<f64>,
    pub temporal_consistency: Option<f64>,
}

impl EvalReport {
    /// `key=value` lines with six decimals.
    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "frames={}\naveraging={}\niou={:.6}\nmiou={:.6}\n",
            self.frames,
            self.averaging.name(),
            self.iou,
            self.miou
        );
        if let Some(p) = self.piou {
            out += &format!("piou={p:.6}\n");
        }
        if let Some(t) = self.temporal_consistency {
            out += &format!("temporal_consistency={t:.6}\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let v = json!({
            "frames": self.frames,
            "averaging": self.averaging.name(),
            "iou": self.iou,
            "miou": self.miou,
            "piou": self.piou,
            "temporal_consistency": self.temporal_consistency,
        });
        serde_json::to_string_pretty(&v).expect("plain values serialise")
    }
}

/// Scores a sequence of predicted masks against ground truth. With `events`
/// (one window per frame) pIoU is reported; with `flows` (`frames − 1`
/// back-flows, see [`temporal_consistency`]) the temporal consistency of the
/// predictions is reported.
pub fn evaluate_sequence(
    preds: &[Mask],
    gts: &[Mask],
    events: Option<&[EventWindow]>,
    flows: Option<&[FlowField<f64>]>,
    averaging: Averaging,
) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predicted vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let per_frame: Vec<(Overlap, Overlap)> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| overlaps(p, g))
        .collect::<Result<_>>()?;
    let dynamic: Vec<Overlap> = per_frame.iter().map(|o| o.0).collect();
    let stat: Vec<Overlap> = per_frame.iter().map(|o| o.1).collect();
    let piou = match events {
        None => None,
        Some(ev) => {
            if ev.len() != preds.len() {
                return Err(Error::shape(format!(
                    "{} event windows for {} frames",
                    ev.len(),
                    preds.len()
                )));
            }
            let o: Vec<Overlap> = preds
                .par_iter()
                .zip(gts.par_iter())
                .zip(ev.par_iter())
                .map(|((p, g), e)| event_overlap(p, g, e))
                .collect::<Result<_>>()?;
            Some(averaging.reduce(&o))
        }
    };
    let temporal_consistency = match flows {
        Some(f) if preds.len() >= 2 => Some(temporal_consistency(preds, f)?),
        _ => None,
    };
    Ok(EvalReport {
        frames: preds.len(),
        averaging,
        iou: averaging.reduce(&dynamic),
        miou: (averaging.reduce(&dynamic) + averaging.reduce(&stat)) / 2.0,
        piou,
        temporal_consistency,
    })
}
