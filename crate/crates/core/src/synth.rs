//! Layered synthetic scenes and an ideal event camera.
//!
//! A scene is a textured fronto-parallel background plane plus textured
//! rectangles on their own fronto-parallel planes, seen by a pinhole camera
//! moving with a constant twist. The world frame is the camera frame at
//! `t = 0` and the camera-to-world pose at time `t` is `exp(twist · t)`.
//! Every ground-truth quantity (depth, pose, rigid and full flow, masks) has
//! a closed form here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{DepthMap, FlowField, Intrinsics, Pose, Twist};
use crate::config::{ConfigWriter, KeyValues};
use crate::error::{Error, Result};
use crate::events::{make_window, Event, EventWindow, Polarity};
use crate::grid::Grid;
use crate::linalg::{self, Vec3};
use crate::mask::Mask;

const NS_PER_S: f64 = 1e9;

/// A textured rectangle moving with constant image-plane velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    /// `[x, y, width, height]` in pixels at `t = 0`.
    pub rect: [f64; 4],
    /// Pixels per second, as seen from the `t = 0` camera.
    pub velocity: [f64; 2],
    /// Depth of the object plane (m).
    pub depth: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics<f64>,
    pub background_depth: f64,
    pub background_seed: u64,
    /// Noise cell size of the procedural textures (px at unit scale).
    pub texture_scale: f64,
    pub objects: Vec<ObjectSpec>,
    /// Camera twist per second `[ω; v]`.
    pub camera_twist: Twist<f64>,
    pub duration_ns: i64,
    /// Log-intensity contrast threshold `C`.
    pub contrast_threshold: f64,
    /// Internal rendering rate (Hz).
    pub frame_rate: f64,
    /// Uniform timestamp jitter amplitude (ns).
    pub jitter_ns: i64,
    /// Probability of dropping each event.
    pub dropout: f64,
}

impl SceneSpec {
    /// A static, untextured-motion scene of the given size with sensible defaults.
    pub fn new(width: usize, height: usize, intrinsics: Intrinsics<f64>) -> Self {
        Self {
            width,
            height,
            intrinsics,
            background_depth: 5.0,
            background_seed: 1,
            texture_scale: 6.0,
            objects: Vec::new(),
            camera_twist: [0.0; 6],
            duration_ns: 100_000_000,
            contrast_threshold: 0.2,
            frame_rate: 1000.0,
            jitter_ns: 0,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::invalid("scene dimensions must be in 1..=65535"));
        }
        if !(self.background_depth > 0.0) {
            return Err(Error::invalid("background depth must be > 0"));
        }
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::invalid("contrast threshold must be > 0"));
        }
        if !(self.frame_rate > 0.0) || self.duration_ns <= 0 {
            return Err(Error::invalid("frame rate and duration must be > 0"));
        }
        if !(self.texture_scale > 0.0) {
            return Err(Error::invalid("texture scale must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.jitter_ns < 0 {
            return Err(Error::invalid("dropout must be in [0, 1) and jitter >= 0"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.depth > 0.0) {
                return Err(Error::invalid(format!("object {i}: depth must be > 0")));
            }
            let [x, y, w, h] = o.rect;
            if w <= 0.0 || h <= 0.0 || x < 0.0 || y < 0.0 || x + w > self.width as f64 || y + h > self.height as f64 {
                return Err(Error::invalid(format!(
                    "object {i}: rectangle {:?} not inside the {}x{} sensor",
                    o.rect, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Parses the `key = value` scene description.
    pub fn from_config(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let width: usize = kv.require("width")?;
        let height: usize = kv.require("height")?;
        let fx: f64 = kv.require("fx")?;
        let fy: f64 = kv.get_or("fy", fx)?;
        let cx: f64 = kv.get_or("cx", (width as f64 - 1.0) / 2.0)?;
        let cy: f64 = kv.get_or("cy", (height as f64 - 1.0) / 2.0)?;
        let mut spec = SceneSpec::new(width, height, Intrinsics::new(fx, fy, cx, cy)?);
        spec.background_depth = kv.get_or("background_depth", spec.background_depth)?;
        spec.background_seed = kv.get_or("background_seed", spec.background_seed)?;
        spec.texture_scale = kv.get_or("texture_scale", spec.texture_scale)?;
        if let Some(t) = kv.get_array::<6>("camera_twist")? {
            spec.camera_twist = t;
        }
        spec.duration_ns = kv.get_or("duration_ns", spec.duration_ns)?;
        spec.contrast_threshold = kv.get_or("contrast_threshold", spec.contrast_threshold)?;
        spec.frame_rate = kv.get_or("frame_rate", spec.frame_rate)?;
        spec.jitter_ns = kv.get_or("jitter_ns", spec.jitter_ns)?;
        spec.dropout = kv.get_or("dropout", spec.dropout)?;
        let count: usize = kv.get_or("objects", 0)?;
        for i in 0..count {
            let key = |k: &str| format!("object.{i}.{k}");
            let rect = kv
                .get_array::<4>(&key("rect"))?
                .ok_or_else(|| Error::invalid(format!("missing {}", key("rect"))))?;
            let velocity = kv.get_array::<2>(&key("velocity"))?.unwrap_or([0.0; 2]);
            spec.objects.push(ObjectSpec {
                rect,
                velocity,
                depth: kv.get_or(&key("depth"), spec.background_depth)?,
                seed: kv.get_or(&key("seed"), 1000 + i as u64)?,
            });
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config(&self) -> String {
        let k = &self.intrinsics;
        let mut w = ConfigWriter::new();
        w.comment("synthetic scene")
            .entry("width", self.width)
            .entry("height", self.height)
            .entry("fx", format!("{:?}", k.fx))
            .entry("fy", format!("{:?}", k.fy))
            .entry("cx", format!("{:?}", k.cx))
            .entry("cy", format!("{:?}", k.cy))
            .entry("background_depth", format!("{:?}", self.background_depth))
            .entry("background_seed", self.background_seed)
            .entry("texture_scale", format!("{:?}", self.texture_scale))
            .array("camera_twist", &self.camera_twist)
            .entry("duration_ns", self.duration_ns)
            .entry("contrast_threshold", format!("{:?}", self.contrast_threshold))
            .entry("frame_rate", format!("{:?}", self.frame_rate))
            .entry("jitter_ns", self.jitter_ns)
            .entry("dropout", format!("{:?}", self.dropout))
            .entry("objects", self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            w.array(&format!("object.{i}.rect"), &o.rect)
                .array(&format!("object.{i}.velocity"), &o.velocity)
                .entry(&format!("object.{i}.depth"), format!("{:?}", o.depth))
                .entry(&format!("object.{i}.seed"), o.seed);
        }
        w.finish()
    }

    fn object_world_velocity(&self, o: &ObjectSpec) -> Vec3<f64> {
        let k = &self.intrinsics;
        [o.velocity[0] * o.depth / k.fx, o.velocity[1] * o.depth / k.fy, 0.0]
    }

    fn is_moving(o: &ObjectSpec) -> bool {
        o.velocity != [0.0, 0.0]
    }

    /// Camera-to-world pose at time `t` (ns).
    pub fn camera_pose(&self, t: i64) -> Pose<f64> {
        let s = t as f64 / NS_PER_S;
        Pose::exp(&self.camera_twist.map(|v| v * s)).expect("finite twist")
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((i as u64).wrapping_mul(0x1F1F_1F1F) ^ splitmix(j as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinearly interpolated lattice noise in `[0, 1)`.
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (fu, fv) = (u.floor(), v.floor());
    let (i, j) = (fu as i64, fv as i64);
    let (a, b) = (u - fu, v - fv);
    let n00 = lattice(seed, i, j);
    let n10 = lattice(seed, i + 1, j);
    let n01 = lattice(seed, i, j + 1);
    let n11 = lattice(seed, i + 1, j + 1);
    (1.0 - a) * (1.0 - b) * n00 + a * (1.0 - b) * n10 + (1.0 - a) * b * n01 + a * b * n11
}

/// Intensity in `[0.15, 1.0)` of a two-octave texture at texture pixel `(u, v)`.
fn texture_intensity(seed: u64, scale: f64, u: f64, v: f64) -> f64 {
    let coarse = value_noise(seed, u / scale, v / scale);
    let fine = value_noise(seed.wrapping_add(77), u / (0.4 * scale), v / (0.4 * scale));
    0.15 + 0.85 * (0.65 * coarse + 0.35 * fine)
}

/// What the ray through a pixel hits at some time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// `None` for the background plane.
    pub object: Option<usize>,
    /// Depth along the camera's optical axis (m).
    pub depth: f64,
    /// World point hit.
    pub world: Vec3<f64>,
    pub log_intensity: f64,
}

/// Renders and ray-traces a scene.
pub struct Scene<'a> {
    spec: &'a SceneSpec,
    /// Object indices sorted nearest first.
    order: Vec<usize>,
}

impl<'a> Scene<'a> {
    pub fn new(spec: &'a SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut order: Vec<usize> = (0..spec.objects.len()).collect();
        order.sort_by(|&a, &b| spec.objects[a].depth.total_cmp(&spec.objects[b].depth));
        Ok(Self { spec, order })
    }

    pub fn spec(&self) -> &SceneSpec {
        self.spec
    }

    /// Traces pixel `(x, y)` at time `t` given the camera-to-world pose.
    pub fn trace(&self, cam: &Pose<f64>, t: i64, x: f64, y: f64) -> Option<Hit> {
        let spec = self.spec;
        let k = &spec.intrinsics;
        let d = cam.rotate(&k.backproject(x, y));
        let o = *cam.translation();
        if d[2] <= 0.0 {
            return None;
        }
        let ts = t as f64 / NS_PER_S;
        let on_plane = |z: f64| {
            let s = (z - o[2]) / d[2];
            (s > 0.0).then(|| (s, linalg::add_vec(&o, &linalg::scale_vec(&d, s))))
        };
        // front-to-back compositing in linear intensity; rectangle borders
        // fade over one texture pixel so intensities stay continuous in time
        let mut intensity = 0.0;
        let mut transmittance = 1.0;
        let mut first: Option<(usize, f64, Vec3<f64>)> = None;
        for &i in &self.order {
            let obj = &spec.objects[i];
            let Some((s, world)) = on_plane(obj.depth) else {
                continue;
            };
            let vel = spec.object_world_velocity(obj);
            let local = linalg::add_vec(&world, &linalg::scale_vec(&vel, -ts));
            let u = k.fx * local[0] / obj.depth + k.cx;
            let v = k.fy * local[1] / obj.depth + k.cy;
            let [rx, ry, rw, rh] = obj.rect;
            let ramp = |p: f64, lo: f64, len: f64| ((p - lo).min(lo + len - p) + 0.5).clamp(0.0, 1.0);
            let alpha = ramp(u, rx, rw) * ramp(v, ry, rh);
            if alpha > 0.0 {
                intensity += transmittance * alpha * texture_intensity(obj.seed, spec.texture_scale, u - rx, v - ry);
                transmittance *= 1.0 - alpha;
            }
            if first.is_none() && u >= rx && u < rx + rw && v >= ry && v < ry + rh {
                first = Some((i, s, world));
            }
        }
        let (s, world) = on_plane(spec.background_depth)?;
        if transmittance > 0.0 {
            let u = k.fx * world[0] / spec.background_depth + k.cx;
            let v = k.fy * world[1] / spec.background_depth + k.cy;
            intensity += transmittance * texture_intensity(spec.background_seed, spec.texture_scale, u, v);
        }
        let (object, depth, world) = match first {
            Some((i, s, w)) => (Some(i), s, w),
            None => (None, s, world),
        };
        Some(Hit {
            object,
            depth,
            world,
            log_intensity: intensity.ln(),
        })
    }

    /// Per-pixel hits at time `t`.
    pub fn trace_all(&self, t: i64) -> Vec<Option<Hit>> {
        let cam = self.spec.camera_pose(t);
        let (h, w) = (self.spec.height, self.spec.width);
        (0..h * w)
            .into_par_iter()
            .map(|i| self.trace(&cam, t, (i % w) as f64, (i / w) as f64))
            .collect()
    }

    /// Natural-log intensity image at time `t`.
    pub fn render(&self, t: i64) -> Result<Grid<f64>> {
        if t < 0 || t > self.spec.duration_ns {
            return Err(Error::invalid(format!(
                "render time {t} outside [0, {}]",
                self.spec.duration_ns
            )));
        }
        let (h, w) = (self.spec.height, self.spec.width);
        let data = self
            .trace_all(t)
            .into_iter()
            .map(|h| h.map_or(0.0, |h| h.log_intensity))
            .collect();
        Grid::from_vec(h, w, data)
    }
}

/// `render_scene` entry point: log-intensity image of `spec` at `t`.
pub fn render_scene(spec: &SceneSpec, t: i64) -> Result<Grid<f64>> {
    Scene::new(spec)?.render(t)
}

/// Threshold crossings of one pixel between two rendered frames.
///
/// The log intensity is interpolated linearly from `l_prev` at `t_prev` to
/// `l_next` at `t_next`; each crossing of `reference ± c` emits an event and
/// moves the reference level by `± c`.
pub fn pixel_crossings(
    l_prev: f64,
    l_next: f64,
    t_prev: i64,
    t_next: i64,
    reference: &mut f64,
    c: f64,
    mut emit: impl FnMut(i64, Polarity),
) {
    let dl = l_next - l_prev;
    if dl == 0.0 {
        return;
    }
    let dt = (t_next - t_prev) as f64;
    let stamp = |level: f64| t_prev + ((level - l_prev) / dl * dt).round() as i64;
    if dl > 0.0 {
        while *reference + c <= l_next {
            *reference += c;
            emit(stamp(*reference), Polarity::Positive);
        }
    } else {
        while *reference - c >= l_next {
            *reference -= c;
            emit(stamp(*reference), Polarity::Negative);
        }
    }
}

/// Converts a sequence of rendered log frames into events inside `[t_first, t_last)`.
///
/// Events are merged pixel-major then sorted stably by time.
pub fn events_from_frames(frames: &[(i64, Grid<f64>)], c: f64) -> Result<EventWindow> {
    let Some((t_first, first)) = frames.first() else {
        return Err(Error::invalid("no frames"));
    };
    let t_last = frames.last().unwrap().0;
    let (h, w) = first.dims();
    for pair in frames.windows(2) {
        pair[0].1.check_dims(&pair[1].1, "frames")?;
    }
    let per_pixel: Vec<Vec<Event>> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as u16, (i / w) as u16);
            let mut reference = first.as_slice()[i];
            let mut out = Vec::new();
            for pair in frames.windows(2) {
                let (t0, f0) = &pair[0];
                let (t1, f1) = &pair[1];
                pixel_crossings(f0.as_slice()[i], f1.as_slice()[i], *t0, *t1, &mut reference, c, |t, p| {
                    out.push(Event::new(x, y, t, p))
                });
            }
            out
        })
        .collect();
    let mut events: Vec<Event> = per_pixel.into_iter().flatten().collect();
    events.sort_by_key(|e| e.t);
    make_window(&events, *t_first, t_last)
}

fn frame_times(spec: &SceneSpec) -> Vec<i64> {
    let n = ((spec.duration_ns as f64 / NS_PER_S) * spec.frame_rate).ceil().max(1.0) as i64;
    (0..=n)
        .map(|k| ((k as i128 * spec.duration_ns as i128) / n as i128) as i64)
        .collect()
}

/// Ideal event camera over `[0, duration)`, then optional dropout and jitter.
pub fn emit_events(spec: &SceneSpec, seed: u64) -> Result<EventWindow> {
    let scene = Scene::new(spec)?;
    let times = frame_times(spec);
    let c = spec.contrast_threshold;
    let (h, w) = (spec.height, spec.width);
    let mut reference = scene.render(0)?.into_vec();
    let mut prev = reference.clone();
    let mut per_pixel: Vec<Vec<Event>> = vec![Vec::new(); h * w];
    let mut max_change: f64 = 0.0;
    for pair in times.windows(2) {
        let next = scene.render(pair[1])?.into_vec();
        max_change = prev
            .iter()
            .zip(&next)
            .fold(max_change, |m, (a, b)| m.max((b - a).abs()));
        per_pixel
            .par_iter_mut()
            .zip(reference.par_iter_mut())
            .enumerate()
            .for_each(|(i, (out, r))| {
                let (x, y) = ((i % w) as u16, (i / w) as u16);
                pixel_crossings(prev[i], next[i], pair[0], pair[1], r, c, |t, p| {
                    out.push(Event::new(x, y, t, p))
                });
            });
        prev = next;
    }
    if max_change >= 4.0 * c {
        let dt = spec.duration_ns as f64 / NS_PER_S / (times.len() - 1) as f64;
        let rate_per_unit = max_change / dt;
        return Err(Error::UnderSampled {
            max_change,
            required_rate: rate_per_unit / (4.0 * c) * 1.01,
        });
    }
    let mut events: Vec<Event> = per_pixel.into_iter().flatten().collect();
    if spec.dropout > 0.0 || spec.jitter_ns > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = spec.duration_ns - 1;
        events = events
            .into_iter()
            .filter_map(|mut e| {
                if spec.dropout > 0.0 && rng.gen_bool(spec.dropout) {
                    return None;
                }
                if spec.jitter_ns > 0 {
                    e.t = (e.t + rng.gen_range(-spec.jitter_ns..=spec.jitter_ns)).clamp(0, last);
                }
                Some(e)
            })
            .collect();
    }
    events.sort_by_key(|e| e.t);
    make_window(&events, 0, spec.duration_ns)
}

/// Ground truth for one window `[t0, t1)`, all referenced at `t1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTruth {
    pub t0: i64,
    pub t1: i64,
    pub depth: DepthMap<f64>,
    /// Maps the camera frame at `t1` into the camera frame at `t0`.
    pub pose: Pose<f64>,
    /// Full flow `t1 → t0` (rigid plus object motion).
    pub flow: FlowField<f64>,
    /// Flow `t1 → t0` of a fully static scene with the same geometry.
    pub rigid_flow: FlowField<f64>,
    /// Footprint of moving objects at `t1`.
    pub mask: Mask,
}

/// Closed-form ground truth for `[t0, t1)`.
pub fn window_truth(spec: &SceneSpec, t0: i64, t1: i64) -> Result<WindowTruth> {
    if t0 >= t1 {
        return Err(Error::Bounds { t0, t1 });
    }
    let scene = Scene::new(spec)?;
    let k = &spec.intrinsics;
    let (h, w) = (spec.height, spec.width);
    let cam0_inv = spec.camera_pose(t0).inverse();
    let cam1 = spec.camera_pose(t1);
    let pose = cam0_inv.compose(&cam1);
    let hits = scene.trace_all(t1);
    let dt = (t1 - t0) as f64 / NS_PER_S;
    let mut depth = Vec::with_capacity(h * w);
    let mut fu = Vec::with_capacity(h * w);
    let mut fv = Vec::with_capacity(h * w);
    let mut ru = Vec::with_capacity(h * w);
    let mut rv = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for (i, hit) in hits.iter().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let Some(hit) = hit else {
            return Err(Error::invalid(format!(
                "pixel ({x}, {y}) sees no scene plane at t={t1}"
            )));
        };
        depth.push(hit.depth);
        let project0 = |world: &Vec3<f64>| k.project(&cam0_inv.transform(world));
        let (rx, ry) = project0(&hit.world).map_or((f64::NAN, f64::NAN), |(px, py)| (px - x, py - y));
        ru.push(rx);
        rv.push(ry);
        let moving = hit.object.map(|o| &spec.objects[o]).filter(|o| SceneSpec::is_moving(o));
        match moving {
            Some(obj) => {
                let vel = spec.object_world_velocity(obj);
                let earlier = linalg::add_vec(&hit.world, &linalg::scale_vec(&vel, -dt));
                let (ox, oy) = project0(&earlier).map_or((f64::NAN, f64::NAN), |(px, py)| (px - x, py - y));
                fu.push(ox);
                fv.push(oy);
                mask.push(true);
            }
            None => {
                fu.push(rx);
                fv.push(ry);
                mask.push(false);
            }
        }
    }
    Ok(WindowTruth {
        t0,
        t1,
        depth: DepthMap::new(Grid::from_vec(h, w, depth)?)?,
        pose,
        flow: FlowField::new(Grid::from_vec(h, w, fu)?, Grid::from_vec(h, w, fv)?)?,
        rigid_flow: FlowField::new(Grid::from_vec(h, w, ru)?, Grid::from_vec(h, w, rv)?)?,
        mask: Mask::from_vec(h, w, mask, t1)?,
    })
}

/// Motion mask of the scene at an arbitrary time.
pub fn mask_at(spec: &SceneSpec, t: i64) -> Result<Mask> {
    let scene = Scene::new(spec)?;
    let data = scene
        .trace_all(t)
        .into_iter()
        .map(|h| {
            h.and_then(|h| h.object)
                .is_some_and(|o| SceneSpec::is_moving(&spec.objects[o]))
        })
        .collect();
    Mask::from_vec(spec.height, spec.width, data, t)
}

/// Events of one window plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub events: EventWindow,
    pub depth_gt: DepthMap<f64>,
    pub pose_gt: Pose<f64>,
    pub flow_gt: FlowField<f64>,
    pub rigid_flow_gt: FlowField<f64>,
    pub masks_gt: Vec<Mask>,
}

impl SynthSample {
    fn from_parts(events: EventWindow, truth: WindowTruth) -> Self {
        Self {
            events,
            depth_gt: truth.depth,
            pose_gt: truth.pose,
            flow_gt: truth.flow,
            rigid_flow_gt: truth.rigid_flow,
            masks_gt: vec![truth.mask],
        }
    }
}

/// Whole-duration sample: one window `[0, duration)` with its mask at the end.
pub fn make_sample(spec: &SceneSpec, seed: u64) -> Result<SynthSample> {
    let events = emit_events(spec, seed)?;
    let truth = window_truth(spec, 0, spec.duration_ns)?;
    Ok(SynthSample::from_parts(events, truth))
}

/// Splits the scene duration into consecutive windows of `window_ns`.
pub fn make_sequence(spec: &SceneSpec, seed: u64, window_ns: i64) -> Result<Vec<SynthSample>> {
    if window_ns <= 0 || window_ns > spec.duration_ns {
        return Err(Error::invalid(format!(
            "window {window_ns} ns must be in (0, {}]",
            spec.duration_ns
        )));
    }
    let all = emit_events(spec, seed)?;
    let mut out = Vec::new();
    let mut t0 = 0;
    while t0 + window_ns <= spec.duration_ns {
        let t1 = t0 + window_ns;
        let events = make_window(all.events(), t0, t1)?;
        out.push(SynthSample::from_parts(events, window_truth(spec, t0, t1)?));
        t0 = t1;
    }
    Ok(out)
}

/// Seeded scene families used by tests, benchmarks and the demo.
pub mod presets {
    use super::*;

    pub const WIDTH: usize = 240;
    pub const HEIGHT: usize = 180;

    pub fn intrinsics() -> Intrinsics<f64> {
        Intrinsics::new(200.0, 200.0, 119.5, 89.5).expect("valid")
    }

    fn base(seed: u64) -> SceneSpec {
        let mut s = SceneSpec::new(WIDTH, HEIGHT, intrinsics());
        s.background_seed = seed.wrapping_mul(7919).wrapping_add(3);
        s
    }

    fn unit_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = linalg::norm(&v);
            if n > 0.2 && n <= 1.0 {
                return v.map(|c| c / n);
            }
        }
    }

    fn object(rng: &mut ChaCha8Rng, seed: u64, speed: f64, depth: f64) -> ObjectSpec {
        let (w, h) = (rng.gen_range(40.0..60.0), rng.gen_range(35.0..50.0));
        let x = rng.gen_range(70.0..(WIDTH as f64 - 70.0 - w));
        let y = rng.gen_range(50.0..(HEIGHT as f64 - 50.0 - h));
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        ObjectSpec {
            rect: [x.round(), y.round(), w.round(), h.round()],
            velocity: [speed * angle.cos(), speed * angle.sin()],
            depth,
            seed: seed.wrapping_mul(31).wrapping_add(17),
        }
    }

    /// Static scene, camera rotating at 0.4–0.8 rad/s about a random axis.
    pub fn pure_rotation(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = base(seed);
        let axis = unit_direction(&mut rng);
        let rate = rng.gen_range(0.4..0.8);
        s.texture_scale = 4.0;
        s.camera_twist = [axis[0] * rate, axis[1] * rate, axis[2] * rate, 0.0, 0.0, 0.0];
        s
    }

    /// Rotating camera plus one independently moving object.
    pub fn rotation_with_object(seed: u64) -> SceneSpec {
        let mut s = pure_rotation(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let speed = rng.gen_range(70.0..110.0);
        let mut obj = object(&mut rng, seed, speed, 3.0);
        // the object must not ride along with the rotation flow, or it
        // would be nearly still in the image and emit almost nothing
        let f = static_image_velocity(&s, obj.rect[0] + obj.rect[2] / 2.0, obj.rect[1] + obj.rect[3] / 2.0, obj.depth);
        if obj.velocity[0] * f[0] + obj.velocity[1] * f[1] < 0.0 {
            obj.velocity = obj.velocity.map(|v| -v);
        }
        s.objects.push(obj);
        s
    }

    /// Translating camera with an object slightly in front of the background
    /// whose image motion equals the background flow around it, plus 20%
    /// event dropout. Only the small depth parallax betrays the object.
    pub fn matched_flow_with_object(seed: u64) -> SceneSpec {
        matched_flow(seed, 1.5)
    }

    /// [`matched_flow_with_object`] with the object at `object_depth`.
    pub fn matched_flow(seed: u64, object_depth: f64) -> SceneSpec {
        let mut s = translation_with_object(seed);
        s.duration_ns = 200_000_000;
        s.dropout = 0.2;
        let obj = &mut s.objects[0];
        obj.depth = object_depth;
        let (cx, cy) = (obj.rect[0] + obj.rect[2] / 2.0, obj.rect[1] + obj.rect[3] / 2.0);
        let depth = obj.depth;
        let bg = static_image_velocity(&s, cx, cy, s.background_depth);
        let own = static_image_velocity(&s, cx, cy, depth);
        s.objects[0].velocity = [bg[0] - own[0], bg[1] - own[1]];
        s
    }

    /// Image velocity (px/s) at t = 0 of a static point seen at `(x, y)`.
    fn static_image_velocity(s: &SceneSpec, x: f64, y: f64, depth: f64) -> [f64; 2] {
        let dt_ns = 1_000;
        let k = &s.intrinsics;
        let p = crate::linalg::scale_vec(&k.backproject(x, y), depth);
        let q = s.camera_pose(dt_ns).inverse().transform(&p);
        let (u, v) = k.project(&q).expect("point stays in front");
        let dt = dt_ns as f64 / NS_PER_S;
        [(u - x) / dt, (v - y) / dt]
    }

    /// Translating (and slightly rotating) camera plus one object crossing
    /// the direction of travel.
    pub fn translation_with_object(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let mut s = base(seed);
        s.background_depth = 4.0;
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(2.0..2.8);
        let w = rng.gen_range(-0.05..0.05);
        s.camera_twist = [w, -w, 0.0, speed * dir.cos(), speed * dir.sin(), rng.gen_range(-0.3..0.3)];
        let mut obj = object(&mut rng, seed, 1.0, 3.0);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let obj_speed = rng.gen_range(160.0..200.0);
        obj.velocity = [-dir.sin() * side * obj_speed, dir.cos() * side * obj_speed];
        s.objects.push(obj);
        s
    }
}
