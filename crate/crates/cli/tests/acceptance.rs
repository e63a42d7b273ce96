//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (written straight to stderr so it shows without `--nocapture`).

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use evmoseg::camera::{rigid_flow, DepthMap, FlowField, Intrinsics};
use evmoseg::contrast::{
    build_iwe, contrast, contrast_grad, fit_motion, rotation_pose, FitOptions, MotionKind, MotionModel,
};
use evmoseg::events::{build_stack, reverse_window, Event, EventWindow, Polarity, PolarityMode, StackConfig};
use evmoseg::grid::{Grid, Tensor3};
use evmoseg::io::{self, EventRecording};
use evmoseg::loss::{
    l_bce, l_bce_grad, l_cm, l_cm_grad, l_cyc, l_cyc_grad, l_img, l_img_grad, l_reg, l_smooth, l_smooth_grad,
};
use evmoseg::mask::Mask;
use evmoseg::metrics::{iou, miou, piou, temporal_consistency};
use evmoseg::segment::{segment, CueMaps, SequenceSegmenter, Thresholds};
use evmoseg::synth::{make_sample, make_sequence, presets, SynthSample};
use evmoseg::tam::{tam_backward, tam_forward, AttentionWeights, FeatureTensor, TamWeights};
use evmoseg::warp::{bilinear_sample, bilinear_sample_jacobian, compensate_full, compensate_rotational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn announce(n: usize, name: &str, o: &Outcome, took: Duration) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n} [{verdict}] {name}: {} ({:.1}s)",
        o.detail,
        took.as_secs_f64()
    );
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_grid(r: &mut ChaCha8Rng, h: usize, w: usize, s: f64) -> Grid<f64> {
    Grid::from_fn(h, w, |_, _| r.gen_range(-s..s))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Largest central-difference error over all coordinates, relative to the
/// norm of the analytic gradient.
fn fd_error(x: &[f64], grad: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let scale = norm(grad).max(1e-12);
    let mut p = x.to_vec();
    let mut worst: f64 = 0.0;
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

fn random_window(r: &mut ChaCha8Rng, n: usize, w: u16, h: u16) -> EventWindow {
    let mut ts: Vec<i64> = (0..n).map(|_| r.gen_range(0..100_000_000)).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| {
            let p = if r.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(r.gen_range(0..w), r.gen_range(0..h), t, p)
        })
        .collect();
    EventWindow::new(events, 0, 100_000_000).unwrap()
}

// ------------------------------------------------------------ criterion 1

const INSTANCES: u64 = 50;

fn grad_bilinear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (6, 7);
    let g = rand_grid(&mut r, h, w, 2.0);
    // interiors of cells; the sampler has kinks on the lattice lines
    let coords: Vec<(f64, f64)> = (0..8)
        .map(|_| {
            (
                r.gen_range(0..w - 1) as f64 + r.gen_range(0.05..0.95),
                r.gen_range(0..h - 1) as f64 + r.gen_range(0.05..0.95),
            )
        })
        .collect();
    let jac = bilinear_sample_jacobian(&g, &coords).unwrap();
    let sample = |x: f64, y: f64| bilinear_sample(&g, &[(x, y)]).unwrap().values[0];
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for (&(x, y), &(dx, dy)) in coords.iter().zip(&jac) {
        let fx = (sample(x + eps, y) - sample(x - eps, y)) / (2.0 * eps);
        let fy = (sample(x, y + eps) - sample(x, y - eps)) / (2.0 * eps);
        let scale = (dx * dx + dy * dy).sqrt().max(1e-12);
        worst = worst.max((fx - dx).abs().max((fy - dy).abs()) / scale);
    }
    worst
}

fn motion_instance(seed: u64) -> (EventWindow, Intrinsics<f64>, MotionModel<f64>) {
    let mut r = rng(seed);
    let w = random_window(&mut r, 400, 32, 24);
    let k = Intrinsics::new(30.0, 30.0, 15.5, 11.5).unwrap();
    let m = if seed % 2 == 0 {
        MotionModel::new(MotionKind::Rotation3, (0..3).map(|_| r.gen_range(-0.8..0.8)).collect()).unwrap()
    } else {
        MotionModel::new(MotionKind::Flow2, (0..2).map(|_| r.gen_range(-40.0..40.0)).collect()).unwrap()
    };
    (w, k, m)
}

fn grad_contrast(seed: u64, negate: bool) -> f64 {
    let (w, k, m) = motion_instance(seed);
    let t_ref = 50_000_000;
    let value = |p: &[f64]| {
        let iwe = build_iwe(&w, &k, &MotionModel::new(m.kind(), p.to_vec()).unwrap(), t_ref, 24, 32).unwrap();
        if negate {
            l_cm(&iwe)
        } else {
            contrast(&iwe)
        }
    };
    let g = if negate {
        l_cm_grad(&w, &k, &m, t_ref, 24, 32).unwrap().1
    } else {
        contrast_grad(&w, &k, &m, t_ref, 24, 32).unwrap()
    };
    fd_error(m.params(), &g, 1e-6, value)
}

fn grad_l_img(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, h, w) = (2, 4, 5);
    let n = c * h * w;
    let target = Tensor3::from_vec(c, h, w, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (_, g) = l_img_grad(&Tensor3::from_vec(c, h, w, x.clone()).unwrap(), &target).unwrap();
    fd_error(&x, g.as_slice(), 1e-6, |p| {
        l_img(&Tensor3::from_vec(c, h, w, p.to_vec()).unwrap(), &target).unwrap()
    })
}

/// Finite differences are meaningless within `eps` of a kink, so instances
/// are redrawn until they keep this distance from every one.
const KINK_MARGIN: f64 = 1e-4;

fn min_neighbour_gap(g: &Grid<f64>) -> f64 {
    let (h, w) = g.dims();
    let mut m = f64::INFINITY;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let c = g.get(y, x);
            m = m.min((g.get(y, x + 1) - c).abs()).min((g.get(y + 1, x) - c).abs());
        }
    }
    m
}

fn grad_l_smooth(seed: u64, as_flow: bool) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (5, 6);
    let guide = rand_grid(&mut r, h, w, 2.0);
    let (u, v) = loop {
        let u = rand_grid(&mut r, h, w, 1.0);
        let v = rand_grid(&mut r, h, w, 1.0);
        if min_neighbour_gap(&u).min(min_neighbour_gap(&v)) > KINK_MARGIN {
            break (u, v);
        }
    };
    let (_, g) = l_smooth_grad(&[u.clone(), v.clone()], &guide).unwrap();
    let x = [u.as_slice(), v.as_slice()].concat();
    let grad = [g[0].as_slice(), g[1].as_slice()].concat();
    let split = |p: &[f64]| {
        (
            Grid::from_vec(h, w, p[..h * w].to_vec()).unwrap(),
            Grid::from_vec(h, w, p[h * w..].to_vec()).unwrap(),
        )
    };
    fd_error(&x, &grad, 1e-7, |p| {
        let (a, b) = split(p);
        if as_flow {
            l_reg(&FlowField::new(a, b).unwrap(), &guide).unwrap()
        } else {
            l_smooth(&[a, b], &guide).unwrap()
        }
    })
}

fn grad_l_cyc(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (6, 7);
    let mut mk = || FlowField::new(rand_grid(&mut r, h, w, 1.3), rand_grid(&mut r, h, w, 1.3)).unwrap();
    let off_lattice = |v: f64| {
        let frac = v - v.floor();
        frac > KINK_MARGIN && frac < 1.0 - KINK_MARGIN
    };
    let (f, b) = loop {
        let (f, b) = (mk(), mk());
        // backward flow is sampled at p + f, bilinear kinks sit on the lattice
        let clear = (0..h).all(|y| {
            (0..w).all(|x| {
                let (u, v) = f.at(y, x);
                off_lattice(x as f64 + u) && off_lattice(y as f64 + v)
            })
        });
        if clear {
            break (f, b);
        }
    };
    let (_, g) = l_cyc_grad(&f, &b).unwrap();
    let n = h * w;
    let x = [f.u.as_slice(), f.v.as_slice(), b.u.as_slice(), b.v.as_slice()].concat();
    let grad = [g.fwd.u.as_slice(), g.fwd.v.as_slice(), g.bwd.u.as_slice(), g.bwd.v.as_slice()].concat();
    let part = |p: &[f64], k: usize| Grid::from_vec(h, w, p[k * n..(k + 1) * n].to_vec()).unwrap();
    fd_error(&x, &grad, 1e-7, |p| {
        l_cyc(
            &FlowField::new(part(p, 0), part(p, 1)).unwrap(),
            &FlowField::new(part(p, 2), part(p, 3)).unwrap(),
        )
        .unwrap()
    })
}

fn grad_l_bce(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = rand_grid(&mut r, 4, 5, 4.0);
    let target = Grid::from_fn(4, 5, |_, _| r.gen_range(0.0..1.0));
    let (_, g) = l_bce_grad(&logits, &target).unwrap();
    fd_error(logits.as_slice(), g.as_slice(), 1e-6, |p| {
        l_bce(&Grid::from_vec(4, 5, p.to_vec()).unwrap(), &target).unwrap()
    })
}

fn rand_attention(r: &mut ChaCha8Rng, d: usize, heads: usize) -> AttentionWeights<f64> {
    let s = 1.0 / (d as f64).sqrt();
    let mut m = || (0..d * d).map(|_| r.gen_range(-s..s)).collect::<Vec<f64>>();
    let (q, k, v) = (m(), m(), m());
    AttentionWeights::new(d, heads, q, k, v).unwrap()
}

/// ⟨probe, tam_forward⟩ differentiated w.r.t. both inputs, all projections
/// and both gates.
fn grad_tam(seed: u64) -> f64 {
    let mut r = rng(seed);
    let heads = 1 + (seed % 2) as usize;
    let (c, h, w) = (4, 3, 2);
    let n = c * h * w;
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let tw = TamWeights {
        channel: rand_attention(&mut r, h * w, heads),
        spatial: rand_attention(&mut r, c, heads),
        a: r.gen_range(-1.0..1.0),
        b: r.gen_range(-1.0..1.0),
    };
    let probe: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let feat = |v: &[f64]| FeatureTensor::from_vec(c, h, w, v.to_vec()).unwrap();
    let g = tam_backward(&feat(&x), &feat(&y), &tw, &probe).unwrap();

    // flatten every input into one vector
    let sizes = [n, n, (h * w).pow(2), (h * w).pow(2), (h * w).pow(2), c * c, c * c, c * c, 1, 1];
    let params = [
        x.clone(),
        y.clone(),
        tw.channel.wq.clone(),
        tw.channel.wk.clone(),
        tw.channel.wv.clone(),
        tw.spatial.wq.clone(),
        tw.spatial.wk.clone(),
        tw.spatial.wv.clone(),
        vec![tw.a],
        vec![tw.b],
    ]
    .concat();
    let grad = [
        g.bf_t.clone(),
        g.bf_prev.clone(),
        g.channel.wq.clone(),
        g.channel.wk.clone(),
        g.channel.wv.clone(),
        g.spatial.wq.clone(),
        g.spatial.wk.clone(),
        g.spatial.wv.clone(),
        vec![g.a],
        vec![g.b],
    ]
    .concat();
    let unpack = |p: &[f64]| {
        let mut parts = Vec::new();
        let mut at = 0;
        for s in sizes {
            parts.push(p[at..at + s].to_vec());
            at += s;
        }
        parts
    };
    fd_error(&params, &grad, 1e-6, |p| {
        let v = unpack(p);
        let t = TamWeights {
            channel: AttentionWeights::new(h * w, heads, v[2].clone(), v[3].clone(), v[4].clone()).unwrap(),
            spatial: AttentionWeights::new(c, heads, v[5].clone(), v[6].clone(), v[7].clone()).unwrap(),
            a: v[8][0],
            b: v[9][0],
        };
        let out = tam_forward(&feat(&v[0]), &feat(&v[1]), &t).unwrap();
        out.as_slice().iter().zip(&probe).map(|(a, b)| a * b).sum()
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    type Check = (&'static str, f64, fn(u64) -> f64);
    let checks: [Check; 9] = [
        ("bilinear_sample", 1e-4, grad_bilinear),
        ("contrast_grad", 1e-3, |s| grad_contrast(s, false)),
        ("l_img", 1e-4, grad_l_img),
        ("l_smooth", 1e-4, |s| grad_l_smooth(s, false)),
        ("l_reg", 1e-4, |s| grad_l_smooth(s, true)),
        ("l_cm", 1e-3, |s| grad_contrast(s, true)),
        ("l_cyc", 1e-4, grad_l_cyc),
        ("l_bce", 1e-4, grad_l_bce),
        ("tam_forward", 1e-4, grad_tam),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, tol, f) in checks {
        let worst = (0..INSTANCES).map(|s| f(1000 + s)).fold(0.0, f64::max);
        pass &= worst <= tol;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(120);
    outcome(pass, format!("{INSTANCES} instances each, worst: {}", parts.join(", ")))
}

// ------------------------------------------------------------ criterion 2

fn criterion_2() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let spec = presets::pure_rotation(seed);
        let s = make_sample(&spec, seed).unwrap();
        let start = Instant::now();
        let fit = fit_motion(
            &s.events,
            &spec.intrinsics,
            &MotionModel::zero(MotionKind::Rotation3),
            spec.height,
            spec.width,
            &FitOptions::default(),
        )
        .unwrap();
        let took = start.elapsed();
        let gt = &spec.camera_twist[..3];
        let p = fit.model.params();
        let diff: Vec<f64> = p.iter().zip(gt).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(gt);
        let monotone = fit.trace.windows(2).all(|w| w[1] >= w[0]);
        let ok = rel <= 0.02
            && monotone
            && took < Duration::from_secs(30)
            && (spec.width, spec.height) == (240, 180)
            && s.events.len() >= 20_000;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: {:.2}% ({} ev, {:.1}s{})",
            100.0 * rel,
            s.events.len(),
            took.as_secs_f64(),
            if monotone { "" } else { ", trace not monotone" }
        ));
    }
    outcome(pass, parts.join("; "))
}

// ------------------------------------------------------------ criterion 3

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let spec = presets::translation_with_object(seed);
        let s = make_sample(&spec, seed).unwrap();
        let cfg = StackConfig::new(10, spec.height, spec.width, PolarityMode::UnsignedCount).unwrap();
        let st = build_stack::<f64>(&s.events, &cfg).unwrap();
        let comp = compensate_full(&st, &spec.intrinsics, &s.pose_gt, &s.depth_gt).unwrap();
        let raw = st.bin_sum();
        let mask = s.masks_gt.last().unwrap();
        let (mut sc, mut su, mut dc, mut du) = (vec![], vec![], vec![], vec![]);
        for y in 0..spec.height {
            for x in 0..spec.width {
                if !*comp.valid_mask.get(y, x) {
                    continue;
                }
                let (c, u) = (*comp.collapsed.get(y, x), *raw.get(y, x));
                if mask.at(y, x) {
                    dc.push(c);
                    du.push(u);
                } else {
                    sc.push(c);
                    su.push(u);
                }
            }
        }
        let rs = variance(&sc) / variance(&su);
        let rd = variance(&dc) / variance(&du);
        pass &= rs >= 2.0 && rd < 1.5;
        parts.push(format!("seed {seed}: static x{rs:.2} dynamic x{rd:.2}"));
    }
    outcome(pass, parts.join("; "))
}

// ------------------------------------------------------------ criterion 4

fn criterion_4() -> Outcome {
    let th = Thresholds::default();
    let mut pass = true;
    let (mut worst_iou, mut worst_piou) = (1.0f64, 1.0f64);
    for seed in 0..10u64 {
        let spec = presets::translation_with_object(seed);
        let s = make_sample(&spec, seed).unwrap();
        let cfg = StackConfig::new(10, spec.height, spec.width, PolarityMode::SignedCount).unwrap();
        let st = build_stack::<f64>(&s.events, &cfg).unwrap();
        let comp = compensate_full(&st, &spec.intrinsics, &s.pose_gt, &s.depth_gt).unwrap();
        let cues = CueMaps::compute(&comp, &s.flow_gt, &s.rigid_flow_gt, &th, s.events.t1()).unwrap();
        let m = segment(&cues, &th);
        let gt = s.masks_gt.last().unwrap();
        worst_iou = worst_iou.min(iou(&m, gt).unwrap());
        worst_piou = worst_piou.min(piou(&m, gt, &s.events).unwrap());
    }
    pass &= worst_iou >= 0.8 && worst_piou >= 0.8;
    let mut worst_rot = 1.0f64;
    for seed in 0..5u64 {
        let spec = presets::rotation_with_object(seed);
        let s = make_sample(&spec, seed).unwrap();
        let fit = fit_motion(
            &s.events,
            &spec.intrinsics,
            &MotionModel::zero(MotionKind::Rotation3),
            spec.height,
            spec.width,
            &FitOptions::default(),
        )
        .unwrap();
        let pose = rotation_pose(fit.model.params(), s.events.duration());
        // depth cancels under pure rotation
        let rigid = rigid_flow(&spec.intrinsics, &pose, &DepthMap::constant(spec.height, spec.width, 1.0).unwrap());
        let cfg = StackConfig::new(10, spec.height, spec.width, PolarityMode::SignedCount).unwrap();
        let st = build_stack::<f64>(&s.events, &cfg).unwrap();
        let comp = compensate_rotational(&st, &spec.intrinsics, &pose).unwrap();
        let cues = CueMaps::compute(&comp, &s.flow_gt, &rigid, &th, s.events.t1()).unwrap();
        worst_rot = worst_rot.min(iou(&segment(&cues, &th), s.masks_gt.last().unwrap()).unwrap());
    }
    pass &= worst_rot >= 0.7;
    outcome(
        pass,
        format!(
            "GT motion, 10 scenes: min IoU {worst_iou:.3}, min pIoU {worst_piou:.3}; fitted rotation, 5 scenes: min IoU {worst_rot:.3}"
        ),
    )
}

// ------------------------------------------------------------ criterion 5

const HARD_WINDOW_NS: i64 = 30_000_000;

fn run_sequence(seq: &[SynthSample], spec_h: usize, spec_w: usize, k: &Intrinsics<f64>, th: Thresholds) -> (f64, f64) {
    let mut sg = SequenceSegmenter::new(th).unwrap();
    let (mut masks, mut flows, mut ious) = (vec![], vec![], vec![]);
    for (i, s) in seq.iter().enumerate() {
        let cfg = StackConfig::new(10, spec_h, spec_w, PolarityMode::SignedCount).unwrap();
        let st = build_stack::<f64>(&s.events, &cfg).unwrap();
        let comp = compensate_full(&st, k, &s.pose_gt, &s.depth_gt).unwrap();
        let cues = CueMaps::compute(&comp, &s.flow_gt, &s.rigid_flow_gt, &th, s.events.t1()).unwrap();
        let m = sg.step(&cues, &s.flow_gt).unwrap();
        ious.push(iou(&m, s.masks_gt.last().unwrap()).unwrap());
        if i > 0 {
            flows.push(s.flow_gt.clone());
        }
        masks.push(m);
    }
    let tc = temporal_consistency(&masks, &flows).unwrap();
    (tc, ious.iter().sum::<f64>() / ious.len() as f64)
}

fn criterion_5() -> Outcome {
    let fused = Thresholds::default();
    let plain = Thresholds { gamma: 0.0, ..fused };
    let (mut tc_plain, mut tc_fused, mut iou_plain, mut iou_fused) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..5u64 {
        let spec = presets::matched_flow_with_object(seed);
        let seq = make_sequence(&spec, seed, HARD_WINDOW_NS).unwrap();
        let (t, i) = run_sequence(&seq, spec.height, spec.width, &spec.intrinsics, plain);
        tc_plain += t / 5.0;
        iou_plain += i / 5.0;
        let (t, i) = run_sequence(&seq, spec.height, spec.width, &spec.intrinsics, fused);
        tc_fused += t / 5.0;
        iou_fused += i / 5.0;
    }
    outcome(
        tc_fused > tc_plain && iou_fused >= iou_plain,
        format!(
            "temporal consistency {tc_plain:.3} -> {tc_fused:.3}, mean IoU {iou_plain:.3} -> {iou_fused:.3} (without -> with fusion)"
        ),
    )
}

// ------------------------------------------------------------ criterion 6

fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let p = r.gen_range(0.0..1.0);
    Mask::new(Grid::from_fn(h, w, |_, _| r.gen_bool(p)), 0)
}

fn set_ratio(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

fn members(m: &Mask, want: bool) -> Vec<usize> {
    m.data.as_slice().iter().enumerate().filter(|(_, v)| **v == want).map(|(i, _)| i).collect()
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (h, w) = (r.gen_range(1..7), r.gen_range(1..7));
        let (p, g) = (random_mask(&mut r, h, w), random_mask(&mut r, h, w));
        let d = set_ratio(&members(&p, true), &members(&g, true));
        let s = set_ratio(&members(&p, false), &members(&g, false));
        worst = worst.max((iou(&p, &g).unwrap() - d).abs());
        worst = worst.max((miou(&p, &g).unwrap() - (d + s) / 2.0).abs());

        // events are a multiset: tag each with its index
        let n = r.gen_range(0..25);
        let window = random_window(&mut r, n, w as u16, h as u16);
        let at = |e: &Event, m: &Mask| m.at(e.y as usize, e.x as usize);
        let pe: Vec<usize> = window.events().iter().enumerate().filter(|(_, e)| at(e, &p)).map(|(i, _)| i).collect();
        let ge: Vec<usize> = window.events().iter().enumerate().filter(|(_, e)| at(e, &g)).map(|(i, _)| i).collect();
        worst = worst.max((piou(&p, &g, &window).unwrap() - set_ratio(&pe, &ge)).abs());

        // integer back-flows make the carried mask a plain shift
        let frames = r.gen_range(2..5);
        let masks: Vec<Mask> = (0..frames).map(|_| random_mask(&mut r, h, w)).collect();
        let shifts: Vec<(i64, i64)> = (1..frames).map(|_| (r.gen_range(-2..3), r.gen_range(-2..3))).collect();
        let flows: Vec<FlowField<f64>> =
            shifts.iter().map(|&(u, v)| FlowField::constant(h, w, u as f64, v as f64)).collect();
        let mut total = 0.0;
        for (i, &(u, v)) in shifts.iter().enumerate() {
            let carried: Vec<usize> = (0..h * w)
                .filter(|&idx| {
                    let (y, x) = ((idx / w) as i64 + v, (idx % w) as i64 + u);
                    (0..h as i64).contains(&y) && (0..w as i64).contains(&x) && masks[i].at(y as usize, x as usize)
                })
                .collect();
            total += set_ratio(&members(&masks[i + 1], true), &carried);
        }
        let oracle = total / shifts.len() as f64;
        worst = worst.max((temporal_consistency(&masks, &flows).unwrap() - oracle).abs());
    }
    outcome(worst <= 1e-12, format!("1000 random cases, largest deviation from set counting {worst:.1e}"))
}

// ------------------------------------------------------------ criterion 7

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_evmoseg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn cli_demo(dir: &Path) -> Result<f64, String> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo");
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let scene = demo.join("scene.cfg").to_string_lossy().into_owned();
    let thresholds = demo.join("thresholds.cfg").to_string_lossy().into_owned();
    std::fs::create_dir_all(dir.join("pred")).map_err(|e| e.to_string())?;
    run_cli(&["synth", "--spec", &scene, "--seed", "0", "--out", &p("gt")])?;
    run_cli(&["binstack", "--events", &p("gt/events.bin"), "--bins", "10", "--mode", "signed", "--out", &p("stack.f64r")])?;
    run_cli(&["fitmotion", "--events", &p("gt/events.bin"), "--model", "rotation3", "--out", &p("pose.txt")])?;
    run_cli(&[
        "compensate", "--stack", &p("stack.f64r"), "--pose", &p("pose.txt"), "--camera", &p("gt/camera.cfg"), "--out",
        &p("comp.f64r"),
    ])?;
    run_cli(&[
        "segment", "--comp", &p("comp.f64r"), "--flow", &p("gt/flow.f32r"), "--rigid-flow", &p("gt/rigid_flow.f32r"),
        "--thresholds", &thresholds, "--out", &p("pred/mask.pgm"),
    ])?;
    let report = run_cli(&["eval", "--pred", &p("pred"), "--gt", &p("gt"), "--report", &p("report.txt")])?;
    report
        .lines()
        .find_map(|l| l.strip_prefix("iou="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no iou in report: {report}"))
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();

    // compensate_full with zero translation against compensate_rotational
    for seed in 0..3u64 {
        let spec = presets::pure_rotation(seed);
        let s = make_sample(&spec, seed).unwrap();
        let cfg = StackConfig::new(8, spec.height, spec.width, PolarityMode::TwoChannel).unwrap();
        let st = build_stack::<f64>(&s.events, &cfg).unwrap();
        let mut r = rng(seed);
        let depth = DepthMap::new(Grid::from_fn(spec.height, spec.width, |_, _| r.gen_range(0.5..20.0))).unwrap();
        let full = compensate_full(&st, &spec.intrinsics, &s.pose_gt, &depth).unwrap();
        let rot = compensate_rotational(&st, &spec.intrinsics, &s.pose_gt).unwrap();
        let same = full.valid_mask == rot.valid_mask
            && full.per_bin.as_slice().iter().zip(rot.per_bin.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            failures.push(format!("rotation-only compensation differs (seed {seed})"));
        }
    }

    let mut r = rng(7);
    for round in 0..50 {
        let n = r.gen_range(0..300);
        let w = random_window(&mut r, n, 64, 48);
        if reverse_window(&reverse_window(&w)) != w {
            failures.push(format!("reverse_window not an involution (round {round})"));
        }
        let rec = EventRecording::new(64, 48, w.clone()).unwrap();
        let bytes = io::encode_events_bin(&rec);
        if io::encode_events_bin(&io::decode_events_bin(&bytes).unwrap()) != bytes {
            failures.push(format!("event file rewrite differs (round {round})"));
        }
        let csv = io::encode_events_csv(&w).unwrap();
        if io::decode_events_csv(&csv).unwrap().events() != w.events() {
            failures.push(format!("CSV round trip differs (round {round})"));
        }
        let m = random_mask(&mut r, 13, 9);
        if io::mask_from_pgm(&io::decode_pgm(&io::encode_pgm(&io::mask_to_pgm(&m))).unwrap(), 0).unwrap() != m {
            failures.push(format!("mask round trip differs (round {round})"));
        }
        let vals: Vec<f64> = (0..24).map(|_| f64::from_bits(r.gen())).collect();
        let a = io::RawArray::f64(vec![2, 3, 4], vals).unwrap();
        if io::encode_raw(&io::decode_raw(&io::encode_raw(&a)).unwrap()) != io::encode_raw(&a) {
            failures.push(format!("float-raw round trip differs (round {round})"));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let demo = cli_demo(dir.path());
    let took = start.elapsed();
    let demo_text = match &demo {
        Ok(v) => format!("CLI demo IoU {v:.3} in {:.1}s", took.as_secs_f64()),
        Err(e) => format!("CLI demo failed: {e}"),
    };
    match demo {
        Ok(v) if v >= 0.8 && took < Duration::from_secs(60) => {}
        _ => failures.push(demo_text.clone()),
    }
    let detail = if failures.is_empty() {
        format!("equivalence, involution and format round trips hold; {demo_text}")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("gradient suite", criterion_1),
        ("rotation recovery", criterion_2),
        ("compensation sharpens static regions only", criterion_3),
        ("segmentation quality", criterion_4),
        ("temporal fusion on the hard case", criterion_5),
        ("metric oracles", criterion_6),
        ("equivalences, round trips, CLI demo", criterion_7),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        announce(i + 1, name, &o, start.elapsed());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
