use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Parser, Subcommand};

use evmoseg::contrast::{fit_motion, FitOptions, MotionKind, MotionModel};
use evmoseg::events::{build_stack, EventFrameStack, PolarityMode, StackConfig};
use evmoseg::io::{self, Camera, EventFormat, EventRecording, Gray, RawArray};
use evmoseg::metrics::{evaluate_sequence, Averaging};
use evmoseg::segment::{CueMaps, SequenceSegmenter, Thresholds};
use evmoseg::synth::{make_sample, SceneSpec};
use evmoseg::warp::{compensate_full, compensate_rotational, compensate_translation, CompensatedStack};
use evmoseg::{DepthMap, Grid, Mask, Pose, Tensor3};

/// Event-camera motion segmentation pipeline.
#[derive(Parser)]
#[command(name = "evmoseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene: events.bin, camera.cfg and ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin an event file into a B×H×W stack (2×B×H×W for two_channel).
    Binstack {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long, default_value = "signed")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Sensor description; only needed for CSV events.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Fit a motion model by contrast maximization and write the window pose.
    Fitmotion {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value = "rotation3")]
        model: String,
        #[arg(long)]
        out: PathBuf,
        /// Objective after each accepted step. Defaults to <out>.trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Defaults to camera.cfg next to the events.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Warp every bin of a stack to the end of its window.
    Compensate {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to camera.cfg next to the stack.
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Threshold the segmentation cues, optionally fused with the previous mask.
    Segment {
        #[arg(long)]
        comp: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long = "rigid-flow")]
        rigid_flow: PathBuf,
        #[arg(long = "prev-mask", requires = "prev_flow")]
        prev_mask: Option<PathBuf>,
        /// Flow from this window back to the previous one.
        #[arg(long = "prev-flow", requires = "prev_mask")]
        prev_flow: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted masks with ground truth, matched by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// One event file per frame, for pIoU.
        #[arg(long)]
        events: Vec<PathBuf>,
        #[arg(long, default_value = "macro")]
        averaging: String,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Min-max normalised 8-bit view of a float-raw array or a mask.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    if let Err(e) = configure_threads().and_then(|_| run(cli.command)) {
        eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("EVMOSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| anyhow!("EVMOSEG_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, seed, out } => synth(&spec, seed, &out),
        Command::Binstack { events, bins, mode, out, camera } => binstack(&events, bins, &mode, &out, camera.as_deref()),
        Command::Fitmotion { events, model, out, trace, camera } => {
            fitmotion(&events, &model, &out, trace.as_deref(), camera.as_deref())
        }
        Command::Compensate { stack, pose, depth, out, camera } => {
            compensate(&stack, &pose, depth.as_deref(), &out, camera.as_deref())
        }
        Command::Segment { comp, flow, rigid_flow, prev_mask, prev_flow, thresholds, out } => segment(
            &comp,
            &flow,
            &rigid_flow,
            prev_mask.as_deref().zip(prev_flow.as_deref()),
            thresholds.as_deref(),
            &out,
        ),
        Command::Eval { pred, gt, events, averaging, report, json } => {
            eval(&pred, &gt, &events, &averaging, &report, json.as_deref())
        }
        Command::Render { input, out } => render(&input, &out),
    }
}

fn load_camera(explicit: Option<&Path>, beside: &Path) -> Result<Camera> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => beside.parent().unwrap_or(Path::new(".")).join("camera.cfg"),
    };
    let text = io::read_text(&path).with_context(|| format!("reading camera {}", path.display()))?;
    Camera::from_config(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_events(path: &Path, camera: Option<&Camera>) -> Result<EventRecording> {
    let sensor = camera.map(|c| (c.width, c.height));
    io::read_events(path, EventFormat::from_path(path), sensor).with_context(|| format!("reading {}", path.display()))
}

fn load_raw(path: &Path) -> Result<RawArray> {
    io::read_raw(path).with_context(|| format!("reading {}", path.display()))
}

fn synth(spec_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let spec = SceneSpec::from_config(&io::read_text(spec_path)?).with_context(|| format!("parsing {}", spec_path.display()))?;
    let s = make_sample(&spec, seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rec = EventRecording::new(spec.width, spec.height, s.events.clone())?;
    io::write_events(&out.join("events.bin"), &rec, EventFormat::Bin)?;
    let camera = Camera { width: spec.width, height: spec.height, intrinsics: spec.intrinsics };
    io::write_atomic(&out.join("camera.cfg"), camera.to_config().as_bytes())?;
    io::write_atomic(&out.join("scene.cfg"), spec.to_config().as_bytes())?;
    io::write_raw(&out.join("depth.f32r"), &RawArray::from_grid_f32(s.depth_gt.grid()))?;
    io::write_raw(&out.join("flow.f32r"), &RawArray::from_flow_f32(&s.flow_gt))?;
    io::write_raw(&out.join("rigid_flow.f32r"), &RawArray::from_flow_f32(&s.rigid_flow_gt))?;
    io::write_reals(&out.join("pose.txt"), &s.pose_gt.log())?;
    let mask = s.masks_gt.last().ok_or_else(|| anyhow!("scene produced no mask"))?;
    io::write_mask(&out.join("mask.pgm"), mask)?;
    println!("{} events, {} dynamic pixels -> {}", rec.window.len(), mask.count(), out.display());
    Ok(())
}

fn binstack(events: &Path, bins: usize, mode: &str, out: &Path, camera: Option<&Path>) -> Result<()> {
    let mode = PolarityMode::parse(mode)?;
    let cam = match camera {
        Some(p) => Some(load_camera(Some(p), events)?),
        None => None,
    };
    let rec = load_events(events, cam.as_ref())?;
    let cfg = StackConfig::new(bins, rec.height, rec.width, mode)?;
    let stack = build_stack::<f64>(&rec.window, &cfg)?;
    let (c, h, w) = stack.data().dims();
    let dims = match mode {
        PolarityMode::TwoChannel => vec![2, bins, h, w],
        _ => vec![c, h, w],
    };
    io::write_raw(out, &RawArray::f64(dims, stack.data().as_slice().to_vec())?)?;
    Ok(())
}

fn fitmotion(events: &Path, model: &str, out: &Path, trace: Option<&Path>, camera: Option<&Path>) -> Result<()> {
    let kind = MotionKind::parse(model)?;
    let cam = load_camera(camera, events)?;
    let rec = load_events(events, Some(&cam))?;
    let fit = fit_motion(
        &rec.window,
        &cam.intrinsics,
        &MotionModel::zero(kind),
        cam.height,
        cam.width,
        &FitOptions::default(),
    )?;
    let p = fit.model.params();
    let dur = rec.window.duration();
    let values: Vec<f64> = match kind {
        MotionKind::Rotation3 => evmoseg::contrast::rotation_pose(p, dur).log().to_vec(),
        // image points move by v·dt, so the end-to-start shift is −v·duration
        MotionKind::Flow2 => {
            let s = dur as f64 / 1e9;
            vec![-p[0] * s, -p[1] * s]
        }
    };
    io::write_reals(out, &values)?;
    let trace_path = trace.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".trace");
        PathBuf::from(s)
    });
    let lines: String = fit.trace.iter().map(|v| format!("{v:?}\n")).collect();
    io::write_atomic(&trace_path, lines.as_bytes())?;
    println!(
        "{} params {:?} after {} iterations (converged: {})",
        kind.name(),
        p,
        fit.iterations,
        fit.converged
    );
    Ok(())
}

/// Reads a stack written by `binstack`. The window bounds are not stored and
/// do not affect compensation.
fn load_stack(path: &Path) -> Result<EventFrameStack<f64>> {
    let raw = load_raw(path)?;
    let d = raw.dims();
    let (bins, mode, h, w) = match d.len() {
        3 => (d[0], PolarityMode::SignedCount, d[1], d[2]),
        4 if d[0] == 2 => (d[1], PolarityMode::TwoChannel, d[2], d[3]),
        _ => bail!("{}: stack dims {d:?} are neither B×H×W nor 2×B×H×W", path.display()),
    };
    let cfg = StackConfig::new(bins, h, w, mode)?;
    Ok(EventFrameStack::from_tensor(raw.to_tensor()?, cfg, 0, 1)?)
}

fn compensate(stack: &Path, pose: &Path, depth: Option<&Path>, out: &Path, camera: Option<&Path>) -> Result<()> {
    let st = load_stack(stack)?;
    let params = io::read_reals(pose).with_context(|| format!("reading {}", pose.display()))?;
    let comp = match params.len() {
        2 => compensate_translation(&st, (params[0], params[1])),
        6 => {
            let cam = load_camera(camera, stack)?;
            let cfg = st.config();
            ensure!(
                (cam.height, cam.width) == (cfg.height, cfg.width),
                "camera {}x{} vs stack {}x{}",
                cam.width,
                cam.height,
                cfg.width,
                cfg.height
            );
            let twist: [f64; 6] = params.as_slice().try_into().unwrap();
            let pose = Pose::exp(&twist)?;
            match depth {
                Some(d) => {
                    let depth = DepthMap::new(load_raw(d)?.to_grid()?)?;
                    compensate_full(&st, &cam.intrinsics, &pose, &depth)?
                }
                None => compensate_rotational(&st, &cam.intrinsics, &pose).context("pass --depth for a translating pose")?,
            }
        }
        n => bail!("{}: expected 6 (pose) or 2 (pixel shift) values, got {n}", pose.display()),
    };
    io::write_raw(out, &RawArray::from_tensor_f64(&comp.to_tensor()))?;
    Ok(())
}

fn segment(
    comp: &Path,
    flow: &Path,
    rigid: &Path,
    prev: Option<(&Path, &Path)>,
    thresholds: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let th = match thresholds {
        Some(p) => {
            let kv = evmoseg::config::KeyValues::parse(&io::read_text(p)?)?;
            Thresholds::from_config(&kv).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Thresholds::default(),
    };
    let comp = CompensatedStack::from_tensor(&load_raw(comp)?.to_tensor()?)?;
    let observed = load_raw(flow)?.to_flow()?;
    let rigid = load_raw(rigid)?.to_flow()?;
    let cues = CueMaps::compute(&comp, &observed, &rigid, &th, 0)?;
    let mask = match prev {
        None => evmoseg::segment::segment(&cues, &th),
        Some((m, f)) => {
            let prev_mask = io::read_mask(m).with_context(|| format!("reading {}", m.display()))?;
            let back = load_raw(f)?.to_flow()?;
            SequenceSegmenter::resume(th, prev_mask)?.step(&cues, &back)?
        }
    };
    io::write_mask(out, &mask)?;
    println!("{} dynamic pixels", mask.count());
    Ok(())
}

fn mask_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Frames are the `.pgm` files of the ground-truth directory, in name order.
/// Temporal consistency is reported when every frame after the first has a
/// `<name>.backflow.f32r` next to its ground-truth mask.
fn eval(pred: &Path, gt: &Path, events: &[PathBuf], averaging: &str, report: &Path, json: Option<&Path>) -> Result<()> {
    let averaging = Averaging::parse(averaging)?;
    let names = mask_names(gt)?;
    ensure!(!names.is_empty(), "no .pgm masks in {}", gt.display());
    let read = |dir: &Path, n: &str| -> Result<Mask> {
        let p = dir.join(n);
        io::read_mask(&p).with_context(|| format!("reading {}", p.display()))
    };
    let gts = names.iter().map(|n| read(gt, n)).collect::<Result<Vec<_>>>()?;
    let preds = names.iter().map(|n| read(pred, n)).collect::<Result<Vec<_>>>()?;
    let windows = if events.is_empty() {
        None
    } else {
        ensure!(events.len() == names.len(), "{} event files for {} frames", events.len(), names.len());
        Some(events.iter().map(|p| load_events(p, None).map(|r| r.window)).collect::<Result<Vec<_>>>()?)
    };
    let flow_paths: Vec<PathBuf> = names
        .iter()
        .skip(1)
        .map(|n| gt.join(format!("{}.backflow.f32r", n.trim_end_matches(".pgm"))))
        .collect();
    let flows = if names.len() > 1 && flow_paths.iter().all(|p| p.exists()) {
        Some(flow_paths.iter().map(|p| Ok(load_raw(p)?.to_flow()?)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let r = evaluate_sequence(&preds, &gts, windows.as_deref(), flows.as_deref(), averaging)?;
    let text = r.to_key_values();
    io::write_atomic(report, text.as_bytes())?;
    if let Some(j) = json {
        io::write_atomic(j, r.to_json().as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn render(input: &Path, out: &Path) -> Result<()> {
    let is_pgm = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let plane: Grid<f64> = if is_pgm {
        let g = io::read_pgm(input)?;
        Grid::from_vec(g.height, g.width, g.pixels.iter().map(|v| *v as f64).collect())?
    } else {
        // leading axes are collapsed by summing absolute values
        let t: Tensor3<f64> = load_raw(input)?.to_tensor()?;
        let (c, h, w) = t.dims();
        Grid::from_fn(h, w, |y, x| (0..c).map(|k| t.get(k, y, x).abs()).filter(|v| v.is_finite()).sum())
    };
    let (h, w) = plane.dims();
    let finite = plane.as_slice().iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let pixels = plane
        .as_slice()
        .iter()
        .map(|v| if span > 0.0 && v.is_finite() { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    io::write_pgm(out, &Gray { width: w, height: h, maxval: 255, pixels })?;
    Ok(())
}
