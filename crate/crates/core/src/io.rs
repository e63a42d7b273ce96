//! On-disk formats: event streams (binary and CSV), PGM masks, float-raw
//! arrays and the small text files passed between pipeline stages.
//!
//! Every writer goes through a temporary file in the destination directory
//! that is renamed into place, so a reader never sees a partial file.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::camera::{FlowField, Intrinsics};
use crate::config::{ConfigWriter, KeyValues};
use crate::error::{Error, Result};
use crate::events::{Event, EventWindow, Polarity};
use crate::grid::{Grid, Tensor3};
use crate::mask::Mask;

pub const EVENTS_MAGIC: [u8; 4] = *b"EVS1";
pub const EVENTS_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 13;
const CSV_HEADER: [&str; 4] = ["x", "y", "t_ns", "p"];
/// Upper bound on float-raw rank; guards against absurd headers.
pub const MAX_RAW_DIMS: usize = 8;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------- events

/// An event window together with the sensor size it was recorded on.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecording {
    pub width: usize,
    pub height: usize,
    pub window: EventWindow,
}

impl EventRecording {
    pub fn new(width: usize, height: usize, window: EventWindow) -> Result<Self> {
        if width > u32::MAX as usize || height > u32::MAX as usize {
            return Err(Error::invalid(format!("sensor {width}x{height} too large")));
        }
        window.check_sensor(width, height)?;
        Ok(Self { width, height, window })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Bin,
    Csv,
}

impl EventFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(Self::Bin),
            "csv" => Ok(Self::Csv),
            other => Err(Error::invalid(format!("unknown event format '{other}'"))),
        }
    }

    /// From the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Bin,
        }
    }
}

/// Files carry no window bounds; a loaded window spans
/// `[first t, last t + 1)`, or `[0, 1)` when empty.
fn window_of(events: Vec<Event>) -> Result<EventWindow> {
    match (events.first(), events.last()) {
        (Some(a), Some(b)) => {
            let (t0, t1) = (a.t, b.t.checked_add(1).ok_or_else(|| Error::invalid("timestamp overflow"))?);
            EventWindow::new(events, t0, t1)
        }
        _ => EventWindow::empty(0, 1),
    }
}

pub fn encode_events_bin(rec: &EventRecording) -> Vec<u8> {
    let events = rec.window.events();
    let mut out = Vec::with_capacity(EVENTS_HEADER_LEN + EVENT_RECORD_LEN * events.len());
    out.extend_from_slice(&EVENTS_MAGIC);
    out.extend_from_slice(&(rec.width as u32).to_le_bytes());
    out.extend_from_slice(&(rec.height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.sign() as u8);
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode_events_bin(bytes: &[u8]) -> Result<EventRecording> {
    if bytes.len() < EVENTS_HEADER_LEN {
        return Err(format_err(bytes.len(), format!("truncated header ({} of 16 bytes)", bytes.len())));
    }
    if bytes[..4] != EVENTS_MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"EVS1\"", &bytes[..4])));
    }
    let width = u32_at(bytes, 4) as usize;
    let height = u32_at(bytes, 8) as usize;
    if u32_at(bytes, 12) != 0 {
        return Err(format_err(12, "reserved header field is not 0"));
    }
    let body = &bytes[EVENTS_HEADER_LEN..];
    if body.len() % EVENT_RECORD_LEN != 0 {
        let at = EVENTS_HEADER_LEN + body.len() / EVENT_RECORD_LEN * EVENT_RECORD_LEN;
        return Err(format_err(at, "truncated event record"));
    }
    let mut events = Vec::with_capacity(body.len() / EVENT_RECORD_LEN);
    for (i, r) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let at = EVENTS_HEADER_LEN + i * EVENT_RECORD_LEN;
        let x = u16::from_le_bytes([r[0], r[1]]);
        let y = u16::from_le_bytes([r[2], r[3]]);
        let t = i64::from_le_bytes(r[4..12].try_into().unwrap());
        let p = r[12] as i8;
        let p = Polarity::from_sign(p as i64).map_err(|_| format_err(at + 12, format!("polarity {p}, expected +1 or -1")))?;
        if x as usize >= width || y as usize >= height {
            return Err(format_err(at, format!("event ({x}, {y}) outside {width}x{height} sensor")));
        }
        if let Some(prev) = events.last() {
            let prev: &Event = prev;
            if t < prev.t {
                return Err(format_err(at + 4, format!("timestamp {t} precedes {}", prev.t)));
            }
        }
        events.push(Event::new(x, y, t, p));
    }
    EventRecording::new(width, height, window_of(events)?)
}

pub fn encode_events_csv(w: &EventWindow) -> Result<String> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::invalid(e.to_string());
    wr.write_record(CSV_HEADER).map_err(io)?;
    for e in w.events() {
        wr.write_record([e.x.to_string(), e.y.to_string(), e.t.to_string(), e.p.sign().to_string()])
            .map_err(io)?;
    }
    let bytes = wr.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii"))
}

pub fn decode_events_csv(text: &str) -> Result<EventWindow> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header 'x,y,t_ns,p', got '{}'", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut events: Vec<Event> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let x: u16 = rec[0].parse().map_err(|_| bad(format!("bad x '{}'", &rec[0])))?;
        let y: u16 = rec[1].parse().map_err(|_| bad(format!("bad y '{}'", &rec[1])))?;
        let t: i64 = rec[2].parse().map_err(|_| bad(format!("bad t_ns '{}'", &rec[2])))?;
        let p: i64 = rec[3].parse().map_err(|_| bad(format!("bad p '{}'", &rec[3])))?;
        let p = Polarity::from_sign(p).map_err(|_| bad(format!("polarity {p}, expected +1 or -1")))?;
        if events.last().is_some_and(|e| t < e.t) {
            return Err(bad(format!("timestamp {t} out of order")));
        }
        events.push(Event::new(x, y, t, p));
    }
    window_of(events)
}

pub fn write_events(path: &Path, rec: &EventRecording, format: EventFormat) -> Result<()> {
    match format {
        EventFormat::Bin => write_atomic(path, &encode_events_bin(rec)),
        EventFormat::Csv => write_atomic(path, encode_events_csv(&rec.window)?.as_bytes()),
    }
}

/// CSV files carry no sensor size; it is taken from `sensor` (width, height)
/// or else from the largest coordinates seen.
pub fn read_events(path: &Path, format: EventFormat, sensor: Option<(usize, usize)>) -> Result<EventRecording> {
    let bytes = fs::read(path)?;
    match format {
        EventFormat::Bin => {
            let rec = decode_events_bin(&bytes)?;
            if let Some((w, h)) = sensor {
                if (w, h) != (rec.width, rec.height) {
                    return Err(Error::shape(format!(
                        "event file sensor {}x{} vs expected {w}x{h}",
                        rec.width, rec.height
                    )));
                }
            }
            Ok(rec)
        }
        EventFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| format_err(e.valid_up_to(), "not UTF-8"))?;
            let window = decode_events_csv(text)?;
            let (w, h) = sensor.unwrap_or_else(|| {
                let ev = window.events();
                (
                    ev.iter().map(|e| e.x as usize + 1).max().unwrap_or(1),
                    ev.iter().map(|e| e.y as usize + 1).max().unwrap_or(1),
                )
            });
            EventRecording::new(w, h, window)
        }
    }
}

// ---------------------------------------------------------------- PGM

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Binary PGM with maxval ≤ 255. `#` comments are allowed between header fields.
pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "bad magic, expected \"P5\""));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|c| *c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start, format!("expected {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits");
        fields[i] = text.parse().map_err(|_| format_err(start, format!("{name} '{text}' too large")))?;
        if fields[i] == 0 {
            return Err(format_err(start, format!("{name} must be > 0")));
        }
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(format_err(pos, format!("maxval {maxval} needs 16-bit samples, only 8-bit is supported")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(pos, "expected a single whitespace after maxval"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| format_err(pos, "image size overflows"))?;
    let data = &bytes[pos..];
    if data.len() != n {
        return Err(format_err(pos, format!("expected {n} pixel bytes, found {}", data.len())));
    }
    if let Some(i) = data.iter().position(|v| *v as usize > maxval) {
        return Err(format_err(pos + i, format!("sample {} exceeds maxval {maxval}", data[i])));
    }
    Ok(Gray {
        width,
        height,
        maxval: maxval as u8,
        pixels: data.to_vec(),
    })
}

pub fn mask_to_pgm(m: &Mask) -> Gray {
    let (h, w) = m.dims();
    Gray {
        width: w,
        height: h,
        maxval: 255,
        pixels: m.data.as_slice().iter().map(|&v| if v { 255 } else { 0 }).collect(),
    }
}

/// Samples above half of maxval are dynamic.
pub fn mask_from_pgm(g: &Gray, timestamp: i64) -> Result<Mask> {
    let cut = g.maxval as u16;
    let data = g.pixels.iter().map(|&v| 2 * v as u16 > cut).collect();
    Mask::from_vec(g.height, g.width, data, timestamp)
}

pub fn write_pgm(path: &Path, img: &Gray) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

pub fn read_pgm(path: &Path) -> Result<Gray> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    write_pgm(path, &mask_to_pgm(m))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    mask_from_pgm(&read_pgm(path)?, 0)
}

// ---------------------------------------------------------------- float raw

#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Row-major array of 32- or 64-bit floats with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    dims: Vec<usize>,
    data: RawData,
}

fn dims_len(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d))
}

impl RawArray {
    pub fn new(dims: Vec<usize>, data: RawData) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RAW_DIMS {
            return Err(Error::shape(format!("rank {} outside 1..={MAX_RAW_DIMS}", dims.len())));
        }
        if dims.iter().any(|d| *d > u32::MAX as usize) {
            return Err(Error::shape(format!("dims {dims:?} exceed u32")));
        }
        let n = match &data {
            RawData::F32(v) => v.len(),
            RawData::F64(v) => v.len(),
        };
        if dims_len(&dims) != Some(n) {
            return Err(Error::shape(format!("dims {dims:?} vs {n} values")));
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, RawData::F32(data))
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, RawData::F64(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &RawData {
        &self.data
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            RawData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            RawData::F64(v) => v.clone(),
        }
    }

    /// Trailing two dims as `(H, W)` and the product of the rest as channels.
    pub fn as_chw(&self) -> (usize, usize, usize) {
        let d = &self.dims;
        match d.len() {
            1 => (1, 1, d[0]),
            n => (d[..n - 2].iter().product(), d[n - 2], d[n - 1]),
        }
    }

    pub fn from_grid_f32(g: &Grid<f64>) -> Self {
        let (h, w) = g.dims();
        Self::f32(vec![h, w], g.as_slice().iter().map(|v| *v as f32).collect()).expect("dims")
    }

    pub fn from_tensor_f64(t: &Tensor3<f64>) -> Self {
        let (c, h, w) = t.dims();
        Self::f64(vec![c, h, w], t.as_slice().to_vec()).expect("dims")
    }

    /// `2×H×W`, u then v. NaN (invalid) entries survive the narrowing.
    pub fn from_flow_f32(f: &FlowField<f64>) -> Self {
        let (h, w) = f.dims();
        let data = f.u.as_slice().iter().chain(f.v.as_slice()).map(|v| *v as f32).collect();
        Self::f32(vec![2, h, w], data).expect("dims")
    }

    pub fn to_grid(&self) -> Result<Grid<f64>> {
        let (c, h, w) = self.as_chw();
        if c != 1 {
            return Err(Error::shape(format!("expected a single plane, got dims {:?}", self.dims)));
        }
        Grid::from_vec(h, w, self.to_f64())
    }

    pub fn to_tensor(&self) -> Result<Tensor3<f64>> {
        let (c, h, w) = self.as_chw();
        Tensor3::from_vec(c, h, w, self.to_f64())
    }

    pub fn to_flow(&self) -> Result<FlowField<f64>> {
        let (c, h, w) = self.as_chw();
        if c != 2 {
            return Err(Error::shape(format!("flow needs 2 planes, got dims {:?}", self.dims)));
        }
        let v = self.to_f64();
        FlowField::new(
            Grid::from_vec(h, w, v[..h * w].to_vec())?,
            Grid::from_vec(h, w, v[h * w..].to_vec())?,
        )
    }
}

pub fn encode_raw(a: &RawArray) -> Vec<u8> {
    let magic: &[u8; 4] = match a.data {
        RawData::F32(_) => b"F32R",
        RawData::F64(_) => b"F64R",
    };
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
    for d in &a.dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    match &a.data {
        RawData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RawData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawArray> {
    if bytes.len() < 8 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let width = match &bytes[..4] {
        b"F32R" => 4,
        b"F64R" => 8,
        m => return Err(format_err(0, format!("bad magic {m:?}, expected \"F32R\" or \"F64R\""))),
    };
    let rank = u32_at(bytes, 4) as usize;
    if rank == 0 || rank > MAX_RAW_DIMS {
        return Err(format_err(4, format!("rank {rank} outside 1..={MAX_RAW_DIMS}")));
    }
    let data_at = 8 + 4 * rank;
    if bytes.len() < data_at {
        return Err(format_err(bytes.len(), "truncated dims"));
    }
    let dims: Vec<usize> = (0..rank).map(|i| u32_at(bytes, 8 + 4 * i) as usize).collect();
    let n = dims_len(&dims)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| format_err(8, format!("dims {dims:?} overflow")))?;
    let body = &bytes[data_at..];
    if body.len() != n {
        return Err(format_err(data_at, format!("expected {n} data bytes for dims {dims:?}, found {}", body.len())));
    }
    let data = if width == 4 {
        RawData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    } else {
        RawData::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    Ok(RawArray { dims, data })
}

pub fn write_raw(path: &Path, a: &RawArray) -> Result<()> {
    write_atomic(path, &encode_raw(a))
}

pub fn read_raw(path: &Path) -> Result<RawArray> {
    decode_raw(&fs::read(path)?)
}

// ---------------------------------------------------------------- text

/// Sensor geometry and pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics<f64>,
}

impl Camera {
    pub fn to_config(&self) -> String {
        let k = &self.intrinsics;
        ConfigWriter::new()
            .entry("width", self.width)
            .entry("height", self.height)
            .entry("fx", format!("{:?}", k.fx))
            .entry("fy", format!("{:?}", k.fy))
            .entry("cx", format!("{:?}", k.cx))
            .entry("cy", format!("{:?}", k.cy))
            .finish()
    }

    pub fn from_config(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        Ok(Self {
            width: kv.require("width")?,
            height: kv.require("height")?,
            intrinsics: Intrinsics::new(kv.require("fx")?, kv.require("fy")?, kv.require("cx")?, kv.require("cy")?)?,
        })
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

/// One line of whitespace-separated reals, printed so they parse back exactly.
pub fn write_reals(path: &Path, values: &[f64]) -> Result<()> {
    let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    write_atomic(path, format!("{}\n", line.join(" ")).as_bytes())
}

/// Reals from the first non-comment line.
pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        return line
            .split_whitespace()
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("'{p}' is not a number"),
                })
            })
            .collect();
    }
    Err(Error::Parse {
        line: 0,
        msg: "no values".into(),
    })
}

pub fn read_reals(path: &Path) -> Result<Vec<f64>> {
    parse_reals(&read_text(path)?)
}
