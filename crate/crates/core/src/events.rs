//! Event data model, time windows and the Event Frame Stack.
//!
//! Timestamps are integer nanoseconds. Windows are half-open `[t0, t1)`.

use crate::error::{Error, Result};
use crate::grid::Tensor3;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_sign(p: i64) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::Polarity(other)),
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    #[inline]
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A single brightness change: pixel column `x`, row `y`, timestamp `t` (ns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: i64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-sorted events inside `[t0, t1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventWindow {
    events: Vec<Event>,
    t0: i64,
    t1: i64,
}

fn check_sorted(events: &[Event]) -> Result<()> {
    match events.windows(2).position(|w| w[1].t < w[0].t) {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

impl EventWindow {
    /// Validates bounds, membership and ordering.
    pub fn new(events: Vec<Event>, t0: i64, t1: i64) -> Result<Self> {
        if t0 >= t1 {
            return Err(Error::Bounds { t0, t1 });
        }
        check_sorted(&events)?;
        if let Some((index, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.t < t0 || e.t >= t1)
        {
            return Err(Error::EventOutsideWindow {
                index,
                t: e.t,
                t0,
                t1,
            });
        }
        Ok(Self { events, t0, t1 })
    }

    pub fn empty(t0: i64, t1: i64) -> Result<Self> {
        Self::new(Vec::new(), t0, t1)
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn t0(&self) -> i64 {
        self.t0
    }

    #[inline]
    pub fn t1(&self) -> i64 {
        self.t1
    }

    #[inline]
    pub fn duration(&self) -> i64 {
        self.t1 - self.t0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Checks every event against a `width`×`height` sensor.
    pub fn check_sensor(&self, width: usize, height: usize) -> Result<()> {
        for (index, e) in self.events.iter().enumerate() {
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::OutOfSensor {
                    index,
                    x: e.x as u32,
                    y: e.y as u32,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }

    /// Same events, timestamps and bounds shifted by `dt`.
    pub fn shifted(&self, dt: i64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event { t: e.t + dt, ..*e })
                .collect(),
            t0: self.t0 + dt,
            t1: self.t1 + dt,
        }
    }
}

/// Selects the events of a sorted stream with `t0 <= t < t1`.
pub fn make_window(stream: &[Event], t0: i64, t1: i64) -> Result<EventWindow> {
    if t0 >= t1 {
        return Err(Error::Bounds { t0, t1 });
    }
    check_sorted(stream)?;
    let start = stream.partition_point(|e| e.t < t0);
    let end = stream.partition_point(|e| e.t < t1);
    Ok(EventWindow {
        events: stream[start..end].to_vec(),
        t0,
        t1,
    })
}

/// Mirrors time and negates polarity: `(x, y, t, p) -> (x, y, t0 + t1 - t, -p)`.
///
/// An event at exactly `t0` would land on the excluded bound `t1`; it is
/// placed at `t1 - 1` instead.
pub fn reverse_window(w: &EventWindow) -> EventWindow {
    let (t0, t1) = (w.t0, w.t1);
    let mut events: Vec<Event> = w
        .events
        .iter()
        .rev()
        .map(|e| Event {
            t: (t0 + t1 - e.t).min(t1 - 1),
            p: e.p.flipped(),
            ..*e
        })
        .collect();
    // reversal of a sorted list is already sorted; the clamp keeps it so
    debug_assert!(events.windows(2).all(|p| p[0].t <= p[1].t));
    events.shrink_to_fit();
    EventWindow { events, t0, t1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolarityMode {
    /// Accumulate `p` (±1).
    #[default]
    SignedCount,
    /// Accumulate 1 per event.
    UnsignedCount,
    /// Positive counts in channels `0..B`, negative counts in `B..2B`.
    TwoChannel,
}

impl PolarityMode {
    pub fn name(self) -> &'static str {
        match self {
            PolarityMode::SignedCount => "signed",
            PolarityMode::UnsignedCount => "unsigned",
            PolarityMode::TwoChannel => "two_channel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "signed" | "signed_count" => Ok(PolarityMode::SignedCount),
            "unsigned" | "unsigned_count" => Ok(PolarityMode::UnsignedCount),
            "two_channel" | "two-channel" => Ok(PolarityMode::TwoChannel),
            other => Err(Error::invalid(format!("unknown polarity mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackConfig {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub polarity_mode: PolarityMode,
}

impl StackConfig {
    pub fn new(bins: usize, height: usize, width: usize, polarity_mode: PolarityMode) -> Result<Self> {
        if bins == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "stack config needs bins, height, width >= 1 (got {bins}, {height}, {width})"
            )));
        }
        Ok(Self {
            bins,
            height,
            width,
            polarity_mode,
        })
    }

    /// Number of stored channels: `B`, or `2B` in two-channel mode.
    pub fn channels(&self) -> usize {
        match self.polarity_mode {
            PolarityMode::TwoChannel => 2 * self.bins,
            _ => self.bins,
        }
    }

    /// Temporal bin owning channel `c`.
    #[inline]
    pub fn bin_of_channel(&self, c: usize) -> usize {
        c % self.bins
    }
}

/// Temporal bin of timestamp `t` in `[t0, t1)`, in exact integer arithmetic.
#[inline]
pub fn bin_index(t: i64, t0: i64, t1: i64, bins: usize) -> usize {
    let num = bins as i128 * (t - t0) as i128;
    let b = num.div_euclid((t1 - t0) as i128);
    b.clamp(0, bins as i128 - 1) as usize
}

/// `B×H×W` binned event representation (`2B×H×W` in two-channel mode).
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrameStack<T> {
    data: Tensor3<T>,
    config: StackConfig,
    t0: i64,
    t1: i64,
}

impl<T: Real> EventFrameStack<T> {
    /// Wraps externally produced data; dimensions must agree with `config`.
    pub fn from_tensor(data: Tensor3<T>, config: StackConfig, t0: i64, t1: i64) -> Result<Self> {
        if data.dims() != (config.channels(), config.height, config.width) {
            return Err(Error::shape(format!(
                "stack data {:?} does not match config ({}, {}, {})",
                data.dims(),
                config.channels(),
                config.height,
                config.width
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("stack data".into()));
        }
        if t0 >= t1 {
            return Err(Error::Bounds { t0, t1 });
        }
        Ok(Self {
            data,
            config,
            t0,
            t1,
        })
    }

    #[inline]
    pub fn data(&self) -> &Tensor3<T> {
        &self.data
    }

    #[inline]
    pub fn config(&self) -> &StackConfig {
        &self.config
    }

    #[inline]
    pub fn t0(&self) -> i64 {
        self.t0
    }

    #[inline]
    pub fn t1(&self) -> i64 {
        self.t1
    }

    /// Channel `c` as an H×W slice.
    pub fn frame(&self, c: usize) -> &[T] {
        self.data.channel(c)
    }

    /// Sum over all channels (the uncompensated event image).
    pub fn bin_sum(&self) -> crate::grid::Grid<T> {
        self.data.channel_sum()
    }
}

/// Bins a window into an Event Frame Stack.
pub fn build_stack<T: Real>(w: &EventWindow, cfg: &StackConfig) -> Result<EventFrameStack<T>> {
    w.check_sensor(cfg.width, cfg.height)?;
    let mut data = Tensor3::zeros(cfg.channels(), cfg.height, cfg.width);
    for e in w.events() {
        let b = bin_index(e.t, w.t0(), w.t1(), cfg.bins);
        let (x, y) = (e.x as usize, e.y as usize);
        match cfg.polarity_mode {
            PolarityMode::SignedCount => {
                *data.get_mut(b, y, x) += T::from_i8(e.p.sign()).unwrap();
            }
            PolarityMode::UnsignedCount => *data.get_mut(b, y, x) += T::one(),
            PolarityMode::TwoChannel => {
                let c = match e.p {
                    Polarity::Positive => b,
                    Polarity::Negative => cfg.bins + b,
                };
                *data.get_mut(c, y, x) += T::one();
            }
        }
    }
    Ok(EventFrameStack {
        data,
        config: *cfg,
        t0: w.t0(),
        t1: w.t1(),
    })
}
