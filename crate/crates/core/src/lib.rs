//! Motion segmentation for event cameras: event binning, ego-motion
//! compensation, contrast maximization, segmentation cues, temporal
//! attention, self-supervised losses, metrics and a synthetic scene
//! generator with ground truth.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common cases.

pub mod camera;
pub mod config;
pub mod contrast;
pub mod error;
pub mod events;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod scalar;
pub mod segment;
pub mod synth;
pub mod tam;
pub mod warp;

pub use camera::{DepthMap, FlowField, Intrinsics, Pose};
pub use contrast::{fit_motion, FitOptions, MotionKind, MotionModel};
pub use error::{Error, Result};
pub use events::{build_stack, Event, EventFrameStack, EventWindow, Polarity, PolarityMode, StackConfig};
pub use grid::{Grid, Tensor3};
pub use mask::Mask;
pub use scalar::Real;
pub use segment::{segment, CueMaps, SequenceSegmenter, Thresholds};
pub use warp::{compensate_full, compensate_rotational, CompensatedStack};

pub type Grid32 = Grid<f32>;
pub type Grid64 = Grid<f64>;
pub type Pose32 = Pose<f32>;
pub type Pose64 = Pose<f64>;
pub type Intrinsics32 = Intrinsics<f32>;
pub type Intrinsics64 = Intrinsics<f64>;
pub type FlowField32 = FlowField<f32>;
pub type FlowField64 = FlowField<f64>;
pub type DepthMap32 = DepthMap<f32>;
pub type DepthMap64 = DepthMap<f64>;
pub type Stack32 = EventFrameStack<f32>;
pub type Stack64 = EventFrameStack<f64>;
pub type Compensated32 = CompensatedStack<f32>;
pub type Compensated64 = CompensatedStack<f64>;
