//! Connectivity of random geometric graphs on Poisson processes with a radially
//! symmetric intensity `n q(|x|)`.
//!
//! The geometric core is generic over [`Real`] (`f32` or `f64`); the experiment harness
//! runs in `f64`. The aliases below name the common instantiations.

pub mod density;
pub mod error;
pub mod graph;
pub mod harness;
pub mod partition;
pub mod quadrature;
pub mod sampler;
pub mod scalar;
pub mod theory;

pub use density::{AxisBox, DecayClass, DensitySpec, TailFamily};
pub use error::{Error, Result};
pub use graph::{connectivity_stats, ConnectivityStats, GeometricGraph, UnionFind};
pub use harness::{run, run_with_threads, CellAggregate, ExperimentConfig, RSchedule, RunReport, TrialRecord};
pub use partition::{ConcentrationReport, CubePartition};
pub use sampler::{child_seed, sample, PointCloud, Sampler};
pub use scalar::Real;
pub use theory::{classify, ClassifyConstants, Flag, Prediction, ThresholdReport};

pub type DensitySpecF64 = DensitySpec<f64>;
pub type DensitySpecF32 = DensitySpec<f32>;
pub type PointCloudF64 = PointCloud<f64>;
pub type PointCloudF32 = PointCloud<f32>;
pub type SamplerF64 = Sampler<f64>;
pub type SamplerF32 = Sampler<f32>;
pub type GeometricGraphF64<'a> = GeometricGraph<'a, f64>;
pub type GeometricGraphF32<'a> = GeometricGraph<'a, f32>;
pub type CubePartitionF64 = CubePartition<f64>;
pub type CubePartitionF32 = CubePartition<f32>;
pub type ThresholdReportF64 = ThresholdReport<f64>;
pub type ThresholdReportF32 = ThresholdReport<f32>;
