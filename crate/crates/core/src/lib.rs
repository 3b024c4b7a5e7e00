//! Joint input-channel pruning and low-rank decomposition of convolution
//! weights.
//!
//! The pipeline runs per layer and then globally:
//!
//! 1. [`sensitivity`] greedily removes compression units (input channels and
//!    singular values of the matricized weight) and fits `I = a exp(b R)` to
//!    the resulting loss-vs-rate curve.
//! 2. [`planner`] equalizes the fitted sensitivities across layers subject to
//!    a network-wide FLOPs reduction target.
//! 3. [`heuristic`] compresses each layer to its planned rate, scoring units
//!    by their own loss plus the expected loss of the remaining space.
//! 4. [`realize`] turns the approximation into a pruned convolution or a
//!    `k x k` / `1 x 1` convolution pair, stored via [`io`].

pub mod conv;
pub mod demo;
pub mod error;
pub mod heuristic;
pub mod io;
pub mod loss;
pub mod pipeline;
pub mod planner;
pub mod rate;
pub mod realize;
pub mod sensitivity;
pub mod state;
pub mod tensor;
pub mod unit;

pub use conv::{conv2d, conv_compressed, reference_conv, ConvWeights, FeatureMap};
pub use error::{Error, Result};
pub use heuristic::{
    compress_layer, importance_bruteforce, importance_fast, scoring_interval, HeuristicConfig,
    LayerCompression, UnitImportance,
};
pub use io::{
    load_compressed, load_network, save_compressed, save_network, write_report,
    write_sensitivity_csv, CompressedEntry, CompressionReport, LayerRecord, NetworkBundle,
};
pub use loss::{unit_information_loss, LayerContext};
pub use planner::{
    plan_layers, plan_rates, rate_from_sensitivity, NetworkPlan, PlannerConfig, RatePlan,
};
pub use rate::{compressed_flops, compression_rate, layer_flops};
pub use realize::{realize, CompressedLayer, Variant};
pub use sensitivity::{build_curve, build_curve_trace, fit_exponential, ExpFit, SensitivityCurve};
pub use state::{ApproxState, SvdFactors};
pub use tensor::{ConvShape, GradientTensor, WeightTensor};
pub use unit::{Unit, UnitKinds};
