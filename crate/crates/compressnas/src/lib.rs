//! compressnas: rank-search compression for small convolutional
//! networks targeting flash-constrained devices.
//!
//! The pipeline, bottom to top:
//!
//! - [`tensor`]: dense row-major tensors, reference 2-D convolution,
//!   mode unfoldings, and a truncated SVD.
//! - [`cnt`]: the CNT1 binary tensor file format.
//! - [`model`]: the JSON model-graph IR, shape validation, parameter
//!   and peak-activation accounting, layer replacement, graph
//!   rewrites, and fingerprinting.
//! - [`presets`]: built-in residual classifier graphs at several
//!   parameter budgets.
//! - [`exec`]: weight materialization and a forward pass.
//! - [`decompose`]: Tucker-2 factorization of conv kernels and its
//!   realization as a 1x1 / k x k / 1x1 layer triplet.
//! - [`estimate`]: the closed-form flash delta and the layer-local
//!   MSE accuracy proxy over cached calibration activations.
//! - [`search`]: proposal grids, lookup-table construction, the exact
//!   knapsack solve, and selection application.
//! - [`report`]: the operations behind the `compressnas` command-line
//!   tool (describe / search / rewrite / verify).
//!
//! Every step is deterministic for a fixed seed; artifacts are pinned
//! to a graph revision by a content fingerprint.

pub mod cnt;
pub mod decompose;
pub mod estimate;
pub mod exec;
pub mod model;
pub mod presets;
pub mod report;
pub mod search;
pub mod tensor;

pub use decompose::{factors_to_layers, tucker2_decompose, DecomposeError, TuckerFactors};
pub use estimate::{delta_flash, mse_proxy, Calibration, EstimateError, ProxyMode, ProxyScore};
pub use exec::{forward, seeded_gaussian_input, ExecError, WeightResolver};
pub use model::{
    parse_model, stable_seed, LayerKind, LayerSpec, ModelError, ModelGraph, RewriteOutcome,
    WeightSpec,
};
pub use presets::{build_preset, PRESET_NAMES};
pub use search::{
    apply_selection, build_lookup_table, generate_proposals, solve_mckp, table_from_csv,
    table_to_csv, LookupTable, Rank, RankProposal, SearchConfig, SearchError, Selection,
};
pub use tensor::{conv2d, svd_truncated, Tensor, TensorError, UnfoldMode};
