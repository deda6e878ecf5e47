//! Mapping integer networks onto the macro and sweeping its design space.

mod lower;
mod metrics;
mod sweep;
mod workload;

pub use lower::{assemble_output, lower_layer, LayerKind, LayerSpec, MatmulProblem};
pub use metrics::{error_metrics, ErrorMetrics, SQNR_CEILING_DB};
pub use sweep::{
    evaluate_config, evaluate_point, histograms_to_csv, records_to_csv, run_sweep, DesignPoint, LayerMetrics,
    SweepGrid, SweepRecord, GRID_ADC_BITS, GRID_ROWS,
};
pub use workload::{
    accuracy, quantize_activations, quantize_weights, ForwardPass, QuantLayer, SyntheticTask, Workload, MANIFEST,
};
