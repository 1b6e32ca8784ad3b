//! Physical-coherence metrics, drift diagnostics, Jacobian product series,
//! the measurement-window sweep and the logistic-map counterexample.

mod jacobian;
mod logistic;
mod report;
mod stats;
mod sweep;

pub use jacobian::{
    ar_apply, ar_jacobian_autodiff, ar_jacobian_fd, ar_jvp_fd, ar_vjp, product_norm_series, scalar_series, ArChain,
    JacobianSeries, ScalarChain, StepChain,
};
pub use logistic::{
    divergence_summary, logistic_counterexample, logistic_jacobians, DivergenceCurve, DivergenceSummary,
    DIVERGENCE_THRESHOLD,
};
pub use report::{
    plot_lines, plot_report, write_jacobian_series, write_metrics, write_mse_over_time, write_spectrum, MetricsRow,
    Series, JACOBIAN_CSV, METRICS_CSV, MSE_OVER_TIME_CSV, SPECTRUM_CSV,
};
pub use stats::{drift_report, energy_spectrum, flow_stats, frame_mse, ols_slope, shell, DriftReport, FlowStats};
pub use sweep::{non_increasing_within_sigma, window_sweep, SweepPoint};
