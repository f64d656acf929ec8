//! Scenario runner: strategies, metrics, sweeps and ablations.

pub mod experiments;
pub mod metrics;
pub mod scenario;
pub mod sim;

pub use experiments::{
    ablation, compare_strategies, forgetting_experiment, parse_rates, rate_sweep, write_run, write_summary_csv, Ablation,
    AblationRow, ForgettingReport, RateChoice, SweepRow,
};
pub use metrics::{collect_lambda, estimate_alpha, gain_cdf, positive_gain_fraction, ActivityTrace, MetricsSeries, WindowRow};
pub use scenario::{ScenarioConfig, Strategy, StrategyKind};
pub use sim::{run_scenario, RunOutput, RunSummary};
