//! Post-hoc quality metrics for synthetic windows and a 2-D embedding export.

mod metrics;
mod tsne;

pub use metrics::{
    discriminative_score, evaluate, predictive_score, ProbeSettings, MetricsReport, ScoreSummary,
    METRIC_SEEDS, MIN_DISCRIMINATIVE_WINDOWS,
};
pub use tsne::{tsne, tsne_export, write_scatter_png, TsneSettings, MAX_TSNE_PER_SIDE, MIN_TSNE_PER_SIDE};
