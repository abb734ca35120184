//! Correlation analysis, global Moran's I and VIF-based variable screening.

mod correlation;
mod moran;
mod vif;

pub use correlation::{pearson, ranks, spearman, CorrelationMethod, CorrelationResult};
pub use moran::{moran_statistic, morans_i, MoranResult, DEFAULT_PERMUTATIONS};
pub use vif::{
    vif, vif_features, vif_prune, RemovalReason, VifOptions, VifRemoval, VifReport, VifRound,
};
