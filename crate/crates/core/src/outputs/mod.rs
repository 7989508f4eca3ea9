//! Exact CCDF grids and the quantities derived from them, plus serialization.

mod exact;
mod report;
mod summary;

pub use exact::{
    exact_ccdf_grid, exact_ccdf_grid_with, tail_prefixes, time_averaged_ccdf, time_averaged_grid,
    GaussianOracle, PhaseTable, TimeAveragedCcdf,
};
pub use report::{
    format_number, write_ccdf_csv, write_empirical_csv, write_heatmap_csv, write_json, write_paths_csv,
    write_percentiles_csv, write_timeavg_csv,
};
pub use summary::{
    agreement, dominance_check, heatmap, percentiles, AgreementReport, DominanceReport, HeatmapGrid, PercentileOptions, PercentileRow,
    PercentileTable, STANDARD_LEVELS,
};
