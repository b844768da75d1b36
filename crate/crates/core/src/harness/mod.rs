//! Experiment harness: configuration, file formats, phantoms, training runs,
//! ablations, grid runs, gradient diagnostics and image export.

pub mod ablation;
pub mod config;
pub mod diagnostics;
pub mod export;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod train;

pub use ablation::{run_ablation_suite, AblationEntry, AblationSuite};
pub use config::{ModelKind, TrainConfig, DESK_ITERATIONS};
pub use export::{export_views, ExportedViews};
pub use grid::{ranking_table, run_grid, GridPoint, GridResult};
pub use io::{load_image, load_kspace, load_mask, load_sensitivities, load_tensor, save_tensor};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use train::{run_reconstruction, write_run, CheckpointRecord, RunInputs, RunOutput, RunReport, Timing};
