//! Scenario packaging, roster runs, reports and plotting tables behind the
//! `gridmkt` command line.

pub mod bench;
pub mod plotdata;
pub mod report;
pub mod run;
pub mod scenario;

pub use bench::{execute, write_artifacts, Artifacts, RunRequest};
pub use plotdata::{plotdata, PlotError, PLOT_HEADER};
pub use report::{Report, TrainReport};
pub use run::HarnessError;
pub use scenario::{default_grid, MpcSpec, PolicySpec, Scenario};
