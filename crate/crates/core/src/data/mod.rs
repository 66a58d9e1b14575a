//! Windowed datasets: binary format, CSV ingestion and synthetic generation.

mod csv_import;
mod dataset;
mod synth;

pub use csv_import::{import_csv, CsvManifest, ImportReport};
pub use dataset::WindowedDataset;
pub use synth::{noise_generate, synth_generate, synth_window, NOISE_STD, N_SUBJECTS};
