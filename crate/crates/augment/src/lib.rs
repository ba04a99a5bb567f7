//! File formats, checkpoints, the experiment pipeline and a scripted toy
//! benchmark on top of [`slu_augment_core`].

pub mod checkpoint;
pub mod io;
pub mod pipeline;
pub mod synthetic;

pub use pipeline::{run_experiment, seed_sweep, PipelineConfig, RunManifest, RunOutput, StageCache, System, Toggles};
pub use synthetic::{toy_data, ExperimentData, ToySizes};
