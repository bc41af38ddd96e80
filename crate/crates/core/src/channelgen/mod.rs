//! Spatial-frequency CSI datasets: synthetic multipath scenarios, the
//! external-array importer, min-max normalization and the `CSID` format.

mod dataset;
mod synth;

pub use dataset::{
    denormalize, denormalize_samples, generate_dataset, generate_raw, import_external,
    import_external_with, load_dataset, normalize, normalize_samples, read_samples, save_dataset,
    sidecar_path, write_samples, NormStats, Samples, ScenarioDataset, DATASET_MAGIC,
    DATASET_VERSION, DEFAULT_TEST, DEFAULT_TRAIN,
};
pub use synth::{
    argmax, beamspace_spectrum, channel_from_paths, draw_paths, steering_vector, synth_channel,
    ChannelSample, Path, ScenarioSpec,
};
