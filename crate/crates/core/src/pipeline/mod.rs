//! Pre-processing from sessions to labelled window datasets.

pub mod binning;
pub mod classes;
pub mod dataset;
pub mod sequences;
pub mod split;

pub use binning::{bin_trial, BinnedTrial, DEFAULT_BIN_WIDTH};
pub use classes::{build_class_map, ClassInfo, ClassMap, DEFAULT_MIN_TRIALS};
pub use dataset::{
    assemble_datasets, read_bundle, sequence_level_split, read_manifest, write_bundle, DatasetManifest, Datasets,
    Partitioned, PipelineConfig, SampleSets,
};
pub use sequences::{make_sequences, Label, SequenceSample, Task, DEFAULT_WINDOW};
pub use split::{stratified_split, Partition, SplitAssignment, SplitFractions};
