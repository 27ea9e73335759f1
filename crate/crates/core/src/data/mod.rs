//! Skeleton sequences, file formats, view derivation and synthetic data.

mod format;
mod sequence;
mod synth;
mod topology;
mod transform;

pub use format::{decode_sequence, encode_sequence, load_sequence, save_sequence, DatasetManifest, ManifestItem, Split, SEQUENCE_MAGIC};
pub use sequence::SkeletonSequence;
pub use synth::{base, phase, synth_dataset, synth_sequence, synth_sequences, SynthConfig};
pub use topology::SkeletonTopology;
pub use transform::{resample_time, to_bone, to_motion, View};
