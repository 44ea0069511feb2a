//! Skeleton trajectory ingestion, windowing, normalization and synthetic
//! corpora.

mod corpus;
mod loader;
mod sequence;
mod synth;

pub use corpus::{window_starts, TrajectoryCorpus, Track};
pub use loader::{
    fill_missing_joints, load_trajectories, load_trajectories_with, read_labels, write_corpus, LoadOptions,
    LABEL_DIR,
};
pub use sequence::{denormalize_window, normalize_window, MotionSequence, NormalizationParams};
pub use synth::{
    shuffle_frames_chunked, synth_corpus, synth_corpus_annotated, AnomalyKind, AnomalySpan, MotionModel,
    SynthConfig, SynthCorpus,
};
