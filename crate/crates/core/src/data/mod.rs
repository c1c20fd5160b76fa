//! Silhouette sequences on disk and in memory, synthetic walkers and pair sampling.

pub mod dataset;
pub mod sampler;
pub mod sequence;
pub mod synth;

pub use dataset::{Dataset, MANIFEST_FILE};
pub use sampler::{sample_batch, sample_batch_at, split_subjects, PairLabel, PairSampler, SubjectSplit, TrainingPair};
pub use sequence::{
    load_sequence, load_sequence_sized, make_step_inputs, write_sequence, Role, SequenceKey, SilhouetteSequence,
    StepInput, FRAME_SIZE,
};
pub use synth::{
    generate_walker, materialize, random_identities, read_spec_file, synthesize, write_spec_file, IdentityRecord,
    SyntheticWalkerSpec, ViewParams, WalkerIdentity, DEFAULT_VIEWS,
};
