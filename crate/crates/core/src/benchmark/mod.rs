//! Dataset index, challenge-attribute statistics, validation and evaluation over an index.

mod eval;
pub mod fixture;
mod index;
mod parallel;
mod stats;
mod tags;
mod validate;

pub use eval::{
    evaluate_test_split, per_challenge_eval, saliency_path, ChallengeRow, ChallengeTable, SplitEval,
};
pub use index::{
    emit_index, load_annotations, load_index, parse_index, save_index, DatasetIndex, IndexEntry, Split,
    INDEX_HEADER,
};
pub use parallel::{par_map, worker_count, THREADS_ENV};
pub use stats::{
    cooccurrence, histogram_of_ratios, object_ratio, object_ratios, size_histogram, CooccurrenceMatrix,
    SizeBin, SizeHistogram, BSO_RATIO, SSO_RATIO,
};
pub use tags::{ChallengeTag, UnknownTag, TAG_COUNT};
pub use validate::{validate_dataset, Issue, IssueKind, ValidationReport};
