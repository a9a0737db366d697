//! Reference procedures the synthesized rule is compared against.

pub mod barnard;
pub mod bonferroni;
pub mod sprt;

pub use barnard::{barnard_p_value, naive_batch_sequence, BarnardTable, ContingencyTable, NaiveBatch};
pub use bonferroni::bonferroni_combine;
pub use sprt::{sprt_step, sprt_thresholds, SprtSpec};
