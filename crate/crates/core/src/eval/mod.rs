//! Image similarity, translation quality and rubric aggregation.

pub mod bleu;
pub mod image;
pub mod report;
pub mod rubric;

pub use bleu::{bleu, BleuScore, Tokenizer};
pub use image::{contrast_structure_planes, l1_distance, masked_l1_distance, ssim, ssim_planes, MetricError};
pub use report::{evaluate_corpus, output_file_name, ComparisonTable, EvalReport, ImageRow, RowStatus};
pub use rubric::{aggregate_rubric, parse_rubric_rows, RubricScore, RubricSummary};
