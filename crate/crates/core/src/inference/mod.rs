//! Link-prediction ranking and iterative fact generation.

mod generate;
mod lp;
mod predictor;
mod settings;

pub use generate::{
    evaluate_generation, generate_fact, generate_fact_uncached, generate_with_rejection, summarize, top_p_sample, top_p_support,
    unmask_schedule, with_rejection, GenRecord, GenSummary, GenerationConfig, Generated, HeldOutOracle, Outcome,
    SlotChoice, UnmaskSchedule, Validity,
};
pub use lp::{evaluate_lp, filtered_rank, lp_targets, mrr_hits, rank_single_mask, LpMetrics, LpReport, PositionSet, RankResult};
pub use predictor::{MaskDist, Predictor, Temperatures};
pub use settings::{build_setting_queries, Setting, SettingQuery};
