//! Bi-level noising, the any-order masked loss and the optimisation loop.

mod config;
mod gradcheck;
mod log;
mod loss;
mod optim;
mod trainer;

pub use config::{lr_at, TrainConfig};
pub use gradcheck::{composite_gradcheck, GradcheckConfig, GradcheckReport};
pub use log::{MetricsLog, MetricsRecord};
pub use loss::{ao_ar_loss, batch_loss, nll_of_dists, training_queries, BatchQueries};
pub use optim::{clip_gradients, global_norm, AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{split_structure, BestRecord, EpochStats, Split, Trainer};
