//! N-BEATS* for monthly demand forecasting: a residual-stacked MLP with
//! per-block destandardization, trained with a pinball-percentage plus
//! normalized squared error loss, ensembled by bootstrap from a pool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod seed;
pub mod synth;
pub mod train;

pub use data::{load_dataset, split, DatasetFormat, LoadOptions, Split, SplitSpec, TimeSeries, Window, YearMonth};
pub use ensemble::{Aggregation, EnsembleSpec, MemberForecasts, TrialReport};
pub use error::{Error, Result};
pub use eval::{DmLoss, DmResult, Metrics, MetricsReport};
pub use loss::{LossBreakdown, LossConfig};
pub use model::{Ablation, ModelConfig, NBeats};
pub use train::{build_pool, train_one, Pool, TrainSchedule, TrainingData};
