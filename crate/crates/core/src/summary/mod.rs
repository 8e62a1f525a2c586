//! Reduced representations of a trace: flows, samples, throughput series,
//! and the storage budget for each tier.

pub mod budget;
pub mod flows;
pub mod sample;
pub mod series;

use thiserror::Error;

pub use budget::{
    budget_report, parse_bytes, reference_tiers, time_to_fill, BudgetRow, FillTime, TierName,
    TierSpec,
};
pub use flows::{FlowKey, FlowRecord, FlowTable};
pub use sample::{sample_1_in_n, PacketSampler, SampleMode};
pub use series::{timeseries, SeriesBuilder, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("sampling rate must be at least 1")]
    BadN,
    #[error("bin width must be positive")]
    BadBinWidth,
    #[error("tier mean rate is zero")]
    ZeroRate,
    #[error("unknown tier {0:?}")]
    UnknownTier(String),
    #[error("tier {0} has inconsistent rates or reduction ratio")]
    BadTier(TierName),
    #[error("cannot parse size {0:?}")]
    BadSize(String),
}
