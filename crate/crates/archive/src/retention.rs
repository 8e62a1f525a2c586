//! Per-tier lifetimes and the pinned sample quota.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracevault::summary::TierName;

use crate::{ArchiveError, Result};

const DAY: u64 = 86_400;

/// A tier lifetime in seconds, or `"unbounded"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lifetime {
    Seconds(u64),
    Named(Unbounded),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unbounded {
    Unbounded,
}

impl Lifetime {
    pub const UNBOUNDED: Lifetime = Lifetime::Named(Unbounded::Unbounded);

    pub fn duration(self) -> Option<Duration> {
        match self {
            Lifetime::Seconds(s) => Some(Duration::from_secs(s)),
            Lifetime::Named(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionPolicy {
    pub lifetimes: BTreeMap<TierName, Lifetime>,
    pub pinned_sample_quota: u32,
}

/// Lifetime used for tiers the policy does not mention.
pub fn default_lifetime(tier: TierName) -> Lifetime {
    match tier {
        TierName::Full => Lifetime::Seconds(DAY),
        TierName::Headers => Lifetime::Seconds(7 * DAY),
        TierName::CompressedHeaders => Lifetime::Seconds(14 * DAY),
        TierName::Netflow => Lifetime::Seconds(90 * DAY),
        TierName::SampledNetflow | TierName::Timeseries => Lifetime::UNBOUNDED,
    }
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy {
            lifetimes: TierName::ALL.into_iter().map(|t| (t, default_lifetime(t))).collect(),
            pinned_sample_quota: 16,
        }
    }
}

impl RetentionPolicy {
    /// Lifetime of `tier`, falling back to [`default_lifetime`].
    pub fn lifetime(&self, tier: TierName) -> Option<Duration> {
        self.lifetimes
            .get(&tier)
            .copied()
            .unwrap_or_else(|| default_lifetime(tier))
            .duration()
    }

    pub fn validate(&self) -> Result<()> {
        for tier in TierName::ALL.into_iter().filter(|t| t.is_summary()) {
            if self.lifetime(tier).is_some() {
                return Err(ArchiveError::BadPolicy(format!(
                    "summary tier {tier} must be kept indefinitely"
                )));
            }
        }
        Ok(())
    }
}
