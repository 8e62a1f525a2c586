//! Storage budget arithmetic for the retention tiers.
//!
//! Units are decimal throughout: 1 TB = 10^12 bytes and 1 Gb/s = 10^9 b/s.
//! A month is 365.25/12 days and a year 365.25 days.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SummaryError;

const DAY: f64 = 86_400.0;
const WEEK: f64 = 7.0 * DAY;
const YEAR: f64 = 365.25 * DAY;
const MONTH: f64 = YEAR / 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierName {
    Full,
    Headers,
    CompressedHeaders,
    Netflow,
    SampledNetflow,
    /// Bytes-per-interval series; kept for the lifetime of the archive.
    Timeseries,
}

impl TierName {
    pub const ALL: [TierName; 6] = [
        TierName::Full,
        TierName::Headers,
        TierName::CompressedHeaders,
        TierName::Netflow,
        TierName::SampledNetflow,
        TierName::Timeseries,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TierName::Full => "full",
            TierName::Headers => "headers",
            TierName::CompressedHeaders => "compressed_headers",
            TierName::Netflow => "netflow",
            TierName::SampledNetflow => "sampled_netflow",
            TierName::Timeseries => "timeseries",
        }
    }

    /// Row label used in budget reports.
    pub fn label(self) -> &'static str {
        match self {
            TierName::Full => "Full data",
            TierName::Headers => "Headers",
            TierName::CompressedHeaders => "Comp. headers",
            TierName::Netflow => "Full netflow",
            TierName::SampledNetflow => "1/512 netflow",
            TierName::Timeseries => "Time series",
        }
    }

    /// Summary tiers carry no per-packet data and are never expired.
    pub fn is_summary(self) -> bool {
        matches!(self, TierName::SampledNetflow | TierName::Timeseries)
    }
}

impl fmt::Display for TierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TierName {
    type Err = SummaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TierName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SummaryError::UnknownTier(s.to_string()))
    }
}

/// How long a tier is meant to be kept, coarsely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionClass {
    Days,
    Weeks,
    Months,
    Lifetime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub name: TierName,
    pub max_rate_bps: f64,
    pub mean_rate_bps: f64,
    /// Measured fraction of the original volume, as a (low, high) range.
    /// These are corpus measurements used for projection only.
    pub reduction_ratio: (f64, f64),
    pub retention: RetentionClass,
}

impl TierSpec {
    pub fn validate(&self) -> Result<(), SummaryError> {
        let (lo, hi) = self.reduction_ratio;
        let ok = self.mean_rate_bps >= 0.0
            && self.mean_rate_bps <= self.max_rate_bps
            && lo > 0.0
            && lo <= hi
            && hi <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SummaryError::BadTier(self.name))
        }
    }
}

/// The five stored data formats with their max and mean rates.
pub fn reference_tiers() -> Vec<TierSpec> {
    vec![
        TierSpec {
            name: TierName::Full,
            max_rate_bps: 10e9,
            mean_rate_bps: 1e9,
            reduction_ratio: (1.0, 1.0),
            retention: RetentionClass::Days,
        },
        TierSpec {
            name: TierName::Headers,
            max_rate_bps: 1e9,
            mean_rate_bps: 100e6,
            reduction_ratio: (0.14, 0.14),
            retention: RetentionClass::Days,
        },
        TierSpec {
            name: TierName::CompressedHeaders,
            max_rate_bps: 500e6,
            mean_rate_bps: 50e6,
            reduction_ratio: (0.045, 0.061),
            retention: RetentionClass::Weeks,
        },
        TierSpec {
            name: TierName::Netflow,
            max_rate_bps: 100e6,
            mean_rate_bps: 10e6,
            reduction_ratio: (0.012, 0.012),
            retention: RetentionClass::Months,
        },
        TierSpec {
            name: TierName::SampledNetflow,
            max_rate_bps: 700e3,
            mean_rate_bps: 70e3,
            reduction_ratio: (0.000071, 0.000071),
            retention: RetentionClass::Lifetime,
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FillUnit {
    Day,
    Week,
    Month,
    Year,
}

impl FillUnit {
    fn seconds(self) -> f64 {
        match self {
            FillUnit::Day => DAY,
            FillUnit::Week => WEEK,
            FillUnit::Month => MONTH,
            FillUnit::Year => YEAR,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FillUnit::Day => "day",
            FillUnit::Week => "week",
            FillUnit::Month => "month",
            FillUnit::Year => "year",
        }
    }
}

/// Time until a store of a given capacity is full.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FillTime {
    pub seconds: f64,
}

impl FillTime {
    pub fn days(&self) -> f64 {
        self.seconds / DAY
    }

    pub fn years(&self) -> f64 {
        self.seconds / YEAR
    }

    /// Largest calendar unit the duration reaches, or days below one day.
    pub fn unit(&self) -> FillUnit {
        [FillUnit::Year, FillUnit::Month, FillUnit::Week]
            .into_iter()
            .find(|u| self.seconds >= u.seconds())
            .unwrap_or(FillUnit::Day)
    }

    /// Coarse figure: the count in [`unit`](Self::unit) cut to one
    /// significant figure, never below one unit. 36.2 years becomes 30
    /// years; 0.93 days becomes 1 day.
    pub fn one_figure(&self) -> (u64, FillUnit) {
        let unit = self.unit();
        let v = self.seconds / unit.seconds();
        let count = if v < 1.0 {
            1
        } else {
            let scale = 10f64.powi(v.log10().floor() as i32);
            ((v / scale).floor() * scale) as u64
        };
        (count, unit)
    }

    pub fn one_figure_string(&self) -> String {
        let (n, unit) = self.one_figure();
        let plural = if n == 1 { "" } else { "s" };
        format!("{n} {}{plural}", unit.name())
    }

    /// Exact value to three significant figures, in years past one year
    /// and in days otherwise.
    pub fn exact_string(&self) -> String {
        if self.seconds >= YEAR {
            format!("{} y", three_figures(self.years()))
        } else {
            format!("{} d", three_figures(self.days()))
        }
    }
}

fn three_figures(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let digits = (2 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.digits$}")
}

/// `capacity / (mean_rate / 8)`.
pub fn time_to_fill(tier: &TierSpec, capacity_bytes: f64) -> Result<FillTime, SummaryError> {
    if tier.mean_rate_bps <= 0.0 {
        return Err(SummaryError::ZeroRate);
    }
    Ok(FillTime {
        seconds: capacity_bytes / (tier.mean_rate_bps / 8.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRow {
    pub tier: TierName,
    pub label: &'static str,
    pub max_rate_bps: f64,
    pub mean_rate_bps: f64,
    pub seconds: f64,
    pub exact: String,
    pub rounded: String,
}

pub fn budget_report(tiers: &[TierSpec], capacity_bytes: f64) -> Result<Vec<BudgetRow>, SummaryError> {
    tiers
        .iter()
        .map(|t| {
            t.validate()?;
            let fill = time_to_fill(t, capacity_bytes)?;
            Ok(BudgetRow {
                tier: t.name,
                label: t.name.label(),
                max_rate_bps: t.max_rate_bps,
                mean_rate_bps: t.mean_rate_bps,
                seconds: fill.seconds,
                exact: fill.exact_string(),
                rounded: fill.one_figure_string(),
            })
        })
        .collect()
}

/// Human rate, e.g. `10Gb/s`, `700Kb/s`.
pub fn format_rate(bps: f64) -> String {
    for (scale, unit) in [(1e9, "Gb/s"), (1e6, "Mb/s"), (1e3, "Kb/s")] {
        if bps >= scale {
            return format!("{}{unit}", trim_float(bps / scale));
        }
    }
    format!("{}b/s", trim_float(bps))
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Parse a byte size with a decimal (`KB`..`PB`) or binary (`KiB`..`PiB`)
/// suffix, e.g. `10TB`.
pub fn parse_bytes(s: &str) -> Result<f64, SummaryError> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num
        .parse()
        .map_err(|_| SummaryError::BadSize(s.to_string()))?;
    let mult = match unit.trim() {
        "" | "B" => 1.0,
        "KB" | "kB" => 1e3,
        "MB" => 1e6,
        "GB" => 1e9,
        "TB" => 1e12,
        "PB" => 1e15,
        "KiB" => 1024f64,
        "MiB" => 1024f64.powi(2),
        "GiB" => 1024f64.powi(3),
        "TiB" => 1024f64.powi(4),
        "PiB" => 1024f64.powi(5),
        _ => return Err(SummaryError::BadSize(s.to_string())),
    };
    Ok(v * mult)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tier(name: TierName) -> TierSpec {
        reference_tiers().into_iter().find(|t| t.name == name).unwrap()
    }

    #[test]
    fn full_data_row() {
        let f = time_to_fill(&tier(TierName::Full), 10e12).unwrap();
        assert!((f.days() - 0.9259).abs() < 1e-3);
        assert_eq!(f.one_figure_string(), "1 day");
    }

    #[test]
    fn netflow_row() {
        let f = time_to_fill(&tier(TierName::Netflow), 10e12).unwrap();
        assert!((f.days() - 92.59).abs() < 0.01);
        assert_eq!(f.one_figure_string(), "3 months");
    }

    #[test]
    fn sampled_row() {
        let f = time_to_fill(&tier(TierName::SampledNetflow), 10e12).unwrap();
        assert!((f.years() - 36.2).abs() < 0.05);
        assert_eq!(f.one_figure_string(), "30 years");
        assert_eq!(f.exact_string(), "36.2 y");
    }

    #[test]
    fn zero_rate() {
        let mut t = tier(TierName::Full);
        t.mean_rate_bps = 0.0;
        assert!(matches!(time_to_fill(&t, 1e12), Err(SummaryError::ZeroRate)));
    }

    #[test]
    fn linear_scaling() {
        let t = tier(TierName::Headers);
        let base = time_to_fill(&t, 1e12).unwrap().seconds;
        for k in [10.0, 1e3, 1e6] {
            let s = time_to_fill(&t, k * 1e12).unwrap().seconds;
            assert!((s / base - k).abs() / k < 1e-12);
            let mut fast = t.clone();
            fast.mean_rate_bps *= k;
            let s = time_to_fill(&fast, 1e12).unwrap().seconds;
            assert!((s * k / base - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_sizes() {
        assert_eq!(parse_bytes("10TB").unwrap(), 1e13);
        assert_eq!(parse_bytes("1 MiB").unwrap(), 1_048_576.0);
        assert_eq!(parse_bytes("512").unwrap(), 512.0);
        assert!(parse_bytes("ten TB").is_err());
        assert!(parse_bytes("10XB").is_err());
    }

    #[test]
    fn rates_format() {
        assert_eq!(format_rate(10e9), "10Gb/s");
        assert_eq!(format_rate(500e6), "500Mb/s");
        assert_eq!(format_rate(70e3), "70Kb/s");
    }

    #[test]
    fn tier_names_round_trip() {
        for t in TierName::ALL {
            assert_eq!(t.as_str().parse::<TierName>().unwrap(), t);
        }
        assert!("bogus".parse::<TierName>().is_err());
    }

    #[test]
    fn reference_tiers_are_valid() {
        for t in reference_tiers() {
            t.validate().unwrap();
        }
        let mut bad = tier(TierName::Full);
        bad.mean_rate_bps = 20e9;
        assert!(bad.validate().is_err());
    }
}
