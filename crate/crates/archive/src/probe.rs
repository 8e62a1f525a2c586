//! Probe configuration documents.
//!
//! ```xml
//! <probe id="p1">
//!   <hardware>DAG 4.3GE</hardware>
//!   <software>dagsnap 3.1</software>
//!   <link id="l1" bandwidth_bps="1000000000"/>
//! </probe>
//! ```

use chrono::{DateTime, Utc};
use rusqlite::{params, OptionalExtension, Row};
use serde::Serialize;
use tracevault::capture::naming::validate_identifier;
use tracevault::time::iso_format;

use crate::{from_nanos, to_nanos, Archive, ArchiveError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeConfig {
    pub probe_id: String,
    pub hardware_desc: String,
    pub software_desc: String,
    pub link_id: String,
    pub link_bandwidth_bps: u64,
}

/// A stored configuration with its position in the probe's history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeVersion {
    pub version: u32,
    #[serde(with = "iso_format")]
    pub ingested_at: DateTime<Utc>,
    #[serde(flatten)]
    pub config: ProbeConfig,
}

pub fn parse_probe_xml(xml: &str) -> Result<ProbeConfig> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| ArchiveError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "probe" {
        return Err(ArchiveError::MalformedXml(format!(
            "root element is <{}>, expected <probe>",
            root.tag_name().name()
        )));
    }
    let probe_id = root.attribute("id").ok_or(ArchiveError::MissingField("probe id"))?;
    let child = |name: &str| root.children().find(|n| n.has_tag_name(name));
    let text = |name: &'static str| -> Result<String> {
        let n = child(name).ok_or(ArchiveError::MissingField(name))?;
        Ok(n.text().unwrap_or("").trim().to_string())
    };
    let hardware_desc = text("hardware")?;
    let software_desc = text("software")?;
    let link = child("link").ok_or(ArchiveError::MissingField("link"))?;
    let link_id = link.attribute("id").ok_or(ArchiveError::MissingField("link id"))?;
    let bw = link
        .attribute("bandwidth_bps")
        .ok_or(ArchiveError::MissingField("bandwidth_bps"))?;
    let link_bandwidth_bps: u64 = match bw.trim().parse() {
        Ok(v) if v > 0 => v,
        _ => {
            return Err(ArchiveError::InvalidField {
                field: "bandwidth_bps",
                value: bw.to_string(),
            })
        }
    };
    for (field, v) in [("probe id", probe_id), ("link id", link_id)] {
        validate_identifier(v).map_err(|_| ArchiveError::InvalidField {
            field,
            value: v.to_string(),
        })?;
    }
    Ok(ProbeConfig {
        probe_id: probe_id.to_string(),
        hardware_desc,
        software_desc,
        link_id: link_id.to_string(),
        link_bandwidth_bps,
    })
}

fn version_from_row(r: &Row<'_>) -> rusqlite::Result<ProbeVersion> {
    Ok(ProbeVersion {
        version: r.get(1)?,
        ingested_at: from_nanos(r.get(6)?),
        config: ProbeConfig {
            probe_id: r.get(0)?,
            hardware_desc: r.get(2)?,
            software_desc: r.get(3)?,
            link_id: r.get(4)?,
            link_bandwidth_bps: r.get::<_, i64>(5)? as u64,
        },
    })
}

const COLS: &str =
    "probe_id, version, hardware_desc, software_desc, link_id, bandwidth_bps, ingested_at";

impl Archive {
    /// Parse and store a probe document. A document for a known probe
    /// becomes its current version; earlier versions stay in the history.
    pub fn ingest_probe_config(&self, xml: &str, now: DateTime<Utc>) -> Result<ProbeConfig> {
        let cfg = parse_probe_xml(xml)?;
        let mut conn = self.write();
        let tx = conn.transaction()?;
        let next: u32 = tx.query_row(
            "SELECT COALESCE(MAX(version), 0) + 1 FROM probe_configs WHERE probe_id = ?1",
            [&cfg.probe_id],
            |r| r.get(0),
        )?;
        tx.execute(
            "INSERT INTO probe_configs VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                cfg.probe_id,
                next,
                cfg.hardware_desc,
                cfg.software_desc,
                cfg.link_id,
                cfg.link_bandwidth_bps as i64,
                to_nanos(&now)
            ],
        )?;
        tx.commit()?;
        Ok(cfg)
    }

    /// Current configuration of a probe.
    pub fn probe(&self, probe_id: &str) -> Result<Option<ProbeConfig>> {
        self.read(|c| {
            Ok(c.query_row(
                &format!(
                    "SELECT {COLS} FROM probe_configs WHERE probe_id = ?1 ORDER BY version DESC LIMIT 1"
                ),
                [probe_id],
                version_from_row,
            )
            .optional()?
            .map(|v| v.config))
        })
    }

    /// All versions of a probe's configuration, oldest first.
    pub fn probe_history(&self, probe_id: &str) -> Result<Vec<ProbeVersion>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {COLS} FROM probe_configs WHERE probe_id = ?1 ORDER BY version"
            ))?;
            let rows = st.query_map([probe_id], version_from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }

    /// Current configuration of every probe, by probe id.
    pub fn probes(&self) -> Result<Vec<ProbeVersion>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {COLS} FROM probe_configs p WHERE version =
                   (SELECT MAX(version) FROM probe_configs q WHERE q.probe_id = p.probe_id)
                 ORDER BY probe_id"
            ))?;
            let rows = st.query_map([], version_from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }
}
