//! Subcommands that work on the archive and its catalog.

use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde_json::json;
use tracevault::summary::TierName;
use tracevault::time::parse_iso;
use tracevault_archive::{Archive, Category, RetentionPolicy, CATALOG_FILE};

use crate::{AdduserArgs, CliError, Ctx, ExpireArgs, IngestArgs, PinArgs, ServeArgs};

fn open_archive(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<Archive, CliError> {
    let root = ctx.archive_root(flag)?;
    let (db, rounds) = match (&ctx.config, flag) {
        (Some(c), None) => (c.catalog_path(), c.service.kdf_rounds),
        (Some(c), Some(_)) => (root.join(CATALOG_FILE), c.service.kdf_rounds),
        (None, _) => (
            root.join(CATALOG_FILE),
            tracevault_archive::access::DEFAULT_KDF_ROUNDS,
        ),
    };
    std::fs::create_dir_all(&root)
        .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
    Ok(Archive::open_with_db(&root, db)?.with_kdf_rounds(rounds))
}

fn policy(ctx: &Ctx) -> RetentionPolicy {
    ctx.config
        .as_ref()
        .map(|c| c.retention.clone())
        .unwrap_or_default()
}

pub fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<(), CliError> {
    let tier = TierName::from_str(&a.tier).map_err(|_| {
        let names: Vec<_> = TierName::ALL.iter().map(|t| t.as_str()).collect();
        CliError::Usage(format!("unknown tier {:?}; expected one of {}", a.tier, names.join(", ")))
    })?;
    let archive = open_archive(ctx, &a.archive)?;
    let now = Utc::now();
    let mut probes = Vec::new();
    for path in &a.probe_xml {
        let xml = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        probes.push(archive.ingest_probe_config(&xml, now)?);
    }
    let dir = a.dir.clone().unwrap_or_else(|| archive.root().to_path_buf());
    let report = archive.ingest_dir(&dir, tier, now)?;
    let value = json!({ "probes": probes, "files": report });
    ctx.report(&value, || {
        let mut s = format!(
            "{} probe configurations, {} files ingested, {} already catalogued, {} rejected\n",
            probes.len(),
            report.ingested.len(),
            report.duplicates.len(),
            report.errors.len()
        );
        for (file, why) in &report.errors {
            s.push_str(&format!("rejected {file}: {why}\n"));
        }
        s
    });
    if report.errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} files rejected", report.errors.len())))
    }
}

fn parse_now(s: &Option<String>) -> Result<DateTime<Utc>, CliError> {
    match s {
        Some(s) => parse_iso(s).map_err(|e| CliError::Usage(format!("--now {s:?}: {e}"))),
        None => Ok(Utc::now()),
    }
}

pub fn expire(ctx: &Ctx, a: ExpireArgs) -> Result<(), CliError> {
    let now = parse_now(&a.now)?;
    let archive = open_archive(ctx, &a.archive)?;
    let policy = policy(ctx);
    let reconciled = archive.reconcile(now)?;
    let report = archive.expire(now, &policy)?;
    let audit = archive.audit()?;
    if a.audit {
        print!("{}", audit.to_json_lines());
    } else {
        let value = json!({ "reconciled": reconciled, "expired": report, "audit": audit });
        ctx.report(&value, || {
            let mut s = format!(
                "{} files expired, {} could not be deleted, {} missing files marked expired\n",
                report.removed.len(),
                report.failed.len(),
                reconciled.len()
            );
            for (file, why) in &report.failed {
                s.push_str(&format!("kept {file}: {why}\n"));
            }
            s.push_str(&format!(
                "audit: {} entries, {} present, {} files on disk, {} issues\n",
                audit.entries,
                audit.present_entries,
                audit.files_on_disk,
                audit.issues.len()
            ));
            s
        });
    }
    if !report.failed.is_empty() {
        return Err(CliError::Io(format!("{} files could not be deleted", report.failed.len())));
    }
    if !audit.is_consistent() {
        return Err(CliError::Data(format!("audit found {} issues", audit.issues.len())));
    }
    Ok(())
}

pub fn pin(ctx: &Ctx, a: PinArgs) -> Result<(), CliError> {
    let archive = open_archive(ctx, &a.archive)?;
    let entry = archive.pin_sample(&a.file, &policy(ctx))?;
    ctx.report(&entry, || format!("pinned {}\n", entry.meta.file_name));
    Ok(())
}

pub fn adduser(ctx: &Ctx, a: AdduserArgs) -> Result<(), CliError> {
    let category = Category::from_str(&a.category).map_err(|_| {
        let names: Vec<_> = Category::ALL.iter().map(|c| c.as_str()).collect();
        CliError::Usage(format!(
            "unknown category {:?}; expected one of {}",
            a.category,
            names.join(", ")
        ))
    })?;
    let text = std::fs::read_to_string(&a.password_file)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.password_file.display())))?;
    let password = text.lines().next().unwrap_or("");
    let archive = open_archive(ctx, &a.archive)?;
    let user = archive.register(&a.username, password, category, Utc::now())?;
    ctx.report(&user, || {
        format!("created {} ({})\n", user.username, user.category.as_str())
    });
    Ok(())
}

pub fn serve(ctx: &Ctx, a: ServeArgs) -> Result<(), CliError> {
    let mut config = ctx.config()?.clone();
    if let Some(addr) = a.listen {
        config.listen = addr;
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    eprintln!("listening on {}", config.listen);
    rt.block_on(tracevault_service::serve(&config)).map_err(|e| match e {
        tracevault_service::ServeError::Io(e) => CliError::Io(e.to_string()),
        tracevault_service::ServeError::Archive(e) => e.into(),
    })
}
