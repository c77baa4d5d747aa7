//! Append-only metrics log: tab-separated values, one line per epoch,
//! echoed to standard output.

use pfm_core::train::MetricsRecord;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;

pub const HEADER: &str = "# epoch\ttrain_loss\ttrain_acc\ttest_acc\twall_ms";

pub fn format_record(r: &MetricsRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wall_ms
    )
}

/// Appends records to `path` (creating it with a header line when new) and
/// echoes every line to stdout.
pub fn append_and_echo(path: &Path, records: &[MetricsRecord]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let new = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(file, "{HEADER}")?;
    }
    for r in records {
        let line = format_record(r);
        writeln!(file, "{line}")?;
        println!("{line}");
    }
    Ok(())
}
