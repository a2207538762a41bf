//! CSV and JSON emission. Floats are written in shortest round-trip form.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// One header row from the field names, then one row per record.
pub fn write_csv<R: Serialize>(out: Option<&Path>, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(out)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline; keys keep declaration order.
pub fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
