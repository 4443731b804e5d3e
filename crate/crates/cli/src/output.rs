use std::fs;
use std::io::{self, Write};
use std::path::Path;

use gbdp_core::{Error, Result};
use tempfile::NamedTempFile;

/// Write `body` to `path`, or to stdout for `-`. Files are written to a
/// temporary sibling and renamed into place.
pub fn emit<F>(path: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    if path == "-" {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        body(&mut lock)?;
        lock.flush()?;
        return Ok(());
    }
    let target = Path::new(path);
    let dir = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(target).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

pub fn emit_json(path: &str, value: &serde_json::Value) -> Result<()> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}
