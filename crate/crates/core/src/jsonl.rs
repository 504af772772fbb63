//! Line-delimited JSON helpers shared by the file-facing modules.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Streams records from a JSONL file, skipping blank lines.
pub fn read_iter<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<T>>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().filter(|(_, line)| line.as_ref().map_or(true, |l| !l.trim().is_empty())).map(
        move |(idx, line)| {
            let line = line?;
            serde_json::from_str(&line).map_err(|source| Error::Json { path: name.clone(), line: idx + 1, source })
        },
    ))
}

pub fn read_all<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_iter(path)?.collect()
}

pub fn write_record<T: Serialize, W: Write>(out: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_all<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        write_record(&mut out, record)?;
    }
    out.flush()?;
    Ok(())
}
