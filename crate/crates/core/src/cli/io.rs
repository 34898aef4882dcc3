//! CSV and JSON files of the command-line interface.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use super::CliError;
use crate::model::{JointData, LongRow, SurvRow};

const LONG_HEADER: [&str; 3] = ["id", "time", "y"];
const SURV_HEADER: [&str; 3] = ["id", "time", "event"];

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn open(path: &Path) -> Result<csv::Reader<BufReader<File>>, CliError> {
    let file = File::open(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(file)))
}

fn header(
    reader: &mut csv::Reader<BufReader<File>>,
    path: &Path,
    expected: &[&str; 3],
) -> Result<Vec<String>, CliError> {
    let h = reader
        .headers()
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?
        .clone();
    let fields: Vec<String> = h.iter().map(str::to_string).collect();
    if fields.len() < 3 || fields[..3] != expected[..] {
        return Err(CliError::parse(format!(
            "{}: header must start with `{}`",
            path.display(),
            expected.join(",")
        )));
    }
    Ok(fields[3..].to_vec())
}

fn number(path: &Path, line: u64, field: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = value.parse().map_err(|_| {
        CliError::parse(format!("{} line {line}: `{field}` is not a number: `{value}`", path.display()))
    })?;
    if !v.is_finite() {
        return Err(CliError::parse(format!("{} line {line}: `{field}` is not finite", path.display())));
    }
    Ok(v)
}

fn records(
    reader: &mut csv::Reader<BufReader<File>>,
    path: &Path,
    width: usize,
) -> Result<Vec<(u64, Vec<String>)>, CliError> {
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| CliError::parse(format!("{} line {line}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(CliError::parse(format!(
                "{} line {line}: expected {width} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

/// Reads `id,time,y[,x..]`.
pub fn read_long_csv(path: &Path) -> Result<(Vec<String>, Vec<LongRow>), CliError> {
    let mut r = open(path)?;
    let names = header(&mut r, path, &LONG_HEADER)?;
    let mut rows = Vec::new();
    for (line, f) in records(&mut r, path, names.len() + 3)? {
        rows.push(LongRow {
            id: f[0].clone(),
            t: number(path, line, "time", &f[1])?,
            y: number(path, line, "y", &f[2])?,
            x: names
                .iter()
                .zip(&f[3..])
                .map(|(n, v)| number(path, line, n, v))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok((names, rows))
}

/// Reads `id,time,event[,z..]`.
pub fn read_surv_csv(path: &Path) -> Result<(Vec<String>, Vec<SurvRow>), CliError> {
    let mut r = open(path)?;
    let names = header(&mut r, path, &SURV_HEADER)?;
    let mut rows = Vec::new();
    for (line, f) in records(&mut r, path, names.len() + 3)? {
        let event = match f[2].as_str() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(CliError::parse(format!(
                    "{} line {line}: event must be 0 or 1, found `{other}`",
                    path.display()
                )))
            }
        };
        rows.push(SurvRow {
            id: f[0].clone(),
            s: number(path, line, "time", &f[1])?,
            event,
            z: names
                .iter()
                .zip(&f[3..])
                .map(|(n, v)| number(path, line, n, v))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok((names, rows))
}

pub fn read_data(long: Option<&Path>, surv: Option<&Path>) -> Result<JointData, CliError> {
    let mut data = JointData::default();
    if let Some(p) = long {
        let (names, rows) = read_long_csv(p)?;
        data.long_names = names;
        data.long_rows = rows;
    }
    if let Some(p) = surv {
        let (names, rows) = read_surv_csv(p)?;
        data.surv_names = names;
        data.surv_rows = rows;
    }
    Ok(data)
}

pub fn long_csv(names: &[String], rows: &[LongRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = LONG_HEADER.iter().map(|s| s.to_string()).collect();
    head.extend(names.iter().cloned());
    w.write_record(&head).map_err(CliError::io)?;
    for r in rows {
        let mut rec = vec![r.id.clone(), fmt_num(r.t), fmt_num(r.y)];
        rec.extend(r.x.iter().map(|v| fmt_num(*v)));
        w.write_record(&rec).map_err(CliError::io)?;
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}

pub fn surv_csv(names: &[String], rows: &[SurvRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = SURV_HEADER.iter().map(|s| s.to_string()).collect();
    head.extend(names.iter().cloned());
    w.write_record(&head).map_err(CliError::io)?;
    for r in rows {
        let mut rec = vec![r.id.clone(), fmt_num(r.s), r.event.to_string()];
        rec.extend(r.z.iter().map(|v| fmt_num(*v)));
        w.write_record(&rec).map_err(CliError::io)?;
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(CliError::io)?;
    tmp.write_all(bytes).map_err(CliError::io)?;
    tmp.as_file().sync_all().map_err(CliError::io)?;
    tmp.persist(path).map_err(|e| CliError::io(e.error))?;
    Ok(())
}
