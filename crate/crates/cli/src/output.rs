//! File output. Every file is written to a temporary sibling and renamed into
//! place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hbrate::schemes::{fmt_f64, write_trace_csv, TraceRecord};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output directory {} is not usable: {e}", dir.display())))?;
    // probe writability up front so a bad directory is a configuration error
    NamedTempFile::new_in(dir)
        .map(drop)
        .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(path, &buf)
}

/// `t,fgap,speed,energy`; the energy column is empty without a projection.
pub fn write_ode_trace(path: &Path, times: &[f64], gaps: &[f64], speeds: &[f64], energy: Option<&[f64]>) -> Result<(), CliError> {
    let mut out = String::from("t,fgap,speed,energy\n");
    for k in 0..times.len() {
        let e = energy.map(|e| fmt_f64(e[k])).unwrap_or_default();
        out.push_str(&format!("{},{},{},{e}\n", fmt_f64(times[k]), fmt_f64(gaps[k]), fmt_f64(speeds[k])));
    }
    write_atomic(path, out.as_bytes())
}

/// Gnuplot script drawing `f_gap` against `n` for every trace, log scale.
pub fn gnuplot_script(traces: &[(String, PathBuf)]) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset logscale y\nset xlabel 'iteration'\nset ylabel 'F(x_n) - F*'\nset key outside\n",
    );
    let plots: Vec<String> = traces
        .iter()
        .map(|(label, path)| {
            let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            format!("'{name}' using 1:2 every ::1 with lines title '{label}'")
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}
