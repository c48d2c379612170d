//! CSV tables and PGM renders.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use distill_core::emccd::write_pgm;
use ndarray::Array2;

use crate::config::Config;
use crate::error::CliResult;
use crate::sweep::{Heatmap, SweepRow};

/// The config as `#` comment lines.
pub fn config_header(config: &Config) -> String {
    config.to_toml().lines().map(|l| format!("# {l}\n")).collect()
}

pub fn write_rows(path: &Path, config: &Config, rows: &[SweepRow]) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(config_header(config).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Matrix with `a_px` down the rows and `d_px` across the columns.
pub fn write_grid(path: &Path, config: &Config, map: &Heatmap, values: &Array2<f64>) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(config_header(config).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["a_px\\d_px".to_string()];
    header.extend(map.d_values.iter().map(|d| d.to_string()));
    w.write_record(&header)?;
    for (a, row) in map.a_values.iter().zip(values.rows()) {
        let mut rec = vec![a.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear 16-bit render of finite values; NaN cells render as 0. The
/// sidecar `<path>.txt` records the value range.
pub fn write_render(path: &Path, values: &Array2<f64>, x_label: &str, y_label: &str) -> CliResult<()> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let counts = values.mapv(|v| if v.is_finite() { ((v - lo) / span * 65535.0).round() as u16 } else { 0 });
    write_pgm(BufWriter::new(File::create(path)?), &counts)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    let text = format!("min {lo}\nmax {hi}\ncolumns {x_label}\nrows {y_label}\n");
    std::fs::write(side, text)?;
    Ok(())
}
