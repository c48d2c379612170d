//! Subcommand bodies. Each writes its outputs under `out` and returns the
//! number of failed rows.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use distill_core::emccd::{read_pgm, write_pgm, EmccdFrame};
use distill_core::fieldgrid::Plane;
use distill_core::fitting::{farfield_records, nearfield_records};
use distill_core::physmodel::{closed_form_schmidt, FilterSpec};
use distill_core::schmidt::reference_k;

use crate::config::Config;
use crate::error::CliResult;
use crate::output::{config_header, write_grid, write_render, write_rows};
use crate::pipeline::{end_to_end, fit_frames, marginals_for_camera, plane_frames};
use crate::sweep::{blank_band, heatmap, linearized_half_width, run_sweep, Engine, SweepRow};

fn failures(rows: &[SweepRow]) -> usize {
    rows.iter().filter(|r| r.is_error()).count()
}

fn write_table(path: &Path, config: &Config, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut out, config_header(config).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Closed form, radial reference and fast-path blank Schmidt numbers.
pub fn k0(config: &Config, out: &Path) -> CliResult<usize> {
    let params = config.physical()?;
    let engine = Engine::new(config)?;
    let rows = vec![
        vec!["closed_form".into(), closed_form_schmidt(&params).to_string()],
        vec!["reference".into(), reference_k(&params, config.mc.reference_n)?.to_string()],
        vec!["fast_path".into(), engine.k0.to_string()],
    ];
    write_table(&out.join("k0.csv"), config, &["quantity", "K0"], &rows)?;
    Ok(0)
}

pub fn sweep(config: &Config, out: &Path) -> CliResult<usize> {
    let rows = run_sweep(config)?;
    write_rows(&out.join("sweep.csv"), config, &rows)?;
    Ok(failures(&rows))
}

pub fn heatmap_cmd(config: &Config, out: &Path) -> CliResult<usize> {
    let map = heatmap(config)?;
    write_grid(&out.join("ratio.csv"), config, &map, &map.ratio)?;
    write_grid(&out.join("p_succ.csv"), config, &map, &map.p_succ)?;
    write_render(&out.join("ratio.pgm"), &map.ratio, "a_px", "d_px")?;
    write_render(&out.join("p_succ.pgm"), &map.p_succ, "a_px", "d_px")?;
    write_rows(&out.join("heatmap_rows.csv"), config, &map.rows)?;
    Ok(failures(&map.rows))
}

/// Blank-filter band from the reference grids, plus per-setting bands from
/// the fast path when `mc.per_row` is set.
pub fn mc_band_cmd(config: &Config, out: &Path) -> CliResult<usize> {
    let params = config.physical()?;
    let band = blank_band(config)?;
    let fmt = |v: f64| v.to_string();
    let rows = vec![vec![
        "blank".into(),
        fmt(band.nominal),
        fmt(band.lo),
        fmt(band.hi),
        fmt(band.half_width()),
        fmt(linearized_half_width(&params, band.nominal)),
        band.accepted.to_string(),
        band.rejected.to_string(),
    ]];
    let header = ["filter", "K", "band_lo", "band_hi", "half_width", "linearized_half_width", "accepted", "rejected"];
    write_table(&out.join("mc_band.csv"), config, &header, &rows)?;
    if config.mc.per_row {
        let rows = run_sweep(config)?;
        write_rows(&out.join("mc_band_rows.csv"), config, &rows)?;
        return Ok(failures(&rows));
    }
    Ok(0)
}

fn label(setting: Option<(f64, f64)>) -> String {
    match setting {
        None => "blank".into(),
        Some((a, d)) => format!("a{a}_d{d}"),
    }
}

fn save_frames(dir: &Path, name: &str, plane: Plane, frames: &[EmccdFrame]) -> CliResult<()> {
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(format!("{name}_{}_{i:03}.pgm", plane.name()));
        write_pgm(BufWriter::new(File::create(path)?), &f.counts)?;
    }
    Ok(())
}

/// Near- and far-field frames for the blank filter and every setting.
pub fn frames(config: &Config, out: &Path) -> CliResult<usize> {
    let engine = Engine::new(config)?;
    let cam = config.camera.spec();
    let dir = out.join("frames");
    std::fs::create_dir_all(&dir)?;
    let settings: Vec<Option<(f64, f64)>> =
        std::iter::once(None).chain(config.settings().into_iter().map(Some)).collect();
    let mut failed = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        let run = || -> CliResult<()> {
            let filter = match s {
                None => FilterSpec::blank(),
                Some((a, d)) => config.filter(*a, *d)?,
            };
            let m = marginals_for_camera(&engine, &filter, &cam)?;
            let name = label(*s);
            save_frames(&dir, &name, Plane::NearField, &plane_frames(&m, Plane::NearField, config, 2 * i as u64)?)?;
            save_frames(&dir, &name, Plane::FarField, &plane_frames(&m, Plane::FarField, config, 2 * i as u64 + 1)?)?;
            Ok(())
        };
        if let Err(e) = run() {
            failed.push(vec![label(*s), e.to_string()]);
        }
    }
    if !failed.is_empty() {
        write_table(&out.join("frames_errors.csv"), config, &["filter", "error"], &failed)?;
    }
    Ok(failed.len())
}

fn load_frames(paths: &[PathBuf], plane: Plane) -> CliResult<Vec<EmccdFrame>> {
    paths
        .iter()
        .map(|p| {
            let counts = read_pgm(BufReader::new(File::open(p)?))?;
            Ok(EmccdFrame { counts, exposure_photons: f64::NAN, seed: 0, plane })
        })
        .collect()
}

/// Fits recorded frames of both planes and reports `K ± dK`.
pub fn fit(config: &Config, out: &Path, near: &[PathBuf], far: &[PathBuf]) -> CliResult<usize> {
    let cam = config.camera.spec();
    let near = load_frames(near, Plane::NearField)?;
    let far = load_frames(far, Plane::FarField)?;
    let result = fit_frames(&near, &far, &cam, &config.fit.options());
    let rows = match &result {
        Ok(f) => {
            std::fs::write(out.join("fit_near.txt"), nearfield_records(&f.near))?;
            std::fs::write(out.join("fit_far.txt"), farfield_records(&f.far))?;
            vec![vec![f.k.to_string(), f.dk.to_string(), String::new()]]
        }
        Err(e) => vec![vec![String::new(), String::new(), e.to_string()]],
    };
    write_table(&out.join("fit.csv"), config, &["K", "dK", "error"], &rows)?;
    Ok(usize::from(result.is_err()))
}

pub fn end_to_end_cmd(config: &Config, out: &Path) -> CliResult<usize> {
    let rows = end_to_end(config)?;
    write_rows(&out.join("end_to_end.csv"), config, &rows)?;
    Ok(failures(&rows))
}
