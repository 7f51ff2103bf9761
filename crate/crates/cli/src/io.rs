//! Dataset artifacts: small CSV tables, the P5 graymap, and atomic writes.
//! Floats are printed with the shortest round-trip form, so a parse of any
//! emitted file reproduces the exact values.

use std::fs;
use std::path::Path;

use pomcrf::geometry::GroundGrid;
use pomcrf::scene::SceneFrame;

use crate::error::{CliError, CliResult};

/// Writes via a sibling temp file and rename, so readers never observe a
/// partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| CliError::data(anyhow::anyhow!("mkdir {}: {e}", parent.display())))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes)
        .map_err(|e| CliError::data(anyhow::anyhow!("write {}: {e}", tmp.display())))?;
    fs::rename(tmp, path)
        .map_err(|e| CliError::data(anyhow::anyhow!("rename to {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::data(anyhow::anyhow!("read {}: {e}", path.display())))
}

fn parse_line<const N: usize>(path: &Path, lineno: usize, line: &str) -> CliResult<[f64; N]> {
    let mut out = [0.0; N];
    let mut fields = line.split(',');
    for slot in out.iter_mut() {
        let raw = fields.next().ok_or_else(|| {
            CliError::data(anyhow::anyhow!("{}:{lineno}: too few columns", path.display()))
        })?;
        *slot = raw.trim().parse().map_err(|e| {
            CliError::data(anyhow::anyhow!("{}:{lineno}: bad number {raw:?}: {e}", path.display()))
        })?;
    }
    if fields.next().is_some() {
        return Err(CliError::data(anyhow::anyhow!(
            "{}:{lineno}: too many columns",
            path.display()
        )));
    }
    Ok(out)
}

/// Reads a CSV with the given header into rows of `N` numbers.
pub fn read_csv<const N: usize>(path: &Path, header: &str) -> CliResult<Vec<[f64; N]>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == header => {}
        _ => {
            return Err(CliError::data(anyhow::anyhow!(
                "{}: expected header {header:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_line::<N>(path, i + 1, line)?);
    }
    Ok(rows)
}

fn as_index(path: &Path, what: &str, v: f64, bound: usize) -> CliResult<usize> {
    if v.fract() != 0.0 || v < 0.0 || v >= bound as f64 {
        return Err(CliError::data(anyhow::anyhow!(
            "{}: {what} {v} outside 0..{bound}",
            path.display()
        )));
    }
    Ok(v as usize)
}

pub fn truth_csv(frames: &[SceneFrame], grid: &GroundGrid) -> String {
    let mut out = String::from("frame,row,col\n");
    for f in frames {
        for i in f.occupied_indices() {
            let (r, c) = grid.row_col(i);
            out.push_str(&format!("{},{r},{c}\n", f.frame));
        }
    }
    out
}

pub fn read_truth(path: &Path, grid: &GroundGrid, frames: usize) -> CliResult<Vec<SceneFrame>> {
    let mut occupancy = vec![vec![false; grid.cells()]; frames];
    for row in read_csv::<3>(path, "frame,row,col")? {
        let f = as_index(path, "frame", row[0], frames)?;
        let r = as_index(path, "row", row[1], grid.rows)?;
        let c = as_index(path, "col", row[2], grid.cols)?;
        occupancy[f][grid.index(r, c)] = true;
    }
    Ok(occupancy
        .into_iter()
        .enumerate()
        .map(|(frame, occ)| SceneFrame { frame, occupancy: occ })
        .collect())
}

pub fn unary_csv(scores: &[f64]) -> String {
    let mut out = String::from("cell,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

pub fn read_unary(path: &Path, cells: usize) -> CliResult<Vec<f64>> {
    let rows = read_csv::<2>(path, "cell,score")?;
    if rows.len() != cells {
        return Err(CliError::data(anyhow::anyhow!(
            "{}: expected {cells} rows, found {}",
            path.display(),
            rows.len()
        )));
    }
    let mut scores = vec![f64::NAN; cells];
    for row in rows {
        let i = as_index(path, "cell", row[0], cells)?;
        scores[i] = row[1];
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CliError::data(anyhow::anyhow!("{}: duplicate cells", path.display())));
    }
    Ok(scores)
}

pub fn pom_csv(q: &[f64], grid: &GroundGrid) -> String {
    let mut out = String::from("row,col,q\n");
    for (i, v) in q.iter().enumerate() {
        let (r, c) = grid.row_col(i);
        out.push_str(&format!("{r},{c},{v}\n"));
    }
    out
}

pub fn read_pom(path: &Path, grid: &GroundGrid) -> CliResult<Vec<f64>> {
    let rows = read_csv::<3>(path, "row,col,q")?;
    if rows.len() != grid.cells() {
        return Err(CliError::data(anyhow::anyhow!(
            "{}: expected {} rows, found {}",
            path.display(),
            grid.cells(),
            rows.len()
        )));
    }
    let mut q = vec![f64::NAN; grid.cells()];
    for row in rows {
        let r = as_index(path, "row", row[0], grid.rows)?;
        let c = as_index(path, "col", row[1], grid.cols)?;
        q[grid.index(r, c)] = row[2];
    }
    if q.iter().any(|v| v.is_nan()) {
        return Err(CliError::data(anyhow::anyhow!("{}: duplicate cells", path.display())));
    }
    Ok(q)
}

/// Binary P5 graymap of the occupancy map, one byte per cell.
pub fn pom_pgm(q: &[f64], grid: &GroundGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend(q.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
