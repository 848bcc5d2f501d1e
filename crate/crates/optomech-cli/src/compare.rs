//! Column-wise comparison of two numeric CSV artifacts.

use std::path::Path;

#[derive(Debug)]
pub enum CompareOutcome {
    /// Every column within tolerance; per-column (max, mean) deviations.
    Within(Vec<ColumnReport>),
    /// At least one column beyond tolerance.
    Beyond(Vec<ColumnReport>),
}

#[derive(Debug)]
pub struct ColumnReport {
    pub name: String,
    pub max_rel: f64,
    pub mean_rel: f64,
}

#[derive(Debug)]
pub enum CompareError {
    Io(String),
    SchemaMismatch(String),
}

impl std::fmt::Display for CompareError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CompareError::Io(m) => write!(f, "{m}"),
            CompareError::SchemaMismatch(m) => write!(f, "schema mismatch: {m}"),
        }
    }
}

fn load(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CompareError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CompareError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CompareError::SchemaMismatch(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(CompareError::SchemaMismatch(format!(
                "{}: line {} has {} columns, header has {}",
                path.display(),
                k + 2,
                cells.len(),
                header.len()
            )));
        }
        for (col, cell) in columns.iter_mut().zip(cells.iter()) {
            let v: f64 = cell.trim().parse().map_err(|e| {
                CompareError::Io(format!("{}: line {}: {e}", path.display(), k + 2))
            })?;
            col.push(v);
        }
    }
    Ok((header, columns))
}

pub fn compare(a: &Path, b: &Path, tol: f64) -> Result<CompareOutcome, CompareError> {
    let (header_a, cols_a) = load(a)?;
    let (header_b, cols_b) = load(b)?;
    if header_a != header_b {
        return Err(CompareError::SchemaMismatch(format!(
            "headers differ: {:?} vs {:?}",
            header_a, header_b
        )));
    }
    if cols_a[0].len() != cols_b[0].len() {
        return Err(CompareError::SchemaMismatch(format!(
            "row counts differ: {} vs {}",
            cols_a[0].len(),
            cols_b[0].len()
        )));
    }
    let mut reports = Vec::with_capacity(header_a.len());
    let mut beyond = false;
    for ((name, col_a), col_b) in header_a.into_iter().zip(cols_a).zip(cols_b) {
        let mut max_rel: f64 = 0.0;
        let mut sum_rel = 0.0;
        for (&x, &y) in col_a.iter().zip(col_b.iter()) {
            let scale = x.abs().max(y.abs());
            let rel = if scale == 0.0 { 0.0 } else { (x - y).abs() / scale };
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        let mean_rel = if col_a.is_empty() { 0.0 } else { sum_rel / col_a.len() as f64 };
        if max_rel > tol {
            beyond = true;
        }
        reports.push(ColumnReport { name, max_rel, mean_rel });
    }
    Ok(if beyond { CompareOutcome::Beyond(reports) } else { CompareOutcome::Within(reports) })
}
