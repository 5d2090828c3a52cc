//! File formats: CSV writers (17 significant digits) and the summary JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use projfilter::metrics::DensityGrid;
use projfilter::quadrature::SparseGrid;

use crate::experiment::{ComparisonRow, PropagationRow, Summary, TraceRow};

/// 17 significant digits, round-trip exact for f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut out = String::from("iter,d_half,d_kl,grad_norm,hellinger,seconds\n");
    for r in rows {
        let h = r.hellinger.map(fmt17).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter,
            fmt17(r.d_half),
            fmt17(r.d_kl),
            fmt17(r.grad_norm),
            h,
            fmt17(r.seconds),
        ));
    }
    fs::write(path, out)
}

/// Row-major matrix with a header line carrying region and resolution.
pub fn write_density_csv(path: &Path, grid: &DensityGrid) -> std::io::Result<()> {
    let mut out = String::new();
    let lo: Vec<String> = grid.region.lo.iter().map(|v| fmt17(*v)).collect();
    let hi: Vec<String> = grid.region.hi.iter().map(|v| fmt17(*v)).collect();
    out.push_str(&format!(
        "lo,{},hi,{},resolution,{}\n",
        lo.join(","),
        hi.join(","),
        grid.resolution
    ));
    let cols = if grid.dim() == 1 { 1 } else { grid.resolution };
    for row in grid.values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> std::io::Result<()> {
    let mut out = String::from("method,iterations,hellinger,op_count,seconds,note\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.iterations,
            r.hellinger.map(fmt17).unwrap_or_default(),
            r.op_count,
            fmt17(r.seconds),
            r.note,
        ));
    }
    fs::write(path, out)
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")
}

/// One row per node: coordinates then weight, 17 significant digits.
pub fn write_grid_csv(path: &Path, grid: &SparseGrid) -> std::io::Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = (0..grid.dim()).map(|j| format!("y{}", j + 1)).collect();
    header.push("weight".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for (node, w) in grid.iter() {
        let mut cells: Vec<String> = node.iter().map(|v| fmt17(*v)).collect();
        cells.push(fmt17(w));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn write_propagation_csv(path: &Path, rows: &[PropagationRow]) -> std::io::Result<()> {
    if rows.is_empty() {
        return fs::write(path, "t\n");
    }
    let d = rows[0].mu.len();
    let m = rows[0].theta.len();
    let mut header = vec![String::from("t")];
    header.extend((0..m).map(|i| format!("theta{}", i + 1)));
    header.extend((0..d).map(|i| format!("mu{}", i + 1)));
    for i in 0..d {
        for j in 0..d {
            header.push(format!("sigma{}{}", i + 1, j + 1));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let mut cells = vec![fmt17(r.t)];
        cells.extend(r.theta.iter().map(|v| fmt17(*v)));
        cells.extend(r.mu.iter().map(|v| fmt17(*v)));
        cells.extend(r.sigma.iter().map(|v| fmt17(*v)));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}
