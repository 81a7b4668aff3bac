//! File formats: numeric CSV datasets, edge-list CSVs (1-based indices),
//! key=value manifests, and convergence-trajectory CSVs.
//!
//! Floats are written with 17 significant digits so a written matrix reads
//! back bit-exactly.

use crate::error::{Error, Result};
use crate::solver::TrajectoryPoint;
use crate::synth::{GroundTruthInstance, InstanceParams, NoiseSpec};
use crate::{DataMatrix, WeightMatrix};
use ndarray::Array2;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Round-trip-exact decimal rendering of a float (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes an `n x d` matrix as CSV with a `x1..xd` header row.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    let d = m.ncols();
    for j in 0..d {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "x{}", j + 1);
    }
    out.push('\n');
    for r in 0..m.nrows() {
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[[r, j]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a rectangular numeric CSV into a matrix. A single leading header
/// row is auto-detected (any non-numeric field) and skipped. Ragged or
/// non-numeric bodies give a `Parse` error with 1-based row/column location.
pub fn read_csv_dataset(path: &Path) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let mut values = Vec::with_capacity(fields.len());
        let mut bad: Option<usize> = None;
        for (c, f) in fields.iter().enumerate() {
            match f.trim().parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    bad = Some(c);
                    break;
                }
            }
        }
        if let Some(c) = bad {
            if idx == 0 {
                continue; // header row
            }
            return Err(Error::Parse {
                row: idx + 1,
                col: c + 1,
                msg: format!("not a number: {:?}", fields[c]),
            });
        }
        if rows.is_empty() {
            width = values.len();
        } else if values.len() != width {
            return Err(Error::Parse {
                row: idx + 1,
                col: values.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", values.len()),
            });
        }
        rows.push(values);
    }
    if rows.is_empty() || width == 0 {
        return Err(Error::EmptyFile);
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((n, width), flat).expect("shape checked above"))
}

/// Writes nonzero entries of a weight matrix as `i,j,weight` with 1-based
/// indices, row-major order.
pub fn write_edge_list_csv(path: &Path, w: &WeightMatrix) -> Result<()> {
    let mut out = String::from("i,j,weight\n");
    for ((i, j), &v) in w.indexed_iter() {
        if v != 0.0 {
            let _ = writeln!(out, "{},{},{}", i + 1, j + 1, fmt_f64(v));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a 1-based `i,j,weight` edge list into a `d x d` matrix.
pub fn read_edge_list_csv(path: &Path, d: usize) -> Result<WeightMatrix> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut w = Array2::zeros((d, d));
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with('i')) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                row: idx + 1,
                col: fields.len().min(3) + 1,
                msg: "expected i,j,weight".into(),
            });
        }
        let parse_idx = |c: usize| -> Result<usize> {
            fields[c].trim().parse::<usize>().map_err(|_| Error::Parse {
                row: idx + 1,
                col: c + 1,
                msg: format!("not an index: {:?}", fields[c]),
            })
        };
        let i = parse_idx(0)?;
        let j = parse_idx(1)?;
        let v: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            row: idx + 1,
            col: 3,
            msg: format!("not a number: {:?}", fields[2]),
        })?;
        if i < 1 || i > d || j < 1 || j > d {
            return Err(Error::Parse {
                row: idx + 1,
                col: 1,
                msg: format!("index ({i},{j}) outside 1..={d}"),
            });
        }
        w[[i - 1, j - 1]] = v;
    }
    Ok(w)
}

/// Writes `key=value` lines.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in content.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

/// Writes a convergence trajectory with columns
/// `wall_time_s,primal,dual,gap,nodes,cuts`.
pub fn write_trajectory_csv(path: &Path, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let mut out = String::from("wall_time_s,primal,dual,gap,nodes,cuts\n");
    for t in trajectory {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(t.wall_s),
            fmt_f64(t.primal),
            fmt_f64(t.dual),
            fmt_f64(t.gap),
            t.nodes,
            t.cuts
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn noise_entries(noise: &NoiseSpec) -> Vec<(String, String)> {
    match noise {
        NoiseSpec::Fixed { variance } => vec![
            ("noise".into(), "fixed".into()),
            ("variance".into(), fmt_f64(*variance)),
        ],
        NoiseSpec::UniformVariance { lo, hi } => vec![
            ("noise".into(), "per-variable-uniform".into()),
            ("variance_lo".into(), fmt_f64(*lo)),
            ("variance_hi".into(), fmt_f64(*hi)),
        ],
    }
}

/// Saves `data.csv`, `ground_truth.csv`, and `manifest.txt` under `dir`.
pub fn save_instance(dir: &Path, inst: &GroundTruthInstance, params: &InstanceParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("data.csv"), &inst.data)?;
    write_edge_list_csv(&dir.join("ground_truth.csv"), &inst.w_true)?;
    let mut entries = vec![
        ("d".to_string(), params.d.to_string()),
        ("n".to_string(), params.n.to_string()),
        ("ensemble".to_string(), params.ensemble.label()),
        ("seed".to_string(), params.seed.to_string()),
    ];
    entries.extend(noise_entries(&params.noise));
    write_manifest(&dir.join("manifest.txt"), &entries)?;
    Ok(())
}
