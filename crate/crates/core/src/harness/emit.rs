use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::Result;

use super::experiment::{AggregateRow, Algorithm, SweepRow};

/// CSV columns, in order.
pub const CSV_HEADER: [&str; 7] = [
    "algorithm",
    "width",
    "sparsity",
    "seed",
    "train_mse",
    "test_mse",
    "wall_time_s",
];

/// Writes `rows` as CSV (header first, rows in the given order).
pub fn write_results<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_results(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_results(rows, BufWriter::new(File::create(path)?))
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Writes a whitespace-separated table for gnuplot: one block per sparsity
/// (separated by two blank lines, so `index` selects it), one line per width,
/// and for every algorithm the trimmed mean, minimum and maximum test error.
pub fn emit_gnuplot(summary: &[AggregateRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let algorithms: Vec<Algorithm> = Algorithm::ALL
        .into_iter()
        .filter(|a| summary.iter().any(|s| s.algorithm == *a))
        .collect();
    let mut sparsities: Vec<f64> = summary.iter().map(|s| s.sparsity).collect();
    sparsities.sort_by(|a, b| b.total_cmp(a));
    sparsities.dedup();
    write!(out, "# width")?;
    for a in &algorithms {
        write!(out, " {a} {a}_min {a}_max")?;
    }
    writeln!(out)?;
    for (block, &p) in sparsities.iter().enumerate() {
        if block > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        writeln!(out, "# sparsity {p}")?;
        let mut widths: Vec<usize> = summary.iter().filter(|s| s.sparsity == p).map(|s| s.width).collect();
        widths.sort_unstable();
        widths.dedup();
        for w in widths {
            write!(out, "{w}")?;
            for a in &algorithms {
                match summary.iter().find(|s| s.sparsity == p && s.width == w && s.algorithm == *a) {
                    Some(s) => write!(out, " {:e} {:e} {:e}", s.mean_test_mse, s.min_test_mse, s.max_test_mse)?,
                    None => write!(out, " NaN NaN NaN")?,
                }
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::aggregate;

    fn rows() -> Vec<SweepRow> {
        vec![
            SweepRow {
                algorithm: Algorithm::SgdBn,
                width: 16,
                sparsity: 1.0,
                seed: 3,
                train_mse: 0.125,
                test_mse: 0.1 + 0.2,
                wall_time_s: 1.5,
            },
            SweepRow {
                algorithm: Algorithm::ConstructFromTeacher,
                width: 256,
                sparsity: 0.05,
                seed: 4,
                train_mse: 1e-31,
                test_mse: 2.5e-29,
                wall_time_s: 0.0,
            },
        ]
    }

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_results(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "algorithm,width,sparsity,seed,train_mse,test_mse,wall_time_s\n"
        );
    }

    #[test]
    fn csv_round_trips_exactly() {
        let mut buf = Vec::new();
        write_results(&rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("sgd_bn,16,1.0,3,0.125,"));
        assert_eq!(read_results(buf.as_slice()).unwrap(), rows());
    }

    #[test]
    fn gnuplot_blocks_per_sparsity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.dat");
        emit_gnuplot(&aggregate(&rows()), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# width sgd_bn sgd_bn_min sgd_bn_max construct_from_teacher"));
        assert_eq!(text.matches("# sparsity").count(), 2);
        assert!(text.contains("\n\n\n# sparsity 0.05\n256 NaN NaN NaN 2.5e-29"));
    }
}
