//! CSV and markdown reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lipbound_core::{Status, SuiteReport};

pub const CSV_HEADER: [&str; 9] = [
    "check",
    "patch",
    "case",
    "residual",
    "tolerance",
    "pass",
    "refinement",
    "order",
    "seconds",
];
pub const CSV_NAME: &str = "results.csv";
pub const MARKDOWN_NAME: &str = "report.md";

/// Fixed 17-significant-digit form; `nan` and `inf` spelled in lower case.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

/// One row per case. `seconds` is zero unless `timings` is set, so reruns are byte-identical.
pub fn to_csv(reports: &[SuiteReport], timings: bool) -> csv::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let seconds = format_number(if timings { r.seconds } else { 0.0 });
        for c in &r.cases {
            w.write_record([
                r.check.as_str(),
                r.patch.as_str(),
                c.case.as_str(),
                &format_number(c.residual),
                &format_number(c.tolerance),
                c.status.as_str(),
                &c.refinement.to_string(),
                &c.order.to_string(),
                &seconds,
            ])?;
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Human-readable summary, failures, convergence tables and non-asserting rows.
pub fn to_markdown(reports: &[SuiteReport]) -> String {
    let mut out = String::from("# Verification report\n\n## Summary\n\n");
    out.push_str(
        "| check | patch | cases | failures | max residual | tolerance | result |\n|---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        let failures = r.failures().count();
        let asserted = r.cases.iter().any(|c| c.status != Status::NotAsserted);
        let verdict = match (asserted, r.pass()) {
            (false, _) => "report",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3e} | {:.1e} | {} |",
            r.check,
            r.patch,
            r.cases.len(),
            failures,
            r.max_residual(),
            r.tolerance,
            verdict
        );
    }

    let failed: Vec<_> = reports.iter().flat_map(|r| r.failures().map(move |c| (r, c))).collect();
    out.push_str("\n## Failures\n\n");
    if failed.is_empty() {
        out.push_str("None.\n");
    } else {
        out.push_str("| check | patch | case | residual | tolerance | detail |\n|---|---|---|---|---|---|\n");
        for (r, c) in failed {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3e} | {:.1e} | {} |",
                r.check, r.patch, c.case, c.residual, c.tolerance, c.detail
            );
        }
    }

    let tables: Vec<_> = reports
        .iter()
        .flat_map(|r| r.convergence.iter().map(move |c| (r, c)))
        .collect();
    if !tables.is_empty() {
        out.push_str("\n## Convergence\n");
        for (r, c) in tables {
            let _ = writeln!(
                out,
                "\n### {} / {} / {}\n\nmonotone: {}\n\n| {} | value | ratio |\n|---|---|---|",
                r.check,
                r.patch,
                c.case,
                if c.monotone { "yes" } else { "no" },
                c.parameter
            );
            let mut prev: Option<f64> = None;
            for &(k, v) in &c.points {
                let ratio = match prev {
                    Some(p) if v > 0.0 => format!("{:.2}", p / v),
                    _ => "-".into(),
                };
                let _ = writeln!(out, "| {k} | {v:.3e} | {ratio} |");
                prev = Some(v);
            }
        }
    }

    let info: Vec<_> = reports
        .iter()
        .flat_map(|r| {
            r.cases
                .iter()
                .filter(|c| c.status == Status::NotAsserted)
                .map(move |c| (r, c))
        })
        .collect();
    if !info.is_empty() {
        out.push_str("\n## Not asserted\n\n| check | patch | case | value | detail |\n|---|---|---|---|---|\n");
        for (r, c) in info {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3e} | {} |",
                r.check, r.patch, c.case, c.residual, c.detail
            );
        }
    }
    out
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `results.csv` and `report.md` into `dir`; returns their paths.
pub fn write_reports(dir: &Path, reports: &[SuiteReport], timings: bool) -> std::io::Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(CSV_NAME);
    let md_path = dir.join(MARKDOWN_NAME);
    let bytes = to_csv(reports, timings).map_err(std::io::Error::other)?;
    write_atomic(&csv_path, &bytes)?;
    write_atomic(&md_path, to_markdown(reports).as_bytes())?;
    Ok((csv_path, md_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lipbound_core::{CaseResult, Convergence};

    fn sample() -> Vec<SuiteReport> {
        let mut r = SuiteReport::new("ibp-boundary", "flat", 1e-8);
        r.push(CaseResult::asserted("a", 0.25, 0.5, 2, 12));
        r.push(CaseResult::informational("b", 0.5, 1, 12).with_detail("ladder"));
        r.push(CaseResult::asserted("c, quoted", 1.0, 0.5, 2, 12));
        r.convergence
            .push(Convergence::new("a", "refinement", vec![(0, 1e-4), (1, 1e-6)]));
        r.seconds = 0.75;
        vec![r]
    }

    #[test]
    fn numbers_have_seventeen_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(f64::NAN), "nan");
        assert_eq!(format_number(f64::INFINITY), "inf");
        assert_eq!(format_number(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_rows_and_timings() {
        let text = String::from_utf8(to_csv(&sample(), false).unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with(
            "ibp-boundary,flat,a,2.5000000000000000e-1,5.0000000000000000e-1,true,2,12,0.0000000000000000e0"
        ));
        assert!(lines[2].contains(",nan,na,"));
        assert!(lines[3].contains("\"c, quoted\""));
        assert!(!text.contains('\r'));
        let timed = String::from_utf8(to_csv(&sample(), true).unwrap()).unwrap();
        assert!(timed.lines().nth(1).unwrap().ends_with("7.5000000000000000e-1"));
    }

    #[test]
    fn markdown_sections() {
        let md = to_markdown(&sample());
        assert!(md.contains("## Failures") && md.contains("c, quoted"));
        assert!(md.contains("monotone: yes"));
        assert!(md.contains("## Not asserted"));
        assert!(md.contains("| ibp-boundary | flat | 3 | 1 |"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}
