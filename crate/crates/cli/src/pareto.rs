//! Merge run reports into one plot-ready table.

use std::fs;
use std::path::Path;

use pssnet::trainer::REPORT_HEADER;
use pssnet::Error;

pub const PARETO_HEADER: &str = "method,constraint_kind,target,consumption,accuracy,widths,resolution";

struct Row {
    method: String,
    consumption: Option<f64>,
    line: String,
}

fn read_report(label: &str, path: &Path) -> pssnet::Result<Vec<Row>> {
    const WHAT: &str = "report";
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Parse {
            what: WHAT,
            line: 1,
            msg: format!("expected header `{REPORT_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                what: WHAT,
                line: i + 2,
                msg: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let consumption = match fields[2] {
            "-" => None,
            v => Some(v.parse::<f64>().map_err(|e| Error::Parse {
                what: WHAT,
                line: i + 2,
                msg: format!("consumption `{v}`: {e}"),
            })?),
        };
        rows.push(Row {
            method: label.to_string(),
            consumption,
            line: format!("{label},{line}"),
        });
    }
    Ok(rows)
}

/// Rows sorted by consumption (absent rows last), then by method label.
pub fn merge(reports: &[String]) -> pssnet::Result<String> {
    let mut rows = Vec::new();
    for spec in reports {
        let (label, path) = spec
            .split_once('=')
            .filter(|(l, p)| !l.is_empty() && !p.is_empty() && !l.contains(','))
            .ok_or_else(|| Error::Config(format!("report `{spec}` is not label=path")))?;
        rows.extend(read_report(label, Path::new(path))?);
    }
    rows.sort_by(|a, b| match (a.consumption, b.consumption) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.method.cmp(&b.method)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.method.cmp(&b.method),
    });
    let mut out = format!("{PARETO_HEADER}\n");
    for r in rows {
        out.push_str(&r.line);
        out.push('\n');
    }
    Ok(out)
}

pub fn export(reports: &[String], out: Option<&Path>) -> pssnet::Result<()> {
    let merged = merge(reports)?;
    match out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, merged)?;
        }
        None => print!("{merged}"),
    }
    Ok(())
}
