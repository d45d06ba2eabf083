//! Observation CSV files.
//!
//! Columns: `run_id`, `n`, then `x1..xJ` and `xv1..xvNv` (sphere) or
//! `a1..aJ1` and `b1..bJ2` (conjoiner). One row per observation; rows that
//! share a `run_id` are repeat readings of the same configuration. Lines
//! starting with `#` are ignored.

use std::collections::HashMap;
use std::path::Path;

use fluxcal::{Layout, Observation, RunDesign};

use crate::config::ModeArg;
use crate::error::{input, CliError};
use crate::output::{fmt_f64, Provenance, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub design: RunDesign,
    pub observations: Vec<Observation>,
    /// `run_id` of each design row.
    pub run_ids: Vec<u64>,
}

impl DataSet {
    pub fn observation_run_ids(&self) -> Vec<u64> {
        self.observations.iter().map(|o| self.run_ids[o.run_index]).collect()
    }
}

fn prefixes(mode: ModeArg) -> (&'static str, &'static str) {
    match mode {
        ModeArg::Sphere => ("x", "xv"),
        ModeArg::Conjoiner => ("a", "b"),
    }
}

/// Index of `<prefix><k>` columns, `k = 1..`, checked to be contiguous.
fn indexed_columns(header: &[String], prefix: &str, required: bool) -> Result<Vec<usize>, CliError> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(col, name)| {
            let rest = name.strip_prefix(prefix)?;
            let k: usize = rest.parse().ok()?;
            (!rest.starts_with('0') && k >= 1).then_some((k, col))
        })
        .collect();
    found.sort_unstable();
    let count = found.last().map_or(0, |&(k, _)| k);
    if count == 0 && required {
        return Err(CliError::MissingColumn(format!("{prefix}1")));
    }
    let mut cols = Vec::with_capacity(count);
    for k in 1..=count {
        match found.iter().filter(|&&(kk, _)| kk == k).count() {
            0 => return Err(CliError::MissingColumn(format!("{prefix}{k}"))),
            1 => cols.push(found.iter().find(|&&(kk, _)| kk == k).unwrap().1),
            _ => return input(format!("duplicate column `{prefix}{k}`")),
        }
    }
    Ok(cols)
}

fn column(header: &[String], name: &str) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::MissingColumn(name.to_string()))
}

fn indicator(value: &str, line: u64, name: &str) -> Result<u8, CliError> {
    match value {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => input(format!("line {line}: column `{name}` must be 0 or 1, got `{value}`")),
    }
}

pub fn read_data(path: &Path, mode: ModeArg) -> Result<DataSet, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    let run_col = column(&header, "run_id")?;
    let n_col = column(&header, "n")?;
    let (p1, p2) = prefixes(mode);
    let first = indexed_columns(&header, p1, true)?;
    let second = indexed_columns(&header, p2, mode == ModeArg::Conjoiner)?;
    let known: Vec<usize> = [run_col, n_col].iter().chain(&first).chain(&second).copied().collect();
    if let Some(extra) = (0..header.len()).find(|c| !known.contains(c)) {
        return input(format!("unexpected column `{}` in {:?} mode", header[extra], mode));
    }

    let layout = match mode {
        ModeArg::Sphere => Layout::Sphere {
            lamps: first.len(),
            apertures: second.len(),
        },
        ModeArg::Conjoiner => Layout::Conjoiner {
            beam1: first.len(),
            beam2: second.len(),
        },
    };

    let mut rows = Vec::new();
    let mut run_ids = Vec::new();
    let mut index_of: HashMap<u64, (usize, Vec<u8>, Vec<u8>)> = HashMap::new();
    let mut observations = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let run_id: u64 = record[run_col]
            .parse()
            .map_err(|_| CliError::Input(format!("line {line}: run_id `{}` is not an integer", &record[run_col])))?;
        let n: f64 = record[n_col]
            .parse()
            .map_err(|_| CliError::Input(format!("line {line}: reading `{}` is not a number", &record[n_col])))?;
        if !n.is_finite() {
            return input(format!("line {line}: reading is not finite"));
        }
        let x1 = first
            .iter()
            .map(|&c| indicator(&record[c], line, &header[c]))
            .collect::<Result<Vec<u8>, _>>()?;
        let x2 = second
            .iter()
            .map(|&c| indicator(&record[c], line, &header[c]))
            .collect::<Result<Vec<u8>, _>>()?;
        let run_index = match index_of.get(&run_id) {
            Some((i, a, b)) => {
                if *a != x1 || *b != x2 {
                    return input(format!("line {line}: run_id {run_id} repeats with different indicators"));
                }
                *i
            }
            None => {
                let row = layout
                    .row_from_indicators(&x1, &x2)
                    .map_err(|e| CliError::Input(format!("line {line}: {e}")))?;
                rows.push(row);
                run_ids.push(run_id);
                index_of.insert(run_id, (rows.len() - 1, x1, x2));
                rows.len() - 1
            }
        };
        observations.push(Observation { run_index, n });
    }
    if observations.is_empty() {
        return input(format!("{}: no observations", path.display()));
    }
    let design = RunDesign::new(layout, rows)?;
    Ok(DataSet {
        design,
        observations,
        run_ids,
    })
}

/// Writes observations with `run_id = design row + 1`.
pub fn write_data(
    path: &Path,
    design: &RunDesign,
    observations: &[Observation],
    provenance: &Provenance,
) -> Result<(), CliError> {
    let (p1, p2, n1, n2) = match design.layout {
        Layout::Sphere { lamps, apertures } => ("x", "xv", lamps, apertures),
        Layout::Conjoiner { beam1, beam2 } => ("a", "b", beam1, beam2),
    };
    let header = ["run_id".to_string(), "n".to_string()]
        .into_iter()
        .chain((1..=n1).map(|k| format!("{p1}{k}")))
        .chain((1..=n2).map(|k| format!("{p2}{k}")));
    let mut table = Table::new(header);
    for o in observations {
        let (a, b) = design.layout.indicators(&design.rows[o.run_index]);
        let mut row = vec![(o.run_index + 1).to_string(), fmt_f64(o.n)];
        row.extend(a.iter().chain(&b).map(|v| v.to_string()));
        table.push(row);
    }
    table.write(path, provenance)
}
