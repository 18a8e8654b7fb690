//! CSV ingest and export.
//!
//! Stream files carry a header row. `y` is required. The base prediction is read from
//! `f` (or `pred`) and defaults to 0. Columns named `group:<label>` form the group
//! indicator vector and `z:<label>` columns form a feature vector. Battle files carry
//! `model_a`, `model_b` and `winner`.

use std::collections::HashMap;
use std::path::Path;

use crate::pipelines::{Battle, StreamRecord};
use crate::{Error, Result};

/// Records read from a stream file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamFile {
    pub records: Vec<StreamRecord>,
    /// Labels of the `group:*` or `z:*` columns, in file order.
    pub labels: Vec<String>,
    /// True when the vector columns are group indicators rather than features.
    pub groups: bool,
    pub warnings: Vec<String>,
}

/// Battles read from a battle file, with model names indexed by first appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BattleFile {
    pub battles: Vec<Battle>,
    pub names: Vec<String>,
}

fn header_error(message: impl Into<String>) -> Error {
    Error::Input {
        row: 0,
        message: message.into(),
    }
}

fn parse_cell(row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Input {
        row,
        message: format!("column `{column}`: cannot parse `{cell}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Input {
            row,
            message: format!("column `{column}`: non-finite value `{cell}`"),
        });
    }
    Ok(v)
}

/// Parse a stream from any reader. Row numbers in errors count data rows from 1.
pub fn read_stream<R: std::io::Read>(input: R) -> Result<StreamFile> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let y_col = find("y").ok_or_else(|| header_error("missing required column `y`"))?;
    let f_col = find("f").or_else(|| find("pred"));
    let key_col = find("key");
    let group_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix("group:").map(|l| (i, l.to_string())))
        .collect();
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix("z:").map(|l| (i, l.to_string())))
        .collect();
    if !group_cols.is_empty() && !feature_cols.is_empty() {
        return Err(header_error("a stream cannot mix `group:*` and `z:*` columns"));
    }
    let groups = !group_cols.is_empty();
    let vector_cols = if groups { group_cols } else { feature_cols };

    let mut out = StreamFile {
        labels: vector_cols.iter().map(|(_, l)| l.clone()).collect(),
        groups,
        ..Default::default()
    };
    if f_col.is_none() {
        out.warnings.push("no `f` or `pred` column; base predictions default to 0".into());
    }
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Input {
            row,
            message: e.to_string(),
        })?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let y = parse_cell(row, "y", cell(y_col))?;
        let f = match f_col {
            Some(c) => parse_cell(row, &headers[c], cell(c))?,
            None => 0.0,
        };
        let z = if vector_cols.is_empty() {
            None
        } else {
            Some(
                vector_cols
                    .iter()
                    .map(|(c, _)| parse_cell(row, &headers[*c], cell(*c)))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
        if groups {
            if let Some(z) = &z {
                if z.iter().any(|v| *v != 0.0 && *v != 1.0) {
                    return Err(Error::Input {
                        row,
                        message: "group columns must hold 0 or 1".into(),
                    });
                }
            }
        }
        out.records.push(StreamRecord {
            key: key_col.map(|c| cell(c).to_string()),
            f,
            y,
            z,
        });
    }
    Ok(out)
}

pub fn read_stream_path(path: &Path) -> Result<StreamFile> {
    read_stream(std::fs::File::open(path)?)
}

/// Write `f, y` and the vector columns under the given prefix (`group` or `z`).
pub fn write_stream<W: std::io::Write>(out: W, records: &[StreamRecord], labels: &[String], prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["f".to_string(), "y".to_string()];
    header.extend(labels.iter().map(|l| format!("{prefix}:{l}")));
    w.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![r.f.to_string(), r.y.to_string()];
        match &r.z {
            Some(z) if z.len() == labels.len() => row.extend(z.iter().map(f64::to_string)),
            None if labels.is_empty() => {}
            _ => {
                return Err(Error::Input {
                    row: i + 1,
                    message: format!("expected {} vector entries", labels.len()),
                })
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse battles; `y = 1` exactly when `winner` names `model_b`.
pub fn read_battles<R: std::io::Read>(input: R) -> Result<BattleFile> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| header_error(format!("missing required column `{name}`")))
    };
    let (ca, cb, cw) = (find("model_a")?, find("model_b")?, find("winner")?);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = BattleFile::default();
    let mut intern = |name: &str, out: &mut BattleFile| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            out.names.push(name.to_string());
            out.names.len() - 1
        })
    };
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Input {
            row,
            message: e.to_string(),
        })?;
        let (a, b, w) = (rec.get(ca).unwrap_or("").trim(), rec.get(cb).unwrap_or("").trim(), rec.get(cw).unwrap_or("").trim());
        if a.is_empty() || b.is_empty() {
            return Err(Error::Input {
                row,
                message: "empty model name".into(),
            });
        }
        if a == b {
            return Err(Error::Input {
                row,
                message: format!("model `{a}` cannot battle itself"),
            });
        }
        if w != a && w != b {
            return Err(Error::Input {
                row,
                message: format!("winner `{w}` is neither `{a}` nor `{b}`"),
            });
        }
        let ia = intern(a, &mut out);
        let ib = intern(b, &mut out);
        out.battles.push(Battle {
            a: ia,
            b: ib,
            y: (w == b) as u8 as f64,
        });
    }
    Ok(out)
}

pub fn read_battles_path(path: &Path) -> Result<BattleFile> {
    read_battles(std::fs::File::open(path)?)
}

/// Write `model_a, model_b, winner`.
pub fn write_battles<W: std::io::Write>(out: W, battles: &[Battle], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model_a", "model_b", "winner"])?;
    for bt in battles {
        let a = &names[bt.a];
        let b = &names[bt.b];
        let winner = if bt.y == 1.0 { b } else { a };
        w.write_record([a, b, winner])?;
    }
    w.flush()?;
    Ok(())
}
