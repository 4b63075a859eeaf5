//! Embedding/label CSV and GMT readers and writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{EmbeddingTable, GenePool, LabelTable, PathwayDb};
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_cell(path: &Path, line: usize, column: usize, cell: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: format!("non-finite value `{v}`"),
        }),
        Err(e) => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: format!("`{cell}`: {e}"),
        }),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(file))
}

/// Reads an embedding CSV with header `gene_id,f0,...,f{d-1}`.
/// Columns are 1-based in error messages.
pub fn load_embeddings(path: impl AsRef<Path>, modality_name: &str) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("gene_id") || header.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: "expected header `gene_id,f0,...`".into(),
        });
    }
    let dim = header.len() - 1;
    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                found: record.len(),
                expected: dim + 1,
            });
        }
        let id = record[0].trim().to_string();
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(col, cell)| parse_cell(path, line, col + 1, cell))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(EmbeddingTable {
        modality: modality_name.to_string(),
        dim,
        rows,
    })
}

/// Reads a label CSV with header `gene_id,value`.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelTable> {
    let table = load_embeddings(path.as_ref(), "labels")?;
    if table.dim != 1 {
        return Err(Error::Parse {
            path: path.as_ref().to_path_buf(),
            line: 1,
            column: 1,
            message: format!("label file must have 2 columns, found {}", table.dim + 1),
        });
    }
    Ok(table.rows.into_iter().map(|(id, v)| (id, v[0])).collect())
}

/// Reads a GMT file: `name<TAB>description<TAB>gene...` per line.
pub fn parse_gmt(path: impl AsRef<Path>) -> Result<PathwayDb> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut pathways = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let genes: BTreeSet<String> = fields
            .iter()
            .skip(2)
            .map(|g| g.trim())
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        if fields.len() < 3 || genes.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: fields.len(),
                message: "GMT line needs a name, a description and at least one gene".into(),
            });
        }
        let name = fields[0].trim().to_string();
        if pathways.insert(name.clone(), genes).is_some() {
            return Err(Error::DuplicatePathway(name));
        }
    }
    Ok(PathwayDb {
        pathways,
        universe_hint: None,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn write_embeddings(path: impl AsRef<Path>, pool: &GenePool, modality: &str) -> Result<()> {
    let path = path.as_ref();
    let m = pool
        .modality(modality)
        .ok_or_else(|| Error::UnknownModality(modality.to_string()))?;
    let mut w = create(path)?;
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("f{j}")).collect();
    let mut out = format!("gene_id,{}\n", header.join(","));
    for (i, id) in pool.ids().iter().enumerate() {
        out.push_str(id);
        for v in m.row(i).iter() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_labels(path: impl AsRef<Path>, pool: &GenePool) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut out = String::from("gene_id,value\n");
    for (id, v) in pool.ids().iter().zip(pool.true_labels()) {
        out.push_str(&format!("{id},{v}\n"));
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_gmt(path: impl AsRef<Path>, db: &PathwayDb) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (name, genes) in &db.pathways {
        let genes: Vec<&str> = genes.iter().map(String::as_str).collect();
        writeln!(w, "{name}\t-\t{}", genes.join("\t")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
