use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_lengths(rows: usize, clusters: &[usize], labels: &[usize]) -> Result<()> {
    if clusters.len() != rows || labels.len() != rows {
        return Err(Error::Contract(format!(
            "export: {rows} rows, {} clusters, {} labels",
            clusters.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// CSV with header `id,<p>0,...,<p>{D-1},cluster,label`; values use the
/// shortest representation that round-trips.
fn matrix_csv<T: Element>(m: &Tensor<T>, columns: &[String], clusters: &[usize], labels: &[usize]) -> Result<String> {
    if m.rank() != 2 || m.row_len() != columns.len() {
        return Err(Error::dim(format!("export: matrix {:?} vs {} columns", m.shape(), columns.len())));
    }
    check_lengths(m.rows(), clusters, labels)?;
    let mut out = String::from("id,");
    for c in columns {
        out.push_str(c);
        out.push(',');
    }
    out.push_str("cluster,label\n");
    for i in 0..m.rows() {
        let _ = write!(out, "{i}");
        for v in m.row(i) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", clusters[i], labels[i]);
    }
    Ok(out)
}

pub fn embeddings_csv(e: &Tensor<f32>, clusters: &[usize], labels: &[usize]) -> Result<String> {
    let columns: Vec<String> = (0..e.row_len()).map(|j| format!("z{j}")).collect();
    matrix_csv(e, &columns, clusters, labels)
}

/// `id,x,y,cluster,label`.
pub fn tsne_csv(points: &Tensor<f64>, clusters: &[usize], labels: &[usize]) -> Result<String> {
    matrix_csv(points, &["x".to_string(), "y".to_string()], clusters, labels)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn export_embeddings_csv(e: &Tensor<f32>, clusters: &[usize], labels: &[usize], path: &Path) -> Result<()> {
    write_file(path, &embeddings_csv(e, clusters, labels)?)
}

/// Parsed form of an export: the value matrix plus the two id columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExport<T: Element> {
    pub values: Tensor<T>,
    pub clusters: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn parse_export_csv<T: Element + std::str::FromStr>(text: &str) -> Result<ParsedExport<T>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.len() < 3 || header[0] != "id" || header[header.len() - 2..] != ["cluster", "label"] {
        return Err(Error::Contract("export: unexpected CSV header".into()));
    }
    let d = header.len() - 3;
    let bad = |i: usize| Error::Contract(format!("export: malformed data row {i}"));
    let (mut data, mut clusters, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != d + 3 || f[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(i));
        }
        for v in &f[1..=d] {
            data.push(v.parse::<T>().map_err(|_| bad(i))?);
        }
        clusters.push(f[d + 1].parse().map_err(|_| bad(i))?);
        labels.push(f[d + 2].parse().map_err(|_| bad(i))?);
    }
    Ok(ParsedExport {
        values: Tensor::new(&[clusters.len(), d], data)?,
        clusters,
        labels,
    })
}
