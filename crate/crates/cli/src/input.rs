//! Edge-list and node-attribute loading.
//!
//! The node file fixes the node set. With an `id` column, edge endpoints are
//! matched against it as strings; without one, endpoints must be the 0-based
//! row numbers.

use std::collections::HashMap;
use std::path::Path;

use netdr::{ComponentGraph, NodeData};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: ComponentGraph,
    pub data: NodeData,
    /// Original id of every dense node, when the node file has an `id` column.
    pub ids: Option<Vec<String>>,
}

fn parse_cell(raw: &str, what: &str, row: usize) -> Result<f64, CliError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("{what} at node row {row} is missing or not a number: `{raw}`")))
}

pub fn load_nodes(path: &Path) -> Result<(NodeData, Option<Vec<String>>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let z_col = find("Z").ok_or_else(|| CliError::Data("node file has no `Z` column".into()))?;
    let y_col = find("Y").ok_or_else(|| CliError::Data("node file has no `Y` column".into()))?;
    let id_col = find("id");
    let cov_cols: Vec<usize> = (0..header.len()).filter(|&c| c != z_col && c != y_col && Some(c) != id_col).collect();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let zv = match rec.get(z_col).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(CliError::Data(format!("treatment at node row {row} is not 0/1: {other:?}"))),
        };
        z.push(zv);
        y.push(parse_cell(rec.get(y_col).unwrap_or(""), "Y", row)?);
        for (k, &c) in cov_cols.iter().enumerate() {
            covs[k].push(parse_cell(rec.get(c).unwrap_or(""), &header[c], row)?);
        }
        if let Some(c) = id_col {
            ids.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    let names = cov_cols.iter().map(|&c| header[c].clone()).collect();
    let data = NodeData::new(names, covs, z, y)?;
    Ok((data, id_col.map(|_| ids)))
}

pub fn load_edges(path: &Path, header: bool, ids: Option<&[String]>, n: usize) -> Result<Vec<(usize, usize)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let lookup: Option<HashMap<&str, usize>> =
        ids.map(|ids| ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect());
    if let (Some(map), Some(ids)) = (&lookup, ids) {
        if map.len() != ids.len() {
            return Err(CliError::Data("duplicate ids in the node file".into()));
        }
    }
    let resolve = |raw: &str, line: usize| -> Result<usize, CliError> {
        let id = match &lookup {
            Some(map) => map.get(raw).copied(),
            None => raw.parse::<usize>().ok().filter(|&v| v < n),
        };
        id.ok_or_else(|| CliError::Data(format!("edge line {line}: unknown node `{raw}`")))
    };
    let mut edges = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(CliError::Data(format!("edge line {line}: expected `src,dst`")));
        }
        edges.push((resolve(&rec[0], line)?, resolve(&rec[1], line)?));
    }
    Ok(edges)
}

pub fn load_dataset(edges: &Path, nodes: &Path, header: bool, drop_isolates: bool) -> Result<Dataset, CliError> {
    let (data, ids) = load_nodes(nodes)?;
    let n = data.n_nodes();
    let edge_list = load_edges(edges, header, ids.as_deref(), n)?;
    let graph = ComponentGraph::load(&edge_list, n)?;
    if !drop_isolates {
        return Ok(Dataset { graph, data, ids });
    }
    let (reduced, kept) = graph.without_isolates();
    let ids = Some(match ids {
        Some(ids) => kept.iter().map(|&k| ids[k].clone()).collect(),
        None => kept.iter().map(|k| k.to_string()).collect(),
    });
    Ok(Dataset { graph: reduced, data: data.subset(&kept), ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn string_ids_and_isolates() {
        let nodes = file("id,Z,Y,x\na,1,2.5,0.1\nb,0,1.0,-0.3\nc,1,0.5,2\nd,0,3,1\n");
        let edges = file("src,dst\nb,a\nc,a\n");
        let ds = load_dataset(edges.path(), nodes.path(), true, false).unwrap();
        assert_eq!(ds.graph.n_components(), 2);
        assert_eq!(ds.graph.neighbors(0), &[1, 2]);
        assert_eq!(ds.data.column("x").unwrap(), &[0.1, -0.3, 2.0, 1.0]);
        let dropped = load_dataset(edges.path(), nodes.path(), true, true).unwrap();
        assert_eq!(dropped.graph.n_nodes(), 3);
        assert_eq!(dropped.ids.unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn bad_inputs_are_data_errors() {
        let nodes = file("Z,Y,x\n1,2.5,0.1\n0,,0.2\n");
        assert!(matches!(load_nodes(nodes.path()), Err(CliError::Data(_))));
        let nodes = file("Z,Y\n2,1\n");
        assert!(matches!(load_nodes(nodes.path()), Err(CliError::Data(_))));
        let nodes = file("Z,Y\n1,1\n0,2\n");
        let edges = file("0,5\n");
        assert!(matches!(load_dataset(edges.path(), nodes.path(), false, false), Err(CliError::Data(_))));
        let edges = file("0,0\n");
        assert!(matches!(load_dataset(edges.path(), nodes.path(), false, false), Err(CliError::Data(_))));
    }
}
