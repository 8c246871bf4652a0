//! Reading and writing the plain-text formats used by the command line.
//!
//! All tables are comma-separated with a header row:
//!
//! * observations: `location_label,y,lp_mean,phi,weight`
//! * edges: `from,to` (a row with an empty `to` declares an isolated vertex)
//! * blocks: `label,block`
//! * coordinates: `label,lon,lat`

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::json;

use crate::data::{Observation, ObservationTable};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::replicate::{Category, LocationSummary};

fn parse_err(path: &str, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line: line as usize, reason: reason.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Column positions of `names` in the header, by name.
fn columns(rdr: &mut csv::Reader<File>, path: &str, names: &[&str]) -> Result<Vec<usize>> {
    let header = rdr.headers()?.clone();
    names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(n))
                .ok_or_else(|| parse_err(path, 1, format!("missing column `{n}`")))
        })
        .collect()
}

fn field<'a>(rec: &'a csv::StringRecord, col: usize, name: &str, path: &str, line: u64) -> Result<&'a str> {
    rec.get(col).ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))
}

fn number(rec: &csv::StringRecord, col: usize, name: &str, path: &str, line: u64) -> Result<f64> {
    let s = field(rec, col, name, path, line)?;
    s.parse().map_err(|_| parse_err(path, line, format!("`{name}` value `{s}` is not a number")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Edge pairs and every label seen in the edge file.
pub fn read_edges(path: &Path) -> Result<(Vec<(String, String)>, BTreeSet<String>)> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let mut edges = Vec::new();
    let mut labels = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let a = field(&rec, 0, "from", &name, line)?;
        if a.is_empty() {
            return Err(parse_err(&name, line, "empty vertex label"));
        }
        labels.insert(a.to_string());
        match rec.get(1) {
            Some(b) if !b.is_empty() => {
                if a == b {
                    return Err(parse_err(&name, line, format!("self-loop on `{a}`")));
                }
                labels.insert(b.to_string());
                edges.push((a.to_string(), b.to_string()));
            }
            _ => {}
        }
    }
    Ok((edges, labels))
}

pub fn read_blocks(path: &Path) -> Result<Vec<(String, String)>> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        out.push((
            field(&rec, 0, "label", &name, line)?.to_string(),
            field(&rec, 1, "block", &name, line)?.to_string(),
        ));
    }
    Ok(out)
}

pub fn read_coords(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        out.push((
            field(&rec, 0, "label", &name, line)?.to_string(),
            number(&rec, 1, "lon", &name, line)?,
            number(&rec, 2, "lat", &name, line)?,
        ));
    }
    Ok(out)
}

/// Observation rows resolved against `graph`'s vertex labels.
pub fn read_observations(path: &Path, graph: &SpatialGraph) -> Result<ObservationTable> {
    let name = path.display().to_string();
    let mut rdr = reader(path)?;
    let cols = columns(&mut rdr, &name, &["location_label", "y", "lp_mean", "phi", "weight"])?;
    let mut table = ObservationTable::new(graph.len());
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let label = field(&rec, cols[0], "location_label", &name, line)?;
        let location = graph
            .vertex(label)
            .map_err(|_| parse_err(&name, line, format!("unknown location label `{label}`")))?;
        let o = Observation {
            location,
            y: number(&rec, cols[1], "y", &name, line)?,
            lp_mean: number(&rec, cols[2], "lp_mean", &name, line)?,
            phi: number(&rec, cols[3], "phi", &name, line)?,
            weight: number(&rec, cols[4], "weight", &name, line)?,
        };
        table.push(o).map_err(|e| parse_err(&name, line, e.to_string()))?;
    }
    let counts = table.counts_by_location();
    log::info!(
        "read {} observations over {} of {} locations",
        table.len(),
        counts.iter().filter(|&&c| c > 0).count(),
        graph.len()
    );
    Ok(table)
}

/// Everything a command needs about the study region and its data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: ObservationTable,
    pub graph: SpatialGraph,
    /// Per-vertex `(lon, lat)`, when a coordinate file was given.
    pub coords: Option<Vec<(f64, f64)>>,
}

/// Reads the graph (edges, optional blocks and coordinates) and the
/// observations. The vertex universe is every label in the edge file plus
/// every label in the coordinate file.
pub fn ingest(obs: &Path, edges: &Path, blocks: Option<&Path>, coords: Option<&Path>) -> Result<Dataset> {
    let (edge_list, mut labels) = read_edges(edges)?;
    let coord_rows = coords.map(read_coords).transpose()?;
    if let Some(rows) = &coord_rows {
        labels.extend(rows.iter().map(|r| r.0.clone()));
    }
    let mut graph = SpatialGraph::build(&edge_list, labels)?;
    if let Some(b) = blocks {
        graph = graph.with_blocks(&read_blocks(b)?)?;
    }
    let coords = match coord_rows {
        Some(rows) => {
            let by_label: BTreeMap<&str, (f64, f64)> = rows.iter().map(|r| (r.0.as_str(), (r.1, r.2))).collect();
            let v = graph
                .labels()
                .iter()
                .map(|l| by_label.get(l.as_str()).copied().ok_or_else(|| Error::Invalid(format!("no coordinates for `{l}`"))))
                .collect::<Result<Vec<_>>>()?;
            Some(v)
        }
        None => None,
    };
    let table = read_observations(obs, &graph)?;
    Ok(Dataset { table, graph, coords })
}

pub fn write_observations<W: Write>(table: &ObservationTable, labels: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["location_label", "y", "lp_mean", "phi", "weight"])?;
    for i in 0..table.len() {
        let o = table.get(i);
        w.write_record([
            labels[o.location].clone(),
            o.y.to_string(),
            o.lp_mean.to_string(),
            o.phi.to_string(),
            o.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges<W: Write>(graph: &SpatialGraph, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["from", "to"])?;
    for &(i, j) in graph.edges() {
        w.write_record([graph.label(i), graph.label(j)])?;
    }
    for v in 0..graph.len() {
        if graph.neighbors(v).is_empty() {
            w.write_record([graph.label(v), ""])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_blocks<W: Write>(graph: &SpatialGraph, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "block"])?;
    for v in 0..graph.len() {
        if let Some(b) = graph.block_of(v) {
            w.write_record([graph.label(v), graph.block_names()[b].as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_coords<W: Write>(labels: &[String], coords: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "lon", "lat"])?;
    for (l, (x, y)) in labels.iter().zip(coords) {
        w.write_record([l.clone(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `label,alpha` per vertex.
pub fn write_effects<W: Write>(labels: &[String], alpha: &[f64], out: W) -> Result<()> {
    if labels.len() != alpha.len() {
        return Err(Error::Dimension { expected: labels.len(), got: alpha.len() });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "alpha"])?;
    for (l, a) in labels.iter().zip(alpha) {
        w.write_record([l.clone(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

const SUMMARY_COLUMNS: [&str; 10] = [
    "label",
    "mean",
    "sd",
    "q025",
    "q975",
    "category",
    "q25",
    "q75",
    "observed_loss",
    "predicted_loss",
];

pub fn write_summary_csv<W: Write>(summaries: &[LocationSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        w.write_record([
            s.label.clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q025.to_string(),
            s.q975.to_string(),
            s.category.to_string(),
            s.q25.to_string(),
            s.q75.to_string(),
            s.observed_loss.to_string(),
            s.predicted_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<LocationSummary>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let num = |i: usize| number(&rec, i, SUMMARY_COLUMNS[i], "summary", line);
        out.push(LocationSummary {
            label: field(&rec, 0, "label", "summary", line)?.to_string(),
            mean: num(1)?,
            sd: num(2)?,
            q025: num(3)?,
            q975: num(4)?,
            category: field(&rec, 5, "category", "summary", line)?
                .parse::<Category>()
                .map_err(|e| parse_err("summary", line, e.to_string()))?,
            q25: num(6)?,
            q75: num(7)?,
            observed_loss: num(8)?,
            predicted_loss: num(9)?,
        });
    }
    Ok(out)
}

/// GeoJSON FeatureCollection of points carrying the summary properties.
/// `coords` is indexed like `summaries`.
pub fn write_summary_geojson<W: Write>(
    summaries: &[LocationSummary],
    coords: Option<&[(f64, f64)]>,
    mut out: W,
) -> Result<()> {
    let coords = coords.ok_or_else(|| Error::Invalid("GeoJSON output needs a coordinate file".into()))?;
    if coords.len() != summaries.len() {
        return Err(Error::Dimension { expected: summaries.len(), got: coords.len() });
    }
    let features: Vec<_> = summaries
        .iter()
        .zip(coords)
        .map(|(s, &(x, y))| {
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [x, y] },
                "properties": {
                    "label": s.label,
                    "mean": s.mean,
                    "sd": s.sd,
                    "q025": s.q025,
                    "q975": s.q975,
                    "category": s.category.to_string(),
                },
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::Invalid(format!("cannot open {name}: {e}")))?;
    let file = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| parse_err(&name, i as u64 + 1, "expected `key = value`"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(&name, i as u64 + 1, "empty key"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
