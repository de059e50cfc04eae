//! Delimited-text and JSON file formats for cities and datasets.
//!
//! A city directory holds `grid.json`, `demand.csv`, `roads.csv` and
//! `poi.csv`, plus `graphs.json` once `build-graphs` has run. A dataset
//! directory holds `source/` and `target/` city directories and, when it was
//! generated, the `synth.json` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sfmgtl_core::datasets::{DemandSeries, HourStamp, SynthConfig, SyntheticCity};
use sfmgtl_core::urban_graphs::{poi_graph, proximity_graph, road_graph, GridSpec, MultiViewGraph, RoadSegment};
use sfmgtl_core::Mat;

use crate::error::{Error, IoContext, Result};

pub const DEMAND_FILE: &str = "demand.csv";
pub const ROADS_FILE: &str = "roads.csv";
pub const POI_FILE: &str = "poi.csv";
pub const GRID_FILE: &str = "grid.json";
pub const GRAPHS_FILE: &str = "graphs.json";
pub const SIDECAR_FILE: &str = "synth.json";

/// Demand columns after `timestamp,cell_id`.
pub const DEMAND_FEATURES: [&str; 2] = ["pickup", "dropoff"];

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S"];

pub fn format_hour(t: HourStamp) -> String {
    DateTime::from_timestamp(t * 3600, 0)
        .expect("hour stamp within chrono's range")
        .format("%Y-%m-%dT%H:%M")
        .to_string()
}

/// Parses an on-the-hour UTC timestamp.
pub fn parse_hour(s: &str) -> Result<HourStamp> {
    let s = s.trim();
    let dt = TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| Error::invalid(format!("unrecognised timestamp '{s}' (expected YYYY-MM-DDTHH:MM)")))?;
    if dt.minute() != 0 || dt.second() != 0 {
        return Err(Error::invalid(format!("timestamp '{s}' is not on the hour")));
    }
    Ok(dt.and_utc().timestamp().div_euclid(3600))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Runtime(format!("{}: {e}", path.display())),
        _ => Error::invalid(format!("{}: {e}", path.display())),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).at(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).at(path)?;
    Ok(csv::Writer::from_writer(file))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::invalid(format!(
            "{}: header {:?} should be {}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected.join(",")
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DemandRow {
    timestamp: String,
    cell_id: usize,
    pickup: f64,
    dropoff: f64,
}

/// One row per cell-hour, time-major.
pub fn write_demand(path: &Path, series: &DemandSeries) -> Result<()> {
    if series.num_features() != DEMAND_FEATURES.len() {
        return Err(Error::invalid(format!("demand files carry 2 features, series has {}", series.num_features())));
    }
    let mut w = writer(path)?;
    for (t, &stamp) in series.timestamps().iter().enumerate() {
        let timestamp = format_hour(stamp);
        for cell in 0..series.num_nodes() {
            let row = DemandRow { timestamp: timestamp.clone(), cell_id: cell, pickup: series.get(t, cell, 0), dropoff: series.get(t, cell, 1) };
            w.serialize(row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().at(path)
}

/// Reads a demand file for a city of `num_nodes` cells. The series spans
/// the first to the last timestamp present; absent cell-hours are zero.
pub fn read_demand(path: &Path, num_nodes: usize) -> Result<DemandSeries> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["timestamp", "cell_id", "pickup", "dropoff"])?;
    let mut rows: BTreeMap<(HourStamp, usize), [f64; 2]> = BTreeMap::new();
    for (line, rec) in rdr.deserialize::<DemandRow>().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let t = parse_hour(&rec.timestamp).map_err(|e| Error::invalid(format!("{} row {}: {e}", path.display(), line + 1)))?;
        if rec.cell_id >= num_nodes {
            return Err(Error::invalid(format!("{} row {}: cell {} outside a grid of {num_nodes}", path.display(), line + 1, rec.cell_id)));
        }
        if rows.insert((t, rec.cell_id), [rec.pickup, rec.dropoff]).is_some() {
            return Err(Error::invalid(format!("{} row {}: duplicate cell-hour", path.display(), line + 1)));
        }
    }
    let (first, last) = match (rows.keys().next(), rows.keys().next_back()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::invalid(format!("{}: no demand rows", path.display()))),
    };
    let steps = (last - first + 1) as usize;
    let mut series = DemandSeries::zeros(num_nodes, 2, first, steps);
    for ((t, cell), v) in rows {
        for (k, x) in v.into_iter().enumerate() {
            series.set((t - first) as usize, cell, k, x);
        }
    }
    DemandSeries::new(num_nodes, 2, series.timestamps().to_vec(), series.values().to_vec())
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct RoadRow {
    cell_i: usize,
    cell_j: usize,
    highway_id: String,
}

pub fn write_roads<Id: ToString>(path: &Path, segments: &[RoadSegment<Id>]) -> Result<()> {
    let mut w = writer(path)?;
    for s in segments {
        w.serialize(RoadRow { cell_i: s.cell_i, cell_j: s.cell_j, highway_id: s.highway.to_string() })
            .map_err(|e| csv_err(path, e))?;
    }
    if segments.is_empty() {
        w.write_record(["cell_i", "cell_j", "highway_id"]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_roads(path: &Path) -> Result<Vec<RoadSegment<String>>> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["cell_i", "cell_j", "highway_id"])?;
    rdr.deserialize::<RoadRow>()
        .map(|r| {
            let r = r.map_err(|e| csv_err(path, e))?;
            Ok(RoadSegment { cell_i: r.cell_i, cell_j: r.cell_j, highway: r.highway_id })
        })
        .collect()
}

/// `cell_id,cat_1,…,cat_K`, one row per cell.
pub fn write_poi(path: &Path, counts: &Mat) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend((1..=counts.cols()).map(|k| format!("cat_{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..counts.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(counts.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

/// Reads POI counts for `num_nodes` cells; cells without a row get zeros.
pub fn read_poi(path: &Path, num_nodes: usize) -> Result<Mat> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "cell_id" {
        return Err(Error::invalid(format!("{}: header must be cell_id,cat_1,...,cat_K", path.display())));
    }
    let k = header.len() - 1;
    let mut m = Mat::zeros(num_nodes, k);
    let mut seen = vec![false; num_nodes];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::invalid(format!("{} row {}: {what}", path.display(), line + 1));
        let cell: usize = rec[0].parse().map_err(|_| bad("cell_id is not an index"))?;
        if cell >= num_nodes {
            return Err(bad(&format!("cell {cell} outside a grid of {num_nodes}")));
        }
        if std::mem::replace(&mut seen[cell], true) {
            return Err(bad("duplicate cell"));
        }
        for j in 0..k {
            m[(cell, j)] = rec[j + 1].parse().map_err(|_| bad("count is not a number"))?;
        }
    }
    Ok(m)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Generator record written next to synthetic datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub generator: String,
    pub config: SynthConfig,
}

pub fn write_city(dir: &Path, city: &SyntheticCity) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    write_json(&dir.join(GRID_FILE), &city.graph.grid)?;
    write_demand(&dir.join(DEMAND_FILE), &city.demand)?;
    write_roads(&dir.join(ROADS_FILE), &city.road_segments)?;
    write_poi(&dir.join(POI_FILE), &city.poi_counts)
}

/// Builds the three views from the city's grid, road and POI files.
pub fn build_city_graph(dir: &Path) -> Result<MultiViewGraph> {
    let grid: GridSpec = read_json(&dir.join(GRID_FILE))?;
    let roads = read_roads(&dir.join(ROADS_FILE))?;
    let poi = read_poi(&dir.join(POI_FILE), grid.num_cells())?;
    let views = vec![proximity_graph(&grid), road_graph(&roads, &grid)?, poi_graph(&poi)?];
    Ok(MultiViewGraph::new(grid, views)?)
}

/// Demand and graph of one city; prebuilt `graphs.json` wins over the raw files.
pub fn load_city(dir: &Path) -> Result<(DemandSeries, MultiViewGraph)> {
    let prebuilt = dir.join(GRAPHS_FILE);
    let graph = if prebuilt.exists() {
        let g: MultiViewGraph = read_json(&prebuilt)?;
        MultiViewGraph::new(g.grid, g.views)?
    } else {
        build_city_graph(dir)?
    };
    let demand = read_demand(&dir.join(DEMAND_FILE), graph.num_nodes())?;
    Ok((demand, graph))
}

/// Dataset paths.
pub fn source_dir(data: &Path) -> std::path::PathBuf {
    data.join("source")
}

pub fn target_dir(data: &Path) -> std::path::PathBuf {
    data.join("target")
}
