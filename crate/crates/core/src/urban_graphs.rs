//! Grid partitioning of a city and the three long-term semantic graphs built
//! over its cells: proximity, road connectivity and POI similarity.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Kilometres per degree of latitude on the fixed spherical earth.
pub const KM_PER_DEG_LAT: f64 = 111.32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_size_km: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Axis-aligned bounding box in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GridSpec {
    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell index for (row, col); row 0 is the southern edge.
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn position(&self, cell: usize) -> (usize, usize) {
        debug_assert!(cell < self.num_cells());
        (cell / self.cols, cell % self.cols)
    }

    /// A grid with the given shape and a nominal 1 km cell at the origin.
    /// Used for synthetic cities where only the topology matters.
    pub fn synthetic(rows: usize, cols: usize) -> Self {
        let deg = 1.0 / KM_PER_DEG_LAT;
        GridSpec {
            lat_min: 0.0,
            lat_max: rows as f64 * deg,
            lon_min: 0.0,
            lon_max: cols as f64 * deg,
            cell_size_km: 1.0,
            rows,
            cols,
        }
    }
}

/// Tolerance absorbing float noise when an extent is an exact multiple of the cell size.
const CEIL_SLACK: f64 = 1e-9;

pub fn build_grid(bbox: BoundingBox, cell_size_km: f64) -> Result<GridSpec> {
    let BoundingBox { lat_min, lat_max, lon_min, lon_max } = bbox;
    let finite = [lat_min, lat_max, lon_min, lon_max, cell_size_km].iter().all(|v| v.is_finite());
    if !finite || lat_max <= lat_min || lon_max <= lon_min || cell_size_km <= 0.0 {
        return Err(Error::invalid(format!("degenerate bounding box {bbox:?} with cell size {cell_size_km} km")));
    }
    let mid_lat = 0.5 * (lat_min + lat_max);
    let ns_km = (lat_max - lat_min) * KM_PER_DEG_LAT;
    let ew_km = (lon_max - lon_min) * KM_PER_DEG_LAT * libm::cos(mid_lat * core::f64::consts::PI / 180.0);
    let rows = libm::ceil(ns_km / cell_size_km - CEIL_SLACK).max(1.0) as usize;
    let cols = libm::ceil(ew_km / cell_size_km - CEIL_SLACK).max(1.0) as usize;
    Ok(GridSpec { lat_min, lat_max, lon_min, lon_max, cell_size_km, rows, cols })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticKind {
    Proximity,
    Road,
    Poi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticGraph {
    pub kind: SemanticKind,
    pub adjacency: Mat,
}

impl SemanticGraph {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewGraph {
    pub grid: GridSpec,
    pub views: Vec<SemanticGraph>,
}

impl MultiViewGraph {
    pub fn new(grid: GridSpec, views: Vec<SemanticGraph>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("a multi-view graph needs at least one view"));
        }
        let n = grid.num_cells();
        for v in &views {
            if v.adjacency.shape() != (n, n) {
                return Err(Error::invalid(format!(
                    "{:?} view is {:?}, grid has {n} cells",
                    v.kind,
                    v.adjacency.shape()
                )));
            }
        }
        Ok(MultiViewGraph { grid, views })
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }
}

/// Moore-neighbourhood (8-connectivity) adjacency.
pub fn proximity_graph(grid: &GridSpec) -> SemanticGraph {
    let n = grid.num_cells();
    let mut a = Mat::zeros(n, n);
    for cell in 0..n {
        let (r, c) = grid.position(cell);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < grid.rows && (nc as usize) < grid.cols {
                    a[(cell, grid.index(nr as usize, nc as usize))] = 1.0;
                }
            }
        }
    }
    SemanticGraph { kind: SemanticKind::Proximity, adjacency: a }
}

/// A road segment joining two cells, tagged with the highway it belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadSegment<Id> {
    pub cell_i: usize,
    pub cell_j: usize,
    pub highway: Id,
}

/// Weight of `(i, j)` is the number of distinct highways with a segment
/// linking the two cells, in either direction.
pub fn road_graph<Id: Ord + Clone>(segments: &[RoadSegment<Id>], grid: &GridSpec) -> Result<SemanticGraph> {
    let n = grid.num_cells();
    let mut seen: BTreeSet<(usize, usize, Id)> = BTreeSet::new();
    for s in segments {
        if s.cell_i >= n || s.cell_j >= n {
            return Err(Error::invalid(format!(
                "road segment ({}, {}) outside grid of {n} cells",
                s.cell_i, s.cell_j
            )));
        }
        if s.cell_i == s.cell_j {
            continue;
        }
        let (lo, hi) = (s.cell_i.min(s.cell_j), s.cell_i.max(s.cell_j));
        seen.insert((lo, hi, s.highway.clone()));
    }
    let mut a = Mat::zeros(n, n);
    for (i, j, _) in &seen {
        a[(*i, *j)] += 1.0;
        a[(*j, *i)] += 1.0;
    }
    Ok(SemanticGraph { kind: SemanticKind::Road, adjacency: a })
}

/// Cosine similarity between per-cell POI category counts (`N×K`).
pub fn poi_graph(poi_counts: &Mat) -> Result<SemanticGraph> {
    if poi_counts.cols() == 0 {
        return Err(Error::invalid("POI matrix needs at least one category"));
    }
    if let Some(v) = poi_counts.as_slice().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("POI counts must be nonnegative, found {v}")));
    }
    let n = poi_counts.rows();
    let norms: Vec<f64> = (0..n).map(|i| libm::sqrt(poi_counts.row(i).iter().map(|v| v * v).sum())).collect();
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = poi_counts.row(i).iter().zip(poi_counts.row(j)).map(|(x, y)| x * y).sum();
            let sim = (dot / (norms[i] * norms[j])).clamp(0.0, 1.0);
            a[(i, j)] = sim;
            a[(j, i)] = sim;
        }
    }
    Ok(SemanticGraph { kind: SemanticKind::Poi, adjacency: a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn degrees(g: &SemanticGraph) -> Vec<f64> {
        g.adjacency.row_sums()
    }

    #[test]
    fn dc_grid_shape() {
        let g = build_grid(BoundingBox { lat_min: 38.80, lat_max: 38.97, lon_min: -77.13, lon_max: -76.93 }, 1.0).unwrap();
        assert!((19..=21).contains(&g.rows), "rows {}", g.rows);
        assert!((17..=20).contains(&g.cols), "cols {}", g.cols);
    }

    #[test]
    fn single_cell_grid() {
        let d = 1.0 / KM_PER_DEG_LAT;
        let g = build_grid(BoundingBox { lat_min: 0.0, lat_max: d, lon_min: 0.0, lon_max: d }, 1.0).unwrap();
        assert_eq!((g.rows, g.cols), (1, 1));
    }

    #[test]
    fn equator_grid_is_five_by_five() {
        // 0.036 deg * 111.32 km/deg = 4.0075 km -> ceil = 5 along both axes (cos 0 = 1).
        let g = build_grid(BoundingBox { lat_min: -0.018, lat_max: 0.018, lon_min: 10.0, lon_max: 10.036 }, 1.0).unwrap();
        assert_eq!((g.rows, g.cols), (5, 5));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let bad = BoundingBox { lat_min: 1.0, lat_max: 1.0, lon_min: 0.0, lon_max: 1.0 };
        assert!(matches!(build_grid(bad, 1.0), Err(Error::InvalidArgument(_))));
        let ok = BoundingBox { lat_min: 0.0, lat_max: 1.0, lon_min: 0.0, lon_max: 1.0 };
        assert!(build_grid(ok, 0.0).is_err());
    }

    #[test]
    fn proximity_degrees() {
        let g = proximity_graph(&GridSpec::synthetic(3, 3));
        let d = degrees(&g);
        assert_eq!(d[4], 8.0);
        assert_eq!(d[0], 3.0);
        assert_eq!(d[1], 5.0);
        let single = proximity_graph(&GridSpec::synthetic(1, 1));
        assert_eq!(single.adjacency.sum(), 0.0);
    }

    #[test]
    fn road_counts_distinct_highways() {
        let grid = GridSpec::synthetic(2, 3);
        let segs = vec![
            RoadSegment { cell_i: 0, cell_j: 1, highway: "H1" },
            RoadSegment { cell_i: 0, cell_j: 1, highway: "H2" },
            RoadSegment { cell_i: 1, cell_j: 0, highway: "H1" },
        ];
        let g = road_graph(&segs, &grid).unwrap();
        assert_eq!(g.adjacency[(0, 1)], 2.0);
        assert_eq!(g.adjacency[(1, 0)], 2.0);
        assert_eq!(g.adjacency.sum(), 4.0);

        let empty: Vec<RoadSegment<&str>> = vec![];
        assert_eq!(road_graph(&empty, &grid).unwrap().adjacency.sum(), 0.0);

        let one = road_graph(&[RoadSegment { cell_i: 2, cell_j: 5, highway: 1u32 }], &grid).unwrap();
        assert_eq!(one.adjacency[(2, 5)], 1.0);
        assert_eq!(one.adjacency[(5, 2)], 1.0);
        assert_eq!(one.adjacency.sum(), 2.0);

        let out = road_graph(&[RoadSegment { cell_i: 2, cell_j: 6, highway: 1u32 }], &grid);
        assert!(matches!(out, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn poi_cosine_cases() {
        let same = poi_graph(&Mat::from_rows(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]])).unwrap();
        assert!((same.adjacency[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(same.adjacency[(0, 0)], 0.0);
        let ortho = poi_graph(&Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(ortho.adjacency[(0, 1)], 0.0);
        let diag = poi_graph(&Mat::from_rows(&[&[1.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((diag.adjacency[(0, 1)] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let zero = poi_graph(&Mat::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(zero.adjacency.sum(), 0.0);
        assert!(poi_graph(&Mat::from_rows(&[&[-1.0, 0.0]])).is_err());
        assert!(poi_graph(&Mat::zeros(3, 0)).is_err());
    }
}
