//! Urban graph, adjacency construction and period window layout.
//!
//! The adjacency pipeline for one interval is
//! `gravity_adjacency -> clip_negative -> period_adjacency -> normalize_adjacency`.
//! Regions are vertices with planar coordinates in km; edge weights combine
//! geographic proximity with a gravity-style transition term driven by the
//! intensities observed at that interval.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StuaError};

/// Days averaged into the weekly summary layer.
pub const WEEK_DAYS: usize = 7;

#[derive(Debug, Clone)]
pub struct UrbanGraph {
    region_ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    distances: Array2<f64>,
}

impl UrbanGraph {
    pub fn new(region_ids: Vec<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        if region_ids.len() != coords.len() {
            return Err(StuaError::shape(
                "urban graph",
                region_ids.len(),
                coords.len(),
            ));
        }
        if region_ids.len() < 2 {
            return Err(StuaError::InvalidConfig(format!(
                "urban graph needs at least 2 regions, got {}",
                region_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &region_ids {
            if !seen.insert(id.as_str()) {
                return Err(StuaError::InvalidConfig(format!(
                    "duplicate region id `{id}`"
                )));
            }
        }
        if let Some(pos) = coords
            .iter()
            .position(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(StuaError::InvalidConfig(format!(
                "region `{}` has non-finite coordinates",
                region_ids[pos]
            )));
        }
        let distances = distance_matrix(&coords)?;
        Ok(Self {
            region_ids,
            coords,
            distances,
        })
    }

    pub fn len(&self) -> usize {
        self.region_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_ids.is_empty()
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.distances
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.region_ids.iter().position(|r| r == id)
    }

    /// The `k` nearest other regions of every region, closest first.
    /// Ties break on region index so the result is deterministic.
    pub fn nearest_neighbors(&self, k: usize) -> Vec<Vec<usize>> {
        let n = self.len();
        let k = k.min(n - 1);
        (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| {
                    self.distances[[i, a]]
                        .total_cmp(&self.distances[[i, b]])
                        .then(a.cmp(&b))
                });
                others.truncate(k);
                others
            })
            .collect()
    }

    /// Reads `region_id,x_km,y_km` rows.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for row in reader.deserialize::<RegionRow>() {
            let row = row.map_err(|e| parse_err(path, e))?;
            ids.push(row.region_id);
            coords.push((row.x_km, row.y_km));
        }
        Self::new(ids, coords)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| parse_err(path, e))?;
        for (id, &(x_km, y_km)) in self.region_ids.iter().zip(&self.coords) {
            writer
                .serialize(RegionRow {
                    region_id: id.clone(),
                    x_km,
                    y_km,
                })
                .map_err(|e| parse_err(path, e))?;
        }
        writer.flush().map_err(|e| StuaError::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionRow {
    region_id: String,
    x_km: f64,
    y_km: f64,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> StuaError {
    StuaError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Pairwise Euclidean distances between planar coordinates.
pub fn distance_matrix(coords: &[(f64, f64)]) -> Result<Array2<f64>> {
    let n = coords.len();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            let d = dx.hypot(dy);
            if d == 0.0 {
                return Err(StuaError::DegenerateGeometry(i, j));
            }
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyKind {
    StaticDistance,
    Gravity,
    PeriodAveraged,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub values: Array2<f64>,
    pub kind: AdjacencyKind,
}

impl AdjacencyMatrix {
    pub fn new(values: Array2<f64>, kind: AdjacencyKind) -> Self {
        Self { values, kind }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(Array2::zeros((n, n)), AdjacencyKind::StaticDistance)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Negative gravity entries (when `H_i * H_j < dist`) are floored at 0.
    pub fn clip_negative(mut self) -> Self {
        self.values.mapv_inplace(|v| v.max(0.0));
        self
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..i).all(|j| (self.values[[i, j]] - self.values[[j, i]]).abs() <= tol))
    }
}

/// Static proximity matrix `exp(-dist)` with a zero diagonal.
pub fn distance_adjacency(graph: &UrbanGraph) -> AdjacencyMatrix {
    let mut values = graph.distances().mapv(|d| (-d).exp());
    values.diag_mut().fill(0.0);
    AdjacencyMatrix::new(values, AdjacencyKind::StaticDistance)
}

/// Mobility-involved adjacency for one interval:
/// `A_ij = exp(-d_ij) + rho * ln(max(H_i, floor) * max(H_j, floor) / d_ij)` off the
/// diagonal, zero on it.
pub fn gravity_adjacency(
    graph: &UrbanGraph,
    intensities: &[f64],
    rho: f64,
    flow_floor: f64,
) -> Result<AdjacencyMatrix> {
    let n = graph.len();
    if intensities.len() != n {
        return Err(StuaError::shape("gravity_adjacency", n, intensities.len()));
    }
    let dist = graph.distances();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        let hi = intensities[i].max(flow_floor);
        for j in (i + 1)..n {
            let hj = intensities[j].max(flow_floor);
            let d = dist[[i, j]];
            let a = (-d).exp() + rho * (hi * hj / d).ln();
            values[[i, j]] = a;
            values[[j, i]] = a;
        }
    }
    Ok(AdjacencyMatrix::new(values, AdjacencyKind::Gravity))
}

/// Elementwise mean of the matrices of every interval in a period.
pub fn period_adjacency(adjacencies: &[AdjacencyMatrix]) -> Result<AdjacencyMatrix> {
    let first = adjacencies.first().ok_or(StuaError::EmptyPeriod)?;
    let mut sum = first.values.clone();
    for adj in &adjacencies[1..] {
        if adj.values.dim() != sum.dim() {
            return Err(StuaError::shape(
                "period_adjacency",
                format!("{:?}", sum.dim()),
                format!("{:?}", adj.values.dim()),
            ));
        }
        if adj.kind != first.kind {
            return Err(StuaError::InvalidConfig(format!(
                "period_adjacency mixes {:?} and {:?} matrices",
                first.kind, adj.kind
            )));
        }
        sum += &adj.values;
    }
    sum /= adjacencies.len() as f64;
    Ok(AdjacencyMatrix::new(sum, AdjacencyKind::PeriodAveraged))
}

/// Symmetric normalization `D^-1/2 (A + I) D^-1/2` where `D` is the degree
/// matrix of `A + I`.
pub fn normalize_adjacency(adj: &AdjacencyMatrix) -> Result<AdjacencyMatrix> {
    let n = adj.len();
    let mut looped = adj.values.clone();
    for i in 0..n {
        looped[[i, i]] += 1.0;
    }
    let mut degrees = Vec::with_capacity(n);
    for (row, r) in looped.axis_iter(Axis(0)).enumerate() {
        let degree: f64 = r.sum();
        if degree.is_nan() || degree <= 0.0 {
            return Err(StuaError::DegenerateDegree { row, degree });
        }
        degrees.push(degree);
    }
    // one rounding per entry, symmetric by construction
    for ((i, j), v) in looped.indexed_iter_mut() {
        *v /= (degrees[i] * degrees[j]).sqrt();
    }
    Ok(AdjacencyMatrix::new(looped, AdjacencyKind::Normalized))
}

/// Interval indices of the layered history behind one next-interval target.
///
/// Periods are kept in the order weekly summary, daily 1..q (1 day back
/// first), closeness. Every period has `p` slots; a slot of the weekly layer
/// averages 7 source intervals, every other slot has exactly one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodStack {
    pub last: usize,
    pub p: usize,
    pub q: usize,
    pub intervals_per_day: usize,
    sources: Vec<Vec<Vec<usize>>>,
}

/// Minimum history length (intervals up to and including `T`) for a stack.
pub fn required_history(p: usize, intervals_per_day: usize) -> usize {
    WEEK_DAYS * intervals_per_day + p
}

/// Lays out the closeness, daily and weekly windows ending at interval `last`.
pub fn build_period_stack(
    last: usize,
    p: usize,
    q: usize,
    intervals_per_day: usize,
) -> Result<PeriodStack> {
    if p == 0 || intervals_per_day == 0 {
        return Err(StuaError::InvalidConfig(
            "period length p and intervals_per_day must be positive".into(),
        ));
    }
    if p > intervals_per_day {
        return Err(StuaError::InvalidConfig(format!(
            "period length p={p} exceeds intervals_per_day={intervals_per_day}"
        )));
    }
    if q > WEEK_DAYS {
        return Err(StuaError::InvalidConfig(format!(
            "q={q} daily periods exceed the 7-day history window"
        )));
    }
    let needed = required_history(p, intervals_per_day);
    if last + 1 < needed {
        return Err(StuaError::InsufficientHistory {
            target: last + 1,
            needed,
        });
    }
    let closeness: Vec<usize> = (last + 1 - p..=last).collect();
    let shifted = |days: usize| -> Vec<usize> {
        closeness
            .iter()
            .map(|&t| t - days * intervals_per_day)
            .collect()
    };

    let mut sources = Vec::with_capacity(q + 2);
    let weekly = (0..p)
        .map(|j| {
            (1..=WEEK_DAYS)
                .map(|k| closeness[j] - k * intervals_per_day)
                .collect()
        })
        .collect();
    sources.push(weekly);
    for k in 1..=q {
        sources.push(shifted(k).into_iter().map(|t| vec![t]).collect());
    }
    sources.push(closeness.iter().map(|&t| vec![t]).collect());

    Ok(PeriodStack {
        last,
        p,
        q,
        intervals_per_day,
        sources,
    })
}

impl PeriodStack {
    pub fn period_count(&self) -> usize {
        self.q + 2
    }

    pub fn closeness(&self) -> Vec<usize> {
        self.slot_sources(self.q + 1).map(|s| s[0]).collect()
    }

    /// Daily layer `k` (1-based days back).
    pub fn daily(&self, k: usize) -> Vec<usize> {
        assert!(
            (1..=self.q).contains(&k),
            "daily layer {k} out of 1..={}",
            self.q
        );
        self.slot_sources(k).map(|s| s[0]).collect()
    }

    /// Source intervals of the weekly layer, one 7-element list per slot.
    pub fn weekly_sources(&self) -> &[Vec<usize>] {
        &self.sources[0]
    }

    /// Source intervals behind each slot of period `m`.
    pub fn slot_sources(&self, m: usize) -> impl Iterator<Item = &[usize]> {
        self.sources[m].iter().map(Vec::as_slice)
    }

    /// `period -> slot -> source intervals`.
    pub fn layout(&self) -> &[Vec<Vec<usize>>] {
        &self.sources
    }

    /// Every raw interval index period `m` reads.
    pub fn period_intervals(&self, m: usize) -> Vec<usize> {
        self.sources[m].iter().flatten().copied().collect()
    }

    /// Sorted union of every interval index the stack touches.
    pub fn all_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.sources.iter().flatten().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Gathers slot values from a `T_total x N` tensor into a
    /// `(q+2) x p x N` window, averaging multi-source slots.
    pub fn gather(&self, tensor: &Array2<f64>) -> Array3<f64> {
        let n = tensor.ncols();
        let mut out = Array3::zeros((self.period_count(), self.p, n));
        for (m, period) in self.sources.iter().enumerate() {
            for (j, srcs) in period.iter().enumerate() {
                for &t in srcs {
                    for i in 0..n {
                        out[[m, j, i]] += tensor[[t, i]];
                    }
                }
                let count = srcs.len() as f64;
                for i in 0..n {
                    out[[m, j, i]] /= count;
                }
            }
        }
        out
    }
}
