//! Ride-request ingestion: grid zoning, windowed OD counts and centroid detour samples.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::domain::Rect;
use crate::error::{FlexError, Result};
use crate::stochastic::Distribution;

/// One historical request, coordinates in projected meters, timestamp in seconds.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct RequestRecord {
    pub origin_x: f64,
    pub origin_y: f64,
    pub dest_x: f64,
    pub dest_y: f64,
    pub timestamp: f64,
    pub passengers: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub area: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn zones(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major cell of a point; points on the outer edge fall into the last cell.
    pub fn cell(&self, x: f64, y: f64) -> Option<usize> {
        if !self.area.contains(x, y) {
            return None;
        }
        let fx = (x - self.area.x_min) / (self.area.x_max - self.area.x_min);
        let fy = (y - self.area.y_min) / (self.area.y_max - self.area.y_min);
        let cx = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let cy = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some(cy * self.nx + cx)
    }

    pub fn rect(&self, zone: usize) -> Rect {
        let (cx, cy) = (zone % self.nx, zone / self.nx);
        let w = (self.area.x_max - self.area.x_min) / self.nx as f64;
        let h = (self.area.y_max - self.area.y_min) / self.ny as f64;
        Rect {
            x_min: self.area.x_min + cx as f64 * w,
            y_min: self.area.y_min + cy as f64 * h,
            x_max: self.area.x_min + (cx + 1) as f64 * w,
            y_max: self.area.y_min + (cy + 1) as f64 * h,
        }
    }

    /// Zone labels: letters while they last, `Z<n>` beyond.
    pub fn label(&self, zone: usize) -> String {
        if self.zones() <= 26 {
            ((b'A' + zone as u8) as char).to_string()
        } else {
            format!("Z{zone}")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub window_minutes: f64,
    /// Day indices (floor(timestamp / 86400)) to keep; empty keeps all.
    pub days: Vec<i64>,
    /// Multiplier applied to window counts before the empirical law is built.
    pub scale: f64,
    pub detour_per_meter: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { window_minutes: 15.0, days: Vec::new(), scale: 1.0, detour_per_meter: 0.003 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OdDemand {
    pub origin: String,
    pub dest: String,
    pub passengers: u32,
    /// Requests per observed window, in window order.
    pub counts: Vec<u32>,
    pub volume: Distribution,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestResult {
    pub parsed: usize,
    pub kept: usize,
    pub dropped_intra_zone: usize,
    pub dropped_out_of_bounds: usize,
    pub dropped_by_day: usize,
    pub windows: usize,
    pub zones: Vec<String>,
    pub zone_rects: Vec<Rect>,
    /// Normalizer of the proximity reduction rule: the zone diagonal.
    pub max_distance: f64,
    pub demand: Vec<OdDemand>,
    /// Centroid-distance detour times of every pickup and drop-off, per zone.
    pub detour_samples: Vec<Vec<f64>>,
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RequestRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<RequestRecord>() {
        let rec = rec.map_err(|e| FlexError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = out.len() + 2;
        let finite = [rec.origin_x, rec.origin_y, rec.dest_x, rec.dest_y, rec.timestamp].iter().all(|v| v.is_finite());
        if !finite {
            return Err(FlexError::Parse { line, msg: "non-finite coordinate or timestamp".into() });
        }
        if rec.passengers == 0 {
            return Err(FlexError::Parse { line, msg: "passengers must be at least 1".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

fn empirical(counts: &[u32]) -> Distribution {
    let mut tally: BTreeMap<u32, f64> = BTreeMap::new();
    for &c in counts {
        *tally.entry(c).or_insert(0.0) += 1.0;
    }
    let n = counts.len().max(1) as f64;
    Distribution::Empirical {
        values: tally.keys().map(|&k| k as f64).collect(),
        weights: tally.values().map(|w| w / n).collect(),
    }
}

/// Zones, windowed OD volumes by party size, and detour samples from request records.
pub fn ingest(records: &[RequestRecord], grid: &GridSpec, opts: &IngestOptions) -> Result<IngestResult> {
    if grid.nx == 0 || grid.ny == 0 || grid.area.is_degenerate() {
        return Err(FlexError::InvalidInstance("grid needs positive cells and area".into()));
    }
    if !(opts.window_minutes > 0.0) || !(opts.scale > 0.0) {
        return Err(FlexError::InvalidInstance("window and scale must be positive".into()));
    }
    let nz = grid.zones();
    let rects: Vec<Rect> = (0..nz).map(|z| grid.rect(z)).collect();
    let window_s = opts.window_minutes * 60.0;
    let (mut out_of_bounds, mut intra, mut by_day) = (0, 0, 0);
    let mut samples = vec![Vec::new(); nz];
    let mut windows: BTreeSet<i64> = BTreeSet::new();
    let mut hits: BTreeMap<(usize, usize, u32), BTreeMap<i64, u32>> = BTreeMap::new();
    for r in records {
        let day = (r.timestamp / 86_400.0).floor() as i64;
        if !opts.days.is_empty() && !opts.days.contains(&day) {
            by_day += 1;
            continue;
        }
        let (Some(o), Some(d)) = (grid.cell(r.origin_x, r.origin_y), grid.cell(r.dest_x, r.dest_y)) else {
            out_of_bounds += 1;
            continue;
        };
        let w = (r.timestamp / window_s).floor() as i64;
        windows.insert(w);
        if o == d {
            intra += 1;
            continue;
        }
        *hits.entry((o, d, r.passengers)).or_default().entry(w).or_insert(0) += 1;
        for (z, x, y) in [(o, r.origin_x, r.origin_y), (d, r.dest_x, r.dest_y)] {
            let (cx, cy) = rects[z].centroid();
            samples[z].push(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() * opts.detour_per_meter);
        }
    }
    if out_of_bounds > 0 {
        log::warn!("{out_of_bounds} records outside the grid were dropped");
    }
    let kept = records.len() - out_of_bounds - intra - by_day;
    if kept == 0 {
        log::warn!("no inter-zone records remain; demand is empty");
    }
    let demand = hits
        .into_iter()
        .map(|((o, d, n), per)| {
            let counts: Vec<u32> = windows
                .iter()
                .map(|w| (per.get(w).copied().unwrap_or(0) as f64 * opts.scale).round() as u32)
                .collect();
            OdDemand { origin: grid.label(o), dest: grid.label(d), passengers: n, volume: empirical(&counts), counts }
        })
        .collect();
    Ok(IngestResult {
        parsed: records.len(),
        kept,
        dropped_intra_zone: intra,
        dropped_out_of_bounds: out_of_bounds,
        dropped_by_day: by_day,
        windows: windows.len(),
        zones: (0..nz).map(|z| grid.label(z)).collect(),
        zone_rects: rects.clone(),
        max_distance: rects[0].diagonal(),
        demand,
        detour_samples: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec { area: Rect { x_min: 0.0, y_min: 0.0, x_max: 300.0, y_max: 300.0 }, nx: 3, ny: 3 }
    }

    #[test]
    fn centroid_record_has_zero_detour() {
        let recs = vec![RequestRecord { origin_x: 50.0, origin_y: 50.0, dest_x: 250.0, dest_y: 250.0, timestamp: 0.0, passengers: 1 }];
        let r = ingest(&recs, &grid(), &IngestOptions::default()).unwrap();
        assert_eq!(r.detour_samples[0], vec![0.0]);
        assert_eq!(r.detour_samples[8], vec![0.0]);
        assert_eq!(r.demand.len(), 1);
        assert_eq!((r.demand[0].origin.as_str(), r.demand[0].dest.as_str()), ("A", "I"));
    }

    #[test]
    fn intra_zone_only_gives_empty_demand() {
        let recs = vec![RequestRecord { origin_x: 10.0, origin_y: 10.0, dest_x: 20.0, dest_y: 20.0, timestamp: 0.0, passengers: 1 }];
        let r = ingest(&recs, &grid(), &IngestOptions::default()).unwrap();
        assert!(r.demand.is_empty());
        assert_eq!(r.dropped_intra_zone, 1);
        assert_eq!(r.kept, 0);
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let text = "origin_x,origin_y,dest_x,dest_y,timestamp,passengers\n1,2,3,4,5,1\n1,2,x,4,5,1\n";
        match read_records(text.as_bytes()) {
            Err(FlexError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
