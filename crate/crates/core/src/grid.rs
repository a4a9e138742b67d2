//! City grid partitioning and trajectory-to-grid-path conversion.
//!
//! The bounding box is projected with an equirectangular projection at its
//! mid-latitude and divided into `n x n` equal rectangles. Rows (`x`) run
//! along latitude from the southern edge, columns (`y`) along longitude from
//! the western edge.
//!
//! Cells are half-open: a point lying exactly on an interior boundary belongs
//! to the higher-index cell, and points on the northern/eastern edge of the
//! box are clamped into the last row/column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

const M_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
    /// Unix seconds.
    pub t: f64,
}

impl GpsPoint {
    pub fn new(lat: f64, lon: f64, t: f64) -> Self {
        Self { lat, lon, t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Self {
        Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }

    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.min_lat + self.max_lat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCell {
    /// Row, counted from the southern edge.
    pub x: usize,
    /// Column, counted from the western edge.
    pub y: usize,
}

impl GridCell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(&self, other: &GridCell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    bbox: BBox,
    n: usize,
    cell_height_m: f64,
    cell_width_m: f64,
}

impl GridSpec {
    /// Builds an `n x n` partition of `bbox`.
    pub fn new(bbox: BBox, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let finite = [bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || bbox.max_lat <= bbox.min_lat || bbox.max_lon <= bbox.min_lon {
            return Err(Error::DegenerateBBox(format!("{bbox:?}")));
        }
        let height_m = (bbox.max_lat - bbox.min_lat) * M_PER_DEG;
        let width_m = (bbox.max_lon - bbox.min_lon) * M_PER_DEG * bbox.mid_lat().to_radians().cos();
        if width_m <= 0.0 {
            return Err(Error::DegenerateBBox(format!("{bbox:?} has no east-west extent")));
        }
        Ok(Self {
            bbox,
            n,
            cell_height_m: height_m / n as f64,
            cell_width_m: width_m / n as f64,
        })
    }

    /// Builds a grid whose south-west corner is `(min_lat, min_lon)` and whose
    /// projected extent is `height_m` (north) by `width_m` (east).
    pub fn from_extent(min_lat: f64, min_lon: f64, height_m: f64, width_m: f64, n: usize) -> Result<Self> {
        let dlat = height_m / M_PER_DEG;
        let mid = min_lat + 0.5 * dlat;
        let dlon = width_m / (M_PER_DEG * mid.to_radians().cos());
        Self::new(BBox::new(min_lat, min_lon, min_lat + dlat, min_lon + dlon), n)
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_height_m(&self) -> f64 {
        self.cell_height_m
    }

    pub fn cell_width_m(&self) -> f64 {
        self.cell_width_m
    }

    pub fn contains(&self, p: &GpsPoint) -> bool {
        self.bbox.contains(p.lat, p.lon)
    }

    /// Continuous grid coordinates in `[0, n] x [0, n]`, one unit per cell.
    pub fn grid_coords(&self, p: &GpsPoint) -> Result<(f64, f64)> {
        if !p.lat.is_finite() || !p.lon.is_finite() || !self.contains(p) {
            return Err(Error::OutOfBounds { lat: p.lat, lon: p.lon });
        }
        let n = self.n as f64;
        let gx = (p.lat - self.bbox.min_lat) / (self.bbox.max_lat - self.bbox.min_lat) * n;
        let gy = (p.lon - self.bbox.min_lon) / (self.bbox.max_lon - self.bbox.min_lon) * n;
        Ok((gx, gy))
    }

    pub fn locate(&self, p: &GpsPoint) -> Result<GridCell> {
        let (gx, gy) = self.grid_coords(p)?;
        Ok(GridCell::new(cell_index(gx, self.n), cell_index(gy, self.n)))
    }

    /// Row-major index of a cell, used to key per-cell tables.
    pub fn cell_id(&self, cell: GridCell) -> Result<usize> {
        self.check(cell)?;
        Ok(cell.x * self.n + cell.y)
    }

    pub fn check(&self, cell: GridCell) -> Result<()> {
        if cell.x >= self.n || cell.y >= self.n {
            return Err(Error::CellOutOfBounds {
                x: cell.x,
                y: cell.y,
                n: self.n,
            });
        }
        Ok(())
    }

    /// Equirectangular distance using this grid's projection.
    pub fn distance_m(&self, a: &GpsPoint, b: &GpsPoint) -> f64 {
        let dn = (b.lat - a.lat) * M_PER_DEG;
        let de = (b.lon - a.lon) * M_PER_DEG * self.bbox.mid_lat().to_radians().cos();
        dn.hypot(de)
    }

    /// Meters covered by a displacement given in grid units.
    fn grid_len_m(&self, dx: f64, dy: f64) -> f64 {
        (dx * self.cell_height_m).hypot(dy * self.cell_width_m)
    }

    /// Centre of a cell as a GPS position (timestamp zero).
    pub fn cell_center(&self, cell: GridCell) -> GpsPoint {
        self.point_at(cell.x as f64 + 0.5, cell.y as f64 + 0.5, 0.0)
    }

    /// Inverse of [`GridSpec::grid_coords`].
    pub fn point_at(&self, gx: f64, gy: f64, t: f64) -> GpsPoint {
        let n = self.n as f64;
        let lat = self.bbox.min_lat + gx / n * (self.bbox.max_lat - self.bbox.min_lat);
        let lon = self.bbox.min_lon + gy / n * (self.bbox.max_lon - self.bbox.min_lon);
        GpsPoint::new(lat.min(self.bbox.max_lat), lon.min(self.bbox.max_lon), t)
    }
}

/// Equirectangular distance at the pair's mean latitude.
pub fn local_distance_m(a: &GpsPoint, b: &GpsPoint) -> f64 {
    let mid = 0.5 * (a.lat + b.lat);
    let dn = (b.lat - a.lat) * M_PER_DEG;
    let de = (b.lon - a.lon) * M_PER_DEG * mid.to_radians().cos();
    dn.hypot(de)
}

fn cell_index(g: f64, n: usize) -> usize {
    let i = g.floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}

/// Every cell crossed by the segment `a -> b` (both in grid units), in
/// traversal order, with the fraction of the segment's parameter range spent
/// inside each cell. Consecutive cells are 8-adjacent; the fractions sum to 1.
pub fn supercover(n: usize, a: (f64, f64), b: (f64, f64)) -> Vec<(GridCell, f64)> {
    let start = GridCell::new(cell_index(a.0, n), cell_index(a.1, n));
    let end = GridCell::new(cell_index(b.0, n), cell_index(b.1, n));
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let step_x: isize = if end.x > start.x { 1 } else if end.x < start.x { -1 } else { 0 };
    let step_y: isize = if end.y > start.y { 1 } else if end.y < start.y { -1 } else { 0 };
    let mut rem_x = start.x.abs_diff(end.x);
    let mut rem_y = start.y.abs_diff(end.y);

    // Parameter at which the traversal leaves the current cell along one axis.
    // Moving down an axis, the boundary coordinate itself still belongs to the
    // current cell, so the exit happens right after it.
    let exit_t = |cur: usize, step: isize, origin: f64, delta: f64| -> f64 {
        let boundary = if step > 0 { cur as f64 + 1.0 } else { cur as f64 };
        (boundary - origin) / delta
    };

    let mut out = Vec::with_capacity(rem_x + rem_y + 1);
    let mut cur = start;
    let mut t = 0.0_f64;
    while rem_x > 0 || rem_y > 0 {
        let tx = if rem_x > 0 { exit_t(cur.x, step_x, a.0, dx) } else { f64::INFINITY };
        let ty = if rem_y > 0 { exit_t(cur.y, step_y, a.1, dy) } else { f64::INFINITY };
        let (move_x, move_y) = if tx < ty {
            (true, false)
        } else if ty < tx {
            (false, true)
        } else if step_x == step_y {
            // Corner crossing with both axes moving the same way: the corner
            // point belongs to the diagonal neighbour.
            (true, true)
        } else {
            // Mixed directions: the corner point sits in the cell reached by
            // the increasing axis, so that axis goes first.
            (step_x > 0, step_y > 0)
        };
        let t_next = tx.min(ty).clamp(t, 1.0);
        out.push((cur, t_next - t));
        t = t_next;
        if move_x {
            cur.x = cur.x.wrapping_add_signed(step_x);
            rem_x -= 1;
        }
        if move_y {
            cur.y = cur.y.wrapping_add_signed(step_y);
            rem_y -= 1;
        }
    }
    out.push((cur, 1.0 - t));
    debug_assert_eq!(cur, end);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathCell {
    pub cell: GridCell,
    /// Meters of the trajectory polyline inside this cell during this visit.
    pub len_m: f64,
    pub has_sample: bool,
    /// Timestamp of the last GPS point observed in the cell during this visit.
    pub leave_t: Option<f64>,
}

/// A trajectory rendered as a continuous, 8-connected sequence of cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath {
    pub cells: Vec<PathCell>,
    /// Timestamp of the first GPS point.
    pub start_t: f64,
    /// Last timestamp minus first timestamp.
    pub total_time_s: f64,
}

impl GridPath {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn end_t(&self) -> f64 {
        self.start_t + self.total_time_s
    }

    pub fn total_length_m(&self) -> f64 {
        self.cells.iter().map(|c| c.len_m).sum()
    }
}

/// Converts a chronologically ordered trajectory into a grid path.
pub fn trace_path(spec: &GridSpec, traj: &[GpsPoint]) -> Result<GridPath> {
    if traj.len() < 2 {
        return Err(Error::InvalidTrajectory(format!(
            "need at least 2 points, got {}",
            traj.len()
        )));
    }
    for w in traj.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidTrajectory(format!(
                "timestamps not strictly increasing ({} then {})",
                w[0].t, w[1].t
            )));
        }
    }
    let coords = traj
        .iter()
        .map(|p| spec.grid_coords(p))
        .collect::<Result<Vec<_>>>()?;

    let first = spec.locate(&traj[0])?;
    let mut cells = vec![PathCell {
        cell: first,
        len_m: 0.0,
        has_sample: true,
        leave_t: Some(traj[0].t),
    }];
    for (k, w) in coords.windows(2).enumerate() {
        let seg_len = spec.grid_len_m(w[1].0 - w[0].0, w[1].1 - w[0].1);
        for (cell, frac) in supercover(spec.n, w[0], w[1]) {
            let last = cells.last_mut().expect("path is never empty");
            if last.cell == cell {
                last.len_m += frac * seg_len;
            } else {
                cells.push(PathCell {
                    cell,
                    len_m: frac * seg_len,
                    has_sample: false,
                    leave_t: None,
                });
            }
        }
        let last = cells.last_mut().expect("path is never empty");
        last.has_sample = true;
        last.leave_t = Some(traj[k + 1].t);
    }
    let start_t = traj[0].t;
    Ok(GridPath {
        cells,
        start_t,
        total_time_s: traj[traj.len() - 1].t - start_t,
    })
}

/// Cells at Chebyshev distance exactly `d` from `g`, in row-major order.
/// Positions falling outside the grid are `None`, so the ring always has
/// `1` (for `d = 0`) or `8d` slots.
pub fn neighbor_set(spec: &GridSpec, g: GridCell, d: usize) -> Vec<Option<GridCell>> {
    let n = spec.n as isize;
    let (cx, cy, d) = (g.x as isize, g.y as isize, d as isize);
    let mut out = Vec::with_capacity(if d == 0 { 1 } else { 8 * d as usize });
    for x in cx - d..=cx + d {
        for y in cy - d..=cy + d {
            if (x - cx).abs().max((y - cy).abs()) != d {
                continue;
            }
            if (0..n).contains(&x) && (0..n).contains(&y) {
                out.push(Some(GridCell::new(x as usize, y as usize)));
            } else {
                out.push(None);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec(n: usize) -> GridSpec {
        GridSpec::new(BBox::new(0.0, 0.0, 8.0, 8.0), n).unwrap()
    }

    #[test]
    fn uniform_division() {
        let spec = GridSpec::from_extent(41.0, -8.6, 1280.0, 1280.0, 128).unwrap();
        assert!((spec.cell_height_m() - 10.0).abs() < 1e-9);
        assert!((spec.cell_width_m() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn porto_extent_cells() {
        let spec = GridSpec::from_extent(41.1, -8.7, 14_389.0, 16_735.0, 128).unwrap();
        assert!((spec.cell_width_m() - 130.7).abs() < 0.05);
        assert!((spec.cell_height_m() - 112.4).abs() < 0.05);
    }

    #[test]
    fn single_cell_grid() {
        let spec = unit_spec(1);
        let p = GpsPoint::new(3.3, 7.9, 0.0);
        assert_eq!(spec.locate(&p).unwrap(), GridCell::new(0, 0));
        assert_eq!(spec.locate(&GpsPoint::new(8.0, 8.0, 0.0)).unwrap(), GridCell::new(0, 0));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(matches!(
            GridSpec::new(BBox::new(1.0, 1.0, 1.0, 2.0), 4),
            Err(Error::DegenerateBBox(_))
        ));
        assert!(matches!(GridSpec::new(BBox::new(0.0, 0.0, 1.0, 1.0), 0), Err(Error::EmptyGrid)));
    }

    #[test]
    fn locate_conventions() {
        let spec = unit_spec(8);
        assert_eq!(spec.locate(&GpsPoint::new(0.0, 0.0, 0.0)).unwrap(), GridCell::new(0, 0));
        assert_eq!(spec.locate(&GpsPoint::new(8.0, 8.0, 0.0)).unwrap(), GridCell::new(7, 7));
        // boundary between columns 3 and 4
        assert_eq!(spec.locate(&GpsPoint::new(0.5, 4.0, 0.0)).unwrap(), GridCell::new(0, 4));
        assert!(matches!(
            spec.locate(&GpsPoint::new(8.5, 1.0, 0.0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn one_cell_trajectory() {
        let spec = GridSpec::from_extent(41.0, -8.6, 1000.0, 1000.0, 4).unwrap();
        let a = spec.point_at(0.2, 0.2, 0.0);
        let b = spec.point_at(0.7, 0.6, 10.0);
        let path = trace_path(&spec, &[a, b]).unwrap();
        assert_eq!(path.len(), 1);
        assert!(path.cells[0].has_sample);
        assert!((path.cells[0].len_m - spec.distance_m(&a, &b)).abs() < 1e-9);
        assert_eq!(path.total_time_s, 10.0);
    }

    #[test]
    fn row_traversal() {
        let spec = unit_spec(8);
        let a = GpsPoint::new(0.5, 0.5, 0.0);
        let b = GpsPoint::new(0.5, 3.5, 30.0);
        let path = trace_path(&spec, &[a, b]).unwrap();
        let cells: Vec<_> = path.cells.iter().map(|c| (c.cell.x, c.cell.y, c.has_sample)).collect();
        assert_eq!(
            cells,
            vec![(0, 0, true), (0, 1, false), (0, 2, false), (0, 3, true)]
        );
        assert_eq!(path.cells[1].leave_t, None);
        assert_eq!(path.cells[3].leave_t, Some(30.0));
    }

    #[test]
    fn corner_crossing_same_direction_is_diagonal() {
        let cells: Vec<_> = supercover(4, (0.5, 0.5), (1.5, 1.5)).into_iter().map(|c| c.0).collect();
        assert_eq!(cells, vec![GridCell::new(0, 0), GridCell::new(1, 1)]);
        let cells: Vec<_> = supercover(4, (1.5, 1.5), (0.5, 0.5)).into_iter().map(|c| c.0).collect();
        assert_eq!(cells, vec![GridCell::new(1, 1), GridCell::new(0, 0)]);
    }

    #[test]
    fn corner_crossing_mixed_direction_visits_higher_index() {
        // rows up, columns down through the corner (1, 1)
        let cov = supercover(4, (0.5, 1.5), (1.5, 0.5));
        let cells: Vec<_> = cov.iter().map(|c| c.0).collect();
        assert_eq!(
            cells,
            vec![GridCell::new(0, 1), GridCell::new(1, 1), GridCell::new(1, 0)]
        );
        assert_eq!(cov[1].1, 0.0);
    }

    #[test]
    fn loops_keep_revisits() {
        let spec = unit_spec(8);
        let pts = [
            GpsPoint::new(0.5, 0.5, 0.0),
            GpsPoint::new(0.5, 1.5, 10.0),
            GpsPoint::new(0.5, 0.6, 20.0),
        ];
        let path = trace_path(&spec, &pts).unwrap();
        let ys: Vec<_> = path.cells.iter().map(|c| c.cell.y).collect();
        assert_eq!(ys, vec![0, 1, 0]);
    }

    #[test]
    fn rejects_bad_trajectories() {
        let spec = unit_spec(8);
        let a = GpsPoint::new(0.5, 0.5, 10.0);
        assert!(trace_path(&spec, &[a]).is_err());
        let b = GpsPoint::new(0.5, 1.5, 5.0);
        assert!(trace_path(&spec, &[a, b]).is_err());
    }

    #[test]
    fn neighbor_rings() {
        let spec = unit_spec(8);
        let c = GridCell::new(3, 3);
        assert_eq!(neighbor_set(&spec, c, 0), vec![Some(c)]);
        let ring = neighbor_set(&spec, c, 1);
        assert_eq!(ring.len(), 8);
        assert!(ring.iter().all(|g| g.is_some()));
        let corner = neighbor_set(&spec, GridCell::new(0, 0), 1);
        assert_eq!(corner.len(), 8);
        assert_eq!(corner.iter().filter(|g| g.is_some()).count(), 3);
        assert_eq!(
            corner.iter().flatten().copied().collect::<Vec<_>>(),
            vec![GridCell::new(0, 1), GridCell::new(1, 0), GridCell::new(1, 1)]
        );
    }
}
