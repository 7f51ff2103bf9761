//! Ground grid, cameras and the location->pixel projection table.
//!
//! Conventions, fixed across the crate:
//! * grid cell `(row, col)` has flat index `i = row * cols + col`; its center
//!   sits at world meters `x = (col + 0.5) * cell_size`, `y = (row + 0.5) * cell_size`;
//! * a camera is a pinhole with horizontal optical axis: ground position in
//!   cell units, yaw (radians, world x/y plane), focal length in pixels,
//!   principal point at the image center, mount height in meters;
//! * a person at a cell is a vertical cylinder, rendered as the axis-aligned
//!   bounding rectangle of its fronto-parallel billboard (width `2 * radius`,
//!   height `height`, at the depth of the cylinder axis);
//! * rectangles store inclusive integer pixel corners, clipped to the image;
//!   a location is out of view when behind the camera, closer than the
//!   cylinder radius, or when its clipped rectangle has fewer than two pixels
//!   along either axis (which keeps relative coordinates well defined).

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Discretized ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundGrid {
    pub rows: usize,
    pub cols: usize,
    /// Cell side length in meters.
    pub cell_size: f64,
}

impl GroundGrid {
    pub fn new(rows: usize, cols: usize, cell_size: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("grid must have at least one cell"));
        }
        if !cell_size.is_finite() || cell_size <= 0.0 {
            return Err(Error::param("cell_size must be positive and finite"));
        }
        Ok(GroundGrid { rows, cols, cell_size })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        debug_assert!(i < self.cells());
        (i / self.cols, i % self.cols)
    }

    /// Cell center in world meters, `[x, y]`.
    pub fn center_m(&self, i: usize) -> [f64; 2] {
        let (r, c) = self.row_col(i);
        [(c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size]
    }
}

/// Body model shared by all locations: a vertical cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    /// Height in meters.
    pub height: f64,
    /// Radius in meters (half the body width).
    pub radius: f64,
}

impl Default for CylinderSpec {
    fn default() -> Self {
        CylinderSpec { height: 1.75, radius: 0.25 }
    }
}

/// Pinhole camera with horizontal optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Image width in pixels.
    pub width: usize,
    /// Image height in pixels.
    pub height: usize,
    /// Ground position in cell units, `[x, y]` (may lie outside the grid).
    pub position: [f64; 2],
    /// Viewing direction in the ground plane, radians.
    pub yaw: f64,
    /// Focal length in pixels.
    pub focal: f64,
    /// Mount height in meters.
    pub camera_height: f64,
}

/// Axis-aligned pixel rectangle with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Pixel count along x; at least 2 for any in-view rectangle.
    pub fn width(&self) -> i32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0 + 1
    }
}

/// Projection of one location into one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedRect {
    /// Clipped to the image; never degenerate.
    pub rect: Rect,
    /// Euclidean ground distance camera -> cell center, meters. Strictly positive.
    pub depth: f64,
}

/// Relative coordinates of pixel `k` inside `rect`: the rectangle corners map
/// to `(-0.5, -0.5)` and `(0.5, 0.5)`.
///
/// Errors when the rectangle is degenerate (zero extent along either axis).
pub fn relative_coords<T: Real>(rect: Rect, kx: i32, ky: i32) -> Result<[T; 2]> {
    if rect.x1 <= rect.x0 || rect.y1 <= rect.y0 {
        return Err(Error::param("degenerate rectangle"));
    }
    Ok(rel_coords(rect, kx, ky))
}

/// Same as [`relative_coords`] but assumes a non-degenerate rectangle, which
/// every rectangle stored in a [`ProjectionTable`] is.
#[inline]
pub(crate) fn rel_coords<T: Real>(rect: Rect, kx: i32, ky: i32) -> [T; 2] {
    debug_assert!(rect.x1 > rect.x0 && rect.y1 > rect.y0);
    let x = (kx as f64 - 0.5 * (rect.x0 + rect.x1) as f64) / (rect.x1 - rect.x0) as f64;
    let y = (ky as f64 - 0.5 * (rect.y0 + rect.y1) as f64) / (rect.y1 - rect.y0) as f64;
    [T::of(x), T::of(y)]
}

/// Projects the cylinder at location `i` into `cam`.
///
/// Returns `None` when the location is out of view (see module docs).
pub fn project_location(
    grid: &GroundGrid,
    cam: &CameraModel,
    cyl: &CylinderSpec,
    i: usize,
) -> Option<ProjectedRect> {
    let target = grid.center_m(i);
    let pos = [cam.position[0] * grid.cell_size, cam.position[1] * grid.cell_size];
    let rel = [target[0] - pos[0], target[1] - pos[1]];
    let dir = [cam.yaw.cos(), cam.yaw.sin()];
    let axial = rel[0] * dir[0] + rel[1] * dir[1];
    if axial <= cyl.radius {
        return None;
    }
    let lateral = dir[0] * rel[1] - dir[1] * rel[0];
    let u_c = cam.width as f64 / 2.0 + cam.focal * lateral / axial;
    let half_w = cam.focal * cyl.radius / axial;
    let v_top = cam.height as f64 / 2.0 + cam.focal * (cam.camera_height - cyl.height) / axial;
    let v_bot = cam.height as f64 / 2.0 + cam.focal * cam.camera_height / axial;

    let x0 = (u_c - half_w).floor() as i64;
    let x1 = (u_c + half_w).ceil() as i64 - 1;
    let y0 = v_top.floor() as i64;
    let y1 = v_bot.ceil() as i64 - 1;

    let x0 = x0.max(0);
    let y0 = y0.max(0);
    let x1 = x1.min(cam.width as i64 - 1);
    let y1 = y1.min(cam.height as i64 - 1);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let rect = Rect { x0: x0 as i32, y0: y0 as i32, x1: x1 as i32, y1: y1 as i32 };
    let depth = (rel[0] * rel[0] + rel[1] * rel[1]).sqrt();
    Some(ProjectedRect { rect, depth })
}

/// Per-camera projection data: one rectangle per in-view location plus, per
/// pixel, the list of covering locations sorted near-to-far.
#[derive(Debug, Clone)]
pub struct CameraTable {
    pub width: usize,
    pub height: usize,
    /// Indexed by location.
    pub rects: Vec<Option<ProjectedRect>>,
    /// Indexed by pixel `k = y * width + x`; locations sorted by
    /// `(depth, index)` ascending.
    pub cover: Vec<Vec<u32>>,
}

impl CameraTable {
    pub fn pixel(&self, x: i32, y: i32) -> usize {
        debug_assert!(x >= 0 && (x as usize) < self.width && y >= 0 && (y as usize) < self.height);
        y as usize * self.width + x as usize
    }
}

/// Projection tables for a full rig.
#[derive(Debug, Clone)]
pub struct ProjectionTable {
    pub cells: usize,
    pub cameras: Vec<CameraTable>,
}

impl ProjectionTable {
    /// True when at least one camera sees the location.
    pub fn covered(&self, i: usize) -> bool {
        self.cameras.iter().any(|c| c.rects[i].is_some())
    }

    /// Locations no camera sees; these stay frozen at the prior during
    /// inference and are excluded from synthetic ground truth.
    pub fn uncovered(&self) -> Vec<u32> {
        (0..self.cells).filter(|&i| !self.covered(i)).map(|i| i as u32).collect()
    }
}

/// Builds the projection table for every camera of a rig.
pub fn build_projection_table(
    grid: &GroundGrid,
    cams: &[CameraModel],
    cyl: &CylinderSpec,
) -> Result<ProjectionTable> {
    if cams.is_empty() {
        return Err(Error::param("rig needs at least one camera"));
    }
    if !(cyl.height > 0.0 && cyl.radius > 0.0) {
        return Err(Error::param("cylinder dimensions must be positive"));
    }
    let mut cameras = Vec::with_capacity(cams.len());
    for cam in cams {
        if cam.width < 2 || cam.height < 2 {
            return Err(Error::param("camera image must be at least 2x2 pixels"));
        }
        if !cam.focal.is_finite() || cam.focal <= 0.0 {
            return Err(Error::param("focal length must be positive"));
        }
        let mut rects = Vec::with_capacity(grid.cells());
        let mut cover = vec![Vec::new(); cam.width * cam.height];
        for i in 0..grid.cells() {
            let proj = project_location(grid, cam, cyl, i);
            if let Some(p) = proj {
                for y in p.rect.y0..=p.rect.y1 {
                    for x in p.rect.x0..=p.rect.x1 {
                        cover[y as usize * cam.width + x as usize].push(i as u32);
                    }
                }
            }
            rects.push(proj);
        }
        for list in &mut cover {
            list.sort_by(|&a, &b| {
                let da = rects[a as usize].as_ref().unwrap().depth;
                let db = rects[b as usize].as_ref().unwrap().depth;
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
        }
        cameras.push(CameraTable { width: cam.width, height: cam.height, rects, cover });
    }
    Ok(ProjectionTable { cells: grid.cells(), cameras })
}

/// Four cameras outside the grid corners, each yawed toward the grid center.
///
/// `margin_cells` is the distance from the nearest grid corner along both
/// axes. Convenient for synthetic rigs and tests.
pub fn corner_rig(
    grid: &GroundGrid,
    width: usize,
    height: usize,
    focal: f64,
    camera_height: f64,
    margin_cells: f64,
) -> Vec<CameraModel> {
    let (r, c) = (grid.rows as f64, grid.cols as f64);
    let center = [c / 2.0, r / 2.0];
    let corners = [
        [-margin_cells, -margin_cells],
        [c + margin_cells, -margin_cells],
        [-margin_cells, r + margin_cells],
        [c + margin_cells, r + margin_cells],
    ];
    corners
        .iter()
        .map(|&position| {
            let yaw = (center[1] - position[1]).atan2(center[0] - position[0]);
            CameraModel { width, height, position, yaw, focal, camera_height }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent projector: places the billboard's four corners in 3D,
    /// rotates them into the camera frame and perspective-divides each one.
    fn reference_rect(
        grid: &GroundGrid,
        cam: &CameraModel,
        cyl: &CylinderSpec,
        i: usize,
    ) -> Option<Rect> {
        let t = grid.center_m(i);
        let p = [cam.position[0] * grid.cell_size, cam.position[1] * grid.cell_size];
        let (sin, cos) = cam.yaw.sin_cos();
        // Camera frame: z forward, x right (so +lateral in world cross
        // convention lands at +u), y down.
        let to_cam = |w: [f64; 3]| {
            let dx = w[0] - p[0];
            let dy = w[1] - p[1];
            let z = dx * cos + dy * sin;
            let x = -dx * sin + dy * cos;
            let y = cam.camera_height - w[2];
            [x, y, z]
        };
        let axis_depth = to_cam([t[0], t[1], 0.0])[2];
        if axis_depth <= cyl.radius {
            return None;
        }
        // Billboard: fronto-parallel segment of half-width `radius` through
        // the axis, swept from z=0 to z=height. All four corners share the
        // axis depth by construction.
        let right = [-sin, cos];
        let mut us: Vec<f64> = Vec::new();
        let mut vs: Vec<f64> = Vec::new();
        for sx in [-1.0, 1.0] {
            for z in [0.0, cyl.height] {
                let w = [t[0] + sx * cyl.radius * right[0], t[1] + sx * cyl.radius * right[1], z];
                let c = to_cam(w);
                us.push(cam.width as f64 / 2.0 + cam.focal * c[0] / c[2]);
                vs.push(cam.height as f64 / 2.0 + cam.focal * c[1] / c[2]);
            }
        }
        let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let fmax = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x0 = (fmin(&us).floor() as i64).max(0);
        let x1 = ((fmax(&us).ceil() as i64) - 1).min(cam.width as i64 - 1);
        let y0 = (fmin(&vs).floor() as i64).max(0);
        let y1 = ((fmax(&vs).ceil() as i64) - 1).min(cam.height as i64 - 1);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Rect { x0: x0 as i32, y0: y0 as i32, x1: x1 as i32, y1: y1 as i32 })
    }

    fn test_grid() -> GroundGrid {
        GroundGrid::new(20, 20, 0.25).unwrap()
    }

    fn test_rig(grid: &GroundGrid) -> Vec<CameraModel> {
        corner_rig(grid, 64, 48, 60.0, 2.4, 12.0)
    }

    #[test]
    fn projector_matches_independent_reference_on_every_location() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        for cam in test_rig(&grid) {
            for i in 0..grid.cells() {
                let got = project_location(&grid, &cam, &cyl, i).map(|p| p.rect);
                let want = reference_rect(&grid, &cam, &cyl, i);
                assert_eq!(got, want, "location {i}");
            }
        }
    }

    #[test]
    fn every_location_of_the_default_rig_is_covered_by_two_cameras() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        let table = build_projection_table(&grid, &test_rig(&grid), &cyl).unwrap();
        assert!(table.uncovered().is_empty());
        for i in 0..grid.cells() {
            let n = table.cameras.iter().filter(|c| c.rects[i].is_some()).count();
            assert!(n >= 2, "location {i} seen by {n} cameras");
        }
    }

    #[test]
    fn cover_lists_match_rect_containment_both_ways() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        let table = build_projection_table(&grid, &test_rig(&grid), &cyl).unwrap();
        for ct in &table.cameras {
            for y in 0..ct.height as i32 {
                for x in 0..ct.width as i32 {
                    let k = ct.pixel(x, y);
                    for &i in &ct.cover[k] {
                        assert!(ct.rects[i as usize].unwrap().rect.contains(x, y));
                    }
                }
            }
            for (i, proj) in ct.rects.iter().enumerate() {
                if let Some(p) = proj {
                    for y in p.rect.y0..=p.rect.y1 {
                        for x in p.rect.x0..=p.rect.x1 {
                            let k = ct.pixel(x, y);
                            assert!(ct.cover[k].contains(&(i as u32)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cover_lists_are_sorted_near_to_far_with_index_ties() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        let table = build_projection_table(&grid, &test_rig(&grid), &cyl).unwrap();
        for ct in &table.cameras {
            for list in &ct.cover {
                for w in list.windows(2) {
                    let (a, b) = (w[0] as usize, w[1] as usize);
                    let da = ct.rects[a].unwrap().depth;
                    let db = ct.rects[b].unwrap().depth;
                    assert!(da > 0.0);
                    assert!(da < db || (da == db && a < b));
                }
            }
        }
    }

    #[test]
    fn location_behind_the_camera_is_out_of_view() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        // Looking along +x from the grid center: cells to the camera's left
        // (smaller x) are behind it.
        let cam = CameraModel {
            width: 64,
            height: 48,
            position: [10.0, 10.0],
            yaw: 0.0,
            focal: 60.0,
            camera_height: 2.4,
        };
        let behind = grid.index(10, 2);
        assert!(project_location(&grid, &cam, &cyl, behind).is_none());
        let ahead = grid.index(10, 17);
        assert!(project_location(&grid, &cam, &cyl, ahead).is_some());
    }

    #[test]
    fn relative_coords_fixed_points() {
        let rect = Rect { x0: 10, y0: 20, x1: 30, y1: 60 };
        let [x, y] = relative_coords::<f64>(rect, 20, 30).unwrap();
        assert_eq!(x, 0.0);
        assert_eq!(y, -0.25);
        let [x, y] = relative_coords::<f64>(rect, 10, 20).unwrap();
        assert_eq!([x, y], [-0.5, -0.5]);
        let [x, y] = relative_coords::<f64>(rect, 30, 60).unwrap();
        assert_eq!([x, y], [0.5, 0.5]);
    }

    #[test]
    fn relative_coords_rejects_degenerate_rect() {
        let rect = Rect { x0: 5, y0: 2, x1: 5, y1: 9 };
        assert!(relative_coords::<f64>(rect, 5, 3).is_err());
    }

    #[test]
    fn same_ray_locations_order_near_first() {
        let grid = test_grid();
        let cyl = CylinderSpec::default();
        // Camera on the row-10 axis looking along +x: cells (10, 8) and
        // (10, 16) sit on the same ray, the lower column strictly nearer.
        // Mounted below head height so the far rectangle nests in the near one.
        let cam = CameraModel {
            width: 64,
            height: 48,
            position: [-8.0, 10.5],
            yaw: 0.0,
            focal: 70.0,
            camera_height: 1.2,
        };
        let near = grid.index(10, 8);
        let far = grid.index(10, 16);
        let table = build_projection_table(&grid, &[cam], &cyl).unwrap();
        let ct = &table.cameras[0];
        let far_rect = ct.rects[far].unwrap().rect;
        let k = ct.pixel(far_rect.x0 + far_rect.width() / 2, far_rect.y0 + far_rect.height() / 2);
        let list = &ct.cover[k];
        let pn = list.iter().position(|&v| v == near as u32).unwrap();
        let pf = list.iter().position(|&v| v == far as u32).unwrap();
        assert!(pn < pf);
    }

    proptest! {
        #[test]
        fn relative_coords_stay_in_unit_box(
            x0 in -50i32..50, w in 1i32..40, y0 in -50i32..50, h in 1i32..40,
            fx in 0.0f64..1.0, fy in 0.0f64..1.0,
        ) {
            let rect = Rect { x0, y0, x1: x0 + w, y1: y0 + h };
            let kx = x0 + (fx * (w + 1) as f64) as i32;
            let ky = y0 + (fy * (h + 1) as f64) as i32;
            let kx = kx.min(rect.x1);
            let ky = ky.min(rect.y1);
            let [rx, ry] = relative_coords::<f64>(rect, kx, ky).unwrap();
            prop_assert!((-0.5..=0.5).contains(&rx));
            prop_assert!((-0.5..=0.5).contains(&ry));
        }
    }
}
