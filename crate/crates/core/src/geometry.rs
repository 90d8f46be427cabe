//! Bird's-eye-view box geometry: enlargement, projection, pixel membership
//! and rotated 3D IoU.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("negative margin {0}")]
    NegativeMargin(f64),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Maps pixel `(row, col)` of a BEV grid to metric coordinates.
///
/// Column index runs along +x, row index along +y. `(origin_x, origin_y)` is
/// the corner of pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub height: usize,
    pub width: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GridMeta {
    pub fn new(
        height: usize,
        width: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
    ) -> Result<Self, GeometryError> {
        let g = Self {
            height,
            width,
            origin_x,
            origin_y,
            pixel_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.height == 0 || self.width == 0 {
            return Err(GeometryError::InvalidGrid("empty grid".into()));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(GeometryError::InvalidGrid(format!(
                "pixel_size {} must be positive",
                self.pixel_size
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Metric center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y + (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing a metric point, if inside the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.pixel_size).floor();
        let row = ((y - self.origin_y) / self.pixel_size).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }
}

/// Oriented 3D box. `(cx, cy, cz)` is the geometric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub yaw: f64,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl Box3D {
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        dx: f64,
        dy: f64,
        dz: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        let b = Self {
            cx,
            cy,
            cz,
            dx,
            dy,
            dz,
            yaw,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(v: [f64; 7]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw,
        ]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite parameter".into()));
        }
        if self.dx <= 0.0 || self.dy <= 0.0 || self.dz <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "extents must be positive, got ({}, {}, {})",
                self.dx, self.dy, self.dz
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(GeometryError::InvalidBox(format!(
                "yaw {} outside (-pi, pi]",
                self.yaw
            )));
        }
        Ok(())
    }

    /// Grow every extent by `2m`; center and yaw are kept.
    pub fn enlarge(&self, m: f64) -> Result<Self, GeometryError> {
        if m < 0.0 || !m.is_finite() {
            return Err(GeometryError::NegativeMargin(m));
        }
        Ok(Self {
            dx: self.dx + 2.0 * m,
            dy: self.dy + 2.0 * m,
            dz: self.dz + 2.0 * m,
            ..*self
        })
    }

    pub fn bev_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    pub fn project_to_bev(&self) -> BevPolygon {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hy) = (self.dx / 2.0, self.dy / 2.0);
        let corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            .map(|(lx, ly)| (self.cx + c * lx - s * ly, self.cy + s * lx + c * ly));
        BevPolygon { corners }
    }

    /// 3D Euclidean distance of the center from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.cx * self.cx + self.cy * self.cy + self.cz * self.cz).sqrt()
    }

    fn z_span(&self) -> (f64, f64) {
        (self.cz - self.dz / 2.0, self.cz + self.dz / 2.0)
    }
}

/// Counter-clockwise BEV footprint of a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPolygon {
    pub corners: [(f64, f64); 4],
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

const EDGE_EPS: f64 = 1e-9;

impl BevPolygon {
    pub fn area(&self) -> f64 {
        shoelace(&self.corners)
    }

    pub fn perimeter(&self) -> f64 {
        (0..4)
            .map(|i| {
                let (a, b) = (self.corners[i], self.corners[(i + 1) % 4]);
                ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
            })
            .sum()
    }

    /// Inside-or-on-boundary test against each CCW edge.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        (0..4).all(|i| cross(self.corners[i], self.corners[(i + 1) % 4], p) >= -EDGE_EPS)
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.corners.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }

    /// Pixels whose centers lie inside or on the polygon. Row-major `height x width`.
    pub fn membership_mask(&self, grid: &GridMeta) -> Vec<bool> {
        let mut mask = vec![false; grid.num_pixels()];
        let (x0, y0, x1, y1) = self.bounds();
        let ps = grid.pixel_size;
        let col_lo = (((x0 - grid.origin_x) / ps - 0.5).floor().max(0.0)) as usize;
        let row_lo = (((y0 - grid.origin_y) / ps - 0.5).floor().max(0.0)) as usize;
        let col_hi = ((x1 - grid.origin_x) / ps + 0.5)
            .ceil()
            .min(grid.width as f64);
        let row_hi = ((y1 - grid.origin_y) / ps + 0.5)
            .ceil()
            .min(grid.height as f64);
        if col_hi <= 0.0 || row_hi <= 0.0 {
            return mask;
        }
        for row in row_lo..row_hi as usize {
            for col in col_lo..col_hi as usize {
                if self.contains(grid.pixel_center(row, col)) {
                    mask[row * grid.width + col] = true;
                }
            }
        }
        mask
    }
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

/// Area of the intersection of two convex CCW polygons (Sutherland-Hodgman).
pub fn convex_intersection_area(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> f64 {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    let area = shoelace(&output);
    if area < 1e-10 {
        0.0
    } else {
        area
    }
}

fn line_intersection(p: (f64, f64), q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Rotated 3D IoU: BEV intersection area times vertical overlap, over union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (az0, az1) = a.z_span();
    let (bz0, bz1) = b.z_span();
    let dz = (az1.min(bz1) - az0.max(bz0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let area = convex_intersection_area(&a.project_to_bev().corners, &b.project_to_bev().corners);
    let inter = area * dz;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
