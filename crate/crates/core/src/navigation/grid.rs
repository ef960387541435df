//! Occupancy grid, obstacle inflation, ray traversal and map-server style I/O.

use std::io::Cursor;
use std::path::Path as FsPath;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Pose2, Vec2};

/// Pixel value at or above which a PGM cell is free.
pub const PGM_FREE_MIN: u8 = 250;
/// Pixel value at or below which a PGM cell is occupied.
pub const PGM_OCCUPIED_MAX: u8 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad map metadata: {0}")]
    Metadata(String),
    #[error("bad PGM image: {0}")]
    Image(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("ray origin ({x:.3}, {y:.3}) is outside the grid")]
    OriginOutsideGrid { x: f64, y: f64 },
}

/// Row-major occupancy grid. Row 0 is the row nearest the origin (lowest map y).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Pose2,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

/// Sidecar metadata in the map-server YAML layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    #[serde(default)]
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
    #[serde(default)]
    pub negate: i32,
    #[serde(default = "default_occupied_thresh")]
    pub occupied_thresh: f64,
    #[serde(default = "default_free_thresh")]
    pub free_thresh: f64,
}

fn default_occupied_thresh() -> f64 {
    0.65
}

fn default_free_thresh() -> f64 {
    0.196
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2, fill: Cell) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, resolution: f64, origin: Pose2, cells: Vec<Cell>) -> Self {
        assert_eq!(cells.len(), width * height, "cell count must equal width*height");
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            resolution,
            origin,
            width,
            height,
            cells,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[j * self.width + i]
    }

    /// Out-of-bounds indices read as unknown.
    pub fn get_signed(&self, i: i64, j: i64) -> Cell {
        if self.in_bounds(i, j) {
            self.get(i as usize, j as usize)
        } else {
            Cell::Unknown
        }
    }

    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        self.cells[j * self.width + i] = c;
    }

    pub fn is_free(&self, i: i64, j: i64) -> bool {
        self.get_signed(i, j) == Cell::Free
    }

    /// Map point in continuous grid units (cell (i, j) spans [i, i+1) × [j, j+1)).
    pub fn to_grid_units(&self, p: &Vec2) -> Vec2 {
        let (s, c) = self.origin.theta.sin_cos();
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        Vec2::new(c * dx + s * dy, -s * dx + c * dy) / self.resolution
    }

    fn from_grid_units(&self, g: &Vec2) -> Vec2 {
        let (s, c) = self.origin.theta.sin_cos();
        let gx = g.x * self.resolution;
        let gy = g.y * self.resolution;
        Vec2::new(self.origin.x + c * gx - s * gy, self.origin.y + s * gx + c * gy)
    }

    fn direction_to_grid(&self, d: &Vec2) -> Vec2 {
        let (s, c) = self.origin.theta.sin_cos();
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn world_to_cell_signed(&self, p: &Vec2) -> (i64, i64) {
        let g = self.to_grid_units(p);
        (g.x.floor() as i64, g.y.floor() as i64)
    }

    pub fn world_to_cell(&self, p: &Vec2) -> Option<(usize, usize)> {
        let (i, j) = self.world_to_cell_signed(p);
        self.in_bounds(i, j).then_some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        self.from_grid_units(&Vec2::new(i as f64 + 0.5, j as f64 + 0.5))
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.world_to_cell(p).is_some()
    }

    /// Cell state at a map point; outside the grid reads as unknown.
    pub fn cell_at(&self, p: &Vec2) -> Cell {
        let (i, j) = self.world_to_cell_signed(p);
        self.get_signed(i, j)
    }

    /// Map-frame extent (min corner, max corner) for an unrotated origin.
    pub fn extent(&self) -> (Vec2, Vec2) {
        let a = self.from_grid_units(&Vec2::zeros());
        let b = self.from_grid_units(&Vec2::new(self.width as f64, self.height as f64));
        (a.inf(&b), a.sup(&b))
    }

    /// Sets every cell whose square overlaps the open axis-aligned map rectangle.
    pub fn fill_rect(&mut self, min: Vec2, max: Vec2, c: Cell) {
        let ga = self.to_grid_units(&min);
        let gb = self.to_grid_units(&max);
        let lo = ga.inf(&gb);
        let hi = ga.sup(&gb);
        let i0 = lo.x.floor().max(0.0) as i64;
        let j0 = lo.y.floor().max(0.0) as i64;
        let i1 = (hi.x.ceil() as i64).min(self.width as i64);
        let j1 = (hi.y.ceil() as i64).min(self.height as i64);
        for j in j0..j1 {
            for i in i0..i1 {
                // strict overlap with the open rectangle
                if (i as f64) < hi.x && (i as f64 + 1.0) > lo.x && (j as f64) < hi.y && (j as f64 + 1.0) > lo.y {
                    self.set(i as usize, j as usize, c);
                }
            }
        }
    }

    /// Marks as occupied every cell whose centre lies within `radius` of an
    /// occupied cell's square. Unknown cells count as occupied and the result
    /// contains only free and occupied cells.
    pub fn inflate(&self, radius: f64) -> OccupancyGrid {
        assert!(radius >= 0.0, "inflation radius must be non-negative");
        let r = radius / self.resolution;
        let reach = (r + 0.5).ceil() as i64;
        let mut kernel = Vec::new();
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let ex = (di.abs() as f64 - 0.5).max(0.0);
                let ey = (dj.abs() as f64 - 0.5).max(0.0);
                if (ex * ex + ey * ey).sqrt() <= r + 1e-9 {
                    kernel.push((di, dj));
                }
            }
        }
        let mut out = self.clone();
        for c in out.cells.iter_mut() {
            if *c == Cell::Unknown {
                *c = Cell::Occupied;
            }
        }
        for j in 0..self.height as i64 {
            for i in 0..self.width as i64 {
                if self.get(i as usize, j as usize) == Cell::Free {
                    continue;
                }
                for &(di, dj) in &kernel {
                    let (ni, nj) = (i + di, j + dj);
                    if self.in_bounds(ni, nj) {
                        out.set(ni as usize, nj as usize, Cell::Occupied);
                    }
                }
            }
        }
        out
    }

    /// Walks the cells crossed by a ray (Amanatides–Woo traversal).
    ///
    /// `visit(i, j, entry_distance_m)` is called for each cell in order,
    /// starting with the origin cell at distance 0; returning `true` stops the
    /// walk. Traversal ends once the entry distance exceeds `max_dist`.
    pub fn traverse(&self, origin: &Vec2, direction: &Vec2, max_dist: f64, mut visit: impl FnMut(i64, i64, f64) -> bool) {
        let g = self.to_grid_units(origin);
        let d = self.direction_to_grid(direction);
        let n = d.norm();
        if n < 1e-12 {
            visit(g.x.floor() as i64, g.y.floor() as i64, 0.0);
            return;
        }
        let d = d / n;
        let max_t = max_dist / self.resolution;
        let (mut i, mut j) = (g.x.floor() as i64, g.y.floor() as i64);
        let step_i: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_j: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |p: f64, cell: i64, dir: f64| -> f64 {
            if dir > 0.0 {
                (cell as f64 + 1.0 - p) / dir
            } else if dir < 0.0 {
                (cell as f64 - p) / dir
            } else {
                f64::INFINITY
            }
        };
        let mut t_max_x = next_boundary(g.x, i, d.x);
        let mut t_max_y = next_boundary(g.y, j, d.y);
        let t_delta_x = if d.x != 0.0 { 1.0 / d.x.abs() } else { f64::INFINITY };
        let t_delta_y = if d.y != 0.0 { 1.0 / d.y.abs() } else { f64::INFINITY };
        let mut t = 0.0;
        loop {
            if visit(i, j, t * self.resolution) {
                return;
            }
            if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_delta_x;
                i += step_i;
            } else {
                t = t_max_y;
                t_max_y += t_delta_y;
                j += step_j;
            }
            if t > max_t {
                return;
            }
            // far outside the grid nothing can change
            if !self.in_bounds(i, j) && (i < -1 || j < -1 || i > self.width as i64 || j > self.height as i64) {
                visit(i, j, t * self.resolution);
                return;
            }
        }
    }

    /// Distance along `azimuth` to the first occupied, unknown or off-grid cell.
    ///
    /// Returns `(range, hit)`; `range` is clamped to `max_range` and `hit` is
    /// false only when the ray ran `max_range` through free cells.
    pub fn raycast(&self, origin: &Vec2, azimuth: f64, max_range: f64) -> Result<(f64, bool), GridError> {
        if !self.contains(origin) {
            return Err(GridError::OriginOutsideGrid { x: origin.x, y: origin.y });
        }
        let dir = Vec2::new(azimuth.cos(), azimuth.sin());
        let mut result = (max_range, false);
        self.traverse(origin, &dir, max_range, |i, j, dist| {
            if !self.is_free(i, j) {
                result = if dist < max_range { (dist, true) } else { (max_range, false) };
                return true;
            }
            false
        });
        Ok(result)
    }

    /// True when every cell touched by the segment `a → b` is free.
    pub fn line_of_sight(&self, a: &Vec2, b: &Vec2) -> bool {
        let delta = b - a;
        let len = delta.norm();
        let mut clear = true;
        self.traverse(a, &delta, len, |i, j, _| {
            if !self.is_free(i, j) {
                clear = false;
                return true;
            }
            false
        });
        clear
    }

    /// Map-server style PGM bytes: free 254, occupied 0, unknown 205; first
    /// image row is the top (highest y) of the map.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for j in 0..self.height {
            for i in 0..self.width {
                let v = match self.get(i, j) {
                    Cell::Free => 254,
                    Cell::Occupied => 0,
                    Cell::Unknown => 205,
                };
                img.put_pixel(i as u32, (self.height - 1 - j) as u32, Luma([v]));
            }
        }
        let mut buf = Cursor::new(Vec::new());
        let encoder = image::codecs::pnm::PnmEncoder::new(&mut buf)
            .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
        img.write_with_encoder(encoder).expect("in-memory PGM encode");
        buf.into_inner()
    }

    pub fn from_pgm_bytes(bytes: &[u8], resolution: f64, origin: Pose2) -> Result<Self, MapIoError> {
        if !(resolution > 0.0) {
            return Err(MapIoError::Metadata(format!("resolution must be positive, got {resolution}")));
        }
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| MapIoError::Image(e.to_string()))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut cells = vec![Cell::Unknown; w * h];
        for (x, y, px) in img.enumerate_pixels() {
            let v = px.0[0];
            let c = if v >= PGM_FREE_MIN {
                Cell::Free
            } else if v <= PGM_OCCUPIED_MAX {
                Cell::Occupied
            } else {
                Cell::Unknown
            };
            let j = h - 1 - y as usize;
            cells[j * w + x as usize] = c;
        }
        Ok(Self::from_cells(w, h, resolution, origin, cells))
    }

    pub fn metadata(&self, image_name: &str) -> MapMetadata {
        MapMetadata {
            image: image_name.to_string(),
            resolution: self.resolution,
            origin: [self.origin.x, self.origin.y, self.origin.theta],
            negate: 0,
            occupied_thresh: default_occupied_thresh(),
            free_thresh: default_free_thresh(),
        }
    }

    /// Loads a PGM map with its YAML sidecar; the sidecar's `image` field is
    /// ignored when `pgm` is given explicitly.
    pub fn load(pgm: &FsPath, sidecar: &FsPath) -> Result<Self, MapIoError> {
        let meta_text = std::fs::read_to_string(sidecar).map_err(|e| MapIoError::Io {
            path: sidecar.display().to_string(),
            source: e,
        })?;
        let meta: MapMetadata = serde_yaml::from_str(&meta_text).map_err(|e| MapIoError::Metadata(e.to_string()))?;
        let bytes = std::fs::read(pgm).map_err(|e| MapIoError::Io {
            path: pgm.display().to_string(),
            source: e,
        })?;
        Self::from_pgm_bytes(&bytes, meta.resolution, Pose2::new(meta.origin[0], meta.origin[1], meta.origin[2]))
    }

    pub fn save(&self, pgm: &FsPath, sidecar: &FsPath) -> Result<(), MapIoError> {
        let io = |p: &FsPath| {
            let p = p.display().to_string();
            move |e| MapIoError::Io { path: p, source: e }
        };
        std::fs::write(pgm, self.to_pgm_bytes()).map_err(io(pgm))?;
        let name = pgm.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let yaml = serde_yaml::to_string(&self.metadata(&name)).map_err(|e| MapIoError::Metadata(e.to_string()))?;
        std::fs::write(sidecar, yaml).map_err(io(sidecar))?;
        Ok(())
    }

    /// Stable content hash (hex SHA-256 over geometry and cells).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(self.resolution.to_le_bytes());
        h.update(self.origin.x.to_le_bytes());
        h.update(self.origin.y.to_le_bytes());
        h.update(self.origin.theta.to_le_bytes());
        h.update(
            self.cells
                .iter()
                .map(|c| match c {
                    Cell::Free => 0u8,
                    Cell::Occupied => 1,
                    Cell::Unknown => 2,
                })
                .collect::<Vec<_>>(),
        );
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// True when a disk of `radius` centred at `p` overlaps any non-free cell
/// (off-grid counts as non-free).
pub fn disk_collides(grid: &OccupancyGrid, p: &Vec2, radius: f64) -> bool {
    let res = grid.resolution();
    let g = grid.to_grid_units(p);
    let r = radius / res;
    let (i0, i1) = ((g.x - r).floor() as i64, (g.x + r).floor() as i64);
    let (j0, j1) = ((g.y - r).floor() as i64, (g.y + r).floor() as i64);
    for j in j0..=j1 {
        for i in i0..=i1 {
            if grid.is_free(i, j) {
                continue;
            }
            let nx = g.x.clamp(i as f64, i as f64 + 1.0);
            let ny = g.y.clamp(j as f64, j as f64 + 1.0);
            let (dx, dy) = (g.x - nx, g.y - ny);
            if dx * dx + dy * dy < r * r {
                return true;
            }
        }
    }
    false
}
