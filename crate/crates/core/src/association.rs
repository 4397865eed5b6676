//! Detection-to-map association as a minimum-cost bipartite matching.
//!
//! Each detection becomes a ray through its box center. Rays and in-region
//! map lights form a complete bipartite graph whose edge weights are capped
//! ray/point distances. The smaller side is padded with dummy nodes at the
//! cap cost and the square problem is solved exactly with the Hungarian
//! method. Pairs cheaper than the acceptance threshold are kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_center, pixel_ray, ray_point_distance, CameraId, CameraModel, Ray};
use crate::hdmap::{HdMap, LightClass, MappedTrafficLight, DEFAULT_REGION_M};
use crate::ingest::{EgoPose, Nanos};

pub const DEFAULT_COST_CAP_M: f64 = 10.0;
pub const DEFAULT_ACCEPT_M: f64 = 2.0;

/// A classified bounding box from one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection", into = "RawDetection")]
pub struct Detection {
    pub timestamp: Nanos,
    pub camera_id: CameraId,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    pub cls: LightClass,
    pub confidence: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    t: Nanos,
    camera: CameraId,
    bbox: [f64; 4],
    class: LightClass,
    conf: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(r: RawDetection) -> Result<Self> {
        Detection::new(r.t, r.camera, r.bbox, r.class, r.conf)
    }
}

impl From<Detection> for RawDetection {
    fn from(d: Detection) -> Self {
        RawDetection {
            t: d.timestamp,
            camera: d.camera_id,
            bbox: d.bbox,
            class: d.cls,
            conf: d.confidence,
        }
    }
}

impl Detection {
    pub fn new(timestamp: Nanos, camera_id: CameraId, bbox: [f64; 4], cls: LightClass, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid("conf", format!("{confidence} not in [0, 1]")));
        }
        if !bbox.iter().all(|v| v.is_finite()) || bbox[0] >= bbox[2] || bbox[1] >= bbox[3] {
            return Err(Error::invalid("bbox", format!("{bbox:?} must satisfy x1 < x2 and y1 < y2")));
        }
        Ok(Self {
            timestamp,
            camera_id,
            bbox,
            cls,
            confidence,
        })
    }

    fn check_frame(&self, camera: &CameraModel) -> Result<()> {
        let [x1, y1, x2, y2] = self.bbox;
        if x1 < 0.0 || y1 < 0.0 || x2 > camera.width as f64 || y2 > camera.height as f64 {
            return Err(Error::invalid(
                "bbox",
                format!("{:?} outside {}x{} frame of {}", self.bbox, camera.width, camera.height, camera.id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationParams {
    pub region: f64,
    pub cap: f64,
    pub accept: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            region: DEFAULT_REGION_M,
            cap: DEFAULT_COST_CAP_M,
            accept: DEFAULT_ACCEPT_M,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("region", self.region), ("cap", self.cap), ("accept", self.accept)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if self.accept > self.cap {
            return Err(Error::invalid(
                "accept",
                format!("{} exceeds cost cap {}", self.accept, self.cap),
            ));
        }
        Ok(())
    }
}

/// Square cost matrix; rows are rays, columns are lights. Rows at or after
/// `real_rows` and columns at or after `real_cols` are dummies.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
    real_rows: usize,
    real_cols: usize,
}

impl CostMatrix {
    /// Wraps an already square matrix with no dummy nodes.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("cost matrix is not square".into()));
        }
        Ok(Self {
            n,
            data: rows.concat(),
            real_rows: n,
            real_cols: n,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn is_dummy_row(&self, row: usize) -> bool {
        row >= self.real_rows
    }

    pub fn is_dummy_col(&self, col: usize) -> bool {
        col >= self.real_cols
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).take(self.n).map(<[f64]>::to_vec).collect()
    }
}

pub fn build_cost_matrix(rays: &[Ray], lights: &[&MappedTrafficLight], cap: f64) -> Result<CostMatrix> {
    if cap.is_nan() || cap <= 0.0 {
        return Err(Error::invalid("cap", format!("{cap} must be positive")));
    }
    let n = rays.len().max(lights.len());
    let mut data = vec![cap; n * n];
    for (i, ray) in rays.iter().enumerate() {
        for (j, light) in lights.iter().enumerate() {
            data[i * n + j] = ray_point_distance(ray, &light.position).min(cap);
        }
    }
    Ok(CostMatrix {
        n,
        data,
        real_rows: rays.len(),
        real_cols: lights.len(),
    })
}

/// Minimum-cost perfect matching as `(row, col)` pairs sorted by row.
///
/// O(n^3) shortest augmenting paths with potentials. Among all optimal
/// matchings the one with the lexicographically smallest column sequence is
/// returned.
pub fn hungarian_min_cost(matrix: &CostMatrix) -> Result<Vec<(usize, usize)>> {
    let n = matrix.n;
    if matrix.data.len() != n * n {
        return Err(Error::Contract("cost matrix is not square".into()));
    }
    if let Some(bad) = matrix.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Contract(format!("cost entry {bad} is negative or not finite")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = |i: usize, j: usize| matrix.data[(i - 1) * n + (j - 1)];

    // 1-based potentials; col_row[j] is the row matched to column j, 0 = none
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    // Every optimal matching lives on the zero-reduced-cost edges of the
    // optimal dual; pick the lexicographically smallest one there.
    let scale = matrix.data.iter().fold(1.0f64, |m, &x| m.max(x));
    let eps = 1e-11 * scale;
    let tight: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n + 1, k % n + 1);
            a(i, j) - u[i] - v[j] <= eps
        })
        .collect();
    let mut row_to_col = vec![0usize; n];
    let mut col_to_row = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_row[j] - 1] = j - 1;
        col_to_row[j - 1] = col_row[j] - 1;
    }
    lexicographic_refine(n, &tight, &mut row_to_col, &mut col_to_row);

    Ok(row_to_col.into_iter().enumerate().collect())
}

fn lexicographic_refine(n: usize, tight: &[bool], row_to_col: &mut [usize], col_to_row: &mut [usize]) {
    let mut row_fixed = vec![false; n];
    let mut col_fixed = vec![false; n];
    for r in 0..n {
        for c in 0..n {
            if col_fixed[c] || !tight[r * n + c] {
                continue;
            }
            if row_to_col[r] == c {
                break;
            }
            // Move r onto c, then re-match the displaced row to r's old column.
            let old_col = row_to_col[r];
            let displaced = col_to_row[c];
            let snapshot = (row_to_col.to_vec(), col_to_row.to_vec());
            row_to_col[r] = c;
            col_to_row[c] = r;
            row_fixed[r] = true;
            col_fixed[c] = true;
            let mut visited = vec![false; n];
            if augment(displaced, old_col, n, tight, &row_fixed, &col_fixed, row_to_col, col_to_row, &mut visited) {
                break;
            }
            row_to_col.copy_from_slice(&snapshot.0);
            col_to_row.copy_from_slice(&snapshot.1);
            row_fixed[r] = false;
            col_fixed[c] = false;
        }
        row_fixed[r] = true;
        col_fixed[row_to_col[r]] = true;
    }
}

/// Kuhn-style augmenting path from `row` to the free column `target`.
#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    n: usize,
    tight: &[bool],
    row_fixed: &[bool],
    col_fixed: &[bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    visited: &mut [bool],
) -> bool {
    for c in 0..n {
        if col_fixed[c] || visited[c] || !tight[row * n + c] {
            continue;
        }
        visited[c] = true;
        let ok = if c == target {
            true
        } else {
            let next = col_to_row[c];
            !row_fixed[next] && augment(next, target, n, tight, row_fixed, col_fixed, row_to_col, col_to_row, visited)
        };
        if ok {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
        }
    }
    false
}

pub fn total_cost(matrix: &CostMatrix, assignment: &[(usize, usize)]) -> f64 {
    assignment.iter().map(|&(r, c)| matrix.get(r, c)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Association {
    pub detection: usize,
    pub light_id: String,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssociationMode {
    /// Globally optimal one-to-one matching.
    #[default]
    Global,
    /// Each detection independently takes its closest light.
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationOutcome {
    pub associations: Vec<Association>,
    /// Detection indices matched to a dummy or rejected by the threshold.
    pub unassociated: Vec<usize>,
    /// Ids of the in-region lights, in cost-matrix column order.
    pub lights: Vec<String>,
    pub matrix: CostMatrix,
}

/// Associates one camera frame. `camera` must already be expressed in the
/// world frame (see [`CameraModel::placed`]).
pub fn associate(
    detections: &[Detection],
    camera: &CameraModel,
    map: &HdMap,
    ego_pose: &EgoPose,
    params: &AssociationParams,
) -> Result<AssociationOutcome> {
    associate_with(AssociationMode::Global, detections, camera, map, ego_pose, params)
}

pub fn associate_with(
    mode: AssociationMode,
    detections: &[Detection],
    camera: &CameraModel,
    map: &HdMap,
    ego_pose: &EgoPose,
    params: &AssociationParams,
) -> Result<AssociationOutcome> {
    params.validate()?;
    let mut rays = Vec::with_capacity(detections.len());
    for d in detections {
        if d.camera_id != camera.id {
            return Err(Error::Contract(format!(
                "detection from {} passed with camera {}",
                d.camera_id, camera.id
            )));
        }
        d.check_frame(camera)?;
        rays.push(pixel_ray(camera, &bbox_center(&d.bbox))?);
    }
    let lights = map.lights_in_region(ego_pose, params.region);
    let matrix = build_cost_matrix(&rays, &lights, params.cap)?;

    let pairs: Vec<(usize, usize)> = match mode {
        AssociationMode::Global => hungarian_min_cost(&matrix)?
            .into_iter()
            .filter(|&(r, c)| !matrix.is_dummy_row(r) && !matrix.is_dummy_col(c))
            .collect(),
        AssociationMode::Nearest => (0..rays.len())
            .filter_map(|r| {
                (0..lights.len())
                    .min_by(|&a, &b| matrix.get(r, a).total_cmp(&matrix.get(r, b)))
                    .map(|c| (r, c))
            })
            .collect(),
    };

    let mut associations = Vec::new();
    let mut matched = vec![false; detections.len()];
    for (r, c) in pairs {
        let cost = matrix.get(r, c);
        if cost < params.accept {
            matched[r] = true;
            associations.push(Association {
                detection: r,
                light_id: lights[c].id.clone(),
                cost,
            });
        }
    }
    let unassociated = (0..detections.len()).filter(|&i| !matched[i]).collect();
    Ok(AssociationOutcome {
        associations,
        unassociated,
        lights: lights.iter().map(|l| l.id.clone()).collect(),
        matrix,
    })
}
