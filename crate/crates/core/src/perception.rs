//! Synthetic sensing and pose estimation for trolleys and the collector.
//!
//! Clouds are expressed in the sensor frame: `z` forward, `x` right, `y`
//! down, with the sensor at the robot origin. The planar robot frame has `X`
//! forward and `Y` left, so `X = z_f` and `Y = -x_f`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, wrap, Pose2};
use crate::util::{fmt_g9, stream_rng};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("points are collinear")]
    Collinear,
    #[error("plane normal is nearly vertical")]
    Degenerate,
    #[error("no marker points above the intensity threshold")]
    NoDetection,
    #[error("marker clusters overlap: separation {separation} m, spread {spread} m")]
    Ambiguous { separation: f64, spread: f64 },
    #[error("cloud is inconsistent: {0}")]
    BadCloud(String),
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Intensity of the reflective strips.
pub const MARKER_INTENSITY: f64 = 5000.0;
/// Intensity of everything else.
pub const BACKGROUND_INTENSITY: f64 = 100.0;
/// Reflective points are those strictly above this level.
pub const INTENSITY_THRESHOLD: f64 = 4500.0;
const BOARD_INTENSITY: f64 = 1200.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub points: Vec<[f64; 3]>,
    pub intensity: Vec<f64>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: [f64; 3], intensity: f64) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.points.len() != self.intensity.len() {
            return Err(PerceptionError::BadCloud("points and intensity differ in length".into()));
        }
        if !self.points.iter().flatten().chain(&self.intensity).all(|v| v.is_finite()) {
            return Err(PerceptionError::BadCloud("non-finite value".into()));
        }
        Ok(())
    }

    pub fn select(&self, keep: impl Fn(&[f64; 3], f64) -> bool) -> LabeledCloud {
        let mut out = LabeledCloud::default();
        for (p, &i) in self.points.iter().zip(&self.intensity) {
            if keep(p, i) {
                out.push(*p, i);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,intensity\n");
        for (p, i) in self.points.iter().zip(&self.intensity) {
            s.push_str(&format!("{},{},{},{}\n", fmt_g9(p[0]), fmt_g9(p[1]), fmt_g9(p[2]), fmt_g9(*i)));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PerceptionError> {
        let io = |source| PerceptionError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv().as_bytes()).map_err(io)
    }
}

/// Sensor-frame coordinates of a robot-frame point `(X, Y)` at height `up`
/// above the sensor.
pub fn robot_to_sensor(p: [f64; 2], up: f64) -> [f64; 3] {
    [-p[1], -up, p[0]]
}

/// Planar robot-frame projection of a sensor-frame point.
pub fn sensor_to_robot(p: &[f64; 3]) -> [f64; 2] {
    [p[2], -p[0]]
}

/// Backboard dimensions and mounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardGeometry {
    pub length: f64,
    pub height: f64,
    /// Height of the board center below the sensor (positive is lower).
    pub center_drop: f64,
}

impl Default for BoardGeometry {
    fn default() -> Self {
        BoardGeometry {
            length: 0.52,
            height: 0.4,
            center_drop: 0.1,
        }
    }
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

/// Samples the backboard of a trolley at `relative` (trolley pose in the robot
/// frame; the board spans the trolley's local `y` axis through its origin) on
/// a regular grid with `1 / sqrt(density)` spacing. Points outside `+-fov` in
/// bearing or behind the sensor are discarded before noise is added.
pub fn render_backboard_cloud(
    relative: &Pose2,
    board: &BoardGeometry,
    density: f64,
    noise_sigma: f64,
    fov: f64,
    seed: u64,
) -> LabeledCloud {
    let mut rng = stream_rng(seed, 0);
    let spacing = 1.0 / density.max(1e-12).sqrt();
    let cols = (board.length / spacing).round().max(1.0) as usize;
    let rows = (board.height / spacing).round().max(1.0) as usize;
    let noise = gaussian(noise_sigma);
    let mut cloud = LabeledCloud::default();
    for i in 0..cols {
        let s = ((i as f64 + 0.5) / cols as f64 - 0.5) * board.length;
        let p = relative.transform_point([0.0, s]);
        let visible = p[0] > 0.0 && p[1].atan2(p[0]).abs() <= fov;
        for j in 0..rows {
            let t = ((j as f64 + 0.5) / rows as f64 - 0.5) * board.height;
            // draw noise for every sample so visibility does not shift the stream
            let n = [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)];
            if !visible {
                continue;
            }
            let q = robot_to_sensor(p, -(board.center_drop + t));
            cloud.push([q[0] + n[0], q[1] + n[1], q[2] + n[2]], BOARD_INTENSITY);
        }
    }
    cloud
}

/// Scatter of low-intensity points: floor below the sensor and far clutter.
pub fn render_clutter(count: usize, floor_drop: f64, seed: u64) -> LabeledCloud {
    let mut rng = stream_rng(seed, 1);
    let mut cloud = LabeledCloud::default();
    for k in 0..count {
        let x = rng.random_range(0.2..4.0);
        let y = rng.random_range(-2.0..2.0);
        if k % 2 == 0 {
            cloud.push(robot_to_sensor([x, y], -floor_drop), BACKGROUND_INTENSITY);
        } else {
            let up = rng.random_range(-floor_drop..1.0);
            cloud.push(robot_to_sensor([x + 3.0, y], up), BACKGROUND_INTENSITY);
        }
    }
    cloud
}

/// Keeps exactly the points with `-0.3 < y_f < 0.6` and `z_f < 2.5`.
pub fn passthrough_filter(cloud: &LabeledCloud) -> LabeledCloud {
    cloud.select(|p, _| p[1] > -0.3 && p[1] < 0.6 && p[2] < 2.5)
}

/// `A x + B y + C z + D = 0` with a unit normal and `C >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub inliers: Vec<usize>,
}

impl PlaneFit {
    pub fn distance(&self, p: &[f64; 3]) -> f64 {
        (self.a * p[0] + self.b * p[1] + self.c * p[2] + self.d).abs()
    }

    pub fn normal(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }
}

fn canonical(n: Vector3<f64>, d: f64) -> (Vector3<f64>, f64) {
    let norm = n.norm();
    let (mut n, mut d) = (n / norm, d / norm);
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.x != 0.0 {
        n.x < 0.0
    } else {
        n.y < 0.0
    };
    if flip {
        n = -n;
        d = -d;
    }
    (n, d)
}

fn least_squares_plane(points: &[[f64; 3]], idx: &[usize]) -> (Vector3<f64>, f64) {
    let k = idx.len() as f64;
    let mut c = Vector3::zeros();
    for &i in idx {
        c += Vector3::from(points[i]);
    }
    c /= k;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let r = Vector3::from(points[i]) - c;
        cov += r * r.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for j in 1..3 {
        if eig.eigenvalues[j] < eig.eigenvalues[best] {
            best = j;
        }
    }
    let n: Vector3<f64> = eig.eigenvectors.column(best).into();
    canonical(n, -n.dot(&c))
}

/// Seeded RANSAC over three-point hypotheses followed by a least-squares
/// refit on the consensus set.
pub fn ransac_plane(cloud: &LabeledCloud, threshold: f64, iterations: usize, seed: u64) -> Result<PlaneFit, PerceptionError> {
    let pts = &cloud.points;
    if pts.len() < 3 {
        return Err(PerceptionError::TooFewPoints { need: 3, got: pts.len() });
    }
    let mut rng: ChaCha8Rng = stream_rng(seed, 2);
    let scale = pts
        .iter()
        .map(|p| Vector3::from(*p).norm())
        .fold(1e-300, f64::max);
    let count_inliers = |n: &Vector3<f64>, d: f64| {
        pts.iter()
            .filter(|p| (n.dot(&Vector3::from(**p)) + d).abs() <= threshold)
            .count()
    };
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..iterations.max(1) {
        let s = sample(&mut rng, pts.len(), 3);
        let p0 = Vector3::from(pts[s.index(0)]);
        let n = (Vector3::from(pts[s.index(1)]) - p0).cross(&(Vector3::from(pts[s.index(2)]) - p0));
        if n.norm() <= 1e-12 * scale * scale {
            continue;
        }
        let (n, d) = canonical(n, -n.dot(&p0));
        let k = count_inliers(&n, d);
        if best.as_ref().map_or(true, |b| k > b.0) {
            best = Some((k, n, d));
        }
    }
    let (n, d) = match best {
        Some((_, n, d)) => (n, d),
        None => {
            // every draw was degenerate: decide collinearity from the whole set
            let all: Vec<usize> = (0..pts.len()).collect();
            let (n, d) = least_squares_plane(pts, &all);
            let spread = line_spread(pts);
            if spread <= 1e-9 * scale {
                return Err(PerceptionError::Collinear);
            }
            (n, d)
        }
    };
    let inliers_of = |n: &Vector3<f64>, d: f64| -> Vec<usize> {
        (0..pts.len())
            .filter(|&i| (n.dot(&Vector3::from(pts[i])) + d).abs() <= threshold)
            .collect()
    };
    let mut inliers = inliers_of(&n, d);
    let (mut n, mut d) = (n, d);
    if inliers.len() >= 3 {
        let (rn, rd) = least_squares_plane(pts, &inliers);
        let refit = inliers_of(&rn, rd);
        if refit.len() >= 3 {
            n = rn;
            d = rd;
            inliers = refit;
        }
    }
    if line_spread(&inliers.iter().map(|&i| pts[i]).collect::<Vec<_>>()) <= 1e-9 * scale {
        return Err(PerceptionError::Collinear);
    }
    Ok(PlaneFit {
        a: n.x,
        b: n.y,
        c: n.z,
        d,
        inliers,
    })
}

/// Second singular direction spread: zero when all points lie on one line.
fn line_spread(pts: &[[f64; 3]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let c = pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / k;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let r = Vector3::from(*p) - c;
        cov += r * r.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov / k).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1].max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrolleyEstimate {
    /// Inlier centroid projected onto the robot's plane.
    pub d_hat: [f64; 2],
    pub theta_hat: f64,
    pub rho_hat: f64,
    /// Bearing of `d_hat`.
    pub phi: f64,
    /// Visible board length implied by the view-edge geometry.
    pub l_hat: f64,
    /// Centroid after view compensation.
    pub d_cp: [f64; 2],
    pub compensated: bool,
}

impl TrolleyEstimate {
    /// Trolley pose in the robot frame.
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.d_cp[0], self.d_cp[1], self.theta_hat)
    }

    pub fn raw_pose(&self) -> Pose2 {
        Pose2::new(self.d_hat[0], self.d_hat[1], self.theta_hat)
    }
}

/// Minimum number of inliers for a usable board estimate.
pub const MIN_BOARD_INLIERS: usize = 10;
/// Boards seen shorter than `l - LENGTH_MARGIN` are treated as clipped.
pub const LENGTH_MARGIN: f64 = 0.01;

/// Visible length of a board whose clipped end sits on the view edge, from
/// the sine law in the triangle (sensor, visible centroid, clipped end).
pub fn visible_length(rho: f64, phi: f64, theta: f64, fov: f64) -> f64 {
    let theta_side = if phi >= 0.0 { theta } else { -theta };
    2.0 * rho * (fov - phi.abs()).sin() / (fov - theta_side).cos()
}

pub fn estimate_trolley(
    fit: &PlaneFit,
    cloud: &LabeledCloud,
    fov: f64,
    board_length: f64,
) -> Result<TrolleyEstimate, PerceptionError> {
    if fit.inliers.len() < MIN_BOARD_INLIERS {
        return Err(PerceptionError::TooFewPoints {
            need: MIN_BOARD_INLIERS,
            got: fit.inliers.len(),
        });
    }
    if fit.c.abs() < 1e-6 {
        return Err(PerceptionError::Degenerate);
    }
    let mut sum = [0.0; 2];
    for &i in &fit.inliers {
        let r = sensor_to_robot(&cloud.points[i]);
        sum[0] += r[0];
        sum[1] += r[1];
    }
    let k = fit.inliers.len() as f64;
    let d_hat = [sum[0] / k, sum[1] / k];
    let theta_hat = -(fit.a / fit.c).atan();
    let rho_hat = d_hat[0].hypot(d_hat[1]);
    let phi = d_hat[1].atan2(d_hat[0]);
    let l_hat = visible_length(rho_hat, phi, theta_hat, fov);
    let mut d_cp = d_hat;
    let compensated = l_hat.is_finite() && l_hat < board_length - LENGTH_MARGIN;
    if compensated {
        // shift half the missing length toward the clipped side
        let along = [-theta_hat.sin(), theta_hat.cos()];
        let side = if phi >= 0.0 { 1.0 } else { -1.0 };
        let shift = 0.5 * (board_length - l_hat.max(0.0)) * side;
        d_cp = [d_hat[0] + shift * along[0], d_hat[1] + shift * along[1]];
    }
    Ok(TrolleyEstimate {
        d_hat,
        theta_hat,
        rho_hat,
        phi,
        l_hat,
        d_cp,
        compensated,
    })
}

/// Fine trolley localization from a raw cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPipeline {
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub fov: f64,
    pub board_length: f64,
}

impl BoardPipeline {
    pub fn run(&self, cloud: &LabeledCloud, seed: u64) -> Result<TrolleyEstimate, PerceptionError> {
        let filtered = passthrough_filter(cloud);
        let fit = ransac_plane(&filtered, self.ransac_threshold, self.ransac_iterations, seed)?;
        estimate_trolley(&fit, &filtered, self.fov, self.board_length)
    }
}

/// Reflective strips on the collector's face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerLayout {
    pub separation: f64,
    /// Vertical extent of each strip.
    pub strip_height: f64,
    /// Height of the strip centers above the sensor.
    pub center_up: f64,
}

impl Default for MarkerLayout {
    fn default() -> Self {
        MarkerLayout {
            separation: 0.40,
            strip_height: 0.3,
            center_up: 0.0,
        }
    }
}

/// Two vertical strips at `+-separation / 2` along the local `y` axis of the
/// collector face at `collector_relative`, plus background clutter.
pub fn render_marker_cloud(
    collector_relative: &Pose2,
    layout: &MarkerLayout,
    points_per_marker: usize,
    noise_sigma: f64,
    clutter: usize,
    seed: u64,
) -> LabeledCloud {
    let mut rng = stream_rng(seed, 3);
    let noise = gaussian(noise_sigma);
    let mut cloud = LabeledCloud::default();
    for side in [0.5, -0.5] {
        let base = collector_relative.transform_point([0.0, side * layout.separation]);
        for k in 0..points_per_marker {
            // evenly spaced up the strip so cluster means sit on the strip center
            let frac = if points_per_marker == 1 {
                0.0
            } else {
                k as f64 / (points_per_marker - 1) as f64 - 0.5
            };
            let q = robot_to_sensor(base, layout.center_up + frac * layout.strip_height);
            let n = [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)];
            cloud.push([q[0] + n[0], q[1] + n[1], q[2] + n[2]], MARKER_INTENSITY);
        }
    }
    let bg = render_clutter(clutter, 0.6, seed);
    cloud.points.extend(bg.points);
    cloud.intensity.extend(bg.intensity);
    cloud
}

/// Collector face pose in the robot frame from its reflective strips: the
/// translation is the mean of the bright points and the heading is the face
/// normal pointing at the observer.
pub fn localize_collector(cloud: &LabeledCloud) -> Result<Pose2, PerceptionError> {
    let bright: Vec<[f64; 2]> = cloud
        .points
        .iter()
        .zip(&cloud.intensity)
        .filter(|(_, &i)| i > INTENSITY_THRESHOLD)
        .map(|(p, _)| sensor_to_robot(p))
        .collect();
    if bright.len() < 2 {
        return Err(PerceptionError::NoDetection);
    }
    let k = bright.len() as f64;
    let mean = bright.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / k, a[1] + p[1] / k]);
    let (left, right, spread) = two_means(&bright, mean);
    let diff = [left[0] - right[0], left[1] - right[1]];
    let separation = diff[0].hypot(diff[1]);
    if separation < 3.0 * spread || separation <= 1e-12 {
        return Err(PerceptionError::Ambiguous { separation, spread });
    }
    let mut normal = [diff[1], -diff[0]];
    if normal[0] * -mean[0] + normal[1] * -mean[1] < 0.0 {
        normal = [-normal[0], -normal[1]];
    }
    Ok(Pose2::new(mean[0], mean[1], normal[1].atan2(normal[0])))
}

/// 2-means seeded at the extremes of the principal axis. Returns both
/// centers and the RMS distance of points to their own center.
fn two_means(pts: &[[f64; 2]], mean: [f64; 2]) -> ([f64; 2], [f64; 2], f64) {
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let axis = [angle.cos(), angle.sin()];
    let proj = |p: &[f64; 2]| (p[0] - mean[0]) * axis[0] + (p[1] - mean[1]) * axis[1];
    let lo = pts.iter().min_by(|a, b| proj(a).total_cmp(&proj(b))).copied().unwrap_or(mean);
    let hi = pts.iter().max_by(|a, b| proj(a).total_cmp(&proj(b))).copied().unwrap_or(mean);
    let mut centers = [hi, lo];
    let mut labels = vec![0usize; pts.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let d0 = (p[0] - centers[0][0]).powi(2) + (p[1] - centers[0][1]).powi(2);
            let d1 = (p[0] - centers[1][0]).powi(2) + (p[1] - centers[1][1]).powi(2);
            let l = usize::from(d1 < d0);
            if l != labels[i] {
                labels[i] = l;
                changed = true;
            }
        }
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        for (p, &l) in pts.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
        for l in 0..2 {
            if counts[l] > 0 {
                centers[l] = [sums[l][0] / counts[l] as f64, sums[l][1] / counts[l] as f64];
            }
        }
        if !changed {
            break;
        }
    }
    let mut ss = 0.0;
    for (p, &l) in pts.iter().zip(&labels) {
        ss += (p[0] - centers[l][0]).powi(2) + (p[1] - centers[l][1]).powi(2);
    }
    let spread = (ss / pts.len() as f64).sqrt();
    // order the strips so that "left" is counterclockwise of "right" seen from the sensor
    let cross = centers[0][0] * centers[1][1] - centers[0][1] * centers[1][0];
    if cross > 0.0 {
        (centers[1], centers[0], spread)
    } else {
        (centers[0], centers[1], spread)
    }
}

/// Ground truth plus Gaussian noise, standing in for the learned detector.
pub fn coarse_estimate(truth: &Pose2, sigma_pos: f64, sigma_yaw: f64, rng: &mut ChaCha8Rng) -> Pose2 {
    let np = gaussian(sigma_pos);
    let ny = gaussian(sigma_yaw);
    let (dx, dy, dth) = (np.sample(rng), np.sample(rng), ny.sample(rng));
    Pose2::new(truth.x + dx, truth.y + dy, truth.theta + dth)
}

/// Pose of the collector face seen from `robot` in world coordinates.
pub fn collector_in_robot(robot: &Pose2, collector: &Pose2) -> Pose2 {
    compose(&robot.inverse(), collector)
}

/// Heading of a face normal wrapped for comparison.
pub fn yaw_error(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    const FOV: f64 = 0.6108652381980153; // 35 degrees

    #[test]
    fn fully_visible_board_lies_on_plane() {
        let rel = Pose2::new(1.5, 0.1, 0.2);
        let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 2000.0, 0.0, FOV, 1);
        let spacing = 1.0 / 2000f64.sqrt();
        assert_eq!(cloud.len(), ((0.52 / spacing).round() * (0.4 / spacing).round()) as usize);
        // plane through the board: robot-frame normal (cos, sin) of the yaw
        for p in &cloud.points {
            let r = sensor_to_robot(p);
            let dist = (r[0] - rel.x) * rel.theta.cos() + (r[1] - rel.y) * rel.theta.sin();
            assert!(dist.abs() < 1e-12);
        }
    }

    #[test]
    fn board_outside_view_renders_nothing() {
        let rel = Pose2::new(1.0, 1.5, 0.0);
        let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 2000.0, 0.0, FOV, 1);
        assert!(cloud.is_empty());
    }

    #[test]
    fn passthrough_examples() {
        let mut c = LabeledCloud::default();
        c.push([0.0, 0.0, 1.0], 1.0);
        c.push([0.0, 0.7, 1.0], 1.0);
        c.push([0.0, -0.3, 1.0], 1.0);
        c.push([0.0, 0.0, 2.6], 1.0);
        let f = passthrough_filter(&c);
        assert_eq!(f.points, vec![[0.0, 0.0, 1.0]]);
        assert!(passthrough_filter(&LabeledCloud::default()).is_empty());
    }

    #[test]
    fn ransac_exact_plane() {
        let mut c = LabeledCloud::default();
        for i in 0..10 {
            for j in 0..10 {
                c.push([i as f64 * 0.1, j as f64 * 0.1, 2.0], 1.0);
            }
        }
        let fit = ransac_plane(&c, 0.01, 100, 5).unwrap();
        assert!(fit.a.abs() < 1e-12 && fit.b.abs() < 1e-12 && (fit.c - 1.0).abs() < 1e-12);
        assert!((fit.d + 2.0).abs() < 1e-12);
        assert_eq!(fit.inliers.len(), 100);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = Vector3::new(0.3, -0.1, 1.0).normalize();
        let u = n.cross(&Vector3::x()).normalize();
        let v = n.cross(&u);
        let origin = Vector3::new(0.1, 0.2, 1.5);
        let mut c = LabeledCloud::default();
        for _ in 0..80 {
            let p = origin + u * rng.random_range(-0.5..0.5) + v * rng.random_range(-0.5..0.5);
            c.push([p.x, p.y, p.z], 1.0);
        }
        for _ in 0..20 {
            c.push(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.5)],
                1.0,
            );
        }
        let fit = ransac_plane(&c, 0.01, 100, 3).unwrap();
        assert!((0..80).all(|i| fit.inliers.contains(&i)));
        let cosang = Vector3::from(fit.normal()).dot(&n).abs();
        assert!(cosang.min(1.0).acos() < 0.5f64.to_radians());
    }

    #[test]
    fn ransac_noisy_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut c = LabeledCloud::default();
        for _ in 0..400 {
            c.push(
                [rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3), 1.2 + noise.sample(&mut rng)],
                1.0,
            );
        }
        let fit = ransac_plane(&c, 0.02, 100, 4).unwrap();
        assert!(fit.c.min(1.0).acos() < 1f64.to_radians());
        assert!((fit.d + 1.2).abs() < 0.01);
    }

    #[test]
    fn ransac_rejects_degenerate_input() {
        let mut c = LabeledCloud::default();
        c.push([0.0, 0.0, 1.0], 1.0);
        c.push([0.0, 0.0, 2.0], 1.0);
        assert!(matches!(ransac_plane(&c, 0.01, 10, 1), Err(PerceptionError::TooFewPoints { .. })));
        for k in 0..10 {
            c.push([0.0, 0.0, 3.0 + k as f64], 1.0);
        }
        assert!(matches!(ransac_plane(&c, 0.01, 10, 1), Err(PerceptionError::Collinear)));
    }

    fn pipeline() -> BoardPipeline {
        BoardPipeline {
            ransac_threshold: 0.01,
            ransac_iterations: 100,
            fov: FOV,
            board_length: 0.52,
        }
    }

    #[test]
    fn full_view_needs_no_compensation() {
        let rel = Pose2::new(1.6, -0.2, -0.15);
        let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 3000.0, 0.0, FOV, 9);
        let est = pipeline().run(&cloud, 9).unwrap();
        assert!(!est.compensated);
        assert_eq!(est.d_cp, est.d_hat);
        assert!(est.l_hat >= 0.52 - LENGTH_MARGIN);
        assert!((est.rho_hat - est.d_hat[0].hypot(est.d_hat[1])).abs() < 1e-12);
    }

    #[test]
    fn clipped_view_is_compensated() {
        // board center just inside the left view edge, yawed
        let bearing = 32f64.to_radians();
        let rel = Pose2::new(2.0 * bearing.cos(), 2.0 * bearing.sin(), -10f64.to_radians());
        let density = 10000.0;
        let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), density, 0.0, FOV, 2);
        let est = pipeline().run(&cloud, 2).unwrap();
        assert!(est.compensated);
        let raw_err = (est.d_hat[0] - rel.x).hypot(est.d_hat[1] - rel.y);
        let cp_err = (est.d_cp[0] - rel.x).hypot(est.d_cp[1] - rel.y);
        assert!(raw_err > 0.05, "raw {raw_err}");
        assert!(cp_err < 0.02, "compensated {cp_err}");
        let shift = (est.d_cp[0] - est.d_hat[0]).hypot(est.d_cp[1] - est.d_hat[1]);
        assert!((shift - 0.5 * (0.52 - est.l_hat).abs()).abs() < 1e-12);
        // visible extent along the board against the sine-law length
        let along = [-rel.theta.sin(), rel.theta.cos()];
        let s: Vec<f64> = cloud
            .points
            .iter()
            .map(|p| {
                let r = sensor_to_robot(p);
                (r[0] - rel.x) * along[0] + (r[1] - rel.y) * along[1]
            })
            .collect();
        let extent = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
        assert!((extent - est.l_hat).abs() < 2.0 / density.sqrt());
    }

    #[test]
    fn clipped_on_right_side_mirrors() {
        let bearing = -33f64.to_radians();
        let rel = Pose2::new(1.8 * bearing.cos(), 1.8 * bearing.sin(), 12f64.to_radians());
        let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 10000.0, 0.0, FOV, 3);
        let est = pipeline().run(&cloud, 3).unwrap();
        assert!(est.compensated);
        let raw_err = (est.d_hat[0] - rel.x).hypot(est.d_hat[1] - rel.y);
        let cp_err = (est.d_cp[0] - rel.x).hypot(est.d_cp[1] - rel.y);
        assert!(cp_err < 0.02 && cp_err < raw_err);
    }

    #[test]
    fn round_trip_on_visible_boards() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut checked = 0;
        while checked < 200 {
            let rho = rng.random_range(0.8..2.3);
            let bearing = rng.random_range(-0.35..0.35);
            let yaw = rng.random_range(-0.5..0.5);
            let rel = Pose2::new(rho * f64::cos(bearing), rho * f64::sin(bearing), yaw);
            // skip boards whose ends leave the view
            let ends = [rel.transform_point([0.0, 0.26]), rel.transform_point([0.0, -0.26])];
            if ends.iter().any(|e| e[1].atan2(e[0]).abs() > FOV - 0.01) {
                continue;
            }
            let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 2000.0, 0.0, FOV, checked);
            let est = pipeline().run(&cloud, checked).unwrap();
            assert!(!est.compensated);
            assert!((est.d_cp[0] - rel.x).abs() < 1e-3 && (est.d_cp[1] - rel.y).abs() < 1e-3);
            assert!(wrap(est.theta_hat - yaw).abs() < 0.1f64.to_radians());
            let n = (fit_norm(&cloud) - 1.0).abs();
            assert!(n < 1e-12);
            checked += 1;
        }
    }

    fn fit_norm(cloud: &LabeledCloud) -> f64 {
        let f = ransac_plane(&passthrough_filter(cloud), 0.01, 50, 1).unwrap();
        (f.a * f.a + f.b * f.b + f.c * f.c).sqrt()
    }

    #[test]
    fn compensation_never_hurts_on_exact_renders() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for k in 0..100 {
            let rho = rng.random_range(1.0..2.3);
            let bearing = rng.random_range(-0.7..0.7);
            let yaw = rng.random_range(-0.4..0.4);
            let rel = Pose2::new(rho * f64::cos(bearing), rho * f64::sin(bearing), yaw);
            let cloud = render_backboard_cloud(&rel, &BoardGeometry::default(), 250000.0, 0.0, FOV, k);
            let Ok(est) = pipeline().run(&cloud, k) else {
                continue;
            };
            let raw = (est.d_hat[0] - rel.x).hypot(est.d_hat[1] - rel.y);
            let cp = (est.d_cp[0] - rel.x).hypot(est.d_cp[1] - rel.y);
            assert!(cp <= raw + 1e-6, "k {k}: {cp} > {raw}");
        }
    }

    #[test]
    fn marker_examples() {
        let layout = MarkerLayout {
            separation: 1.0,
            ..Default::default()
        };
        let face = Pose2::new(1.0, 0.0, PI);
        let cloud = render_marker_cloud(&face, &layout, 50, 0.0, 200, 4);
        let bright: Vec<_> = cloud.points.iter().zip(&cloud.intensity).filter(|(_, &i)| i > INTENSITY_THRESHOLD).collect();
        assert_eq!(bright.len(), 100);
        let est = localize_collector(&cloud).unwrap();
        assert!((est.x - 1.0).abs() < 1e-12 && est.y.abs() < 1e-12);
        assert!(wrap(est.theta - PI).abs() < 1e-12);
        let bg = render_clutter(300, 0.6, 1);
        assert!(bg.intensity.iter().all(|&i| i <= INTENSITY_THRESHOLD));
        assert!(matches!(localize_collector(&bg), Err(PerceptionError::NoDetection)));
    }

    #[test]
    fn marker_yaw_recovered_exactly() {
        let layout = MarkerLayout::default();
        let face = Pose2::new(2.0, 0.3, PI + 30f64.to_radians());
        let est = localize_collector(&render_marker_cloud(&face, &layout, 40, 0.0, 100, 5)).unwrap();
        assert!((est.x - face.x).abs() < 1e-9 && (est.y - face.y).abs() < 1e-9);
        assert!(wrap(est.theta - face.theta).abs() < 1e-9);
    }

    #[test]
    fn marker_noise_monte_carlo() {
        let layout = MarkerLayout::default();
        let face = Pose2::new(1.8, -0.2, PI - 0.2);
        for seed in 0..100 {
            let est = localize_collector(&render_marker_cloud(&face, &layout, 200, 0.005, 100, seed)).unwrap();
            assert!((est.x - face.x).hypot(est.y - face.y) < 0.005);
            assert!(wrap(est.theta - face.theta).abs() < 1f64.to_radians());
        }
    }

    #[test]
    fn marker_localization_is_rotation_equivariant() {
        let layout = MarkerLayout::default();
        let face = Pose2::new(1.5, 0.4, PI + 0.3);
        let base = localize_collector(&render_marker_cloud(&face, &layout, 30, 0.0, 0, 6)).unwrap();
        for gamma in [0.3, -1.0, 2.5] {
            let rot = Pose2::new(0.0, 0.0, gamma);
            let turned = compose(&rot, &face);
            let est = localize_collector(&render_marker_cloud(&turned, &layout, 30, 0.0, 0, 6)).unwrap();
            let want = compose(&rot, &base);
            assert!((est.x - want.x).abs() < 1e-9 && (est.y - want.y).abs() < 1e-9);
            assert!(wrap(est.theta - want.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn overlapping_markers_are_ambiguous() {
        let layout = MarkerLayout {
            separation: 0.01,
            ..Default::default()
        };
        let cloud = render_marker_cloud(&Pose2::new(1.5, 0.0, PI), &layout, 100, 0.02, 0, 7);
        assert!(matches!(localize_collector(&cloud), Err(PerceptionError::Ambiguous { .. })));
    }

    #[test]
    fn rendering_is_seed_deterministic() {
        let rel = Pose2::new(1.2, 0.1, 0.1);
        let a = render_backboard_cloud(&rel, &BoardGeometry::default(), 2000.0, 0.005, FOV, 77);
        let b = render_backboard_cloud(&rel, &BoardGeometry::default(), 2000.0, 0.005, FOV, 77);
        assert_eq!(a.to_csv(), b.to_csv());
        let fa = ransac_plane(&a, 0.01, 100, 3).unwrap();
        let fb = ransac_plane(&b, 0.01, 100, 3).unwrap();
        assert_eq!(fa, fb);
    }
}
