//! Acceptance checks with their independent oracles. Each check returns a
//! report instead of panicking so the CLI and the test suite share them.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{cbf_row, cbf_value, clf_row, clf_value, solve_qp, CbfParams, ClfParams, QpProblem, QpStatus, Row};
use crate::geometry::{wrap, Pose2};
use crate::harness::{
    run_approach_trial, run_batch, run_full_mission, sample_initial_poses, steps_to_csv, trial_seed, ControllerChoice,
    HarnessError, RunResult, ScenarioConfig,
};
use crate::mission::matches_stage_language;
use crate::perception::{render_backboard_cloud, render_clutter};
use crate::planner::{plan_astar, solve_quintic, BoundaryState, OccupancyGrid, PlannerError};
use crate::util::stream_rng;
use crate::vehicle::{error_dynamics, step_unicycle, ControlInput};

/// Built-in four-trolley scenario.
pub const MISSION_DEMO: &str = include_str!("../scenarios/mission_demo.json");

pub const CRITERIA: [u8; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}. {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "controller comparison",
        2 => "view invariance",
        3 => "Lyapunov decrease",
        4 => "QP oracle",
        5 => "row derivatives",
        6 => "perception accuracy",
        7 => "planner",
        8 => "full mission",
        9 => "determinism",
        _ => "unknown",
    }
}

/// Runs one check; setup errors count as a failure.
pub fn run_criterion(id: u8, seed: u64) -> CriterionReport {
    let start = Instant::now();
    let outcome = match id {
        1 => controller_comparison(seed),
        2 => view_invariance(seed),
        3 => lyapunov_decrease(seed),
        4 => qp_oracle(seed),
        5 => row_derivatives(seed),
        6 => perception_accuracy(seed),
        7 => planner_check(seed),
        8 => full_mission(seed),
        9 => determinism(seed),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionReport {
        id,
        title: title(id),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionReport> {
    CRITERIA.iter().map(|&id| run_criterion(id, seed)).collect()
}

type Check = Result<(bool, String), HarnessError>;

fn within(start: Instant, limit_s: f64) -> bool {
    start.elapsed().as_secs_f64() < limit_s
}

pub fn approach_scenario(noise_pos: f64, noise_yaw_deg: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.sim.noise_pos = noise_pos;
    cfg.sim.noise_yaw_deg = noise_yaw_deg;
    cfg
}

pub fn mission_scenario() -> Result<ScenarioConfig, HarnessError> {
    ScenarioConfig::from_json(MISSION_DEMO)
}

fn successes(results: &[RunResult], c: ControllerChoice) -> usize {
    results.iter().filter(|r| r.controller == c && r.success).count()
}

fn controller_comparison(seed: u64) -> Check {
    let start = Instant::now();
    let clean = run_batch(&approach_scenario(0.0, 0.0), &ControllerChoice::ALL, 30, seed)?;
    let noisy = run_batch(&approach_scenario(0.01, 1.0), &ControllerChoice::ALL, 30, seed)?;
    let count = |r: &[RunResult]| ControllerChoice::ALL.map(|c| successes(r, c));
    let [c0, m0, n0] = count(&clean.results);
    let [c1, m1, n1] = count(&noisy.results);
    let fast = within(start, 120.0);
    let ok = c0 == 30 && c1 >= 27 && c1 >= m1 && c1 >= n1 && fast;
    Ok((
        ok,
        format!(
            "noiseless clfcbf {c0}/30 mpc {m0}/30 nonlinear {n0}/30; noisy clfcbf {c1}/30 mpc {m1}/30 nonlinear {n1}/30"
        ),
    ))
}

/// The 100 noiseless runs shared by the view and Lyapunov checks.
fn invariance_runs(seed: u64) -> Result<Vec<RunResult>, HarnessError> {
    let cfg = approach_scenario(0.0, 0.0);
    let poses = sample_initial_poses(&cfg, 100, seed);
    poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_approach_trial(&cfg, ControllerChoice::Clfcbf, p, trial_seed(seed, i)))
        .collect()
}

fn view_invariance(seed: u64) -> Check {
    let start = Instant::now();
    let runs = invariance_runs(seed)?;
    let mut checked = 0usize;
    let mut worst = f64::INFINITY;
    let mut bad = 0usize;
    for r in &runs {
        for s in r.steps.iter().filter(|s| s.status == Some(QpStatus::Optimal)) {
            checked += 1;
            worst = worst.min(s.h);
            if !(s.h >= -1e-6) {
                bad += 1;
            }
        }
    }
    let fast = within(start, 180.0);
    Ok((
        bad == 0 && checked > 0 && fast,
        format!("{checked} optimal steps over {} runs, min h {worst:.3e}, {bad} below -1e-6", runs.len()),
    ))
}

/// A slack this small is zero up to solver round-off.
const ZERO_SLACK: f64 = 1e-12;

fn lyapunov_decrease(seed: u64) -> Check {
    let runs = invariance_runs(seed)?;
    let mut pairs = 0usize;
    let mut rises = 0usize;
    let mut worst_terminal: f64 = 0.0;
    let mut unfinished = 0usize;
    for r in &runs {
        for w in r.steps.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let optimal = a.status == Some(QpStatus::Optimal) && b.status == Some(QpStatus::Optimal);
            if !optimal || a.plan != b.plan || a.delta.abs() > ZERO_SLACK || a.v_lyap <= 1e-9 {
                continue;
            }
            pairs += 1;
            if !(b.v_lyap < a.v_lyap) {
                rises += 1;
            }
        }
        match r.steps.last() {
            Some(last) if r.success => worst_terminal = worst_terminal.max(last.v_lyap),
            _ => unfinished += 1,
        }
    }
    Ok((
        rises == 0 && unfinished == 0 && worst_terminal < 1e-4,
        format!(
            "{pairs} zero-slack pairs, {rises} without decrease; max terminal V {worst_terminal:.3e}; {unfinished} runs without terminal state"
        ),
    ))
}

const QP_V: f64 = 0.3;
const QP_W: f64 = 0.5;

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    // P = L L' + eps I, well scaled across the three variables
    let mut l = [[0.0; 3]; 3];
    for (i, row) in l.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate().take(i + 1) {
            *e = if i == j { rng.random_range(0.5..3.0) } else { rng.random_range(-1.0..1.0) };
        }
    }
    let mut p = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            p[i * 3 + j] = (0..3).map(|k| l[i][k] * l[j][k]).sum::<f64>() + if i == j { 0.05 } else { 0.0 };
        }
    }
    let q = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
    let lower = vec![-QP_V, -QP_W, rng.random_range(-0.5..0.0)];
    let upper = vec![QP_V, QP_W, rng.random_range(0.1..1.0)];
    // rows through a strictly feasible anchor keep every problem feasible
    let anchor: Vec<f64> = (0..3).map(|i| rng.random_range(lower[i] * 0.8..upper[i] * 0.8)).collect();
    let m = rng.random_range(0..=8);
    let rows = (0..m)
        .map(|_| {
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = c.iter().zip(&anchor).map(|(a, z)| a * z).sum();
            Row::le(c, lhs + rng.random_range(0.0..0.3))
        })
        .collect();
    QpProblem { p, q, rows, lower, upper }
}

/// Rows as `a . z <= b` for the oracle.
fn oracle_rows(qp: &QpProblem) -> Vec<([f64; 3], f64)> {
    qp.rows
        .iter()
        .map(|r| {
            let c = [r.coeffs[0], r.coeffs[1], r.coeffs[2]];
            match r.sense {
                crate::controller::Sense::Le => (c, r.bound),
                crate::controller::Sense::Ge => ([-c[0], -c[1], -c[2]], -r.bound),
            }
        })
        .collect()
}

/// Best third coordinate for fixed first two: a clamped scalar quadratic.
fn best_third(qp: &QpProblem, rows: &[([f64; 3], f64)], v: f64, w: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (qp.lower[2], qp.upper[2]);
    for (a, b) in rows {
        let rest = b - a[0] * v - a[1] * w;
        if a[2].abs() < 1e-14 {
            if rest < -1e-12 {
                return None;
            }
        } else if a[2] > 0.0 {
            hi = hi.min(rest / a[2]);
        } else {
            lo = lo.max(rest / a[2]);
        }
    }
    if lo > hi + 1e-12 {
        return None;
    }
    let p = &qp.p;
    let lin = qp.q[2] + p[6] * v + p[7] * w;
    let d = (-lin / p[8]).min(hi).max(lo);
    Some((d, qp.objective(&[v, w, d])))
}

/// Fourier-Motzkin: the rows implied on the remaining coordinates once
/// coordinate `k` is projected out.
fn eliminate(rows: &[([f64; 3], f64)], k: usize) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::new();
    for (a, b) in rows {
        if a[k].abs() < 1e-14 {
            let mut a = *a;
            a[k] = 0.0;
            out.push((a, *b));
            continue;
        }
        if a[k] < 0.0 {
            continue;
        }
        for (c, d) in rows.iter().filter(|(c, _)| c[k] < -1e-14) {
            let (sp, sn) = (-c[k], a[k]);
            let mut e: [f64; 3] = std::array::from_fn(|j| a[j] * sp + c[j] * sn);
            e[k] = 0.0;
            out.push((e, b * sp + d * sn));
        }
    }
    out
}

/// Interval of coordinate `k` allowed by rows in which, after fixing the
/// coordinates in `fixed`, only `k` remains.
fn interval(rows: &[([f64; 3], f64)], k: usize, fixed: &[(usize, f64)], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (lo, hi);
    for (a, b) in rows {
        let rest = b - fixed.iter().map(|&(j, x)| a[j] * x).sum::<f64>();
        if a[k].abs() < 1e-14 {
            if rest < -1e-12 {
                return None;
            }
        } else if a[k] > 0.0 {
            hi = hi.min(rest / a[k]);
        } else {
            lo = lo.max(rest / a[k]);
        }
    }
    (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
}

/// Minimum of a convex function on `[lo, hi]`: a lattice of step at most
/// `1e-3`, then repeated finer lattices around the best point.
fn line_min(lo: f64, hi: f64, mut f: impl FnMut(f64) -> Option<f64>) -> Option<(f64, f64)> {
    let mut eval = |t: f64| f(t).unwrap_or(f64::INFINITY);
    let n = ((hi - lo) / 1e-3).ceil().max(1.0) as usize;
    let mut best = (f64::INFINITY, lo);
    let mut width = (hi - lo) / n as f64;
    for i in 0..=n {
        let t = if i == n { hi } else { lo + i as f64 * width };
        let y = eval(t);
        if y < best.0 {
            best = (y, t);
        }
    }
    while width > 1e-11 {
        let a = (best.1 - width).max(lo);
        let b = (best.1 + width).min(hi);
        width = (b - a) / 20.0;
        for i in 0..=20 {
            let t = (a + i as f64 * width).min(b);
            let y = eval(t);
            if y < best.0 {
                best = (y, t);
            }
        }
    }
    best.0.is_finite().then_some(best)
}

/// Grid search with refinement: the third coordinate in closed form, the
/// second by a line search over its exact feasible range for each value of
/// the first, and the first by a line search over its own feasible range.
fn grid_oracle(qp: &QpProblem) -> Option<f64> {
    let rows = oracle_rows(qp);
    let mut all = rows.clone();
    for k in 0..3 {
        let mut a = [0.0; 3];
        a[k] = 1.0;
        all.push((a, qp.upper[k]));
        a[k] = -1.0;
        all.push((a, -qp.lower[k]));
    }
    let plane = eliminate(&all, 2);
    let axis = eliminate(&plane, 1);
    let (v0, v1) = interval(&axis, 0, &[], -QP_V, QP_V)?;
    line_min(v0, v1, |v| {
        let (w0, w1) = interval(&plane, 1, &[(0, v)], -QP_W, QP_W)?;
        line_min(w0, w1, |w| best_third(qp, &rows, v, w).map(|r| r.1)).map(|r| r.0)
    })
    .map(|r| r.0)
}

fn qp_oracle(seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = stream_rng(seed, 40);
    let problems: Vec<QpProblem> = (0..500).map(|_| random_qp(&mut rng)).collect();
    let outcomes: Vec<(f64, f64)> = problems
        .par_iter()
        .map(|qp| {
            let sol = solve_qp(qp);
            let oracle = grid_oracle(qp);
            match (sol, oracle) {
                (Ok(s), Some(f)) if s.status == QpStatus::Optimal => {
                    ((s.objective - f).abs(), s.kkt_residual)
                }
                _ => (f64::INFINITY, f64::INFINITY),
            }
        })
        .collect();
    let gap = outcomes.iter().map(|o| o.0).fold(0.0, f64::max);
    let kkt = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
    let fast = within(start, 60.0);
    Ok((
        gap < 1e-4 && kkt < 1e-8 && fast,
        format!("500 problems, max objective gap {gap:.2e}, max KKT residual {kkt:.2e}"),
    ))
}

fn row_derivatives(seed: u64) -> Check {
    let mut rng = stream_rng(seed, 50);
    let clf = ClfParams::default();
    let cbf = CbfParams::default();
    let eps = 1e-5;
    let mut worst_clf: f64 = 0.0;
    let mut worst_cbf: f64 = 0.0;
    let mut cbf_checked = 0usize;
    for _ in 0..1000 {
        let x = Pose2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.2..1.2));
        let (v_v, w_v) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let row = clf_row(&x, v_v, w_v, &clf);
        for u in [ControlInput::ZERO, ControlInput::new(1.0, 0.0), ControlInput::new(0.0, 1.0)] {
            let f = error_dynamics(&x, &u, v_v, w_v);
            let along = |s: f64| clf_value(&Pose2::new(x.x + s * f[0], x.y + s * f[1], x.theta + s * f[2]), &clf);
            let fd = (along(eps) - along(-eps)) / (2.0 * eps);
            worst_clf = worst_clf.max((row.v_dot(&u) - fd).abs());
        }

        let p = [rng.random_range(0.2..3.0), rng.random_range(-2.0..2.0)];
        let Some(row) = cbf_row(p, &cbf) else { continue };
        cbf_checked += 1;
        let u = ControlInput::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let h_at = |input: ControlInput| -> Result<f64, HarnessError> {
            let pose = step_unicycle(&Pose2::IDENTITY, &input, eps)?;
            let q = pose.inverse_transform_point(p);
            Ok(cbf_value(q[1].atan2(q[0]), &cbf))
        };
        let fd = (h_at(u)? - h_at(u.scaled(-1.0))?) / (2.0 * eps);
        worst_cbf = worst_cbf.max((row.h_dot(&u) - fd).abs());
    }
    Ok((
        worst_clf < 1e-5 && worst_cbf < 1e-5 && cbf_checked > 900,
        format!("1000 states, max |dV/dt - fd| {worst_clf:.2e}, max |dh/dt - fd| {worst_cbf:.2e} over {cbf_checked} view rows"),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn perception_accuracy(seed: u64) -> Check {
    let cfg = approach_scenario(0.0, 0.0);
    let fov = cfg.controller_params.phi_fov();
    let p = &cfg.perception;
    let pipeline = p.board_pipeline(fov);
    let mut rng = stream_rng(seed, 60);
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    let mut clipped = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut misses = 0usize;
    for k in 0..50 {
        let range = rng.random_range(1.0..2.3);
        let bearing = rng.random_range(-(fov + 0.05)..(fov + 0.05));
        let yaw = rng.random_range(-30f64..30.0).to_radians();
        let truth = Pose2::new(range * bearing.cos(), range * bearing.sin(), yaw);
        let s = rng.next_u64();
        let mut cloud = render_backboard_cloud(&truth, &p.board, p.density, 0.005, fov, s);
        let clutter = render_clutter(p.clutter, 0.6, s);
        cloud.points.extend(clutter.points);
        cloud.intensity.extend(clutter.intensity);
        let Ok(est) = pipeline.run(&cloud, s ^ k) else {
            misses += 1;
            continue;
        };
        let fine = est.pose();
        errs[0].push((fine.x - truth.x).abs());
        errs[1].push((fine.y - truth.y).abs());
        errs[2].push(wrap(fine.theta - truth.theta).abs().to_degrees());
        if est.compensated {
            let raw = est.raw_pose();
            clipped[0].push((fine.x - truth.x).abs());
            clipped[1].push((fine.y - truth.y).abs());
            clipped[2].push((raw.x - truth.x).abs());
            clipped[3].push((raw.y - truth.y).abs());
        }
    }
    let [ex, ey, eth] = errs.map(median);
    let n_clipped = clipped[0].len();
    let [cx, cy, rx, ry] = clipped.map(median);
    let accurate = ex < 0.1 && ey < 0.1 && eth < 5.0;
    let helps = n_clipped > 0 && cx < rx && cy < ry;
    Ok((
        accurate && helps && misses == 0,
        format!(
            "median |x| {ex:.4} m |y| {ey:.4} m |theta| {eth:.2} deg; {n_clipped} clipped views: compensated |x| {cx:.4} |y| {cy:.4} vs raw |x| {rx:.4} |y| {ry:.4}; {misses} misses"
        ),
    ))
}

fn random_boundary(rng: &mut ChaCha8Rng) -> BoundaryState {
    let mut r = |a: f64| [rng.random_range(-a..a), rng.random_range(-a..a)];
    BoundaryState {
        pos: r(5.0),
        vel: r(1.0),
        acc: r(1.0),
    }
}

/// Plain Dijkstra over the grid's own move set.
pub fn dijkstra_cells(grid: &OccupancyGrid, s: (usize, usize), g: (usize, usize)) -> Option<f64> {
    let w = grid.width;
    let mut dist = vec![f64::INFINITY; w * grid.height];
    let mut heap = BinaryHeap::new();
    // costs are a + b sqrt 2 with small integers; order by the exact float
    dist[s.1 * w + s.0] = 0.0;
    heap.push(Reverse((Ordered(0.0), s.1 * w + s.0)));
    while let Some(Reverse((Ordered(d), idx))) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        if idx == g.1 * w + g.0 {
            return Some(d);
        }
        for (nb, diagonal) in grid.neighbours(idx % w, idx / w) {
            let ni = nb.1 * w + nb.0;
            let nd = d + if diagonal { SQRT_2 } else { 1.0 };
            if nd < dist[ni] {
                dist[ni] = nd;
                heap.push(Reverse((Ordered(nd), ni)));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng) -> OccupancyGrid {
    let (w, h) = (rng.random_range(8..40), rng.random_range(8..40));
    let mut grid = OccupancyGrid::new(w, h, 0.1, Pose2::IDENTITY);
    let fill = rng.random_range(0.05..0.35);
    let rects: Vec<([f64; 2], [f64; 2])> = (0..(fill * (w * h) as f64 / 4.0) as usize)
        .map(|_| {
            let x = rng.random_range(0.0..w as f64 * 0.1);
            let y = rng.random_range(0.0..h as f64 * 0.1);
            ([x, y], [x + rng.random_range(0.0..0.25), y + rng.random_range(0.0..0.25)])
        })
        .collect();
    grid.fill_rects(&rects);
    grid
}

fn planner_check(seed: u64) -> Check {
    let mut rng = stream_rng(seed, 70);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (random_boundary(&mut rng), random_boundary(&mut rng));
        let t_p = rng.random_range(0.5..20.0);
        let traj = solve_quintic(&a, &b, t_p)?;
        worst = worst.max(traj.boundary_residual(&a, &b));
    }
    let mut agree = 0usize;
    let mut reachable = 0usize;
    for _ in 0..50 {
        let grid = random_grid(&mut rng);
        let free: Vec<(usize, usize)> = (0..grid.width)
            .flat_map(|i| (0..grid.height).map(move |j| (i, j)))
            .filter(|&(i, j)| !grid.blocked(i, j))
            .collect();
        if free.len() < 2 {
            agree += 1;
            continue;
        }
        let s = free[rng.random_range(0..free.len())];
        let g = free[rng.random_range(0..free.len())];
        let pose = |c: (usize, usize)| {
            let p = grid.cell_center(c.0, c.1);
            Pose2::new(p[0], p[1], 0.0)
        };
        let oracle = dijkstra_cells(&grid, s, g);
        let found = match plan_astar(&grid, &pose(s), &pose(g)) {
            Ok(path) => Some(path.cost.cells()),
            Err(PlannerError::Unreachable) => None,
            Err(e) => return Err(e.into()),
        };
        reachable += usize::from(oracle.is_some());
        let same = match (found, oracle) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        };
        agree += usize::from(same);
    }
    Ok((
        worst < 1e-9 && agree == 50,
        format!("1000 quintics, max boundary residual {worst:.2e}; A* equals Dijkstra on {agree}/50 grids ({reachable} reachable)"),
    ))
}

fn full_mission(seed: u64) -> Check {
    let start = Instant::now();
    let cfg = mission_scenario()?;
    let report = run_full_mission(&cfg, seed)?;
    let fast = within(start, 120.0);
    let xi = cfg.mission.xi;
    let tol = cfg.mission.dock_lat_tol;
    let spacing_ok =
        report.queue.spacings.len() == 3 && report.queue.spacings.iter().all(|s| (s - xi).abs() <= tol);
    let language = matches_stage_language(&report.stage_sequence(), cfg.trolleys.len());
    let spacings: Vec<String> = report.queue.spacings.iter().map(|s| format!("{s:.4}")).collect();
    Ok((
        report.success && report.docked_count == 4 && spacing_ok && language && fast,
        format!(
            "docked {} in {:.1} s simulated, spacings [{}] m (target {xi} +- {tol}), stage language {}",
            report.docked_count,
            report.duration,
            spacings.join(", "),
            if language { "ok" } else { "violated" }
        ),
    ))
}

/// Everything a batch and a mission write, as bytes.
fn artifacts(seed: u64) -> Result<Vec<u8>, HarnessError> {
    let batch = run_batch(&approach_scenario(0.01, 1.0), &ControllerChoice::ALL, 5, seed)?;
    let mut out = Vec::new();
    for r in &batch.results {
        out.extend(steps_to_csv(&r.steps).into_bytes());
        out.extend(serde_json::to_vec(r).expect("run result serializes"));
    }
    out.extend(serde_json::to_vec(&batch.summary).expect("summary serializes"));
    let mission = run_full_mission(&mission_scenario()?, seed)?;
    out.extend(steps_to_csv(&mission.steps).into_bytes());
    out.extend(serde_json::to_vec(&mission).expect("report serializes"));
    Ok(out)
}

fn determinism(seed: u64) -> Check {
    let a = artifacts(seed)?;
    let b = artifacts(seed)?;
    Ok((a == b, format!("two runs produced {} and {} bytes, {}", a.len(), b.len(), if a == b { "identical" } else { "different" })))
}
