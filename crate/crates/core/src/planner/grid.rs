use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use super::PlannerError;
use crate::geometry::Pose2;

/// Occupancy grid with a precomputed inflated copy. Cell `(i, j)` covers
/// column `i`, row `j`, with row 0 at the grid origin.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2,
    cells: Vec<bool>,
    inflated: Vec<bool>,
    inflation_radius: f64,
}

/// Exact cost of an 8-connected path as a count of straight and diagonal moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub fn cells(&self) -> f64 {
        self.straight as f64 + SQRT_2 * self.diagonal as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// Every traversed cell from start to goal.
    pub cells: Vec<(usize, usize)>,
    /// Line-of-sight decimated cell centers in world coordinates.
    pub waypoints: Vec<[f64; 2]>,
    pub cost: PathCost,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2) -> Self {
        OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![false; width * height],
            inflated: vec![false; width * height],
            inflation_radius: 0.0,
        }
    }

    /// Parses the plain-text map: a header `width height resolution` followed by
    /// `height` rows of `.` (free) and `#` (occupied). The first row is the top
    /// of the map (largest y).
    pub fn from_text(text: &str) -> Result<Self, PlannerError> {
        let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| PlannerError::MapParse("empty map".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(PlannerError::MapParse(format!("bad header {header:?}")));
        }
        let parse_err = |what: &str| PlannerError::MapParse(format!("bad {what} in header {header:?}"));
        let width: usize = fields[0].parse().map_err(|_| parse_err("width"))?;
        let height: usize = fields[1].parse().map_err(|_| parse_err("height"))?;
        let resolution: f64 = fields[2].parse().map_err(|_| parse_err("resolution"))?;
        if width == 0 || height == 0 || !(resolution > 0.0) {
            return Err(parse_err("dimensions"));
        }
        let mut grid = OccupancyGrid::new(width, height, resolution, Pose2::IDENTITY);
        let mut rows = 0;
        for (r, line) in lines.enumerate() {
            if r >= height {
                return Err(PlannerError::MapParse(format!("more than {height} rows")));
            }
            if line.chars().count() != width {
                return Err(PlannerError::MapParse(format!("row {r} has {} cells, expected {width}", line.len())));
            }
            let j = height - 1 - r;
            for (i, ch) in line.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => grid.cells[j * width + i] = true,
                    other => return Err(PlannerError::MapParse(format!("unexpected cell {other:?} in row {r}"))),
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(PlannerError::MapParse(format!("expected {height} rows, found {rows}")));
        }
        grid.inflated = grid.cells.clone();
        Ok(grid)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.width, self.height, self.resolution);
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(if self.cells[j * self.width + i] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// Marks every cell whose center lies in the axis-aligned world rectangle.
    pub fn fill_rect(&mut self, min: [f64; 2], max: [f64; 2]) {
        self.fill_rects(&[(min, max)]);
    }

    /// Marks every cell whose center lies in one of the `(min, max)` boxes,
    /// then re-inflates once.
    pub fn fill_rects(&mut self, rects: &[([f64; 2], [f64; 2])]) {
        for j in 0..self.height {
            for i in 0..self.width {
                let c = self.cell_center(i, j);
                if rects
                    .iter()
                    .any(|(lo, hi)| c[0] >= lo[0] && c[0] <= hi[0] && c[1] >= lo[1] && c[1] <= hi[1])
                {
                    self.cells[j * self.width + i] = true;
                }
            }
        }
        self.inflate(self.inflation_radius);
    }

    /// Recomputes the inflated layer: a cell is blocked when its center lies
    /// within `radius` of an occupied cell center.
    pub fn inflate(&mut self, radius: f64) {
        self.inflation_radius = radius.max(0.0);
        let r = (self.inflation_radius / self.resolution).floor() as isize;
        let r2 = (self.inflation_radius / self.resolution).powi(2) + 1e-9;
        self.inflated = self.cells.clone();
        for j in 0..self.height as isize {
            for i in 0..self.width as isize {
                if !self.cells[j as usize * self.width + i as usize] {
                    continue;
                }
                for dj in -r..=r {
                    for di in -r..=r {
                        if (di * di + dj * dj) as f64 > r2 {
                            continue;
                        }
                        let (ni, nj) = (i + di, j + dj);
                        if ni >= 0 && nj >= 0 && (ni as usize) < self.width && (nj as usize) < self.height {
                            self.inflated[nj as usize * self.width + ni as usize] = true;
                        }
                    }
                }
            }
        }
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    /// Blocked after inflation.
    pub fn blocked(&self, i: usize, j: usize) -> bool {
        self.inflated[j * self.width + i]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        self.origin
            .transform_point([(i as f64 + 0.5) * self.resolution, (j as f64 + 0.5) * self.resolution])
    }

    pub fn world_to_cell(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let local = self.origin.inverse_transform_point(p);
        let fi = (local[0] / self.resolution).floor();
        let fj = (local[1] / self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            None
        } else {
            Some((fi as usize, fj as usize))
        }
    }

    pub fn blocked_at(&self, p: [f64; 2]) -> bool {
        self.world_to_cell(p).map_or(true, |(i, j)| self.blocked(i, j))
    }

    /// Whether the straight segment between two world points stays in free
    /// inflated space, sampled at a quarter cell.
    pub fn line_of_sight(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let d = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (d / (0.25 * self.resolution)).ceil().max(1.0) as usize;
        (0..=n).all(|k| {
            let s = k as f64 / n as f64;
            !self.blocked_at([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
        })
    }

    /// Center of the free cell closest to `p` in grid steps (breadth-first,
    /// ties broken by scan order).
    pub fn nearest_free(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let (i, j) = self.world_to_cell(p)?;
        if !self.blocked(i, j) {
            return Some(self.cell_center(i, j));
        }
        let mut seen = vec![false; self.width * self.height];
        let mut queue = std::collections::VecDeque::from([(i, j)]);
        seen[j * self.width + i] = true;
        while let Some((ci, cj)) = queue.pop_front() {
            if !self.blocked(ci, cj) {
                return Some(self.cell_center(ci, cj));
            }
            for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let ni = ci as isize + di;
                let nj = cj as isize + dj;
                if ni < 0 || nj < 0 || ni >= self.width as isize || nj >= self.height as isize {
                    continue;
                }
                let k = nj as usize * self.width + ni as usize;
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back((ni as usize, nj as usize));
                }
            }
        }
        None
    }

    /// 8-connected neighbours with their move kind; diagonal moves may not
    /// cut a blocked corner.
    pub fn neighbours(&self, i: usize, j: usize) -> impl Iterator<Item = ((usize, usize), bool)> + '_ {
        const STEPS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(di, dj)| {
            let ni = i as isize + di;
            let nj = j as isize + dj;
            if ni < 0 || nj < 0 || ni >= self.width as isize || nj >= self.height as isize {
                return None;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            if self.blocked(ni, nj) {
                return None;
            }
            let diagonal = di != 0 && dj != 0;
            if diagonal && (self.blocked(ni, j) || self.blocked(i, nj)) {
                return None;
            }
            Some(((ni, nj), diagonal))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then prefer larger g, then lower index
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

/// Shortest 8-connected path on the inflated grid with an octile heuristic.
pub fn plan_astar(grid: &OccupancyGrid, start: &Pose2, goal: &Pose2) -> Result<GridPath, PlannerError> {
    let s = grid
        .world_to_cell([start.x, start.y])
        .ok_or(PlannerError::OutOfBounds("start"))?;
    let g = grid
        .world_to_cell([goal.x, goal.y])
        .ok_or(PlannerError::OutOfBounds("goal"))?;
    if grid.blocked(s.0, s.1) {
        return Err(PlannerError::StartBlocked);
    }
    if grid.blocked(g.0, g.1) {
        return Err(PlannerError::GoalBlocked);
    }
    let w = grid.width;
    let n = w * grid.height;
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let si = s.1 * w + s.0;
    let gi = g.1 * w + g.0;
    best[si] = 0.0;
    heap.push(Open {
        f: octile(s, g),
        g: 0.0,
        idx: si,
    });
    while let Some(Open { g: cost, idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == gi {
            break;
        }
        let here = (idx % w, idx / w);
        for (nb, diagonal) in grid.neighbours(here.0, here.1) {
            let ni = nb.1 * w + nb.0;
            if closed[ni] {
                continue;
            }
            let ng = cost + if diagonal { SQRT_2 } else { 1.0 };
            if ng < best[ni] {
                best[ni] = ng;
                parent[ni] = idx;
                heap.push(Open {
                    f: ng + octile(nb, g),
                    g: ng,
                    idx: ni,
                });
            }
        }
    }
    if !closed[gi] {
        return Err(PlannerError::Unreachable);
    }
    let mut cells = vec![g];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push((cur % w, cur / w));
    }
    cells.reverse();
    let mut cost = PathCost::default();
    for pair in cells.windows(2) {
        if pair[0].0 != pair[1].0 && pair[0].1 != pair[1].1 {
            cost.diagonal += 1;
        } else {
            cost.straight += 1;
        }
    }
    let waypoints = smooth(grid, &cells);
    Ok(GridPath { cells, waypoints, cost })
}

/// Greedy line-of-sight decimation: from each anchor jump to the farthest
/// visible path cell.
fn smooth(grid: &OccupancyGrid, cells: &[(usize, usize)]) -> Vec<[f64; 2]> {
    let centers: Vec<[f64; 2]> = cells.iter().map(|&(i, j)| grid.cell_center(i, j)).collect();
    let mut out = vec![centers[0]];
    let mut anchor = 0;
    while anchor + 1 < centers.len() {
        let mut next = anchor + 1;
        for k in (anchor + 2..centers.len()).rev() {
            if grid.line_of_sight(centers[anchor], centers[k]) {
                next = k;
                break;
            }
        }
        out.push(centers[next]);
        anchor = next;
    }
    out
}

impl std::fmt::Display for OccupancyGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                let ch = match (self.occupied(i, j), self.blocked(i, j)) {
                    (true, _) => '#',
                    (false, true) => '+',
                    _ => '.',
                };
                s.push(ch);
            }
            let _ = writeln!(s);
        }
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain Dijkstra over the same move set, kept independent of the A* code.
    fn dijkstra_cost(grid: &OccupancyGrid, s: (usize, usize), g: (usize, usize)) -> Option<PathCost> {
        let w = grid.width;
        let n = w * grid.height;
        let mut dist: Vec<Option<(f64, PathCost)>> = vec![None; n];
        let mut done = vec![false; n];
        dist[s.1 * w + s.0] = Some((0.0, PathCost::default()));
        loop {
            let mut pick = None;
            for i in 0..n {
                if done[i] {
                    continue;
                }
                if let Some((d, _)) = dist[i] {
                    if pick.map_or(true, |(pd, _)| d < pd) {
                        pick = Some((d, i));
                    }
                }
            }
            let (d, i) = pick?;
            if i == g.1 * w + g.0 {
                return dist[i].map(|x| x.1);
            }
            done[i] = true;
            let c = dist[i].unwrap().1;
            for (nb, diag) in grid.neighbours(i % w, i / w) {
                let ni = nb.1 * w + nb.0;
                let nd = d + if diag { SQRT_2 } else { 1.0 };
                if dist[ni].map_or(true, |(od, _)| nd < od - 1e-12) {
                    let mut nc = c;
                    if diag {
                        nc.diagonal += 1
                    } else {
                        nc.straight += 1
                    }
                    dist[ni] = Some((nd, nc));
                }
            }
        }
    }

    #[test]
    fn straight_path_on_empty_grid() {
        let mut grid = OccupancyGrid::new(30, 10, 0.1, Pose2::new(-0.5, -0.5, 0.0));
        grid.inflate(0.0);
        let p = plan_astar(&grid, &Pose2::IDENTITY, &Pose2::new(1.0, 0.0, 0.0)).unwrap();
        let length = p.cost.cells() * grid.resolution;
        assert!((length - 1.0).abs() <= 0.1 + 1e-9);
        assert_eq!(p.waypoints.len(), 2);
    }

    #[test]
    fn wall_with_gap() {
        let text = "\
10 7 0.1
.....#....
.....#....
.....#....
..........
.....#....
.....#....
.....#....
";
        let grid = OccupancyGrid::from_text(text).unwrap();
        let p = plan_astar(&grid, &Pose2::new(0.15, 0.05, 0.0), &Pose2::new(0.95, 0.05, 0.0)).unwrap();
        assert!(p.cells.contains(&(5, 3)));
        assert_eq!(Some(p.cost), dijkstra_cost(&grid, (1, 0), (9, 0)));
        for &(i, j) in &p.cells {
            assert!(!grid.blocked(i, j));
        }
    }

    #[test]
    fn walled_goal_is_unreachable() {
        let text = "\
7 7 1
.......
.#####.
.#...#.
.#...#.
.#...#.
.#####.
.......
";
        let grid = OccupancyGrid::from_text(text).unwrap();
        let r = plan_astar(&grid, &Pose2::new(0.5, 0.5, 0.0), &Pose2::new(3.5, 3.5, 0.0));
        assert_eq!(r, Err(PlannerError::Unreachable));
        let r = plan_astar(&grid, &Pose2::new(1.5, 1.5, 0.0), &Pose2::new(3.5, 3.5, 0.0));
        assert_eq!(r, Err(PlannerError::StartBlocked));
        let r = plan_astar(&grid, &Pose2::new(0.5, 0.5, 0.0), &Pose2::new(1.5, 3.5, 0.0));
        assert_eq!(r, Err(PlannerError::GoalBlocked));
    }

    #[test]
    fn inflation_contains_raw_obstacles() {
        let mut grid = OccupancyGrid::new(40, 40, 0.1, Pose2::IDENTITY);
        grid.fill_rect([1.0, 1.0], [1.5, 2.0]);
        grid.inflate(0.55);
        for j in 0..40 {
            for i in 0..40 {
                if grid.occupied(i, j) {
                    assert!(grid.blocked(i, j));
                }
            }
        }
        assert!(grid.blocked_at([0.6, 1.5]));
        assert!(!grid.blocked_at([0.3, 1.5]));
    }

    #[test]
    fn map_text_round_trip() {
        let mut grid = OccupancyGrid::new(12, 5, 0.25, Pose2::IDENTITY);
        grid.fill_rect([0.5, 0.5], [1.0, 0.8]);
        let parsed = OccupancyGrid::from_text(&grid.to_text()).unwrap();
        assert_eq!(parsed.to_text(), grid.to_text());
        assert!(OccupancyGrid::from_text("3 2 0.1\n...\n").is_err());
        assert!(OccupancyGrid::from_text("3 1 0.1\n.x.\n").is_err());
    }

    #[test]
    fn matches_dijkstra_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 50 {
            let mut grid = OccupancyGrid::new(40, 40, 1.0, Pose2::IDENTITY);
            for k in 0..grid.cells.len() {
                grid.cells[k] = rng.random_bool(0.3);
            }
            grid.inflate(0.0);
            let s = (rng.random_range(0..40), rng.random_range(0..40));
            let g = (rng.random_range(0..40), rng.random_range(0..40));
            if grid.blocked(s.0, s.1) || grid.blocked(g.0, g.1) {
                continue;
            }
            let sp = Pose2::new(s.0 as f64 + 0.5, s.1 as f64 + 0.5, 0.0);
            let gp = Pose2::new(g.0 as f64 + 0.5, g.1 as f64 + 0.5, 0.0);
            let oracle = dijkstra_cost(&grid, s, g);
            match plan_astar(&grid, &sp, &gp) {
                Ok(p) => {
                    assert_eq!(Some(p.cost), oracle);
                    assert!(p.cells.iter().all(|&(i, j)| !grid.blocked(i, j)));
                }
                Err(PlannerError::Unreachable) => assert_eq!(oracle, None),
                Err(e) => panic!("{e}"),
            }
            checked += 1;
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn astar_cells_avoid_inflated_obstacles(
            occupied in proptest::collection::vec(proptest::bool::weighted(0.15), 30 * 30),
            radius in 0.0..2.0f64,
            s in (0usize..30, 0usize..30),
            g in (0usize..30, 0usize..30),
        ) {
            let mut grid = OccupancyGrid::new(30, 30, 1.0, Pose2::IDENTITY);
            grid.cells = occupied;
            grid.inflate(radius);
            proptest::prop_assume!(!grid.blocked(s.0, s.1) && !grid.blocked(g.0, g.1));
            let sp = Pose2::new(s.0 as f64 + 0.5, s.1 as f64 + 0.5, 0.0);
            let gp = Pose2::new(g.0 as f64 + 0.5, g.1 as f64 + 0.5, 0.0);
            match plan_astar(&grid, &sp, &gp) {
                Ok(p) => {
                    proptest::prop_assert!(p.cells.iter().all(|&(i, j)| !grid.blocked(i, j)));
                    proptest::prop_assert_eq!(Some(p.cost), dijkstra_cost(&grid, s, g));
                }
                Err(PlannerError::Unreachable) => proptest::prop_assert_eq!(dijkstra_cost(&grid, s, g), None),
                Err(e) => proptest::prop_assert!(false, "{}", e),
            }
        }
    }
}
