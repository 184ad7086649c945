//! Collision-free placement refinement.
//!
//! Positions are refined by minimizing
//! `λc·J_coll + λd·J_disp + λb·J_bnd` over planar object centers, with contents of
//! containers solved first inside their container and container groups then moved
//! as rigid bodies.

pub mod lbfgsb;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetCatalog, Pose};
use crate::math::Vec2;
use crate::scene::{SceneConfiguration, Stage, Workspace};
use crate::seed;

pub use lbfgsb::{fd_gradient, minimize, MinimizeOptions, Minimum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub lambda_b: f64,
    pub margin: f64,
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_step: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda_c: 10.0,
            lambda_d: 1.0,
            lambda_b: 5.0,
            margin: 0.02,
            restarts: 8,
            max_iters: 200,
            grad_step: 1e-4,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Same configuration with the weights divided by their sum. The search runs on
    /// this copy so that a uniform rescaling of the weights yields the same iterates.
    fn normalized(&self) -> OptimizerConfig {
        let sum = self.lambda_c + self.lambda_d + self.lambda_b;
        if sum <= 0.0 {
            return self.clone();
        }
        OptimizerConfig {
            lambda_c: self.lambda_c / sum,
            lambda_d: self.lambda_d / sum,
            lambda_b: self.lambda_b / sum,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let ok = [self.lambda_c, self.lambda_d, self.lambda_b, self.margin]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.restarts >= 1
            && self.grad_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LayoutError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub coll: f64,
    pub disp: f64,
    pub bnd: f64,
}

impl CostBreakdown {
    pub fn hard_feasible(&self) -> bool {
        self.coll == 0.0 && self.bnd == 0.0
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("expected {expected} target positions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no restart reached a collision-free, in-bounds layout (best total {:.6e})", best.total)]
    InfeasibleLayout {
        best: CostBreakdown,
        /// Best layout found, for partial reports.
        scene: Box<SceneConfiguration>,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
}

/// Planar layout problem over object centers `x = [x1, y1, …, xN, yN]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutProblem {
    pub x: Vec<f64>,
    pub targets: Vec<f64>,
    pub half_footprints: Vec<Vec2>,
    pub areas: Vec<f64>,
    /// Pairs `(i, j)` with `i < j` excluded from the collision term.
    pub exempt_pairs: BTreeSet<(usize, usize)>,
    pub workspace: Workspace,
}

impl LayoutProblem {
    pub fn len(&self) -> usize {
        self.half_footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half_footprints.is_empty()
    }

    pub fn is_exempt(&self, i: usize, j: usize) -> bool {
        self.exempt_pairs.contains(&(i.min(j), i.max(j)))
    }

    fn check(&self) -> Result<(), LayoutError> {
        let n = self.len();
        for len in [self.x.len(), self.targets.len()] {
            if len != 2 * n {
                return Err(LayoutError::DimensionMismatch { expected: 2 * n, got: len });
            }
        }
        if self.areas.len() != n {
            return Err(LayoutError::DimensionMismatch { expected: n, got: self.areas.len() });
        }
        Ok(())
    }

    pub fn collision_at(&self, x: &[f64], margin: f64) -> f64 {
        let n = self.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if self.is_exempt(i, j) {
                    continue;
                }
                let (hi, hj) = (self.half_footprints[i], self.half_footprints[j]);
                let ox = (hi[0] + hj[0] + margin - (x[2 * i] - x[2 * j]).abs()).max(0.0);
                if ox == 0.0 {
                    continue;
                }
                let oy = (hi[1] + hj[1] + margin - (x[2 * i + 1] - x[2 * j + 1]).abs()).max(0.0);
                sum += ox * oy;
            }
        }
        sum
    }

    pub fn displacement_at(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|k| {
                let dx = x[2 * k] - self.targets[2 * k];
                let dy = x[2 * k + 1] - self.targets[2 * k + 1];
                self.areas[k] * (dx * dx + dy * dy)
            })
            .sum()
    }

    pub fn boundary_at(&self, x: &[f64]) -> f64 {
        let ws = &self.workspace;
        let mut sum = 0.0;
        for k in 0..self.len() {
            for a in 0..2 {
                let h = self.half_footprints[k][a];
                let over = (x[2 * k + a] + h - ws.max[a]).max(0.0);
                let under = (ws.min[a] - (x[2 * k + a] - h)).max(0.0);
                sum += over * over + under * under;
            }
        }
        sum
    }

    pub fn cost_at(&self, x: &[f64], cfg: &OptimizerConfig) -> CostBreakdown {
        let coll = self.collision_at(x, cfg.margin);
        let disp = self.displacement_at(x);
        let bnd = self.boundary_at(x);
        CostBreakdown {
            total: cfg.lambda_c * coll + cfg.lambda_d * disp + cfg.lambda_b * bnd,
            coll,
            disp,
            bnd,
        }
    }
}

pub fn collision_cost(p: &LayoutProblem, margin: f64) -> f64 {
    p.collision_at(&p.x, margin)
}

pub fn displacement_cost(p: &LayoutProblem) -> f64 {
    p.displacement_at(&p.x)
}

pub fn boundary_cost(p: &LayoutProblem) -> f64 {
    p.boundary_at(&p.x)
}

pub fn total_cost(p: &LayoutProblem, cfg: &OptimizerConfig) -> CostBreakdown {
    p.cost_at(&p.x, cfg)
}

/// Content index → container index, one level deep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainmentForest {
    pub assignments: BTreeMap<usize, usize>,
}

impl ContainmentForest {
    pub fn exempt_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.assignments.iter().map(|(&c, &r)| (c.min(r), c.max(r))).collect()
    }

    pub fn contents_of(&self, container: usize) -> Vec<usize> {
        self.assignments.iter().filter(|(_, &r)| r == container).map(|(&c, _)| c).collect()
    }

    pub fn containers(&self) -> BTreeSet<usize> {
        self.assignments.values().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// An object goes into the smallest receptacle whose footprint encloses its own and
/// whose box volume is larger. Nested candidates are flattened onto the outermost
/// container so no container is itself a content.
pub fn assign_containers(scene: &SceneConfiguration, catalog: &AssetCatalog) -> Result<ContainmentForest, LayoutError> {
    let assets = scene
        .objects
        .iter()
        .map(|o| catalog.get(&o.asset_id).ok_or_else(|| LayoutError::UnknownAsset(o.asset_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut direct = BTreeMap::new();
    for (c, obj) in scene.objects.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (r, host) in scene.objects.iter().enumerate() {
            if r == c || !assets[r].receptacle {
                continue;
            }
            let vr = assets[r].volume();
            if host.aabb().contains_footprint(obj.aabb()) && assets[c].volume() < vr {
                let better = match best {
                    None => true,
                    Some((v, idx)) => vr < v || (vr == v && r < idx),
                };
                if better {
                    best = Some((vr, r));
                }
            }
        }
        if let Some((_, r)) = best {
            direct.insert(c, r);
        }
    }
    let mut assignments = BTreeMap::new();
    for (&c, &r) in &direct {
        let mut root = r;
        let mut guard = 0;
        while let Some(&up) = direct.get(&root) {
            root = up;
            guard += 1;
            if guard > direct.len() {
                break;
            }
        }
        assignments.insert(c, root);
    }
    // Anything that ended up as a container must not also be a content.
    let hosts: BTreeSet<usize> = assignments.values().copied().collect();
    assignments.retain(|c, _| !hosts.contains(c));
    Ok(ContainmentForest { assignments })
}

/// Builds the layout problem for `scene` with object centers at `targets`.
pub fn build_problem(
    scene: &SceneConfiguration,
    catalog: &AssetCatalog,
    targets: &[Vec2],
    forest: &ContainmentForest,
) -> Result<LayoutProblem, LayoutError> {
    if targets.len() != scene.len() {
        return Err(LayoutError::DimensionMismatch { expected: scene.len(), got: targets.len() });
    }
    let mut half_footprints = Vec::with_capacity(scene.len());
    let mut areas = Vec::with_capacity(scene.len());
    for obj in &scene.objects {
        let asset = catalog.get(&obj.asset_id).ok_or_else(|| LayoutError::UnknownAsset(obj.asset_id.clone()))?;
        let h = obj.aabb().half_extents();
        half_footprints.push([h[0], h[1]]);
        areas.push(4.0 * asset.half_extents[0] * asset.half_extents[1]);
    }
    let flat: Vec<f64> = targets.iter().flat_map(|t| [t[0], t[1]]).collect();
    Ok(LayoutProblem {
        x: flat.clone(),
        targets: flat,
        half_footprints,
        areas,
        exempt_pairs: forest.exempt_pairs(),
        workspace: scene.workspace,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub cost: CostBreakdown,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LayoutOutcome {
    pub scene: SceneConfiguration,
    pub cost: CostBreakdown,
    pub forest: ContainmentForest,
    pub restarts: Vec<RestartSummary>,
    /// Cost history of the winning restart's global stage.
    pub history: Vec<f64>,
}

struct RestartResult {
    x: Vec<f64>,
    cost: CostBreakdown,
    iterations: usize,
    history: Vec<f64>,
}

fn options(cfg: &OptimizerConfig) -> MinimizeOptions {
    MinimizeOptions {
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        grad_step: cfg.grad_step,
        initial_step: (cfg.margin * 0.5).max(1e-3),
        memory: 8,
    }
}

fn perturb(rng: &mut ChaCha8Rng, sigma: f64, v: &mut [f64]) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for x in v.iter_mut() {
        *x += normal.sample(rng);
    }
}

/// Separate any residual overlaps left by the smooth solver: each overlapping pair
/// of groups is pushed apart along the axis of least penetration.
fn polish(problem: &LayoutProblem, groups: &[Vec<usize>], base: &[f64], z: &mut [f64], lo: &[f64], hi: &[f64], margin: f64) {
    let n = problem.len();
    let mut group_of = vec![0; n];
    for (g, members) in groups.iter().enumerate() {
        for &m in members {
            group_of[m] = g;
        }
    }
    'sweep: for _ in 0..500 {
        let x = expand(groups, base, z, n);
        for i in 0..n {
            for j in i + 1..n {
                let (gi, gj) = (group_of[i], group_of[j]);
                if gi == gj || problem.is_exempt(i, j) {
                    continue;
                }
                let (hi_, hj) = (problem.half_footprints[i], problem.half_footprints[j]);
                let o = [0, 1].map(|a| hi_[a] + hj[a] + margin - (x[2 * i + a] - x[2 * j + a]).abs());
                if o[0] <= 0.0 || o[1] <= 0.0 {
                    continue;
                }
                let a = if o[0] <= o[1] { 0 } else { 1 };
                let push = o[a] + 1e-12;
                let dir = if x[2 * i + a] >= x[2 * j + a] { 1.0 } else { -1.0 };
                let (ki, kj) = (2 * gi + a, 2 * gj + a);
                // Share the push, letting the other group take up what a bound blocks.
                let want_i = (z[ki] + dir * push * 0.5).clamp(lo[ki], hi[ki]) - z[ki];
                let rest = push - want_i.abs();
                let want_j = (z[kj] - dir * rest).clamp(lo[kj], hi[kj]) - z[kj];
                let rest2 = push - want_i.abs() - want_j.abs();
                let extra_i = if rest2 > 0.0 {
                    (z[ki] + want_i + dir * rest2).clamp(lo[ki], hi[ki]) - z[ki] - want_i
                } else {
                    0.0
                };
                z[ki] += want_i + extra_i;
                z[kj] += want_j;
                if want_i != 0.0 || want_j != 0.0 || extra_i != 0.0 {
                    continue 'sweep;
                }
            }
        }
        break;
    }
}

/// Object centers from group offsets: `x_m = base_m + z_g` for each member `m` of group `g`.
fn expand(groups: &[Vec<usize>], base: &[f64], z: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; 2 * n];
    for (g, members) in groups.iter().enumerate() {
        for &m in members {
            x[2 * m] = base[2 * m] + z[2 * g];
            x[2 * m + 1] = base[2 * m + 1] + z[2 * g + 1];
        }
    }
    x
}

fn run_restart(problem: &LayoutProblem, forest: &ContainmentForest, cfg: &OptimizerConfig, restart: usize) -> RestartResult {
    let n = problem.len();
    let opts = options(cfg);
    let search = cfg.normalized();
    let scale = cfg.lambda_c + cfg.lambda_d + cfg.lambda_b;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::stream::OPTIMIZER, restart as u64));
    let sigma = if restart == 0 { 0.0 } else { 2.0 * cfg.margin };
    let mut base = problem.targets.clone();

    // Contents first, each container's set inside that container's footprint.
    for container in forest.containers() {
        let contents = forest.contents_of(container);
        let rh = problem.half_footprints[container];
        let rc = [problem.targets[2 * container], problem.targets[2 * container + 1]];
        let inner_ws = Workspace {
            min: [rc[0] - rh[0], rc[1] - rh[1]],
            max: [rc[0] + rh[0], rc[1] + rh[1]],
            table_height: problem.workspace.table_height,
        };
        let sub = LayoutProblem {
            x: contents.iter().flat_map(|&c| [base[2 * c], base[2 * c + 1]]).collect(),
            targets: contents.iter().flat_map(|&c| [problem.targets[2 * c], problem.targets[2 * c + 1]]).collect(),
            half_footprints: contents.iter().map(|&c| problem.half_footprints[c]).collect(),
            areas: contents.iter().map(|&c| problem.areas[c]).collect(),
            exempt_pairs: BTreeSet::new(),
            workspace: inner_ws,
        };
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for h in &sub.half_footprints {
            for a in 0..2 {
                let (l, u) = (inner_ws.min[a] + h[a], inner_ws.max[a] - h[a]);
                lo.push(l.min(u));
                hi.push(u.max(l));
            }
        }
        let mut x0 = sub.targets.clone();
        perturb(&mut rng, sigma, &mut x0);
        let m = minimize(|x: &[f64]| sub.cost_at(x, &search).total, &x0, &lo, &hi, &opts);
        let singletons: Vec<Vec<usize>> = (0..contents.len()).map(|k| vec![k]).collect();
        let mut z = m.x.clone();
        let zero = vec![0.0; z.len()];
        polish(&sub, &singletons, &zero, &mut z, &lo, &hi, cfg.margin);
        for (k, &c) in contents.iter().enumerate() {
            base[2 * c] = z[2 * k];
            base[2 * c + 1] = z[2 * k + 1];
        }
    }

    // Rigid groups: each container with its contents, every other object alone.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if forest.assignments.contains_key(&i) {
            continue;
        }
        let mut g = vec![i];
        g.extend(forest.contents_of(i));
        groups.push(g);
    }
    let ws = &problem.workspace;
    let mut lo = vec![f64::NEG_INFINITY; 2 * groups.len()];
    let mut hi = vec![f64::INFINITY; 2 * groups.len()];
    for (g, members) in groups.iter().enumerate() {
        for &m in members {
            for a in 0..2 {
                let h = problem.half_footprints[m][a];
                lo[2 * g + a] = lo[2 * g + a].max(ws.min[a] + h - base[2 * m + a]);
                hi[2 * g + a] = hi[2 * g + a].min(ws.max[a] - h - base[2 * m + a]);
            }
        }
        for a in 0..2 {
            if lo[2 * g + a] > hi[2 * g + a] {
                // Group wider than the workspace: pin it at the midpoint of the
                // empty interval and let the boundary term report it.
                let mid = 0.5 * (lo[2 * g + a] + hi[2 * g + a]);
                lo[2 * g + a] = mid;
                hi[2 * g + a] = mid;
            }
        }
    }
    let mut z0 = vec![0.0; 2 * groups.len()];
    perturb(&mut rng, sigma, &mut z0);
    let objective = |z: &[f64]| problem.cost_at(&expand(&groups, &base, z, n), &search).total;
    let m = minimize(objective, &z0, &lo, &hi, &opts);
    let mut z = m.x.clone();
    polish(problem, &groups, &base, &mut z, &lo, &hi, cfg.margin);
    let x = expand(&groups, &base, &z, n);
    RestartResult {
        cost: problem.cost_at(&x, cfg),
        x,
        iterations: m.iterations,
        history: if scale > 0.0 { m.history.iter().map(|h| h * scale).collect() } else { m.history },
    }
}

/// Refine `scene` toward per-object planar `targets`.
///
/// z and yaw are left as they are. The returned scene is marked refined; when no
/// restart reaches zero collision and boundary cost the best attempt is returned
/// inside [`LayoutError::InfeasibleLayout`].
pub fn optimize_layout(
    scene: &SceneConfiguration,
    catalog: &AssetCatalog,
    targets: &[Vec2],
    cfg: &OptimizerConfig,
) -> Result<LayoutOutcome, LayoutError> {
    cfg.validate()?;
    if targets.len() != scene.len() {
        return Err(LayoutError::DimensionMismatch { expected: scene.len(), got: targets.len() });
    }
    let mut at_targets = scene.clone();
    for (i, t) in targets.iter().enumerate() {
        let p = *at_targets.objects[i].pose();
        at_targets
            .set_pose(catalog, i, Pose::new([t[0], t[1], p.position[2]], p.orientation))
            .map_err(|_| LayoutError::UnknownAsset(scene.objects[i].asset_id.clone()))?;
    }
    let forest = assign_containers(&at_targets, catalog)?;
    let problem = build_problem(&at_targets, catalog, targets, &forest)?;
    problem.check()?;

    let results: Vec<RestartResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&problem, &forest, cfg, r))
        .collect();
    let key = |r: &RestartResult| (!r.cost.hard_feasible(), r.cost.total);
    let best = results
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let winner = &results[best];
    let mut refined = scene.clone();
    for i in 0..scene.len() {
        let p = *refined.objects[i].pose();
        refined
            .set_pose(catalog, i, Pose::new([winner.x[2 * i], winner.x[2 * i + 1], p.position[2]], p.orientation))
            .map_err(|_| LayoutError::UnknownAsset(scene.objects[i].asset_id.clone()))?;
    }
    refined.stage = Stage::Refined;
    let summaries = results
        .iter()
        .enumerate()
        .map(|(restart, r)| RestartSummary { restart, cost: r.cost, iterations: r.iterations })
        .collect();
    if !winner.cost.hard_feasible() {
        return Err(LayoutError::InfeasibleLayout { best: winner.cost, scene: Box::new(refined) });
    }
    Ok(LayoutOutcome {
        scene: refined,
        cost: winner.cost,
        forest,
        restarts: summaries,
        history: winner.history.clone(),
    })
}
