//! Reach-to-grasp planning on a lazily validated probabilistic roadmap.
//!
//! Two cost modes share one search: the baseline (edge `α·d`, heuristic
//! `β·d(x′, goal)`) and the information-reward mode (edge `α·J(x′)·d`,
//! heuristic `β·d_A(x′, goal)`), where `J` shrinks edges ending in states
//! whose expected tactile observation differs across pose hypotheses.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use crate::cloud::PointCloudModel;
use crate::contact::{poses_in_collision, ClearanceParams};
use crate::error::{Error, Result};
use crate::kinematics::{interpolate, JointConfig, RobotModel};
use crate::rng_from_seed;
use crate::tactile::{expected_observation_at, TactileParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    Baseline,
    InfoReward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerWeights {
    pub alpha: f64,
    pub beta: f64,
    /// ρ in radians; 0 picks it from the sample so the mean degree is
    /// `target_degree`.
    pub neighbor_radius: f64,
    pub n_nodes: usize,
    pub n_local_nodes: usize,
    pub target_degree: usize,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            neighbor_radius: 0.0,
            n_nodes: 500,
            n_local_nodes: 300,
            target_degree: 10,
        }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidInput("alpha and beta must lie in [0, 1]".into()));
        }
        if !(self.alpha + self.beta > 0.0) {
            return Err(Error::InvalidInput("alpha + beta must be positive".into()));
        }
        if self.n_nodes < 2 || self.target_degree == 0 || !(self.neighbor_radius >= 0.0) {
            return Err(Error::InvalidInput("bad roadmap size".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeParams {
    pub population: usize,
    pub differential_weight: f64,
    pub crossover: f64,
    pub generations: usize,
    pub smoothness_weight: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self {
            population: 30,
            differential_weight: 0.7,
            crossover: 0.9,
            generations: 100,
            smoothness_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub weights: PlannerWeights,
    /// Sampling box half-margin around root and goals, rad.
    pub sampling_margin: f64,
    /// Roadmap nodes placed on the straight root–goal segment.
    pub straight_line_nodes: usize,
    /// A state collides when some link's d_signed exceeds this; negative
    /// values demand clearance.
    pub collision_tol: f64,
    /// Max workspace motion between collision-checked states, m.
    pub workspace_step: f64,
    pub hierarchical: bool,
    pub tube_radius: f64,
    pub de: DeParams,
    pub closing_steps: usize,
    pub goal_variance_floor: f64,
    pub max_expansions: usize,
    pub clearance: ClearanceParams,
    pub tactile: TactileParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            weights: PlannerWeights::default(),
            sampling_margin: 0.5,
            straight_line_nodes: 8,
            collision_tol: crate::contact::DEFAULT_COLLISION_TOL,
            workspace_step: 0.01,
            hierarchical: true,
            tube_radius: 0.2,
            de: DeParams::default(),
            closing_steps: 20,
            goal_variance_floor: 1e-4,
            max_expansions: 50_000,
            clearance: ClearanceParams::default(),
            tactile: TactileParams::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.tactile.validate()?;
        if !(self.workspace_step > 0.0) || !(self.tube_radius > 0.0) || !(self.goal_variance_floor > 0.0) {
            return Err(Error::InvalidInput("planner step, tube and floor must be positive".into()));
        }
        if self.closing_steps == 0 || self.de.population < 4 {
            return Err(Error::InvalidInput("closing_steps ≥ 1 and DE population ≥ 4 required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalModel {
    /// Pre-grasp configuration for the MLE hypothesis.
    pub goal: JointConfig,
    /// Goal configurations for every hypothesis that had an IK solution.
    pub hypothesis_goals: Vec<JointConfig>,
    /// Diagonal of A, floored.
    pub a_diag: Vec<f64>,
    /// Final closing configuration (arm as `goal`, fingers closed).
    pub closing_target: JointConfig,
}

impl GoalModel {
    /// A = per-joint variance of the hypothesis goals (population form).
    pub fn new(
        goal: JointConfig,
        hypothesis_goals: Vec<JointConfig>,
        closing_target: JointConfig,
        floor: f64,
    ) -> Result<Self> {
        let n = goal.dim();
        if closing_target.dim() != n || hypothesis_goals.iter().any(|g| g.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: closing_target.dim(),
            });
        }
        let mut a_diag = vec![floor; n];
        if !hypothesis_goals.is_empty() {
            let m = hypothesis_goals.len() as f64;
            for (d, a) in a_diag.iter_mut().enumerate() {
                let mean = hypothesis_goals.iter().map(|g| g[d]).sum::<f64>() / m;
                let var = hypothesis_goals.iter().map(|g| (g[d] - mean).powi(2)).sum::<f64>() / m;
                *a = var.max(floor);
            }
        }
        Ok(Self {
            goal,
            hypothesis_goals,
            a_diag,
            closing_target,
        })
    }

    /// Single goal with A = I.
    pub fn identity(goal: JointConfig, closing_target: JointConfig) -> Self {
        let n = goal.dim();
        Self {
            goal,
            hypothesis_goals: Vec::new(),
            a_diag: vec![1.0; n],
            closing_target,
        }
    }

    pub fn mahalanobis(&self, x: &JointConfig) -> f64 {
        x.iter()
            .zip(self.goal.iter())
            .zip(&self.a_diag)
            .map(|((a, b), v)| (a - b) * (a - b) / v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Closing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<JointConfig>,
    /// Index of the pre-grasp waypoint; later waypoints close the fingers.
    pub approach_end: usize,
}

impl Trajectory {
    /// `approach` followed by `steps` waypoints interpolating to `closing_target`.
    pub fn with_closing(approach: Vec<JointConfig>, closing_target: &JointConfig, steps: usize) -> Result<Self> {
        let last = approach
            .last()
            .cloned()
            .ok_or_else(|| Error::Planning("empty approach".into()))?;
        let mut waypoints = approach;
        let approach_end = waypoints.len() - 1;
        for s in 1..=steps {
            waypoints.push(interpolate(&last, closing_target, s as f64 / steps as f64)?);
        }
        Ok(Self {
            waypoints,
            approach_end,
        })
    }

    pub fn approach(&self) -> &[JointConfig] {
        &self.waypoints[..=self.approach_end]
    }

    pub fn closing(&self) -> &[JointConfig] {
        &self.waypoints[self.approach_end..]
    }

    pub fn phase(&self, i: usize) -> Phase {
        if i <= self.approach_end {
            Phase::Approach
        } else {
            Phase::Closing
        }
    }

    /// Rows `step,q_0..q_{n-1},phase`.
    pub fn to_csv(&self) -> String {
        let n = self.waypoints.first().map(JointConfig::dim).unwrap_or(0);
        let mut s = String::from("step");
        for d in 0..n {
            let _ = write!(s, ",q_{d}");
        }
        s.push_str(",phase\n");
        for (i, q) in self.waypoints.iter().enumerate() {
            let _ = write!(s, "{i}");
            for v in q.iter() {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(
                s,
                ",{}",
                match self.phase(i) {
                    Phase::Approach => "approach",
                    Phase::Closing => "closing",
                }
            );
        }
        s
    }
}

/// J(x′) = 1/(k−1) Σ_{i≥2} exp(−|g(x′,p_i) − g(x′,p_1)|); `hyp_clouds[0]` is the MLE.
pub fn info_reward(
    r: &RobotModel,
    q_to: &JointConfig,
    hyp_clouds: &[PointCloudModel],
    params: &TactileParams,
) -> Result<f64> {
    info_reward_at(r, &r.fk_links(q_to)?, hyp_clouds, params)
}

fn info_reward_at(
    r: &RobotModel,
    poses: &[crate::se3::Pose6D],
    hyp_clouds: &[PointCloudModel],
    params: &TactileParams,
) -> Result<f64> {
    if hyp_clouds.len() < 2 {
        return Err(Error::InvalidInput("information reward needs at least two hypotheses".into()));
    }
    let g1 = expected_observation_at(r, poses, &hyp_clouds[0], params)?;
    let mut acc = 0.0;
    for c in &hyp_clouds[1..] {
        let gi = expected_observation_at(r, poses, c, params)?;
        acc += (-(gi - g1).abs()).exp();
    }
    Ok(acc / (hyp_clouds.len() - 1) as f64)
}

/// Undirected roadmap with neighbour lists; node 0 is the root, node 1 the goal.
#[derive(Clone, Debug)]
pub struct Roadmap {
    pub nodes: Vec<JointConfig>,
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub radius: f64,
}

impl Roadmap {
    /// Connects every pair within `radius` (or the auto radius when 0).
    pub fn connect(nodes: Vec<JointConfig>, radius: f64, target_degree: usize) -> Self {
        let n = nodes.len();
        let mut dist = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in i + 1..n {
                dist.push(nodes[i].distance(&nodes[j]));
            }
        }
        let radius = if radius > 0.0 || dist.is_empty() {
            radius
        } else {
            let want = (target_degree * n / 2).clamp(1, dist.len()) - 1;
            let mut d = dist.clone();
            d.select_nth_unstable_by(want, f64::total_cmp);
            d[want]
        };
        let mut neighbors = vec![Vec::new(); n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let d = dist[k];
                k += 1;
                if d <= radius {
                    neighbors[i].push((j, d));
                    neighbors[j].push((i, d));
                }
            }
        }
        Self {
            nodes,
            neighbors,
            radius,
        }
    }

    pub fn mean_degree(&self) -> f64 {
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.nodes.len().max(1) as f64
    }
}

#[derive(Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    g: f64,
    node: usize,
    parent: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, o: &Self) -> Ordering {
        // Min-heap on f, then larger g, then indices.
        o.f.total_cmp(&self.f)
            .then(self.g.total_cmp(&o.g))
            .then(o.node.cmp(&self.node))
            .then(o.parent.cmp(&self.parent))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Result of a graph search: node sequence and its accumulated cost.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub path: Vec<usize>,
    pub cost: f64,
    pub expansions: usize,
}

/// A* with lazy validation: an edge (and its end node) is checked only when
/// its entry is popped as the cheapest way into the node. `edge_cost(u, v, d)`
/// must be nonnegative.
pub fn astar(
    map: &Roadmap,
    start: usize,
    goal: usize,
    mut edge_cost: impl FnMut(usize, usize, f64) -> Result<f64>,
    mut heuristic: impl FnMut(usize) -> Result<f64>,
    mut valid: impl FnMut(usize, usize) -> Result<bool>,
    max_expansions: usize,
) -> Result<Option<SearchResult>> {
    let n = map.nodes.len();
    let mut closed = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut g_closed = vec![f64::INFINITY; n];
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: heuristic(start)?,
        g: 0.0,
        node: start,
        parent: start,
    });
    let mut expansions = 0;
    while let Some(e) = open.pop() {
        if closed[e.node] {
            continue;
        }
        if e.node != e.parent && !valid(e.parent, e.node)? {
            continue;
        }
        closed[e.node] = true;
        parent[e.node] = e.parent;
        g_closed[e.node] = e.g;
        if e.node == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Ok(Some(SearchResult {
                path,
                cost: e.g,
                expansions,
            }));
        }
        expansions += 1;
        if expansions > max_expansions {
            break;
        }
        for &(v, d) in &map.neighbors[e.node] {
            if closed[v] {
                continue;
            }
            let g = e.g + edge_cost(e.node, v, d)?;
            open.push(OpenEntry {
                f: g + heuristic(v)?,
                g,
                node: v,
                parent: e.node,
            });
        }
    }
    Ok(None)
}

/// Per-DoF bound on how far any robot point moves per radian of that joint.
pub fn lever_arms(r: &RobotModel) -> Vec<f64> {
    let n = r.links.len();
    // Farthest robot point below each link frame, children listed after parents.
    let mut below = vec![0.0f64; n];
    for i in (0..n).rev() {
        let l = &r.links[i];
        let mut own = 0.0f64;
        if let Some((off, mesh)) = &l.mesh {
            let ext = mesh.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max);
            own = own.max(off.position.norm() + ext);
        }
        if let Some(s) = &l.sensor {
            own = own.max(s.offset.position.norm());
        }
        below[i] = below[i].max(own);
        if let Some(p) = l.parent {
            below[p] = below[p].max(l.offset.position.norm() + below[i]);
        }
    }
    let mut out = vec![0.0; r.dof];
    for (i, l) in r.links.iter().enumerate() {
        if let Some(j) = &l.joint {
            out[j.dof] = below[i];
        }
    }
    out
}

/// Shared state for searches against one object estimate.
pub struct PlanContext<'a> {
    pub robot: &'a RobotModel,
    /// Collision geometry: the MLE placement of the object.
    pub cloud: &'a PointCloudModel,
    /// Hypothesis placements, MLE first (information-reward mode only).
    pub hyp_clouds: &'a [PointCloudModel],
    pub params: &'a PlannerParams,
    levers: Vec<f64>,
    j_cache: HashMap<Vec<u64>, f64>,
}

impl<'a> PlanContext<'a> {
    pub fn new(
        robot: &'a RobotModel,
        cloud: &'a PointCloudModel,
        hyp_clouds: &'a [PointCloudModel],
        params: &'a PlannerParams,
    ) -> Self {
        Self {
            robot,
            cloud,
            hyp_clouds,
            params,
            levers: lever_arms(robot),
            j_cache: HashMap::new(),
        }
    }

    pub fn state_valid(&self, q: &JointConfig) -> Result<bool> {
        let poses = self.robot.fk_links(q)?;
        Ok(!poses_in_collision(self.robot, &poses, self.cloud, &self.params.clearance, self.params.collision_tol)?)
    }

    /// Number of interpolation segments keeping workspace motion ≤ step.
    pub fn segments(&self, a: &JointConfig, b: &JointConfig) -> usize {
        let w: f64 = a
            .iter()
            .zip(b.iter())
            .zip(&self.levers)
            .map(|((x, y), l)| (x - y).abs() * l)
            .sum();
        ((w / self.params.workspace_step).ceil() as usize).max(1)
    }

    /// Interior and end states of the motion a→b are collision-free.
    pub fn motion_valid(&self, a: &JointConfig, b: &JointConfig) -> Result<bool> {
        let n = self.segments(a, b);
        for s in 1..=n {
            if !self.state_valid(&interpolate(a, b, s as f64 / n as f64)?)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn info_reward(&mut self, q: &JointConfig) -> Result<f64> {
        let key: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.j_cache.get(&key) {
            return Ok(*v);
        }
        let v = info_reward(self.robot, q, self.hyp_clouds, &self.params.tactile)?;
        self.j_cache.insert(key, v);
        Ok(v)
    }

    pub fn edge_cost(&mut self, mode: CostMode, to: &JointConfig, d: f64) -> Result<f64> {
        let alpha = self.params.weights.alpha;
        Ok(match mode {
            CostMode::Baseline => alpha * d,
            CostMode::InfoReward => alpha * self.info_reward(to)? * d,
        })
    }

    pub fn heuristic(&self, mode: CostMode, x: &JointConfig, goal: &GoalModel) -> f64 {
        let beta = self.params.weights.beta;
        match mode {
            CostMode::Baseline => beta * x.distance(&goal.goal),
            CostMode::InfoReward => beta * goal.mahalanobis(x),
        }
    }

    /// Sum of edge costs along `path` under `mode`.
    pub fn path_cost(&mut self, mode: CostMode, path: &[JointConfig]) -> Result<f64> {
        let mut c = 0.0;
        for w in path.windows(2) {
            let d = w[0].distance(&w[1]);
            c += self.edge_cost(mode, &w[1], d)?;
        }
        Ok(c)
    }

    /// Lazy A* over `map` from node 0 to node 1.
    pub fn search(&mut self, map: &Roadmap, mode: CostMode, goal: &GoalModel, pre_valid: &[(usize, usize)]) -> Result<Option<SearchResult>> {
        let mut node_ok: Vec<Option<bool>> = vec![None; map.nodes.len()];
        node_ok[0] = Some(true);
        let mut edge_ok: HashMap<(usize, usize), bool> = pre_valid.iter().map(|&(a, b)| ((a.min(b), a.max(b)), true)).collect();
        let h: Vec<f64> = map.nodes.iter().map(|x| self.heuristic(mode, x, goal)).collect();
        let max_exp = self.params.max_expansions;
        let nodes = &map.nodes;
        let this = std::cell::RefCell::new(self);
        astar(
            map,
            0,
            1,
            |_, v, d| this.borrow_mut().edge_cost(mode, &nodes[v], d),
            |v| Ok(h[v]),
            |u, v| {
                let ctx = this.borrow();
                if node_ok[v].is_none() {
                    node_ok[v] = Some(ctx.state_valid(&nodes[v])?);
                }
                if node_ok[v] != Some(true) {
                    return Ok(false);
                }
                let key = (u.min(v), u.max(v));
                if let Some(&ok) = edge_ok.get(&key) {
                    return Ok(ok);
                }
                let ok = ctx.motion_valid(&nodes[u], &nodes[v])?;
                edge_ok.insert(key, ok);
                Ok(ok)
            },
            max_exp,
        )
    }
}

fn sample_box(
    r: &RobotModel,
    anchors: &[&JointConfig],
    dofs: &[usize],
    margin: f64,
) -> Vec<(usize, f64, f64)> {
    let lim = r.joint_limits();
    dofs.iter()
        .map(|&d| {
            let lo = anchors.iter().map(|a| a[d]).fold(f64::INFINITY, f64::min) - margin;
            let hi = anchors.iter().map(|a| a[d]).fold(f64::NEG_INFINITY, f64::max) + margin;
            (d, lo.max(lim[d].0), hi.min(lim[d].1))
        })
        .collect()
}

/// Global roadmap over the arm joints; hand joints take the goal's values.
pub fn global_roadmap(r: &RobotModel, q_root: &JointConfig, goal: &GoalModel, params: &PlannerParams, rng: &mut ChaCha8Rng) -> Roadmap {
    let mut anchors: Vec<&JointConfig> = vec![q_root, &goal.goal];
    anchors.extend(goal.hypothesis_goals.iter());
    let bounds = sample_box(r, &anchors, &r.arm_dofs, params.sampling_margin);
    let mut nodes = vec![q_root.clone(), goal.goal.clone()];
    let line = params.straight_line_nodes.min(params.weights.n_nodes.saturating_sub(2));
    for s in 1..=line {
        let t = s as f64 / (line + 1) as f64;
        nodes.push(interpolate(q_root, &goal.goal, t).expect("same dimension"));
    }
    while nodes.len() < params.weights.n_nodes {
        let mut q = goal.goal.clone();
        for &(d, lo, hi) in &bounds {
            q.0[d] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        nodes.push(q);
    }
    Roadmap::connect(nodes, params.weights.neighbor_radius, params.weights.target_degree)
}

/// Objective used by refinement: path cost plus weighted smoothness.
pub fn smoothness_penalty(path: &[JointConfig]) -> f64 {
    path.windows(3)
        .map(|w| {
            w[0].iter()
                .zip(w[1].iter())
                .zip(w[2].iter())
                .map(|((a, b), c)| (a - 2.0 * b + c).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn objective(ctx: &mut PlanContext, mode: CostMode, path: &[JointConfig]) -> Result<f64> {
    Ok(ctx.path_cost(mode, path)? + ctx.params.de.smoothness_weight * smoothness_penalty(path))
}

fn approach_from(map: &Roadmap, res: &SearchResult) -> Vec<JointConfig> {
    res.path.iter().map(|&i| map.nodes[i].clone()).collect()
}

fn plan(
    ctx: &mut PlanContext,
    mode: CostMode,
    q_root: &JointConfig,
    goal: &GoalModel,
    seed: u64,
) -> Result<Trajectory> {
    let params = ctx.params;
    params.validate()?;
    let r = ctx.robot;
    if q_root.dim() != r.dof || goal.goal.dim() != r.dof {
        return Err(Error::DimensionMismatch {
            expected: r.dof,
            got: q_root.dim(),
        });
    }
    if !ctx.state_valid(&goal.goal)? {
        return Err(Error::Planning("goal configuration is in collision".into()));
    }
    let mut rng = rng_from_seed(seed);
    let approach = if q_root.distance(&goal.goal) == 0.0 {
        vec![q_root.clone()]
    } else {
        let map = global_roadmap(r, q_root, goal, params, &mut rng);
        let res = ctx
            .search(&map, mode, goal, &[])?
            .ok_or_else(|| Error::Planning("no path on the global roadmap".into()))?;
        approach_from(&map, &res)
    };
    let mut approach = approach;
    if params.hierarchical && approach.len() > 2 {
        approach = refine_path(ctx, &approach, mode, goal, &mut rng)?;
    }
    Trajectory::with_closing(approach, &goal.closing_target, params.closing_steps)
}

/// Baseline cost: edge `α·d`, heuristic `β·d(x′, goal)`.
pub fn plan_baseline(
    r: &RobotModel,
    q_root: &JointConfig,
    goal: &GoalModel,
    cloud_mle: &PointCloudModel,
    params: &PlannerParams,
    seed: u64,
) -> Result<Trajectory> {
    let mut ctx = PlanContext::new(r, cloud_mle, &[], params);
    plan(&mut ctx, CostMode::Baseline, q_root, goal, seed)
}

/// Information-reward cost over `hyp_clouds` (index 0 = MLE, used for collision).
pub fn plan_ir3ne(
    r: &RobotModel,
    q_root: &JointConfig,
    goal: &GoalModel,
    hyp_clouds: &[PointCloudModel],
    params: &PlannerParams,
    seed: u64,
) -> Result<Trajectory> {
    if hyp_clouds.len() < 2 {
        return Err(Error::InvalidInput("information-reward planning needs k ≥ 2 hypotheses".into()));
    }
    let mut ctx = PlanContext::new(r, &hyp_clouds[0], hyp_clouds, params);
    plan(&mut ctx, CostMode::InfoReward, q_root, goal, seed)
}

/// Local roadmap in a tube around the approach, re-search, then DE
/// smoothing. The input is returned when nothing improves the objective.
pub fn refine_hierarchical(
    ctx: &mut PlanContext,
    global: &Trajectory,
    mode: CostMode,
    goal: &GoalModel,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng_from_seed(seed);
    let approach = refine_path(ctx, global.approach(), mode, goal, &mut rng)?;
    let mut waypoints = approach;
    let approach_end = waypoints.len() - 1;
    waypoints.extend(global.waypoints[global.approach_end + 1..].iter().cloned());
    Ok(Trajectory {
        waypoints,
        approach_end,
    })
}

fn refine_path(
    ctx: &mut PlanContext,
    path: &[JointConfig],
    mode: CostMode,
    goal: &GoalModel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<JointConfig>> {
    if path.len() < 3 {
        return Ok(path.to_vec());
    }
    let params = ctx.params;
    let r = ctx.robot;
    let lim = r.joint_limits();
    let base_obj = objective(ctx, mode, path)?;
    let mut best = path.to_vec();
    let mut best_obj = base_obj;

    // Local roadmap: the input waypoints (root first, goal second) plus
    // samples around random points along the path.
    let m = path.len();
    let mut nodes = vec![path[0].clone(), path[m - 1].clone()];
    nodes.extend(path[1..m - 1].iter().cloned());
    for _ in 0..params.weights.n_local_nodes {
        let i = rng.random_range(0..m - 1);
        let t: f64 = rng.random();
        let mut q = interpolate(&path[i], &path[i + 1], t)?;
        for d in 0..r.dof {
            let v = q[d] + rng.random_range(-params.tube_radius..params.tube_radius);
            q.0[d] = v.clamp(lim[d].0, lim[d].1);
        }
        nodes.push(q);
    }
    let max_seg = path.windows(2).map(|w| w[0].distance(&w[1])).fold(0.0, f64::max);
    let auto = Roadmap::connect(nodes.clone(), 0.0, params.weights.target_degree).radius;
    let map = Roadmap::connect(nodes, auto.max(max_seg), params.weights.target_degree);
    // Input path: node 0, 2, 3, ..., m−1, then 1.
    let order: Vec<usize> = std::iter::once(0).chain(2..m).chain(std::iter::once(1)).collect();
    let known: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    if let Some(res) = ctx.search(&map, mode, goal, &known)? {
        let cand = approach_from(&map, &res);
        let o = objective(ctx, mode, &cand)?;
        if o < best_obj {
            best = cand;
            best_obj = o;
        }
    }
    if best.len() >= 3 && params.de.generations > 0 {
        let (p, o) = de_smooth(ctx, &best, mode, rng)?;
        if o < best_obj {
            best = p;
            best_obj = o;
        }
    }
    debug_assert!(best_obj <= base_obj);
    Ok(best)
}

/// Differential evolution over interior waypoints; endpoints are fixed.
fn de_smooth(
    ctx: &mut PlanContext,
    path: &[JointConfig],
    mode: CostMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<JointConfig>, f64)> {
    let params = ctx.params.clone();
    let de = &params.de;
    let r = ctx.robot;
    let lim = r.joint_limits();
    let dof = r.dof;
    let m = path.len();
    let dim = (m - 2) * dof;
    let to_vec = |p: &[JointConfig]| DVector::from_iterator(dim, p[1..m - 1].iter().flat_map(|q| q.iter().copied()));
    let to_path = |v: &DVector<f64>| {
        let mut p = Vec::with_capacity(m);
        p.push(path[0].clone());
        for i in 0..m - 2 {
            p.push(JointConfig((0..dof).map(|d| v[i * dof + d].clamp(lim[d].0, lim[d].1)).collect()));
        }
        p.push(path[m - 1].clone());
        p
    };
    let radius = params.weights.neighbor_radius;
    let path_ok = |ctx: &PlanContext, p: &[JointConfig]| -> Result<bool> {
        for w in p.windows(2) {
            if radius > 0.0 && w[0].distance(&w[1]) > radius {
                return Ok(false);
            }
        }
        for q in &p[1..m - 1] {
            if !ctx.state_valid(q)? {
                return Ok(false);
            }
        }
        for w in p.windows(2) {
            if !ctx.motion_valid(&w[0], &w[1])? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let x0 = to_vec(path);
    let mut pop = vec![x0.clone()];
    let mut fit = vec![objective(ctx, mode, path)?];
    let spread = params.tube_radius * 0.25;
    while pop.len() < de.population {
        let v = x0.map(|x| x + rng.random_range(-spread..spread));
        let p = to_path(&v);
        let o = objective(ctx, mode, &p)?;
        // Members that collide keep the incumbent's slot instead.
        if path_ok(ctx, &p)? {
            pop.push(v);
            fit.push(o);
        } else {
            pop.push(x0.clone());
            fit.push(fit[0]);
        }
    }
    let np = pop.len();
    for _ in 0..de.generations {
        for i in 0..np {
            let mut pick = || loop {
                let j = rng.random_range(0..np);
                if j != i {
                    break j;
                }
            };
            let (a, b, c) = (pick(), pick(), pick());
            let jr = rng.random_range(0..dim);
            let mut trial = pop[i].clone();
            for k in 0..dim {
                if k == jr || rng.random::<f64>() < de.crossover {
                    trial[k] = pop[a][k] + de.differential_weight * (pop[b][k] - pop[c][k]);
                }
            }
            let p = to_path(&trial);
            let o = objective(ctx, mode, &p)?;
            if o < fit[i] && path_ok(ctx, &p)? {
                pop[i] = to_vec(&p);
                fit[i] = o;
            }
        }
    }
    let (bi, bo) = fit
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &f)| if f < acc.1 { (i, f) } else { acc });
    Ok((to_path(&pop[bi]), bo))
}
