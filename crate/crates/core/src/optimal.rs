//! Exact minimization of the association objective.
//!
//! Small instances are enumerated outright; larger ones run a depth-first
//! branch-and-bound over per-user attachment choices (one BS, or one head
//! within D2D range). The lower bound is additive: every undecided user
//! contributes the cost of its cheapest individual option, which never
//! overestimates because the objective is a sum of per-user attachment
//! costs. Both paths share the same deterministic tie-break so results do
//! not depend on exploration order.

use crate::association::AssociationState;
use crate::energy::{power_head_w, power_unclustered_w, MemberLink, PowerModel};
use crate::error::{Error, Result};
use crate::radio::LinkCostTable;
use crate::resources::objective;
use crate::scenario::UserEquipment;

/// Search-size limits.
#[derive(Debug, Clone)]
pub struct SolveLimits {
    /// Largest instance enumerated exhaustively by `solve_exact`.
    pub exhaustive_max_users: usize,
    /// Largest instance accepted by the branch-and-bound.
    pub bb_max_users: usize,
    /// Node budget; beyond it the incumbent is returned unproven.
    pub node_budget: u64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            exhaustive_max_users: 8,
            bb_max_users: 25,
            node_budget: 20_000_000,
        }
    }
}

/// Head-power feasibility rule of the energy-constrained variant: a head may
/// consume at most `(1 + w)` times its unclustered expected power.
#[derive(Debug, Clone)]
pub struct EnergyConstraint {
    pub model: PowerModel,
    pub max_overconsumption: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub best_assoc: AssociationState,
    pub best_objective: f64,
    pub nodes_explored: u64,
    pub proven_optimal: bool,
}

/// Deterministic preference among equal-objective states: fewer clusters,
/// then the lexicographically smallest member relation.
fn tie_key(assoc: &AssociationState) -> (usize, Vec<usize>) {
    let clusters = assoc.clusters().len();
    let (_, head_of) = assoc.raw_parts();
    (
        clusters,
        head_of
            .iter()
            .map(|h| h.map_or(usize::MAX, |x| x))
            .collect(),
    )
}

fn better(obj: f64, assoc: &AssociationState, best_obj: f64, best: &AssociationState) -> bool {
    if obj < best_obj {
        return true;
    }
    if obj > best_obj {
        return false;
    }
    tie_key(assoc) < tie_key(best)
}

struct Instance<'a> {
    users: &'a [UserEquipment],
    table: &'a LinkCostTable,
    n_bs: usize,
    /// Direct attachment cost per (user, bs).
    direct: Vec<Vec<f64>>,
    /// D2D part of the member cost per (user, head).
    pair_const: Vec<Vec<f64>>,
    /// Head-link part of the member cost per (user, head, bs).
    head_part: Vec<Vec<Vec<f64>>>,
    /// Cheapest member cost per (user, head) over all head attachments.
    member_min: Vec<Vec<f64>>,
    /// Cheapest option of each user, and cheapest direct option.
    lb_any: Vec<f64>,
    lb_direct: Vec<f64>,
    constraint: Option<&'a EnergyConstraint>,
}

impl<'a> Instance<'a> {
    fn new(
        users: &'a [UserEquipment],
        table: &'a LinkCostTable,
        constraint: Option<&'a EnergyConstraint>,
    ) -> Self {
        let n = users.len();
        let n_bs = table.dl_cost.len();
        let mut direct = vec![vec![f64::INFINITY; n_bs]; n];
        let mut pair_const = vec![vec![f64::INFINITY; n]; n];
        let mut head_part = vec![vec![vec![f64::INFINITY; n_bs]; n]; n];
        let mut member_min = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            let p = users[i].profile;
            for k in 0..n_bs {
                direct[i][k] = p.rate_dl_bps * (table.dl(k, i) + p.alpha() * table.ul(i, k));
            }
            for j in 0..n {
                if i == j || !table.has_d2d(j, i) || !table.has_d2d(i, j) {
                    continue;
                }
                pair_const[i][j] =
                    p.rate_dl_bps * (table.d2d(j, i) + p.alpha() * table.d2d(i, j));
                for k in 0..n_bs {
                    head_part[i][j][k] =
                        p.rate_dl_bps * (table.dl(k, j) + p.alpha() * table.ul(j, k));
                    let mc = pair_const[i][j] + head_part[i][j][k];
                    if mc < member_min[i][j] {
                        member_min[i][j] = mc;
                    }
                }
            }
        }
        let lb_direct: Vec<f64> = direct
            .iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let lb_any: Vec<f64> = (0..n)
            .map(|i| {
                let mm = member_min[i]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                lb_direct[i].min(mm)
            })
            .collect();
        Instance {
            users,
            table,
            n_bs,
            direct,
            pair_const,
            head_part,
            member_min,
            lb_any,
            lb_direct,
            constraint,
        }
    }

    fn member_cost(&self, i: usize, j: usize, k: usize) -> f64 {
        self.pair_const[i][j] + self.head_part[i][j][k]
    }

    /// Energy feasibility of head `j` attached to BS `k` serving `members`.
    fn head_feasible(&self, j: usize, k: usize, members: &[usize]) -> bool {
        let c = match self.constraint {
            Some(c) => c,
            None => return true,
        };
        if members.is_empty() {
            return true;
        }
        let gain = self.table.gain_db[k][j];
        let phi_dl = self.table.dl(k, j);
        let phi_ul = self.table.ul(j, k);
        let links: Vec<MemberLink> = members
            .iter()
            .map(|&m| MemberLink {
                profile: self.users[m].profile,
                to_member_cost: self.table.d2d(j, m),
                from_member_cost: self.table.d2d(m, j),
            })
            .collect();
        let head_profile = self.users[j].profile;
        let (p_head, _) = power_head_w(&head_profile, gain, phi_dl, phi_ul, &links, &c.model);
        let p_direct = power_unclustered_w(&head_profile, gain, phi_dl, phi_ul, &c.model);
        p_head <= (1.0 + c.max_overconsumption) * p_direct + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Direct(usize),
    Member(usize),
}

struct Search<'a> {
    inst: &'a Instance<'a>,
    assign: Vec<Option<Choice>>,
    /// Members that picked a not-yet-assigned head, per head.
    pending: Vec<Vec<usize>>,
    must_direct: Vec<bool>,
    /// Members per assigned head, for incremental constraint checks.
    members_of: Vec<Vec<usize>>,
    nodes: u64,
    node_budget: u64,
    budget_hit: bool,
    prune: bool,
    best_obj: f64,
    best: Option<AssociationState>,
}

impl<'a> Search<'a> {
    fn new(inst: &'a Instance<'a>, prune: bool, node_budget: u64) -> Self {
        let n = inst.users.len();
        Search {
            inst,
            assign: vec![None; n],
            pending: vec![Vec::new(); n],
            must_direct: vec![false; n],
            members_of: vec![Vec::new(); n],
            nodes: 0,
            node_budget,
            budget_hit: false,
            prune,
            best_obj: f64::INFINITY,
            best: None,
        }
    }

    fn committed_cost(&self) -> f64 {
        let mut total = 0.0;
        for (i, choice) in self.assign.iter().enumerate() {
            match choice {
                Some(Choice::Direct(k)) => total += self.inst.direct[i][*k],
                Some(Choice::Member(j)) => match self.assign[*j] {
                    Some(Choice::Direct(k)) => total += self.inst.member_cost(i, *j, k),
                    _ => total += self.inst.member_min[i][*j],
                },
                None => {}
            }
        }
        total
    }

    fn lower_bound(&self) -> f64 {
        let mut total = self.committed_cost();
        for i in 0..self.assign.len() {
            if self.assign[i].is_none() {
                total += if self.must_direct[i] {
                    self.inst.lb_direct[i]
                } else {
                    self.inst.lb_any[i]
                };
            }
        }
        total
    }

    fn offer_leaf(&mut self) {
        let n = self.assign.len();
        let mut assoc = AssociationState::new(n);
        for i in 0..n {
            if let Some(Choice::Direct(k)) = self.assign[i] {
                assoc.attach(i, k);
            }
        }
        for i in 0..n {
            if let Some(Choice::Member(j)) = self.assign[i] {
                assoc.make_member(i, j);
            }
        }
        let obj = objective(&assoc, self.inst.table, self.inst.users);
        if !obj.is_finite() {
            return;
        }
        match &self.best {
            Some(best) if !better(obj, &assoc, self.best_obj, best) => {}
            _ => {
                self.best_obj = obj;
                self.best = Some(assoc);
            }
        }
    }

    fn dfs(&mut self, u: usize) {
        if self.budget_hit {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_budget {
            self.budget_hit = true;
            return;
        }
        let n = self.assign.len();
        if u == n {
            self.offer_leaf();
            return;
        }
        if self.prune {
            let slack = 1e-12 * (1.0 + self.best_obj.abs());
            if self.lower_bound() - slack > self.best_obj {
                return;
            }
        }

        // candidate options, cheapest first
        let mut options: Vec<(f64, Choice)> = Vec::new();
        for k in 0..self.inst.n_bs {
            let c = self.inst.direct[u][k];
            if c.is_finite() {
                options.push((c, Choice::Direct(k)));
            }
        }
        if !self.must_direct[u] {
            for j in 0..n {
                if j == u || !self.inst.pair_const[u][j].is_finite() {
                    continue;
                }
                // a member cannot serve as head
                if matches!(self.assign[j], Some(Choice::Member(_))) {
                    continue;
                }
                let optimistic = match self.assign[j] {
                    Some(Choice::Direct(k)) => self.inst.member_cost(u, j, k),
                    _ => self.inst.member_min[u][j],
                };
                if optimistic.is_finite() {
                    options.push((optimistic, Choice::Member(j)));
                }
            }
        }
        options.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| choice_rank(a.1).cmp(&choice_rank(b.1)))
        });

        for (_, choice) in options {
            match choice {
                Choice::Direct(k) => {
                    // the pending members of u become final at BS k
                    let pend = self.pending[u].clone();
                    if !pend.is_empty() && !self.inst.head_feasible(u, k, &pend) {
                        continue;
                    }
                    self.assign[u] = Some(Choice::Direct(k));
                    let saved_members = std::mem::replace(&mut self.members_of[u], pend);
                    self.dfs(u + 1);
                    self.members_of[u] = saved_members;
                    self.assign[u] = None;
                }
                Choice::Member(j) => {
                    if j < u || matches!(self.assign[j], Some(Choice::Direct(_))) {
                        // head already placed: incremental feasibility check
                        let k = match self.assign[j] {
                            Some(Choice::Direct(k)) => k,
                            _ => unreachable!("earlier users are always assigned"),
                        };
                        self.members_of[j].push(u);
                        let feasible = self.inst.head_feasible(j, k, &self.members_of[j]);
                        if feasible {
                            self.assign[u] = Some(Choice::Member(j));
                            self.dfs(u + 1);
                            self.assign[u] = None;
                        }
                        self.members_of[j].pop();
                    } else {
                        // head comes later in the order: defer its cost
                        self.assign[u] = Some(Choice::Member(j));
                        self.pending[j].push(u);
                        let was_forced = self.must_direct[j];
                        self.must_direct[j] = true;
                        self.dfs(u + 1);
                        self.must_direct[j] = was_forced;
                        self.pending[j].pop();
                        self.assign[u] = None;
                    }
                }
            }
        }
    }
}

fn choice_rank(c: Choice) -> (u8, usize) {
    match c {
        Choice::Direct(k) => (0, k),
        Choice::Member(j) => (1, j),
    }
}

fn run_search(
    users: &[UserEquipment],
    table: &LinkCostTable,
    constraint: Option<&EnergyConstraint>,
    prune: bool,
    node_budget: u64,
) -> SolveReport {
    let inst = Instance::new(users, table, constraint);
    let mut search = Search::new(&inst, prune, node_budget);
    search.dfs(0);
    let best = search.best.unwrap_or_else(|| {
        // every option infinite; fall back to cheapest direct attachments
        let mut st = AssociationState::new(users.len());
        for (i, row) in inst.direct.iter().enumerate() {
            let k = row
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap_or(0);
            st.attach(i, k);
        }
        st
    });
    let best_objective = objective(&best, table, users);
    SolveReport {
        best_assoc: best,
        best_objective,
        nodes_explored: search.nodes,
        proven_optimal: !search.budget_hit,
    }
}

/// Full enumeration of every valid association. The reference oracle: leaf
/// objectives are evaluated through the direct objective definition only.
pub fn solve_exhaustive(
    users: &[UserEquipment],
    table: &LinkCostTable,
    constraint: Option<&EnergyConstraint>,
) -> SolveReport {
    run_search(users, table, constraint, false, u64::MAX)
}

/// Depth-first branch-and-bound with the additive per-user lower bound.
pub fn solve_branch_bound(
    users: &[UserEquipment],
    table: &LinkCostTable,
    constraint: Option<&EnergyConstraint>,
    node_budget: u64,
) -> SolveReport {
    run_search(users, table, constraint, true, node_budget)
}

/// Minimizes the association objective exactly: exhaustive below nine users,
/// branch-and-bound up to the configured limit.
pub fn solve_exact(
    users: &[UserEquipment],
    table: &LinkCostTable,
    limits: &SolveLimits,
) -> Result<SolveReport> {
    dispatch(users, table, None, limits)
}

/// Same search with the head-power feasibility rule: clusters whose head
/// would exceed `(1 + w)` times its unclustered expected power are pruned.
pub fn solve_energy_constrained(
    users: &[UserEquipment],
    table: &LinkCostTable,
    constraint: &EnergyConstraint,
    limits: &SolveLimits,
) -> Result<SolveReport> {
    dispatch(users, table, Some(constraint), limits)
}

fn dispatch(
    users: &[UserEquipment],
    table: &LinkCostTable,
    constraint: Option<&EnergyConstraint>,
    limits: &SolveLimits,
) -> Result<SolveReport> {
    let n = users.len();
    if n > limits.bb_max_users {
        return Err(Error::SolverLimit(format!(
            "{n} users exceed the branch-and-bound limit of {}",
            limits.bb_max_users
        )));
    }
    if n <= limits.exhaustive_max_users {
        Ok(solve_exhaustive(users, table, constraint))
    } else {
        Ok(solve_branch_bound(users, table, constraint, limits.node_budget))
    }
}
