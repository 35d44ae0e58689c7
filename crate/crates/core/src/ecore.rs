//! Greedy construction of spectral-efficient clusters.
//!
//! For every ordered user pair `(i, j)` within D2D range the clustering gain
//! is the PRB saving obtained when `i` gives up its direct links and is
//! relayed by `j` instead. Users whose best candidate is itself trying to
//! join a cluster -- or who are wanted as head by someone else -- are
//! deferred into a conflict set and resolved in a second phase that charges
//! each choice with the best alternatives it forecloses.
//!
//! The `intra_cell_only` flag restricts candidates to users of the same
//! serving cell, which reproduces the older same-cell baseline.

use std::collections::BTreeSet;

use crate::association::AssociationState;
use crate::radio::LinkCostTable;
use crate::scenario::UserEquipment;

/// PRB saving per subframe when `i` (served by `k`) is relayed by head `j`
/// (served by `q`): the direct downlink and uplink costs are replaced by the
/// head's links plus both D2D directions. Negative infinity when the D2D
/// link is unreachable.
pub fn clustering_gain(
    i: usize,
    j: usize,
    table: &LinkCostTable,
    users: &[UserEquipment],
    assoc: &AssociationState,
) -> f64 {
    let (k, q) = match (assoc.serving(i), assoc.serving(j)) {
        (Some(k), Some(q)) => (k, q),
        _ => return f64::NEG_INFINITY,
    };
    if !table.has_d2d(j, i) || !table.has_d2d(i, j) {
        return f64::NEG_INFINITY;
    }
    let p = users[i].profile;
    let dl_part = table.dl(k, i) - table.dl(q, j) - table.d2d(j, i);
    let ul_part = table.ul(i, k) - table.ul(j, q) - table.d2d(i, j);
    let g = p.rate_dl_bps * dl_part + p.alpha() * p.rate_dl_bps * ul_part;
    if g.is_nan() {
        // infinite direct cost minus infinite head cost: treat as unusable
        f64::NEG_INFINITY
    } else {
        g
    }
}

/// Positive-gain candidate heads per user.
#[derive(Debug, Clone)]
pub struct GainTable {
    /// `gains[i]` holds `(j, gain)` with gain > 0, ascending by `j`.
    pub gains: Vec<Vec<(usize, f64)>>,
}

impl GainTable {
    pub fn candidates(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.gains[i].iter().map(|&(j, _)| j)
    }

    pub fn gain(&self, i: usize, j: usize) -> Option<f64> {
        self.gains[i]
            .binary_search_by_key(&j, |&(x, _)| x)
            .ok()
            .map(|idx| self.gains[i][idx].1)
    }
}

/// Gains against the given baseline association. Users in `banned` are
/// excluded as heads; `intra_cell_only` keeps only same-cell pairs.
pub fn build_gain_table(
    users: &[UserEquipment],
    table: &LinkCostTable,
    assoc: &AssociationState,
    banned: &BTreeSet<usize>,
    intra_cell_only: bool,
) -> GainTable {
    let n = users.len();
    let mut gains = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j || banned.contains(&j) {
                continue;
            }
            if intra_cell_only && assoc.serving(i) != assoc.serving(j) {
                continue;
            }
            if !table.has_d2d(i, j) || !table.has_d2d(j, i) {
                continue;
            }
            let g = clustering_gain(i, j, table, users, assoc);
            if g > 0.0 {
                gains[i].push((j, g));
            }
        }
    }
    GainTable { gains }
}

/// Outcome of one clustering pass.
#[derive(Debug, Clone)]
pub struct EcoreOutcome {
    pub assoc: AssociationState,
    /// Pairs examined across both phases, for complexity accounting.
    pub pair_evaluations: usize,
    /// Users attached during the conflict-resolution phase.
    pub conflicts_resolved: usize,
}

/// Runs the two-phase clustering pass on top of a baseline association.
///
/// Phase 1 walks users in id order and immediately attaches any user whose
/// best candidate head is conflict-free: the candidate must not want a head
/// of its own, and the user itself must not be a candidate head for someone
/// else. Everyone else is deferred. Phase 2 processes the deferred users in
/// descending order of their best gain and picks the head that maximizes
/// the gain minus the best alternatives it denies to the head and to the
/// user. Ties always break toward the lowest user id.
pub fn run_ecore(
    users: &[UserEquipment],
    table: &LinkCostTable,
    baseline: &AssociationState,
    banned: &BTreeSet<usize>,
    intra_cell_only: bool,
) -> EcoreOutcome {
    let gain_table = build_gain_table(users, table, baseline, banned, intra_cell_only);
    run_ecore_with_gains(users.len(), &gain_table, baseline)
}

pub fn run_ecore_with_gains(
    n: usize,
    gain_table: &GainTable,
    baseline: &AssociationState,
) -> EcoreOutcome {
    let mut assoc = baseline.clone();
    let mut evals = 0usize;

    // live candidate sets and bookkeeping
    let mut y: Vec<BTreeSet<usize>> = gain_table
        .gains
        .iter()
        .map(|row| row.iter().map(|&(j, _)| j).collect())
        .collect();
    let mut is_member = vec![false; n];
    let mut is_head = vec![false; n];
    // whether anyone lists this user as a candidate head (static property of
    // the gain table; a user wanted as head is part of a conflict)
    let mut wanted_as_head = vec![false; n];
    for row in &gain_table.gains {
        for &(j, _) in row {
            wanted_as_head[j] = true;
        }
    }

    let g = |i: usize, j: usize| gain_table.gain(i, j).unwrap_or(f64::NEG_INFINITY);

    let remove_everywhere = |y: &mut Vec<BTreeSet<usize>>, ue: usize| {
        for set in y.iter_mut() {
            set.remove(&ue);
        }
    };

    // phase 1: conflict-free attachments
    let mut deferred: Vec<(usize, f64)> = Vec::new(); // (user, best gain)
    for i in 0..n {
        if y[i].is_empty() {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &j in &y[i] {
            evals += 1;
            let gij = g(i, j);
            if best.map_or(true, |(_, b)| gij > b) {
                best = Some((j, gij));
            }
        }
        let (jstar, gmax) = best.expect("non-empty candidate set");
        if y[jstar].is_empty() && !wanted_as_head[i] && !is_member[jstar] {
            assoc.make_member(i, jstar);
            is_member[i] = true;
            is_head[jstar] = true;
            y[i].clear();
            remove_everywhere(&mut y, i);
        } else {
            deferred.push((i, gmax));
        }
    }

    // phase 2: conflicts in descending best-gain order
    deferred.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut in_conflict: Vec<bool> = vec![false; n];
    for &(i, _) in &deferred {
        in_conflict[i] = true;
    }
    let mut resolved = 0usize;
    let mut queue: std::collections::VecDeque<usize> =
        deferred.iter().map(|&(i, _)| i).collect();
    while let Some(i) = queue.pop_front() {
        if !in_conflict[i] {
            continue; // consumed as a head or member meanwhile
        }
        in_conflict[i] = false;

        // best alternative head for i other than a given j
        let mut best_j: Option<(usize, f64)> = None;
        let candidates: Vec<usize> = y[i].iter().copied().collect();
        for &j in &candidates {
            if is_member[j] {
                continue;
            }
            let gij = g(i, j);
            // the head's own best foregone option
            let mut head_loss = 0.0f64;
            for &m in &y[j] {
                evals += 1;
                if is_member[m] {
                    continue;
                }
                if y[m].is_empty() || in_conflict[m] {
                    head_loss = head_loss.max(g(j, m));
                }
            }
            // i's best alternative among its other candidates
            let mut alt_loss = 0.0f64;
            for &t in &candidates {
                evals += 1;
                if t == j || is_member[t] {
                    continue;
                }
                if y[t].is_empty() || in_conflict[t] {
                    alt_loss = alt_loss.max(g(i, t));
                }
            }
            let score = gij - head_loss - alt_loss;
            match best_j {
                Some((bj, bs)) => {
                    if score > bs || (score == bs && j < bj) {
                        best_j = Some((j, score));
                    }
                }
                None => best_j = Some((j, score)),
            }
        }

        let jstar = match best_j {
            Some((j, _)) if g(i, j) > 0.0 => j,
            _ => {
                y[i].clear();
                continue;
            }
        };

        assoc.make_member(i, jstar);
        resolved += 1;
        is_member[i] = true;
        y[i].clear();
        remove_everywhere(&mut y, i);
        if !is_head[jstar] {
            is_head[jstar] = true;
            y[jstar].clear();
            in_conflict[jstar] = false;
        }
    }

    EcoreOutcome {
        assoc,
        pair_evaluations: evals,
        conflicts_resolved: resolved,
    }
}
