//! Downlink-to-uplink load balancing through extra clusters.
//!
//! Runs after the spectral-efficient pass. In every cell whose downlink
//! margin fell below a threshold while the uplink margin is still
//! comfortable, unclustered users are attached to better-placed heads even
//! when the union costs more PRBs in total: each action strictly reduces
//! the downlink load and is accepted only while the uplink margin survives
//! and the cell's limiting-band margin actually improves. Existing clusters
//! are never broken up and heads are never demoted.

use crate::association::AssociationState;
use crate::radio::LinkCostTable;
use crate::resources::PrbLoad;
use crate::scenario::{BaseStation, UserEquipment};

/// Margin thresholds as fractions of each cell's PRB budgets.
#[derive(Debug, Clone)]
pub struct CalbConfig {
    /// The downlink is considered loaded when its free PRBs drop below this
    /// fraction of the downlink budget.
    pub dl_min_margin_frac: f64,
    /// The uplink is considered spare while its free PRBs stay above this
    /// fraction of the uplink budget.
    pub ul_min_margin_frac: f64,
}

impl Default for CalbConfig {
    fn default() -> Self {
        CalbConfig {
            dl_min_margin_frac: 0.2,
            ul_min_margin_frac: 0.1,
        }
    }
}

/// Change in required downlink PRBs when `i` is served through `j` in cell
/// `k`; negative when `j` holds the better downlink.
pub fn delta_dl(
    i: usize,
    j: usize,
    k: usize,
    table: &LinkCostTable,
    users: &[UserEquipment],
) -> f64 {
    users[i].profile.rate_dl_bps * (table.dl(k, j) - table.dl(k, i))
}

/// Change in required uplink PRBs for the same move: the head now forwards
/// `i`'s downlink over D2D, and `i`'s uplink rides D2D plus the head's BS
/// link instead of its own.
pub fn delta_ul(
    i: usize,
    j: usize,
    k: usize,
    table: &LinkCostTable,
    users: &[UserEquipment],
) -> f64 {
    let p = users[i].profile;
    p.rate_dl_bps
        * (table.d2d(j, i) + p.alpha() * (table.ul(j, k) + table.d2d(i, j) - table.ul(i, k)))
}

/// One accepted balancing action, with the margins seen at decision time.
#[derive(Debug, Clone)]
pub struct CalbAction {
    pub bs: usize,
    pub member: usize,
    pub head: usize,
    pub delta_dl: f64,
    pub delta_ul: f64,
    pub dl_margin_before: f64,
    pub ul_margin_before: f64,
}

#[derive(Debug, Clone, Copy)]
struct PairEntry {
    delta_dl: f64,
    member: usize,
    head: usize,
}

/// Runs the balancing pass, mutating the association and the per-cell
/// loads, and returns the action log.
pub fn run_calb(
    bss: &[BaseStation],
    users: &[UserEquipment],
    table: &LinkCostTable,
    assoc: &mut AssociationState,
    loads: &mut PrbLoad,
    cfg: &CalbConfig,
) -> Vec<CalbAction> {
    let mut actions = Vec::new();
    for bs in bss {
        let k = bs.id;
        let dl_min = cfg.dl_min_margin_frac * bs.prb_budget_dl;
        let ul_min = cfg.ul_min_margin_frac * bs.prb_budget_ul;
        let margin_dl = bs.prb_budget_dl - loads.dl_per_bs[k];
        if margin_dl >= dl_min {
            continue;
        }

        // candidate pairs of this cell: unclustered member side, unclustered
        // or head on the head side, strictly better downlink at the head
        let mut queue: Vec<PairEntry> = Vec::new();
        for i in 0..users.len() {
            if assoc.serving(i) != Some(k) || assoc.is_head(i) || assoc.is_member(i) {
                continue;
            }
            for j in 0..users.len() {
                if i == j || assoc.serving(j) != Some(k) || assoc.is_member(j) {
                    continue;
                }
                if !(table.dl(k, j) < table.dl(k, i)) {
                    continue;
                }
                if !table.has_d2d(i, j) || !table.has_d2d(j, i) {
                    continue;
                }
                queue.push(PairEntry {
                    delta_dl: delta_dl(i, j, k, table, users),
                    member: i,
                    head: j,
                });
            }
        }
        queue.sort_by(|a, b| {
            a.delta_dl
                .partial_cmp(&b.delta_dl)
                .unwrap()
                .then(a.member.cmp(&b.member))
                .then(a.head.cmp(&b.head))
        });

        while !queue.is_empty() {
            let n_d = bs.prb_budget_dl - loads.dl_per_bs[k];
            let n_u = bs.prb_budget_ul - loads.ul_per_bs[k];
            if n_u < ul_min || n_d >= dl_min {
                break;
            }
            let pair = queue.remove(0);
            let (i, j) = (pair.member, pair.head);
            if !accepts(pair.delta_dl, delta_ul(i, j, k, table, users), n_d, n_u, ul_min) {
                continue;
            }

            if assoc.is_head(j) {
                attach(
                    k, i, j, n_d, n_u, table, users, assoc, loads, &mut queue, &mut actions,
                );
                continue;
            }

            // both unclustered: weigh the pairing against the best separate
            // partners either endpoint could still take
            let best_alt = |member: usize, not: usize, q: &[PairEntry]| -> Option<PairEntry> {
                q.iter()
                    .filter(|e| e.member == member && e.head != not)
                    .min_by(|a, b| {
                        a.delta_dl
                            .partial_cmp(&b.delta_dl)
                            .unwrap()
                            .then(a.head.cmp(&b.head))
                    })
                    .copied()
            };
            let m = best_alt(i, j, &queue);
            let n = best_alt(j, i, &queue);
            let split_value =
                m.map_or(0.0, |e| e.delta_dl) + n.map_or(0.0, |e| e.delta_dl);
            if pair.delta_dl - split_value <= 0.0 {
                attach(
                    k, i, j, n_d, n_u, table, users, assoc, loads, &mut queue, &mut actions,
                );
            } else {
                // the two separate clusters reduce the downlink further
                for alt in [m, n].into_iter().flatten() {
                    let n_d = bs.prb_budget_dl - loads.dl_per_bs[k];
                    let n_u = bs.prb_budget_ul - loads.ul_per_bs[k];
                    if n_u < ul_min || n_d >= dl_min {
                        break;
                    }
                    if assoc.is_member(alt.member) || assoc.is_member(alt.head) {
                        continue;
                    }
                    let du = delta_ul(alt.member, alt.head, k, table, users);
                    if accepts(alt.delta_dl, du, n_d, n_u, ul_min) {
                        attach(
                            k,
                            alt.member,
                            alt.head,
                            n_d,
                            n_u,
                            table,
                            users,
                            assoc,
                            loads,
                            &mut queue,
                            &mut actions,
                        );
                    }
                }
            }
        }
    }
    actions
}

/// Accepts an action when the downlink strictly improves, the uplink margin
/// survives above its floor and the limiting-band margin grows (the post-
/// action downlink margin must not overtake the post-action uplink margin).
fn accepts(d_dl: f64, d_ul: f64, n_d: f64, n_u: f64, ul_min: f64) -> bool {
    if !(d_dl < 0.0) || !d_ul.is_finite() {
        return false;
    }
    if n_u - d_ul < ul_min {
        return false;
    }
    d_ul - d_dl <= n_u - n_d
}

#[allow(clippy::too_many_arguments)]
fn attach(
    k: usize,
    member: usize,
    head: usize,
    dl_margin_before: f64,
    ul_margin_before: f64,
    table: &LinkCostTable,
    users: &[UserEquipment],
    assoc: &mut AssociationState,
    loads: &mut PrbLoad,
    queue: &mut Vec<PairEntry>,
    actions: &mut Vec<CalbAction>,
) {
    let d_dl = delta_dl(member, head, k, table, users);
    let d_ul = delta_ul(member, head, k, table, users);
    actions.push(CalbAction {
        bs: k,
        member,
        head,
        delta_dl: d_dl,
        delta_ul: d_ul,
        dl_margin_before,
        ul_margin_before,
    });
    assoc.make_member(member, head);
    loads.dl_per_bs[k] += d_dl;
    loads.ul_per_bs[k] += d_ul;
    // the new member can no longer pair up, and the head stays head-only
    queue.retain(|e| e.member != member && e.head != member && e.member != head);
}
