//! PRB accounting: expected per-cell load with and without clustering, the
//! association objective, and saturation margins.
//!
//! Loads are real-valued expectations in PRBs per subframe; integer
//! quantization only happens in the scheduler. Any association that uses an
//! unreachable link yields an infinite load, which the solvers treat as
//! infeasible.

use crate::association::AssociationState;
use crate::radio::LinkCostTable;
use crate::scenario::{BaseStation, UserEquipment};

/// Expected PRBs per subframe per cell and band.
#[derive(Debug, Clone, PartialEq)]
pub struct PrbLoad {
    pub dl_per_bs: Vec<f64>,
    pub ul_per_bs: Vec<f64>,
}

impl PrbLoad {
    pub fn zeros(num_bs: usize) -> Self {
        PrbLoad {
            dl_per_bs: vec![0.0; num_bs],
            ul_per_bs: vec![0.0; num_bs],
        }
    }

    pub fn total_dl(&self) -> f64 {
        self.dl_per_bs.iter().sum()
    }

    pub fn total_ul(&self) -> f64 {
        self.ul_per_bs.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.total_dl() + self.total_ul()
    }
}

/// Load when every user is served directly by its BS (no clusters).
pub fn load_unclustered(
    users: &[UserEquipment],
    table: &LinkCostTable,
    assoc: &AssociationState,
) -> PrbLoad {
    debug_assert!(
        (0..assoc.num_users()).all(|i| assoc.head(i).is_none()),
        "unclustered load requires an empty member relation"
    );
    let mut load = PrbLoad::zeros(table.dl_cost.len());
    for ue in users {
        if let Some(k) = assoc.serving(ue.id) {
            load.dl_per_bs[k] += ue.profile.rate_dl_bps * table.dl(k, ue.id);
            load.ul_per_bs[k] += ue.profile.rate_ul_bps * table.ul(ue.id, k);
        }
    }
    load
}

/// Load with clusters: direct users as above, plus per cluster the head's
/// aggregated downlink, the intra-cluster D2D traffic in both directions and
/// the head-to-BS forwarding, all accounted at the head's serving cell.
pub fn load_clustered(
    users: &[UserEquipment],
    table: &LinkCostTable,
    assoc: &AssociationState,
) -> PrbLoad {
    let mut load = PrbLoad::zeros(table.dl_cost.len());
    // non-clustered users
    for ue in users {
        if assoc.is_member(ue.id) || assoc.is_head(ue.id) {
            continue;
        }
        if let Some(k) = assoc.serving(ue.id) {
            load.dl_per_bs[k] += ue.profile.rate_dl_bps * table.dl(k, ue.id);
            load.ul_per_bs[k] += ue.profile.rate_ul_bps * table.ul(ue.id, k);
        }
    }
    // clusters
    for cluster in assoc.clusters() {
        let h = cluster.head;
        let k = assoc
            .serving(h)
            .expect("cluster head must be attached to a BS");
        let mut rate_dl_sum = users[h].profile.rate_dl_bps;
        let mut rate_ul_sum = users[h].profile.rate_ul_bps;
        for &m in &cluster.members {
            rate_dl_sum += users[m].profile.rate_dl_bps;
            rate_ul_sum += users[m].profile.rate_ul_bps;
            // within the cluster: member-to-head uplink, head-to-member
            // forwarding of the member's downlink
            load.ul_per_bs[k] += users[m].profile.rate_ul_bps * table.d2d(m, h)
                + users[m].profile.rate_dl_bps * table.d2d(h, m);
        }
        load.dl_per_bs[k] += rate_dl_sum * table.dl(k, h);
        load.ul_per_bs[k] += rate_ul_sum * table.ul(h, k);
    }
    load
}

/// Total PRBs per subframe of an association, evaluated directly from the
/// attachment relations: each direct user costs `R (phi_dl + alpha phi_ul)`
/// on its own link; each member adds its rate on the head's links plus both
/// D2D directions.
pub fn objective(
    assoc: &AssociationState,
    table: &LinkCostTable,
    users: &[UserEquipment],
) -> f64 {
    let mut total = 0.0;
    for i in 0..assoc.num_users() {
        if let Some(k) = assoc.serving(i) {
            let p = users[i].profile;
            total += p.rate_dl_bps * (table.dl(k, i) + p.alpha() * table.ul(i, k));
        }
        if let Some(h) = assoc.head(i) {
            let k = match assoc.serving(h) {
                Some(k) => k,
                None => return f64::INFINITY,
            };
            let p = users[i].profile;
            total += p.rate_dl_bps
                * (table.dl(k, h)
                    + p.alpha() * table.ul(h, k)
                    + table.d2d(h, i)
                    + p.alpha() * table.d2d(i, h));
        }
    }
    total
}

/// Remaining PRBs per band for one cell, and the minimum of the two. A zero
/// (or negative) minimum means the cell is saturated.
pub fn saturation_margin(bs: &BaseStation, load: &PrbLoad) -> (f64, f64, f64) {
    let dl = bs.prb_budget_dl - load.dl_per_bs[bs.id];
    let ul = bs.prb_budget_ul - load.ul_per_bs[bs.id];
    (dl, ul, dl.min(ul))
}
