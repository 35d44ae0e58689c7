//! UE power and energy model, the overconsumption ledger and the head-ban
//! algorithm.
//!
//! A device consumes `P_I` when idle and `P_C` when its radio is active,
//! plus the transmitted power: power-controlled toward the serving BS,
//! fixed per PRB in D2D mode. Expected powers per role follow from the
//! fraction of time the radio must stay active to carry the offered
//! traffic, with per-link PRB caps bounding how fast a transfer can go.
//!
//! The ledger compares each clustered user's measured energy with the
//! energy it would have consumed unclustered, and the ban pass (`ceea`)
//! removes over-consuming users from the head-candidate set until they
//! compensate.

use std::collections::BTreeSet;

use crate::radio::dbm_to_mw;
use crate::scenario::{Role, TrafficProfile};

#[derive(Debug, Clone)]
pub struct PowerModel {
    /// Power drawn in the idle radio state, W.
    pub idle_power_w: f64,
    /// Power drawn while the radio is active, W.
    pub connected_power_w: f64,
    /// Open-loop power-control target per PRB, dBm.
    pub pc_target_dbm: f64,
    /// Fractional path-loss compensation exponent.
    pub compensation_factor: f64,
    /// D2D transmit power per PRB, dBm.
    pub d2d_power_dbm: f64,
    /// Total cellular transmit power cap, dBm.
    pub ue_max_power_dbm: f64,
    /// Total D2D transmit power cap, dBm.
    pub d2d_max_power_dbm: f64,
    /// PRBs per subframe a direct user can get in each band.
    pub max_prb_dl: f64,
    pub max_prb_ul: f64,
    /// PRBs per subframe a cluster head can get in each band.
    pub max_prb_head_dl: f64,
    pub max_prb_head_ul: f64,
    /// PRBs per subframe on the two intra-cluster directions.
    pub max_prb_d2d_head: f64,
    pub max_prb_d2d_member: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            idle_power_w: 0.1,
            connected_power_w: 1.0,
            pc_target_dbm: -78.0,
            compensation_factor: 0.8,
            // operating point per PRB; the 18 dBm device maximum caps the
            // aggregate and the link budget
            d2d_power_dbm: 10.0,
            ue_max_power_dbm: 20.0,
            d2d_max_power_dbm: 18.0,
            max_prb_dl: 10.0,
            max_prb_ul: 10.0,
            max_prb_head_dl: 20.0,
            max_prb_head_ul: 20.0,
            max_prb_d2d_head: 10.0,
            max_prb_d2d_member: 10.0,
        }
    }
}

impl PowerModel {
    /// Per-PRB uplink transmit power toward a BS with the given channel
    /// gain, W, capped at the device maximum.
    pub fn pc_tx_per_prb_w(&self, gain_db: f64) -> f64 {
        let dbm = (self.pc_target_dbm - self.compensation_factor * gain_db)
            .min(self.ue_max_power_dbm);
        dbm_to_mw(dbm) / 1000.0
    }

    pub fn d2d_tx_per_prb_w(&self) -> f64 {
        dbm_to_mw(self.d2d_power_dbm) / 1000.0
    }

    fn ue_cap_w(&self) -> f64 {
        dbm_to_mw(self.ue_max_power_dbm) / 1000.0
    }

    fn d2d_cap_w(&self) -> f64 {
        dbm_to_mw(self.d2d_max_power_dbm) / 1000.0
    }

    fn delta_ci(&self) -> f64 {
        self.connected_power_w - self.idle_power_w
    }
}

/// Transmit side of one scheduled allocation.
#[derive(Debug, Clone, Copy)]
pub enum TxLink {
    /// Power-controlled cellular uplink with the given channel gain in dB.
    Cellular { gain_db: f64 },
    /// Fixed-power D2D transmission.
    D2d,
}

/// Instantaneous transmitted power for `prbs` scheduled PRBs, W. The total
/// is capped at the device maximum.
pub fn tx_power_w(prbs: f64, link: TxLink, model: &PowerModel) -> f64 {
    if prbs <= 0.0 {
        return 0.0;
    }
    let per_prb = match link {
        TxLink::Cellular { gain_db } => model.pc_tx_per_prb_w(gain_db),
        TxLink::D2d => model.d2d_tx_per_prb_w(),
    };
    let cap = dbm_to_mw(model.ue_max_power_dbm) / 1000.0;
    (prbs * per_prb).min(cap)
}

/// Active-radio probability of a direct user: the larger of its receive and
/// transmit duty cycles, clamped to [0, 1].
pub fn theta_unclustered(
    profile: &TrafficProfile,
    phi_dl: f64,
    phi_ul: f64,
    model: &PowerModel,
) -> f64 {
    let rx = duty(profile.rate_dl_bps, phi_dl, model.max_prb_dl);
    let tx = duty(profile.rate_ul_bps, phi_ul, model.max_prb_ul);
    rx.max(tx).clamp(0.0, 1.0)
}

/// Active-radio probability of a cluster member, served over the two D2D
/// directions.
pub fn theta_member(
    profile: &TrafficProfile,
    phi_from_head: f64,
    phi_to_head: f64,
    model: &PowerModel,
) -> f64 {
    let rx = duty(profile.rate_dl_bps, phi_from_head, model.max_prb_d2d_head);
    let tx = duty(profile.rate_ul_bps, phi_to_head, model.max_prb_d2d_member);
    rx.max(tx).clamp(0.0, 1.0)
}

fn duty(rate_bps: f64, phi: f64, cap_prbs: f64) -> f64 {
    if rate_bps == 0.0 {
        return 0.0;
    }
    if !phi.is_finite() {
        return 1.0; // unreachable link: the radio would never finish
    }
    rate_bps * phi / cap_prbs
}

/// D2D link costs toward one cluster member.
#[derive(Debug, Clone, Copy)]
pub struct MemberLink {
    pub profile: TrafficProfile,
    /// Head-to-member D2D cost, s/bit.
    pub to_member_cost: f64,
    /// Member-to-head D2D cost, s/bit.
    pub from_member_cost: f64,
}

/// Active-radio probability of a cluster head and its split across the
/// members it serves.
#[derive(Debug, Clone)]
pub struct HeadConnection {
    /// Total active probability, clamped to [0, 1].
    pub prob: f64,
    /// Per-member share such that `theta_unclustered + sum == prob`
    /// whenever no clamping occurred.
    pub per_member: Vec<f64>,
    /// Number of clamps applied; a clamp means the cell is over capacity.
    pub clamp_events: u32,
}

/// Full-duplex head duty cycle: the radio is active for the larger of the
/// downlink-receive branch and the transmit-plus-D2D-receive branch. The
/// member split allocates whatever exceeds the head's own duty cycle
/// proportionally to each member's terms in the active branch.
pub fn head_connection(
    head_profile: &TrafficProfile,
    phi_dl_head: f64,
    phi_ul_head: f64,
    members: &[MemberLink],
    model: &PowerModel,
) -> HeadConnection {
    let mut clamp_events = 0u32;

    // branch 1: receiving on the downlink (whole-cluster rate on the head link)
    let mut rx_d_own = duty(head_profile.rate_dl_bps, phi_dl_head, model.max_prb_head_dl);
    let rx_d_members: Vec<f64> = members
        .iter()
        .map(|m| duty(m.profile.rate_dl_bps, phi_dl_head, model.max_prb_head_dl))
        .collect();

    // branch 2: transmitting (uplink forwarding plus D2D) and receiving the
    // members' uplink over D2D
    let mut tx_own = duty(head_profile.rate_ul_bps, phi_ul_head, model.max_prb_head_ul);
    let tx_members: Vec<f64> = members
        .iter()
        .map(|m| {
            duty(m.profile.rate_ul_bps, phi_ul_head, model.max_prb_head_ul)
                + duty(m.profile.rate_dl_bps, m.to_member_cost, model.max_prb_d2d_head)
                + duty(
                    m.profile.rate_ul_bps,
                    m.from_member_cost,
                    model.max_prb_d2d_member,
                )
        })
        .collect();

    if rx_d_own > 1.0 {
        rx_d_own = 1.0;
        clamp_events += 1;
    }
    if tx_own > 1.0 {
        tx_own = 1.0;
        clamp_events += 1;
    }

    let branch_d = rx_d_own + rx_d_members.iter().sum::<f64>();
    let branch_u = tx_own + tx_members.iter().sum::<f64>();
    let mut raw = branch_d.max(branch_u);
    if raw > 1.0 {
        raw = 1.0;
        clamp_events += 1;
    }

    // The member split sits on top of the head's own duty cycle, so the
    // effective probability never drops below what the head would need for
    // its own traffic (the looser head caps can make `raw` smaller).
    let own = theta_unclustered(head_profile, phi_dl_head, phi_ul_head, model);
    let remainder = (raw - own).max(0.0);
    let prob = (own + remainder).min(1.0);
    let parts = if branch_d >= branch_u {
        rx_d_members
    } else {
        tx_members
    };
    let part_sum: f64 = parts.iter().sum();
    let per_member = if part_sum > 0.0 {
        parts.iter().map(|p| remainder * p / part_sum).collect()
    } else {
        vec![0.0; members.len()]
    };

    HeadConnection {
        prob,
        per_member,
        clamp_events,
    }
}

/// Expected transmitted power of a direct user, W, capped at the device
/// maximum.
pub fn expected_tx_unclustered_w(
    profile: &TrafficProfile,
    gain_db: f64,
    phi_ul: f64,
    model: &PowerModel,
) -> f64 {
    if profile.rate_ul_bps == 0.0 || !phi_ul.is_finite() {
        return 0.0;
    }
    (model.pc_tx_per_prb_w(gain_db) * profile.rate_ul_bps * phi_ul).min(model.ue_cap_w())
}

/// Expected transmitted power of a cluster member, W.
pub fn expected_tx_member_w(
    profile: &TrafficProfile,
    phi_to_head: f64,
    model: &PowerModel,
) -> f64 {
    if profile.rate_ul_bps == 0.0 || !phi_to_head.is_finite() {
        return 0.0;
    }
    (model.d2d_tx_per_prb_w() * profile.rate_ul_bps * phi_to_head).min(model.d2d_cap_w())
}

/// Expected transmitted power of a cluster head, W: uplink forwarding of
/// the whole cluster plus the D2D downlink toward every member, each side
/// capped at its device maximum.
pub fn expected_tx_head_w(
    head_profile: &TrafficProfile,
    gain_db: f64,
    phi_ul_head: f64,
    members: &[MemberLink],
    model: &PowerModel,
) -> f64 {
    let mut ul_rate = head_profile.rate_ul_bps;
    let mut d2d = 0.0;
    for m in members {
        ul_rate += m.profile.rate_ul_bps;
        if m.to_member_cost.is_finite() {
            d2d += m.profile.rate_dl_bps * m.to_member_cost;
        }
    }
    let cellular = if phi_ul_head.is_finite() {
        (model.pc_tx_per_prb_w(gain_db) * ul_rate * phi_ul_head).min(model.ue_cap_w())
    } else {
        0.0
    };
    cellular + (model.d2d_tx_per_prb_w() * d2d).min(model.d2d_cap_w())
}

/// Expected total power of a direct user, W.
pub fn power_unclustered_w(
    profile: &TrafficProfile,
    gain_db: f64,
    phi_dl: f64,
    phi_ul: f64,
    model: &PowerModel,
) -> f64 {
    model.idle_power_w
        + theta_unclustered(profile, phi_dl, phi_ul, model) * model.delta_ci()
        + expected_tx_unclustered_w(profile, gain_db, phi_ul, model)
}

/// Expected total power of a cluster member, W.
pub fn power_member_w(
    profile: &TrafficProfile,
    phi_from_head: f64,
    phi_to_head: f64,
    model: &PowerModel,
) -> f64 {
    model.idle_power_w
        + theta_member(profile, phi_from_head, phi_to_head, model) * model.delta_ci()
        + expected_tx_member_w(profile, phi_to_head, model)
}

/// Expected total power of a cluster head, W, with the clamp count of the
/// underlying duty-cycle computation.
pub fn power_head_w(
    head_profile: &TrafficProfile,
    gain_db: f64,
    phi_dl_head: f64,
    phi_ul_head: f64,
    members: &[MemberLink],
    model: &PowerModel,
) -> (f64, u32) {
    let conn = head_connection(head_profile, phi_dl_head, phi_ul_head, members, model);
    let p = model.idle_power_w
        + conn.prob * model.delta_ci()
        + expected_tx_head_w(head_profile, gain_db, phi_ul_head, members, model);
    (p, conn.clamp_events)
}

/// Energy a user would consume over a window if it were served directly:
/// active time bounded by the per-band PRB caps, idle the rest, plus the
/// power-controlled transmit energy of the uplink subframes.
pub fn counterfactual_energy_j(
    window_s: f64,
    bits_dl: f64,
    bits_ul: f64,
    tbs_dl_bits: f64,
    tbs_ul_bits: f64,
    gain_db: f64,
    subframe_s: f64,
    model: &PowerModel,
) -> f64 {
    assert!(window_s > 0.0, "window must be positive");
    let dl_subframes = needed_subframes(bits_dl, model.max_prb_dl, tbs_dl_bits, window_s, subframe_s);
    let ul_subframes = needed_subframes(bits_ul, model.max_prb_ul, tbs_ul_bits, window_s, subframe_s);
    let connected_s = (subframe_s * dl_subframes.max(ul_subframes)).min(window_s);
    let idle_s = window_s - connected_s;
    connected_s * model.connected_power_w
        + idle_s * model.idle_power_w
        + subframe_s * model.pc_tx_per_prb_w(gain_db) * ul_subframes
}

fn needed_subframes(bits: f64, cap_prbs: f64, tbs_bits: f64, window_s: f64, subframe_s: f64) -> f64 {
    if bits <= 0.0 {
        0.0
    } else if tbs_bits <= 0.0 {
        // no usable link: pinned to the radio for the whole window
        window_s / subframe_s
    } else {
        (bits / (cap_prbs * tbs_bits)).ceil()
    }
}

/// Ban-threshold schedule and window layout of the overconsumption pass.
#[derive(Debug, Clone)]
pub struct CeeaConfig {
    pub observation_period_s: f64,
    pub subperiod_s: f64,
    pub w_max: f64,
}

impl Default for CeeaConfig {
    fn default() -> Self {
        CeeaConfig {
            observation_period_s: 60.0,
            subperiod_s: 5.0,
            w_max: 0.2,
        }
    }
}

impl CeeaConfig {
    /// Number of subperiods per observation period.
    pub fn subperiods(&self) -> u32 {
        (self.observation_period_s / self.subperiod_s).round().max(1.0) as u32
    }
}

/// Per-user energy bookkeeping.
///
/// Clustered subperiods accumulate both the measured energy and the
/// counterfactual direct-service energy; their ratio is the overconsumption.
/// The ban threshold decays every counted subperiod and resets with the
/// observation period.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    /// Total measured energy over the whole run, J.
    pub total_j: f64,
    /// What direct service would have cost over the whole run, J.
    pub total_baseline_j: f64,
    /// Lifetime sums over clustered subperiods only.
    pub clustered_j: f64,
    pub clustered_baseline_j: f64,
    /// Current observation-period sums over clustered subperiods.
    pub period_j: f64,
    pub period_baseline_j: f64,
    /// Wall-clock time spent in each clustered role, s.
    pub tau_head_s: f64,
    pub tau_member_s: f64,
    /// Current allowed overconsumption.
    pub threshold: f64,
    /// Subperiod index within the observation period, 1-based.
    pub subperiod_index: u32,
    pub banned: bool,
    sub_j: f64,
    sub_baseline_j: f64,
}

impl EnergyLedger {
    pub fn new(w_max: f64) -> Self {
        EnergyLedger {
            total_j: 0.0,
            total_baseline_j: 0.0,
            clustered_j: 0.0,
            clustered_baseline_j: 0.0,
            period_j: 0.0,
            period_baseline_j: 0.0,
            tau_head_s: 0.0,
            tau_member_s: 0.0,
            threshold: w_max,
            subperiod_index: 1,
            banned: false,
            sub_j: 0.0,
            sub_baseline_j: 0.0,
        }
    }

    /// Adds one engine step: measured power at the current role and the
    /// counterfactual energy of the same window.
    pub fn accrue(&mut self, role: Role, actual_w: f64, baseline_j: f64, dt_s: f64) {
        self.total_j += actual_w * dt_s;
        self.total_baseline_j += baseline_j;
        self.sub_j += actual_w * dt_s;
        self.sub_baseline_j += baseline_j;
        match role {
            Role::Head => self.tau_head_s += dt_s,
            Role::Member => self.tau_member_s += dt_s,
            Role::Unclustered => {}
        }
    }

    /// Overconsumption relative to a run without any clustering: the ratio
    /// of measured to counterfactual energy over the whole horizon, minus
    /// one. Zero when nothing was measured yet.
    pub fn overconsumption(&self) -> f64 {
        if self.total_baseline_j > 0.0 {
            self.total_j / self.total_baseline_j - 1.0
        } else {
            0.0
        }
    }

    /// The ban ledger's own overconsumption measure: clustered subperiods
    /// only, as accumulated by the subperiod pass.
    pub fn clustered_overconsumption(&self) -> f64 {
        if self.clustered_baseline_j > 0.0 {
            self.clustered_j / self.clustered_baseline_j - 1.0
        } else {
            0.0
        }
    }

    fn take_subperiod(&mut self) -> (f64, f64) {
        let out = (self.sub_j, self.sub_baseline_j);
        self.sub_j = 0.0;
        self.sub_baseline_j = 0.0;
        out
    }
}

/// Runs the ban pass at a subperiod boundary and returns the banned set.
///
/// Only users clustered at the boundary advance their ledger. A user is
/// banned when its period energy exceeds the decayed allowance and either
/// the current subperiod also overshot or it has spent more time as head
/// than as member; otherwise it is unbanned. The threshold then decays and
/// the period wraps after the configured number of subperiods.
pub fn run_ceea(
    ledgers: &mut [EnergyLedger],
    roles: &[Role],
    cfg: &CeeaConfig,
) -> BTreeSet<usize> {
    let n_eps = cfg.subperiods() as f64;
    for (i, ledger) in ledgers.iter_mut().enumerate() {
        match roles[i] {
            Role::Head | Role::Member => {}
            Role::Unclustered => {
                // the subperiod is not counted toward the ledger
                ledger.take_subperiod();
                continue;
            }
        }
        let (sub_j, sub_baseline_j) = ledger.take_subperiod();
        let allowance = ledger.threshold + 1.0;
        if ledger.period_j > allowance * ledger.period_baseline_j {
            if sub_j > allowance * sub_baseline_j {
                ledger.banned = true;
            } else if ledger.tau_head_s > ledger.tau_member_s {
                ledger.banned = true;
            } else {
                ledger.banned = false;
            }
        } else {
            ledger.banned = false;
        }
        ledger.threshold *= (n_eps - 1.0) / n_eps;
        ledger.subperiod_index += 1;
        ledger.period_j += sub_j;
        ledger.period_baseline_j += sub_baseline_j;
        ledger.clustered_j += sub_j;
        ledger.clustered_baseline_j += sub_baseline_j;
        if ledger.subperiod_index > cfg.subperiods() {
            ledger.subperiod_index = 1;
            ledger.threshold = cfg.w_max;
            ledger.period_j = 0.0;
            ledger.period_baseline_j = 0.0;
        }
    }
    ledgers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.banned.then_some(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ftp() -> TrafficProfile {
        TrafficProfile::new(700_000.0, 0.05)
    }

    #[test]
    fn tx_power_zero_prbs_is_zero() {
        let m = PowerModel::default();
        assert_eq!(tx_power_w(0.0, TxLink::Cellular { gain_db: -100.0 }, &m), 0.0);
    }

    #[test]
    fn tx_power_without_compensation_ignores_gain() {
        let m = PowerModel {
            compensation_factor: 0.0,
            ..PowerModel::default()
        };
        let a = tx_power_w(3.0, TxLink::Cellular { gain_db: -60.0 }, &m);
        let b = tx_power_w(3.0, TxLink::Cellular { gain_db: -140.0 }, &m);
        assert!((a - b).abs() < 1e-15);
        assert!((a - 3.0 * dbm_to_mw(-78.0) / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn tx_power_full_compensation_reference() {
        // two PRBs at full path-loss compensation; cap lifted to expose the
        // raw power-control arithmetic, then checked against the default cap
        let mut m = PowerModel {
            compensation_factor: 1.0,
            ue_max_power_dbm: 30.0,
            ..PowerModel::default()
        };
        let p = tx_power_w(2.0, TxLink::Cellular { gain_db: -100.0 }, &m);
        assert!((p * 1000.0 - 316.98).abs() < 0.01, "got {} mW", p * 1000.0);
        m.ue_max_power_dbm = 20.0;
        let capped = tx_power_w(2.0, TxLink::Cellular { gain_db: -100.0 }, &m);
        assert!((capped * 1000.0 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn theta_zero_traffic_is_zero() {
        let m = PowerModel::default();
        let p = TrafficProfile::new(0.0, 0.0);
        assert_eq!(theta_unclustered(&p, 1e-6, 1e-6, &m), 0.0);
    }

    #[test]
    fn theta_takes_the_larger_duty_cycle() {
        let m = PowerModel::default();
        // choose costs so the two ratios are 0.3 and 0.1
        let p = TrafficProfile::new(700_000.0, 0.05);
        let phi_dl = 0.3 * m.max_prb_dl / p.rate_dl_bps;
        let phi_ul = 0.1 * m.max_prb_ul / p.rate_ul_bps;
        let th = theta_unclustered(&p, phi_dl, phi_ul, &m);
        assert!((th - 0.3).abs() < 1e-12);
    }

    #[test]
    fn theta_symmetric_ratios_agree() {
        let m = PowerModel::default();
        let p = TrafficProfile::new(64_000.0, 1.0);
        let phi = 0.2 * m.max_prb_dl / p.rate_dl_bps;
        let th = theta_unclustered(&p, phi, phi * m.max_prb_ul / m.max_prb_dl, &m);
        assert!((th - 0.2).abs() < 1e-12);
    }

    #[test]
    fn head_split_empty_cluster_is_own_duty() {
        let m = PowerModel::default();
        let c = head_connection(&ftp(), 1e-6, 1e-6, &[], &m);
        assert!(c.per_member.is_empty());
        let own = theta_unclustered(&ftp(), 1e-6, 1e-6, &m);
        assert!((c.prob - own).abs() < 1e-12);
    }

    #[test]
    fn head_split_zero_traffic_member_contributes_nothing() {
        let m = PowerModel::default();
        let quiet = MemberLink {
            profile: TrafficProfile::new(0.0, 0.0),
            to_member_cost: 1e-6,
            from_member_cost: 1e-6,
        };
        let busy = MemberLink {
            profile: ftp(),
            to_member_cost: 1e-6,
            from_member_cost: 1e-6,
        };
        let c = head_connection(&ftp(), 2e-6, 2e-6, &[quiet, busy], &m);
        assert_eq!(c.per_member[0], 0.0);
        assert!(c.per_member[1] >= 0.0);
    }

    #[test]
    fn head_split_sums_to_total_probability() {
        let m = PowerModel::default();
        let members = [
            MemberLink {
                profile: ftp(),
                to_member_cost: 1.2e-6,
                from_member_cost: 1.4e-6,
            },
            MemberLink {
                profile: TrafficProfile::new(64_000.0, 1.0),
                to_member_cost: 2e-6,
                from_member_cost: 2e-6,
            },
        ];
        let head = ftp();
        let (phi_dl, phi_ul) = (2.5e-6, 2.5e-6);
        let c = head_connection(&head, phi_dl, phi_ul, &members, &m);
        let own = theta_unclustered(&head, phi_dl, phi_ul, &m);
        let sum: f64 = c.per_member.iter().sum();
        if c.clamp_events == 0 {
            assert!((own + sum - c.prob).abs() < 1e-12);
        }
        assert!(c.prob <= 1.0 && c.prob >= 0.0);
        for &v in &c.per_member {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn member_expected_tx_matches_hand_value() {
        let m = PowerModel::default(); // 10 dBm per PRB in D2D mode
        let p = ftp();
        let phi = 1.5e-6;
        let expect = 0.01 * p.rate_ul_bps * phi;
        assert!((expected_tx_member_w(&p, phi, &m) - expect).abs() < 1e-15);
    }

    #[test]
    fn memberless_head_transmits_like_a_direct_user() {
        let m = PowerModel::default();
        let p = TrafficProfile::new(64_000.0, 1.0);
        let a = expected_tx_head_w(&p, -100.0, 2e-6, &[], &m);
        let b = expected_tx_unclustered_w(&p, -100.0, 2e-6, &m);
        assert!((a - b).abs() < 1e-18);
    }

    #[test]
    fn head_expected_tx_two_member_hand_check() {
        let m = PowerModel::default();
        let head = ftp();
        let gain = -100.0;
        let phi_ul = 2e-6;
        let members = [
            MemberLink {
                profile: ftp(),
                to_member_cost: 1e-6,
                from_member_cost: 1e-6,
            },
            MemberLink {
                profile: TrafficProfile::new(64_000.0, 1.0),
                to_member_cost: 1.5e-6,
                from_member_cost: 1.5e-6,
            },
        ];
        let got = expected_tx_head_w(&head, gain, phi_ul, &members, &m);
        let pc = m.pc_tx_per_prb_w(gain);
        let d2d = m.d2d_tx_per_prb_w();
        let ul_sum = head.rate_ul_bps + members[0].profile.rate_ul_bps + members[1].profile.rate_ul_bps;
        let expect = pc * ul_sum * phi_ul
            + d2d * (members[0].profile.rate_dl_bps * 1e-6
                + members[1].profile.rate_dl_bps * 1.5e-6);
        assert!((got - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn role_n_with_zero_alpha_transmits_nothing() {
        let m = PowerModel::default();
        let p = TrafficProfile::new(700_000.0, 0.0);
        assert_eq!(expected_tx_unclustered_w(&p, -100.0, 1e-6, &m), 0.0);
    }

    #[test]
    fn counterfactual_zero_traffic_is_idle_energy() {
        let m = PowerModel::default();
        let e = counterfactual_energy_j(10.0, 0.0, 0.0, 360.0, 360.0, -100.0, 1e-3, &m);
        assert!((e - 10.0 * m.idle_power_w).abs() < 1e-12);
    }

    #[test]
    fn counterfactual_dl_only_has_no_tx_term() {
        let m = PowerModel::default();
        let window = 10.0;
        let bits_dl = 1_000_000.0;
        let e = counterfactual_energy_j(window, bits_dl, 0.0, 360.0, 360.0, -100.0, 1e-3, &m);
        let frames = (bits_dl / (m.max_prb_dl * 360.0)).ceil();
        let tc = 1e-3 * frames;
        let expect = tc * m.connected_power_w + (window - tc) * m.idle_power_w;
        assert!((e - expect).abs() < 1e-12);
    }

    #[test]
    fn counterfactual_hand_window() {
        // a window needing exactly 2 s of connected time on the downlink
        let m = PowerModel::default();
        let window = 10.0;
        let tbs = 360.0;
        let bits_dl = 2000.0 * m.max_prb_dl * tbs; // 2000 subframes
        let bits_ul = 500.0 * m.max_prb_ul * tbs;
        let e = counterfactual_energy_j(window, bits_dl, bits_ul, tbs, tbs, -100.0, 1e-3, &m);
        let tx = 1e-3 * m.pc_tx_per_prb_w(-100.0) * 500.0;
        let expect = 2.0 * m.connected_power_w + 8.0 * m.idle_power_w + tx;
        assert!((e - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn ledger_never_clustered_reports_zero_overconsumption() {
        let cfg = CeeaConfig::default();
        let mut ledgers = vec![EnergyLedger::new(cfg.w_max)];
        for _ in 0..20 {
            // direct service: measured energy equals the counterfactual
            ledgers[0].accrue(Role::Unclustered, 0.5, 2.5, 5.0);
            let z = run_ceea(&mut ledgers, &[Role::Unclustered], &cfg);
            assert!(z.is_empty());
        }
        assert!(ledgers[0].overconsumption().abs() < 1e-12);
        assert_eq!(ledgers[0].clustered_overconsumption(), 0.0);
        assert!(!ledgers[0].banned);
        assert_eq!(ledgers[0].subperiod_index, 1); // never advanced
    }

    #[test]
    fn persistent_overconsumer_gets_banned() {
        let cfg = CeeaConfig::default();
        let mut ledgers = vec![EnergyLedger::new(cfg.w_max)];
        // double the counterfactual every subperiod, always a head
        ledgers[0].accrue(Role::Head, 2.0, 5.0, 5.0); // 10 J vs 5 J
        run_ceea(&mut ledgers, &[Role::Head], &cfg);
        assert!(!ledgers[0].banned, "first subperiod has no history yet");
        ledgers[0].accrue(Role::Head, 2.0, 5.0, 5.0);
        let z = run_ceea(&mut ledgers, &[Role::Head], &cfg);
        assert!(ledgers[0].banned);
        assert!(z.contains(&0));
        // the ban ledger's ratio covers exactly the clustered subperiods
        assert!((ledgers[0].clustered_overconsumption() - 1.0).abs() < 1e-12);
        assert!((ledgers[0].overconsumption() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compensating_user_is_not_banned() {
        let cfg = CeeaConfig::default();
        let mut ledgers = vec![EnergyLedger::new(cfg.w_max)];
        // overshoot once as head, then compensate as member with tau_m > tau_h
        ledgers[0].accrue(Role::Head, 2.0, 5.0, 5.0);
        run_ceea(&mut ledgers, &[Role::Head], &cfg);
        ledgers[0].accrue(Role::Member, 0.1, 5.0, 5.0);
        run_ceea(&mut ledgers, &[Role::Member], &cfg);
        ledgers[0].accrue(Role::Member, 0.1, 5.0, 5.0);
        let z = run_ceea(&mut ledgers, &[Role::Member], &cfg);
        // cumulative stays above the allowance but the current subperiods
        // comply and member time now dominates
        assert!(z.is_empty(), "compensating member must stay eligible");
    }

    #[test]
    fn threshold_decays_and_resets_with_the_period() {
        let cfg = CeeaConfig {
            observation_period_s: 15.0,
            subperiod_s: 5.0,
            w_max: 0.2,
        };
        assert_eq!(cfg.subperiods(), 3);
        let mut ledgers = vec![EnergyLedger::new(cfg.w_max)];
        let decay = 2.0 / 3.0;
        ledgers[0].accrue(Role::Member, 0.1, 1.0, 5.0);
        run_ceea(&mut ledgers, &[Role::Member], &cfg);
        assert!((ledgers[0].threshold - 0.2 * decay).abs() < 1e-12);
        ledgers[0].accrue(Role::Member, 0.1, 1.0, 5.0);
        run_ceea(&mut ledgers, &[Role::Member], &cfg);
        assert!((ledgers[0].threshold - 0.2 * decay * decay).abs() < 1e-12);
        ledgers[0].accrue(Role::Member, 0.1, 1.0, 5.0);
        run_ceea(&mut ledgers, &[Role::Member], &cfg);
        // period wrapped
        assert_eq!(ledgers[0].subperiod_index, 1);
        assert!((ledgers[0].threshold - 0.2).abs() < 1e-12);
        assert_eq!(ledgers[0].period_j, 0.0);
        // lifetime sums survive the wrap
        assert!(ledgers[0].clustered_j > 0.0);
    }
}
