//! Link budgets and per-bit resource costs.
//!
//! For every BS-UE pair (both bands) and every candidate D2D pair this
//! module computes path loss, SINR and the transport block size of one PRB
//! per subframe, then derives the cost `phi = subframe / tbs` in seconds per
//! bit. Offered load in PRBs/subframe is simply `rate * phi` downstream.
//!
//! Interference model: co-band cells are treated as aggregate sources at
//! their site position. In the downlink band a cell radiates its full
//! per-PRB power; in the uplink band it contributes a nominal power-
//! controlled uplink transmitter, the system-level abstraction of "all
//! cells fully loaded". In `ActivityScaled` mode each contribution is
//! weighted by the cell's PRB occupancy from the previous engine step.
//! Receivers never see interference from their own cell: uplink and D2D
//! transmissions within a cell are assumed orthogonal.

use std::collections::BTreeMap;

use crate::scenario::{BaseStation, BsKind, UserEquipment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceMode {
    /// Every co-band cell interferes at full per-PRB power.
    FullLoad,
    /// Interferers weighted by last step's PRB occupancy ratio.
    ActivityScaled,
}

#[derive(Debug, Clone)]
pub struct RadioConfig {
    /// Attenuation factor of the truncated Shannon bound.
    pub attenuation_factor: f64,
    /// PRB bandwidth in Hz.
    pub prb_bandwidth_hz: f64,
    /// Subframe duration in seconds.
    pub subframe_s: f64,
    pub noise_density_dbm_hz: f64,
    pub ue_noise_figure_db: f64,
    pub bs_noise_figure_db: f64,
    /// Links below this SINR are unusable.
    pub sinr_floor_db: f64,
    /// SINR cap of the link-adaptation range.
    pub sinr_cap_db: f64,
    /// Per-PRB cap of the power-controlled cellular uplink.
    pub ue_max_power_dbm: f64,
    /// Per-PRB D2D transmit power.
    pub d2d_power_dbm: f64,
    /// Open-loop power-control target received power per PRB.
    pub power_control_target_dbm: f64,
    /// Fractional path-loss compensation exponent.
    pub compensation_factor: f64,
    pub interference_mode: InterferenceMode,
    /// Path loss at which the nominal uplink interferer of a co-band cell is
    /// power-controlled (it transmits from the cell site).
    pub ul_ref_path_loss_db: f64,
    /// Bias added to small-cell RSRP during association (cell range expansion).
    pub cre_bias_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            attenuation_factor: 0.6,
            prb_bandwidth_hz: 180_000.0,
            subframe_s: 1e-3,
            noise_density_dbm_hz: -174.0,
            ue_noise_figure_db: 9.0,
            bs_noise_figure_db: 5.0,
            sinr_floor_db: -10.0,
            sinr_cap_db: 22.0,
            ue_max_power_dbm: 20.0,
            d2d_power_dbm: 18.0,
            power_control_target_dbm: -78.0,
            compensation_factor: 0.8,
            interference_mode: InterferenceMode::FullLoad,
            ul_ref_path_loss_db: 110.0,
            cre_bias_db: 0.0,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Macro,
    Small,
    D2d,
}

impl From<BsKind> for LinkKind {
    fn from(k: BsKind) -> Self {
        match k {
            BsKind::Macro => LinkKind::Macro,
            BsKind::Small => LinkKind::Small,
        }
    }
}

/// Distance-dependent path loss in dB. Distances are clamped below at 1 m,
/// so co-located nodes see the 1 m loss.
pub fn path_loss(kind: LinkKind, distance_m: f64) -> f64 {
    assert!(
        distance_m >= 0.0 && !distance_m.is_nan(),
        "path loss needs a non-negative distance"
    );
    let d_km = (distance_m.max(1.0)) / 1000.0;
    match kind {
        LinkKind::Macro => 128.1 + 37.6 * d_km.log10(),
        LinkKind::Small => 140.7 + 36.7 * d_km.log10(),
        LinkKind::D2d => 148.0 + 40.0 * d_km.log10(),
    }
}

/// Linear SINR from a signal budget, an interferer list and a noise floor,
/// all in dBm at the receiver.
pub fn sinr(signal_dbm: f64, interferers: &[(f64, f64)], noise_dbm: f64) -> f64 {
    let s = dbm_to_mw(signal_dbm);
    let mut denom = dbm_to_mw(noise_dbm);
    for &(power_dbm, gain_db) in interferers {
        denom += dbm_to_mw(power_dbm + gain_db);
    }
    s / denom
}

/// Bits per PRB per subframe at the given linear SINR (attenuated and
/// truncated Shannon bound). Below the floor the link is unusable.
pub fn tbs(gamma: f64, cfg: &RadioConfig) -> f64 {
    assert!(gamma >= 0.0);
    let floor = dbm_to_mw(cfg.sinr_floor_db); // dB ratio -> linear
    let cap = dbm_to_mw(cfg.sinr_cap_db);
    if gamma < floor {
        return 0.0;
    }
    let g = gamma.min(cap);
    cfg.subframe_s * cfg.attenuation_factor * cfg.prb_bandwidth_hz * (1.0 + g).log2()
}

/// Cost of one bit on a link, in PRB-subframe-seconds per bit.
pub fn cost_per_bit(tbs_bits: f64, cfg: &RadioConfig) -> f64 {
    if tbs_bits <= 0.0 {
        f64::INFINITY
    } else {
        cfg.subframe_s / tbs_bits
    }
}

/// Per-band PRB occupancy ratios of the previous step, used by
/// `ActivityScaled` interference.
#[derive(Debug, Clone)]
pub struct CellActivity {
    pub dl_ratio: Vec<f64>,
    pub ul_ratio: Vec<f64>,
}

/// Per-bit resource costs for every usable link.
///
/// `dl_cost[k][i]` and `ul_cost[k][i]` are indexed by BS id then UE id;
/// `d2d_cost[(t, r)]` is the directed cost from transmitter `t` to receiver
/// `r`. Unreachable links hold `f64::INFINITY`; D2D pairs outside the
/// candidate range are absent from the map.
#[derive(Debug, Clone)]
pub struct LinkCostTable {
    pub dl_cost: Vec<Vec<f64>>,
    pub ul_cost: Vec<Vec<f64>>,
    pub d2d_cost: BTreeMap<(usize, usize), f64>,
    /// BS-to-UE channel gains in dB (negative path loss), shared by both
    /// link directions.
    pub gain_db: Vec<Vec<f64>>,
    pub subframe_s: f64,
}

impl LinkCostTable {
    pub fn dl(&self, bs: usize, ue: usize) -> f64 {
        self.dl_cost[bs][ue]
    }

    pub fn ul(&self, ue: usize, bs: usize) -> f64 {
        self.ul_cost[bs][ue]
    }

    /// Directed D2D cost; infinite when the pair is out of range.
    pub fn d2d(&self, tx: usize, rx: usize) -> f64 {
        self.d2d_cost
            .get(&(tx, rx))
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    pub fn has_d2d(&self, tx: usize, rx: usize) -> bool {
        self.d2d_cost.contains_key(&(tx, rx))
    }

    /// Transport block size recovered from a cost entry.
    pub fn tbs_from_cost(&self, cost: f64) -> f64 {
        if cost.is_finite() && cost > 0.0 {
            self.subframe_s / cost
        } else {
            0.0
        }
    }
}

/// Per-PRB transmit power of the power-controlled cellular uplink.
pub fn ul_tx_power_dbm(path_loss_db: f64, cfg: &RadioConfig) -> f64 {
    (cfg.power_control_target_dbm + cfg.compensation_factor * path_loss_db)
        .min(cfg.ue_max_power_dbm)
}

fn nominal_ul_interferer_dbm(cfg: &RadioConfig) -> f64 {
    ul_tx_power_dbm(cfg.ul_ref_path_loss_db, cfg)
}

/// Builds the full cost table for one deployment snapshot.
pub fn build_cost_table(
    bss: &[BaseStation],
    users: &[UserEquipment],
    cfg: &RadioConfig,
    activity: Option<&CellActivity>,
) -> LinkCostTable {
    let n_bs = bss.len();
    let n_ue = users.len();
    let noise_prb_dbm = cfg.noise_density_dbm_hz + 10.0 * cfg.prb_bandwidth_hz.log10();
    let ue_noise = noise_prb_dbm + cfg.ue_noise_figure_db;
    let bs_noise = noise_prb_dbm + cfg.bs_noise_figure_db;
    let ul_nominal = nominal_ul_interferer_dbm(cfg);

    let weight = |band: bool, k: usize| -> f64 {
        // band: true = downlink, false = uplink
        match (cfg.interference_mode, activity) {
            (InterferenceMode::FullLoad, _) | (_, None) => 1.0,
            (InterferenceMode::ActivityScaled, Some(a)) => {
                if band {
                    a.dl_ratio.get(k).copied().unwrap_or(1.0)
                } else {
                    a.ul_ratio.get(k).copied().unwrap_or(1.0)
                }
            }
        }
    };

    // Site-to-user gains, reused for serving links and interference.
    let mut gain_db = vec![vec![0.0; n_ue]; n_bs];
    for (k, bs) in bss.iter().enumerate() {
        for (i, ue) in users.iter().enumerate() {
            let d = bs.position.dist(&ue.position);
            gain_db[k][i] = -path_loss(bs.kind.into(), d);
        }
    }
    // Site-to-site gains for uplink interference at BS receivers.
    let mut site_gain_db = vec![vec![0.0; n_bs]; n_bs];
    for (k, a) in bss.iter().enumerate() {
        for (q, b) in bss.iter().enumerate() {
            if k != q {
                site_gain_db[k][q] = -path_loss(a.kind.into(), a.position.dist(&b.position));
            }
        }
    }

    let mut dl_cost = vec![vec![f64::INFINITY; n_ue]; n_bs];
    let mut ul_cost = vec![vec![f64::INFINITY; n_ue]; n_bs];

    for (k, bs) in bss.iter().enumerate() {
        let per_prb = bs.per_prb_tx_dbm();
        for i in 0..n_ue {
            // Downlink: interference from other co-band cells at the user.
            let mut interferers = Vec::new();
            for (q, other) in bss.iter().enumerate() {
                if q != k && other.band_id == bs.band_id {
                    interferers.push((
                        other.per_prb_tx_dbm() + 10.0 * weight(true, q).max(1e-12).log10(),
                        gain_db[q][i],
                    ));
                }
            }
            let g_dl = sinr(per_prb + gain_db[k][i], &interferers, ue_noise);
            dl_cost[k][i] = cost_per_bit(tbs(g_dl, cfg), cfg);

            // Uplink: nominal co-band uplink transmitters at the other sites.
            let mut ul_interferers = Vec::new();
            for (q, other) in bss.iter().enumerate() {
                if q != k && other.band_id == bs.band_id {
                    ul_interferers.push((
                        ul_nominal + 10.0 * weight(false, q).max(1e-12).log10(),
                        site_gain_db[q][k],
                    ));
                }
            }
            let tx = ul_tx_power_dbm(-gain_db[k][i], cfg);
            let g_ul = sinr(tx + gain_db[k][i], &ul_interferers, bs_noise);
            ul_cost[k][i] = cost_per_bit(tbs(g_ul, cfg), cfg);
        }
    }

    // Each user's strongest co-band cell is the one whose own uplink
    // activity would be orthogonal to a D2D link at that user.
    let best_cell: Vec<usize> = (0..n_ue)
        .map(|i| {
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            for (k, bs) in bss.iter().enumerate() {
                let p = bs.max_tx_power_dbm + gain_db[k][i];
                if p > best_p {
                    best_p = p;
                    best = k;
                }
            }
            best
        })
        .collect();

    // Interference plus noise at each user in the uplink band of each group.
    let bands: Vec<u8> = {
        let mut b: Vec<u8> = bss.iter().map(|x| x.band_id).collect();
        b.sort_unstable();
        b.dedup();
        b
    };
    let mut ul_in_at_ue = vec![vec![0.0f64; n_ue]; bands.len()];
    for (bi, &band) in bands.iter().enumerate() {
        for i in 0..n_ue {
            let mut total = dbm_to_mw(ue_noise);
            for (q, other) in bss.iter().enumerate() {
                if other.band_id == band && q != best_cell[i] {
                    total += dbm_to_mw(ul_nominal + gain_db[q][i]) * weight(false, q);
                }
            }
            ul_in_at_ue[bi][i] = total;
        }
    }

    let mut d2d_cost = BTreeMap::new();
    let floor = dbm_to_mw(cfg.sinr_floor_db);
    for t in 0..n_ue {
        for r in 0..n_ue {
            if t == r {
                continue;
            }
            let d = users[t].position.dist(&users[r].position);
            let pl = path_loss(LinkKind::D2d, d);
            let rx_band = bss[best_cell[r]].band_id;
            let bi = bands.iter().position(|&b| b == rx_band).unwrap();
            let gamma = dbm_to_mw(cfg.d2d_power_dbm - pl) / ul_in_at_ue[bi][r];
            if gamma < floor {
                continue; // outside the candidate range
            }
            d2d_cost.insert((t, r), cost_per_bit(tbs(gamma, cfg), cfg));
        }
    }

    LinkCostTable {
        dl_cost,
        ul_cost,
        d2d_cost,
        gain_db,
        subframe_s: cfg.subframe_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{deploy, ScenarioConfig};

    #[test]
    fn path_loss_matches_closed_forms() {
        let pl = path_loss(LinkKind::Macro, 500.0);
        assert!((pl - (128.1 + 37.6 * 0.5f64.log10())).abs() < 1e-12);
        assert!((pl - 116.78).abs() < 0.01);
        assert!((path_loss(LinkKind::Macro, 1000.0) - 128.1).abs() < 1e-12);
        assert!((path_loss(LinkKind::D2d, 100.0) - 108.0).abs() < 1e-12);
        assert!(
            (path_loss(LinkKind::Small, 200.0) - (140.7 + 36.7 * 0.2f64.log10())).abs() < 1e-12
        );
    }

    #[test]
    fn path_loss_clamps_below_one_meter() {
        assert_eq!(
            path_loss(LinkKind::Macro, 0.2),
            path_loss(LinkKind::Macro, 1.0)
        );
    }

    #[test]
    #[should_panic]
    fn path_loss_rejects_negative_distance() {
        path_loss(LinkKind::Macro, -5.0);
    }

    #[test]
    fn sinr_noise_only() {
        let g = sinr(-90.0, &[], -120.0);
        assert!((g - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn sinr_equal_interferer_is_zero_db() {
        let g = sinr(-90.0, &[(-90.0, 0.0)], -200.0);
        assert!((g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sinr_sums_in_linear_domain() {
        // Independent oracle: explicit mW arithmetic.
        let s = 10f64.powf(-9.0); // -90 dBm
        let n = 10f64.powf(-12.0); // -120 dBm
        let i = 10f64.powf(-10.0); // -100 dBm
        let expect = s / (n + i);
        let g = sinr(-90.0, &[(-100.0, 0.0)], -120.0);
        assert!((g - expect).abs() / expect < 1e-12);
        assert!((10.0 * g.log10() - 9.96).abs() < 0.01);
    }

    #[test]
    fn tbs_reference_point() {
        let cfg = RadioConfig {
            attenuation_factor: 1.0,
            ..RadioConfig::default()
        };
        let eta = tbs(3.0, &cfg);
        assert!((eta - 360.0).abs() < 1e-9);
    }

    #[test]
    fn tbs_truncation_floor_and_cap() {
        let cfg = RadioConfig::default();
        let below = dbm_to_mw(cfg.sinr_floor_db) * 0.99;
        assert_eq!(tbs(below, &cfg), 0.0);
        let cap = dbm_to_mw(cfg.sinr_cap_db);
        assert_eq!(tbs(cap * 10.0, &cfg), tbs(cap, &cfg));
    }

    #[test]
    fn tbs_monotone_and_cost_inverse() {
        let cfg = RadioConfig::default();
        let mut last = 0.0;
        for k in 0..200 {
            let gamma = 0.12 * k as f64;
            let eta = tbs(gamma, &cfg);
            assert!(eta >= last);
            last = eta;
            let phi = cost_per_bit(eta, &cfg);
            if phi.is_finite() {
                assert!((phi * eta - cfg.subframe_s).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn cost_of_360_bit_tbs() {
        let cfg = RadioConfig::default();
        let phi = cost_per_bit(360.0, &cfg);
        assert!((phi - 1e-3 / 360.0).abs() < 1e-15);
        assert!(cost_per_bit(0.0, &cfg).is_infinite());
    }

    #[test]
    fn cost_table_covers_all_cell_links_and_prunes_d2d() {
        let cfg = ScenarioConfig {
            users_per_macro_area: 6,
            rng_seed: 5,
            ..ScenarioConfig::default()
        };
        let (bss, users) = deploy(&cfg).unwrap();
        let rcfg = RadioConfig::default();
        let table = build_cost_table(&bss, &users, &rcfg, None);
        assert_eq!(table.dl_cost.len(), bss.len());
        assert_eq!(table.dl_cost[0].len(), users.len());
        // every entry positive (possibly infinite)
        for row in table.dl_cost.iter().chain(table.ul_cost.iter()) {
            for &c in row {
                assert!(c > 0.0);
            }
        }
        // pruned pairs are the distant ones
        for (&(t, r), &c) in &table.d2d_cost {
            assert!(c.is_finite() && c > 0.0);
            assert_ne!(t, r);
        }
        // a co-located pair must be in range of each other
        let far = users
            .iter()
            .flat_map(|a| users.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a.id != b.id)
            .map(|(a, b)| a.position.dist(&b.position))
            .fold(f64::INFINITY, f64::min);
        assert!(far < 2000.0);
    }

    #[test]
    fn colocated_bs_link_hits_the_cap_cost() {
        // A user 1 m from the BS must be served at the SINR cap.
        let cfg = ScenarioConfig {
            num_macro: 1,
            small_cells_per_macro: 0,
            users_per_macro_area: 1,
            rng_seed: 9,
            ..ScenarioConfig::default()
        };
        let (bss, mut users) = deploy(&cfg).unwrap();
        users[0].position = bss[0].position;
        let rcfg = RadioConfig::default();
        let table = build_cost_table(&bss, &users, &rcfg, None);
        let cap_eta = tbs(dbm_to_mw(rcfg.sinr_cap_db), &rcfg);
        assert!((table.dl(0, 0) - cost_per_bit(cap_eta, &rcfg)).abs() < 1e-15);
    }

    #[test]
    fn activity_scaling_reduces_interference() {
        let cfg = ScenarioConfig {
            users_per_macro_area: 4,
            rng_seed: 3,
            ..ScenarioConfig::default()
        };
        let (bss, users) = deploy(&cfg).unwrap();
        let mut rcfg = RadioConfig::default();
        let full = build_cost_table(&bss, &users, &rcfg, None);
        rcfg.interference_mode = InterferenceMode::ActivityScaled;
        let idle = CellActivity {
            dl_ratio: vec![0.01; bss.len()],
            ul_ratio: vec![0.01; bss.len()],
        };
        let scaled = build_cost_table(&bss, &users, &rcfg, Some(&idle));
        // with idle neighbours every finite downlink cost can only improve
        for k in 0..bss.len() {
            for i in 0..users.len() {
                if full.dl_cost[k][i].is_finite() {
                    assert!(scaled.dl_cost[k][i] <= full.dl_cost[k][i] + 1e-18);
                }
            }
        }
    }
}
