//! Deployment geometry and pedestrian mobility.
//!
//! Builds the hexagonal macro layout (a central site plus the first ring),
//! drops small cells and users inside each macro area, and advances a
//! constant-speed random-heading mobility model with hit-and-bounce boundary
//! handling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Redraws allowed while placing the small cells of one macro area.
const PLACEMENT_REDRAW_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned rectangle used as the mobility region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsKind {
    Macro,
    Small,
}

/// A macro eNB or a small cell.
#[derive(Debug, Clone)]
pub struct BaseStation {
    pub id: usize,
    pub kind: BsKind,
    pub position: Point,
    /// Total transmit power over the whole carrier.
    pub max_tx_power_dbm: f64,
    /// Spectrum group; macros and small cells use disjoint bands.
    pub band_id: u8,
    pub bandwidth_mhz: f64,
    /// Downlink PRB budget per subframe.
    pub prb_budget_dl: f64,
    /// Uplink PRB budget per subframe.
    pub prb_budget_ul: f64,
}

impl BaseStation {
    /// Transmit power per PRB, assuming equal power over the downlink grid.
    pub fn per_prb_tx_dbm(&self) -> f64 {
        self.max_tx_power_dbm - 10.0 * self.prb_budget_dl.log10()
    }
}

/// Average-rate traffic demand of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficProfile {
    pub rate_dl_bps: f64,
    pub rate_ul_bps: f64,
}

impl TrafficProfile {
    pub fn new(rate_dl_bps: f64, alpha: f64) -> Self {
        TrafficProfile {
            rate_dl_bps,
            rate_ul_bps: alpha * rate_dl_bps,
        }
    }

    /// Uplink-to-downlink rate ratio.
    pub fn alpha(&self) -> f64 {
        if self.rate_dl_bps == 0.0 {
            0.0
        } else {
            self.rate_ul_bps / self.rate_dl_bps
        }
    }
}

/// Role a user currently plays in the clustering structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Cluster head: attached to a BS, relays for its members.
    Head,
    /// Cluster member: served through a head over D2D.
    Member,
    /// Served directly by a BS, not in any cluster.
    Unclustered,
}

#[derive(Debug, Clone)]
pub struct UserEquipment {
    pub id: usize,
    pub position: Point,
    pub heading_rad: f64,
    pub speed_mps: f64,
    pub profile: TrafficProfile,
    pub role: Role,
    pub serving_bs: Option<usize>,
    pub cluster_id: Option<usize>,
}

/// Scenario layout and traffic-mix parameters.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub inter_site_distance_m: f64,
    pub num_macro: usize,
    pub small_cells_per_macro: usize,
    pub min_enb_sc_distance_m: f64,
    pub min_sc_sc_distance_m: f64,
    pub users_per_macro_area: usize,
    pub voip_fraction: f64,
    pub user_speed_kmh: f64,
    pub rng_seed: u64,
    pub sim_duration_s: f64,
    pub timestep_s: f64,
    pub voip_rate_bps: f64,
    pub ftp_rate_dl_bps: f64,
    /// Uplink-to-downlink ratio of the FTP/streaming profile.
    pub ftp_alpha: f64,
    pub macro_tx_power_dbm: f64,
    pub small_tx_power_dbm: f64,
    pub macro_bandwidth_mhz: f64,
    pub small_bandwidth_mhz: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            inter_site_distance_m: 500.0,
            num_macro: 7,
            small_cells_per_macro: 4,
            min_enb_sc_distance_m: 125.0,
            min_sc_sc_distance_m: 25.0,
            users_per_macro_area: 60,
            voip_fraction: 0.5,
            user_speed_kmh: 3.0,
            rng_seed: 1,
            sim_duration_s: 60.0,
            timestep_s: 1.0,
            voip_rate_bps: 64_000.0,
            ftp_rate_dl_bps: 700_000.0,
            ftp_alpha: 0.05,
            macro_tx_power_dbm: 46.0,
            small_tx_power_dbm: 27.0,
            macro_bandwidth_mhz: 10.0,
            small_bandwidth_mhz: 5.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inter_site_distance_m <= 0.0 {
            return Err(Error::Config("inter_site_distance_m must be > 0".into()));
        }
        if self.min_enb_sc_distance_m < 0.0 || self.min_sc_sc_distance_m < 0.0 {
            return Err(Error::Config("minimum distances must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.voip_fraction) {
            return Err(Error::Config("voip_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ftp_alpha) {
            return Err(Error::Config("ftp_alpha must be in [0, 1]".into()));
        }
        if self.num_macro == 0 {
            return Err(Error::Config("num_macro must be >= 1".into()));
        }
        if self.timestep_s <= 0.0 {
            return Err(Error::Config("timestep_s must be > 0".into()));
        }
        Ok(())
    }

    pub fn user_speed_mps(&self) -> f64 {
        self.user_speed_kmh * 1000.0 / 3600.0
    }

    /// 180 kHz PRBs carried by a carrier of the given bandwidth, using the
    /// standard LTE grid (10 MHz -> 50 PRBs, 5 MHz -> 25 PRBs).
    pub fn prbs_for_bandwidth(mhz: f64) -> f64 {
        (mhz * 5.0).round()
    }

    /// Mobility region: the rectangle spanned by the macro sites widened by
    /// one inter-site distance on every side.
    pub fn bounds(&self) -> Bounds {
        let centers = macro_positions(self.num_macro, self.inter_site_distance_m);
        let isd = self.inter_site_distance_m;
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for c in &centers {
            min_x = min_x.min(c.x);
            max_x = max_x.max(c.x);
            min_y = min_y.min(c.y);
            max_y = max_y.max(c.y);
        }
        Bounds {
            min_x: min_x - isd,
            max_x: max_x + isd,
            min_y: min_y - isd,
            max_y: max_y + isd,
        }
    }
}

/// Macro site positions: the origin, then rings of six sites at multiples of
/// the inter-site distance. Only the first ring is needed for the default
/// seven-site layout.
pub fn macro_positions(n: usize, isd: f64) -> Vec<Point> {
    let mut out = vec![Point::new(0.0, 0.0)];
    let mut ring = 1;
    while out.len() < n {
        // Walk the ring corner to corner; ring r holds 6*r sites.
        let r = ring as f64 * isd;
        for k in 0..6 * ring {
            if out.len() >= n {
                break;
            }
            let corner = k / ring;
            let along = (k % ring) as f64 / ring as f64;
            let a0 = corner as f64 * std::f64::consts::FRAC_PI_3;
            let a1 = (corner + 1) as f64 * std::f64::consts::FRAC_PI_3;
            let (x0, y0) = (r * a0.cos(), r * a0.sin());
            let (x1, y1) = (r * a1.cos(), r * a1.sin());
            out.push(Point::new(x0 + (x1 - x0) * along, y0 + (y1 - y0) * along));
        }
        ring += 1;
    }
    out.truncate(n);
    out
}

/// Whether `p` lies in the hexagonal cell of apothem `isd / 2` around
/// `center` (sides facing the six neighbour sites).
pub fn hex_contains(center: &Point, isd: f64, p: &Point) -> bool {
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    let half = isd / 2.0;
    for k in 0..3 {
        let ang = k as f64 * std::f64::consts::FRAC_PI_3;
        let proj = dx * ang.cos() + dy * ang.sin();
        if proj.abs() > half {
            return false;
        }
    }
    true
}

fn uniform_in_hex<R: Rng>(center: &Point, isd: f64, rng: &mut R) -> Point {
    // Circumradius of the hex cell; rejection from the bounding square.
    let r = isd / 3.0_f64.sqrt();
    loop {
        let p = Point::new(
            center.x + rng.gen_range(-r..=r),
            center.y + rng.gen_range(-r..=r),
        );
        if hex_contains(center, isd, &p) {
            return p;
        }
    }
}

/// Deterministic per-purpose RNG stream derived from a master seed.
pub fn stream_rng(seed: u64, replication: u64, salt: u64) -> ChaCha8Rng {
    // splitmix64 over the combined words keeps the streams uncorrelated.
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(replication.wrapping_add(1)))
        .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    let mut next = || {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    };
    let mut key = [0u8; 32];
    for c in key.chunks_exact_mut(8) {
        c.copy_from_slice(&next().to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Builds the base stations and users for one scenario drop.
///
/// Small cells are redrawn uniformly inside their macro hex until the
/// minimum-distance constraints hold; users are dropped uniformly inside
/// each macro hex (so the aggregate drop is uniform over the layout) and
/// split between the VoIP and FTP/streaming traffic profiles.
pub fn deploy(cfg: &ScenarioConfig) -> Result<(Vec<BaseStation>, Vec<UserEquipment>)> {
    let mut rng = stream_rng(cfg.rng_seed, 0, 0xA11CE);
    deploy_with_rng(cfg, &mut rng)
}

pub fn deploy_with_rng<R: Rng>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(Vec<BaseStation>, Vec<UserEquipment>)> {
    cfg.validate()?;
    let isd = cfg.inter_site_distance_m;
    let centers = macro_positions(cfg.num_macro, isd);

    let mut bss = Vec::new();
    for (m, c) in centers.iter().enumerate() {
        bss.push(BaseStation {
            id: m,
            kind: BsKind::Macro,
            position: *c,
            max_tx_power_dbm: cfg.macro_tx_power_dbm,
            band_id: 0,
            bandwidth_mhz: cfg.macro_bandwidth_mhz,
            prb_budget_dl: ScenarioConfig::prbs_for_bandwidth(cfg.macro_bandwidth_mhz),
            prb_budget_ul: ScenarioConfig::prbs_for_bandwidth(cfg.macro_bandwidth_mhz),
        });
    }

    // Feasibility guard: the eNB clearance must fit inside the hex cell.
    let circumradius = isd / 3.0_f64.sqrt();
    if cfg.small_cells_per_macro > 0 && cfg.min_enb_sc_distance_m >= circumradius {
        return Err(Error::Deployment(format!(
            "min eNB-SC distance {} does not fit in a hex cell of circumradius {:.1}",
            cfg.min_enb_sc_distance_m, circumradius
        )));
    }

    for (m, c) in centers.iter().enumerate() {
        let mut placed: Vec<Point> = Vec::with_capacity(cfg.small_cells_per_macro);
        let mut draws = 0usize;
        while placed.len() < cfg.small_cells_per_macro {
            draws += 1;
            if draws > PLACEMENT_REDRAW_CAP {
                return Err(Error::Deployment(format!(
                    "small-cell placement in macro area {m} exceeded {PLACEMENT_REDRAW_CAP} redraws"
                )));
            }
            let p = uniform_in_hex(c, isd, rng);
            if p.dist(c) < cfg.min_enb_sc_distance_m {
                continue;
            }
            if placed
                .iter()
                .any(|q| q.dist(&p) < cfg.min_sc_sc_distance_m)
            {
                continue;
            }
            placed.push(p);
        }
        for p in placed {
            let id = bss.len();
            bss.push(BaseStation {
                id,
                kind: BsKind::Small,
                position: p,
                max_tx_power_dbm: cfg.small_tx_power_dbm,
                band_id: 1,
                bandwidth_mhz: cfg.small_bandwidth_mhz,
                prb_budget_dl: ScenarioConfig::prbs_for_bandwidth(cfg.small_bandwidth_mhz),
                prb_budget_ul: ScenarioConfig::prbs_for_bandwidth(cfg.small_bandwidth_mhz),
            });
        }
    }

    let mut users = Vec::with_capacity(cfg.num_macro * cfg.users_per_macro_area);
    let speed = cfg.user_speed_mps();
    for c in &centers {
        for _ in 0..cfg.users_per_macro_area {
            let id = users.len();
            let position = uniform_in_hex(c, isd, rng);
            let heading_rad = rng.gen_range(0.0..std::f64::consts::TAU);
            let profile = if rng.gen_bool(cfg.voip_fraction) {
                TrafficProfile::new(cfg.voip_rate_bps, 1.0)
            } else {
                TrafficProfile::new(cfg.ftp_rate_dl_bps, cfg.ftp_alpha)
            };
            users.push(UserEquipment {
                id,
                position,
                heading_rad,
                speed_mps: speed,
                profile,
                role: Role::Unclustered,
                serving_bs: None,
                cluster_id: None,
            });
        }
    }

    Ok((bss, users))
}

/// Advances every user by `timestep_s` along its heading. A user that would
/// leave `bounds` is mirrored back inside and gets a fresh heading drawn
/// uniformly from the half-plane facing away from the crossed edge.
pub fn step_mobility<R: Rng>(
    users: &mut [UserEquipment],
    timestep_s: f64,
    bounds: &Bounds,
    rng: &mut R,
) {
    assert!(timestep_s > 0.0, "timestep must be positive");
    for ue in users.iter_mut() {
        let d = ue.speed_mps * timestep_s;
        let mut x = ue.position.x + d * ue.heading_rad.cos();
        let mut y = ue.position.y + d * ue.heading_rad.sin();
        if bounds.contains(&Point::new(x, y)) {
            ue.position = Point::new(x, y);
            continue;
        }

        // Mirror across each crossed edge and remember the inward normals.
        let mut normals: Vec<f64> = Vec::with_capacity(2);
        loop {
            if x < bounds.min_x {
                x = 2.0 * bounds.min_x - x;
                normals.push(0.0); // +x
            } else if x > bounds.max_x {
                x = 2.0 * bounds.max_x - x;
                normals.push(std::f64::consts::PI); // -x
            } else if y < bounds.min_y {
                y = 2.0 * bounds.min_y - y;
                normals.push(std::f64::consts::FRAC_PI_2); // +y
            } else if y > bounds.max_y {
                y = 2.0 * bounds.max_y - y;
                normals.push(-std::f64::consts::FRAC_PI_2); // -y
            } else {
                break;
            }
        }
        // Nudge off the wall if the mirror landed exactly on it.
        let eps = 1e-9 * (bounds.max_x - bounds.min_x).max(bounds.max_y - bounds.min_y);
        x = x.clamp(bounds.min_x + eps, bounds.max_x - eps);
        y = y.clamp(bounds.min_y + eps, bounds.max_y - eps);

        // New heading: uniform in the sector that points back inside. For a
        // single edge that is the half-plane around its inward normal; for a
        // corner it is the quarter-plane around the bisector.
        let (center, spread) = match normals.len() {
            1 => (normals[0], std::f64::consts::FRAC_PI_2),
            _ => {
                let sx: f64 = normals.iter().map(|a| a.cos()).sum();
                let sy: f64 = normals.iter().map(|a| a.sin()).sum();
                (sy.atan2(sx), std::f64::consts::FRAC_PI_4)
            }
        };
        let heading = center + rng.gen_range(-spread..spread);
        ue.position = Point::new(x, y);
        ue.heading_rad = heading.rem_euclid(std::f64::consts::TAU);
    }
}
