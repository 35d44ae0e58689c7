//! Flat key = value configuration covering every tunable of the simulator.
//!
//! Keys are namespaced (`scenario.users_per_macro_area = 60`), `#` starts a
//! comment, unknown keys are rejected. Any key can also be overridden
//! through the environment with the `D2DSIM_` prefix
//! (`D2DSIM_SCENARIO_USERS_PER_MACRO_AREA=30`). The resolved configuration
//! can be echoed back as a manifest that parses to the identical state.

use std::fmt::Write as _;

use crate::calb::CalbConfig;
use crate::energy::{CeeaConfig, PowerModel};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::radio::{InterferenceMode, RadioConfig};
use crate::scenario::ScenarioConfig;

pub const ENV_PREFIX: &str = "D2DSIM_";

#[derive(Debug, Clone, Default)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub radio: RadioConfig,
    pub power: PowerModel,
    pub calb: CalbConfig,
    pub ceea: CeeaConfig,
    pub engine: EngineConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.radio.attenuation_factor <= 0.0 || self.radio.attenuation_factor > 1.0 {
            return Err(Error::Config(
                "radio.attenuation_factor must be in (0, 1]".into(),
            ));
        }
        if self.radio.sinr_floor_db >= self.radio.sinr_cap_db {
            return Err(Error::Config(
                "radio.sinr_floor_db must be below radio.sinr_cap_db".into(),
            ));
        }
        if self.engine.replications == 0 {
            return Err(Error::Config("engine.replications must be >= 1".into()));
        }
        if self.engine.sched_subframes_per_step == 0 {
            return Err(Error::Config(
                "engine.sched_subframes_per_step must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.calb.dl_min_margin_frac)
            || !(0.0..=1.0).contains(&self.calb.ul_min_margin_frac)
        {
            return Err(Error::Config("calb margins must be fractions".into()));
        }
        if self.ceea.subperiod_s <= 0.0
            || self.ceea.observation_period_s < self.ceea.subperiod_s
        {
            return Err(Error::Config(
                "ceea.observation_period_s must cover at least one subperiod".into(),
            ));
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `D2DSIM_*` environment overrides.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        let mut vars: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replacen('_', ".", 1);
            self.set(&key, &v)
                .map_err(|e| Error::Config(format!("env {k}: {e}")))?;
        }
        Ok(())
    }

    /// Serializes the resolved configuration; parsing the result reproduces
    /// the same state.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let fail = |what: &str| Error::Config(format!("invalid value for {what}"));
        macro_rules! num {
            ($field:expr) => {{
                $field = value.parse().map_err(|_| fail(key))?;
            }};
        }
        match key {
            "scenario.inter_site_distance_m" => num!(self.scenario.inter_site_distance_m),
            "scenario.num_macro" => num!(self.scenario.num_macro),
            "scenario.small_cells_per_macro" => num!(self.scenario.small_cells_per_macro),
            "scenario.min_enb_sc_distance_m" => num!(self.scenario.min_enb_sc_distance_m),
            "scenario.min_sc_sc_distance_m" => num!(self.scenario.min_sc_sc_distance_m),
            "scenario.users_per_macro_area" => num!(self.scenario.users_per_macro_area),
            "scenario.voip_fraction" => num!(self.scenario.voip_fraction),
            "scenario.user_speed_kmh" => num!(self.scenario.user_speed_kmh),
            "scenario.rng_seed" => num!(self.scenario.rng_seed),
            "scenario.sim_duration_s" => num!(self.scenario.sim_duration_s),
            "scenario.timestep_s" => num!(self.scenario.timestep_s),
            "scenario.voip_rate_bps" => num!(self.scenario.voip_rate_bps),
            "scenario.ftp_rate_dl_bps" => num!(self.scenario.ftp_rate_dl_bps),
            "scenario.ftp_alpha" => num!(self.scenario.ftp_alpha),
            "scenario.macro_tx_power_dbm" => num!(self.scenario.macro_tx_power_dbm),
            "scenario.small_tx_power_dbm" => num!(self.scenario.small_tx_power_dbm),
            "scenario.macro_bandwidth_mhz" => num!(self.scenario.macro_bandwidth_mhz),
            "scenario.small_bandwidth_mhz" => num!(self.scenario.small_bandwidth_mhz),

            "radio.attenuation_factor" => num!(self.radio.attenuation_factor),
            "radio.prb_bandwidth_hz" => num!(self.radio.prb_bandwidth_hz),
            "radio.subframe_s" => num!(self.radio.subframe_s),
            "radio.noise_density_dbm_hz" => num!(self.radio.noise_density_dbm_hz),
            "radio.ue_noise_figure_db" => num!(self.radio.ue_noise_figure_db),
            "radio.bs_noise_figure_db" => num!(self.radio.bs_noise_figure_db),
            "radio.sinr_floor_db" => num!(self.radio.sinr_floor_db),
            "radio.sinr_cap_db" => num!(self.radio.sinr_cap_db),
            "radio.ue_max_power_dbm" => num!(self.radio.ue_max_power_dbm),
            "radio.d2d_power_dbm" => num!(self.radio.d2d_power_dbm),
            "radio.power_control_target_dbm" => num!(self.radio.power_control_target_dbm),
            "radio.compensation_factor" => num!(self.radio.compensation_factor),
            "radio.ul_ref_path_loss_db" => num!(self.radio.ul_ref_path_loss_db),
            "radio.cre_bias_db" => num!(self.radio.cre_bias_db),
            "radio.interference_mode" => {
                self.radio.interference_mode = match value {
                    "full_load" => InterferenceMode::FullLoad,
                    "activity_scaled" => InterferenceMode::ActivityScaled,
                    _ => return Err(fail(key)),
                }
            }

            "power.idle_power_w" => num!(self.power.idle_power_w),
            "power.connected_power_w" => num!(self.power.connected_power_w),
            "power.pc_target_dbm" => num!(self.power.pc_target_dbm),
            "power.compensation_factor" => num!(self.power.compensation_factor),
            "power.d2d_power_dbm" => num!(self.power.d2d_power_dbm),
            "power.ue_max_power_dbm" => num!(self.power.ue_max_power_dbm),
            "power.d2d_max_power_dbm" => num!(self.power.d2d_max_power_dbm),
            "power.max_prb_dl" => num!(self.power.max_prb_dl),
            "power.max_prb_ul" => num!(self.power.max_prb_ul),
            "power.max_prb_head_dl" => num!(self.power.max_prb_head_dl),
            "power.max_prb_head_ul" => num!(self.power.max_prb_head_ul),
            "power.max_prb_d2d_head" => num!(self.power.max_prb_d2d_head),
            "power.max_prb_d2d_member" => num!(self.power.max_prb_d2d_member),

            "calb.dl_min_margin_frac" => num!(self.calb.dl_min_margin_frac),
            "calb.ul_min_margin_frac" => num!(self.calb.ul_min_margin_frac),

            "ceea.observation_period_s" => num!(self.ceea.observation_period_s),
            "ceea.subperiod_s" => num!(self.ceea.subperiod_s),
            "ceea.w_max" => num!(self.ceea.w_max),

            "engine.replications" => num!(self.engine.replications),
            "engine.recluster_period_s" => num!(self.engine.recluster_period_s),
            "engine.sched_subframes_per_step" => num!(self.engine.sched_subframes_per_step),
            "engine.node_budget" => num!(self.engine.node_budget),
            "engine.energy_w" => num!(self.engine.energy_w),
            "engine.collect_all_cells" => {
                self.engine.collect_all_cells = value.parse().map_err(|_| fail(key))?
            }
            "engine.algorithm" => {
                self.engine.algorithm = value.parse().map_err(|e: String| Error::Config(e))?
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = &self.scenario;
        let r = &self.radio;
        let p = &self.power;
        let e = &self.engine;
        let mut out: Vec<(String, String)> = vec![
            ("scenario.inter_site_distance_m", s.inter_site_distance_m.to_string()),
            ("scenario.num_macro", s.num_macro.to_string()),
            ("scenario.small_cells_per_macro", s.small_cells_per_macro.to_string()),
            ("scenario.min_enb_sc_distance_m", s.min_enb_sc_distance_m.to_string()),
            ("scenario.min_sc_sc_distance_m", s.min_sc_sc_distance_m.to_string()),
            ("scenario.users_per_macro_area", s.users_per_macro_area.to_string()),
            ("scenario.voip_fraction", s.voip_fraction.to_string()),
            ("scenario.user_speed_kmh", s.user_speed_kmh.to_string()),
            ("scenario.rng_seed", s.rng_seed.to_string()),
            ("scenario.sim_duration_s", s.sim_duration_s.to_string()),
            ("scenario.timestep_s", s.timestep_s.to_string()),
            ("scenario.voip_rate_bps", s.voip_rate_bps.to_string()),
            ("scenario.ftp_rate_dl_bps", s.ftp_rate_dl_bps.to_string()),
            ("scenario.ftp_alpha", s.ftp_alpha.to_string()),
            ("scenario.macro_tx_power_dbm", s.macro_tx_power_dbm.to_string()),
            ("scenario.small_tx_power_dbm", s.small_tx_power_dbm.to_string()),
            ("scenario.macro_bandwidth_mhz", s.macro_bandwidth_mhz.to_string()),
            ("scenario.small_bandwidth_mhz", s.small_bandwidth_mhz.to_string()),
            ("radio.attenuation_factor", r.attenuation_factor.to_string()),
            ("radio.prb_bandwidth_hz", r.prb_bandwidth_hz.to_string()),
            ("radio.subframe_s", r.subframe_s.to_string()),
            ("radio.noise_density_dbm_hz", r.noise_density_dbm_hz.to_string()),
            ("radio.ue_noise_figure_db", r.ue_noise_figure_db.to_string()),
            ("radio.bs_noise_figure_db", r.bs_noise_figure_db.to_string()),
            ("radio.sinr_floor_db", r.sinr_floor_db.to_string()),
            ("radio.sinr_cap_db", r.sinr_cap_db.to_string()),
            ("radio.ue_max_power_dbm", r.ue_max_power_dbm.to_string()),
            ("radio.d2d_power_dbm", r.d2d_power_dbm.to_string()),
            ("radio.power_control_target_dbm", r.power_control_target_dbm.to_string()),
            ("radio.compensation_factor", r.compensation_factor.to_string()),
            (
                "radio.interference_mode",
                match r.interference_mode {
                    InterferenceMode::FullLoad => "full_load".to_string(),
                    InterferenceMode::ActivityScaled => "activity_scaled".to_string(),
                },
            ),
            ("radio.ul_ref_path_loss_db", r.ul_ref_path_loss_db.to_string()),
            ("radio.cre_bias_db", r.cre_bias_db.to_string()),
            ("power.idle_power_w", p.idle_power_w.to_string()),
            ("power.connected_power_w", p.connected_power_w.to_string()),
            ("power.pc_target_dbm", p.pc_target_dbm.to_string()),
            ("power.compensation_factor", p.compensation_factor.to_string()),
            ("power.d2d_power_dbm", p.d2d_power_dbm.to_string()),
            ("power.ue_max_power_dbm", p.ue_max_power_dbm.to_string()),
            ("power.d2d_max_power_dbm", p.d2d_max_power_dbm.to_string()),
            ("power.max_prb_dl", p.max_prb_dl.to_string()),
            ("power.max_prb_ul", p.max_prb_ul.to_string()),
            ("power.max_prb_head_dl", p.max_prb_head_dl.to_string()),
            ("power.max_prb_head_ul", p.max_prb_head_ul.to_string()),
            ("power.max_prb_d2d_head", p.max_prb_d2d_head.to_string()),
            ("power.max_prb_d2d_member", p.max_prb_d2d_member.to_string()),
            ("calb.dl_min_margin_frac", self.calb.dl_min_margin_frac.to_string()),
            ("calb.ul_min_margin_frac", self.calb.ul_min_margin_frac.to_string()),
            ("ceea.observation_period_s", self.ceea.observation_period_s.to_string()),
            ("ceea.subperiod_s", self.ceea.subperiod_s.to_string()),
            ("ceea.w_max", self.ceea.w_max.to_string()),
            ("engine.replications", e.replications.to_string()),
            ("engine.recluster_period_s", e.recluster_period_s.to_string()),
            ("engine.sched_subframes_per_step", e.sched_subframes_per_step.to_string()),
            ("engine.node_budget", e.node_budget.to_string()),
            ("engine.energy_w", e.energy_w.to_string()),
            ("engine.collect_all_cells", e.collect_all_cells.to_string()),
            ("engine.algorithm", e.algorithm.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.sort();
        out
    }
}
