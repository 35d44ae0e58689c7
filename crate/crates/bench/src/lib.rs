//! Shared fixtures for the pipeline benchmarks.

use d2dsim_core::association::{associate_rsrp, AssociationState};
use d2dsim_core::radio::{build_cost_table, LinkCostTable, RadioConfig};
use d2dsim_core::scenario::{deploy, BaseStation, ScenarioConfig, UserEquipment};

pub struct Fixture {
    pub bss: Vec<BaseStation>,
    pub users: Vec<UserEquipment>,
    pub radio: RadioConfig,
    pub table: LinkCostTable,
    pub baseline: AssociationState,
}

/// One deterministic drop at the requested density.
pub fn fixture(users_per_macro_area: usize, seed: u64) -> Fixture {
    let cfg = ScenarioConfig {
        users_per_macro_area,
        rng_seed: seed,
        ..ScenarioConfig::default()
    };
    let radio = RadioConfig::default();
    let (bss, users) = deploy(&cfg).expect("deploy fixture");
    let table = build_cost_table(&bss, &users, &radio, None);
    let baseline = associate_rsrp(&bss, &users, &table.gain_db, radio.cre_bias_db);
    Fixture {
        bss,
        users,
        radio,
        table,
        baseline,
    }
}
