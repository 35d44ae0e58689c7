//! Acceptance suite. Each criterion prints one PASS/FAIL line; desk-scale
//! criteria share the same replicated engine runs. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;

use d2dsim_core::association::{associate_rsrp, AssociationState};
use d2dsim_core::calb::{delta_dl, delta_ul};
use d2dsim_core::config::SimConfig;
use d2dsim_core::ecore::{clustering_gain, run_ecore};
use d2dsim_core::energy::{
    counterfactual_energy_j, power_head_w, power_member_w, power_unclustered_w, MemberLink,
    PowerModel,
};
use d2dsim_core::engine::{self, Algorithm};
use d2dsim_core::optimal::{solve_branch_bound, solve_exact, solve_exhaustive, SolveLimits};
use d2dsim_core::radio::{build_cost_table, LinkCostTable, RadioConfig};
use d2dsim_core::resources::{load_clustered, objective};
use d2dsim_core::scenario::{deploy, stream_rng, ScenarioConfig, UserEquipment};

fn report(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "criterion {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// Small geometric instance: one macro with two small cells and `n` users
/// dropped in its hex.
fn small_instance(n: usize, seed: u64) -> (Vec<UserEquipment>, LinkCostTable, AssociationState) {
    let cfg = ScenarioConfig {
        num_macro: 1,
        small_cells_per_macro: 2,
        users_per_macro_area: n,
        rng_seed: seed,
        ..ScenarioConfig::default()
    };
    let radio = RadioConfig::default();
    let (bss, users) = deploy(&cfg).expect("deploy");
    let table = build_cost_table(&bss, &users, &radio, None);
    let baseline = associate_rsrp(&bss, &users, &table.gain_db, radio.cre_bias_db);
    (users, table, baseline)
}

#[test]
fn criterion_1_optimality_gap() {
    let started = Instant::now();
    let mut rng = stream_rng(0xACC_1, 0, 1);
    let mut within = 0usize;
    let total = 200usize;
    let mut worst_gap = 0.0f64;
    for trial in 0..total {
        let n = rng.gen_range(4..=10);
        let (users, table, baseline) = small_instance(n, 1000 + trial as u64);
        let flat_obj = objective(&baseline, &table, &users);
        let heuristic = run_ecore(&users, &table, &baseline, &BTreeSet::new(), false).assoc;
        let heuristic_obj = objective(&heuristic, &table, &users);
        assert!(
            heuristic_obj <= flat_obj + 1e-9,
            "clustering made things worse on trial {trial}"
        );
        let exact = solve_exact(&users, &table, &SolveLimits::default()).expect("solve");
        assert!(exact.proven_optimal, "unproven optimum on trial {trial}");
        assert!(heuristic_obj >= exact.best_objective - 1e-9 * exact.best_objective);
        let gap = (heuristic_obj - exact.best_objective) / exact.best_objective;
        worst_gap = worst_gap.max(gap);
        if gap <= 0.05 {
            within += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let frac = within as f64 / total as f64;
    let pass = frac >= 0.90 && elapsed < 60.0;
    report(
        "1 optimality gap",
        pass,
        &format!(
            "{within}/{total} within 5% (worst gap {:.2}%), {elapsed:.1}s",
            100.0 * worst_gap
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_solver_oracle_equivalence() {
    let mut rng = stream_rng(0xACC_2, 0, 2);
    let mut max_rel = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(2..=8);
        let (users, table, _) = small_instance(n, 2000 + trial as u64);
        let ex = solve_exhaustive(&users, &table, None);
        let bb = solve_branch_bound(&users, &table, None, u64::MAX);
        assert!(bb.proven_optimal);
        let rel = (ex.best_objective - bb.best_objective).abs()
            / ex.best_objective.abs().max(1e-30);
        max_rel = max_rel.max(rel);
        assert!(
            rel <= 1e-12,
            "trial {trial}: exhaustive {} vs branch-and-bound {}",
            ex.best_objective,
            bb.best_objective
        );
    }
    let pass = report(
        "2 oracle equivalence",
        true,
        &format!("100 instances, max relative drift {max_rel:.2e}"),
    );
    assert!(pass);
}

/// Random valid clustered association on a geometric table.
fn random_state(
    users: &[UserEquipment],
    table: &LinkCostTable,
    baseline: &AssociationState,
    rng: &mut impl Rng,
) -> AssociationState {
    let n = users.len();
    let mut st = baseline.clone();
    for i in 0..n {
        if rng.gen_bool(0.6) {
            continue;
        }
        if st.is_head(i) || st.is_member(i) {
            continue;
        }
        let candidates: Vec<usize> = (0..n)
            .filter(|&j| {
                j != i
                    && !st.is_member(j)
                    && st.serving(j).is_some()
                    && table.has_d2d(i, j)
                    && table.has_d2d(j, i)
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let j = candidates[rng.gen_range(0..candidates.len())];
        st.make_member(i, j);
    }
    st
}

#[test]
fn criterion_3_identity_suite() {
    // (a) the matrix-form objective equals the per-band load totals
    let mut rng = stream_rng(0xACC_3, 0, 3);
    let mut max_rel_a = 0.0f64;
    for trial in 0..1000u64 {
        let n = rng.gen_range(4..=14);
        let (users, table, baseline) = small_instance(n, 3000 + trial % 40);
        let st = random_state(&users, &table, &baseline, &mut rng);
        assert!(st.validate(3).is_empty());
        let obj = objective(&st, &table, &users);
        let loads = load_clustered(&users, &table, &st);
        let total = loads.total();
        let rel = (obj - total).abs() / obj.abs().max(1e-30);
        max_rel_a = max_rel_a.max(rel);
        assert!(rel <= 1e-12, "trial {trial}: {obj} vs {total}");
    }
    let pass_a = report(
        "3a objective identity",
        true,
        &format!("1000 states, max relative error {max_rel_a:.2e}"),
    );

    // (b) the pair gain is the negated sum of the two load deltas
    let mut max_rel_b = 0.0f64;
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let (users, table, baseline) = small_instance(10, 4000 + seed);
        for i in 0..users.len() {
            for j in 0..users.len() {
                if i == j || checked >= 100 {
                    continue;
                }
                let (ki, kj) = (baseline.serving(i), baseline.serving(j));
                if ki != kj || ki.is_none() {
                    continue;
                }
                if !table.has_d2d(i, j) || !table.has_d2d(j, i) {
                    continue;
                }
                let k = ki.unwrap();
                let g = clustering_gain(i, j, &table, &users, &baseline);
                let dd = delta_dl(i, j, k, &table, &users);
                let du = delta_ul(i, j, k, &table, &users);
                let rel = (g + dd + du).abs() / g.abs().max(1e-30);
                max_rel_b = max_rel_b.max(rel);
                assert!(rel <= 1e-12, "pair ({i},{j}): gain {g}, deltas {}", dd + du);
                checked += 1;
            }
        }
    }
    let pass_b = report(
        "3b gain-delta identity",
        true,
        &format!("100 same-cell pairs, max relative error {max_rel_b:.2e}"),
    );
    assert!(pass_a && pass_b);
}

fn desk_config(algo: Algorithm, duration_s: f64, replications: usize) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.scenario.rng_seed = 7; // shared across algorithms: paired replications
    cfg.scenario.sim_duration_s = duration_s;
    cfg.engine.replications = replications;
    cfg.engine.algorithm = algo;
    cfg
}

#[test]
fn criteria_4_6_7_desk_trends() {
    let started = Instant::now();
    let reps = 20;
    let duration = 20.0;
    let run = |algo: Algorithm| {
        engine::run(&desk_config(algo, duration, reps)).expect("desk run")
    };
    let none = run(Algorithm::NoClustering);
    let core = run(Algorithm::Core);
    let ecore = run(Algorithm::Ecore);
    let calb = run(Algorithm::EcoreCalb);
    let elapsed = started.elapsed().as_secs_f64();

    // criterion 4: spectral-efficiency and throughput orderings
    let se = [
        none.summary.se_total,
        core.summary.se_total,
        ecore.summary.se_total,
    ];
    let se_ok = se[0] < se[1] && se[1] < se[2];
    let tp = [
        none.summary.dl_throughput_bps,
        core.summary.dl_throughput_bps,
        ecore.summary.dl_throughput_bps,
        calb.summary.dl_throughput_bps,
    ];
    let tp_ok = tp[0] < tp[1] && tp[1] < tp[2] && tp[2] < tp[3];
    let gain = tp[2] / tp[0] - 1.0;
    let gain_ok = gain >= 0.15;
    let runtime_ok = elapsed < 600.0;
    let pass4 = se_ok && tp_ok && gain_ok && runtime_ok;
    report(
        "4 dominance trends",
        pass4,
        &format!(
            "se_total none/core/ecore = {:.3}/{:.3}/{:.3}; dl_tp = {:.2}/{:.2}/{:.2}/{:.2} Mbps; \
             ecore-vs-none +{:.0}%; {elapsed:.0}s",
            se[0],
            se[1],
            se[2],
            tp[0] / 1e6,
            tp[1] / 1e6,
            tp[2] / 1e6,
            tp[3] / 1e6,
            100.0 * gain
        ),
    );

    // criterion 6: cluster statistics
    let sizes = [
        core.summary.cluster_size,
        ecore.summary.cluster_size,
        calb.summary.cluster_size,
    ];
    let sizes_ok = sizes.iter().all(|s| (2.0..=4.0).contains(s));
    let counts_ok = calb.summary.cluster_count > ecore.summary.cluster_count;
    let pass6 = sizes_ok && counts_ok;
    report(
        "6 cluster statistics",
        pass6,
        &format!(
            "avg size core/ecore/calb = {:.2}/{:.2}/{:.2}; avg count calb {:.2} > ecore {:.2}",
            sizes[0], sizes[1], sizes[2], calb.summary.cluster_count, ecore.summary.cluster_count
        ),
    );

    // criterion 7: every balancing action improved the downlink and obeyed
    // the margin condition seen at decision time; the engine also recomputes
    // the loads after every balancing pass
    let mut violations = 0usize;
    for (_, _, act) in &calb.calb_actions {
        if !(act.delta_dl < 0.0) {
            violations += 1;
        }
        if act.delta_ul - act.delta_dl > act.ul_margin_before - act.dl_margin_before + 1e-9 {
            violations += 1;
        }
    }
    let pass7 = violations == 0
        && calb.calb_audit_failures == 0
        && !calb.calb_actions.is_empty();
    report(
        "7 balancing margin audit",
        pass7,
        &format!(
            "{} actions, {} condition violations, {} load-recompute mismatches",
            calb.calb_actions.len(),
            violations,
            calb.calb_audit_failures
        ),
    );

    assert!(pass4 && pass6 && pass7);
}

#[test]
fn criterion_5_overconsumption_containment() {
    let reps = 20;
    let duration = 180.0; // three observation periods: room to compensate
    let run = |algo: Algorithm| {
        engine::run(&desk_config(algo, duration, reps)).expect("desk run")
    };
    let ecore = run(Algorithm::Ecore);
    let ceea = run(Algorithm::EcoreCeea);

    let central_w = |out: &engine::RunOutput| -> Vec<f64> {
        out.users
            .iter()
            .filter(|u| u.central)
            .map(|u| u.overconsumption)
            .collect()
    };
    let w_ceea = central_w(&ceea);
    let contained = w_ceea.iter().filter(|&&w| w <= 0.3).count();
    let frac = contained as f64 / w_ceea.len() as f64;
    let p99_ecore = ecore.summary.w_p99;
    let pass = frac >= 0.95 && p99_ecore > 1.0;
    report(
        "5 overconsumption containment",
        pass,
        &format!(
            "ceea: {:.1}% of {} users with w <= 0.3 (p99 {:.2}); ecore p99 {:.2}",
            100.0 * frac,
            w_ceea.len(),
            ceea.summary.w_p99,
            p99_ecore
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_energy_model_checks() {
    // (a) role-power ordering on clustered configurations produced by the
    // clustering pass itself
    let model = PowerModel::default();
    let mut clusters_checked = 0usize;
    let mut head_violations = 0usize;
    let mut member_violations = 0usize;
    let mut seed = 0u64;
    while clusters_checked < 100 {
        seed += 1;
        let cfg = ScenarioConfig {
            users_per_macro_area: 20,
            rng_seed: 8000 + seed,
            ..ScenarioConfig::default()
        };
        let radio = RadioConfig::default();
        let (bss, users) = deploy(&cfg).expect("deploy");
        let table = build_cost_table(&bss, &users, &radio, None);
        let baseline = associate_rsrp(&bss, &users, &table.gain_db, radio.cre_bias_db);
        let assoc = run_ecore(&users, &table, &baseline, &BTreeSet::new(), false).assoc;
        for c in assoc.clusters() {
            if clusters_checked >= 100 {
                break;
            }
            let h = c.head;
            let k = assoc.serving(h).unwrap();
            let links: Vec<MemberLink> = c
                .members
                .iter()
                .map(|&m| MemberLink {
                    profile: users[m].profile,
                    to_member_cost: table.d2d(h, m),
                    from_member_cost: table.d2d(m, h),
                })
                .collect();
            let (p_head, _) = power_head_w(
                &users[h].profile,
                table.gain_db[k][h],
                table.dl(k, h),
                table.ul(h, k),
                &links,
                &model,
            );
            let p_head_direct = power_unclustered_w(
                &users[h].profile,
                table.gain_db[k][h],
                table.dl(k, h),
                table.ul(h, k),
                &model,
            );
            if !(p_head > p_head_direct) {
                head_violations += 1;
            }
            for &m in &c.members {
                let k0 = baseline.serving(m).unwrap();
                if !table.dl(k0, m).is_finite() || !table.ul(m, k0).is_finite() {
                    // coverage-gap member: direct service does not exist,
                    // so there is no counterfactual to compare against
                    continue;
                }
                let p_member = power_member_w(
                    &users[m].profile,
                    table.d2d(h, m),
                    table.d2d(m, h),
                    &model,
                );
                let p_member_direct = power_unclustered_w(
                    &users[m].profile,
                    table.gain_db[k0][m],
                    table.dl(k0, m),
                    table.ul(m, k0),
                    &model,
                );
                if !(p_member_direct > p_member) {
                    member_violations += 1;
                }
            }
            clusters_checked += 1;
        }
    }
    let pass_a = head_violations == 0 && member_violations == 0;
    report(
        "8a role-power ordering",
        pass_a,
        &format!(
            "{clusters_checked} clusters: {head_violations} head violations, \
             {member_violations} member violations"
        ),
    );

    // (b) counterfactual energy against a step-by-step hand oracle
    let subframe = 1e-3;
    let mut max_err = 0.0f64;
    let cases: [(f64, f64, f64, f64, f64, f64); 10] = [
        (10.0, 7_000_000.0, 350_000.0, 360.0, 300.0, -100.0),
        (10.0, 0.0, 0.0, 360.0, 300.0, -100.0),
        (5.0, 640_000.0, 640_000.0, 200.0, 200.0, -110.0),
        (1.0, 700_000.0, 35_000.0, 720.0, 150.0, -90.0),
        (60.0, 42_000_000.0, 2_100_000.0, 500.0, 250.0, -105.0),
        (2.0, 1.0, 1.0, 360.0, 300.0, -100.0),
        (10.0, 36_000_000.0, 0.0, 360.0, 300.0, -100.0),
        (10.0, 0.0, 3_000_000.0, 360.0, 300.0, -100.0),
        (3.0, 192_000.0, 192_000.0, 100.0, 100.0, -120.0),
        (30.0, 21_000_000.0, 1_050_000.0, 640.0, 420.0, -95.0),
    ];
    for (window, bits_dl, bits_ul, eta_d, eta_u, gain) in cases {
        let got = counterfactual_energy_j(
            window, bits_dl, bits_ul, eta_d, eta_u, gain, subframe, &model,
        );
        // hand oracle: explicit subframe counting
        let dl_frames = if bits_dl > 0.0 {
            (bits_dl / (model.max_prb_dl * eta_d)).ceil()
        } else {
            0.0
        };
        let ul_frames = if bits_ul > 0.0 {
            (bits_ul / (model.max_prb_ul * eta_u)).ceil()
        } else {
            0.0
        };
        let tc = (subframe * dl_frames.max(ul_frames)).min(window);
        let pc_w = 10f64.powf(((model.pc_target_dbm - model.compensation_factor * gain)
            .min(model.ue_max_power_dbm))
            / 10.0)
            / 1000.0;
        let expect = tc * model.connected_power_w
            + (window - tc) * model.idle_power_w
            + subframe * pc_w * ul_frames;
        let err = (got - expect).abs() / expect.abs().max(1e-30);
        max_err = max_err.max(err);
        assert!(err <= 1e-9, "window {window}: {got} vs {expect}");
    }
    let pass_b = report(
        "8b counterfactual energy oracle",
        true,
        &format!("10 windows, max relative error {max_err:.2e}"),
    );
    assert!(pass_a && pass_b);
    assert!(pass_a);
}

#[test]
fn criterion_9_determinism() {
    let mut cfg = desk_config(Algorithm::EcoreCalbCeea, 5.0, 3);
    cfg.scenario.rng_seed = 99;
    let a = engine::run(&cfg).expect("run a");
    let b = engine::run(&cfg).expect("run b");
    let sa = engine::summary_csv(&a.summary);
    let sb = engine::summary_csv(&b.summary);
    let ma = engine::metrics_csv(&a.frames);
    let mb = engine::metrics_csv(&b.frames);
    let ua = engine::users_csv(&a.users);
    let ub = engine::users_csv(&b.users);
    let pass = sa == sb && ma == mb && ua == ub;
    report(
        "9 determinism",
        pass,
        &format!(
            "summary {} bytes, metrics {} bytes, users {} bytes, all byte-identical: {pass}",
            sa.len(),
            ma.len(),
            ua.len()
        ),
    );
    assert!(pass);
}
