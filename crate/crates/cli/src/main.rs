//! Command-line front end: runs replicated simulations, solves frozen
//! snapshots exactly, and dumps link/association/energy tables as CSV.
//!
//! Exit codes: 0 success, 1 configuration problems, 2 solver-size limits.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d2dsim_core::association::associate_rsrp;
use d2dsim_core::calb::run_calb;
use d2dsim_core::config::SimConfig;
use d2dsim_core::ecore::run_ecore;
use d2dsim_core::engine::{self, Algorithm};
use d2dsim_core::error::Error;
use d2dsim_core::optimal::{
    solve_energy_constrained, solve_exact, EnergyConstraint, SolveLimits,
};
use d2dsim_core::radio::build_cost_table;
use d2dsim_core::resources::{load_clustered, objective};
use d2dsim_core::scenario::{deploy, Role};
use d2dsim_core::snapshot::{read_snapshot, write_snapshot, Snapshot};

#[derive(Parser)]
#[command(
    name = "d2dsim",
    about = "System-level simulator for D2D clustering in FDD cellular networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Config file path, or `default` for built-in defaults.
    #[arg(long, default_value = "default")]
    config: String,
    /// Overrides `scenario.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `scenario.users_per_macro_area`.
    #[arg(long)]
    users: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replicated simulation and write metric CSVs.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Clustering pipeline (none, core, ecore, ecore+calb, ecore+ceea,
        /// ecore+calb+ceea, optimal, energy_constrained).
        #[arg(long)]
        algo: Option<Algorithm>,
        /// Overrides `engine.replications`.
        #[arg(long)]
        replications: Option<usize>,
        /// Overrides `scenario.sim_duration_s`.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Solve a frozen scenario snapshot exactly.
    Solve {
        /// Snapshot file produced by `cluster --write-snapshot`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Force full enumeration regardless of size.
        #[arg(long)]
        exhaustive: bool,
        /// Head-power allowance; enables the energy-constrained variant.
        #[arg(long)]
        energy_w: Option<f64>,
        #[arg(long)]
        node_budget: Option<u64>,
        /// Power-model knobs come from this config.
        #[arg(long, default_value = "default")]
        config: String,
    },
    /// Deploy one drop, run a clustering pass and dump the clusters.
    Cluster {
        #[command(flatten)]
        common: CommonOpts,
        /// ecore, core, or calb (calb = ecore followed by balancing).
        #[arg(long, default_value = "ecore")]
        algo: String,
        /// Also write the deployment as a snapshot file.
        #[arg(long)]
        write_snapshot: Option<PathBuf>,
    },
    /// Dump the full link cost table as CSV.
    DumpLinks {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        write_snapshot: Option<PathBuf>,
    },
    /// Dump the association (user, serving cell, role, cluster) as CSV.
    DumpAssociation {
        #[command(flatten)]
        common: CommonOpts,
        /// Clustering pass applied before dumping.
        #[arg(long, default_value = "ecore")]
        algo: String,
    },
    /// Run one replication and dump the per-user energy ledger as CSV.
    EnergyReport {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value = "ecore+ceea")]
        algo: Option<Algorithm>,
        #[arg(long)]
        duration: Option<f64>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SolverLimit(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_config(path: &str, common: Option<&CommonOpts>) -> Result<SimConfig, Error> {
    let mut cfg = if path == "default" {
        SimConfig::default()
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{path}`: {e}")))?;
        SimConfig::parse(&text)?
    };
    cfg.apply_env_overrides()?;
    if let Some(c) = common {
        if let Some(seed) = c.seed {
            cfg.scenario.rng_seed = seed;
        }
        if let Some(users) = c.users {
            cfg.scenario.users_per_macro_area = users;
        }
    }
    Ok(cfg)
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn write_manifest(dir: &Path, cfg: &SimConfig) -> Result<(), Error> {
    write_out(dir, "manifest", &cfg.manifest())
}

/// Deploys one drop and builds its cost table and baseline association.
fn one_drop(
    cfg: &SimConfig,
) -> Result<
    (
        Vec<d2dsim_core::BaseStation>,
        Vec<d2dsim_core::UserEquipment>,
        d2dsim_core::LinkCostTable,
        d2dsim_core::AssociationState,
    ),
    Error,
> {
    let (bss, users) = deploy(&cfg.scenario)?;
    let table = build_cost_table(&bss, &users, &cfg.radio, None);
    let baseline = associate_rsrp(&bss, &users, &table.gain_db, cfg.radio.cre_bias_db);
    Ok((bss, users, table, baseline))
}

fn cluster_pass(
    cfg: &SimConfig,
    algo: &str,
    bss: &[d2dsim_core::BaseStation],
    users: &[d2dsim_core::UserEquipment],
    table: &d2dsim_core::LinkCostTable,
    baseline: &d2dsim_core::AssociationState,
) -> Result<d2dsim_core::AssociationState, Error> {
    let banned = BTreeSet::new();
    Ok(match algo {
        "core" => run_ecore(users, table, baseline, &banned, true).assoc,
        "ecore" => run_ecore(users, table, baseline, &banned, false).assoc,
        "calb" => {
            let mut assoc = run_ecore(users, table, baseline, &banned, false).assoc;
            let mut loads = load_clustered(users, table, &assoc);
            run_calb(bss, users, table, &mut assoc, &mut loads, &cfg.calb);
            assoc
        }
        other => {
            return Err(Error::Config(format!(
                "unknown clustering pass `{other}` (expected ecore, core, calb)"
            )))
        }
    })
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            common,
            algo,
            replications,
            duration,
        } => {
            let mut cfg = load_config(&common.config, Some(&common))?;
            if let Some(a) = algo {
                cfg.engine.algorithm = a;
            }
            if let Some(r) = replications {
                cfg.engine.replications = r;
            }
            if let Some(d) = duration {
                cfg.scenario.sim_duration_s = d;
            }
            let out = engine::run(&cfg)?;
            write_manifest(&common.out, &cfg)?;
            write_out(&common.out, "metrics.csv", &engine::metrics_csv(&out.frames))?;
            write_out(&common.out, "summary.csv", &engine::summary_csv(&out.summary))?;
            write_out(&common.out, "users.csv", &engine::users_csv(&out.users))?;
            write_out(
                &common.out,
                "cdf_overconsumption.csv",
                &engine::overconsumption_cdf_csv(&out.users, !cfg.engine.collect_all_cells),
            )?;
            write_out(
                &common.out,
                "cdf_energy_efficiency.csv",
                &engine::energy_efficiency_cdf_csv(&out.users, !cfg.engine.collect_all_cells),
            )?;
            println!(
                "algorithm={} replications={} se_total={:.4} dl_throughput={:.0}",
                cfg.engine.algorithm,
                cfg.engine.replications,
                out.summary.se_total,
                out.summary.dl_throughput_bps
            );
            Ok(())
        }

        Command::Solve {
            snapshot,
            exhaustive,
            energy_w,
            node_budget,
            config,
        } => {
            let cfg = load_config(&config, None)?;
            let text = std::fs::read_to_string(&snapshot)
                .map_err(|e| Error::Config(format!("cannot read snapshot: {e}")))?;
            let snap = read_snapshot(&text)?;
            let limits = SolveLimits {
                node_budget: node_budget.unwrap_or(cfg.engine.node_budget),
                ..SolveLimits::default()
            };
            let constraint = energy_w.map(|w| EnergyConstraint {
                model: cfg.power.clone(),
                max_overconsumption: w,
            });
            let report = if exhaustive {
                if snap.users.len() > limits.exhaustive_max_users {
                    return Err(Error::SolverLimit(format!(
                        "{} users exceed the exhaustive limit of {}",
                        snap.users.len(),
                        limits.exhaustive_max_users
                    )));
                }
                d2dsim_core::optimal::solve_exhaustive(&snap.users, &snap.table, constraint.as_ref())
            } else if let Some(c) = &constraint {
                solve_energy_constrained(&snap.users, &snap.table, c, &limits)?
            } else {
                solve_exact(&snap.users, &snap.table, &limits)?
            };
            println!("objective_prbs_per_subframe = {}", report.best_objective);
            println!("nodes_explored = {}", report.nodes_explored);
            println!("proven_optimal = {}", report.proven_optimal);
            for c in report.best_assoc.clusters() {
                let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
                println!(
                    "cluster head={} bs={} members={}",
                    c.head,
                    report.best_assoc.serving(c.head).unwrap_or(usize::MAX),
                    members.join("+")
                );
            }
            Ok(())
        }

        Command::Cluster {
            common,
            algo,
            write_snapshot: snap_path,
        } => {
            let cfg = load_config(&common.config, Some(&common))?;
            let (bss, users, table, baseline) = one_drop(&cfg)?;
            if let Some(path) = snap_path {
                let snap = Snapshot {
                    bss: bss.clone(),
                    users: users.clone(),
                    table: table.clone(),
                };
                std::fs::write(&path, write_snapshot(&snap))?;
            }
            let assoc = cluster_pass(&cfg, &algo, &bss, &users, &table, &baseline)?;
            let before = objective(&baseline, &table, &users);
            let after = objective(&assoc, &table, &users);
            let mut csv = String::from("cluster_id,head,member,head_bs\n");
            for (cid, c) in assoc.clusters().iter().enumerate() {
                for &m in &c.members {
                    csv.push_str(&format!(
                        "{cid},{},{m},{}\n",
                        c.head,
                        assoc.serving(c.head).unwrap_or(usize::MAX)
                    ));
                }
            }
            write_manifest(&common.out, &cfg)?;
            write_out(&common.out, "clusters.csv", &csv)?;
            println!(
                "clusters={} objective_before={before:.4} objective_after={after:.4}",
                assoc.clusters().len()
            );
            Ok(())
        }

        Command::DumpLinks {
            common,
            write_snapshot: snap_path,
        } => {
            let cfg = load_config(&common.config, Some(&common))?;
            let (bss, users, table, baseline) = one_drop(&cfg)?;
            if let Some(path) = snap_path {
                let snap = Snapshot {
                    bss: bss.clone(),
                    users: users.clone(),
                    table: table.clone(),
                };
                std::fs::write(&path, write_snapshot(&snap))?;
            }
            let mut csv = String::from("src,dst,band,gain_db,sinr_db,eta_bits,phi\n");
            let fmt_phi = |c: f64| {
                if c.is_finite() {
                    format!("{c:e}")
                } else {
                    "inf".to_string()
                }
            };
            // recover the SINR from the transport block size
            let sinr_db = |eta: f64| -> f64 {
                if eta <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let bits = eta
                    / (cfg.radio.subframe_s
                        * cfg.radio.attenuation_factor
                        * cfg.radio.prb_bandwidth_hz);
                10.0 * (2f64.powf(bits) - 1.0).log10()
            };
            for bs in &bss {
                for ue in &users {
                    let g = table.gain_db[bs.id][ue.id];
                    let dl = table.dl(bs.id, ue.id);
                    let eta = table.tbs_from_cost(dl);
                    csv.push_str(&format!(
                        "bs{},ue{},dl{},{:.3},{:.3},{:.3},{}\n",
                        bs.id, ue.id, bs.band_id, g, sinr_db(eta), eta, fmt_phi(dl)
                    ));
                    let ul = table.ul(ue.id, bs.id);
                    let eta = table.tbs_from_cost(ul);
                    csv.push_str(&format!(
                        "ue{},bs{},ul{},{:.3},{:.3},{:.3},{}\n",
                        ue.id, bs.id, bs.band_id, g, sinr_db(eta), eta, fmt_phi(ul)
                    ));
                }
            }
            for (&(t, r), &c) in &table.d2d_cost {
                let band = baseline
                    .serving(r)
                    .map(|k| bss[k].band_id)
                    .unwrap_or_default();
                let eta = table.tbs_from_cost(c);
                csv.push_str(&format!(
                    "ue{t},ue{r},ul{band},,{:.3},{:.3},{}\n",
                    sinr_db(eta),
                    eta,
                    fmt_phi(c)
                ));
            }
            write_manifest(&common.out, &cfg)?;
            write_out(&common.out, "links.csv", &csv)?;
            println!(
                "links.csv written: {} cells, {} users, {} d2d pairs",
                bss.len(),
                users.len(),
                table.d2d_cost.len()
            );
            Ok(())
        }

        Command::DumpAssociation { common, algo } => {
            let cfg = load_config(&common.config, Some(&common))?;
            let (bss, mut users, table, baseline) = one_drop(&cfg)?;
            let assoc = if algo == "none" {
                baseline.clone()
            } else {
                cluster_pass(&cfg, &algo, &bss, &users, &table, &baseline)?
            };
            assoc.apply_to_users(&mut users);
            let mut csv = String::from("user,serving_bs,role,cluster_id,head_id\n");
            for u in &users {
                let role = match u.role {
                    Role::Head => "H",
                    Role::Member => "M",
                    Role::Unclustered => "N",
                };
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    u.id,
                    u.serving_bs.map_or(String::new(), |k| k.to_string()),
                    role,
                    u.cluster_id.map_or(String::new(), |c| c.to_string()),
                    assoc.head(u.id).map_or(String::new(), |h| h.to_string()),
                ));
            }
            write_manifest(&common.out, &cfg)?;
            write_out(&common.out, "association.csv", &csv)?;
            println!("association.csv written: {} users", users.len());
            Ok(())
        }

        Command::EnergyReport {
            common,
            algo,
            duration,
        } => {
            let mut cfg = load_config(&common.config, Some(&common))?;
            if let Some(a) = algo {
                cfg.engine.algorithm = a;
            }
            if let Some(d) = duration {
                cfg.scenario.sim_duration_s = d;
            }
            cfg.engine.replications = 1;
            let out = engine::run(&cfg)?;
            write_manifest(&common.out, &cfg)?;
            write_out(&common.out, "energy_report.csv", &engine::users_csv(&out.users))?;
            println!(
                "energy_report.csv written: {} users, clamp events {}",
                out.users.len(),
                out.theta_clamp_events
            );
            Ok(())
        }
    }
}

