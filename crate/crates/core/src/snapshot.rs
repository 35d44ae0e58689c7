//! Line-oriented text snapshot of one deployment instant: base stations,
//! users with their traffic profiles, and the full link cost table. Lets
//! the solver and clustering commands run on a frozen scenario, and doubles
//! as a cross-language test fixture. See `docs/formats.md`.
//!
//! Finite values round-trip exactly (shortest-representation float
//! printing); NaN anywhere is rejected with the offending location.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::radio::LinkCostTable;
use crate::scenario::{BaseStation, BsKind, Point, Role, TrafficProfile, UserEquipment};

pub const VERSION: &str = "v1";

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub bss: Vec<BaseStation>,
    pub users: Vec<UserEquipment>,
    pub table: LinkCostTable,
}

fn fmt_cost(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

pub fn write_snapshot(snap: &Snapshot) -> String {
    let mut out = format!("d2dsim-snapshot {VERSION}\n");
    out.push_str("[bs]\n");
    for b in &snap.bss {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            b.id,
            match b.kind {
                BsKind::Macro => "macro",
                BsKind::Small => "small",
            },
            b.position.x,
            b.position.y,
            b.max_tx_power_dbm,
            b.band_id,
            b.bandwidth_mhz,
            b.prb_budget_dl,
            b.prb_budget_ul,
        ));
    }
    out.push_str("[ue]\n");
    for u in &snap.users {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            u.id,
            u.position.x,
            u.position.y,
            u.heading_rad,
            u.speed_mps,
            u.profile.rate_dl_bps,
            u.profile.rate_ul_bps,
        ));
    }
    out.push_str("[gain]\n");
    for (k, row) in snap.table.gain_db.iter().enumerate() {
        for (i, g) in row.iter().enumerate() {
            out.push_str(&format!("{k} {i} {g}\n"));
        }
    }
    out.push_str("[dl_cost]\n");
    for (k, row) in snap.table.dl_cost.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            out.push_str(&format!("{k} {i} {}\n", fmt_cost(*c)));
        }
    }
    out.push_str("[ul_cost]\n");
    for (k, row) in snap.table.ul_cost.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            out.push_str(&format!("{k} {i} {}\n", fmt_cost(*c)));
        }
    }
    out.push_str("[d2d_cost]\n");
    for (&(t, r), c) in &snap.table.d2d_cost {
        out.push_str(&format!("{t} {r} {}\n", fmt_cost(*c)));
    }
    out
}

struct Parser<'a> {
    lineno: usize,
    text: std::str::Lines<'a>,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Snapshot(format!("line {}: {}", self.lineno, msg.into()))
    }
}

fn parse_f64(p: &Parser, field: &str, tok: &str) -> Result<f64> {
    if tok == "inf" {
        return Ok(f64::INFINITY);
    }
    let v: f64 = tok
        .parse()
        .map_err(|_| p.err(format!("{field}: not a number: `{tok}`")))?;
    if v.is_nan() {
        return Err(p.err(format!("{field}: NaN is not allowed")));
    }
    Ok(v)
}

pub fn read_snapshot(text: &str) -> Result<Snapshot> {
    let mut p = Parser {
        lineno: 0,
        text: text.lines(),
    };
    let header = loop {
        p.lineno += 1;
        match p.text.next() {
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l.trim().to_string(),
            None => return Err(p.err("empty snapshot")),
        }
    };
    let version = header
        .strip_prefix("d2dsim-snapshot ")
        .ok_or_else(|| p.err("missing `d2dsim-snapshot <version>` header"))?;
    if version != VERSION {
        return Err(p.err(format!(
            "unsupported snapshot version `{version}` (expected {VERSION})"
        )));
    }

    let mut bss: Vec<BaseStation> = Vec::new();
    let mut users: Vec<UserEquipment> = Vec::new();
    let mut gain: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dl: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ul: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut d2d: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut section = String::new();

    loop {
        p.lineno += 1;
        let line = match p.text.next() {
            Some(l) => l.trim(),
            None => break,
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            section = line.to_string();
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match section.as_str() {
            "[bs]" => {
                if toks.len() != 9 {
                    return Err(p.err("bs row needs 9 fields"));
                }
                let id: usize = toks[0].parse().map_err(|_| p.err("bs id"))?;
                if id != bss.len() {
                    return Err(p.err(format!("bs ids must be contiguous, got {id}")));
                }
                let kind = match toks[1] {
                    "macro" => BsKind::Macro,
                    "small" => BsKind::Small,
                    other => return Err(p.err(format!("unknown bs kind `{other}`"))),
                };
                bss.push(BaseStation {
                    id,
                    kind,
                    position: Point::new(
                        parse_f64(&p, "bs.x", toks[2])?,
                        parse_f64(&p, "bs.y", toks[3])?,
                    ),
                    max_tx_power_dbm: parse_f64(&p, "bs.tx_dbm", toks[4])?,
                    band_id: toks[5].parse().map_err(|_| p.err("bs.band"))?,
                    bandwidth_mhz: parse_f64(&p, "bs.bw_mhz", toks[6])?,
                    prb_budget_dl: parse_f64(&p, "bs.prb_dl", toks[7])?,
                    prb_budget_ul: parse_f64(&p, "bs.prb_ul", toks[8])?,
                });
            }
            "[ue]" => {
                if toks.len() != 7 {
                    return Err(p.err("ue row needs 7 fields"));
                }
                let id: usize = toks[0].parse().map_err(|_| p.err("ue id"))?;
                if id != users.len() {
                    return Err(p.err(format!("ue ids must be contiguous, got {id}")));
                }
                let rate_dl = parse_f64(&p, "ue.rate_dl", toks[5])?;
                let rate_ul = parse_f64(&p, "ue.rate_ul", toks[6])?;
                users.push(UserEquipment {
                    id,
                    position: Point::new(
                        parse_f64(&p, "ue.x", toks[1])?,
                        parse_f64(&p, "ue.y", toks[2])?,
                    ),
                    heading_rad: parse_f64(&p, "ue.heading", toks[3])?,
                    speed_mps: parse_f64(&p, "ue.speed", toks[4])?,
                    profile: TrafficProfile {
                        rate_dl_bps: rate_dl,
                        rate_ul_bps: rate_ul,
                    },
                    role: Role::Unclustered,
                    serving_bs: None,
                    cluster_id: None,
                });
            }
            "[gain]" | "[dl_cost]" | "[ul_cost]" | "[d2d_cost]" => {
                if toks.len() != 3 {
                    return Err(p.err("cost row needs 3 fields"));
                }
                let a: usize = toks[0].parse().map_err(|_| p.err("row index"))?;
                let b: usize = toks[1].parse().map_err(|_| p.err("col index"))?;
                let v = parse_f64(&p, &format!("{section} value"), toks[2])?;
                match section.as_str() {
                    "[gain]" => gain.insert((a, b), v),
                    "[dl_cost]" => dl.insert((a, b), v),
                    "[ul_cost]" => ul.insert((a, b), v),
                    _ => d2d.insert((a, b), v),
                };
            }
            other => {
                return Err(p.err(format!("row outside a known section (`{other}`)")));
            }
        }
    }

    let (n_bs, n_ue) = (bss.len(), users.len());
    if n_bs == 0 || n_ue == 0 {
        return Err(Error::Snapshot(
            "snapshot needs at least one bs and one ue".into(),
        ));
    }
    let densify = |m: &BTreeMap<(usize, usize), f64>, what: &str, fill: f64| -> Result<Vec<Vec<f64>>> {
        let mut out = vec![vec![fill; n_ue]; n_bs];
        for (&(k, i), &v) in m {
            if k >= n_bs || i >= n_ue {
                return Err(Error::Snapshot(format!(
                    "{what} entry ({k}, {i}) out of range"
                )));
            }
            out[k][i] = v;
        }
        Ok(out)
    };
    for (&(t, r), _) in &d2d {
        if t >= n_ue || r >= n_ue || t == r {
            return Err(Error::Snapshot(format!(
                "d2d entry ({t}, {r}) out of range"
            )));
        }
    }
    let table = LinkCostTable {
        dl_cost: densify(&dl, "dl_cost", f64::INFINITY)?,
        ul_cost: densify(&ul, "ul_cost", f64::INFINITY)?,
        gain_db: densify(&gain, "gain", -200.0)?,
        d2d_cost: d2d,
        subframe_s: 1e-3,
    };
    Ok(Snapshot { bss, users, table })
}
