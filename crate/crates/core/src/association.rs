//! User association state and its validity rules.
//!
//! The state is the pair of binary relations "user i is served by BS k" and
//! "user j reaches the network through head i". It is stored sparsely (at
//! most one entry per user and relation) so the structural rules -- one
//! attachment per user, single-hop clusters -- hold by construction for
//! states built through the mutators. `validate` re-checks everything for
//! states read from external input.

use crate::scenario::{BaseStation, Role, UserEquipment};

/// Association of every user to either a BS or a cluster head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationState {
    /// `serving[i] = Some(k)` when user i is directly attached to BS k.
    serving: Vec<Option<usize>>,
    /// `head_of[j] = Some(i)` when user j is a member served through head i.
    head_of: Vec<Option<usize>>,
}

/// A cluster derived from the member relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub head: usize,
    /// Members excluding the head, ascending by id.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len() + 1
    }
}

/// One violated association rule, by constraint label and offending indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub constraint: &'static str,
    pub subject: (usize, usize),
}

impl AssociationState {
    pub fn new(num_users: usize) -> Self {
        AssociationState {
            serving: vec![None; num_users],
            head_of: vec![None; num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.serving.len()
    }

    pub fn serving(&self, ue: usize) -> Option<usize> {
        self.serving[ue]
    }

    pub fn head(&self, ue: usize) -> Option<usize> {
        self.head_of[ue]
    }

    pub fn is_member(&self, ue: usize) -> bool {
        self.head_of[ue].is_some()
    }

    pub fn is_head(&self, ue: usize) -> bool {
        self.head_of.iter().any(|h| *h == Some(ue))
    }

    /// Attaches a user directly to a BS, clearing any member link.
    pub fn attach(&mut self, ue: usize, bs: usize) {
        self.head_of[ue] = None;
        self.serving[ue] = Some(bs);
    }

    /// Turns a user into a member of `head`'s cluster. The head must be
    /// BS-attached and must not be a member itself.
    pub fn make_member(&mut self, ue: usize, head: usize) {
        assert_ne!(ue, head, "a user cannot head itself");
        assert!(
            self.serving[head].is_some(),
            "cluster head {head} must be attached to a BS"
        );
        assert!(
            self.head_of[head].is_none(),
            "cluster head {head} is already a member"
        );
        assert!(
            !self.is_head(ue),
            "user {ue} heads a cluster and cannot become a member"
        );
        self.serving[ue] = None;
        self.head_of[ue] = Some(head);
    }

    /// The serving BS that carries a user's traffic: its own attachment, or
    /// its head's when clustered.
    pub fn traffic_cell(&self, ue: usize) -> Option<usize> {
        match self.head_of[ue] {
            Some(h) => self.serving[h],
            None => self.serving[ue],
        }
    }

    pub fn role(&self, ue: usize) -> Role {
        if self.head_of[ue].is_some() {
            Role::Member
        } else if self.is_head(ue) {
            Role::Head
        } else {
            Role::Unclustered
        }
    }

    /// Clusters implied by the member relation, ascending by head id.
    pub fn clusters(&self) -> Vec<Cluster> {
        let n = self.num_users();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, h) in self.head_of.iter().enumerate() {
            if let Some(h) = h {
                members[*h].push(j);
            }
        }
        let mut out = Vec::new();
        for (h, m) in members.iter_mut().enumerate() {
            if !m.is_empty() {
                out.push(Cluster {
                    head: h,
                    members: std::mem::take(m),
                });
            }
        }
        out
    }

    /// Writes roles and attachments back onto the user records.
    pub fn apply_to_users(&self, users: &mut [UserEquipment]) {
        let clusters = self.clusters();
        let mut cluster_of: Vec<Option<usize>> = vec![None; self.num_users()];
        for (cid, c) in clusters.iter().enumerate() {
            cluster_of[c.head] = Some(cid);
            for &m in &c.members {
                cluster_of[m] = Some(cid);
            }
        }
        for ue in users.iter_mut() {
            ue.serving_bs = self.serving[ue.id];
            ue.cluster_id = cluster_of[ue.id];
            ue.role = self.role(ue.id);
        }
    }

    /// Checks the full rule set and returns every violation found.
    ///
    /// Labels: `7a` ids out of range, `7c` not exactly one attachment,
    /// `7d` nobody attached to any BS, `7e` head not BS-attached,
    /// `7f` mutual membership, `7g` self-membership.
    pub fn validate(&self, num_bs: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.num_users();
        for i in 0..n {
            if let Some(k) = self.serving[i] {
                if k >= num_bs {
                    out.push(Violation {
                        constraint: "7a",
                        subject: (i, k),
                    });
                }
            }
            if let Some(h) = self.head_of[i] {
                if h >= n {
                    out.push(Violation {
                        constraint: "7a",
                        subject: (i, h),
                    });
                    continue;
                }
                if h == i {
                    out.push(Violation {
                        constraint: "7g",
                        subject: (i, i),
                    });
                }
                if self.serving[h].is_none() {
                    out.push(Violation {
                        constraint: "7e",
                        subject: (i, h),
                    });
                }
                if i < h && self.head_of[h] == Some(i) {
                    out.push(Violation {
                        constraint: "7f",
                        subject: (i, h),
                    });
                }
            }
            let attachments =
                usize::from(self.serving[i].is_some()) + usize::from(self.head_of[i].is_some());
            if attachments != 1 {
                out.push(Violation {
                    constraint: "7c",
                    subject: (i, attachments),
                });
            }
        }
        if n > 0 && !self.serving.iter().any(Option::is_some) {
            out.push(Violation {
                constraint: "7d",
                subject: (0, 0),
            });
        }
        out
    }

    /// Raw accessors for snapshot and CSV emission.
    pub fn raw_parts(&self) -> (&[Option<usize>], &[Option<usize>]) {
        (&self.serving, &self.head_of)
    }

    pub fn from_raw_parts(serving: Vec<Option<usize>>, head_of: Vec<Option<usize>>) -> Self {
        assert_eq!(serving.len(), head_of.len());
        AssociationState { serving, head_of }
    }
}

/// Strongest-received-power association: every user attaches to the BS with
/// the highest `tx power + gain (+ CRE bias for small cells)`; ties break
/// toward the lowest BS id. No clusters are formed.
pub fn associate_rsrp(
    bss: &[BaseStation],
    users: &[UserEquipment],
    gain_db: &[Vec<f64>],
    cre_bias_db: f64,
) -> AssociationState {
    let mut state = AssociationState::new(users.len());
    for ue in users {
        let mut best: Option<(usize, f64)> = None;
        for bs in bss {
            let bias = match bs.kind {
                crate::scenario::BsKind::Small => cre_bias_db,
                crate::scenario::BsKind::Macro => 0.0,
            };
            let rx = bs.max_tx_power_dbm + gain_db[bs.id][ue.id] + bias;
            if best.map_or(true, |(_, b)| rx > b) {
                best = Some((bs.id, rx));
            }
        }
        if let Some((k, _)) = best {
            state.attach(ue.id, k);
        }
    }
    state
}

#[cfg(test)]
impl AssociationState {
    /// Test-only escape hatch for building invalid states.
    pub(crate) fn head_of_mut(&mut self) -> &mut Vec<Option<usize>> {
        &mut self.head_of
    }
}
