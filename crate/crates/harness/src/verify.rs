//! Comparison of a converged mesh, as reported by broker status files,
//! against the oracle tree over the injected RTTs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use spanmq_core::broker::BrokerStatus;
use spanmq_core::{BrokerId, Role};

use crate::oracle::{oracle_tree, parent_margin, Graph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeBroker {
    pub name: String,
    pub id: BrokerId,
    pub capability: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLink {
    pub a: String,
    pub b: String,
    /// Injected round-trip time in microseconds.
    pub rtt_us: u64,
}

/// Everything needed to re-run a check offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeInput {
    pub label: String,
    /// Running brokers only.
    pub brokers: Vec<TreeBroker>,
    /// Links whose both ends are running.
    pub links: Vec<TreeLink>,
    pub statuses: BTreeMap<String, BrokerStatus>,
    /// False when the mesh never went quiet; the check is then inconclusive.
    pub quiescent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCheck {
    pub label: String,
    pub outcome: Outcome,
    pub root: Option<String>,
    pub oracle_root: String,
    pub edges: Vec<String>,
    pub oracle_edges: Vec<String>,
    /// Tree edges the mesh uses but the oracle does not.
    pub extra: Vec<String>,
    /// Oracle edges the mesh does not use.
    pub missing: Vec<String>,
    pub problems: Vec<String>,
    /// Gap between best and second-best parent cost in the oracle, in µs.
    pub margin_us: Option<u64>,
}

impl fmt::Display for TreeCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] root {} (oracle {}), edges {{{}}}",
            self.label,
            self.outcome,
            self.root.as_deref().unwrap_or("?"),
            self.oracle_root,
            self.edges.join(", ")
        )?;
        if !self.extra.is_empty() {
            write!(f, "; extra {}", self.extra.join(", "))?;
        }
        if !self.missing.is_empty() {
            write!(f, "; missing {}", self.missing.join(", "))?;
        }
        for p in &self.problems {
            write!(f, "; {p}")?;
        }
        if let Some(m) = self.margin_us {
            write!(f, " (oracle margin {:.1} ms)", m as f64 / 1000.0)?;
        }
        Ok(())
    }
}

fn edge_name(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}-{b}")
    } else {
        format!("{b}-{a}")
    }
}

pub fn verify_tree(input: &TreeInput) -> TreeCheck {
    let mut g = Graph::default();
    let mut index = BTreeMap::new();
    for b in &input.brokers {
        index.insert(b.name.as_str(), g.add_node(b.id, b.capability));
    }
    for l in &input.links {
        g.add_edge(index[l.a.as_str()], index[l.b.as_str()], l.rtt_us);
    }
    let oracle = oracle_tree(&g);
    let name_of = |i: usize| input.brokers[i].name.as_str();
    let oracle_edges: BTreeSet<String> = oracle
        .edges()
        .iter()
        .map(|e| edge_name(name_of(e.0), name_of(e.1)))
        .collect();
    let by_id: BTreeMap<BrokerId, &str> = input.brokers.iter().map(|b| (b.id, b.name.as_str())).collect();

    let mut problems = Vec::new();
    let mut roots = BTreeSet::new();
    let mut root_edges = BTreeSet::new();
    // (this end, peer end) forwarding flags per edge
    let mut fwd: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for b in &input.brokers {
        let Some(st) = input.statuses.get(&b.name) else {
            problems.push(format!("no status from {}", b.name));
            continue;
        };
        if st.capability != b.capability {
            problems.push(format!(
                "{} reports capability {} but {} was configured",
                b.name, st.capability, b.capability
            ));
        }
        roots.insert(st.root);
        let root_links = st.links.iter().filter(|l| l.role == Role::Root).count();
        let is_root = st.root == st.id;
        if is_root && root_links != 0 || !is_root && root_links != 1 {
            problems.push(format!("{} has {root_links} root links", b.name));
        }
        for l in &st.links {
            let Some(peer) = by_id.get(&l.peer) else {
                problems.push(format!("{} links to unknown {}", b.name, l.peer));
                continue;
            };
            let e = edge_name(&b.name, peer);
            if l.role == Role::Root {
                root_edges.insert(e.clone());
            }
            fwd.entry(e).or_default().push(l.forwarding);
        }
    }
    let root = match roots.len() {
        1 => by_id.get(roots.iter().next().unwrap()).map(|s| s.to_string()),
        0 => None,
        _ => {
            problems.push(format!("brokers disagree on the root: {roots:?}"));
            None
        }
    };
    let oracle_root = name_of(oracle.root).to_string();
    if root.as_deref() != Some(oracle_root.as_str()) && roots.len() == 1 {
        problems.push(format!(
            "root is {} but the oracle elects {oracle_root}",
            root.as_deref().unwrap_or("an unknown broker")
        ));
    }
    let mut forwarding = BTreeSet::new();
    for (e, ends) in &fwd {
        match ends.iter().filter(|&&f| f).count() {
            0 => {}
            n if n == ends.len() && n == 2 => {
                forwarding.insert(e.clone());
            }
            _ => problems.push(format!("edge {e} forwards on one side only")),
        }
        if ends.len() != 2 {
            problems.push(format!("edge {e} is known to {} end(s)", ends.len()));
        }
    }
    for l in &input.links {
        let e = edge_name(&l.a, &l.b);
        if !fwd.contains_key(&e) {
            problems.push(format!("link {e} is down"));
        }
    }
    if forwarding != root_edges {
        let odd: Vec<&String> = forwarding.symmetric_difference(&root_edges).collect();
        problems.push(format!("forwarding and root-link edges differ on {odd:?}"));
    }
    let extra: Vec<String> = root_edges.difference(&oracle_edges).cloned().collect();
    let missing: Vec<String> = oracle_edges.difference(&root_edges).cloned().collect();
    let outcome = if !input.quiescent {
        Outcome::Inconclusive
    } else if extra.is_empty() && missing.is_empty() && problems.is_empty() {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    TreeCheck {
        label: input.label.clone(),
        outcome,
        root,
        oracle_root,
        edges: root_edges.into_iter().collect(),
        oracle_edges: oracle_edges.into_iter().collect(),
        extra,
        missing,
        problems,
        margin_us: parent_margin(&g, &oracle),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spanmq_core::broker::{Counters, LinkStatus};

    fn id(port: u16) -> BrokerId {
        BrokerId::new([127, 0, 0, 1].into(), port)
    }

    fn status(me: u16, cap: u64, root: u16, links: &[(u16, Role, bool)]) -> BrokerStatus {
        BrokerStatus {
            id: id(me),
            pid: 1,
            capability: cap,
            root: id(root),
            root_capability: 0,
            root_path_cost_us: 0,
            epoch: 0,
            links: links
                .iter()
                .map(|&(p, role, forwarding)| LinkStatus {
                    peer: id(p),
                    role,
                    forwarding,
                    rtt_us: None,
                })
                .collect(),
            clients: 0,
            last_role_change_unix_ms: 0,
            updated_unix_ms: 0,
            counters: Counters::default(),
        }
    }

    /// a (C 30) - b, a - c, b - c; a-c expensive so c hangs below b.
    fn triangle() -> TreeInput {
        use Role::*;
        let brokers = vec![
            TreeBroker { name: "a".into(), id: id(1), capability: 30 },
            TreeBroker { name: "b".into(), id: id(2), capability: 20 },
            TreeBroker { name: "c".into(), id: id(3), capability: 10 },
        ];
        let links = vec![
            TreeLink { a: "a".into(), b: "b".into(), rtt_us: 70_000 },
            TreeLink { a: "b".into(), b: "c".into(), rtt_us: 70_000 },
            TreeLink { a: "a".into(), b: "c".into(), rtt_us: 150_000 },
        ];
        let statuses = [
            ("a", status(1, 30, 1, &[(2, Designated, true), (3, Designated, false)])),
            ("b", status(2, 20, 1, &[(1, Root, true), (3, Designated, true)])),
            ("c", status(3, 10, 1, &[(2, Root, true), (1, Blocked, false)])),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect();
        TreeInput {
            label: "t".into(),
            brokers,
            links,
            statuses,
            quiescent: true,
        }
    }

    #[test]
    fn matching_tree_passes() {
        let c = verify_tree(&triangle());
        assert_eq!(c.outcome, Outcome::Pass, "{c}");
        assert_eq!(c.root.as_deref(), Some("a"));
        assert_eq!(c.edges, vec!["a-b", "b-c"]);
        assert_eq!(c.margin_us, Some(10_000));
    }

    #[test]
    fn mis_rolled_edge_is_named() {
        let mut t = triangle();
        let c_status = t.statuses.get_mut("c").unwrap();
        c_status.links[0].role = Role::Blocked;
        c_status.links[0].forwarding = false;
        c_status.links[1].role = Role::Root;
        c_status.links[1].forwarding = true;
        t.statuses.get_mut("a").unwrap().links[1].forwarding = true;
        t.statuses.get_mut("b").unwrap().links[1].forwarding = false;
        let c = verify_tree(&t);
        assert_eq!(c.outcome, Outcome::Fail);
        assert_eq!(c.extra, vec!["a-c"]);
        assert_eq!(c.missing, vec!["b-c"]);
        assert!(c.to_string().contains("extra a-c"));
    }

    #[test]
    fn half_forwarding_edge_is_a_problem() {
        let mut t = triangle();
        t.statuses.get_mut("a").unwrap().links[1].forwarding = true;
        let c = verify_tree(&t);
        assert_eq!(c.outcome, Outcome::Fail);
        assert!(c.problems.iter().any(|p| p.contains("a-c forwards on one side")), "{c}");
    }

    #[test]
    fn wrong_root_and_missing_status() {
        let mut t = triangle();
        t.brokers[2].capability = 99;
        t.statuses.get_mut("c").unwrap().capability = 99;
        let c = verify_tree(&t);
        assert_eq!(c.oracle_root, "c");
        assert_eq!(c.outcome, Outcome::Fail);
        t.statuses.remove("b");
        let c = verify_tree(&t);
        assert!(c.problems.iter().any(|p| p.contains("no status from b")));
    }

    #[test]
    fn not_quiet_is_inconclusive() {
        let mut t = triangle();
        t.quiescent = false;
        t.statuses.get_mut("a").unwrap().links[1].forwarding = true;
        assert_eq!(verify_tree(&t).outcome, Outcome::Inconclusive);
    }

    #[test]
    fn two_brokers_trivially_pass() {
        use Role::*;
        let t = TreeInput {
            label: "pair".into(),
            brokers: vec![
                TreeBroker { name: "x".into(), id: id(1), capability: 1 },
                TreeBroker { name: "y".into(), id: id(2), capability: 1 },
            ],
            links: vec![TreeLink { a: "x".into(), b: "y".into(), rtt_us: 10 }],
            statuses: [
                ("x".to_string(), status(1, 1, 1, &[(2, Designated, true)])),
                ("y".to_string(), status(2, 1, 1, &[(1, Root, true)])),
            ]
            .into(),
            quiescent: true,
        };
        let c = verify_tree(&t);
        assert_eq!(c.outcome, Outcome::Pass, "{c}");
        assert_eq!(c.edges, vec!["x-y"]);
    }
}
