//! Committing and non-committing label sets per MC, and well-formedness.
//!
//! Each interaction label below an MC is classified while walking the block
//! with the set C of roles already known to be committed. A message from a
//! role in C to a role outside C commits its receiver; everything else does
//! not. The left block starts with C = ∅, with one extra rule: a message to
//! the observer commits it. On directed MCs that rule fires exactly on the
//! head of the left block. The right block starts with C = {observer}.
//!
//! With GC labels (explicit `*` markers), only marked labels commit outside
//! the standard case, and they commit their receiver.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{GlobalType, Label, McName, Role, RoleSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitError {
    #[error("commit analysis needs an initial global type")]
    NotInitial,
    #[error("GC labels given for unknown MC `{0}`")]
    UnknownMc(McName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockSide {
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Occurrence {
    pub side: BlockSide,
    pub committing: bool,
    /// Interactions from the MC root down to this one, e.g. `lhs/A→B:a1/A→C:a2`.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct McCommitments {
    pub name: McName,
    pub observer: Role,
    /// Receiver of the right block's head.
    pub partner: Role,
    /// Left head is `partner→observer`.
    pub directed: bool,
    pub gc: Option<BTreeSet<Label>>,
    pub committing: BTreeSet<Label>,
    pub noncommitting: BTreeSet<Label>,
    pub lhs_committing: BTreeSet<Label>,
    pub rhs_committing: BTreeSet<Label>,
    /// Position of the outermost occurrence in the once-unfolded type.
    pub location: String,
    pub occurrences: BTreeMap<Label, Vec<Occurrence>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CommitReport {
    pub mcs: BTreeMap<McName, McCommitments>,
    /// Labels that occur in the sets of more than one MC.
    pub cross_mc_labels: BTreeSet<Label>,
}

impl CommitReport {
    pub fn get(&self, mc: &McName) -> Option<&McCommitments> {
        self.mcs.get(mc)
    }

    pub fn is_committing(&self, mc: &McName, label: &Label) -> bool {
        self.mcs.get(mc).is_some_and(|m| m.committing.contains(label))
    }

    pub fn observer(&self, mc: &McName) -> Option<&Role> {
        self.mcs.get(mc).map(|m| &m.observer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    /// Committing at one occurrence and non-committing at another.
    Ambiguous,
    /// Committing on both sides, so the receiver cannot tell which side won.
    BothSides,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelConflict {
    pub mc: McName,
    pub label: Label,
    pub kind: ConflictKind,
    pub first: String,
    pub second: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WellFormedness {
    pub ok: bool,
    pub conflicts: Vec<LabelConflict>,
}

pub type GcLabels = BTreeMap<McName, BTreeSet<Label>>;

pub fn analyze_commitments(g0: &GlobalType, gc: Option<&GcLabels>) -> Result<CommitReport, CommitError> {
    analyze(g0, gc, true)
}

/// The same analysis on `g0` as written, without the one-step unfolding.
/// Labels introduced by unfolding are missed; kept for comparison only.
pub fn analyze_commitments_without_unfolding(g0: &GlobalType, gc: Option<&GcLabels>) -> Result<CommitReport, CommitError> {
    analyze(g0, gc, false)
}

fn analyze(g0: &GlobalType, gc: Option<&GcLabels>, unfold: bool) -> Result<CommitReport, CommitError> {
    if !g0.is_initial() {
        return Err(CommitError::NotInitial);
    }
    let names = g0.mc_names();
    if let Some(gc) = gc {
        if let Some(c) = gc.keys().find(|c| !names.contains(*c)) {
            return Err(CommitError::UnknownMc(c.clone()));
        }
    }
    let g = if unfold { g0.unfold_all_once() } else { g0.clone() };
    let mut outermost: BTreeMap<McName, (&GlobalType, String)> = BTreeMap::new();
    find_outermost(&g, &mut Vec::new(), &mut outermost);

    let mut report = CommitReport::default();
    for (name, (def, location)) in outermost {
        let GlobalType::McDef { lhs, rhs, .. } = def else { unreachable!("outermost collects definitions") };
        let (observer, partner) = match rhs.as_ref() {
            GlobalType::Interaction { from, to, .. } => (from.clone(), to.clone()),
            _ => continue,
        };
        let directed = matches!(lhs.as_ref(), GlobalType::Interaction { from, to, .. } if *from == partner && *to == observer);
        let gc_set = gc.and_then(|m| m.get(&name)).filter(|s| !s.is_empty()).cloned();
        let mut walk = Walk {
            name: &name,
            observer: &observer,
            gc: gc_set.as_ref(),
            side: BlockSide::Lhs,
            occurrences: BTreeMap::new(),
        };
        walk.classify(lhs, &RoleSet::new(), &mut vec!["lhs".to_string()]);
        walk.side = BlockSide::Rhs;
        walk.classify(rhs, &[observer.clone()].into(), &mut vec!["rhs".to_string()]);
        let occurrences = walk.occurrences;

        let mut m = McCommitments {
            name: name.clone(),
            observer,
            partner,
            directed,
            gc: gc_set,
            committing: BTreeSet::new(),
            noncommitting: BTreeSet::new(),
            lhs_committing: BTreeSet::new(),
            rhs_committing: BTreeSet::new(),
            location,
            occurrences: BTreeMap::new(),
        };
        for (label, occs) in &occurrences {
            for o in occs {
                if o.committing {
                    m.committing.insert(label.clone());
                    match o.side {
                        BlockSide::Lhs => m.lhs_committing.insert(label.clone()),
                        BlockSide::Rhs => m.rhs_committing.insert(label.clone()),
                    };
                } else {
                    m.noncommitting.insert(label.clone());
                }
            }
        }
        m.occurrences = occurrences;
        report.mcs.insert(name, m);
    }

    let mut seen: BTreeMap<&Label, usize> = BTreeMap::new();
    for m in report.mcs.values() {
        for l in m.committing.union(&m.noncommitting) {
            *seen.entry(l).or_default() += 1;
        }
    }
    report.cross_mc_labels = seen.into_iter().filter(|(_, n)| *n > 1).map(|(l, _)| l.clone()).collect();
    Ok(report)
}

/// Whether `from→to:label` commits its receiver, given the committed set.
pub(crate) fn promotes(committed: &RoleSet, from: &Role, to: &Role, label: &Label, observer: &Role, gc: Option<&BTreeSet<Label>>) -> bool {
    let standard = committed.contains(from) && !committed.contains(to);
    standard
        || match gc {
            Some(gc) => gc.contains(label),
            None => to == observer && !committed.contains(to),
        }
}

/// First definition of each MC name in pre-order, with its location.
pub(crate) fn outermost_defs(g: &GlobalType) -> BTreeMap<McName, (&GlobalType, String)> {
    let mut out = BTreeMap::new();
    find_outermost(g, &mut Vec::new(), &mut out);
    out
}

fn find_outermost<'a>(g: &'a GlobalType, path: &mut Vec<String>, out: &mut BTreeMap<McName, (&'a GlobalType, String)>) {
    match g {
        GlobalType::McDef { name, lhs, rhs } => {
            if !out.contains_key(name) {
                let loc = if path.is_empty() { "root".to_string() } else { path.join("/") };
                out.insert(name.clone(), (g, loc));
            }
            path.push(format!("{name}.lhs"));
            find_outermost(lhs, path, out);
            path.pop();
            path.push(format!("{name}.rhs"));
            find_outermost(rhs, path, out);
            path.pop();
        }
        GlobalType::Interaction { from, to, branches } | GlobalType::InTransit { from, to, branches, .. } => {
            for (l, c) in branches.iter() {
                path.push(format!("{from}→{to}:{l}"));
                find_outermost(c, path, out);
                path.pop();
            }
        }
        GlobalType::Rec { var, body } => {
            path.push(format!("μ{var}"));
            find_outermost(body, path, out);
            path.pop();
        }
        GlobalType::McActive { lhs, rhs, .. } => {
            find_outermost(lhs, path, out);
            find_outermost(rhs, path, out);
        }
        GlobalType::Var(_) | GlobalType::End => {}
    }
}

struct Walk<'a> {
    name: &'a McName,
    observer: &'a Role,
    gc: Option<&'a BTreeSet<Label>>,
    side: BlockSide,
    occurrences: BTreeMap<Label, Vec<Occurrence>>,
}

impl Walk<'_> {
    fn classify(&mut self, g: &GlobalType, committed: &RoleSet, path: &mut Vec<String>) {
        match g {
            GlobalType::Interaction { from, to, branches } => {
                for (l, cont) in branches.iter() {
                    let commits = promotes(committed, from, to, l, self.observer, self.gc);
                    path.push(format!("{from}→{to}:{l}"));
                    self.occurrences.entry(l.clone()).or_default().push(Occurrence {
                        side: self.side,
                        committing: commits,
                        path: path.join("/"),
                    });
                    if commits {
                        let mut next = committed.clone();
                        next.insert(to.clone());
                        self.classify(cont, &next, path);
                    } else {
                        self.classify(cont, committed, path);
                    }
                    path.pop();
                }
            }
            GlobalType::McDef { name, lhs, rhs } => {
                if name != self.name {
                    path.push(format!("{name}.lhs"));
                    self.classify(lhs, committed, path);
                    path.pop();
                    path.push(format!("{name}.rhs"));
                    self.classify(rhs, committed, path);
                    path.pop();
                }
            }
            GlobalType::Rec { var, body } => {
                path.push(format!("μ{var}"));
                self.classify(body, committed, path);
                path.pop();
            }
            GlobalType::Var(_) | GlobalType::End => {}
            GlobalType::InTransit { .. } | GlobalType::McActive { .. } => {
                unreachable!("initial types only")
            }
        }
    }
}

pub fn well_formed(report: &CommitReport) -> WellFormedness {
    let mut conflicts = Vec::new();
    for m in report.mcs.values() {
        for (label, occs) in &m.occurrences {
            let first_commit = occs.iter().find(|o| o.committing);
            let first_non = occs.iter().find(|o| !o.committing);
            if let (Some(a), Some(b)) = (first_commit, first_non) {
                conflicts.push(LabelConflict {
                    mc: m.name.clone(),
                    label: label.clone(),
                    kind: ConflictKind::Ambiguous,
                    first: a.path.clone(),
                    second: b.path.clone(),
                });
                continue;
            }
            let lhs = occs.iter().find(|o| o.committing && o.side == BlockSide::Lhs);
            let rhs = occs.iter().find(|o| o.committing && o.side == BlockSide::Rhs);
            if let (Some(a), Some(b)) = (lhs, rhs) {
                conflicts.push(LabelConflict {
                    mc: m.name.clone(),
                    label: label.clone(),
                    kind: ConflictKind::BothSides,
                    first: a.path.clone(),
                    second: b.path.clone(),
                });
            }
        }
    }
    WellFormedness { ok: conflicts.is_empty(), conflicts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GlobalType as G;

    fn labels(ls: &[&str]) -> BTreeSet<Label> {
        ls.iter().map(Label::new).collect()
    }

    fn timeout() -> GlobalType {
        G::mc(
            "c1",
            G::msg("A", "B", "a1", G::msg("A", "C", "a2", G::msg("B", "C", "a3", G::msg("B", "A", "a4", G::msg("C", "A", "a5", G::End))))),
            G::msg("B", "A", "TOa", G::msg("B", "C", "TOc", G::End)),
        )
    }

    #[test]
    fn timeout_sets() {
        let r = analyze_commitments(&timeout(), None).unwrap();
        let m = r.get(&"c1".into()).unwrap();
        assert_eq!(m.committing, labels(&["a1", "a3", "a4", "TOa", "TOc"]));
        assert_eq!(m.noncommitting, labels(&["a2", "a5"]));
        assert_eq!(m.observer, Role::new("B"));
        assert!(m.directed);
        assert!(well_formed(&r).ok);
    }

    #[test]
    fn no_mc_gives_empty_report() {
        let r = analyze_commitments(&G::msg("p", "q", "a", G::End), None).unwrap();
        assert!(r.mcs.is_empty());
        assert!(well_formed(&r).ok);
    }

    #[test]
    fn nested_same_name_stops_analysis() {
        // μt.(q→p:a.q→r:b.t ▷ p→q:d.p→r:e.t)
        let g = G::rec(
            "t",
            G::mc("c", G::msg("q", "p", "a", G::msg("q", "r", "b", G::var("t"))), G::msg("p", "q", "d", G::msg("p", "r", "e", G::var("t")))),
        );
        let r = analyze_commitments(&g, None).unwrap();
        let m = r.get(&"c".into()).unwrap();
        assert_eq!(m.committing, labels(&["a", "d", "e"]));
        assert_eq!(m.noncommitting, labels(&["b"]));
    }

    #[test]
    fn ambiguous_label_is_reported() {
        let g = G::mc(
            "c",
            G::msg("q", "p", "a", G::msg("q", "r", "b", G::End)),
            G::msg("p", "q", "c", G::msg("q", "r", "b", G::End)),
        );
        let wf = well_formed(&analyze_commitments(&g, None).unwrap());
        assert!(!wf.ok);
        assert_eq!(wf.conflicts.len(), 1);
        assert_eq!(wf.conflicts[0].label, Label::new("b"));
        assert_eq!(wf.conflicts[0].kind, ConflictKind::Ambiguous);
        assert_eq!(wf.conflicts[0].first, "rhs/p→q:c/q→r:b");
        assert_eq!(wf.conflicts[0].second, "lhs/q→p:a/q→r:b");
    }

    #[test]
    fn gc_variant_only_marked_labels_commit_the_observer() {
        // Q→P:Start.μX.Q→P{More.X, Stop.P→Q:Ack} ▷ P→Q:Interrupt, GC = {Stop}
        let body = G::rec("X", G::interaction("Q", "P", vec![("More", G::var("X")), ("Stop", G::msg("P", "Q", "Ack", G::End))]));
        let g = G::mc("c1", G::msg("Q", "P", "Start", body), G::msg("P", "Q", "Interrupt", G::End));
        let gc: GcLabels = [(McName::new("c1"), labels(&["Stop"]))].into();
        let r = analyze_commitments(&g, Some(&gc)).unwrap();
        let m = r.get(&"c1".into()).unwrap();
        assert_eq!(m.committing, labels(&["Stop", "Ack", "Interrupt"]));
        assert_eq!(m.noncommitting, labels(&["Start", "More"]));

        let plain = analyze_commitments(&g, None).unwrap();
        assert_eq!(plain.get(&"c1".into()).unwrap().committing, labels(&["Start", "Ack", "Interrupt"]));
    }

    fn corpus_sets(name: &str) -> (BTreeSet<Label>, BTreeSet<Label>, WellFormedness) {
        let p = crate::corpus::load(name).unwrap();
        let r = analyze_commitments(&p.body, p.gc_labels().as_ref()).unwrap();
        assert_eq!(r.mcs.len(), 1, "{name}");
        let m = r.mcs.values().next().unwrap();
        (m.committing.clone(), m.noncommitting.clone(), well_formed(&r))
    }

    #[test]
    fn corpus_oracles() {
        let (c, n, wf) = corpus_sets("failh");
        assert_eq!(c, labels(&["HB", "OK", "more", "Timeout", "Crash"]));
        assert_eq!(n, labels(&["result"]));
        assert!(wf.ok);

        let (c, n, wf) = corpus_sets("amqp");
        assert_eq!(c, labels(&["process_message", "processing_complete", "update_delivery_state", "basic_cancel"]));
        assert_eq!(n, labels(&["basic_deliver", "basic_cancel_ok"]));
        assert!(wf.ok);

        let (c, n, _) = corpus_sets("interr");
        assert_eq!(c, labels(&["Stop", "Ack", "Interrupt"]));
        assert_eq!(n, labels(&["Start", "More"]));

        let (_, _, wf) = corpus_sets("timeout_rename_toc");
        assert!(!wf.ok);
        assert_eq!(wf.conflicts[0].kind, ConflictKind::BothSides);
        assert_eq!(wf.conflicts[0].label, Label::new("a3"));

        let (_, _, wf) = corpus_sets("loop_bad");
        assert_eq!(wf.conflicts.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(), vec!["b"]);
    }

    #[test]
    fn unfolding_captures_labels_behind_the_binder() {
        let p = crate::corpus::load("capture").unwrap();
        let with = analyze_commitments(&p.body, None).unwrap();
        let without = analyze_commitments_without_unfolding(&p.body, None).unwrap();
        let a = Label::new("a");
        let c = with.mcs.keys().next().unwrap().clone();
        assert!(with.is_committing(&c, &a));
        assert!(!without.is_committing(&c, &a));
    }

    #[test]
    fn errors() {
        let active = G::McActive {
            name: "c".into(),
            instance: 1,
            lset: RoleSet::new(),
            rset: RoleSet::new(),
            lhs: Box::new(G::End),
            rhs: Box::new(G::End),
        };
        assert_eq!(analyze_commitments(&active, None), Err(CommitError::NotInitial));
        let gc: GcLabels = [(McName::new("nope"), labels(&["x"]))].into();
        assert_eq!(analyze_commitments(&timeout(), Some(&gc)), Err(CommitError::UnknownMc("nope".into())));
    }
}
