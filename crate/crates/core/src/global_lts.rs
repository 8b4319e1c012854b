//! Global transition relation with instance counters, and bounded
//! breadth-first exploration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::commit::{analyze_commitments, CommitError, CommitReport, GcLabels};
use crate::frontend::{render_global, Protocol, Style};
use crate::model::{subject, GlobalType, Label, McName, RecVar, Role, RoleSet, TransitionLabel};

/// Per recursion variable, how many times `[Rec]` fired on the way here.
pub type Unfolds = BTreeMap<RecVar, u32>;

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct GlobalState {
    pub term: GlobalType,
    pub unfolds: Unfolds,
}

impl GlobalState {
    pub fn new(term: GlobalType) -> Self {
        Self { term, unfolds: Unfolds::new() }
    }

    /// Greatest live counter per MC name.
    pub fn theta(&self) -> BTreeMap<McName, u32> {
        self.term.theta()
    }
}

#[derive(Clone, Debug)]
pub struct GStep {
    pub label: TransitionLabel,
    pub term: GlobalType,
    pub unfolded: BTreeSet<RecVar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExplorationBounds {
    pub max_states: usize,
    pub max_depth: usize,
    pub max_unfoldings_per_rec: u32,
}

impl Default for ExplorationBounds {
    fn default() -> Self {
        Self { max_states: 200_000, max_depth: 10_000, max_unfoldings_per_rec: 2 }
    }
}

/// The base type with its precomputed commitment sets.
#[derive(Debug, Clone)]
pub struct GlobalLts {
    base: GlobalType,
    base_roles: RoleSet,
    commits: CommitReport,
}

impl GlobalLts {
    pub fn new(base: GlobalType, gc: Option<&GcLabels>) -> Result<Self, CommitError> {
        let commits = analyze_commitments(&base, gc)?;
        Ok(Self::with_report(base, commits))
    }

    pub fn from_protocol(p: &Protocol) -> Result<Self, CommitError> {
        Self::new(p.body.clone(), p.gc_labels().as_ref())
    }

    pub fn with_report(base: GlobalType, commits: CommitReport) -> Self {
        let base_roles = base.roles();
        Self { base, base_roles, commits }
    }

    pub fn base(&self) -> &GlobalType {
        &self.base
    }

    pub fn commits(&self) -> &CommitReport {
        &self.commits
    }

    pub fn initial(&self) -> GlobalState {
        GlobalState::new(self.base.clone())
    }

    /// Every enabled transition, with no unfolding budget.
    pub fn enabled(&self, s: &GlobalState) -> Vec<(TransitionLabel, GlobalState)> {
        self.enabled_bounded(s, None).0
    }

    /// Enabled transitions whose `[Rec]` uses stay within `max_unfold` per
    /// variable. The flag reports whether some transition was cut.
    pub fn enabled_bounded(&self, s: &GlobalState, max_unfold: Option<u32>) -> (Vec<(TransitionLabel, GlobalState)>, bool) {
        let (steps, cut) = self.steps_bounded(&s.term, &s.unfolds, max_unfold);
        let out = steps
            .into_iter()
            .map(|st| {
                let mut unfolds = s.unfolds.clone();
                for v in st.unfolded {
                    *unfolds.entry(v).or_default() += 1;
                }
                (st.label, GlobalState { term: st.term, unfolds })
            })
            .collect();
        (out, cut)
    }

    /// Raw steps of a term, ignoring unfold counts.
    pub fn steps(&self, g: &GlobalType) -> Vec<GStep> {
        self.steps_bounded(g, &Unfolds::new(), None).0
    }

    fn steps_bounded(&self, g: &GlobalType, unfolds: &Unfolds, max_unfold: Option<u32>) -> (Vec<GStep>, bool) {
        let mut st = Stepper { lts: self, theta: g.theta(), unfolds, max_unfold, cut: false };
        let out = st.steps(g);
        (out, st.cut)
    }

    pub fn explore(&self, bounds: ExplorationBounds) -> ExplorationGraph {
        self.explore_from(self.initial(), bounds)
    }

    /// Breadth-first closure from `start`. Each level is expanded in
    /// parallel and merged in frontier order, so the graph does not depend
    /// on the number of workers.
    pub fn explore_from(&self, start: GlobalState, bounds: ExplorationBounds) -> ExplorationGraph {
        let mut g = ExplorationGraph {
            states: vec![start.clone()],
            edges: Vec::new(),
            out: vec![Vec::new()],
            depth: vec![0],
            parent: vec![None],
            complete: vec![false],
            status: ExplorationStatus::default(),
            bounds,
        };
        let mut index: HashMap<GlobalState, usize> = HashMap::new();
        index.insert(start, 0);
        let mut frontier = vec![0usize];
        let mut depth = 0usize;
        while !frontier.is_empty() {
            if depth >= bounds.max_depth {
                g.status.hit_max_depth = true;
                break;
            }
            let expanded: Vec<(usize, Vec<(TransitionLabel, GlobalState)>, bool)> = frontier
                .par_iter()
                .map(|&i| {
                    let (succ, cut) = self.enabled_bounded(&g.states[i], Some(bounds.max_unfoldings_per_rec));
                    (i, succ, cut)
                })
                .collect();
            let mut next = Vec::new();
            for (i, succ, cut) in expanded {
                let mut complete = !cut;
                if cut {
                    g.status.hit_rec_bound = true;
                }
                for (label, s) in succ {
                    let j = match index.get(&s) {
                        Some(&j) => j,
                        None => {
                            if g.states.len() >= bounds.max_states {
                                g.status.hit_max_states = true;
                                complete = false;
                                continue;
                            }
                            let j = g.states.len();
                            index.insert(s.clone(), j);
                            g.states.push(s);
                            g.out.push(Vec::new());
                            g.depth.push(depth + 1);
                            g.parent.push(Some(g.edges.len()));
                            g.complete.push(false);
                            next.push(j);
                            j
                        }
                    };
                    g.out[i].push(g.edges.len());
                    g.edges.push(Edge { from: i, label, to: j });
                }
                g.complete[i] = complete;
            }
            frontier = next;
            depth += 1;
        }
        g.status.exhaustive = !(g.status.hit_max_depth || g.status.hit_max_states || g.status.hit_rec_bound);
        g
    }
}

struct Stepper<'a> {
    lts: &'a GlobalLts,
    theta: BTreeMap<McName, u32>,
    unfolds: &'a Unfolds,
    max_unfold: Option<u32>,
    cut: bool,
}

impl Stepper<'_> {
    fn steps(&mut self, g: &GlobalType) -> Vec<GStep> {
        self.steps_in(g, &BTreeSet::new())
    }

    /// `pending` holds variables already unfolded by the enclosing derivation.
    fn steps_in(&mut self, g: &GlobalType, pending: &BTreeSet<RecVar>) -> Vec<GStep> {
        match g {
            GlobalType::Interaction { from, to, branches } => {
                let mut out: Vec<GStep> = branches
                    .labels()
                    .map(|l| GStep {
                        label: TransitionLabel::Send { from: from.clone(), to: to.clone(), label: l.clone() },
                        term: GlobalType::InTransit {
                            from: from.clone(),
                            to: to.clone(),
                            chosen: l.clone(),
                            branches: branches.clone(),
                        },
                        unfolded: BTreeSet::new(),
                    })
                    .collect();
                // [Cont1]: a step common to every branch, by neither p nor q.
                let per_branch: Vec<Vec<GStep>> = branches
                    .conts()
                    .map(|c| {
                        self.steps_in(c, pending)
                            .into_iter()
                            .filter(|s| {
                                let sub = subject(&s.label);
                                !sub.contains(from) && !sub.contains(to)
                            })
                            .collect()
                    })
                    .collect();
                let mut labels: Vec<&TransitionLabel> = per_branch[0].iter().map(|s| &s.label).collect();
                labels.dedup();
                let mut seen = BTreeSet::new();
                for label in labels {
                    if !seen.insert(label.clone()) {
                        continue;
                    }
                    let choices: Vec<Vec<&GStep>> =
                        per_branch.iter().map(|b| b.iter().filter(|s| &s.label == label).collect()).collect();
                    if choices.iter().any(|c| c.is_empty()) {
                        continue;
                    }
                    for combo in cartesian(&choices) {
                        let mut unfolded = BTreeSet::new();
                        let bs: Vec<(Label, GlobalType)> = branches
                            .labels()
                            .zip(combo.iter())
                            .map(|(l, s)| {
                                unfolded.extend(s.unfolded.iter().cloned());
                                (l.clone(), s.term.clone())
                            })
                            .collect();
                        out.push(GStep {
                            label: label.clone(),
                            term: GlobalType::Interaction {
                                from: from.clone(),
                                to: to.clone(),
                                branches: crate::model::Branches::new(bs).expect("labels unchanged"),
                            },
                            unfolded,
                        });
                    }
                }
                out
            }
            GlobalType::InTransit { from, to, chosen, branches } => {
                let k = branches.position(chosen).expect("chosen label is a branch");
                let mut out = vec![GStep {
                    label: TransitionLabel::Recv { from: from.clone(), to: to.clone(), label: chosen.clone() },
                    term: branches.as_slice()[k].1.clone(),
                    unfolded: BTreeSet::new(),
                }];
                // [Cont2]: the chosen continuation moves, not by the receiver.
                for s in self.steps_in(&branches.as_slice()[k].1, pending) {
                    if subject(&s.label).contains(to) {
                        continue;
                    }
                    out.push(GStep {
                        label: s.label,
                        term: GlobalType::InTransit {
                            from: from.clone(),
                            to: to.clone(),
                            chosen: chosen.clone(),
                            branches: branches.with(k, s.term),
                        },
                        unfolded: s.unfolded,
                    });
                }
                out
            }
            GlobalType::Rec { var, body } => {
                // Below a fresh unfolding every prefix role is excluded by
                // [Cont1], so a second pass through the same binder in one
                // derivation never yields a step.
                if g.is_unguarded_loop() || pending.contains(var) {
                    return Vec::new();
                }
                if let Some(max) = self.max_unfold {
                    if self.unfolds.get(var).copied().unwrap_or(0) >= max {
                        self.cut = true;
                        return Vec::new();
                    }
                }
                let mut pending = pending.clone();
                pending.insert(var.clone());
                let unfolded = body.subst(var, g);
                let mut out = self.steps_in(&unfolded, &pending);
                for s in &mut out {
                    s.unfolded.insert(var.clone());
                }
                out
            }
            GlobalType::Var(_) | GlobalType::End => Vec::new(),
            GlobalType::McDef { name, lhs, rhs } => {
                let n = self.theta.get(name).copied().unwrap_or(0) + 1;
                vec![GStep {
                    label: TransitionLabel::New { mc: name.clone(), instance: Some(n) },
                    term: GlobalType::McActive {
                        name: name.clone(),
                        instance: n,
                        lset: RoleSet::new(),
                        rset: RoleSet::new(),
                        lhs: lhs.clone(),
                        rhs: rhs.clone(),
                    },
                    unfolded: BTreeSet::new(),
                }]
            }
            GlobalType::McActive { name, instance, lset, rset, lhs, rhs } => {
                let mut out = Vec::new();
                let rebuild = |lset: RoleSet, rset: RoleSet, l: GlobalType, r: GlobalType| GlobalType::McActive {
                    name: name.clone(),
                    instance: *instance,
                    lset,
                    rset,
                    lhs: Box::new(l),
                    rhs: Box::new(r),
                };
                for s in self.steps_in(lhs, pending) {
                    let lset2 = match &s.label {
                        TransitionLabel::New { .. } if *rset != self.lts.base_roles => lset.clone(),
                        TransitionLabel::Send { from, .. } if !rset.contains(from) => lset.clone(),
                        TransitionLabel::Recv { to, label, .. } if !rset.contains(to) => {
                            let mut l = lset.clone();
                            if self.lts.commits.is_committing(name, label) {
                                l.insert(to.clone());
                            }
                            l
                        }
                        _ => continue,
                    };
                    out.push(GStep {
                        term: rebuild(lset2, rset.clone(), s.term, (**rhs).clone()),
                        label: s.label,
                        unfolded: s.unfolded,
                    });
                }
                for s in self.steps_in(rhs, pending) {
                    let rset2 = match &s.label {
                        TransitionLabel::New { .. } if lset.is_empty() => rset.clone(),
                        TransitionLabel::Send { from: r, .. } | TransitionLabel::Recv { to: r, .. } if !lset.contains(r) => {
                            let mut x = rset.clone();
                            x.insert(r.clone());
                            x
                        }
                        _ => continue,
                    };
                    out.push(GStep {
                        term: rebuild(lset.clone(), rset2, (**lhs).clone(), s.term),
                        label: s.label,
                        unfolded: s.unfolded,
                    });
                }
                out
            }
        }
    }
}

fn cartesian<'a, T>(choices: &[Vec<&'a T>]) -> Vec<Vec<&'a T>> {
    let mut acc: Vec<Vec<&T>> = vec![Vec::new()];
    for opts in choices {
        acc = acc
            .into_iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut p = prefix.clone();
                    p.push(*o);
                    p
                })
            })
            .collect();
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub label: TransitionLabel,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExplorationStatus {
    pub exhaustive: bool,
    pub hit_max_states: bool,
    pub hit_max_depth: bool,
    pub hit_rec_bound: bool,
}

impl ExplorationStatus {
    /// A bound other than the recursion budget was hit.
    pub fn inconclusive(&self) -> bool {
        self.hit_max_states || self.hit_max_depth
    }
}

#[derive(Debug, Clone)]
pub struct ExplorationGraph {
    pub states: Vec<GlobalState>,
    pub edges: Vec<Edge>,
    /// Outgoing edge indices per state.
    pub out: Vec<Vec<usize>>,
    pub depth: Vec<usize>,
    /// Edge by which each state was first reached.
    pub parent: Vec<Option<usize>>,
    /// All successors of the state are present in the graph.
    pub complete: Vec<bool>,
    pub status: ExplorationStatus,
    pub bounds: ExplorationBounds,
}

impl ExplorationGraph {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = &Edge> {
        self.out[i].iter().map(|&e| &self.edges[e])
    }

    /// Labels along the first-discovery path from the initial state.
    pub fn trace_to(&self, mut i: usize) -> Vec<TransitionLabel> {
        let mut out = Vec::new();
        while let Some(e) = self.parent[i] {
            out.push(self.edges[e].label.clone());
            i = self.edges[e].from;
        }
        out.reverse();
        out
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph global {\n  node [shape=box, fontname=\"monospace\"];\n");
        for (i, st) in self.states.iter().enumerate() {
            let style = if self.complete[i] { "" } else { ", style=dashed" };
            let _ = writeln!(s, "  s{i} [label=\"{}\"{style}];", dot_escape(&render_global(&st.term, Style::Math)));
        }
        for e in &self.edges {
            let _ = writeln!(s, "  s{} -> s{} [label=\"{}\"];", e.from, e.to, dot_escape(&e.label.to_string()));
        }
        s.push_str("}\n");
        s
    }
}

pub(crate) fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    UniqueInstances,
    Coherence,
    WellNested,
    Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantViolation {
    pub kind: InvariantKind,
    pub state: usize,
    pub mc: McName,
    pub instance: u32,
    pub witness: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub states_checked: usize,
    pub edges_checked: usize,
    pub violations: Vec<InvariantViolation>,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: InvariantKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

struct ActiveInfo {
    name: McName,
    instance: u32,
    lset: RoleSet,
    rset: RoleSet,
}

fn actives(g: &GlobalType) -> Vec<ActiveInfo> {
    let mut out = Vec::new();
    g.visit(&mut |t| {
        if let GlobalType::McActive { name, instance, lset, rset, .. } = t {
            out.push(ActiveInfo { name: name.clone(), instance: *instance, lset: lset.clone(), rset: rset.clone() });
        }
    });
    out
}

/// Instances below `g`, failing on two coexisting instances with one id.
fn instances(g: &GlobalType) -> Result<BTreeSet<(McName, u32)>, (McName, u32)> {
    match g {
        GlobalType::Interaction { branches, .. } | GlobalType::InTransit { branches, .. } => {
            let mut acc = BTreeSet::new();
            for c in branches.conts() {
                acc.extend(instances(c)?);
            }
            Ok(acc)
        }
        GlobalType::Rec { body, .. } => instances(body),
        GlobalType::Var(_) | GlobalType::End => Ok(BTreeSet::new()),
        GlobalType::McDef { lhs, rhs, .. } => disjoint_union(instances(lhs)?, instances(rhs)?),
        GlobalType::McActive { name, instance, lhs, rhs, .. } => {
            let inner = disjoint_union(instances(lhs)?, instances(rhs)?)?;
            disjoint_union(inner, [(name.clone(), *instance)].into())
        }
    }
}

fn disjoint_union(
    mut a: BTreeSet<(McName, u32)>,
    b: BTreeSet<(McName, u32)>,
) -> Result<BTreeSet<(McName, u32)>, (McName, u32)> {
    for x in b {
        if a.contains(&x) {
            return Err(x);
        }
        a.insert(x);
    }
    Ok(a)
}

fn head(g: &GlobalType) -> &GlobalType {
    let mut cur = g;
    while let GlobalType::Rec { body, .. } = cur {
        cur = body;
    }
    cur
}

/// Structural invariants of a single reachable term.
pub fn check_term(commits: &CommitReport, g: &GlobalType, state: usize) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    if let Err((mc, instance)) = instances(g) {
        out.push(InvariantViolation {
            kind: InvariantKind::UniqueInstances,
            state,
            witness: format!("two coexisting instances {mc}#{instance}"),
            mc,
            instance,
        });
    }
    g.visit(&mut |t| {
        let GlobalType::McActive { name, instance, lset, rset, lhs, rhs } = t else { return };
        let v = |kind, witness: String| InvariantViolation { kind, state, mc: name.clone(), instance: *instance, witness };
        if !lset.is_empty() && !rset.is_empty() {
            out.push(v(InvariantKind::Coherence, format!("L={} R={}", fmt_set(lset), fmt_set(rset))));
        }
        let info = commits.get(name);
        if lset.is_empty() {
            let ok = match head(lhs) {
                GlobalType::Interaction { to, .. } | GlobalType::InTransit { to, .. } => {
                    info.is_none_or(|m| !m.directed || *to == m.observer)
                }
                _ => false,
            };
            if !ok {
                out.push(v(InvariantKind::WellNested, format!("L=∅ with left side {}", render_global(lhs, Style::Math))));
            }
        }
        if rset.is_empty() && !matches!(head(rhs), GlobalType::Interaction { .. }) {
            out.push(v(InvariantKind::WellNested, format!("R=∅ with right side {}", render_global(rhs, Style::Math))));
        }
    });
    out
}

pub fn check_state_invariants(lts: &GlobalLts, graph: &ExplorationGraph) -> InvariantReport {
    let mut report = InvariantReport { states_checked: graph.len(), edges_checked: graph.edges.len(), violations: Vec::new() };
    let per_state: Vec<Vec<InvariantViolation>> =
        graph.states.par_iter().enumerate().map(|(i, s)| check_term(&lts.commits, &s.term, i)).collect();
    report.violations.extend(per_state.into_iter().flatten());
    for e in &graph.edges {
        let before = actives(&graph.states[e.from].term);
        for a in actives(&graph.states[e.to].term) {
            let prev: Vec<&ActiveInfo> = before.iter().filter(|b| b.name == a.name && b.instance == a.instance).collect();
            if prev.is_empty() {
                continue;
            }
            if !prev.iter().any(|b| b.lset.is_subset(&a.lset) && b.rset.is_subset(&a.rset)) {
                report.violations.push(InvariantViolation {
                    kind: InvariantKind::Monotonicity,
                    state: e.to,
                    mc: a.name.clone(),
                    instance: a.instance,
                    witness: format!("sets shrank across {}", e.label),
                });
            }
        }
    }
    report
}

fn fmt_set(s: &RoleSet) -> String {
    let v: Vec<&str> = s.iter().map(Role::as_str).collect();
    format!("{{{}}}", v.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use GlobalType as G;

    fn lts(g: GlobalType) -> GlobalLts {
        GlobalLts::new(g, None).unwrap()
    }

    fn timeout() -> GlobalType {
        G::mc(
            "c1",
            G::msg("A", "B", "a1", G::msg("A", "C", "a2", G::msg("B", "C", "a3", G::msg("B", "A", "a4", G::msg("C", "A", "a5", G::End))))),
            G::msg("B", "A", "TOa", G::msg("B", "C", "TOc", G::End)),
        )
    }

    #[test]
    fn end_and_single_interaction() {
        let g = lts(G::End).explore(ExplorationBounds::default());
        assert_eq!((g.len(), g.edges.len()), (1, 0));
        assert!(g.status.exhaustive);

        let one = lts(G::msg("p", "q", "a", G::End));
        let s = one.enabled(&one.initial());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, TransitionLabel::send("p", "q", "a"));
        assert!(matches!(s[0].1.term, G::InTransit { .. }));
        assert_eq!(one.explore(ExplorationBounds::default()).len(), 3);
    }

    #[test]
    fn instantiation_and_both_sides() {
        let g = G::mc("c", G::msg("q", "p", "a1", G::End), G::msg("p", "q", "a2", G::End));
        let l = lts(g);
        let s = l.enabled(&l.initial());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, TransitionLabel::New { mc: "c".into(), instance: Some(1) });
        // q sends a1 to reach the state where p may go either way.
        let after_send = l
            .enabled(&s[0].1)
            .into_iter()
            .find(|(lab, _)| *lab == TransitionLabel::send("q", "p", "a1"))
            .unwrap()
            .1;
        let labels: Vec<TransitionLabel> = l.enabled(&after_send).into_iter().map(|(lab, _)| lab).collect();
        assert!(labels.contains(&TransitionLabel::recv("q", "p", "a1")));
        assert!(labels.contains(&TransitionLabel::send("p", "q", "a2")));
        let recv = l.enabled(&after_send).into_iter().find(|(lab, _)| lab.to_string() == "qp?a1").unwrap().1;
        let G::McActive { lset, rset, .. } = &recv.term else { panic!() };
        assert_eq!(lset, &RoleSet::from([Role::new("p")]));
        assert!(rset.is_empty());
    }

    #[test]
    fn timeout_is_exhaustive_and_contains_both_charts() {
        let l = lts(timeout());
        let g = l.explore(ExplorationBounds::default());
        assert!(g.status.exhaustive);
        let upper = ["ν c1#1", "AB!a1", "AB?a1", "AC!a2", "BC!a3", "BA!a4", "AC?a2", "BC?a3", "BA?a4", "CA!a5", "CA?a5"];
        let lower = ["ν c1#1", "AB!a1", "BA!TOa", "AC!a2", "BC!TOc", "BA?TOa", "AC?a2", "BC?TOc"];
        for run in [&upper[..], &lower[..]] {
            let mut cur = 0;
            for lab in run {
                cur = g.successors(cur).find(|e| e.label.to_string() == *lab).unwrap_or_else(|| panic!("{lab} missing")).to;
            }
            assert!(g.states[cur].term.roles().is_empty(), "{}", render_global(&g.states[cur].term, Style::Math));
        }
        let inv = check_state_invariants(&l, &g);
        assert!(inv.holds(), "{:?}", inv.violations);
    }

    #[test]
    fn recursion_is_bounded() {
        let g = G::rec("t", G::msg("p", "q", "a", G::var("t")));
        let l = lts(g);
        let b = ExplorationBounds { max_unfoldings_per_rec: 3, ..Default::default() };
        let graph = l.explore(b);
        assert!(graph.status.hit_rec_bound);
        assert!(!graph.status.exhaustive);
        assert!(!graph.status.inconclusive());
        assert!(l.enabled(&l.initial()).len() == 1);
        assert!(lts(G::rec("t", G::var("t"))).enabled(&GlobalState::new(G::rec("t", G::var("t")))).is_empty());
    }

    #[test]
    fn parallel_and_serial_agree() {
        let l = lts(timeout());
        let a = l.explore(ExplorationBounds::default());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| l.explore(ExplorationBounds::default()));
        assert_eq!(a.states, b.states);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn coherence_counterexample() {
        let bad = G::McActive {
            name: "c1".into(),
            instance: 1,
            lset: [Role::new("p")].into(),
            rset: [Role::new("q")].into(),
            lhs: Box::new(G::End),
            rhs: Box::new(G::End),
        };
        let v = check_term(&CommitReport::default(), &bad, 0);
        assert!(v.iter().any(|x| x.kind == InvariantKind::Coherence));
    }

    #[test]
    fn message_in_transit_with_empty_lset_is_well_nested() {
        let g = G::mc("c", G::msg("q", "p", "a1", G::End), G::msg("p", "q", "a2", G::End));
        let l = lts(g);
        let active = l.enabled(&l.initial()).remove(0).1;
        let in_transit = l.enabled(&active).into_iter().find(|(lab, _)| lab.to_string() == "qp!a1").unwrap().1;
        assert!(check_term(l.commits(), &in_transit.term, 0).is_empty());
    }

    #[test]
    fn corpus_invariants_hold() {
        for name in crate::corpus::VALID {
            let p = crate::corpus::load(name).unwrap();
            let l = GlobalLts::from_protocol(&p).unwrap();
            let g = l.explore(ExplorationBounds::default());
            assert!(!g.status.inconclusive(), "{name}");
            let inv = check_state_invariants(&l, &g);
            assert!(inv.holds(), "{name}: {:?}", &inv.violations[..inv.violations.len().min(3)]);
            eprintln!("{name}: {} states, {} edges", g.len(), g.edges.len());
        }
    }

    #[test]
    fn dot_export_lists_states_and_edges() {
        let l = lts(G::msg("p", "q", "a", G::End));
        let dot = l.explore(ExplorationBounds::default()).to_dot();
        assert!(dot.starts_with("digraph global {"));
        assert!(dot.contains("s0 -> s1 [label=\"pq!a\"]"));
        assert!(dot.contains("s1 -> s2 [label=\"pq?a\"]"));
    }
}
