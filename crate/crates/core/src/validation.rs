//! Static checks on source protocols: awareness, balance and failed-role
//! annotations, and the pipeline that aggregates them with well-formedness
//! and projectability.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::commit::{analyze_commitments, outermost_defs, promotes, well_formed, CommitReport, WellFormedness};
use crate::frontend::{render_global, Protocol, Style};
use crate::global_lts::{ExplorationBounds, GlobalLts};
use crate::model::{subject, GlobalType, Label, McName, RecVar, Role, RoleSet};
use crate::projection::derive_protocol;
use crate::verify::Status;

pub const REPORT_SCHEMA: &str = "mixst-validation/1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Syntactic,
    #[serde(rename = "bounded-semantic")]
    Semantic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Syntactic => "syntactic",
            Mode::Semantic => "bounded-semantic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AwarenessClause {
    SingleDecision,
    ClearTermination,
}

impl fmt::Display for AwarenessClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AwarenessClause::SingleDecision => "single-decision",
            AwarenessClause::ClearTermination => "clear-termination",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AwarenessVerdict {
    pub mc: McName,
    pub observer: Role,
    pub status: Status,
    pub clause: Option<AwarenessClause>,
    pub role: Option<Role>,
    pub witness: Option<String>,
}

impl AwarenessVerdict {
    fn pass(mc: &McName, observer: &Role) -> Self {
        Self { mc: mc.clone(), observer: observer.clone(), status: Status::Pass, clause: None, role: None, witness: None }
    }

    fn fail(mc: &McName, observer: &Role, clause: AwarenessClause, role: &Role, witness: String) -> Self {
        Self {
            mc: mc.clone(),
            observer: observer.clone(),
            status: Status::Fail,
            clause: Some(clause),
            role: Some(role.clone()),
            witness: Some(witness),
        }
    }
}

// ---------------------------------------------------------------------------
// Syntactic awareness

struct Failure {
    clause: AwarenessClause,
    role: Role,
    witness: String,
}

struct SyntacticWalk<'a> {
    name: &'a McName,
    observer: &'a Role,
    gc: Option<&'a BTreeSet<Label>>,
    roles: &'a RoleSet,
}

impl SyntacticWalk<'_> {
    /// Every role other than the observer first acts by receiving along a
    /// chain of promotions from the observer.
    fn single_decision(&self, g: &GlobalType, committed: &RoleSet, seen: &RoleSet, path: &mut Vec<String>) -> Option<Failure> {
        match g {
            GlobalType::Interaction { from, to, branches } => {
                for (l, cont) in branches.iter() {
                    path.push(format!("{from}→{to}:{l}"));
                    if !seen.contains(from) && from != self.observer {
                        return Some(Failure {
                            clause: AwarenessClause::SingleDecision,
                            role: from.clone(),
                            witness: format!("{}: {from} sends before depending on {}", path.join("/"), self.observer),
                        });
                    }
                    let promoted = promotes(committed, from, to, l, self.observer, self.gc);
                    if !seen.contains(to) && to != self.observer && !promoted {
                        return Some(Failure {
                            clause: AwarenessClause::SingleDecision,
                            role: to.clone(),
                            witness: format!("{}: {to} first hears from {from}, which does not depend on {}", path.join("/"), self.observer),
                        });
                    }
                    let mut committed = committed.clone();
                    if promoted {
                        committed.insert(to.clone());
                    }
                    let mut seen = seen.clone();
                    seen.insert(from.clone());
                    seen.insert(to.clone());
                    let f = self.single_decision(cont, &committed, &seen, path);
                    path.pop();
                    if f.is_some() {
                        return f;
                    }
                }
                None
            }
            GlobalType::Rec { body, .. } => self.single_decision(body, committed, seen, path),
            GlobalType::McDef { name, lhs, rhs } if name != self.name => self
                .single_decision(lhs, committed, seen, path)
                .or_else(|| self.single_decision(rhs, committed, seen, path)),
            _ => None,
        }
    }

    /// On every path, each role receives a committing label before `end`,
    /// or acts inside every cycle it goes around.
    fn clear_termination(
        &self,
        g: &GlobalType,
        committed: &RoleSet,
        actions: &mut Vec<(Role, Role)>,
        binders: &mut Vec<(RecVar, usize)>,
        path: &mut Vec<String>,
    ) -> Option<Failure> {
        let fail = |r: &Role, why: &str, path: &Vec<String>| Failure {
            clause: AwarenessClause::ClearTermination,
            role: r.clone(),
            witness: format!("{}: {r} {why}", path.join("/")),
        };
        match g {
            GlobalType::Interaction { from, to, branches } => {
                for (l, cont) in branches.iter() {
                    path.push(format!("{from}→{to}:{l}"));
                    actions.push((from.clone(), to.clone()));
                    let mut next = committed.clone();
                    if promotes(committed, from, to, l, self.observer, self.gc) {
                        next.insert(to.clone());
                    }
                    let f = self.clear_termination(cont, &next, actions, binders, path);
                    actions.pop();
                    path.pop();
                    if f.is_some() {
                        return f;
                    }
                }
                None
            }
            GlobalType::End => {
                let r = self.roles.iter().find(|r| !committed.contains(*r))?;
                Some(fail(r, "reaches end without committing", path))
            }
            GlobalType::Var(x) => {
                let start = binders.iter().rev().find(|(v, _)| v == x).map_or(0, |(_, i)| *i);
                self.cycle(committed, &actions[start..], path, &format!("continue {x}"))
            }
            GlobalType::McDef { name, .. } if name == self.name => self.cycle(committed, actions, path, &format!("re-enters {name}")),
            GlobalType::McDef { name, lhs, rhs } => {
                path.push(format!("{name}.lhs"));
                let f = self.clear_termination(lhs, committed, actions, binders, path);
                path.pop();
                if f.is_some() {
                    return f;
                }
                path.push(format!("{name}.rhs"));
                let f = self.clear_termination(rhs, committed, actions, binders, path);
                path.pop();
                f
            }
            GlobalType::Rec { var, body } => {
                binders.push((var.clone(), actions.len()));
                path.push(format!("μ{var}"));
                let f = self.clear_termination(body, committed, actions, binders, path);
                path.pop();
                binders.pop();
                f
            }
            GlobalType::InTransit { .. } | GlobalType::McActive { .. } => None,
        }
    }

    fn cycle(&self, committed: &RoleSet, segment: &[(Role, Role)], path: &[String], at: &str) -> Option<Failure> {
        let r = self.roles.iter().find(|r| !committed.contains(*r) && !segment.iter().any(|(a, b)| a == *r || b == *r))?;
        Some(Failure {
            clause: AwarenessClause::ClearTermination,
            role: r.clone(),
            witness: format!("{}/{at}: {r} neither commits nor acts in the loop", path.join("/")),
        })
    }
}

// ---------------------------------------------------------------------------
// Bounded semantic awareness

fn trace_labels(lts_graph: &crate::global_lts::ExplorationGraph, i: usize) -> String {
    let t: Vec<String> = lts_graph.trace_to(i).iter().map(ToString::to_string).collect();
    if t.is_empty() {
        "initially".to_string()
    } else {
        t.join(" ")
    }
}

fn semantic(
    name: &McName,
    def: &GlobalType,
    report: &CommitReport,
    observer: &Role,
    roles: &RoleSet,
    bounds: ExplorationBounds,
) -> AwarenessVerdict {
    let GlobalType::McDef { rhs, .. } = def else { unreachable!("outermost definitions") };
    let mut exhaustive = true;

    // dep(observer, r, rhs): no r-action before an observer action.
    let right = GlobalLts::with_report((**rhs).clone(), report.clone());
    let graph = right.explore(bounds);
    exhaustive &= !graph.status.inconclusive() && graph.status.exhaustive;
    let mut seen = vec![false; graph.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for e in graph.successors(i) {
            let sbj = subject(&e.label);
            if sbj.contains(observer) {
                continue;
            }
            if let Some(r) = sbj.iter().next() {
                let witness = format!("right block, after {}: {r} acts with {}", trace_labels(&graph, i), e.label);
                return AwarenessVerdict::fail(name, observer, AwarenessClause::SingleDecision, r, witness);
            }
            if !seen[e.to] {
                seen[e.to] = true;
                queue.push_back(e.to);
            }
        }
    }

    // From every left state, each uncommitted role can still commit or act.
    let whole = GlobalLts::with_report(def.clone(), report.clone());
    let graph = whole.explore(bounds);
    exhaustive &= !graph.status.inconclusive() && graph.status.exhaustive;
    let root = |i: usize| match &graph.states[i].term {
        GlobalType::McActive { lset, rset, .. } if rset.is_empty() => Some(lset.clone()),
        _ => None,
    };
    let left: Vec<Option<RoleSet>> = (0..graph.len()).map(root).collect();
    let mut rev = vec![Vec::new(); graph.len()];
    for e in &graph.edges {
        if left[e.from].is_some() && left[e.to].is_some() {
            rev[e.to].push(e.from);
        }
    }
    for r in roles.iter().filter(|r| *r != observer) {
        let mut live = vec![false; graph.len()];
        let mut queue = VecDeque::new();
        for i in 0..graph.len() {
            let Some(lset) = &left[i] else { continue };
            let good = !graph.complete[i]
                || lset.contains(r)
                || graph.successors(i).any(|e| left[e.to].is_some() && subject(&e.label).iter().eq([r]));
            if good {
                live[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &p in &rev[i] {
                if !live[p] {
                    live[p] = true;
                    queue.push_back(p);
                }
            }
        }
        if let Some(i) = (0..graph.len()).find(|&i| left[i].as_ref().is_some_and(|l| !l.contains(r)) && !live[i]) {
            let witness = format!("left block, after {}: {r} can neither commit nor act", trace_labels(&graph, i));
            return AwarenessVerdict::fail(name, observer, AwarenessClause::ClearTermination, r, witness);
        }
    }

    let mut v = AwarenessVerdict::pass(name, observer);
    if !exhaustive {
        v.status = Status::Inconclusive;
        v.witness = Some("exploration bounds reached before closure".to_string());
    }
    v
}

/// One verdict per MC name, for its outermost definition in the once-unfolded type.
pub fn check_awareness(g0: &GlobalType, report: &CommitReport, mode: Mode, bounds: Option<ExplorationBounds>) -> Vec<AwarenessVerdict> {
    let unfolded = g0.unfold_all_once();
    let defs = outermost_defs(&unfolded);
    let mut out = Vec::new();
    for (name, (def, _)) in defs {
        let Some(info) = report.get(&name) else { continue };
        let GlobalType::McDef { lhs, rhs, .. } = def else { continue };
        let roles: RoleSet = lhs.roles().union(&rhs.roles()).cloned().collect();
        let v = match mode {
            Mode::Syntactic => {
                let walk = SyntacticWalk { name: &name, observer: &info.observer, gc: info.gc.as_ref(), roles: &roles };
                let failure = walk
                    .single_decision(rhs, &[info.observer.clone()].into(), &RoleSet::new(), &mut vec!["rhs".to_string()])
                    .or_else(|| walk.clear_termination(lhs, &RoleSet::new(), &mut Vec::new(), &mut Vec::new(), &mut vec!["lhs".to_string()]));
                match failure {
                    Some(f) => AwarenessVerdict::fail(&name, &info.observer, f.clause, &f.role, f.witness),
                    None => AwarenessVerdict::pass(&name, &info.observer),
                }
            }
            Mode::Semantic => semantic(&name, def, report, &info.observer, &roles, bounds.unwrap_or_default()),
        };
        out.push(v);
    }
    out
}

// ---------------------------------------------------------------------------
// Balance

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceClause {
    /// Branches of a choice disagree on their third-party roles.
    Branches,
    /// The two blocks of an MC definition have different roles.
    Definition,
    /// An active MC's sides, with their committed roles, disagree.
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("unbalanced at {subterm}: {} versus {}", fmt_roles(.left), fmt_roles(.right))]
pub struct BalanceError {
    pub clause: BalanceClause,
    pub subterm: String,
    pub left: RoleSet,
    pub right: RoleSet,
}

fn fmt_roles(s: &RoleSet) -> String {
    let v: Vec<&str> = s.iter().map(Role::as_str).collect();
    format!("{{{}}}", v.join(","))
}

/// Every subterm of the truncated, once-unfolded type is balanced.
pub fn check_balance(g: &GlobalType) -> Result<(), BalanceError> {
    let t = g.unfold_all_once().truncate();
    let mut err = None;
    t.visit(&mut |s| {
        if err.is_some() {
            return;
        }
        let site = || render_global(s, Style::Math);
        match s {
            GlobalType::Interaction { from, to, branches } => {
                let mut sets = branches.conts().map(|c| {
                    let mut r = c.roles();
                    r.remove(from);
                    r.remove(to);
                    r
                });
                let first = sets.next().unwrap_or_default();
                if let Some(other) = sets.find(|r| *r != first) {
                    err = Some(BalanceError { clause: BalanceClause::Branches, subterm: site(), left: first, right: other });
                }
            }
            GlobalType::McDef { lhs, rhs, .. } => {
                let (l, r) = (lhs.roles(), rhs.roles());
                if l != r {
                    err = Some(BalanceError { clause: BalanceClause::Definition, subterm: site(), left: l, right: r });
                }
            }
            GlobalType::McActive { lset, rset, lhs, rhs, .. } => {
                let l: RoleSet = lhs.roles().union(lset).cloned().collect();
                let r: RoleSet = rhs.roles().union(rset).cloned().collect();
                if l != r {
                    err = Some(BalanceError { clause: BalanceClause::Active, subterm: site(), left: l, right: r });
                }
            }
            _ => {}
        }
    });
    err.map_or(Ok(()), Err)
}

// ---------------------------------------------------------------------------
// Failed-role annotations

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotationViolation {
    pub role: Role,
    /// The annotated interaction.
    pub at: String,
    /// The later interaction that uses the role.
    pub later: String,
}

fn first_use<'a>(g: &'a GlobalType, r: &Role, recs: &BTreeMap<RecVar, &'a GlobalType>, visited: &mut BTreeSet<RecVar>) -> Option<String> {
    match g {
        GlobalType::Interaction { from, to, branches } | GlobalType::InTransit { from, to, branches, .. } => {
            for (l, c) in branches.iter() {
                if from == r || to == r {
                    return Some(format!("{from}→{to}:{l}"));
                }
                if let Some(s) = first_use(c, r, recs, visited) {
                    return Some(s);
                }
            }
            None
        }
        GlobalType::Rec { body, .. } => first_use(body, r, recs, visited),
        GlobalType::Var(v) => {
            let body = recs.get(v)?;
            if !visited.insert(v.clone()) {
                return None;
            }
            first_use(body, r, recs, visited)
        }
        GlobalType::End => None,
        GlobalType::McDef { lhs, rhs, .. } | GlobalType::McActive { lhs, rhs, .. } => {
            first_use(lhs, r, recs, visited).or_else(|| first_use(rhs, r, recs, visited))
        }
    }
}

fn scan_annotations<'a>(
    g: &'a GlobalType,
    p: &Protocol,
    recs: &mut BTreeMap<RecVar, &'a GlobalType>,
    out: &mut Vec<AnnotationViolation>,
) {
    match g {
        GlobalType::Interaction { from, to, branches } => {
            for (l, c) in branches.iter() {
                for a in p.annotations.iter().filter(|a| a.from == *from && a.to == *to && a.label == *l) {
                    if let Some(later) = first_use(c, &a.role, recs, &mut BTreeSet::new()) {
                        let v = AnnotationViolation { role: a.role.clone(), at: format!("{from}→{to}:{l} ({})", a.pos), later };
                        if !out.contains(&v) {
                            out.push(v);
                        }
                    }
                }
                scan_annotations(c, p, recs, out);
            }
        }
        GlobalType::Rec { var, body } => {
            let prev = recs.insert(var.clone(), body);
            scan_annotations(body, p, recs, out);
            match prev {
                Some(b) => recs.insert(var.clone(), b),
                None => recs.remove(var),
            };
        }
        GlobalType::McDef { lhs, rhs, .. } => {
            scan_annotations(lhs, p, recs, out);
            scan_annotations(rhs, p, recs, out);
        }
        _ => {}
    }
}

/// A role declared failed at an interaction is not used after it.
pub fn check_annotations(p: &Protocol) -> Vec<AnnotationViolation> {
    let mut out = Vec::new();
    scan_annotations(&p.body, p, &mut BTreeMap::new(), &mut out);
    out
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidationConfig {
    pub mode: Mode,
    pub bounds: Option<ExplorationBounds>,
    /// Accept with a warning when a semantic check is inconclusive.
    pub permissive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Accept,
    Reject,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceVerdict {
    pub ok: bool,
    pub error: Option<BalanceError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotationVerdict {
    pub ok: bool,
    pub violations: Vec<AnnotationViolation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionVerdict {
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub schema: &'static str,
    pub protocol: String,
    pub mode: Mode,
    pub well_formed: WellFormedness,
    pub awareness: Vec<AwarenessVerdict>,
    pub balance: BalanceVerdict,
    pub annotations: AnnotationVerdict,
    pub projection: ProjectionVerdict,
    pub overall: Overall,
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.overall == Overall::Accept
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut s = format!("protocol {} ({} mode)\n", self.protocol, self.mode);
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        s += &format!("well-formedness: {}\n", mark(self.well_formed.ok));
        for c in &self.well_formed.conflicts {
            s += &format!("  {} in {}: {:?} ({} / {})\n", c.label, c.mc, c.kind, c.first, c.second);
        }
        for a in &self.awareness {
            s += &format!("awareness {}: {}", a.mc, a.status);
            if let (Some(c), Some(r)) = (a.clause, &a.role) {
                s += &format!(" ({c}, role {r})");
            }
            s.push('\n');
            if let Some(w) = &a.witness {
                s += &format!("  {w}\n");
            }
        }
        s += &format!("balance: {}\n", mark(self.balance.ok));
        if let Some(e) = &self.balance.error {
            s += &format!("  {e}\n");
        }
        s += &format!("annotations: {}\n", mark(self.annotations.ok));
        for v in &self.annotations.violations {
            s += &format!("  {} failed at {} but used at {}\n", v.role, v.at, v.later);
        }
        s += &format!("projection: {}\n", mark(self.projection.ok));
        if let Some(e) = &self.projection.error {
            s += &format!("  {e}\n");
        }
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        let overall = match self.overall {
            Overall::Accept => "accept",
            Overall::Reject => "reject",
            Overall::Inconclusive => "inconclusive",
        };
        s += &format!("overall: {overall}\n");
        s
    }
}

pub fn validate(p: &Protocol, config: &ValidationConfig) -> ValidationReport {
    let mut reasons = Vec::new();
    let mut warnings = Vec::new();
    let gc = p.gc_labels();
    let (well, awareness) = match analyze_commitments(&p.body, gc.as_ref()) {
        Ok(report) => (well_formed(&report), check_awareness(&p.body, &report, config.mode, config.bounds)),
        Err(e) => {
            reasons.push(format!("commitment analysis: {e}"));
            (WellFormedness { ok: false, conflicts: Vec::new() }, Vec::new())
        }
    };
    if !well.ok {
        for c in &well.conflicts {
            reasons.push(format!("well-formedness: label {} of {} is ambiguous", c.label, c.mc));
        }
    }
    let balance = match check_balance(&p.body) {
        Ok(()) => BalanceVerdict { ok: true, error: None },
        Err(e) => {
            reasons.push(format!("balance: {e}"));
            BalanceVerdict { ok: false, error: Some(e) }
        }
    };
    let violations = check_annotations(p);
    for v in &violations {
        reasons.push(format!("annotations: {} is used at {} after failing", v.role, v.later));
    }
    let annotations = AnnotationVerdict { ok: violations.is_empty(), violations };
    let projection = match derive_protocol(p) {
        Ok(_) => ProjectionVerdict { ok: true, error: None },
        Err(e) => {
            reasons.push(format!("projection: {e}"));
            ProjectionVerdict { ok: false, error: Some(e.to_string()) }
        }
    };
    let mut inconclusive = false;
    for a in &awareness {
        match a.status {
            Status::Fail => reasons.push(format!(
                "awareness: {} fails {} for {}",
                a.mc,
                a.clause.map(|c| c.to_string()).unwrap_or_default(),
                a.role.as_ref().map(Role::as_str).unwrap_or("?")
            )),
            Status::Inconclusive if config.permissive => {
                warnings.push(format!("awareness of {} is inconclusive within bounds", a.mc));
            }
            Status::Inconclusive => {
                inconclusive = true;
                reasons.push(format!("awareness of {} is inconclusive within bounds", a.mc));
            }
            Status::Pass => {}
        }
    }
    let rejected = !well.ok || !balance.ok || !annotations.ok || !projection.ok || awareness.iter().any(|a| a.status == Status::Fail);
    let overall = if rejected {
        Overall::Reject
    } else if inconclusive {
        Overall::Inconclusive
    } else {
        Overall::Accept
    };
    ValidationReport {
        schema: REPORT_SCHEMA,
        protocol: p.name.clone(),
        mode: config.mode,
        well_formed: well,
        awareness,
        balance,
        annotations,
        projection,
        overall,
        reasons,
        warnings,
    }
}
