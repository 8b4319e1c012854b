//! Bounded checks of correspondence, progress, orphan-message freedom and
//! the structural invariants on concrete protocols.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::frontend::{render_global, render_local, Style};
use crate::global_lts::{check_state_invariants, ExplorationBounds, ExplorationGraph, ExplorationStatus, GlobalLts};
use crate::local_lts::{preorder_leq, purge, purge_system, stale, system_final, LocalLts, LocalState};
use crate::model::{subject, GlobalType, Label, Message, Path, Role, System, TransitionLabel};
use crate::projection::{derive_system, ProjectionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Correspondence,
    GlobalProgress,
    LocalProgress,
    Omf,
    Invariants,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Check::Correspondence => "correspondence",
            Check::GlobalProgress => "global-progress",
            Check::LocalProgress => "local-progress",
            Check::Omf => "omf",
            Check::Invariants => "invariants",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CexStep {
    /// Rendering of the state the label fires from.
    pub state: String,
    pub label: TransitionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub steps: Vec<CexStep>,
    pub reason: String,
}

impl Counterexample {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (i, st) in self.steps.iter().enumerate() {
            let who: Vec<String> = subject(&st.label).iter().map(Role::to_string).collect();
            let by = if who.is_empty() { String::new() } else { format!(" by {}", who.join(",")) };
            let _ = writeln!(s, "#{i} {}{by} | {}", st.label, st.state);
        }
        let _ = writeln!(s, "{}", self.reason);
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub states: usize,
    pub edges: usize,
    pub millis: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub check: Check,
    pub status: Status,
    /// No bound cut the exploration.
    pub exhaustive: bool,
    pub counterexample: Option<Counterexample>,
    pub stats: Stats,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    fn fail(check: Check, cex: Counterexample, stats: Stats) -> Self {
        Self { check, status: Status::Fail, exhaustive: false, counterexample: Some(cex), stats, notes: Vec::new() }
    }

    fn from_status(check: Check, status: &ExplorationStatus, truncated: bool, stats: Stats) -> Self {
        let status_kind = if status.inconclusive() { Status::Inconclusive } else { Status::Pass };
        let mut notes = Vec::new();
        if status.hit_max_states {
            notes.push("state bound reached".to_string());
        }
        if status.hit_max_depth {
            notes.push("depth bound reached".to_string());
        }
        if status.hit_rec_bound || truncated {
            notes.push("bounded: recursion or queue bound cut the exploration".to_string());
        }
        Self {
            check,
            status: status_kind,
            exhaustive: status.exhaustive && !truncated,
            counterexample: None,
            stats,
            notes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifyOptions {
    pub bounds: ExplorationBounds,
    /// Per-sender FIFO length at which sends are cut.
    pub queue_bound: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { bounds: ExplorationBounds::default(), queue_bound: Some(4) }
    }
}

impl VerifyOptions {
    fn local<'a>(&self, lts: &'a GlobalLts) -> LocalLts<'a> {
        LocalLts { commits: lts.commits(), max_unfold: Some(self.bounds.max_unfoldings_per_rec), queue_bound: self.queue_bound }
    }
}

fn elapsed(t: Instant) -> u64 {
    t.elapsed().as_millis().try_into().unwrap_or(u64::MAX)
}

pub fn render_system(y: &System) -> String {
    y.configs()
        .map(|c| {
            if c.inbox.is_empty() {
                format!("{}: {}", c.role, render_local(&c.behavior, Style::Math))
            } else {
                format!("{}: {} {}", c.role, render_local(&c.behavior, Style::Math), c.inbox)
            }
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

fn mc_depth(g: &GlobalType) -> usize {
    match g {
        GlobalType::Interaction { branches, .. } | GlobalType::InTransit { branches, .. } => {
            branches.conts().map(mc_depth).max().unwrap_or(0)
        }
        GlobalType::Rec { body, .. } => mc_depth(body),
        GlobalType::Var(_) | GlobalType::End => 0,
        GlobalType::McDef { lhs, rhs, .. } | GlobalType::McActive { lhs, rhs, .. } => 1 + mc_depth(lhs).max(mc_depth(rhs)),
    }
}

// ---------------------------------------------------------------------------
// Correspondence

struct Pair {
    global: usize,
    local: LocalState,
    parent: Option<(usize, TransitionLabel)>,
}

#[derive(Default)]
struct Closure {
    states: Vec<LocalState>,
    cut: bool,
    capped: bool,
}

enum Outcome {
    Matched(Vec<(usize, LocalState)>),
    Unmatched { truncated: bool, capped: bool },
}

struct PairResult {
    found: Vec<(usize, LocalState, TransitionLabel)>,
    failure: Option<(TransitionLabel, String)>,
    truncated: bool,
    capped: bool,
    /// Obligations left open because a bound cut the search.
    skipped: usize,
}

struct Product<'a> {
    graph: &'a ExplorationGraph,
    derived: Vec<Result<System, ProjectionError>>,
    local: LocalLts<'a>,
    cap: usize,
    /// Pairs must stay in the deferral preorder below the derived system.
    /// When the initial system is not, answers only need matching labels.
    strict: bool,
}

impl Product<'_> {
    fn related(&self, y: &LocalState, g: usize) -> bool {
        match &self.derived[g] {
            Ok(d) => preorder_leq(&purge_system(&y.system), d),
            Err(_) => false,
        }
    }

    fn tau_closure(&self, start: &LocalState) -> Closure {
        let mut out = Closure::default();
        let mut seen: HashSet<System> = HashSet::new();
        seen.insert(start.system.clone());
        let mut queue = VecDeque::from([(start.clone(), 0usize)]);
        while let Some((s, d)) = queue.pop_front() {
            let (succ, cut) = self.local.successors(&s);
            out.cut |= cut;
            for (st, next) in succ {
                if !st.label.is_tau() {
                    continue;
                }
                if d >= self.cap {
                    out.capped = true;
                    continue;
                }
                if seen.insert(next.system.clone()) {
                    queue.push_back((next, d + 1));
                }
            }
            out.states.push(s);
        }
        out
    }

    /// Global states reachable by τ* ℓ τ*, or τ* when `label` is silent.
    fn global_after(&self, from: usize, label: &TransitionLabel) -> (Vec<usize>, bool) {
        let mut truncated = false;
        let tau = |starts: Vec<usize>, truncated: &mut bool| {
            let mut seen: BTreeSet<usize> = starts.iter().copied().collect();
            let mut order = starts.clone();
            let mut queue: VecDeque<usize> = starts.into();
            while let Some(i) = queue.pop_front() {
                *truncated |= !self.graph.complete[i];
                for e in self.graph.successors(i) {
                    if e.label.is_tau() && seen.insert(e.to) {
                        order.push(e.to);
                        queue.push_back(e.to);
                    }
                }
            }
            order
        };
        let pre = tau(vec![from], &mut truncated);
        if label.is_tau() {
            return (pre, truncated);
        }
        let mut mid = Vec::new();
        for &i in &pre {
            for e in self.graph.successors(i) {
                if e.label == *label && !mid.contains(&e.to) {
                    mid.push(e.to);
                }
            }
        }
        let post = tau(mid, &mut truncated);
        (post, truncated)
    }

    /// A local τ* ℓ τ* (or τ*) answer to the global edge into `target`.
    /// In label mode the answers are the states right after ℓ.
    fn match_global(&self, y: &LocalState, label: &TransitionLabel, target: usize) -> Outcome {
        if !self.strict && label.is_tau() {
            return Outcome::Matched(vec![(target, y.clone())]);
        }
        let pre = self.tau_closure(y);
        let mut truncated = pre.cut;
        let mut capped = pre.capped;
        if label.is_tau() {
            if let Some(s) = pre.states.into_iter().find(|s| self.related(s, target)) {
                return Outcome::Matched(vec![(target, s)]);
            }
            return Outcome::Unmatched { truncated, capped };
        }
        let mut loose = Vec::new();
        for s in &pre.states {
            let (succ, cut) = self.local.successors(s);
            truncated |= cut;
            for (st, next) in succ {
                if st.label != *label {
                    continue;
                }
                if !self.strict {
                    if !loose.iter().any(|(_, y): &(usize, LocalState)| y.system == next.system) {
                        loose.push((target, next));
                    }
                    continue;
                }
                let post = self.tau_closure(&next);
                truncated |= post.cut;
                capped |= post.capped;
                if let Some(s2) = post.states.into_iter().find(|s2| self.related(s2, target)) {
                    return Outcome::Matched(vec![(target, s2)]);
                }
            }
        }
        if loose.is_empty() {
            Outcome::Unmatched { truncated, capped }
        } else {
            Outcome::Matched(loose)
        }
    }

    /// A global τ* ℓ τ* answer to a local step into `next`.
    fn match_local(&self, g: usize, label: &TransitionLabel, next: &LocalState) -> Outcome {
        let (globals, mut truncated) = self.global_after(g, label);
        if !self.strict {
            return if globals.is_empty() {
                Outcome::Unmatched { truncated, capped: false }
            } else {
                Outcome::Matched(globals.into_iter().map(|g2| (g2, next.clone())).collect())
            };
        }
        let post = self.tau_closure(next);
        truncated |= post.cut;
        for &g2 in &globals {
            if let Some(s) = post.states.iter().find(|s| self.related(s, g2)) {
                return Outcome::Matched(vec![(g2, s.clone())]);
            }
        }
        Outcome::Unmatched { truncated, capped: post.capped }
    }

    fn check_pair(&self, pair: &Pair) -> PairResult {
        let mut res = PairResult { found: Vec::new(), failure: None, truncated: false, capped: false, skipped: 0 };
        let g = pair.global;
        res.truncated |= !self.graph.complete[g];
        for e in self.graph.successors(g) {
            if let Err(err) = &self.derived[e.to] {
                res.failure = Some((e.label.clone(), format!("the target global state has no projection: {err}")));
                return res;
            }
            match self.match_global(&pair.local, &e.label, e.to) {
                Outcome::Matched(ms) => res.found.extend(ms.into_iter().map(|(g2, y2)| (g2, y2, e.label.clone()))),
                Outcome::Unmatched { truncated, capped } if truncated || capped => {
                    res.skipped += 1;
                    res.truncated |= truncated;
                    res.capped |= capped;
                }
                Outcome::Unmatched { .. } => {
                    res.failure = Some((
                        e.label.clone(),
                        format!("global enables {} but the local system cannot match it: {}", e.label, render_system(&pair.local.system)),
                    ));
                    return res;
                }
            }
        }
        let (succ, cut) = self.local.successors(&pair.local);
        res.truncated |= cut;
        for (st, next) in succ {
            match self.match_local(g, &st.label, &next) {
                Outcome::Matched(ms) => res.found.extend(ms.into_iter().map(|(g2, y2)| (g2, y2, st.label.clone()))),
                Outcome::Unmatched { truncated, capped } if truncated || capped => {
                    res.skipped += 1;
                    res.truncated |= truncated;
                    res.capped |= capped;
                }
                Outcome::Unmatched { .. } => {
                    res.failure = Some((
                        st.label.clone(),
                        format!(
                            "the local system performs {} by {} but the global type cannot follow: {}",
                            st.label,
                            st.actor,
                            render_system(&pair.local.system)
                        ),
                    ));
                    return res;
                }
            }
        }
        res
    }
}

/// Correspondence between the global type and its derived system.
pub fn verify_correspondence(lts: &GlobalLts, opts: &VerifyOptions) -> Verdict {
    match derive_system(lts.base(), &lts.base().roles()) {
        Ok(y) => verify_correspondence_from(lts, y, opts),
        Err(e) => Verdict::fail(
            Check::Correspondence,
            Counterexample { steps: Vec::new(), reason: format!("the initial type has no projection: {e}") },
            Stats::default(),
        ),
    }
}

/// Correspondence between the global type and an arbitrary initial system.
pub fn verify_correspondence_from(lts: &GlobalLts, initial: System, opts: &VerifyOptions) -> Verdict {
    let start = Instant::now();
    let graph = lts.explore(opts.bounds);
    let roles = lts.base().roles();
    let derived: Vec<_> = graph.states.par_iter().map(|s| derive_system(&s.term, &roles)).collect();
    let cap = roles.len() * (mc_depth(lts.base()) + 1) + opts.queue_bound.unwrap_or(0);
    let mut product = Product { graph: &graph, derived, local: opts.local(lts), cap, strict: true };

    let init = LocalState::new(initial);
    let mut pairs = vec![Pair { global: 0, local: init.clone(), parent: None }];
    let mut index: HashMap<(usize, System), usize> = HashMap::new();
    index.insert((0, init.system.clone()), 0);
    let mut edges = 0usize;
    let mut truncated = false;
    let mut capped = false;
    let mut skipped = 0usize;
    let mut hit_states = false;

    let stats = |pairs: usize, edges: usize| Stats { states: pairs, edges, millis: elapsed(start) };
    product.strict = product.related(&init, 0);

    let mut frontier = vec![0usize];
    while !frontier.is_empty() {
        let results: Vec<PairResult> = frontier.par_iter().map(|&i| product.check_pair(&pairs[i])).collect();
        let mut next = Vec::new();
        for (&i, res) in frontier.iter().zip(results) {
            truncated |= res.truncated;
            capped |= res.capped;
            skipped += res.skipped;
            if let Some((label, reason)) = res.failure {
                let mut steps = pair_trace(&pairs, &graph, i);
                steps.push(CexStep { state: render_global(&graph.states[pairs[i].global].term, Style::Math), label });
                return Verdict::fail(Check::Correspondence, Counterexample { steps, reason }, stats(pairs.len(), edges));
            }
            for (g2, y2, label) in res.found {
                edges += 1;
                let key = (g2, y2.system.clone());
                if index.contains_key(&key) {
                    continue;
                }
                if pairs.len() >= opts.bounds.max_states {
                    hit_states = true;
                    continue;
                }
                index.insert(key, pairs.len());
                next.push(pairs.len());
                pairs.push(Pair { global: g2, local: y2, parent: Some((i, label)) });
            }
        }
        frontier = next;
    }

    let mut status = graph.status;
    status.hit_max_states |= hit_states;
    let mut v = Verdict::from_status(Check::Correspondence, &status, truncated, stats(pairs.len(), edges));
    if skipped > 0 {
        v.notes.push(format!("{skipped} obligations left open at the bounds"));
    }
    if !product.strict {
        v.notes.push("initial system is not below the derived one; matched on labels only".to_string());
    }
    if capped {
        v.status = Status::Inconclusive;
        v.exhaustive = false;
        v.notes.push(format!("τ-closure cap of {cap} steps reached"));
    }
    v
}

fn global_trace(graph: &ExplorationGraph, mut i: usize) -> Vec<CexStep> {
    let mut out = Vec::new();
    while let Some(e) = graph.parent[i] {
        let e = &graph.edges[e];
        out.push(CexStep { state: render_global(&graph.states[e.from].term, Style::Math), label: e.label.clone() });
        i = e.from;
    }
    out.reverse();
    out
}

fn pair_trace(pairs: &[Pair], graph: &ExplorationGraph, mut i: usize) -> Vec<CexStep> {
    let mut out = Vec::new();
    while let Some((p, label)) = &pairs[i].parent {
        if *label != TransitionLabel::Purge {
            out.push(CexStep { state: render_global(&graph.states[pairs[*p].global].term, Style::Math), label: label.clone() });
        }
        i = *p;
    }
    out.reverse();
    out
}

// ---------------------------------------------------------------------------
// Local exploration

#[derive(Debug, Clone)]
pub struct LocalEdge {
    pub label: TransitionLabel,
    pub actor: Role,
    pub consumed: Option<(Role, Message)>,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct LocalGraph {
    pub states: Vec<LocalState>,
    pub out: Vec<Vec<LocalEdge>>,
    /// Predecessor state and label of first discovery.
    pub parent: Vec<Option<(usize, TransitionLabel)>>,
    pub complete: Vec<bool>,
    pub status: ExplorationStatus,
}

impl LocalGraph {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    fn trace(&self, mut i: usize) -> Vec<CexStep> {
        let mut out = Vec::new();
        while let Some((p, label)) = &self.parent[i] {
            out.push(CexStep { state: render_system(&self.states[*p].system), label: label.clone() });
            i = *p;
        }
        out.reverse();
        out
    }

    fn reverse(&self) -> Vec<Vec<usize>> {
        let mut rev = vec![Vec::new(); self.len()];
        for (i, es) in self.out.iter().enumerate() {
            for e in es {
                rev[e.to].push(i);
            }
        }
        rev
    }
}

/// Breadth-first closure of the local semantics from `start`, merging
/// states that differ only in their unfolding counters.
pub fn explore_local(local: &LocalLts<'_>, start: System, bounds: &ExplorationBounds) -> LocalGraph {
    let init = LocalState::new(start);
    let mut g = LocalGraph {
        states: vec![init.clone()],
        out: vec![Vec::new()],
        parent: vec![None],
        complete: vec![false],
        status: ExplorationStatus::default(),
    };
    let mut index: HashMap<System, usize> = HashMap::new();
    index.insert(init.system, 0);
    let mut frontier = vec![0usize];
    let mut depth = 0usize;
    while !frontier.is_empty() {
        if depth >= bounds.max_depth {
            g.status.hit_max_depth = true;
            break;
        }
        let expanded: Vec<_> = frontier.par_iter().map(|&i| local.successors(&g.states[i])).collect();
        let mut next = Vec::new();
        for (&i, (succ, cut)) in frontier.iter().zip(expanded) {
            let mut complete = !cut;
            g.status.hit_rec_bound |= cut;
            for (st, s) in succ {
                let j = match index.get(&s.system) {
                    Some(&j) => j,
                    None => {
                        if g.states.len() >= bounds.max_states {
                            g.status.hit_max_states = true;
                            complete = false;
                            continue;
                        }
                        let j = g.states.len();
                        index.insert(s.system.clone(), j);
                        g.states.push(s);
                        g.out.push(Vec::new());
                        g.parent.push(Some((i, st.label.clone())));
                        g.complete.push(false);
                        next.push(j);
                        j
                    }
                };
                g.out[i].push(LocalEdge { label: st.label, actor: st.actor, consumed: st.consumed, to: j });
            }
            g.complete[i] = complete;
        }
        frontier = next;
        depth += 1;
    }
    g.status.exhaustive = !(g.status.hit_max_depth || g.status.hit_max_states || g.status.hit_rec_bound);
    g
}

/// States from which some state in `good` is reachable.
fn backward(rev: &[Vec<usize>], good: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut mark = vec![false; rev.len()];
    let mut queue = VecDeque::new();
    for i in good {
        if !mark[i] {
            mark[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &p in &rev[i] {
            if !mark[p] {
                mark[p] = true;
                queue.push_back(p);
            }
        }
    }
    mark
}

fn derived_initial(lts: &GlobalLts, check: Check) -> Result<System, Verdict> {
    derive_system(lts.base(), &lts.base().roles()).map_err(|e| {
        Verdict::fail(check, Counterexample { steps: Vec::new(), reason: format!("the initial type has no projection: {e}") }, Stats::default())
    })
}

// ---------------------------------------------------------------------------
// Progress

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProgressVerdict {
    pub global: Verdict,
    pub local: Verdict,
}

impl ProgressVerdict {
    pub fn status(&self) -> Status {
        combine([self.global.status, self.local.status])
    }
}

/// Fail dominates inconclusive, which dominates pass.
pub fn combine(statuses: impl IntoIterator<Item = Status>) -> Status {
    let mut out = Status::Pass;
    for s in statuses {
        match (out, s) {
            (_, Status::Fail) => out = Status::Fail,
            (Status::Pass, Status::Inconclusive) => out = Status::Inconclusive,
            _ => {}
        }
    }
    out
}

pub fn verify_progress(lts: &GlobalLts, opts: &VerifyOptions) -> ProgressVerdict {
    ProgressVerdict { global: verify_global_progress(lts, opts), local: verify_local_progress(lts, opts) }
}

pub fn verify_global_progress(lts: &GlobalLts, opts: &VerifyOptions) -> Verdict {
    let start = Instant::now();
    let graph = lts.explore(opts.bounds);
    let stats = Stats { states: graph.len(), edges: graph.edges.len(), millis: 0 };
    let mut rev = vec![Vec::new(); graph.len()];
    for e in &graph.edges {
        rev[e.to].push(e.from);
    }
    let roles = lts.base().roles();
    for r in &roles {
        let good = (0..graph.len()).filter(|&i| {
            !graph.complete[i] || graph.successors(i).any(|e| subject(&e.label).iter().eq([r]))
        });
        let live = backward(&rev, good);
        if let Some(i) = (0..graph.len()).find(|&i| !live[i] && graph.states[i].term.roles().contains(r)) {
            let steps = global_trace(&graph, i);
            let reason = format!(
                "role {r} is still active in {} but can never act again",
                render_global(&graph.states[i].term, Style::Math)
            );
            return Verdict::fail(Check::GlobalProgress, Counterexample { steps, reason }, Stats { millis: elapsed(start), ..stats });
        }
    }
    Verdict::from_status(Check::GlobalProgress, &graph.status, false, Stats { millis: elapsed(start), ..stats })
}

pub fn verify_local_progress(lts: &GlobalLts, opts: &VerifyOptions) -> Verdict {
    let start = Instant::now();
    let y0 = match derived_initial(lts, Check::LocalProgress) {
        Ok(y) => y,
        Err(v) => return v,
    };
    let graph = explore_local(&opts.local(lts), y0, &opts.bounds);
    let stats = Stats { states: graph.len(), edges: graph.edge_count(), millis: 0 };
    let rev = graph.reverse();
    let roles: Vec<Role> = graph.states[0].system.roles().cloned().collect();
    for r in &roles {
        let good = (0..graph.len()).filter(|&i| {
            !graph.complete[i]
                || graph.out[i].iter().any(|e| e.actor == *r && matches!(e.label, TransitionLabel::Send { .. } | TransitionLabel::Recv { .. }))
        });
        let live = backward(&rev, good);
        let stuck = (0..graph.len()).find(|&i| {
            !live[i] && graph.states[i].system.get(r).is_some_and(|c| !c.behavior.is_final())
        });
        if let Some(i) = stuck {
            let reason = format!("role {r} is not final in {} but can never act again", render_system(&graph.states[i].system));
            return Verdict::fail(
                Check::LocalProgress,
                Counterexample { steps: graph.trace(i), reason },
                Stats { millis: elapsed(start), ..stats },
            );
        }
    }
    Verdict::from_status(Check::LocalProgress, &graph.status, false, Stats { millis: elapsed(start), ..stats })
}

// ---------------------------------------------------------------------------
// Orphan-message freedom

type MsgKey = (Role, Role, Label, Path);

pub fn verify_omf(lts: &GlobalLts, opts: &VerifyOptions) -> Verdict {
    let start = Instant::now();
    let y0 = match derived_initial(lts, Check::Omf) {
        Ok(y) => y,
        Err(v) => return v,
    };
    let graph = explore_local(&opts.local(lts), y0, &opts.bounds);
    let stats = |graph: &LocalGraph| Stats { states: graph.len(), edges: graph.edge_count(), millis: elapsed(start) };

    for (i, s) in graph.states.iter().enumerate() {
        if system_final(&s.system) && purge_system(&s.system).configs().any(|c| !c.inbox.is_empty()) {
            let reason = format!("final state keeps live messages: {}", render_system(&s.system));
            return Verdict::fail(Check::Omf, Counterexample { steps: graph.trace(i), reason }, stats(&graph));
        }
    }

    // Messages resolved at each state, and first occurrences still queued.
    let mut resolved: HashMap<MsgKey, Vec<usize>> = HashMap::new();
    let mut pending: Vec<(usize, MsgKey)> = Vec::new();
    for (i, s) in graph.states.iter().enumerate() {
        for e in &graph.out[i] {
            if let Some((from, m)) = &e.consumed {
                resolved.entry((e.actor.clone(), from.clone(), m.label.clone(), m.path.clone())).or_default().push(i);
            }
        }
        for c in s.system.configs() {
            for (from, msgs) in c.inbox.iter() {
                let mut firsts: BTreeSet<(&Label, &Path)> = BTreeSet::new();
                for m in msgs {
                    let key = (c.role.clone(), from.clone(), m.label.clone(), m.path.clone());
                    if stale(&m.path, &c.behavior) {
                        resolved.entry(key.clone()).or_default().push(i);
                    }
                    if firsts.insert((&m.label, &m.path)) {
                        pending.push((i, key));
                    }
                }
            }
        }
    }
    let rev = graph.reverse();
    let incomplete: Vec<usize> = (0..graph.len()).filter(|&i| !graph.complete[i]).collect();
    let mut cache: HashMap<&MsgKey, Vec<bool>> = HashMap::new();
    for (i, key) in &pending {
        let live = cache.entry(key).or_insert_with(|| {
            let good = resolved.get(key).into_iter().flatten().copied().chain(incomplete.iter().copied());
            backward(&rev, good)
        });
        if !live[*i] {
            let (to, from, label, path) = key;
            let at = if path.is_empty() { String::new() } else { format!(" at {path}") };
            let reason = format!(
                "message {label}{at} from {from} to {to} is never received nor made stale: {}",
                render_system(&graph.states[*i].system)
            );
            return Verdict::fail(Check::Omf, Counterexample { steps: graph.trace(*i), reason }, stats(&graph));
        }
    }
    Verdict::from_status(Check::Omf, &graph.status, false, stats(&graph))
}

// ---------------------------------------------------------------------------
// Invariant sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Coherence,
    Monotonicity,
    UniqueInstances,
    WellNested,
    Garbageless,
    Projectable,
    Balanced,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Coherence => "coherence",
            SweepKind::Monotonicity => "monotonicity",
            SweepKind::UniqueInstances => "unique-instances",
            SweepKind::WellNested => "well-nestedness",
            SweepKind::Garbageless => "garbageless-projection",
            SweepKind::Projectable => "projectability",
            SweepKind::Balanced => "balance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepViolation {
    pub kind: SweepKind,
    pub state: usize,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub verdict: Verdict,
    pub violations: Vec<SweepViolation>,
    /// Per invariant, how many states were checked for it.
    pub checked: Vec<(SweepKind, usize)>,
}

pub fn invariant_sweep(lts: &GlobalLts, opts: &VerifyOptions) -> SweepReport {
    use crate::global_lts::InvariantKind as K;
    let start = Instant::now();
    let graph = lts.explore(opts.bounds);
    let mut violations: Vec<SweepViolation> = check_state_invariants(lts, &graph)
        .violations
        .into_iter()
        .map(|v| SweepViolation {
            kind: match v.kind {
                K::Coherence => SweepKind::Coherence,
                K::Monotonicity => SweepKind::Monotonicity,
                K::UniqueInstances => SweepKind::UniqueInstances,
                K::WellNested => SweepKind::WellNested,
            },
            state: v.state,
            witness: format!("{}#{}: {}", v.mc, v.instance, v.witness),
        })
        .collect();
    let roles = lts.base().roles();
    let per_state: Vec<Vec<SweepViolation>> = graph
        .states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut out = Vec::new();
            match derive_system(&s.term, &roles) {
                Err(e) => out.push(SweepViolation { kind: SweepKind::Projectable, state: i, witness: e.to_string() }),
                Ok(y) => {
                    for c in y.configs() {
                        if purge(&c.behavior, &c.inbox) != c.inbox {
                            out.push(SweepViolation {
                                kind: SweepKind::Garbageless,
                                state: i,
                                witness: format!("{} has stale messages in {}", c.role, c.inbox),
                            });
                        }
                    }
                }
            }
            if let Err(e) = crate::validation::check_balance(&s.term) {
                out.push(SweepViolation { kind: SweepKind::Balanced, state: i, witness: e.to_string() });
            }
            out
        })
        .collect();
    violations.extend(per_state.into_iter().flatten());
    violations.sort_by_key(|v| (v.state, v.kind));
    let kinds = [
        SweepKind::Coherence,
        SweepKind::Monotonicity,
        SweepKind::UniqueInstances,
        SweepKind::WellNested,
        SweepKind::Garbageless,
        SweepKind::Projectable,
        SweepKind::Balanced,
    ];
    let checked = kinds.iter().map(|&k| (k, graph.len())).collect();
    let stats = Stats { states: graph.len(), edges: graph.edges.len(), millis: elapsed(start) };
    let verdict = match violations.first() {
        Some(v) => {
            let state = &graph.states[v.state];
            let steps = global_trace(&graph, v.state);
            let reason = format!("{} violated at {}: {}", v.kind, render_global(&state.term, Style::Math), v.witness);
            Verdict::fail(Check::Invariants, Counterexample { steps, reason }, stats)
        }
        None => Verdict::from_status(Check::Invariants, &graph.status, false, stats),
    };
    SweepReport { verdict, violations, checked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::model::{Configuration, LocalType as L};

    fn lts(name: &str) -> GlobalLts {
        GlobalLts::from_protocol(&corpus::load(name).unwrap()).unwrap()
    }

    #[test]
    fn timeout_corresponds_exhaustively() {
        let v = verify_correspondence(&lts("timeout"), &VerifyOptions::default());
        assert_eq!(v.status, Status::Pass, "{:?}", v.counterexample.map(|c| c.render()));
        assert!(v.exhaustive, "{:?}", v.notes);
        assert!(v.notes.is_empty());
    }

    #[test]
    fn end_only_is_a_single_pair() {
        let l = GlobalLts::new(GlobalType::End, None).unwrap();
        let v = verify_correspondence(&l, &VerifyOptions::default());
        assert_eq!(v.status, Status::Pass);
        assert_eq!((v.stats.states, v.stats.edges), (1, 0));
        assert!(verify_progress(&l, &VerifyOptions::default()).status() == Status::Pass);
    }

    #[test]
    fn corrupted_projection_is_caught() {
        let l = lts("timeout");
        let mut y = derive_system(l.base(), &l.base().roles()).unwrap();
        let c = Role::new("C");
        let corrupt = L::mc("c1", L::recv("A", "a2", L::recv("B", "a3x", L::send("A", "a5", L::End))), L::recv("B", "TOc", L::End));
        y.replace(Configuration::new(c, corrupt, Default::default()));
        let v = verify_correspondence_from(&l, y, &VerifyOptions::default());
        assert_eq!(v.status, Status::Fail);
        let cex = v.counterexample.unwrap();
        let last = &cex.steps.last().unwrap().label;
        assert_eq!(*last, TransitionLabel::recv("B", "C", "a3"), "{}", cex.render());
        assert!(cex.steps.iter().all(|s| s.label != TransitionLabel::Purge));
    }

    #[test]
    fn progress_and_omf_on_timeout() {
        let l = lts("timeout");
        let p = verify_progress(&l, &VerifyOptions::default());
        assert_eq!(p.global.status, Status::Pass);
        assert_eq!(p.local.status, Status::Pass, "{:?}", p.local.counterexample.map(|c| c.render()));
        let o = verify_omf(&l, &VerifyOptions::default());
        assert_eq!(o.status, Status::Pass, "{:?}", o.counterexample.map(|c| c.render()));
        assert!(o.exhaustive);
    }

    #[test]
    fn stuck_left_loses_global_progress() {
        let v = verify_global_progress(&lts("stuck_left"), &VerifyOptions::default());
        assert_eq!(v.status, Status::Fail);
        assert!(v.counterexample.unwrap().reason.starts_with("role q "));
    }

    #[test]
    fn sweep_holds_on_timeout() {
        let r = invariant_sweep(&lts("timeout"), &VerifyOptions::default());
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert_eq!(r.verdict.status, Status::Pass);
    }

    #[test]
    fn combine_orders_statuses() {
        assert_eq!(combine([Status::Pass, Status::Inconclusive]), Status::Inconclusive);
        assert_eq!(combine([Status::Inconclusive, Status::Fail, Status::Pass]), Status::Fail);
        assert_eq!(combine([]), Status::Pass);
    }
}
