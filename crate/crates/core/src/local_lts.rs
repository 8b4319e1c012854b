//! Local semantics of systems: per-path FIFO queues, stale-message purge,
//! the deferral preorder and a seeded simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commit::CommitReport;
use crate::model::{Configuration, Label, LocalType, McName, Message, Path, Queue, RecVar, Role, Side, System, TransitionLabel};

/// Following `path` in `t` reaches a side the role has given up.
pub fn stale(path: &Path, t: &LocalType) -> bool {
    let Some((side, rest)) = path.split_first() else { return false };
    match (side, t) {
        (Side::L, LocalType::McRight { .. }) | (Side::R, LocalType::McLeft { .. }) => true,
        (Side::L, LocalType::McActive { lhs, .. } | LocalType::McLeft { lhs, .. }) => stale(&rest, lhs),
        (Side::R, LocalType::McActive { rhs, .. } | LocalType::McRight { rhs, .. }) => stale(&rest, rhs),
        _ => false,
    }
}

pub fn purge(t: &LocalType, q: &Queue) -> Queue {
    let mut out = q.clone();
    out.retain(|_, m| !stale(&m.path, t));
    out
}

fn purged_messages(t: &LocalType, q: &Queue) -> Vec<(Role, Message)> {
    q.iter().flat_map(|(r, ms)| ms.iter().filter(|m| stale(&m.path, t)).map(move |m| (r.clone(), m.clone()))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocalStep {
    pub label: TransitionLabel,
    pub actor: Role,
    /// Messages removed by a purge step, with their senders.
    pub purged: Vec<(Role, Message)>,
    /// The message taken by a receive, with its sender.
    #[serde(skip)]
    pub consumed: Option<(Role, Message)>,
    #[serde(skip)]
    pub next: System,
    #[serde(skip)]
    pub unfolded: BTreeSet<RecVar>,
}

enum ActKind {
    Send { to: Role, label: Label, path: Path },
    Recv { from: Role, label: Label, idx: usize },
    New { mc: McName },
}

struct Act {
    kind: ActKind,
    next: LocalType,
    unfolded: BTreeSet<RecVar>,
}

struct Actor<'a> {
    commits: &'a CommitReport,
    inbox: &'a Queue,
    allow: &'a dyn Fn(&RecVar) -> bool,
    cut: bool,
}

impl Actor<'_> {
    fn acts(&mut self, t: &LocalType, path: &Path, pending: &BTreeSet<RecVar>) -> Vec<Act> {
        match t {
            LocalType::Select { peer, branches } => branches
                .iter()
                .map(|(l, k)| Act {
                    kind: ActKind::Send { to: peer.clone(), label: l.clone(), path: path.clone() },
                    next: k.clone(),
                    unfolded: BTreeSet::new(),
                })
                .collect(),
            LocalType::Branch { peer, branches } => {
                // FIFO per path: the first message sent under this path decides.
                let msgs = self.inbox.get(peer);
                match msgs.iter().position(|m| m.path == *path) {
                    Some(idx) => match branches.get(&msgs[idx].label) {
                        Some(k) => vec![Act {
                            kind: ActKind::Recv { from: peer.clone(), label: msgs[idx].label.clone(), idx },
                            next: k.clone(),
                            unfolded: BTreeSet::new(),
                        }],
                        None => Vec::new(),
                    },
                    None => Vec::new(),
                }
            }
            LocalType::Rec { var, body } => {
                if t.is_unguarded_loop() || pending.contains(var) {
                    return Vec::new();
                }
                if !(self.allow)(var) {
                    self.cut = true;
                    return Vec::new();
                }
                let mut pending = pending.clone();
                pending.insert(var.clone());
                let mut out = self.acts(&body.subst(var, t), path, &pending);
                for a in &mut out {
                    a.unfolded.insert(var.clone());
                }
                out
            }
            LocalType::Var(_) | LocalType::End => Vec::new(),
            LocalType::McDef { name, lhs, rhs } => vec![Act {
                kind: ActKind::New { mc: name.clone() },
                next: LocalType::McActive { name: name.clone(), lhs: lhs.clone(), rhs: rhs.clone() },
                unfolded: BTreeSet::new(),
            }],
            LocalType::McActive { name, lhs, rhs } => {
                let mut out = Vec::new();
                for a in self.acts(lhs, &path.child(Side::L), pending) {
                    let committed = matches!(&a.kind, ActKind::Recv { label, .. } if self.commits.is_committing(name, label));
                    let next = if committed {
                        LocalType::McLeft { name: name.clone(), lhs: Box::new(a.next) }
                    } else {
                        LocalType::McActive { name: name.clone(), lhs: Box::new(a.next), rhs: rhs.clone() }
                    };
                    out.push(Act { kind: a.kind, next, unfolded: a.unfolded });
                }
                for a in self.acts(rhs, &path.child(Side::R), pending) {
                    let next = match a.kind {
                        ActKind::New { .. } => LocalType::McActive { name: name.clone(), lhs: lhs.clone(), rhs: Box::new(a.next) },
                        _ => LocalType::McRight { name: name.clone(), rhs: Box::new(a.next) },
                    };
                    out.push(Act { kind: a.kind, next, unfolded: a.unfolded });
                }
                out
            }
            LocalType::McLeft { name, lhs } => self
                .acts(lhs, &path.child(Side::L), pending)
                .into_iter()
                .map(|a| Act { next: LocalType::McLeft { name: name.clone(), lhs: Box::new(a.next) }, ..a })
                .collect(),
            LocalType::McRight { name, rhs } => self
                .acts(rhs, &path.child(Side::R), pending)
                .into_iter()
                .map(|a| Act { next: LocalType::McRight { name: name.clone(), rhs: Box::new(a.next) }, ..a })
                .collect(),
        }
    }
}

/// Per role and recursion variable, unfoldings performed so far.
pub type LocalUnfolds = BTreeMap<(Role, RecVar), u32>;

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct LocalState {
    pub system: System,
    pub unfolds: LocalUnfolds,
}

impl LocalState {
    pub fn new(system: System) -> Self {
        Self { system, unfolds: LocalUnfolds::new() }
    }
}

/// Local semantics with optional bounds on unfoldings and queue length.
#[derive(Debug, Clone, Copy)]
pub struct LocalLts<'a> {
    pub commits: &'a CommitReport,
    pub max_unfold: Option<u32>,
    pub queue_bound: Option<usize>,
}

impl<'a> LocalLts<'a> {
    pub fn unbounded(commits: &'a CommitReport) -> Self {
        Self { commits, max_unfold: None, queue_bound: None }
    }

    /// Enabled steps, and whether a bound cut some of them.
    pub fn steps(&self, s: &LocalState) -> (Vec<LocalStep>, bool) {
        let y = &s.system;
        let mut out = Vec::new();
        let mut cut = false;
        for c in y.configs() {
            let allow = |v: &RecVar| match self.max_unfold {
                Some(max) => s.unfolds.get(&(c.role.clone(), v.clone())).copied().unwrap_or(0) < max,
                None => true,
            };
            let mut actor = Actor { commits: self.commits, inbox: &c.inbox, allow: &allow, cut: false };
            let acts = actor.acts(&c.behavior, &Path::empty(), &BTreeSet::new());
            cut |= actor.cut;
            for a in acts {
                let mut next = y.clone();
                let mut consumed = None;
                let label = match a.kind {
                    ActKind::Send { to, label, path } => {
                        let Some(rcv) = next.get_mut(&to) else { continue };
                        if self.queue_bound.is_some_and(|b| rcv.inbox.get(&c.role).len() >= b) {
                            cut = true;
                            continue;
                        }
                        rcv.inbox.push(&c.role, Message::new(label.clone(), path));
                        TransitionLabel::Send { from: c.role.clone(), to, label }
                    }
                    ActKind::Recv { from, label, idx } => {
                        let m = next.get_mut(&c.role).expect("actor exists").inbox.remove(&from, idx);
                        consumed = Some((from.clone(), m));
                        TransitionLabel::Recv { from, to: c.role.clone(), label }
                    }
                    ActKind::New { mc } => TransitionLabel::New { mc, instance: None },
                };
                next.get_mut(&c.role).expect("actor exists").behavior = a.next;
                out.push(LocalStep { label, actor: c.role.clone(), purged: Vec::new(), consumed, next, unfolded: a.unfolded });
            }
            let purged = purged_messages(&c.behavior, &c.inbox);
            if !purged.is_empty() {
                let mut next = y.clone();
                next.replace(Configuration::new(c.role.clone(), c.behavior.clone(), purge(&c.behavior, &c.inbox)));
                out.push(LocalStep { label: TransitionLabel::Purge, actor: c.role.clone(), purged, consumed: None, next, unfolded: BTreeSet::new() });
            }
        }
        (out, cut)
    }

    pub fn successors(&self, s: &LocalState) -> (Vec<(LocalStep, LocalState)>, bool) {
        let (steps, cut) = self.steps(s);
        let out = steps
            .into_iter()
            .map(|st| {
                let mut unfolds = s.unfolds.clone();
                for v in &st.unfolded {
                    *unfolds.entry((st.actor.clone(), v.clone())).or_default() += 1;
                }
                let next = LocalState { system: st.next.clone(), unfolds };
                (st, next)
            })
            .collect();
        (out, cut)
    }
}

/// Every enabled step of `y`, unbounded.
pub fn local_enabled(y: &System, commits: &CommitReport) -> Vec<LocalStep> {
    LocalLts::unbounded(commits).steps(&LocalState::new(y.clone())).0
}

/// Replaces every queue by its purge.
pub fn purge_system(y: &System) -> System {
    let mut out = y.clone();
    for c in y.configs() {
        out.replace(Configuration::new(c.role.clone(), c.behavior.clone(), purge(&c.behavior, &c.inbox)));
    }
    out
}

pub fn system_final(y: &System) -> bool {
    y.configs().all(|c| c.behavior.is_final())
}

const UNFOLD_FUEL: u32 = 8;

/// `y1 <: y2`: same roles and queues, local types related pointwise.
pub fn preorder_leq(y1: &System, y2: &System) -> bool {
    y1.len() == y2.len()
        && y1.configs().zip(y2.configs()).all(|(a, b)| a.role == b.role && a.inbox == b.inbox && type_leq(&a.behavior, &b.behavior))
}

pub fn type_leq(a: &LocalType, b: &LocalType) -> bool {
    leq(a, b, UNFOLD_FUEL)
}

fn same_labels<T>(a: &crate::model::Branches<T>, b: &crate::model::Branches<T>) -> bool {
    a.len() == b.len() && a.labels().all(|l| b.contains(l))
}

fn leq(a: &LocalType, b: &LocalType, fuel: u32) -> bool {
    use LocalType as L;
    if a == b {
        return true;
    }
    let congruent = match (a, b) {
        (L::Select { peer: p1, branches: b1 }, L::Select { peer: p2, branches: b2 })
        | (L::Branch { peer: p1, branches: b1 }, L::Branch { peer: p2, branches: b2 })
            if p1 == p2 && same_labels(b1, b2) =>
        {
            b1.iter().all(|(l, t)| leq(t, b2.get(l).expect("same labels"), fuel))
        }
        (L::Branch { peer: p1, branches: b1 }, L::Branch { peer: p2, branches: b2 }) if p1 == p2 && b2.len() == 1 => {
            let (k, t2) = b2.iter().next().expect("one branch");
            b1.get(k).is_some_and(|t1| leq(t1, t2, fuel))
        }
        (L::McDef { name: n1, lhs: l1, rhs: r1 }, L::McDef { name: n2, lhs: l2, rhs: r2 } | L::McActive { name: n2, lhs: l2, rhs: r2 })
        | (L::McActive { name: n1, lhs: l1, rhs: r1 }, L::McActive { name: n2, lhs: l2, rhs: r2 }) => {
            n1 == n2 && leq(l1, l2, fuel) && leq(r1, r2, fuel)
        }
        (L::McLeft { name: n1, lhs: l1 }, L::McLeft { name: n2, lhs: l2 }) => n1 == n2 && leq(l1, l2, fuel),
        (L::McRight { name: n1, rhs: r1 }, L::McRight { name: n2, rhs: r2 }) => n1 == n2 && leq(r1, r2, fuel),
        (L::Rec { var: v1, body: x }, L::Rec { var: v2, body: y }) if v1 == v2 => leq(x, y, fuel),
        _ => false,
    };
    if congruent {
        return true;
    }
    match a {
        L::Rec { var, body } if fuel > 0 && !a.is_unguarded_loop() => leq(&body.subst(var, a), b, fuel - 1),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimOutcome {
    Terminated,
    Stuck,
    StepLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub index: usize,
    pub label: TransitionLabel,
    pub actor: Role,
    pub purged: Vec<(Role, Message)>,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} by {}", self.index, self.label, self.actor)?;
        if !self.purged.is_empty() {
            let ms: Vec<String> = self.purged.iter().map(|(r, m)| format!("{m} from {r}")).collect();
            write!(f, " purged: {}", ms.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub outcome: SimOutcome,
    pub last: System,
}

impl Trace {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub seed: u64,
    pub max_steps: usize,
    /// Prefer receive and purge steps over sends and instantiations.
    pub erlang_priority: bool,
}

pub fn simulate(y: &System, commits: &CommitReport, opts: SimOptions) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cur = y.clone();
    let mut entries = Vec::new();
    let lts = LocalLts::unbounded(commits);
    let outcome = loop {
        if entries.len() >= opts.max_steps {
            break SimOutcome::StepLimit;
        }
        let (steps, _) = lts.steps(&LocalState::new(cur.clone()));
        if steps.is_empty() {
            break if system_final(&cur) { SimOutcome::Terminated } else { SimOutcome::Stuck };
        }
        let external: Vec<&LocalStep> =
            steps.iter().filter(|s| matches!(s.label, TransitionLabel::Recv { .. } | TransitionLabel::Purge)).collect();
        let pool: Vec<&LocalStep> = if opts.erlang_priority && !external.is_empty() { external } else { steps.iter().collect() };
        let pick = *pool.choose(&mut rng).expect("non-empty");
        entries.push(TraceEntry { index: entries.len(), label: pick.label.clone(), actor: pick.actor.clone(), purged: pick.purged.clone() });
        cur = pick.next.clone();
    };
    Trace { entries, outcome, last: cur }
}
