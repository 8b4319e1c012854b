//! Event-driven state machines from projected local types, with DOT and
//! JSON output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commit::CommitReport;
use crate::frontend::{render_local, Style};
use crate::global_lts::dot_escape;
use crate::model::{Label, LocalType, McName, RecVar, Role};

pub const EFSM_SCHEMA: &str = "efsm/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Internal,
    Recv { peer: Role, label: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Empty,
    Send { peer: Role, label: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: StateId,
    pub event: Event,
    pub action: Action,
    /// Switches to the right block of an MC.
    pub switch: bool,
    pub to: StateId,
}

impl Transition {
    /// `event / action`, with `*` on the part that switches.
    pub fn label(&self) -> String {
        let star = |on: bool| if on && self.switch { "*" } else { "" };
        let send = matches!(self.action, Action::Send { .. });
        let event = match &self.event {
            Event::Internal => "τ".to_string(),
            Event::Recv { peer, label } => format!("{peer}?{}{label}", star(!send)),
        };
        match &self.action {
            Action::Empty => event,
            Action::Send { peer, label } => format!("{event} / {peer}!{}{label}", star(true)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Efsm {
    pub schema: String,
    pub role: Role,
    /// States are numbered `1..=states`.
    pub states: u32,
    pub initial: StateId,
    pub terminals: Vec<StateId>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EfsmError {
    #[error("cannot compile the runtime form {0}; compile a source projection")]
    RuntimeForm(String),
    #[error("free recursion variable {0}")]
    FreeVariable(RecVar),
    #[error("recursion body {0} does not start with an action")]
    UnguardedRecursion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Dot,
    Json,
}

impl Efsm {
    pub fn outgoing(&self, s: StateId) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.from == s)
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminals.contains(&s)
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph \"efsm_{}\" {{\n  node [shape=circle];\n", dot_escape(self.role.as_str()));
        for t in &self.terminals {
            let _ = writeln!(s, "  {t} [shape=doublecircle];");
        }
        let _ = writeln!(s, "  start [shape=point];\n  start -> {};", self.initial);
        for t in &self.transitions {
            let _ = writeln!(s, "  {} -> {} [label=\"{}\"];", t.from, t.to, dot_escape(&t.label()));
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("machine serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn emit(&self, format: Format) -> String {
        match format {
            Format::Dot => self.to_dot(),
            Format::Json => self.to_json(),
        }
    }
}

type Edge = (Event, Action, bool, StateId);

struct Group {
    mc: McName,
    states: Vec<StateId>,
}

struct Compiler<'a> {
    commits: &'a CommitReport,
    next: u32,
    terminal: Option<StateId>,
    edges: Vec<Vec<Edge>>,
    groups: Vec<Group>,
}

impl Compiler<'_> {
    fn alloc(&mut self, open: &[usize]) -> StateId {
        self.next += 1;
        let id = StateId(self.next);
        self.edges.push(Vec::new());
        for &g in open {
            self.groups[g].states.push(id);
        }
        id
    }

    fn terminal(&mut self) -> StateId {
        match self.terminal {
            Some(t) => t,
            None => {
                let t = self.alloc(&[]);
                self.terminal = Some(t);
                t
            }
        }
    }

    fn push(&mut self, from: StateId, e: Edge) {
        self.edges[(from.0 - 1) as usize].push(e);
    }

    /// The state for `t`. States on the left of an MC the role has not yet
    /// committed to are recorded in the open groups.
    fn state(&mut self, t: &LocalType, env: &BTreeMap<RecVar, StateId>, open: &[usize]) -> Result<StateId, EfsmError> {
        match t {
            LocalType::End => Ok(self.terminal()),
            LocalType::Var(x) => env.get(x).copied().ok_or_else(|| EfsmError::FreeVariable(x.clone())),
            LocalType::Rec { var, body } => {
                let hint = StateId(self.next + 1);
                let mut env = env.clone();
                env.insert(var.clone(), hint);
                let id = self.state(body, &env, open)?;
                if id != hint {
                    return Err(EfsmError::UnguardedRecursion(render_local(t, Style::Math)));
                }
                Ok(id)
            }
            LocalType::Select { peer, branches } => {
                let id = self.alloc(open);
                for (l, k) in branches.iter() {
                    let to = self.state(k, env, open)?;
                    self.push(id, (Event::Internal, Action::Send { peer: peer.clone(), label: l.clone() }, false, to));
                }
                Ok(id)
            }
            LocalType::Branch { peer, branches } => {
                let id = self.alloc(open);
                for (l, k) in branches.iter() {
                    let still: Vec<usize> = open.iter().copied().filter(|&g| !self.commits.is_committing(&self.groups[g].mc, l)).collect();
                    let to = self.state(k, env, &still)?;
                    self.push(id, (Event::Recv { peer: peer.clone(), label: l.clone() }, Action::Empty, false, to));
                }
                Ok(id)
            }
            LocalType::McDef { name, lhs, rhs } => {
                let g = self.groups.len();
                self.groups.push(Group { mc: name.clone(), states: Vec::new() });
                let mut inner = open.to_vec();
                inner.push(g);
                let head = self.state(lhs, env, &inner)?;
                let entries = self.head_edges(rhs, env, open)?;
                let states = std::mem::take(&mut self.groups[g].states);
                for s in &states {
                    if Some(*s) == self.terminal {
                        continue;
                    }
                    let receives: Vec<Event> = self.edges[(s.0 - 1) as usize]
                        .iter()
                        .filter(|(ev, _, sw, _)| !sw && matches!(ev, Event::Recv { .. }))
                        .map(|(ev, ..)| ev.clone())
                        .collect();
                    for (ev, act, to) in &entries {
                        self.push(*s, (ev.clone(), act.clone(), true, *to));
                        if matches!((ev, act), (Event::Internal, Action::Send { .. })) {
                            for r in &receives {
                                self.push(*s, (r.clone(), act.clone(), true, *to));
                            }
                        }
                    }
                }
                self.groups[g].states = states;
                Ok(head)
            }
            LocalType::McActive { .. } | LocalType::McLeft { .. } | LocalType::McRight { .. } => {
                Err(EfsmError::RuntimeForm(render_local(t, Style::Math)))
            }
        }
    }

    /// First transitions of `t` without a state of their own.
    fn head_edges(&mut self, t: &LocalType, env: &BTreeMap<RecVar, StateId>, open: &[usize]) -> Result<Vec<(Event, Action, StateId)>, EfsmError> {
        match t {
            LocalType::Select { peer, branches } => branches
                .iter()
                .map(|(l, k)| Ok((Event::Internal, Action::Send { peer: peer.clone(), label: l.clone() }, self.state(k, env, open)?)))
                .collect(),
            LocalType::Branch { peer, branches } => branches
                .iter()
                .map(|(l, k)| {
                    let still: Vec<usize> = open.iter().copied().filter(|&g| !self.commits.is_committing(&self.groups[g].mc, l)).collect();
                    Ok((Event::Recv { peer: peer.clone(), label: l.clone() }, Action::Empty, self.state(k, env, &still)?))
                })
                .collect(),
            LocalType::End => Ok(Vec::new()),
            _ => {
                let id = self.state(t, env, open)?;
                Ok(self.edges[(id.0 - 1) as usize].iter().map(|(e, a, _, to)| (e.clone(), a.clone(), *to)).collect())
            }
        }
    }
}

/// The machine for `role` playing the source projection `t`.
pub fn compile_efsm(role: &Role, t: &LocalType, commits: &CommitReport) -> Result<Efsm, EfsmError> {
    let mut c = Compiler { commits, next: 0, terminal: None, edges: Vec::new(), groups: Vec::new() };
    let initial = c.state(t, &BTreeMap::new(), &[])?;
    let mut transitions = Vec::new();
    for (i, es) in c.edges.iter().enumerate() {
        let from = StateId(i as u32 + 1);
        for (event, action, switch, to) in es {
            transitions.push(Transition { from, event: event.clone(), action: action.clone(), switch: *switch, to: *to });
        }
    }
    Ok(Efsm {
        schema: EFSM_SCHEMA.to_string(),
        role: role.clone(),
        states: c.next,
        initial,
        terminals: c.terminal.into_iter().collect(),
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus;
    use crate::commit::analyze_commitments;
    use crate::local_lts::LocalLts;
    use crate::model::{GlobalType, LocalType as L, TransitionLabel};
    use crate::projection::{derive_protocol, project};
    use crate::verify::explore_local;
    use crate::model::Path;

    fn machines(name: &str) -> (Vec<Efsm>, CommitReport) {
        let p = corpus::load(name).unwrap();
        let rep = analyze_commitments(&p.body, p.gc_labels().as_ref()).unwrap();
        let ms = p
            .roles
            .iter()
            .map(|r| compile_efsm(r, &project(&p.body, r, &Path::empty()).unwrap().0, &rep).unwrap())
            .collect();
        (ms, rep)
    }

    fn edges(m: &Efsm) -> Vec<(u32, String, u32)> {
        m.transitions.iter().map(|t| (t.from.0, t.label(), t.to.0)).collect()
    }

    fn e(from: u32, label: &str, to: u32) -> (u32, String, u32) {
        (from, label.to_string(), to)
    }

    #[test]
    fn timeout_goldens() {
        let (ms, _) = machines("timeout");
        let [a, b, c] = &ms[..] else { panic!() };
        assert_eq!((a.states, b.states, c.states), (5, 5, 4));
        assert_eq!(
            edges(a),
            vec![
                e(1, "τ / B!a1", 2),
                e(1, "B?*TOa", 5),
                e(2, "τ / C!a2", 3),
                e(2, "B?*TOa", 5),
                e(3, "B?a4", 4),
                e(3, "B?*TOa", 5),
                e(4, "C?a5", 5),
            ]
        );
        assert_eq!(
            edges(b),
            vec![e(1, "A?a1", 2), e(1, "τ / A!*TOa", 5), e(1, "A?a1 / A!*TOa", 5), e(2, "τ / C!a3", 3), e(3, "τ / A!a4", 4), e(5, "τ / C!TOc", 4)]
        );
        assert_eq!(edges(c), vec![e(1, "A?a2", 2), e(1, "B?*TOc", 4), e(2, "B?a3", 3), e(2, "B?*TOc", 4), e(3, "τ / A!a5", 4)]);
        assert!(c.to_dot().contains("  2 -> 4 [label=\"B?*TOc\"];"));
        assert_eq!(a.to_dot(), machines("timeout").0[0].to_dot());
    }

    #[test]
    fn trivial_machines() {
        let rep = CommitReport::default();
        let m = compile_efsm(&Role::new("p"), &L::End, &rep).unwrap();
        assert_eq!((m.states, m.transitions.len(), m.terminals.clone()), (1, 0, vec![StateId(1)]));
        let g = GlobalType::msg("A", "B", "m", GlobalType::End);
        let t = project(&g, &Role::new("A"), &Path::empty()).unwrap().0;
        let m = compile_efsm(&Role::new("A"), &t, &rep).unwrap();
        assert_eq!(edges(&m), vec![e(1, "τ / B!m", 2)]);
        let m2 = Efsm::from_json(&m.to_json()).unwrap();
        assert_eq!(m, m2);
        let err = compile_efsm(&Role::new("A"), &L::McLeft { name: "c".into(), lhs: Box::new(L::End) }, &rep);
        assert!(matches!(err, Err(EfsmError::RuntimeForm(_))));
    }

    #[test]
    fn loops_and_json_round_trip_on_corpus() {
        for name in corpus::VALID {
            let (ms, _) = machines(name);
            for m in ms {
                assert_eq!(Efsm::from_json(&m.to_json()).unwrap(), m, "{name}");
                for s in 1..=m.states {
                    let s = StateId(s);
                    assert!(m.is_terminal(s) || m.outgoing(s).next().is_some(), "{name}/{}: state {s} is stuck", m.role);
                }
            }
        }
        let (ms, _) = machines("loop_good");
        // p: μt.(q&a.t ▷ q⊕d.r⊕e.t) loops back to state 1.
        assert!(ms[0].transitions.iter().any(|t| t.to == StateId(1)));
    }

    #[test]
    fn classical_fragment_states_are_pure() {
        let g = GlobalType::interaction("p", "q", vec![("a", GlobalType::msg("q", "r", "x", GlobalType::End)), ("b", GlobalType::msg("q", "r", "y", GlobalType::End))]);
        let rep = CommitReport::default();
        for r in ["p", "q", "r"] {
            let role = Role::new(r);
            let m = compile_efsm(&role, &project(&g, &role, &Path::empty()).unwrap().0, &rep).unwrap();
            for s in 1..=m.states {
                let kinds: BTreeSet<bool> = m.outgoing(StateId(s)).map(|t| matches!(t.event, Event::Internal)).collect();
                assert!(kinds.len() <= 1);
            }
        }
    }

    /// Observable sequences of one role, prefix-closed.
    fn machine_traces(m: &Efsm) -> BTreeSet<Vec<TransitionLabel>> {
        fn go(m: &Efsm, s: StateId, cur: &mut Vec<TransitionLabel>, out: &mut BTreeSet<Vec<TransitionLabel>>) {
            out.insert(cur.clone());
            for t in m.outgoing(s) {
                let l = match (&t.event, &t.action) {
                    (_, Action::Send { peer, label }) => TransitionLabel::Send { from: m.role.clone(), to: peer.clone(), label: label.clone() },
                    (Event::Recv { peer, label }, Action::Empty) => TransitionLabel::Recv { from: peer.clone(), to: m.role.clone(), label: label.clone() },
                    (Event::Internal, Action::Empty) => continue,
                };
                cur.push(l);
                go(m, t.to, cur, out);
                cur.pop();
            }
        }
        let mut out = BTreeSet::new();
        go(m, m.initial, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn machines_agree_with_the_local_semantics() {
        let (ms, rep) = machines("timeout");
        let y = derive_protocol(&corpus::load("timeout").unwrap()).unwrap();
        let graph = explore_local(&LocalLts::unbounded(&rep), y, &Default::default());
        assert!(graph.status.exhaustive);
        for m in &ms {
            let mut memo: BTreeMap<usize, BTreeSet<Vec<TransitionLabel>>> = BTreeMap::new();
            fn traces(
                g: &crate::verify::LocalGraph,
                i: usize,
                r: &Role,
                memo: &mut BTreeMap<usize, BTreeSet<Vec<TransitionLabel>>>,
            ) -> BTreeSet<Vec<TransitionLabel>> {
                if let Some(t) = memo.get(&i) {
                    return t.clone();
                }
                let mut out: BTreeSet<Vec<TransitionLabel>> = [Vec::new()].into();
                for e in &g.out[i] {
                    let mine = e.actor == *r && matches!(e.label, TransitionLabel::Send { .. } | TransitionLabel::Recv { .. });
                    for mut t in traces(g, e.to, r, memo) {
                        if mine {
                            t.insert(0, e.label.clone());
                        }
                        out.insert(t);
                    }
                }
                memo.insert(i, out.clone());
                out
            }
            let local = traces(&graph, 0, &m.role, &mut memo);
            assert_eq!(machine_traces(m), local, "role {}", m.role);
        }
    }
}
