//! Property suites, shared by the `properties` and `acceptance` targets.

use std::collections::{BTreeMap, VecDeque};

use proptest::prelude::*;
use proptest::test_runner::TestRunner;

use mixst::commit::analyze_commitments;
use mixst::corpus;
use mixst::frontend::{render_protocol, Protocol};
use mixst::local_lts::{purge, stale, type_leq, LocalLts, LocalState};
use mixst::projection::{derive_protocol, merge};
use mixst::{parse, Branches, GlobalType, Label, LocalType, McName, Message, Path, Queue, RecVar, Role, Side, TransitionLabel};

pub const CASES: u32 = 1000;

type Result = std::result::Result<(), TestCaseError>;

// ---------------------------------------------------------------------------
// Local types

fn peer() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::new("p")), Just(Role::new("q"))]
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::new("a")), Just(Label::new("b")), Just(Label::new("c"))]
}

fn branches(inner: BoxedStrategy<LocalType>) -> impl Strategy<Value = Branches<LocalType>> {
    prop::collection::btree_map(label(), inner, 1..=3).prop_map(|m| Branches::new(m.into_iter().collect()).unwrap())
}

fn source_local() -> BoxedStrategy<LocalType> {
    let leaf = prop_oneof![3 => Just(LocalType::End), 1 => Just(LocalType::var("t"))];
    leaf.prop_recursive(4, 40, 3, |inner| {
        prop_oneof![
            (peer(), branches(inner.clone())).prop_map(|(peer, branches)| LocalType::Branch { peer, branches }),
            (peer(), branches(inner.clone())).prop_map(|(peer, branches)| LocalType::Select { peer, branches }),
            inner.clone().prop_map(|b| LocalType::rec("t", b)),
            (inner.clone(), inner).prop_map(|(l, r)| LocalType::mc("c", l, r)),
        ]
    })
    .prop_map(|t| close(&t, &mut 0, &[]))
    .boxed()
}

fn runtime_local() -> BoxedStrategy<LocalType> {
    let leaf = prop_oneof![Just(LocalType::End), source_local()];
    leaf.prop_recursive(3, 24, 2, |inner| {
        let name = || prop_oneof![Just(McName::new("c")), Just(McName::new("d"))];
        prop_oneof![
            (name(), inner.clone(), inner.clone()).prop_map(|(name, l, r)| LocalType::McActive { name, lhs: Box::new(l), rhs: Box::new(r) }),
            (name(), inner.clone()).prop_map(|(name, l)| LocalType::McLeft { name, lhs: Box::new(l) }),
            (name(), inner.clone()).prop_map(|(name, r)| LocalType::McRight { name, rhs: Box::new(r) }),
            (peer(), branches(inner)).prop_map(|(peer, branches)| LocalType::Branch { peer, branches }),
        ]
    })
    .boxed()
}

/// Distinct binder names; free variables become `end`.
fn close(t: &LocalType, fresh: &mut u32, scope: &[(RecVar, RecVar)]) -> LocalType {
    use LocalType as L;
    let map = |bs: &Branches<LocalType>, fresh: &mut u32| {
        Branches::new(bs.iter().map(|(l, k)| (l.clone(), close(k, fresh, scope))).collect()).unwrap()
    };
    match t {
        L::End => L::End,
        L::Var(x) => scope.iter().rev().find(|(from, _)| from == x).map(|(_, to)| L::Var(to.clone())).unwrap_or(L::End),
        L::Rec { var, body } => {
            *fresh += 1;
            let v = RecVar::new(format!("t{fresh}"));
            let mut inner = scope.to_vec();
            inner.push((var.clone(), v.clone()));
            L::Rec { var: v, body: Box::new(close(body, fresh, &inner)) }
        }
        L::Branch { peer, branches } => L::Branch { peer: peer.clone(), branches: map(branches, fresh) },
        L::Select { peer, branches } => L::Select { peer: peer.clone(), branches: map(branches, fresh) },
        L::McDef { name, lhs, rhs } => {
            L::McDef { name: name.clone(), lhs: Box::new(close(lhs, fresh, scope)), rhs: Box::new(close(rhs, fresh, scope)) }
        }
        L::McActive { name, lhs, rhs } => {
            L::McActive { name: name.clone(), lhs: Box::new(close(lhs, fresh, scope)), rhs: Box::new(close(rhs, fresh, scope)) }
        }
        L::McLeft { name, lhs } => L::McLeft { name: name.clone(), lhs: Box::new(close(lhs, fresh, scope)) },
        L::McRight { name, rhs } => L::McRight { name: name.clone(), rhs: Box::new(close(rhs, fresh, scope)) },
    }
}

/// Branch order does not matter for equality of types.
fn canon(t: &LocalType) -> LocalType {
    use LocalType as L;
    let sort = |bs: &Branches<LocalType>| {
        let mut v: Vec<(Label, LocalType)> = bs.iter().map(|(l, k)| (l.clone(), canon(k))).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        Branches::new(v).unwrap()
    };
    match t {
        L::Branch { peer, branches } => L::Branch { peer: peer.clone(), branches: sort(branches) },
        L::Select { peer, branches } => L::Select { peer: peer.clone(), branches: sort(branches) },
        L::Rec { var, body } => L::Rec { var: var.clone(), body: Box::new(canon(body)) },
        L::McDef { name, lhs, rhs } => L::McDef { name: name.clone(), lhs: Box::new(canon(lhs)), rhs: Box::new(canon(rhs)) },
        L::McActive { name, lhs, rhs } => L::McActive { name: name.clone(), lhs: Box::new(canon(lhs)), rhs: Box::new(canon(rhs)) },
        L::McLeft { name, lhs } => L::McLeft { name: name.clone(), lhs: Box::new(canon(lhs)) },
        L::McRight { name, rhs } => L::McRight { name: name.clone(), rhs: Box::new(canon(rhs)) },
        L::End | L::Var(_) => t.clone(),
    }
}

/// Two receives from one peer sharing some continuations, so that merges
/// are often defined.
fn mergeable_pair() -> impl Strategy<Value = (LocalType, LocalType)> {
    (peer(), prop::collection::btree_map(label(), source_local(), 1..=3), any::<u8>(), any::<u8>()).prop_map(|(peer, pool, m1, m2)| {
        let pick = |mask: u8| {
            let v: Vec<(Label, LocalType)> =
                pool.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, (l, t))| (l.clone(), t.clone())).collect();
            let v = if v.is_empty() { vec![pool.iter().next().map(|(l, t)| (l.clone(), t.clone())).unwrap()] } else { v };
            LocalType::Branch { peer: peer.clone(), branches: Branches::new(v).unwrap() }
        };
        (pick(m1), pick(m2))
    })
}

/// A supertype of `t`: drop receive branches, unfold binders, activate
/// definitions, as directed by `coins`.
fn weaken(t: &LocalType, coins: &mut impl Iterator<Item = u8>) -> LocalType {
    use LocalType as L;
    let mut coin = || coins.next().unwrap_or(0);
    match t {
        L::Branch { peer, branches } if branches.len() > 1 && coin() % 3 == 0 => {
            let (l, k) = branches.iter().nth(coin() as usize % branches.len()).unwrap();
            L::Branch { peer: peer.clone(), branches: Branches::single(l.clone(), weaken(k, coins)) }
        }
        L::Branch { peer, branches } => {
            L::Branch { peer: peer.clone(), branches: Branches::new(branches.iter().map(|(l, k)| (l.clone(), weaken(k, coins))).collect()).unwrap() }
        }
        L::Select { peer, branches } => {
            L::Select { peer: peer.clone(), branches: Branches::new(branches.iter().map(|(l, k)| (l.clone(), weaken(k, coins))).collect()).unwrap() }
        }
        L::Rec { var, body } if coin() % 2 == 0 && !t.is_unguarded_loop() => body.subst(var, t),
        L::Rec { var, body } => L::Rec { var: var.clone(), body: Box::new(weaken(body, coins)) },
        L::McDef { name, lhs, rhs } => {
            let activate = coin() % 2 == 0;
            let (lhs, rhs) = (Box::new(weaken(lhs, coins)), Box::new(weaken(rhs, coins)));
            if activate {
                L::McActive { name: name.clone(), lhs, rhs }
            } else {
                L::McDef { name: name.clone(), lhs, rhs }
            }
        }
        L::McActive { name, lhs, rhs } => L::McActive { name: name.clone(), lhs: Box::new(weaken(lhs, coins)), rhs: Box::new(weaken(rhs, coins)) },
        L::McLeft { name, lhs } => L::McLeft { name: name.clone(), lhs: Box::new(weaken(lhs, coins)) },
        L::McRight { name, rhs } => L::McRight { name: name.clone(), rhs: Box::new(weaken(rhs, coins)) },
        L::End | L::Var(_) => t.clone(),
    }
}

pub fn merge_is_idempotent(t: LocalType) -> Result {
    prop_assert_eq!(merge(&t, &t), Some(t.clone()));
    Ok(())
}

pub fn merge_commutes_on_receives((a, b): (LocalType, LocalType)) -> Result {
    let ab = merge(&a, &b).map(|t| canon(&t));
    let ba = merge(&b, &a).map(|t| canon(&t));
    prop_assert_eq!(ab, ba);
    Ok(())
}

pub fn merge_commutes_on_arbitrary_pairs((a, b): (LocalType, LocalType)) -> Result {
    prop_assert_eq!(merge(&a, &b).map(|t| canon(&t)), merge(&b, &a).map(|t| canon(&t)));
    Ok(())
}

pub fn preorder_is_reflexive(t: LocalType) -> Result {
    prop_assert!(type_leq(&t, &t));
    Ok(())
}

pub fn preorder_is_transitive((t, c1, c2): (LocalType, Vec<u8>, Vec<u8>)) -> Result {
    let u = weaken(&t, &mut c1.into_iter());
    let v = weaken(&u, &mut c2.into_iter());
    prop_assert!(type_leq(&t, &u), "t <: u");
    prop_assert!(type_leq(&u, &v), "u <: v");
    prop_assert!(type_leq(&t, &v), "t <: v");
    Ok(())
}


// ---------------------------------------------------------------------------
// Queues

fn path() -> impl Strategy<Value = Path> {
    prop::collection::vec(prop_oneof![Just(Side::L), Just(Side::R)], 0..=3).prop_map(Path::from_sides)
}

fn queue() -> impl Strategy<Value = Queue> {
    prop::collection::vec((peer(), label(), path()), 0..8).prop_map(|ms| {
        let mut q = Queue::new();
        for (r, l, p) in ms {
            q.push(&r, Message::new(l, p));
        }
        q
    })
}

fn all_paths() -> Vec<Path> {
    let mut out = vec![Path::empty()];
    let mut frontier = vec![Path::empty()];
    for _ in 0..3 {
        frontier = frontier.iter().flat_map(|p| [p.child(Side::L), p.child(Side::R)]).collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

#[derive(Debug, Clone)]
pub enum QueueOp {
    Push(Role, Label),
    Pop(Role),
}

pub fn purge_is_idempotent((t, q): (LocalType, Queue)) -> Result {
    let once = purge(&t, &q);
    prop_assert_eq!(purge(&t, &once), once.clone());
    for (_, ms) in once.iter() {
        prop_assert!(ms.iter().all(|m| !stale(&m.path, &t)));
    }
    Ok(())
}

pub fn fifo_append_and_consume(ops: Vec<QueueOp>) -> Result {
    let mut q = Queue::new();
    let mut model: BTreeMap<Role, VecDeque<Label>> = BTreeMap::new();
    for op in ops {
        match op {
            QueueOp::Push(r, l) => {
                q.push(&r, Message::new(l.clone(), Path::empty()));
                model.entry(r).or_default().push_back(l);
            }
            QueueOp::Pop(r) => {
                let expected = model.get_mut(&r).and_then(VecDeque::pop_front);
                if let Some(l) = expected {
                    prop_assert_eq!(q.remove(&r, 0).label, l);
                } else {
                    prop_assert!(q.get(&r).is_empty());
                }
            }
        }
        for r in [Role::new("p"), Role::new("q")] {
            let got: Vec<Label> = q.get(&r).iter().map(|m| m.label.clone()).collect();
            let want: Vec<Label> = model.get(&r).map(|d| d.iter().cloned().collect()).unwrap_or_default();
            prop_assert_eq!(got, want);
        }
    }
    Ok(())
}


// ---------------------------------------------------------------------------
// Random walks over the local semantics of the corpus

const WALKED: &[&str] = &[
    "timeout", "timeout_drop_a4", "timeout_drop_a3", "loop_good", "loop_bad", "stream", "third_party", "failh", "interr", "amqp", "stuck_left",
];

pub fn walks_keep_stale_and_fifo((which, choices): (usize, Vec<u16>)) -> Result {
    let p = corpus::load(WALKED[which]).unwrap();
    let rep = analyze_commitments(&p.body, p.gc_labels().as_ref()).unwrap();
    let lts = LocalLts::unbounded(&rep);
    let paths = all_paths();
    let mut cur = LocalState::new(derive_protocol(&p).unwrap());
    for c in choices {
        let (succ, _) = lts.successors(&cur);
        if succ.is_empty() {
            break;
        }
        let (step, next) = &succ[c as usize % succ.len()];
        let before = cur.system.get(&step.actor).unwrap();
        let after = next.system.get(&step.actor).unwrap();
        for pi in &paths {
            if stale(pi, &before.behavior) {
                prop_assert!(stale(pi, &after.behavior), "{} lost staleness of {pi} on {}", step.actor, step.label);
            }
        }
        match &step.label {
            TransitionLabel::Send { from, to, .. } => {
                let q0 = cur.system.get(to).unwrap().inbox.get(from);
                let q1 = next.system.get(to).unwrap().inbox.get(from);
                prop_assert_eq!(q1.len(), q0.len() + 1);
                prop_assert_eq!(&q1[..q0.len()], q0);
            }
            TransitionLabel::Recv { from, .. } => {
                let (sender, m) = step.consumed.clone().unwrap();
                prop_assert_eq!(&sender, from);
                let q0 = before.inbox.get(from);
                let idx = q0.iter().position(|x| x.path == m.path).unwrap();
                prop_assert_eq!(&q0[idx], &m);
                let mut rest = q0.to_vec();
                rest.remove(idx);
                prop_assert_eq!(after.inbox.get(from), &rest[..]);
            }
            _ => {}
        }
        cur = next.clone();
    }
    Ok(())
}


// ---------------------------------------------------------------------------
// Parser round-trip

const ROLES: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Clone)]
enum Shape {
    End,
    Continue(u8),
    Msg(u8, u8, Box<Shape>),
    Choice(u8, u8, Vec<Shape>),
    Rec(u8, u8, Box<Shape>),
    Mixed((u8, u8, Box<Shape>), (u8, u8, Box<Shape>)),
}

fn shape() -> impl Strategy<Value = Shape> {
    let leaf = prop_oneof![Just(Shape::End), any::<u8>().prop_map(Shape::Continue)];
    leaf.prop_recursive(5, 48, 3, |inner| {
        let head = (any::<u8>(), any::<u8>(), inner.clone().prop_map(Box::new));
        prop_oneof![
            3 => (any::<u8>(), any::<u8>(), inner.clone()).prop_map(|(f, t, k)| Shape::Msg(f, t, Box::new(k))),
            1 => (any::<u8>(), any::<u8>(), prop::collection::vec(inner.clone(), 2..=3)).prop_map(|(f, t, ks)| Shape::Choice(f, t, ks)),
            1 => (any::<u8>(), any::<u8>(), inner).prop_map(|(f, t, k)| Shape::Rec(f, t, Box::new(k))),
            1 => (head.clone(), head).prop_map(|(l, r)| Shape::Mixed(l, r)),
        ]
    })
}

#[derive(Default)]
struct Build {
    labels: u32,
    recs: u32,
    mcs: u32,
    scope: Vec<RecVar>,
}

impl Build {
    fn pair(f: u8, t: u8) -> (&'static str, &'static str) {
        let from = f as usize % ROLES.len();
        let to = (from + 1 + t as usize % (ROLES.len() - 1)) % ROLES.len();
        (ROLES[from], ROLES[to])
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("m{}", self.labels)
    }

    fn msg(&mut self, f: u8, t: u8, k: &Shape) -> GlobalType {
        let (from, to) = Self::pair(f, t);
        let l = self.label();
        let cont = self.go(k);
        GlobalType::msg(from, to, &l, cont)
    }

    fn go(&mut self, s: &Shape) -> GlobalType {
        match s {
            Shape::End => GlobalType::End,
            Shape::Continue(i) if self.scope.is_empty() => {
                let _ = i;
                GlobalType::End
            }
            Shape::Continue(i) => GlobalType::Var(self.scope[*i as usize % self.scope.len()].clone()),
            Shape::Msg(f, t, k) => self.msg(*f, *t, k),
            Shape::Choice(f, t, ks) => {
                let (from, to) = Self::pair(*f, *t);
                let bs: Vec<(String, GlobalType)> = ks.iter().map(|k| (self.label(), self.go(k))).collect();
                GlobalType::interaction(from, to, bs.iter().map(|(l, g)| (l.as_str(), g.clone())).collect())
            }
            Shape::Rec(f, t, k) => {
                self.recs += 1;
                let v = RecVar::new(format!("t{}", self.recs));
                self.scope.push(v.clone());
                let body = self.msg(*f, *t, k);
                self.scope.pop();
                GlobalType::Rec { var: v, body: Box::new(body) }
            }
            Shape::Mixed((f1, t1, l), (f2, t2, r)) => {
                self.mcs += 1;
                let name = McName::new(format!("c{}", self.mcs));
                let lhs = self.msg(*f1, *t1, l);
                let rhs = self.msg(*f2, *t2, r);
                GlobalType::McDef { name, lhs: Box::new(lhs), rhs: Box::new(rhs) }
            }
        }
    }
}

fn protocol() -> impl Strategy<Value = Protocol> {
    (any::<u8>(), any::<u8>(), shape()).prop_map(|(f, t, s)| {
        let body = Build::default().msg(f, t, &s);
        Protocol {
            name: "Random".into(),
            roles: body.all_roles().into_iter().collect(),
            body,
            annotations: Vec::new(),
            commit_markers: Default::default(),
            pragmas: Default::default(),
        }
    })
}

pub fn parser_round_trips(p: Protocol) -> Result {
    let src = render_protocol(&p);
    let back = parse(&src).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
    prop_assert_eq!(&back.body, &p.body, "{}", src);
    prop_assert_eq!(&back.roles, &p.roles);
    prop_assert_eq!(render_protocol(&back), src);
    Ok(())
}


fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub struct Suite {
    pub name: &'static str,
    pub run: fn() -> std::result::Result<(), String>,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "merge_is_idempotent", run: || run(source_local(), merge_is_idempotent) },
    Suite { name: "merge_commutes_on_receives", run: || run(mergeable_pair(), merge_commutes_on_receives) },
    Suite { name: "merge_commutes_on_arbitrary_pairs", run: || run((source_local(), source_local()), merge_commutes_on_arbitrary_pairs) },
    Suite { name: "preorder_is_reflexive", run: || run(runtime_local(), preorder_is_reflexive) },
    Suite {
        name: "preorder_is_transitive",
        run: || run((source_local(), prop::collection::vec(any::<u8>(), 64), prop::collection::vec(any::<u8>(), 64)), preorder_is_transitive),
    },
    Suite { name: "purge_is_idempotent", run: || run((runtime_local(), queue()), purge_is_idempotent) },
    Suite {
        name: "fifo_append_and_consume",
        run: || {
            let op = prop_oneof![(peer(), label()).prop_map(|(r, l)| QueueOp::Push(r, l)), peer().prop_map(QueueOp::Pop)];
            run(prop::collection::vec(op, 0..40), fifo_append_and_consume)
        },
    },
    Suite {
        name: "walks_keep_stale_and_fifo",
        run: || run((0..WALKED.len(), prop::collection::vec(any::<u16>(), 1..40)), walks_keep_stale_and_fifo),
    },
    Suite { name: "parser_round_trips", run: || run(protocol(), parser_round_trips) },
];
