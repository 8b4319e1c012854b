use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mixst::commit::{analyze_commitments, CommitReport};
use mixst::efsm::{compile_efsm, Format};
use mixst::frontend::{render_local, render_local_scribble, Style};
use mixst::global_lts::{ExplorationBounds, GlobalLts};
use mixst::local_lts::{simulate, SimOptions, SimOutcome};
use mixst::projection::{derive_protocol, project};
use mixst::validation::{validate, Mode, Overall, ValidationConfig};
use mixst::verify::{self, combine, render_system, Status, Verdict, VerifyOptions};
use mixst::{parse, Path as MsgPath, Protocol, Role};

const EXIT_REJECT: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_IO: u8 = 66;

#[derive(Parser)]
#[command(name = "mixst", version, about = "Check, project, compile and verify mixed-choice multiparty protocols")]
struct Cli {
    /// Skip validation before projecting, compiling, simulating or verifying.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for state-space exploration.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Accept, with a warning, when a semantic check is inconclusive.
    #[arg(long, global = true)]
    permissive: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a protocol.
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Syntactic)]
        mode: ModeArg,
        #[arg(long)]
        json: bool,
    },
    /// Print the local type of one role.
    Project {
        file: PathBuf,
        #[arg(long)]
        role: String,
        #[arg(long, value_enum, default_value_t = StyleArg::Math)]
        style: StyleArg,
    },
    /// Compile the state machine of one role.
    Efsm {
        file: PathBuf,
        #[arg(long)]
        role: String,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Run the local semantics under a seeded random scheduler.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_steps: usize,
        /// Also write the trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Prefer receive and purge steps when any is enabled.
        #[arg(long)]
        erlang_priority: bool,
    },
    /// Run the bounded verification suite.
    Verify {
        file: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        rec_bound: Option<u32>,
        #[arg(long)]
        queue_bound: Option<usize>,
        #[arg(long)]
        max_states: Option<usize>,
        #[arg(long, value_enum)]
        skip: Vec<SkipArg>,
        /// Write the explored global graph as DOT.
        #[arg(long)]
        dump_global_graph: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Syntactic,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Math,
    Scribble,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dot,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SkipArg {
    Omf,
    Progress,
    Corr,
    Invariants,
}

enum Failure {
    Usage(String),
    Io(String),
    Reject(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<u8, Failure>;

fn read_protocol(path: &Path) -> Result<Protocol, Failure> {
    let src = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse(&src).map_err(|e| Failure::Reject(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn commits(p: &Protocol) -> Result<CommitReport, Failure> {
    analyze_commitments(&p.body, p.gc_labels().as_ref()).map_err(|e| Failure::Reject(e.to_string()))
}

/// Refuse protocols that do not validate, unless forced.
fn gate(cli: &Cli, p: &Protocol) -> Result<(), Failure> {
    if cli.force {
        return Ok(());
    }
    let report = validate(p, &ValidationConfig { permissive: cli.permissive, ..Default::default() });
    if report.accepted() {
        return Ok(());
    }
    let mut msg = format!("{} does not validate (use --force to proceed anyway)", p.name);
    for r in &report.reasons {
        msg += &format!("\n  {r}");
    }
    Err(Failure::Reject(msg))
}

fn role_of(p: &Protocol, name: &str) -> Result<Role, Failure> {
    p.roles
        .iter()
        .find(|r| r.as_str() == name)
        .cloned()
        .ok_or_else(|| Failure::Usage(format!("{} has no role {name}", p.name)))
}

fn run(cli: &Cli, out: &mut impl Write) -> Outcome {
    match &cli.command {
        Command::Check { file, mode, json } => {
            let p = read_protocol(file)?;
            let mode = match mode {
                ModeArg::Syntactic => Mode::Syntactic,
                ModeArg::Semantic => Mode::Semantic,
            };
            let report = validate(&p, &ValidationConfig { mode, bounds: None, permissive: cli.permissive });
            if *json {
                writeln!(out, "{}", report.to_json())?;
            } else {
                write!(out, "{}", report.render_text())?;
            }
            Ok(match report.overall {
                Overall::Accept => 0,
                Overall::Reject => EXIT_REJECT,
                Overall::Inconclusive => EXIT_INCONCLUSIVE,
            })
        }
        Command::Project { file, role, style } => {
            let p = read_protocol(file)?;
            let role = role_of(&p, role)?;
            gate(cli, &p)?;
            let (t, _) = project(&p.body, &role, &MsgPath::empty()).map_err(|e| Failure::Reject(e.to_string()))?;
            let text = match style {
                StyleArg::Math => render_local(&t, Style::Math),
                StyleArg::Scribble => render_local_scribble(&t, Some(&role)),
            };
            writeln!(out, "{}", text.trim_end())?;
            Ok(0)
        }
        Command::Efsm { file, role, format, output } => {
            let p = read_protocol(file)?;
            let role = role_of(&p, role)?;
            gate(cli, &p)?;
            let (t, _) = project(&p.body, &role, &MsgPath::empty()).map_err(|e| Failure::Reject(e.to_string()))?;
            let m = compile_efsm(&role, &t, &commits(&p)?).map_err(|e| Failure::Reject(e.to_string()))?;
            let mut text = m.emit(match format {
                FormatArg::Dot => Format::Dot,
                FormatArg::Json => Format::Json,
            });
            if !text.ends_with('\n') {
                text.push('\n');
            }
            match output {
                Some(path) => write_file(path, &text)?,
                None => write!(out, "{text}")?,
            }
            Ok(0)
        }
        Command::Simulate { file, seed, max_steps, trace, erlang_priority } => {
            let p = read_protocol(file)?;
            gate(cli, &p)?;
            let y = derive_protocol(&p).map_err(|e| Failure::Reject(e.to_string()))?;
            let t = simulate(&y, &commits(&p)?, SimOptions { seed: *seed, max_steps: *max_steps, erlang_priority: *erlang_priority });
            let log = t.render();
            if let Some(path) = trace {
                write_file(path, &log)?;
            }
            write!(out, "{log}")?;
            let outcome = match t.outcome {
                SimOutcome::Terminated => "terminated",
                SimOutcome::Stuck => "stuck",
                SimOutcome::StepLimit => "step limit",
            };
            writeln!(out, "outcome: {outcome} after {} steps", t.entries.len())?;
            writeln!(out, "final: {}", render_system(&t.last))?;
            Ok(match t.outcome {
                SimOutcome::Stuck => EXIT_REJECT,
                _ => 0,
            })
        }
        Command::Verify { file, depth, rec_bound, queue_bound, max_states, skip, dump_global_graph } => {
            let p = read_protocol(file)?;
            gate(cli, &p)?;
            let lts = GlobalLts::from_protocol(&p).map_err(|e| Failure::Reject(e.to_string()))?;
            let mut bounds = ExplorationBounds::default();
            if let Some(d) = depth {
                bounds.max_depth = *d;
            }
            if let Some(u) = rec_bound {
                bounds.max_unfoldings_per_rec = *u;
            }
            if let Some(s) = max_states {
                bounds.max_states = *s;
            }
            let mut opts = VerifyOptions { bounds, ..Default::default() };
            if queue_bound.is_some() {
                opts.queue_bound = *queue_bound;
            }
            if let Some(path) = dump_global_graph {
                write_file(path, &lts.explore(bounds).to_dot())?;
            }
            let mut verdicts: Vec<Verdict> = Vec::new();
            if !skip.contains(&SkipArg::Corr) {
                verdicts.push(verify::verify_correspondence(&lts, &opts));
            }
            if !skip.contains(&SkipArg::Progress) {
                let pv = verify::verify_progress(&lts, &opts);
                verdicts.push(pv.global);
                verdicts.push(pv.local);
            }
            if !skip.contains(&SkipArg::Omf) {
                verdicts.push(verify::verify_omf(&lts, &opts));
            }
            if !skip.contains(&SkipArg::Invariants) {
                let sweep = verify::invariant_sweep(&lts, &opts);
                for (kind, n) in &sweep.checked {
                    let bad = sweep.violations.iter().filter(|v| v.kind == *kind).count();
                    writeln!(out, "invariant {kind}: {}/{n} states", n - bad.min(*n))?;
                }
                verdicts.push(sweep.verdict);
            }
            for v in &verdicts {
                write_verdict(out, v)?;
            }
            Ok(match combine(verdicts.iter().map(|v| v.status)) {
                Status::Pass => 0,
                Status::Fail => EXIT_REJECT,
                Status::Inconclusive => EXIT_INCONCLUSIVE,
            })
        }
    }
}

fn write_verdict(out: &mut impl Write, v: &Verdict) -> io::Result<()> {
    let scope = if v.exhaustive { "exhaustive" } else { "bounded" };
    writeln!(out, "{}: {} ({scope}, {} states, {} edges)", v.check, v.status, v.stats.states, v.stats.edges)?;
    for n in &v.notes {
        writeln!(out, "  note: {n}")?;
    }
    if let Some(c) = &v.counterexample {
        for line in c.render().lines() {
            writeln!(out, "  {line}")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.into()).build().expect("thread pool");
    let mut buf = Vec::new();
    let result = pool.install(|| run(&cli, &mut buf));
    let mut out = io::stdout().lock();
    let _ = out.write_all(&buf).and_then(|()| out.flush());
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::Reject(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_REJECT)
        }
    }
}
