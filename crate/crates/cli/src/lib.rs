//! Command-line front end: global flags, the sub-command registry and the
//! pipeline runner that chains sub-commands separated by a lone `|` over
//! one database session.

pub mod ops;
pub mod registry;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use annodb::AnnotationDb;
use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};

pub use registry::{DuplicateOp, Handler, OpSpec, Registry};

/// Token that separates chained sub-commands.
pub const SEPARATOR: &str = "|";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OP_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// What every handler gets: the open session, the root that imagefiles are
/// relative to, and the sink for data output.
pub struct Context<'a> {
    pub db: AnnotationDb,
    pub rootdir: PathBuf,
    pub out: &'a mut dyn Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalArgs {
    pub in_db: Option<PathBuf>,
    pub out_db: Option<PathBuf>,
    pub relpath: PathBuf,
    pub logging: u8,
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub name: String,
    pub matches: ArgMatches,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub global: GlobalArgs,
    pub invocations: Vec<Invocation>,
}

#[derive(Debug)]
pub enum Parsed {
    Run(Pipeline),
    /// Help was requested; the text goes to standard output.
    Help(String),
}

/// A command line that cannot be run; the text is meant for standard error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn global_command() -> Command {
    Command::new("annodb")
        .about("Manage computer-vision annotation databases with chainable sub-commands")
        .disable_help_flag(true)
        .disable_version_flag(true)
        .arg(Arg::new("in_db_file").short('i').value_name("IN_DB_FILE").value_parser(clap::value_parser!(PathBuf)).help("database to open"))
        .arg(Arg::new("out_db_file").short('o').value_name("OUT_DB_FILE").value_parser(clap::value_parser!(PathBuf)).help("database to commit to"))
        .arg(
            Arg::new("relpath")
                .long("relpath")
                .value_parser(clap::value_parser!(PathBuf))
                .default_value(".")
                .help("root path that all imagefiles are relative to"),
        )
        .arg(
            Arg::new("logging")
                .long("logging")
                .value_parser(["10", "20", "30", "40"])
                .default_value("20")
                .help("10 debug, 20 info, 30 warning, 40 error"),
        )
        .arg(Arg::new("help").short('h').long("help").action(ArgAction::SetTrue).help("print help"))
        .arg(
            Arg::new("pipeline")
                .value_name("SUB-COMMAND")
                .num_args(0..)
                .trailing_var_arg(true)
                .allow_hyphen_values(true)
                .value_parser(clap::value_parser!(OsString)),
        )
}

/// Top-level help: usage, global flags and the alphabetized sub-commands.
pub fn help_text(registry: &Registry) -> String {
    let mut text = global_command()
        .override_usage(
            "annodb [-i IN_DB_FILE] [-o OUT_DB_FILE] [--relpath RELPATH] [--logging {10,20,30,40}] [-h]\n       \
             sub-command-1 [args] [\"|\" sub-command-2 [args] ...]",
        )
        .render_help()
        .to_string();
    text.push_str("\nSub-commands:\n");
    let width = registry.names().iter().map(|n| n.len()).max().unwrap_or(0);
    for spec in registry.specs() {
        text.push_str(&format!("  {:width$}  {}\n", spec.name, spec.about));
    }
    text.push_str("\nRun `annodb <sub-command> -h` for the arguments of one sub-command.\n");
    text
}

/// Splits argument tokens at every lone `|`.
pub fn split_segments(tokens: &[OsString]) -> Vec<Vec<OsString>> {
    tokens
        .split(|t| t == SEPARATOR)
        .map(<[OsString]>::to_vec)
        .collect()
}

/// Parses global flags and then each `|`-separated segment with its own
/// sub-command schema. `argv` excludes the program name.
pub fn parse_command_line<I, T>(registry: &Registry, argv: I) -> Result<Parsed, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let global = global_command()
        .no_binary_name(true)
        .try_get_matches_from(argv)
        .map_err(|e| UsageError(e.render().to_string()))?;
    let tokens: Vec<OsString> = global
        .get_many::<OsString>("pipeline")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    if global.get_flag("help") {
        return Ok(Parsed::Help(help_text(registry)));
    }
    if tokens.is_empty() {
        return Err(UsageError(format!(
            "error: no sub-command given\n\n{}",
            help_text(registry)
        )));
    }
    let mut invocations = Vec::new();
    for segment in split_segments(&tokens) {
        let Some((name, args)) = segment.split_first() else {
            return Err(UsageError("error: empty sub-command between `|` separators".into()));
        };
        let name = name.to_string_lossy().into_owned();
        let spec = registry.get(&name).ok_or_else(|| {
            UsageError(format!(
                "error: unknown sub-command `{name}`\navailable sub-commands: {}",
                registry.names().join(", ")
            ))
        })?;
        let matches = match spec.command().try_get_matches_from(args) {
            Ok(m) => m,
            Err(e) if e.kind() == ErrorKind::DisplayHelp => {
                return Ok(Parsed::Help(spec.command().render_help().to_string()))
            }
            Err(e) => return Err(UsageError(e.render().to_string())),
        };
        invocations.push(Invocation { name, matches });
    }
    let logging: u8 = global
        .get_one::<String>("logging")
        .map(|s| s.parse().unwrap())
        .unwrap_or(20);
    Ok(Parsed::Run(Pipeline {
        global: GlobalArgs {
            in_db: global.get_one::<PathBuf>("in_db_file").cloned(),
            out_db: global.get_one::<PathBuf>("out_db_file").cloned(),
            relpath: global.get_one::<PathBuf>("relpath").cloned().unwrap_or_else(|| ".".into()),
            logging,
        },
        invocations,
    }))
}

/// Failure of a whole pipeline run.
#[derive(Debug)]
pub enum RunError {
    Open(annodb::Error),
    Op { name: String, error: anyhow::Error },
    Commit(annodb::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Open(e) => write!(f, "cannot open session: {e}"),
            RunError::Op { name, error } => write!(f, "{name} failed: {error:#}"),
            RunError::Commit(e) => write!(f, "commit failed: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Opens one session, runs every invocation in order and commits when an
/// output database was given. Nothing is committed if any step fails.
pub fn run_pipeline(registry: &Registry, pipeline: &Pipeline, out: &mut dyn Write) -> Result<(), RunError> {
    let g = &pipeline.global;
    let db = AnnotationDb::open(g.in_db.as_deref(), g.out_db.as_deref()).map_err(RunError::Open)?;
    let mut ctx = Context {
        db,
        rootdir: g.relpath.clone(),
        out,
    };
    for inv in &pipeline.invocations {
        let spec = registry.get(&inv.name).expect("parsed invocations are registered");
        log::debug!("running {}", inv.name);
        (spec.handler)(&mut ctx, &inv.matches).map_err(|error| RunError::Op {
            name: inv.name.clone(),
            error,
        })?;
    }
    if g.out_db.is_some() {
        ctx.db.commit().map_err(RunError::Commit)?;
    }
    Ok(())
}

fn log_level(logging: u8) -> log::LevelFilter {
    match logging {
        10 => log::LevelFilter::Debug,
        20 => log::LevelFilter::Info,
        30 => log::LevelFilter::Warn,
        _ => log::LevelFilter::Error,
    }
}

/// Sets up stderr logging once per process; later calls only adjust the level.
pub fn init_logging(logging: u8) {
    let level = log_level(logging);
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Trace)
        .format(|buf, record| writeln!(buf, "{}: {}", record.level(), record.args()))
        .try_init();
    log::set_max_level(level);
}

/// Parses and runs a command line, writing data to `out` and diagnostics
/// to `err`. Returns the process exit code.
pub fn run<I, T>(registry: &Registry, argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let pipeline = match parse_command_line(registry, argv) {
        Ok(Parsed::Run(p)) => p,
        Ok(Parsed::Help(text)) => {
            let _ = out.write_all(text.as_bytes());
            return EXIT_OK;
        }
        Err(e) => {
            let _ = writeln!(err, "{}", e.0.trim_end());
            return EXIT_USAGE;
        }
    };
    init_logging(pipeline.global.logging);
    match run_pipeline(registry, &pipeline, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_OP_ERROR
        }
    }
}
