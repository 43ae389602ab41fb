//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error (parse/validation), 3 state error
//! (stale index). The database directory can come from `--db` or the
//! `LIBPIN_DB` environment variable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use libpin::analytics::{
    library_overlap, overlap_matrix, overlap_report, parse_advisories, uniqueness_groups,
    Advisory,
};
use libpin::database::{LibraryDatabase, LibraryVersionId};
use libpin::format::{parse_profile, serialize_profile};
use libpin::generator::{generate_corpus, CorpusSpec};
use libpin::index::{ClassIndex, IndexError};
use libpin::profile::{Profile, ProfileLevel};
use libpin::report::{run_bench, scan_app, ScanOptions, ScanReport};
use libpin::score::ScoreRepr;
use libpin::DatabaseMetadata;

const INDEX_FILE: &str = "index.lpix";

#[derive(Parser)]
#[command(name = "libpin", version, about = "Library detection for class-based binary profiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct DbArg {
    /// Database directory (defaults to $LIBPIN_DB).
    #[arg(long, env = "LIBPIN_DB")]
    db: PathBuf,
}

#[derive(Args)]
struct ScanFlags {
    /// Refine wide candidate sets with code-level features.
    #[arg(long)]
    code_level: bool,
    /// Refinement trigger: refine when more candidates than this remain.
    #[arg(long, default_value_t = 1)]
    max_candidates: usize,
    /// Advisory file (JSON) to triage instances against.
    #[arg(long)]
    advisories: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Include wall-clock timings (makes reports non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Database maintenance.
    #[command(subcommand)]
    Db(DbCommand),
    /// Scan an app profile (or a directory of them) against the database.
    Scan {
        #[command(flatten)]
        db: DbArg,
        /// App profile file, or a directory of `*.profile` files.
        input: PathBuf,
        #[command(flatten)]
        flags: ScanFlags,
        /// Write one report per app into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan labeled apps and report precision/recall and verdict quality.
    Bench {
        #[command(flatten)]
        db: DbArg,
        /// Directory of app `*.profile` files.
        #[arg(long)]
        apps: PathBuf,
        /// Ground-truth file: app id -> [{library, version}].
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        flags: ScanFlags,
    },
    /// Pairwise library overlap ratios.
    Overlap {
        #[command(flatten)]
        db: DbArg,
        /// Print the full per-version-pair matrix for two libraries.
        pair: Option<Vec<String>>,
    },
    /// Group profiles by signature to measure duplication.
    Uniq {
        #[command(flatten)]
        db: DbArg,
        #[arg(long, value_enum, default_value = "class-level")]
        level: UniqLevel,
    },
    /// Scan and triage against advisories (requires --advisories).
    Vuln {
        #[command(flatten)]
        db: DbArg,
        input: PathBuf,
        #[command(flatten)]
        flags: ScanFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus from a spec file.
    Gen {
        /// Corpus spec (JSON).
        spec: PathBuf,
        /// Output directory: gets db/, apps/, truth.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Build a database directory from `<library>/<version>.profile` files.
    Build {
        /// Directory of profile documents.
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the class-name index for an existing database.
    Index {
        #[command(flatten)]
        db: DbArg,
    },
}

/// Input errors exit 2, state errors (stale index) exit 3.
enum CliError {
    Input(String),
    State(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::State(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::State(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::StaleIndex => CliError::State(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Db(DbCommand::Build { profiles, out }) => db_build(&profiles, &out),
        Command::Db(DbCommand::Index { db }) => {
            let database = load_db(&db.db)?;
            let index = ClassIndex::build(&database);
            index.save(&db.db.join(INDEX_FILE)).map_err(input)?;
            println!("indexed {} entries", database.len());
            Ok(())
        }
        Command::Scan {
            db,
            input,
            flags,
            out,
        } => scan(&db.db, &input, &flags, out.as_deref(), false),
        Command::Vuln {
            db,
            input,
            flags,
            out,
        } => scan(&db.db, &input, &flags, out.as_deref(), true),
        Command::Bench {
            db,
            apps,
            truth,
            flags,
        } => bench(&db.db, &apps, &truth, &flags),
        Command::Overlap { db, pair } => overlap_cmd(&db.db, pair),
        Command::Uniq { db, level } => uniq_cmd(&db.db, level),
        Command::Gen { spec, out } => gen_cmd(&spec, &out),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UniqLevel {
    ClassLevel,
    CodeLevel,
}

fn load_db(dir: &Path) -> Result<LibraryDatabase, CliError> {
    LibraryDatabase::load(dir).map_err(input)
}

/// Loads the on-disk index when present and fresh; otherwise builds one in
/// memory. A present-but-stale index is a state error.
fn load_index(dir: &Path, db: &LibraryDatabase) -> Result<ClassIndex, CliError> {
    let path = dir.join(INDEX_FILE);
    if path.exists() {
        Ok(ClassIndex::load(&path, Some(&db.manifest_digest()))?)
    } else {
        Ok(ClassIndex::build(db))
    }
}

fn db_build(profiles_dir: &Path, out: &Path) -> Result<(), CliError> {
    let mut entries: Vec<(LibraryVersionId, Profile)> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(profiles_dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == "profile"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!(
            "no .profile files under {}",
            profiles_dir.display()
        )));
    }

    for path in &files {
        let library = path
            .parent()
            .and_then(Path::file_name)
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let version = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if library.is_empty() || version.is_empty() {
            failures.push(format!("{}: not named <library>/<version>.profile", path.display()));
            continue;
        }
        match fs::read(path) {
            Err(e) => failures.push(format!("{}: {e}", path.display())),
            Ok(bytes) => match parse_profile(&bytes) {
                Err(e) => failures.push(format!("{}: {e}", path.display())),
                Ok(profile) => entries.push((LibraryVersionId::new(library, version), profile)),
            },
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        return Err(CliError::Input(format!(
            "{} profile(s) failed to parse",
            failures.len()
        )));
    }

    let db = LibraryDatabase::build(DatabaseMetadata::now(), entries).map_err(input)?;
    db.save(out).map_err(input)?;
    let index = ClassIndex::build(&db);
    index.save(&out.join(INDEX_FILE)).map_err(input)?;
    println!(
        "{} entries, {} empty profiles",
        db.len(),
        db.empty_profiles().len()
    );
    Ok(())
}

fn load_advisories(
    path: Option<&PathBuf>,
    db: &LibraryDatabase,
) -> Result<Vec<Advisory>, CliError> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let bytes = fs::read(path).map_err(input)?;
    let advisories = parse_advisories(&bytes).map_err(input)?;
    for advisory in &advisories {
        // Advisories for libraries outside the database are silently kept:
        // they simply never match an instance. Bad version bounds are errors.
        if db.versions(&advisory.library).is_ok() {
            advisory.validate(db).map_err(input)?;
        }
    }
    Ok(advisories)
}

fn scan_options(flags: &ScanFlags) -> ScanOptions {
    ScanOptions {
        code_level: flags.code_level,
        max_candidates: flags.max_candidates,
        timings: flags.timings,
    }
}

fn read_app(path: &Path) -> Result<(String, Profile), CliError> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Input(format!("{}: not a UTF-8 path", path.display())))?
        .to_string();
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let profile =
        parse_profile(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((id, profile))
}

fn profile_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(input)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "profile"))
        .collect();
    files.sort();
    Ok(files)
}

fn render(report: &ScanReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    }
}

fn scan(
    db_dir: &Path,
    target: &Path,
    flags: &ScanFlags,
    out: Option<&Path>,
    require_advisories: bool,
) -> Result<(), CliError> {
    if require_advisories && flags.advisories.is_none() {
        return Err(CliError::Input("--advisories is required".into()));
    }
    let db = load_db(db_dir)?;
    let index = load_index(db_dir, &db)?;
    let advisories = load_advisories(flags.advisories.as_ref(), &db)?;
    let opts = scan_options(flags);

    let apps: Vec<(String, Profile)> = if target.is_dir() {
        profile_files(target)?
            .iter()
            .map(|p| read_app(p))
            .collect::<Result<_, _>>()?
    } else {
        vec![read_app(target)?]
    };

    // One worker per app against the shared read-only index.
    let reports: Vec<Result<ScanReport, CliError>> = apps
        .par_iter()
        .map(|(id, profile)| {
            scan_app(id, profile, &db, &index, &advisories, &opts).map_err(input)
        })
        .collect();

    for report in reports {
        let report = report?;
        let text = render(&report, flags.format);
        match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(input)?;
                let ext = match flags.format {
                    Format::Json => "report.json",
                    Format::Text => "report.txt",
                };
                fs::write(dir.join(format!("{}.{ext}", report.app)), text).map_err(input)?;
            }
            None => print!("{text}"),
        }
    }
    Ok(())
}

type TruthFile = BTreeMap<String, Vec<LibraryVersionId>>;

fn bench(db_dir: &Path, apps_dir: &Path, truth: &Path, flags: &ScanFlags) -> Result<(), CliError> {
    let db = load_db(db_dir)?;
    let index = load_index(db_dir, &db)?;
    let truth: TruthFile =
        serde_json::from_slice(&fs::read(truth).map_err(input)?).map_err(input)?;
    let mut apps = BTreeMap::new();
    for path in profile_files(apps_dir)? {
        let (id, profile) = read_app(&path)?;
        apps.insert(id, profile);
    }
    let summary = run_bench(&db, &index, &apps, &truth, &scan_options(flags)).map_err(input)?;
    match flags.format {
        Format::Json => print!("{}", summary.to_json()),
        Format::Text => print!("{}", summary.to_text()),
    }
    Ok(())
}

fn overlap_cmd(db_dir: &Path, pair: Option<Vec<String>>) -> Result<(), CliError> {
    let db = load_db(db_dir)?;
    match pair {
        Some(pair) if pair.len() == 2 => {
            let matrix = overlap_matrix(&pair[0], &pair[1], &db).map_err(input)?;
            for (a, b, score) in matrix {
                println!("{}@{a} {}@{b} {}", pair[0], pair[1], ScoreRepr::of(&score).fraction);
            }
            let max = library_overlap(&pair[0], &pair[1], &db).map_err(input)?;
            println!("max {}", ScoreRepr::of(&max).fraction);
        }
        Some(_) => return Err(CliError::Input("overlap expects exactly two libraries".into())),
        None => {
            let pairs = overlap_report(&db);
            if pairs.is_empty() {
                println!("no overlapping library pairs");
            }
            for (a, b, score) in pairs {
                println!("{a} {b} {}", ScoreRepr::of(&score).fraction);
            }
        }
    }
    Ok(())
}

fn uniq_cmd(db_dir: &Path, level: UniqLevel) -> Result<(), CliError> {
    let db = load_db(db_dir)?;
    let level = match level {
        UniqLevel::ClassLevel => ProfileLevel::ClassLevel,
        UniqLevel::CodeLevel => ProfileLevel::CodeLevel,
    };
    let report = uniqueness_groups(&db, level);
    println!("{} groups over {} profiles", report.groups.len(), report
        .groups
        .values()
        .map(Vec::len)
        .sum::<usize>());
    for (size, count) in &report.histogram {
        println!("groups of size {size}: {count}");
    }
    for members in report.groups.values().filter(|m| m.len() > 1) {
        let names: Vec<String> = members.iter().map(|id| id.to_string()).collect();
        println!("duplicates: {}", names.join(", "));
    }
    Ok(())
}

fn gen_cmd(spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let spec: CorpusSpec =
        serde_json::from_slice(&fs::read(spec_path).map_err(input)?).map_err(input)?;
    let corpus = generate_corpus(&spec).map_err(input)?;

    let db_dir = out.join("db");
    corpus.database.save(&db_dir).map_err(input)?;
    ClassIndex::build(&corpus.database)
        .save(&db_dir.join(INDEX_FILE))
        .map_err(input)?;

    let apps_dir = out.join("apps");
    fs::create_dir_all(&apps_dir).map_err(input)?;
    for (id, profile) in &corpus.apps {
        fs::write(apps_dir.join(format!("{id}.profile")), serialize_profile(profile))
            .map_err(input)?;
    }

    let labels = corpus.truth.labels();
    let mut truth = serde_json::to_string_pretty(&labels).map_err(input)?;
    truth.push('\n');
    fs::write(out.join("truth.json"), truth).map_err(input)?;

    println!(
        "{} library versions, {} apps",
        corpus.database.len(),
        corpus.apps.len()
    );
    Ok(())
}
