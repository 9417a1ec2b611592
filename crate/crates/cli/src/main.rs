//! Command-line front end: incorporate observations, enumerate transforms,
//! search, score, sample, and render.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use progmerge::dearg::{self, ReplacementKind};
use progmerge::likelihood::{self, EnumerationLimits, LikelihoodError};
use progmerge::model::{
    self, generator_for_program, parse_program, print_constructor, print_sugared, program_size,
    Program,
};
use progmerge::search::{beam_search, SearchConfig, SearchError};
use progmerge::treedom::{self, IncorporationMode, Tree};
use progmerge::{antiunify, sexpr};

#[derive(Parser)]
#[command(name = "progmerge", version, about = "Learn probabilistic tree programs from examples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Incorporate colors as (gaussian c 25) draws
    Gaussian,
    /// Incorporate both attributes as literals
    Deterministic,
}

impl From<ModeArg> for IncorporationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gaussian => IncorporationMode::GaussianColors,
            ModeArg::Deterministic => IncorporationMode::Deterministic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormArg {
    /// `(begin (define ...) ... body)`, or a bare body with no definitions
    Sugar,
    /// `(program ((abstraction ...) ...) body)`
    Constructor,
}

impl FormArg {
    fn print(self, p: &Program) -> String {
        match self {
            FormArg::Sugar => print_sugared(p),
            FormArg::Constructor => print_constructor(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    /// Abstraction compression moves (always enabled during search)
    Abstraction,
    Mean,
    Gaussian,
    SameVariable,
    Recursion,
}

impl KindArg {
    fn replacement(self) -> Option<ReplacementKind> {
        match self {
            KindArg::Abstraction => None,
            KindArg::Mean => Some(ReplacementKind::NoisyMean),
            KindArg::Gaussian => Some(ReplacementKind::NoisyGaussian),
            KindArg::SameVariable => Some(ReplacementKind::SameVariable),
            KindArg::Recursion => Some(ReplacementKind::Recursion),
        }
    }
}

const ALL_KIND_ARGS: [KindArg; 5] = [
    KindArg::Abstraction,
    KindArg::Mean,
    KindArg::Gaussian,
    KindArg::SameVariable,
    KindArg::Recursion,
];

#[derive(clap::Args)]
struct LimitArgs {
    /// Cap on random choices per enumerated trace
    #[arg(long, default_value_t = 10_000)]
    max_choices: usize,
    /// Cap on enumerated traces per observation
    #[arg(long, default_value_t = 100_000)]
    max_traces: usize,
    /// Cap on constructed nodes per trace (defaults to the target's node count)
    #[arg(long)]
    max_nodes: Option<usize>,
}

impl LimitArgs {
    fn limits(&self) -> EnumerationLimits {
        EnumerationLimits {
            max_nodes: self.max_nodes,
            max_choices: self.max_choices,
            max_traces: self.max_traces,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the initial program that memorizes an observation file
    Incorporate {
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Gaussian)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = FormArg::Sugar)]
        form: FormArg,
    },
    /// List one-step transformation candidates of a program
    Transforms {
        program: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        kinds: Option<Vec<KindArg>>,
        /// Keep compressions that grow the program
        #[arg(long)]
        no_filter: bool,
    },
    /// Search for the best program explaining an observation file
    Search {
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, value_delimiter = ',')]
        kinds: Option<Vec<KindArg>>,
        #[arg(long, value_enum, default_value_t = ModeArg::Gaussian)]
        mode: ModeArg,
        /// Write the per-depth search transcript to this file
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormArg::Sugar)]
        form: FormArg,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Score a program against an observation file
    Score {
        program: PathBuf,
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Draw samples from a program
    Sample {
        program: PathBuf,
        #[arg(short = 'n', long = "samples", default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a tree file to SVG
    Render {
        tree: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

enum CliError {
    Input(String),
    Resource(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Resource(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Resource(m) => f.write_str(m),
        }
    }
}

fn input_err(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Format with 12 significant digits, `%g`-style: fixed point for moderate
/// exponents, scientific otherwise, trailing zeros trimmed.
fn format_sig(x: f64) -> String {
    const SIG: usize = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    fn trim(s: &str) -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    }
    let sci = format!("{:.*e}", SIG - 1, x);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific notation");
    let exponent: i32 = exponent.parse().expect("exponent");
    if exponent >= -4 && exponent < SIG as i32 {
        let decimals = (SIG as i32 - 1 - exponent).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim(mantissa), exponent)
    }
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_trees(path: &PathBuf) -> Result<Vec<Tree>, CliError> {
    let trees = treedom::parse_trees(&read_file(path)?).map_err(input_err)?;
    if trees.is_empty() {
        return Err(input_err(format!("{}: no trees in file", path.display())));
    }
    Ok(trees)
}

fn load_program(path: &PathBuf) -> Result<Program, CliError> {
    let p = parse_program(&read_file(path)?).map_err(input_err)?;
    p.validate().map_err(input_err)?;
    Ok(p)
}

fn score_line(posterior: f64, prior: f64, likelihood: f64, size: usize) -> String {
    format!(
        ";; posterior={} prior={} likelihood={} size={}",
        format_sig(posterior),
        format_sig(prior),
        format_sig(likelihood),
        size
    )
}

fn resource_err(e: LikelihoodError) -> CliError {
    match e {
        LikelihoodError::TooManyTraces(_) | LikelihoodError::StepBudget => {
            CliError::Resource(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Incorporate { data, mode, form } => {
            let trees = load_trees(&data)?;
            let p = treedom::incorporate_data(&trees, mode.into()).map_err(input_err)?;
            println!("{}", form.print(&p));
            Ok(())
        }
        Command::Transforms { program, kinds, no_filter } => {
            let p = load_program(&program)?;
            let kinds = kinds.unwrap_or_else(|| ALL_KIND_ARGS.to_vec());
            if kinds.contains(&KindArg::Abstraction) {
                let mut gen = generator_for_program(&p);
                let condensed = antiunify::condense_program(&p);
                for a in antiunify::possible_abstractions(&condensed, &mut gen) {
                    let cp = progmerge::unify::compress_program(&p, a.clone())
                        .map_err(input_err)?;
                    let grows = program_size(&cp) > program_size(&p) + 1;
                    if grows && !no_filter {
                        continue;
                    }
                    println!(
                        "(compression (size {}) (abstraction {} ({}) {}))",
                        program_size(&cp),
                        a.name,
                        a.vars.join(" "),
                        a.body
                    );
                }
            }
            for kind_arg in &kinds {
                let Some(kind) = kind_arg.replacement() else { continue };
                let tag = match kind {
                    ReplacementKind::NoisyMean => "noisy-mean",
                    ReplacementKind::NoisyGaussian => "noisy-gaussian",
                    ReplacementKind::SameVariable => "same-variable",
                    ReplacementKind::Recursion => "recursion",
                };
                for a in p.abstractions.clone() {
                    for v in &a.vars {
                        if kind == ReplacementKind::SameVariable {
                            let instances = dearg::find_variable_instances(&p, &a, v)
                                .map_err(input_err)?;
                            for w in dearg::same_variable_matches(&p, &a, v, &instances)
                                .map_err(input_err)?
                            {
                                println!(
                                    "(deargument (kind {tag}) (abstraction {}) (variable {v}) (sibling {w}))",
                                    a.name
                                );
                            }
                        } else if let Some(dp) =
                            dearg::deargument(kind, &p, &a, v).map_err(input_err)?
                        {
                            println!(
                                "(deargument (kind {tag}) (size {}) (abstraction {}) (variable {v}))",
                                program_size(&dp),
                                a.name
                            );
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Search { data, alpha, beam, depth, seed, kinds, mode, trace, form, limits } => {
            let trees = load_trees(&data)?;
            let enabled_kinds: Vec<ReplacementKind> = kinds
                .unwrap_or_else(|| ALL_KIND_ARGS.to_vec())
                .into_iter()
                .filter_map(KindArg::replacement)
                .collect();
            let cfg = SearchConfig {
                alpha,
                beam_width: beam,
                depth,
                seed,
                limits: limits.limits(),
                enabled_kinds,
                incorporation_mode: mode.into(),
            };
            match beam_search(&trees, &cfg) {
                Ok((best, records)) => {
                    if let Some(path) = trace {
                        let lines: Vec<String> =
                            records.iter().map(|r| r.to_sexpr_string()).collect();
                        fs::write(&path, lines.join("\n") + "\n")
                            .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
                    }
                    println!("{}", form.print(&best.program));
                    println!(
                        "{}",
                        score_line(best.posterior, best.log_prior, best.log_likelihood, best.size())
                    );
                    Ok(())
                }
                Err(SearchError::Resource { source, best_so_far }) => {
                    if let Some(best) = best_so_far {
                        println!("{}", print_sugared(&best.program));
                        println!(
                            "{}",
                            score_line(
                                best.posterior,
                                best.log_prior,
                                best.log_likelihood,
                                best.size()
                            )
                        );
                    }
                    Err(CliError::Resource(source.to_string()))
                }
                Err(other) => Err(input_err(other)),
            }
        }
        Command::Score { program, data, alpha, limits } => {
            let p = load_program(&program)?;
            let trees = load_trees(&data)?;
            let (lp, ll, post) =
                likelihood::posterior(&p, &trees, alpha, limits.limits()).map_err(resource_err)?;
            println!(
                "log_prior={} log_likelihood={} posterior={}",
                format_sig(lp),
                format_sig(ll),
                format_sig(post)
            );
            Ok(())
        }
        Command::Sample { program, n, seed } => {
            let p = load_program(&program)?;
            let mut rng = model::rng_from_seed(seed);
            for _ in 0..n {
                let t = model::sample(&p, &mut rng).map_err(input_err)?;
                println!("{}", treedom::tree_to_expression(&t, IncorporationMode::Deterministic));
            }
            Ok(())
        }
        Command::Render { tree, out } => {
            let text = read_file(&tree)?;
            let form = sexpr::parse(&text).map_err(input_err)?;
            let t = treedom::expression_to_tree(&form).map_err(input_err)?;
            fs::write(&out, treedom::render_svg(&t))
                .map_err(|e| input_err(format!("{}: {e}", out.display())))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
