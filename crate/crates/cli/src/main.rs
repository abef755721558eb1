use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use defeature_cli::config::{ConfigFile, Mode, Resolved};
use defeature_cli::{output_dir, presets_table, render, run, sweep, write_output, CliError};

#[derive(Parser)]
#[command(name = "defeat", version, about = "Adaptive isogeometric Poisson solver with a defeaturing error estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (adaptive, uniform or ε-sweep).
    Run(RunArgs),
    /// Uniform solves over the full (ε, level) grid.
    Sweep(RunArgs),
    /// Render a mesh to SVG.
    Render {
        #[command(flatten)]
        common: RunArgs,
        /// Uniform refinement level of the rendered mesh.
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Comma-separated feature ids to insert before rendering.
        #[arg(long, value_delimiter = ',')]
        activate: Vec<usize>,
        /// Per-patch mesh dumps to render instead of a uniform mesh, in patch order.
        #[arg(long = "from-dump")]
        from_dump: Vec<PathBuf>,
        /// Output file; defaults to mesh.svg in the output directory.
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Preset id (see `defeat presets`).
    preset: Option<String>,
    /// JSON config file; a manifest of an earlier run works too.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    alpha_d: Option<f64>,
    #[arg(long)]
    alpha_n: Option<f64>,
    /// DOF budget, 0 for none.
    #[arg(long)]
    budget: Option<usize>,
    /// Quadtree depth of cut-element quadrature.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Estimator tolerance, 0 for none.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Inclusive level range such as 0..5.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, value_delimiter = ',')]
    eps_values: Option<Vec<f64>>,
    /// Keep features out of the model (marking ignores them).
    #[arg(long)]
    no_geometric_refinement: bool,
    #[arg(long)]
    initial_levels: Option<usize>,
    /// Write an SVG of the mesh at every iteration.
    #[arg(long)]
    svg: bool,
    /// Write per-patch mesh dumps at every iteration.
    #[arg(long)]
    dump_mesh: bool,
    /// Write the defeatured stiffness matrix at every iteration.
    #[arg(long)]
    dump_matrix: bool,
    #[arg(short, long)]
    quiet: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<Resolved, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if self.preset.is_some() {
            cfg.geometry = None;
        }
        let flags = ConfigFile {
            preset: self.preset.clone(),
            eps: self.eps,
            mode: self.mode,
            levels: self.levels.clone(),
            eps_values: self.eps_values.clone(),
            p: self.p,
            theta: self.theta,
            mu: self.mu,
            alpha_d: self.alpha_d,
            alpha_n: self.alpha_n,
            budget: self.budget,
            depth: self.depth,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            geometric_refinement: self.no_geometric_refinement.then_some(false),
            initial_levels: self.initial_levels,
            svg: self.svg.then_some(true),
            dump_mesh: self.dump_mesh.then_some(true),
            dump_matrix: self.dump_matrix.then_some(true),
            ..Default::default()
        };
        cfg.overlay(&flags);
        Resolved::new(&cfg)
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            print!("{}", presets_table());
            Ok(())
        }
        Command::Run(args) => {
            let res = args.resolve()?;
            let dir = output_dir(args.out.as_deref(), &res.label);
            let summary = run(&res, &dir, args.quiet)?;
            if !args.quiet {
                eprintln!("{} rows written to {}", summary.records.len(), dir.join("run.csv").display());
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let res = args.resolve()?;
            let dir = output_dir(args.out.as_deref(), &res.label);
            let rows = sweep(&res, &dir)?;
            if !args.quiet {
                eprintln!("{} grid points written to {}", rows.len(), dir.join("grid.csv").display());
            }
            Ok(())
        }
        Command::Render { common, level, activate, from_dump, output } => {
            let res = common.resolve()?;
            let svg = render(&res, level, &activate, &from_dump)?;
            let path = output.unwrap_or_else(|| output_dir(common.out.as_deref(), &res.label).join("mesh.svg"));
            write_output(&path, &svg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("defeat: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
