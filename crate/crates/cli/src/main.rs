mod config;
mod plot;
mod presets;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::RunConfig;
use run::Failure;

#[derive(Parser, Debug)]
#[command(name = "unitcell-dg", version, about = "Nodal DG unit-cell solver for photoconductive devices")]
struct Cli {
    /// Configuration file with `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset applied before the configuration file.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a single key, e.g. `--set mesh.order=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the merged configuration and exit.
    #[arg(long, global = true)]
    dump_effective_config: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the biased steady state.
    Steady,
    /// Run the coupled Maxwell and drift-diffusion transient.
    Transient {
        /// Steady state to start from (default: <out>/steady.json).
        #[arg(long)]
        steady: Option<PathBuf>,
    },
    /// Print mesh statistics.
    MeshInfo,
    /// Plot a CSV channel against time as SVG.
    Plot {
        /// CSV files, e.g. timeseries.csv.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Column name or prefix, e.g. `Jx`.
        #[arg(long, default_value = "Jx")]
        channel: String,
        /// Draw several runs on one set of axes.
        #[arg(long)]
        overlay: bool,
        /// Output file (default: <out>/plot_<channel>.svg).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(name) = &cli.preset {
        let text = presets::preset(name).ok_or_else(|| Failure::config(format!("unknown preset `{name}`; available: {}", presets::names().join(", "))))?;
        cfg.apply_text(text)?;
    }
    if let Some(p) = &cli.config {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::config(format!("`--set {o}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_plot(files: &[PathBuf], channel: &str, overlay: bool, output: Option<PathBuf>, out_dir: PathBuf) -> Result<i32, Failure> {
    if files.len() > 1 && !overlay {
        return Err(Failure::config("several files given; pass --overlay to draw them together"));
    }
    let tables = files.iter().map(|f| plot::read_table(f)).collect::<Result<Vec<_>, _>>().map_err(Failure::config)?;
    let svg = plot::render(&tables, channel).map_err(Failure::config)?;
    let path = output.unwrap_or_else(|| out_dir.join(format!("plot_{channel}.svg")));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(run::EXIT_OK)
}

fn main_inner(cli: Cli) -> Result<i32, Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    if let Command::Presets = cli.cmd {
        for n in presets::names() {
            println!("{n}");
        }
        return Ok(run::EXIT_OK);
    }
    let cfg = load_config(&cli)?;
    if cli.dump_effective_config {
        print!("{}", cfg.dump());
        return Ok(run::EXIT_OK);
    }
    match cli.cmd {
        Command::Steady => run::cmd_steady(&cfg),
        Command::Transient { steady } => run::cmd_transient(&cfg, steady),
        Command::MeshInfo => run::cmd_mesh_info(&cfg),
        Command::Plot { files, channel, overlay, output } => cmd_plot(&files, &channel, overlay, output, cfg.out_dir.clone()),
        Command::Presets => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNITCELL_DG_LOG", "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code as u8)
        }
    }
}
