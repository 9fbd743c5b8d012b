use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meshboost::pipeline::{self, Camera, Config};
#[cfg(feature = "parallel")]
use meshboost::Error;
use meshboost::Result;
use serde_json::Value;

/// Textured body-mesh completion.
#[derive(Parser)]
#[command(name = "meshboost", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the command report as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Shape model weights; overrides the config.
    #[arg(long, global = true)]
    shape_model: Option<PathBuf>,
    /// Inpainting model weights; overrides the config.
    #[arg(long, global = true)]
    inpaint_model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Complete the shape of a partial OBJ.
    Complete {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Transfer the texture of a partial OBJ onto a completed OBJ.
    Transfer {
        source: PathBuf,
        completed: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Derive the known and background masks of a transferred atlas.
    Mask {
        atlas: PathBuf,
        completed: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Inpaint the missing texels of an atlas.
    Inpaint {
        atlas: PathBuf,
        known: PathBuf,
        background: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run all stages on a textured partial OBJ.
    Pipeline {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render a preview PNG of an OBJ.
    Render {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// front, back, left or right.
        #[arg(long)]
        camera: Option<String>,
        #[arg(long)]
        size: Option<u32>,
    },
    /// Train the shape model.
    TrainShape {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the inpainting network.
    TrainInpaint {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = &g.shape_model {
        cfg.models.shape = Some(p.clone());
    }
    if let Some(p) = &g.inpaint_model {
        cfg.models.inpaint = Some(p.clone());
    }
    Ok(cfg.resolved())
}

#[cfg(feature = "parallel")]
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MESHBOOST_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("MESHBOOST_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn init_threads() -> Result<()> {
    Ok(())
}

fn run(cli: Cli) -> Result<Value> {
    init_threads()?;
    let mut cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Complete { input, out } => pipeline::cmd_complete(input, out, &cfg),
        Command::Transfer { source, completed, out } => pipeline::cmd_transfer(source, completed, out, &cfg),
        Command::Mask { atlas, completed, out } => pipeline::cmd_mask(atlas, completed, out, &cfg),
        Command::Inpaint {
            atlas,
            known,
            background,
            out,
        } => pipeline::cmd_inpaint(atlas, known, background, out, &cfg),
        Command::Pipeline { input, out } => pipeline::cmd_pipeline(input, out, &cfg),
        Command::Synth { out } => pipeline::cmd_synth(out, &cfg),
        Command::Render {
            input,
            out,
            camera,
            size,
        } => {
            if let Some(c) = camera {
                cfg.render.camera = c.parse::<Camera>()?;
            }
            if let Some(s) = size {
                cfg.render.size = *s;
            }
            pipeline::cmd_render(input, out, &cfg)
        }
        Command::TrainShape { out, resume } => pipeline::cmd_train_shape(out, &cfg, resume.as_deref()),
        Command::TrainInpaint { out, resume } => pipeline::cmd_train_inpaint(out, &cfg, resume.as_deref()),
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
    let json = cli.global.json;
    match run(cli) {
        Ok(report) => {
            if json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("meshboost: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
