use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "plfn", version, about = "Progressive multi-scale light field networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the built-in synthetic scene into a dataset directory.
    Synth(SynthArgs),
    /// Train a progressive network on a dataset.
    Train(TrainArgs),
    /// Score a model per level against the dataset's ground truth.
    Eval(EvalArgs),
    /// Render one frame under a level-of-detail policy.
    Render(RenderArgs),
    /// Time renders per level and scale.
    Bench(BenchArgs),
    /// Repack a checkpoint, optionally adding an occupancy network.
    Pack(PackArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional "scene" and "synth" objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub supersample: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stripe_periods: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional "arch", "train" and "occupancy" objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// combined | coarse_to_fine | single_scale
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated hidden widths per level, e.g. 128,256,384,512.
    #[arg(long)]
    pub widths: Option<String>,
    /// Weight layers including input and output.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Also train the occupancy network and include it in the model file.
    #[arg(long)]
    pub occupancy: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// pyramid | oracle
    #[arg(long, default_value = "pyramid")]
    pub reference: String,
    /// Samples per pixel side for the oracle reference.
    #[arg(long, default_value_t = 16)]
    pub supersample: u32,
    /// Report path (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Camera JSON: pose (12 row-major values), width, height, fx, fy, cx, cy.
    #[arg(long, conflicts_with = "view")]
    pub camera: Option<PathBuf>,
    /// Use the camera of this dataset view (needs --dataset).
    #[arg(long, requires = "dataset")]
    pub view: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Render at 1/scale of the camera resolution (1, 2, 4 or 8).
    #[arg(long, default_value_t = 1)]
    pub scale: u32,
    /// Policy JSON; overrides the policy flags below.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub lod: Option<usize>,
    /// Gaze point "x,y" in pixels.
    #[arg(long, requires = "radii")]
    pub foveated: Option<String>,
    /// Foveation radii "r1,r2,r3" in pixels.
    #[arg(long)]
    pub radii: Option<String>,
    /// "from,to,fraction[,seed]"
    #[arg(long)]
    pub dither: Option<String>,
    /// "cx,cy,cz,radius,train_height_px"
    #[arg(long)]
    pub distance: Option<String>,
    /// Skip rays whose occupancy is below this threshold.
    #[arg(long)]
    pub occupancy: Option<f64>,
    /// Round weights to half precision before rendering.
    #[arg(long)]
    pub half: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "1,2,3,4")]
    pub lods: String,
    /// Resolution divisors.
    #[arg(long, default_value = "1,2,4,8")]
    pub scales: String,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub occupancy: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train an occupancy network on this dataset and include it.
    #[arg(long)]
    pub occupancy_dataset: Option<PathBuf>,
    /// JSON occupancy training config.
    #[arg(long)]
    pub occupancy_config: Option<PathBuf>,
    /// Leave any occupancy network out of the output.
    #[arg(long, conflicts_with = "occupancy_dataset")]
    pub drop_occupancy: bool,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: std::net::SocketAddr,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => commands::render(a),
        Command::Bench(a) => commands::bench(a),
        Command::Pack(a) => commands::pack(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
