use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vidsal::commands;
use vidsal::config::{PredictMode, RunConfig, SynthConfig};
use vidsal::pipeline::McSettings;
use vidsal::Result;

#[derive(Parser)]
#[command(name = "vidsal", version, about = "Video saliency prediction: train, predict, evaluate, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::tiny(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the OM-CNN on frame pairs.
    TrainOmcnn {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (with videos.txt); overrides `data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the 2C-LSTM on features of a frozen OM-CNN.
    TrainClstm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// OM-CNN checkpoint; overrides `omcnn_checkpoint`.
        #[arg(long)]
        omcnn: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write one saliency map per frame of a video.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Video directory holding manifest.txt.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        omcnn: Option<PathBuf>,
        #[arg(long)]
        clstm: Option<PathBuf>,
        /// `deterministic` or `mc`; overrides `mode`.
        #[arg(long)]
        mode: Option<String>,
        /// Also write frames with the map overlaid.
        #[arg(long)]
        overlay: bool,
    },
    /// Score predicted maps against a video's fixations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of predicted .pgm maps.
        #[arg(long)]
        pred: PathBuf,
        /// Video directory with manifest.txt and fixations.csv.
        #[arg(long)]
        video: PathBuf,
    },
    /// Temporal, object and motion analyses of a video's fixations.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        video: PathBuf,
        /// Candidate-object counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn required(v: Option<PathBuf>, fallback: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    v.or(fallback)
        .ok_or_else(|| vidsal::Error::Config {
            field: field.into(),
            reason: "not given on the command line or in the config".into(),
        })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainOmcnn { common, data, resume } => {
            let mut c = common.run_config()?;
            if data.is_some() {
                c.data = data;
            }
            let s = commands::cmd_train_omcnn(&c, &common.out, resume.as_deref())?;
            println!("trained {} steps; best validation KL {:?}", s.steps, s.best_val);
        }
        Command::TrainClstm {
            common,
            data,
            omcnn,
            resume,
        } => {
            let mut c = common.run_config()?;
            if data.is_some() {
                c.data = data;
            }
            if omcnn.is_some() {
                c.omcnn_checkpoint = omcnn;
            }
            let s = commands::cmd_train_clstm(&c, &common.out, resume.as_deref())?;
            println!("trained {} steps; best validation KL {:?}", s.steps, s.best_val);
        }
        Command::Predict {
            common,
            video,
            omcnn,
            clstm,
            mode,
            overlay,
        } => {
            let mut c = common.run_config()?;
            if let Some(m) = mode {
                c.mode = PredictMode::parse(&m)?;
            }
            let om = required(omcnn, c.omcnn_checkpoint.clone(), "omcnn_checkpoint")?;
            let cl = clstm.or(c.clstm_checkpoint.clone());
            let paths = commands::cmd_predict(&om, cl.as_deref(), &video, c.mode, McSettings::from_config(&c), &common.out, overlay)?;
            println!("wrote {} maps to {}", paths.len(), common.out.display());
        }
        Command::Eval { common, pred, video } => {
            let c = common.run_config()?;
            let r = commands::cmd_eval(&pred, &video, c.sigma_divisor, &common.out)?;
            let (auc, nss, cc, kl) = (r.auc(), r.nss(), r.cc(), r.kl());
            println!(
                "AUC {:.4} ({:.4})  NSS {:.4} ({:.4})  CC {:.4} ({:.4})  KL {:.4} ({:.4})",
                auc.0, auc.1, nss.0, nss.1, cc.0, cc.1, kl.0, kl.1
            );
        }
        Command::Analyze { common, video, counts } => {
            let c = common.run_config()?;
            let counts = counts.unwrap_or_else(|| commands::DEFAULT_COUNTS.to_vec());
            let r = commands::cmd_analyze(&video, &counts, c.seed, &common.out)?;
            print!("{}", r.to_text());
        }
        Command::Synth { common } => {
            let c = match &common.config {
                Some(p) => SynthConfig::read(p)?,
                None => SynthConfig::default(),
            };
            let dirs = commands::cmd_synth(&c, common.seed.unwrap_or(0), &common.out)?;
            println!("wrote {} videos to {}", dirs.len(), display(&common.out));
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
