//! Command-line surface and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kite_core::saliency::KeyframeMode;

use crate::commands::{cmd_analyze, cmd_keyframes, cmd_narrate, cmd_simulate, AnalyzeInputs, CliError, QuestionType};
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "kite", version, about = "Keyframe-indexed evidence bundles for robot failure analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Motion,
    Uniform,
}

impl From<ModeArg> for KeyframeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Motion => KeyframeMode::Motion,
            ModeArg::Uniform => KeyframeMode::Uniform,
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; flags and environment override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame rate used when the frame source carries no timestamps.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Keyframe budget.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub nms_window: Option<usize>,
    #[arg(long, value_enum)]
    pub keyframe_mode: Option<ModeArg>,
    /// Leave schematic images out of rendering and the prompt.
    #[arg(long)]
    pub no_bev: bool,
    /// Detection backend: URL, record directory, or mock[:<script.json>].
    #[arg(long)]
    pub ovd: Option<String>,
    /// Depth backend: URL, record directory, or mock[:<script.json>].
    #[arg(long)]
    pub depth: Option<String>,
    /// Vision-language backend: chat URL or mock:<script.json>.
    #[arg(long)]
    pub vlm: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated object classes for the detector.
    #[arg(long, value_delimiter = ',')]
    pub vocabulary: Option<Vec<String>>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            fps: self.fps,
            budget: self.budget,
            nms_window: self.nms_window,
            keyframe_mode: self.keyframe_mode.map(Into::into),
            no_bev: self.no_bev,
            vocabulary: self.vocabulary.clone(),
            ovd: self.ovd.clone(),
            depth: self.depth.clone(),
            vlm: self.vlm.clone(),
            out: self.out.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score motion and extract keyframes.
    Keyframes {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the evidence bundle and query the vision-language model.
    Analyze {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        robot_profile: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        question: Option<String>,
        #[arg(long, value_enum, default_value_t = QuestionType::Localize)]
        question_type: QuestionType,
        #[command(flatten)]
        common: Common,
    },
    /// Render a scripted synthetic episode.
    Simulate {
        /// Scenario description (JSON).
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Ask for a causal narrative over an analyzed episode.
    Narrate {
        /// Directory written by `analyze`.
        evidence: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
    Ok(RunConfig::resolve(common.config.as_deref(), &common.overrides(), env)?)
}

/// Execute a parsed command line and return a one-line summary.
pub fn run(cli: Cli, env: impl Fn(&str) -> Option<String>) -> Result<String, CliError> {
    match cli.command {
        Command::Keyframes { frames, common } => {
            let config = resolve(&common, env)?;
            let picked = cmd_keyframes(&frames, &config)?;
            let list: Vec<String> = picked.iter().map(|s| s.frame_index.to_string()).collect();
            Ok(format!("keyframes: {}", list.join(",")))
        }
        Command::Analyze { frames, robot_profile, plan, question, question_type, common } => {
            let config = resolve(&common, env)?;
            let inputs = AnalyzeInputs { frames, robot_profile, plan, question, question_type };
            let report = cmd_analyze(&inputs, &config)?;
            Ok(format!(
                "wrote {} ({} keyframes, {} prompt images{})",
                report.out.display(),
                report.keyframes.len(),
                report.prompt_images,
                if report.answer.is_some() { ", answer.txt" } else { "" }
            ))
        }
        Command::Simulate { spec, common } => {
            let config = resolve(&common, env)?;
            let out = cmd_simulate(&spec, &config)?;
            Ok(format!("wrote episode to {}", out.display()))
        }
        Command::Narrate { evidence, common } => {
            let config = resolve(&common, env)?;
            let path = cmd_narrate(&evidence, &config)?;
            Ok(format!("wrote {}", path.display()))
        }
    }
}
