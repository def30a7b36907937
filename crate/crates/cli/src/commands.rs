//! The four subcommands. Each returns a [`CliError`] carrying its exit status.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use kite_core::bev::{overlay_keyframe, render_storyboard};
use kite_core::evidence::{build_prompt, serialize_context, KiteContext, PromptBundle, SectionOffsets};
use kite_core::ingest::{open_frame_source, FrameSource};
use kite_core::model::{EpisodeEvidence, Keyframe, RobotProfile};
use kite_core::pipeline::{assemble_evidence, choose_keyframes, load_keyframes, PipelineError};
use kite_core::raster::encode_png;
use kite_core::saliency::{SaliencyCurve, SelectedFrame};
use kite_core::synth::{generate_episode, ScenarioSpec};
use kite_core::vlm::{parse_localization, query, request_narrative, top_candidate, VlmError, LOCALIZATION_INSTRUCTION};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_NO_LOCALIZATION: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { exit_code: EXIT_INPUT, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let exit_code = match &e {
            PipelineError::Vlm(VlmError::NoCandidates) => EXIT_NO_LOCALIZATION,
            e if e.is_backend_failure() => EXIT_BACKEND,
            _ => EXIT_INPUT,
        };
        Self { exit_code, message: e.to_string() }
    }
}

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        PipelineError::from(e).into()
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.clone().ok_or_else(|| CliError::input("no output directory given (--out)"))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {what} {}: {e}", path.display())))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn keyframes_csv(keyframes: &[SelectedFrame], src: &FrameSource) -> String {
    let mut out = String::from("ordinal,frame_index,timestamp,reason\n");
    for (k, s) in keyframes.iter().enumerate() {
        let reason = serde_json::to_value(s.reason).expect("reason serializes");
        out.push_str(&format!("{k},{},{:.3},{}\n", s.frame_index, src.timestamp(s.frame_index), reason.as_str().unwrap_or("")));
    }
    out
}

/// Load frames and pick keyframes as configured.
fn select(frames: &Path, config: &RunConfig) -> Result<(FrameSource, SaliencyCurve, Vec<SelectedFrame>)> {
    if !frames.exists() {
        return Err(CliError::input(format!("[ingest] frames path {} does not exist", frames.display())));
    }
    let src = open_frame_source(frames, config.fps).map_err(PipelineError::from)?;
    let (curve, selected) = choose_keyframes(&src, &config.selection())?;
    Ok((src, curve, selected))
}

/// Saliency CSV, keyframe list and the keyframe images at keyframe resolution.
pub fn cmd_keyframes(frames: &Path, config: &RunConfig) -> Result<Vec<SelectedFrame>> {
    let (src, curve, selected) = select(frames, config)?;
    let out = out_dir(config)?;
    write(&out.join("saliency.csv"), curve.to_csv())?;
    write(&out.join("keyframes.csv"), keyframes_csv(&selected, &src))?;
    for (k, kf) in load_keyframes(&src, &selected)?.iter().enumerate() {
        write(&out.join(format!("kf_{k}_rgb.png")), encode_png(&kf.image))?;
    }
    Ok(selected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Detect,
    Identify,
    #[default]
    Localize,
    Explain,
    Correct,
}

impl QuestionType {
    pub fn default_question(self) -> &'static str {
        match self {
            Self::Detect => "Did the robot fail at its task? Answer yes or no, then give a one-sentence reason.",
            Self::Identify => "What kind of failure occurred in this episode?",
            Self::Localize => "",
            Self::Explain => "Explain why the failure happened, citing keyframes.",
            Self::Correct => "How should the robot correct its execution to succeed?",
        }
    }

    /// The question text actually sent; localization always carries the
    /// strict-JSON instruction.
    pub fn compose(self, question: Option<&str>) -> String {
        let q = question.map(str::trim).filter(|q| !q.is_empty());
        match (self, q) {
            (Self::Localize, Some(q)) => format!("{q}\n{LOCALIZATION_INSTRUCTION}"),
            (Self::Localize, None) => LOCALIZATION_INSTRUCTION.to_string(),
            (_, Some(q)) => q.to_string(),
            (t, None) => t.default_question().to_string(),
        }
    }
}

/// Inputs of `analyze` besides the run configuration.
#[derive(Debug, Clone)]
pub struct AnalyzeInputs {
    pub frames: PathBuf,
    pub robot_profile: PathBuf,
    pub plan: Option<PathBuf>,
    pub question: Option<String>,
    pub question_type: QuestionType,
}

/// What `analyze` produced, for callers that want more than the files.
#[derive(Debug)]
pub struct AnalyzeReport {
    pub out: PathBuf,
    pub keyframes: Vec<SelectedFrame>,
    pub prompt_images: usize,
    pub answer: Option<String>,
}

pub fn load_robot(path: &Path) -> Result<RobotProfile> {
    let text = read_text(path, "robot profile")?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("robot profile {}: {e}", path.display())))
}

/// One step per non-empty line, or a JSON array of strings.
pub fn load_plan(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path, "plan")?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| CliError::input(format!("plan {}: {e}", path.display())));
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Serialize)]
struct EvidenceRecord<'a> {
    meta: &'a kite_core::model::VideoMeta,
    robot: &'a RobotProfile,
    plan_steps: &'a Option<Vec<String>>,
    budget: usize,
    bev_enabled: bool,
    keyframes: &'a [Keyframe],
    detections: &'a [kite_core::model::DetectionSet],
    tracks: &'a kite_core::model::TrackSet,
    contacts: &'a [kite_core::model::ContactTransition],
    local_graphs: &'a [kite_core::scene_graph::SceneGraph],
}

fn prompt_record(bundle: &PromptBundle) -> serde_json::Value {
    let images: Vec<serde_json::Value> = bundle
        .images
        .iter()
        .map(|img| {
            let role = serde_json::to_value(img.role).expect("role serializes");
            let file = format!("kf_{}_{}.png", img.keyframe_ordinal, role.as_str().unwrap_or(""));
            json!({"role": role, "keyframe_ordinal": img.keyframe_ordinal, "file": file})
        })
        .collect();
    json!({"images": images, "question": bundle.question, "text": bundle.text})
}

fn write_evidence(out: &Path, e: &EpisodeEvidence, ctx: &KiteContext, bundle: &PromptBundle) -> Result<()> {
    let overlays: Vec<RgbImage> =
        e.keyframes.iter().zip(&e.detections).enumerate().map(|(k, (kf, d))| overlay_keyframe(kf, k, d)).collect();
    for (k, img) in overlays.iter().enumerate() {
        write(&out.join(format!("kf_{k}_rgb.png")), encode_png(img))?;
    }
    for (k, png) in e.bev_images.iter().enumerate() {
        write(&out.join(format!("kf_{k}_bev.png")), png)?;
    }
    let bev: Option<Vec<RgbImage>> = e.bev_enabled.then(|| {
        e.bev_images.iter().map(|png| image::load_from_memory(png).expect("own PNG decodes").to_rgb8()).collect()
    });
    let storyboard = render_storyboard(&overlays, bev.as_deref()).map_err(PipelineError::from)?;
    write(&out.join("storyboard.png"), storyboard)?;
    write(&out.join("kite_context.txt"), &ctx.text)?;
    write(&out.join("prompt.json"), pretty(&prompt_record(bundle)))?;
    write(&out.join("scene_graph.json"), pretty(&e.global_graph))?;
    let record = EvidenceRecord {
        meta: &e.meta,
        robot: &e.robot,
        plan_steps: &e.plan_steps,
        budget: e.budget,
        bev_enabled: e.bev_enabled,
        keyframes: &e.keyframes,
        detections: &e.detections,
        tracks: &e.tracks,
        contacts: &e.contacts,
        local_graphs: &e.local_graphs,
    };
    write(&out.join("evidence.json"), pretty(&record))
}

/// Full pipeline: keyframes, perception, evidence files, and (when a VLM is
/// configured) the answer.
pub fn cmd_analyze(inputs: &AnalyzeInputs, config: &RunConfig) -> Result<AnalyzeReport> {
    let robot = load_robot(&inputs.robot_profile)?;
    let plan = inputs.plan.as_deref().map(load_plan).transpose()?;
    let (src, curve, selected) = select(&inputs.frames, config)?;
    let out = out_dir(config)?;
    write(&out.join("saliency.csv"), curve.to_csv())?;
    write(&out.join("keyframes.csv"), keyframes_csv(&selected, &src))?;

    let params = config.pipeline_params();
    let detector = config.detection_ref(params.vocabulary_for(&robot))?.connect().map_err(PipelineError::from)?;
    let depth = config.depth_ref()?.connect().map_err(PipelineError::from)?;
    let keyframes = load_keyframes(&src, &selected)?;
    let evidence = assemble_evidence(&src, robot, plan, keyframes, detector.as_ref(), depth.as_ref(), &params)?;

    let ctx = serialize_context(&evidence).map_err(PipelineError::from)?;
    let question = inputs.question_type.compose(inputs.question.as_deref());
    let bundle = build_prompt(&ctx, &question, &evidence).map_err(PipelineError::from)?;
    write_evidence(&out, &evidence, &ctx, &bundle)?;

    let mut report = AnalyzeReport { out: out.clone(), keyframes: selected, prompt_images: bundle.images.len(), answer: None };
    let Some(vlm_ref) = config.vlm_ref() else {
        return Ok(report);
    };
    let vlm = vlm_ref.connect()?;
    let answer = query(vlm.as_ref(), &bundle)?;
    write(&out.join("answer.txt"), &answer)?;
    report.answer = Some(answer.clone());

    if inputs.question_type == QuestionType::Localize {
        let valid: BTreeSet<i64> = (0..src.frame_count() as i64).collect();
        let result = parse_localization(&answer, &valid)?;
        let top = top_candidate(&result).ok();
        let record = json!({"candidates": result.candidates, "top": top, "dropped_frames": result.dropped_frames});
        write(&out.join("localization.json"), pretty(&record))?;
        if top.is_none() {
            return Err(CliError { exit_code: EXIT_NO_LOCALIZATION, message: "no localization: the model returned no usable candidates".into() });
        }
    }
    Ok(report)
}

/// Render a scripted episode, with a `run.json` config naming its vocabulary and frame rate.
pub fn cmd_simulate(spec_path: &Path, config: &RunConfig) -> Result<PathBuf> {
    let text = read_text(spec_path, "scenario spec")?;
    let mut spec = ScenarioSpec::from_json(&text).map_err(PipelineError::from)?;
    if let Some(seed) = config.seed {
        spec.seed = seed;
    }
    let out = out_dir(config)?;
    generate_episode(&spec, &out).map_err(PipelineError::from)?;
    let run = json!({"fps": spec.fps, "vocabulary": spec.vocabulary()});
    write(&out.join("run.json"), pretty(&run))?;
    Ok(out)
}

/// Narrative over an existing evidence directory; writes `narrative.txt`
/// and the extracted fields as `narrative.json`.
pub fn cmd_narrate(evidence_dir: &Path, config: &RunConfig) -> Result<PathBuf> {
    let text = read_text(&evidence_dir.join("kite_context.txt"), "context")?;
    let storyboard = fs::read(evidence_dir.join("storyboard.png"))
        .map_err(|e| CliError::input(format!("cannot read storyboard in {}: {e}", evidence_dir.display())))?;
    let vlm_ref = config.vlm_ref().ok_or_else(|| CliError::input("no VLM configured (--vlm)"))?;
    let vlm = vlm_ref.connect()?;
    let ctx = KiteContext { text, offsets: SectionOffsets::default() };
    let narrative = request_narrative(vlm.as_ref(), &ctx, &storyboard)?;
    let out = match &config.out {
        Some(_) => out_dir(config)?,
        None => evidence_dir.to_path_buf(),
    };
    write(&out.join("narrative.txt"), &narrative.text)?;
    write(&out.join("narrative.json"), pretty(&narrative))?;
    Ok(out.join("narrative.txt"))
}
