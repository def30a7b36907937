//! The line-oriented KITE context string and prompt bundle assembly.
//!
//! Context grammar, one record per line, sections in this order:
//!
//! ```text
//! [ROBOT] <name>; arms=<n>; grippers=<n>; ee=<csv>; sensors=<csv>; workspace=<note>[; constraints=<note>]
//! [PLAN] <step> | <step> | ...                      (only when a plan is given)
//! [KF <frame_index> @ <t.xx>s] dets=<class>#<id>(<s.xx>),...
//! [CONTACT <k>-><k+1>] GAIN|LOSS|STABLE
//! [GLOBAL_SCENE]
//! obj#<a> <class_a> <relation> obj#<b> <class_b> (persist <n>/<M>)
//! ```

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::overlay_keyframe;
use crate::model::{validate_evidence, ContactLabel, EpisodeEvidence};
use crate::raster::encode_png;

pub const BEV_DISCLAIMER: &str =
    "The pseudo-BEV images are schematic top-down layouts, not to scale; use them only for relative spatial reasoning.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("INVALID_EVIDENCE: {0}")]
    InvalidEvidence(String),
    #[error("GRAMMAR_VIOLATION at line {line}: {reason}")]
    GrammarViolation { line: usize, reason: String },
    #[error("EMPTY_QUESTION: question text is empty")]
    EmptyQuestion,
    #[error("MISSING_IMAGES: {0}")]
    MissingImages(String),
}

impl EvidenceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidEvidence(_) => "INVALID_EVIDENCE",
            Self::GrammarViolation { .. } => "GRAMMAR_VIOLATION",
            Self::EmptyQuestion => "EMPTY_QUESTION",
            Self::MissingImages(_) => "MISSING_IMAGES",
        }
    }
}

/// Byte offsets of each section's first line within the context text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionOffsets {
    pub robot: usize,
    pub plan: Option<usize>,
    pub keyframes: Vec<usize>,
    pub contacts: Vec<usize>,
    pub global_scene: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KiteContext {
    pub text: String,
    pub offsets: SectionOffsets,
}

fn clean(field: &str) -> String {
    field.replace(['\r', '\n'], " ")
}

fn csv(items: &[String]) -> String {
    items.iter().map(|s| clean(s)).collect::<Vec<_>>().join(",")
}

pub fn serialize_context(e: &EpisodeEvidence) -> Result<KiteContext, EvidenceError> {
    let violations = validate_evidence(e);
    if !violations.is_empty() {
        let joined = violations.iter().map(|v| format!("{}: {}", v.code.as_str(), v.detail)).collect::<Vec<_>>().join("; ");
        return Err(EvidenceError::InvalidEvidence(joined));
    }
    let mut text = String::new();
    let mut offsets = SectionOffsets::default();

    let r = &e.robot;
    offsets.robot = text.len();
    let _ = write!(
        text,
        "[ROBOT] {}; arms={}; grippers={}; ee={}; sensors={}; workspace={}",
        clean(&r.name),
        r.num_arms,
        r.num_grippers,
        csv(&r.end_effector_types),
        csv(&r.sensors),
        clean(&r.workspace_note)
    );
    if !r.constraints_note.trim().is_empty() {
        let _ = write!(text, "; constraints={}", clean(&r.constraints_note));
    }
    text.push('\n');

    if let Some(steps) = &e.plan_steps {
        offsets.plan = Some(text.len());
        let steps: Vec<String> = steps.iter().map(|s| clean(s).replace('|', "/")).collect();
        let _ = writeln!(text, "[PLAN] {}", steps.join(" | "));
    }

    for (kf, dets) in e.keyframes.iter().zip(&e.detections) {
        offsets.keyframes.push(text.len());
        let tags: Vec<String> = dets
            .iter()
            .map(|d| format!("{}({:.2})", clean(&d.tag()).replace(',', ";"), d.confidence))
            .collect();
        let _ = writeln!(text, "[KF {} @ {:.2}s] dets={}", kf.frame_index, kf.timestamp, tags.join(","));
    }

    for c in &e.contacts {
        offsets.contacts.push(text.len());
        let _ = writeln!(text, "[CONTACT {}->{}] {}", c.from_keyframe, c.to_keyframe, c.label.as_str());
    }

    offsets.global_scene = text.len();
    text.push_str("[GLOBAL_SCENE]\n");
    let g = &e.global_graph;
    for pe in &g.edges {
        let class = |id| clean(g.class_of(id).unwrap_or("unknown"));
        let _ = writeln!(
            text,
            "obj#{} {} {} obj#{} {} (persist {}/{})",
            pe.edge.subject,
            class(pe.edge.subject),
            pe.edge.relation.as_str(),
            pe.edge.object,
            class(pe.edge.object),
            pe.persistence,
            e.keyframes.len()
        );
    }
    Ok(KiteContext { text, offsets })
}

/// Structural summary recovered from context text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextEcho {
    pub robot_name: String,
    pub plan_steps: Option<Vec<String>>,
    /// `(frame_index, timestamp)` per keyframe tag.
    pub keyframes: Vec<(usize, f64)>,
    pub detection_tags: Vec<Vec<String>>,
    pub contacts: Vec<ContactLabel>,
    pub edge_count: usize,
}

static ROBOT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\[ROBOT\] (.*?); arms=(\d+); grippers=(\d+); ee=(.*); sensors=(.*); workspace=(.*)$").unwrap()
});
static PLAN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[PLAN\] (.*)$").unwrap());
static KF_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[KF (\d+) @ (\d+\.\d{2})s\] dets=(.*)$").unwrap());
static DET_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(.+)#(\d+|\?)\(([01]\.\d{2})\)$").unwrap());
static CONTACT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[CONTACT (\d+)->(\d+)\] (\S+)$").unwrap());
static EDGE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^obj#(\d+) (.+?) (left_of|above|in_front_of) obj#(\d+) (.+) \(persist (\d+)/(\d+)\)$").unwrap()
});

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Stage {
    Start,
    Robot,
    Plan,
    Keyframes,
    Contacts,
    Global,
}

pub fn parse_context(text: &str) -> Result<ContextEcho, EvidenceError> {
    let mut echo = ContextEcho::default();
    let mut stage = Stage::Start;
    let fail = |line: usize, reason: &str| EvidenceError::GrammarViolation { line, reason: reason.to_string() };
    let advance = |stage: &mut Stage, next: Stage, line: usize| -> Result<(), EvidenceError> {
        if next < *stage || (next == *stage && matches!(next, Stage::Robot | Stage::Plan | Stage::Global)) {
            return Err(fail(line, "section out of order"));
        }
        if *stage == Stage::Start && next != Stage::Robot {
            return Err(fail(line, "context must begin with [ROBOT]"));
        }
        *stage = next;
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if stage == Stage::Global && !line.starts_with('[') {
            let caps = EDGE_RE.captures(line).ok_or_else(|| fail(n, "malformed scene edge"))?;
            let (persist, total): (usize, usize) = (caps[6].parse().unwrap(), caps[7].parse().unwrap());
            if persist == 0 || persist > total {
                return Err(fail(n, "persistence out of range"));
            }
            echo.edge_count += 1;
        } else if line.starts_with("[ROBOT]") {
            advance(&mut stage, Stage::Robot, n)?;
            let caps = ROBOT_RE.captures(line).ok_or_else(|| fail(n, "malformed [ROBOT] line"))?;
            echo.robot_name = caps[1].to_string();
        } else if line.starts_with("[PLAN]") {
            advance(&mut stage, Stage::Plan, n)?;
            let caps = PLAN_RE.captures(line).ok_or_else(|| fail(n, "malformed [PLAN] line"))?;
            echo.plan_steps = Some(caps[1].split(" | ").map(str::to_string).collect());
        } else if line.starts_with("[KF") {
            advance(&mut stage, Stage::Keyframes, n)?;
            let caps = KF_RE.captures(line).ok_or_else(|| fail(n, "malformed [KF] tag"))?;
            let idx: usize = caps[1].parse().map_err(|_| fail(n, "keyframe index"))?;
            let t: f64 = caps[2].parse().map_err(|_| fail(n, "timestamp"))?;
            let mut tags = Vec::new();
            if !caps[3].is_empty() {
                for item in caps[3].split(',') {
                    let d = DET_RE.captures(item).ok_or_else(|| fail(n, "malformed detection tag"))?;
                    tags.push(format!("{}#{}", &d[1], &d[2]));
                }
            }
            echo.keyframes.push((idx, t));
            echo.detection_tags.push(tags);
        } else if line.starts_with("[CONTACT") {
            advance(&mut stage, Stage::Contacts, n)?;
            let caps = CONTACT_RE.captures(line).ok_or_else(|| fail(n, "malformed [CONTACT] tag"))?;
            let (a, b): (usize, usize) = (caps[1].parse().unwrap(), caps[2].parse().unwrap());
            if b != a + 1 || a != echo.contacts.len() {
                return Err(fail(n, "contact pair out of sequence"));
            }
            let label = ContactLabel::parse(&caps[3]).ok_or_else(|| fail(n, "unknown contact token"))?;
            echo.contacts.push(label);
        } else if line == "[GLOBAL_SCENE]" {
            advance(&mut stage, Stage::Global, n)?;
        } else {
            return Err(fail(n, "unrecognized line"));
        }
    }
    if stage != Stage::Global {
        return Err(fail(text.lines().count() + 1, "missing [GLOBAL_SCENE] section"));
    }
    if !echo.keyframes.is_empty() && echo.contacts.len() != echo.keyframes.len() - 1 {
        return Err(fail(text.lines().count(), "contact count does not match keyframe count"));
    }
    Ok(echo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Rgb,
    Bev,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptImage {
    pub role: ImageRole,
    pub keyframe_ordinal: usize,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    /// RGB overlay then BEV per keyframe; RGB only when BEV rendering is off.
    pub images: Vec<PromptImage>,
    pub text: String,
    pub question: String,
}

/// Interleave keyframe overlays with their BEVs and compose the prompt text:
/// context, disclaimer line, question.
pub fn build_prompt(ctx: &KiteContext, question: &str, e: &EpisodeEvidence) -> Result<PromptBundle, EvidenceError> {
    if question.trim().is_empty() {
        return Err(EvidenceError::EmptyQuestion);
    }
    let n = e.keyframes.len();
    if e.detections.len() != n {
        return Err(EvidenceError::MissingImages(format!("{} detection sets for {n} keyframes", e.detections.len())));
    }
    if e.bev_enabled && e.bev_images.len() != n {
        return Err(EvidenceError::MissingImages(format!("{} BEV images for {n} keyframes", e.bev_images.len())));
    }
    if let Some(k) = e.keyframes.iter().position(|kf| kf.image.width() == 0) {
        return Err(EvidenceError::MissingImages(format!("keyframe {k} has no pixels")));
    }
    let mut images = Vec::with_capacity(2 * n);
    for (k, (kf, dets)) in e.keyframes.iter().zip(&e.detections).enumerate() {
        images.push(PromptImage { role: ImageRole::Rgb, keyframe_ordinal: k, png: encode_png(&overlay_keyframe(kf, k, dets)) });
        if e.bev_enabled {
            images.push(PromptImage { role: ImageRole::Bev, keyframe_ordinal: k, png: e.bev_images[k].clone() });
        }
    }
    let mut text = ctx.text.clone();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(BEV_DISCLAIMER);
    text.push('\n');
    text.push_str(question);
    Ok(PromptBundle { images, text, question: question.to_string() })
}
