//! Acceptance suite. Every criterion runs, prints one `PASS`/`FAIL` line, and
//! the test fails at the end if any criterion failed.
//!
//! Run with `cargo test -p kite-cli --test acceptance -- --nocapture` to see
//! the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use kite_cli::{cmd_analyze, cmd_simulate, AnalyzeInputs, Overrides, QuestionType, RunConfig};
use kite_core::bev::{overlay_keyframe, radius_for_confidence, render_storyboard, BevSpec};
use kite_core::contact::{classify_contact, classify_deltas, episode_contacts, ContactParams};
use kite_core::evidence::{parse_context, serialize_context};
use kite_core::fixtures;
use kite_core::ingest::open_frame_source;
use kite_core::model::{
    ContactLabel, DepthStats, Detection, DetectionSet, EpisodeEvidence, Keyframe, RobotProfile, SelectionReason, VideoMeta,
};
use kite_core::perception::backend::{DepthScript, DetectionScript, MockDepth, MockDetector, WireDetection};
use kite_core::perception::link_tracks;
use kite_core::pipeline::{assemble_evidence, choose_keyframes, load_keyframes, PipelineParams};
use kite_core::saliency::select::select_uniform;
use kite_core::saliency::KeyframeSelectionParams;
use kite_core::scene_graph::{aggregate_global, build_local_graph, CameraModel, DEFAULT_TOLERANCE};
use kite_core::synth::oracle::{oracle_label, oracle_relations};
use kite_core::synth::{generate_episode, scenarios, ActorSpec, ScenarioSpec, Waypoint};
use kite_core::vlm::{parse_localization, top_candidate, Candidate, VlmError};
use kite_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name)
}

fn wire(b: [f64; 4], label: &str, score: f64) -> WireDetection {
    WireDetection { bbox: b, label: label.into(), score }
}

fn robot() -> RobotProfile {
    RobotProfile {
        name: "synthetic-arm".into(),
        num_arms: 1,
        num_grippers: 1,
        gripper_class_labels: vec!["gripper".into()],
        ..RobotProfile::default()
    }
}

fn keyframe_budget_and_scaling() -> Outcome {
    let started = Instant::now();
    let mut notes = Vec::new();
    for t in [10usize, 50, 200, 1000] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (paths, _) = generate_episode(&scenarios::scaling(t, 7), dir.path()).map_err(|e| e.to_string())?;
        let src = open_frame_source(&paths.frames, 10.0).map_err(|e| e.to_string())?;
        let (_, selected) = choose_keyframes(&src, &KeyframeSelectionParams::default()).map_err(|e| e.to_string())?;
        let want = t.min(8);
        let idx: Vec<usize> = selected.iter().map(|s| s.frame_index).collect();
        ensure(idx.len() == want, || format!("T={t}: {} keyframes, expected {want}", idx.len()))?;
        ensure(idx.windows(2).all(|w| w[0] < w[1]), || format!("T={t}: not sorted/unique: {idx:?}"))?;

        let detector = MockDetector::new(DetectionScript {
            default: vec![wire([100.0, 100.0, 250.0, 250.0], "gripper", 0.9), wire([260.0, 100.0, 400.0, 250.0], "cup", 0.9)],
            ..DetectionScript::default()
        });
        let depth = MockDepth::new(DepthScript::default());
        let keyframes = load_keyframes(&src, &selected).map_err(|e| e.to_string())?;
        let params = PipelineParams { vocabulary: vec!["cup".into()], ..PipelineParams::default() };
        assemble_evidence(&src, robot(), None, keyframes, &detector, &depth, &params).map_err(|e| e.to_string())?;
        ensure(detector.calls() == want && depth.calls() == want, || {
            format!("T={t}: {} detect / {} depth calls, expected {want}", detector.calls(), depth.calls())
        })?;
        notes.push(format!("T={t}:{want}"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} calls each; {secs:.1}s total", notes.join(" ")))
}

fn burst_hit(frames: &[usize], (s, e): (usize, usize)) -> bool {
    frames.iter().any(|&f| s <= f && f <= e)
}

fn motion_peak_recall() -> Outcome {
    let results: Vec<Result<(usize, bool), String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let spec = scenarios::burst(seed);
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let (paths, _) = generate_episode(&spec, dir.path()).map_err(|e| e.to_string())?;
            let src = open_frame_source(&paths.frames, spec.fps).map_err(|e| e.to_string())?;
            let (_, selected) = choose_keyframes(&src, &KeyframeSelectionParams::default()).map_err(|e| e.to_string())?;
            let peaks: Vec<usize> =
                selected.iter().filter(|s| s.reason == SelectionReason::MotionPeak).map(|s| s.frame_index).collect();
            let missed: Vec<_> = spec.motion_bursts.iter().filter(|&&b| !burst_hit(&peaks, b)).collect();
            if !missed.is_empty() {
                return Err(format!("seed {seed}: bursts {missed:?} missed by peaks {peaks:?}"));
            }
            let uniform: Vec<usize> = select_uniform(spec.duration_frames, 8).iter().map(|s| s.frame_index).collect();
            let uniform_missed = spec.motion_bursts.iter().any(|&b| !burst_hit(&uniform, b));
            Ok((spec.motion_bursts.len(), uniform_missed))
        })
        .collect();
    let mut bursts = 0;
    let mut uniform_miss = 0;
    for r in results {
        let (n, missed) = r?;
        bursts += n;
        uniform_miss += usize::from(missed);
    }
    ensure(uniform_miss >= 5, || format!("uniform mode missed a burst in only {uniform_miss}/20 scenarios"))?;
    Ok(format!("{bursts}/{bursts} bursts hit by motion peaks; uniform misses in {uniform_miss}/20 scenarios"))
}

fn square(cx: f64, cy: f64, size: f64, class: &str, id: u32) -> Detection {
    let mut d = Detection::new(BBox::centered(cx, cy, size), class, 0.9);
    d.instance_id = Some(id);
    d
}

fn contact_rule_equivalence() -> Outcome {
    let grid: Vec<f64> = (-6..=6).map(|i| i as f64 / 20.0).collect();
    let mut cells = 0;
    for &di in &grid {
        for &dd in &grid {
            let got = classify_deltas(di, dd, 0.1, 0.15);
            let want = oracle_label(di, dd);
            ensure(got == want, || format!("grid cell ({di}, {dd}): {got:?} vs oracle {want:?}"))?;
            cells += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(169);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let params = ContactParams::default();
    for trial in 0..1000 {
        let mut actor = |label: &str, is_gripper: bool, near: Option<(f64, f64)>| {
            let size = rng.random_range(60.0..220.0);
            let (x0, y0) = match near {
                Some((x, y)) => (x + rng.random_range(-150.0..150.0), y + rng.random_range(-150.0..150.0)),
                None => (rng.random_range(80.0..432.0), rng.random_range(80.0..432.0)),
            };
            let wp = |frame, cx: f64, cy: f64| Waypoint { frame, cx: cx.clamp(0.0, 512.0), cy: cy.clamp(0.0, 512.0), size, rel_depth: 0.5 };
            let (x1, y1) = (x0 + rng.random_range(-160.0..160.0), y0 + rng.random_range(-160.0..160.0));
            ActorSpec { class_label: label.into(), is_gripper, waypoints: vec![wp(0, x0, y0), wp(1, x1, y1)] }
        };
        let object = actor("cup", false, None);
        let anchor = (object.waypoints[0].cx, object.waypoints[0].cy);
        let gripper = actor("gripper", true, Some(anchor));
        let spec = ScenarioSpec {
            duration_frames: 2,
            width: 64,
            height: 64,
            fps: 10.0,
            actors: vec![gripper.clone(), object.clone()],
            motion_bursts: vec![],
            failure_frame: None,
            seed: trial,
        };
        let want = kite_core::synth::oracle::oracle_contacts(&spec, &[0, 1])[0].label;
        let det = |a: &ActorSpec, f: usize, id| {
            let w = &a.waypoints[f];
            square(w.cx, w.cy, w.size, &a.class_label, id)
        };
        let (g0, o0, g1, o1) = (det(&gripper, 0, 1), det(&object, 0, 2), det(&gripper, 1, 1), det(&object, 1, 2));
        let got = classify_contact(0, (&g0, &o0), (&g1, &o1), &params).label;
        ensure(got == want, || format!("random pair {trial}: {got:?} vs oracle {want:?}"))?;
        *counts.entry(got.as_str()).or_default() += 1;
    }
    Ok(format!("{cells} grid cells and 1000 random pairs agree ({counts:?})"))
}

/// Centroid lift written out independently: x and y scale with depth + 0.1.
fn reference_centroid(d: &Detection) -> [f64; 3] {
    let z = d.depth_stats.unwrap().median_rel_depth;
    let cx = (d.bbox.x_min + d.bbox.x_max) / 2.0;
    let cy = (d.bbox.y_min + d.bbox.y_max) / 2.0;
    [(cx - 256.0) / 512.0 * (z + 0.1), (cy - 256.0) / 512.0 * (z + 0.1), z]
}

fn with_depth(mut d: Detection, z: f64) -> Detection {
    d.depth_stats = Some(DepthStats { median_rel_depth: z, mean_rel_depth: z });
    d
}

fn relation_table(dets: &[Detection]) -> Result<BTreeSet<(usize, usize, &'static str)>, String> {
    let g = build_local_graph(0, dets, &CameraModel::default(), DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    let index = |id: u32| dets.iter().position(|d| d.instance_id == Some(id)).unwrap();
    Ok(g.edges.iter().map(|e| (index(e.subject), index(e.object), e.relation.as_str())).collect())
}

fn relation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs = 0;
    let mut edges = 0;
    for case in 0..100 {
        let dets: Vec<Detection> = (0..5)
            .map(|i| {
                let (cx, cy, s) = (rng.random_range(20.0..492.0), rng.random_range(20.0..492.0), rng.random_range(10.0..80.0));
                with_depth(square(cx, cy, s, "obj", i + 1), rng.random_range(0.0..1.0))
            })
            .collect();
        let got = relation_table(&dets)?;
        let centroids: Vec<[f64; 3]> = dets.iter().map(reference_centroid).collect();
        let want = oracle_relations(&centroids, DEFAULT_TOLERANCE);
        ensure(got == want, || format!("configuration {case}: pipeline {got:?} vs oracle {want:?}"))?;
        for &(i, j, r) in &got {
            ensure(!got.contains(&(j, i, r)), || format!("configuration {case}: {r} holds both ways for {i},{j}"))?;
        }
        pairs += 20;
        edges += got.len();
    }
    let same: Vec<Detection> = (0..5).map(|i| with_depth(square(256.0, 256.0, 40.0, "obj", i + 1), 0.5)).collect();
    ensure(relation_table(&same)?.is_empty(), || "coincident nodes produced relations".into())?;
    let row: Vec<Detection> = (0..5).map(|i| with_depth(square(60.0 + 90.0 * i as f64, 256.0, 40.0, "obj", i + 1), 0.5)).collect();
    let row_rel = relation_table(&row)?;
    ensure(row_rel.len() == 10 && row_rel.iter().all(|r| r.2 == "left_of"), || format!("collinear row gave {row_rel:?}"))?;
    Ok(format!("100 configurations, {pairs} ordered pairs, {edges} edges, 0 mismatches"))
}

fn renderer_determinism() -> Outcome {
    let run = || {
        let e = fixtures::evidence_with_keyframes(3);
        let rgb: Vec<RgbImage> = e.keyframes.iter().zip(&e.detections).enumerate().map(|(k, (kf, d))| overlay_keyframe(kf, k, d)).collect();
        let bev: Vec<RgbImage> = e.bev_images.iter().map(|b| image::load_from_memory(b).unwrap().to_rgb8()).collect();
        let board = render_storyboard(&rgb, Some(&bev)).unwrap();
        (e.bev_images, board)
    };
    let (bev_a, board_a) = run();
    let (bev_b, board_b) = run();
    ensure(bev_a == bev_b && board_a == board_b, || "two runs differ".into())?;
    for (k, png) in bev_a.iter().enumerate() {
        let name = format!("bev_kf{k}.png");
        let want = fs::read(golden(&name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(&want == png, || format!("{name} differs from golden"))?;
    }
    let want = fs::read(golden("storyboard.png")).map_err(|e| e.to_string())?;
    ensure(want == board_a, || "storyboard differs from golden".into())?;
    let spec = BevSpec::default();
    let radii: Vec<u32> = [0.0, 0.2, 0.5, 1.0].iter().map(|&s| radius_for_confidence(s, &spec).unwrap()).collect();
    ensure(radii == [3, 3, 5, 10], || format!("radii {radii:?}"))?;
    Ok("3 BEVs + storyboard byte-equal to goldens; radii [3, 3, 5, 10]".into())
}

const CLASSES: [&str; 5] = ["gripper", "cup", "bowl", "sponge", "lid"];

fn random_bundle(rng: &mut ChaCha8Rng, with_plan: bool) -> EpisodeEvidence {
    let n = rng.random_range(1..=8usize);
    let mut frame = 0usize;
    let keyframes: Vec<Keyframe> = (0..n)
        .map(|_| {
            frame += rng.random_range(1..40usize);
            Keyframe {
                frame_index: frame,
                timestamp: frame as f64 / 10.0,
                image: RgbImage::new(512, 512),
                selection_reason: SelectionReason::MotionPeak,
            }
        })
        .collect();
    let mut detections: Vec<DetectionSet> = (0..n)
        .map(|_| {
            (0..rng.random_range(0..=5usize))
                .map(|_| {
                    let (x, y) = (rng.random_range(0.0..400.0), rng.random_range(0.0..400.0));
                    let (w, h) = (rng.random_range(10.0..112.0), rng.random_range(10.0..112.0));
                    let class = CLASSES[rng.random_range(0..CLASSES.len())];
                    let conf = (rng.random_range(0.0..1.0f64) * 100.0).round() / 100.0;
                    with_depth(Detection::new(BBox::new(x, y, x + w, y + h), class, conf), rng.random_range(0.0..1.0))
                })
                .collect()
        })
        .collect();
    let tracks = link_tracks(&mut detections);
    let profile = RobotProfile {
        name: format!("arm-{}", rng.random_range(0..1000)),
        num_arms: 1,
        num_grippers: 1,
        end_effector_types: vec!["parallel-jaw".into()],
        sensors: vec!["front RGB".into()],
        workspace_note: "bench, with | pipes".into(),
        constraints_note: if rng.random_bool(0.5) { "no contact with lid".into() } else { String::new() },
        gripper_class_labels: vec!["gripper".into()],
    };
    let contacts = episode_contacts(&detections, &tracks, &profile, &ContactParams::default());
    let local_graphs: Vec<_> =
        detections.iter().enumerate().map(|(k, d)| build_local_graph(k, d, &CameraModel::default(), DEFAULT_TOLERANCE).unwrap()).collect();
    let global_graph = aggregate_global(&local_graphs, &tracks);
    let plan = with_plan.then(|| (0..rng.random_range(1..5)).map(|i| format!("step {i} | part")).collect());
    EpisodeEvidence {
        meta: VideoMeta::new(frame + 1, 640, 480, 10.0, "random").unwrap(),
        robot: profile,
        plan_steps: plan,
        budget: 8,
        keyframes,
        detections,
        tracks,
        contacts,
        local_graphs,
        global_graph,
        bev_enabled: false,
        bev_images: Vec::new(),
    }
}

fn serializer_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for case in 0..50 {
        let e = random_bundle(&mut rng, case % 5 != 0);
        let ctx = serialize_context(&e).map_err(|err| format!("bundle {case}: {err}"))?;
        let echo = parse_context(&ctx.text).map_err(|err| format!("bundle {case}: {err}"))?;
        ensure(echo.robot_name == e.robot.name, || format!("bundle {case}: robot name"))?;
        let plan = e.plan_steps.as_ref().map(|p| p.iter().map(|s| s.replace('|', "/")).collect::<Vec<_>>());
        ensure(echo.plan_steps == plan, || format!("bundle {case}: plan {:?}", echo.plan_steps))?;
        let kfs: Vec<(usize, f64)> = e.keyframes.iter().map(|k| (k.frame_index, (k.timestamp * 100.0).round() / 100.0)).collect();
        ensure(echo.keyframes == kfs, || format!("bundle {case}: keyframes {:?} vs {kfs:?}", echo.keyframes))?;
        let tags: Vec<Vec<String>> = e.detections.iter().map(|s| s.iter().map(Detection::tag).collect()).collect();
        ensure(echo.detection_tags == tags, || format!("bundle {case}: detection tags"))?;
        let labels: Vec<ContactLabel> = e.contacts.iter().map(|c| c.label).collect();
        ensure(echo.contacts == labels, || format!("bundle {case}: contacts"))?;
        ensure(echo.edge_count == e.global_graph.edges.len(), || format!("bundle {case}: edge count"))?;
        ensure((e.plan_steps.is_some()) == ctx.text.contains("[PLAN]"), || format!("bundle {case}: [PLAN] presence"))?;
    }
    let ctx = serialize_context(&fixtures::evidence()).map_err(|e| e.to_string())?;
    let want = fs::read_to_string(golden("context.txt")).map_err(|e| e.to_string())?;
    ensure(ctx.text == want, || "fixture context differs from golden".into())?;
    let mut no_plan = fixtures::evidence();
    no_plan.plan_steps = None;
    let text = serialize_context(&no_plan).map_err(|e| e.to_string())?.text;
    ensure(!text.contains("[PLAN]"), || "no-plan bundle contains [PLAN]".into())?;
    Ok("50 random bundles round-trip; golden context byte-exact; no-plan has no [PLAN]".into())
}

fn c(frame_num: i64, confidence: f64) -> Candidate {
    Candidate { frame_num, confidence }
}

fn localization_parsing() -> Outcome {
    let valid: BTreeSet<i64> = (0..50).collect();
    let schema = r#"{"candidates":[{"frame_num":4,"confidence":0.9},{"frame_num":2,"confidence":0.4}]}"#;
    let expected = vec![c(4, 0.9), c(2, 0.4)];
    type Want = Result<Vec<Candidate>, &'static str>;
    let cases: Vec<(&str, String, Want)> = vec![
        ("strict schema instance", schema.to_string(), Ok(expected.clone())),
        ("fenced", format!("```json\n{schema}\n```"), Ok(expected.clone())),
        ("prose-wrapped", format!("The arm slips at frame 4.\n{schema}\nHope this helps."), Ok(expected.clone())),
        ("fenced with prose", format!("Answer:\n```json\n{schema}\n```\nDone."), Ok(expected.clone())),
        (
            "confidence clamping",
            r#"{"candidates":[{"frame_num":7,"confidence":1.4},{"frame_num":8,"confidence":-0.3}]}"#.into(),
            Ok(vec![c(7, 1.0), c(8, 0.0)]),
        ),
        (
            "more than three candidates",
            r#"{"candidates":[{"frame_num":1,"confidence":0.1},{"frame_num":2,"confidence":0.5},{"frame_num":3,"confidence":0.3},{"frame_num":4,"confidence":0.7},{"frame_num":5,"confidence":0.2}]}"#.into(),
            Ok(vec![c(4, 0.7), c(2, 0.5), c(3, 0.3)]),
        ),
        (
            "equal confidence orders by frame",
            r#"{"candidates":[{"frame_num":7,"confidence":0.5},{"frame_num":3,"confidence":0.5}]}"#.into(),
            Ok(vec![c(3, 0.5), c(7, 0.5)]),
        ),
        (
            "invalid frame_num dropped",
            r#"{"candidates":[{"frame_num":99,"confidence":0.9},{"frame_num":-1,"confidence":0.8},{"frame_num":12,"confidence":0.3}]}"#.into(),
            Ok(vec![c(12, 0.3)]),
        ),
        ("non-integer frame_num", r#"{"candidates":[{"frame_num":"4","confidence":0.9}]}"#.into(), Err("SCHEMA_VIOLATION")),
        ("wrong field name", r#"{"candidates":[{"frame":4,"confidence":0.9}]}"#.into(), Err("SCHEMA_VIOLATION")),
        ("no JSON at all", "I could not find a failure.".into(), Err("NO_JSON_FOUND")),
        ("truncated JSON", r#"```json\n{"candidates":[{"frame_num":4,"confidence":0.9"#.into(), Err("NO_JSON_FOUND")),
    ];
    for (name, raw, want) in &cases {
        let got = parse_localization(raw, &valid);
        match (got, want) {
            (Ok(r), Ok(w)) => {
                ensure(&r.candidates == w, || format!("{name}: got {:?}", r.candidates))?;
                let again = parse_localization(&r.to_json(), &valid).map_err(|e| format!("{name}: reparse {e}"))?;
                ensure(again.candidates == r.candidates, || format!("{name}: not idempotent"))?;
            }
            (Err(e), Err(code)) => ensure(e.code() == *code, || format!("{name}: error {} instead of {code}", e.code()))?,
            (got, _) => return Err(format!("{name}: unexpected {got:?}")),
        }
    }
    let r = parse_localization(&cases[7].1, &valid).unwrap();
    ensure(r.dropped_frames == vec![99, -1], || format!("dropped frames {:?}", r.dropped_frames))?;
    let top = top_candidate(&parse_localization(schema, &valid).unwrap()).map_err(|e| e.to_string())?;
    ensure(top == c(4, 0.9), || format!("top {top:?}"))?;
    let empty = parse_localization(r#"{"candidates":[]}"#, &valid).unwrap();
    ensure(matches!(top_candidate(&empty), Err(VlmError::NoCandidates)), || "empty list must give NO_CANDIDATES".into())?;
    Ok(format!("{} cases matched", cases.len()))
}

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let episode = root.path().join("episode");
    let sim = RunConfig { out: Some(episode.clone()), ..RunConfig::default() };
    cmd_simulate(&data("pick_and_drop.json"), &sim).map_err(|e| e.to_string())?;
    let perception = episode.join("perception").display().to_string();
    let analyze = |out: &str, flags: Overrides| {
        let flags = Overrides {
            ovd: Some(perception.clone()),
            depth: Some(perception.clone()),
            vlm: Some(format!("mock:{}", data("vlm_script.json").display())),
            out: Some(root.path().join(out)),
            ..flags
        };
        let config = RunConfig::resolve(Some(&episode.join("run.json")), &flags, |_| None).map_err(|e| e.to_string())?;
        let inputs = AnalyzeInputs {
            frames: episode.join("frames"),
            robot_profile: data("robot.json"),
            plan: Some(data("plan.txt")),
            question: None,
            question_type: QuestionType::Localize,
        };
        cmd_analyze(&inputs, &config).map_err(|e| e.to_string())
    };
    let a = analyze("run_a", Overrides::default())?;
    let b = analyze("run_b", Overrides::default())?;
    let (snap_a, snap_b) = (dir_snapshot(&a.out), dir_snapshot(&b.out));
    ensure(snap_a == snap_b, || {
        let diff: Vec<&String> = snap_a.keys().filter(|k| snap_a.get(*k) != snap_b.get(*k)).collect();
        format!("output directories differ in {diff:?}")
    })?;
    ensure(snap_a.contains_key("localization.json"), || "localization.json missing".into())?;
    let m = a.keyframes.len();
    ensure(a.prompt_images == 2 * m, || format!("default prompt has {} images for M={m}", a.prompt_images))?;

    let no_bev = analyze("no_bev", Overrides { no_bev: true, ..Overrides::default() })?;
    ensure(no_bev.prompt_images == m, || format!("--no-bev prompt has {} images, expected {m}", no_bev.prompt_images))?;
    let ctx_full = fs::read_to_string(a.out.join("kite_context.txt")).unwrap();
    let ctx_no_bev = fs::read_to_string(no_bev.out.join("kite_context.txt")).unwrap();
    ensure(ctx_full == ctx_no_bev, || "--no-bev changed the text context".into())?;
    ensure(!no_bev.out.join("kf_0_bev.png").exists(), || "--no-bev still rendered BEV images".into())?;

    let uniform = analyze("uniform", Overrides { keyframe_mode: Some(kite_core::saliency::KeyframeMode::Uniform), ..Overrides::default() })?;
    let frames = |r: &kite_cli::commands::AnalyzeReport| r.keyframes.iter().map(|s| s.frame_index).collect::<Vec<_>>();
    ensure(frames(&uniform) != frames(&a), || "uniform mode selected the same keyframes".into())?;
    ensure(uniform.answer.is_some(), || "uniform run did not complete".into())?;
    Ok(format!(
        "{} files byte-identical; M={m}: {} images, --no-bev {}; motion {:?} vs uniform {:?}",
        snap_a.len(),
        a.prompt_images,
        no_bev.prompt_images,
        frames(&a),
        frames(&uniform)
    ))
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("keyframe budget & scaling", keyframe_budget_and_scaling),
        ("motion-peak recall", motion_peak_recall),
        ("contact rule equivalence", contact_rule_equivalence),
        ("relation equivalence", relation_equivalence),
        ("renderer determinism & constants", renderer_determinism),
        ("serializer round-trip & golden", serializer_round_trip),
        ("localization parsing", localization_parsing),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                println!("FAIL  {name} ({secs:.1}s): {why}");
                failed.push(name);
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed.len());
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
