use std::path::Path;

use movetosee::harness::{expand_sweep, ExperimentConfig, Method, TrialContext};
use movetosee::render::render;
use movetosee::segment::{centroid, segment, target_score};
use movetosee::servo::{Termination, TrajectoryLog};

fn context(text: &str) -> TrialContext {
    TrialContext::new(ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap()).unwrap()
}

fn run(ctx: &TrialContext, method: Method) -> TrajectoryLog {
    let d = &expand_sweep(&ctx.config).unwrap()[0];
    ctx.run(d, method).unwrap()
}

/// Largest distance of any logged position from the start-to-end chord.
fn bow(log: &TrajectoryLog) -> f64 {
    let pts = log.positions();
    let (a, b) = (pts[0], *pts.last().unwrap());
    let axis = (b - a).normalize();
    pts.iter()
        .map(|p| {
            let r = p - a;
            (r - axis * axis.dot(&r)).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn proposed_curves_around_edge_occluder_and_centres_target() {
    let ctx = context("[trial]\noccluder_offset = [0.1, 0.0]\n");
    let log = run(&ctx, Method::Proposed);
    assert_eq!(log.termination, Termination::ScoreReached);
    assert!(log.delta_a() > 0.0);
    assert!(bow(&log) > 0.005, "bow {}", bow(&log));

    let scene = ctx.scene_for(&expand_sweep(&ctx.config).unwrap()[0].cell).unwrap();
    let intr = ctx.config.camera.intrinsics().unwrap();
    let last = log.steps.last().unwrap();
    let (u, v) = centroid(&segment(&render(&last.ee_pose, &intr, &scene), &ctx.config.segmentation)).unwrap();
    let off = (u + 0.5 - intr.cx).hypot(v + 0.5 - intr.cy) / intr.width as f64;
    assert!(off <= 0.1, "centroid {off}");
}

#[test]
fn naive_chases_a_centroid_that_lands_on_the_occluder() {
    // a small centred occluder leaves a ring of target whose centroid is occluder
    let ctx = context("[scene]\noccluder_half_extent = 0.03\n");
    let naive = run(&ctx, Method::Naive);
    assert_eq!(naive.termination, Termination::TargetLost);
    assert!(naive.delta_a() <= 0.0);
    let proposed = run(&ctx, Method::Proposed);
    assert_eq!(proposed.termination, Termination::ScoreReached);
    assert!(proposed.delta_a() > 10.0);
}

#[test]
fn logged_areas_match_rerendered_masks() {
    let ctx = context("[trial]\noccluder_offset = [0.0, -0.1]\ntheta_deg = 45.0\n[servo]\nsigma = 0.0\n");
    let scene = ctx.scene_for(&expand_sweep(&ctx.config).unwrap()[0].cell).unwrap();
    let intr = ctx.config.camera.intrinsics().unwrap();
    for method in [Method::Proposed, Method::Naive] {
        let log = run(&ctx, method);
        let score = |k: usize| target_score(&segment(&render(&log.steps[k].ee_pose, &intr, &scene), &ctx.config.segmentation));
        assert_eq!(log.a_start, score(0));
        assert_eq!(log.a_end, score(log.steps.len() - 1));
        assert_eq!(log.f_n, log.steps.last().unwrap().f_ref);
    }
}

#[test]
fn unoccluded_score_trends_upward() {
    let ctx = context("[scene]\nwith_occluder = false\n[servo]\nsigma = 0.01\n");
    let log = run(&ctx, Method::Proposed);
    assert_eq!(log.termination, Termination::ScoreReached);
    assert!(log.a_end >= ctx.config.servo.p_max);
    // allow single-pixel jitter between consecutive frames
    let dips = log.steps.windows(2).filter(|w| w[1].p_ref + 2.0 / 4096.0 < w[0].p_ref).count();
    assert_eq!(dips, 0);
}

#[test]
fn manipulability_weight_keeps_the_arm_dexterous() {
    let plain = run(&context("[trial]\noccluder_offset = [0.1, 0.0]\n"), Method::Proposed);
    let weighted = run(
        &context("[trial]\noccluder_offset = [0.1, 0.0]\n[servo]\nw1 = 0.8\nw2 = 0.2\n"),
        Method::Proposed,
    );
    assert!(weighted.steps.iter().all(|s| s.m_values.iter().all(|m| m.is_finite())));
    assert!(plain.steps.iter().all(|s| s.m_values[1..].iter().all(|m| m.is_nan())));
    let end_m = |l: &TrajectoryLog| l.steps.last().unwrap().m_values[0];
    assert!(end_m(&weighted) >= 0.9 * end_m(&plain), "{} vs {}", end_m(&weighted), end_m(&plain));
}
