//! End-to-end acceptance checks. Run with `cargo test --test acceptance`; prints one
//! PASS/FAIL/SKIP line per criterion and exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use vcage_cli::config::PipelineConfig;
use vcage_cli::stages::{refine_scene, stack_contents};
use vcage_core::assets::{AssetCatalog, AssetRecord, Pose};
use vcage_core::compression::{
    extract_keyframes, roundtrip_eval, search_crf, CodecSpec, CompressionError, MetricSpec, TrajectoryRecord,
};
use vcage_core::correspondence::{greedy_match_matrix, match_scene, MatchConfig, VisionProviders};
use vcage_core::layout_opt::{fd_gradient, optimize_layout, LayoutError, LayoutProblem, OptimizerConfig};
use vcage_core::providers::{
    GroundTruthDetector, HistogramFeatures, Inpainter, LayoutPlan, Directive, Relation, SyntheticInpainter,
};
use vcage_core::scene::{
    sample_initial_layout, sample_random_layout, ObjectInstance, SceneConfiguration, Workspace, DEFAULT_MAX_ATTEMPTS,
};
use vcage_core::seed;
use vcage_core::subtask::{enumerate_pick_place, valid_task_ratio, ReceptacleRule};
use vcage_core::topview::{asset_color, render_topview, PixelMapping, TopViewRaster};
use vcage_core::verification::{
    run_campaign, BernoulliExecutor, CampaignConfig, CampaignStats, Critic, EpisodeTemplate, OpenLoop, OracleCritic,
    VerifyError,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn record(id: &str, name: &str, half: [f64; 3], receptacle: bool) -> AssetRecord {
    AssetRecord {
        id: id.into(),
        name: name.into(),
        category: String::new(),
        half_extents: half,
        contact_points: vec![[0.0, 0.0, half[2]]],
        functional_points: vec![[0.0, 0.0, half[2]]],
        receptacle,
    }
}

fn workspace(w: f64, h: f64) -> Workspace {
    Workspace::new([0.0, 0.0], [w, h], 0.0).unwrap()
}

/// Footprint half extents of a yawed box, computed directly from the yaw.
fn footprint(a: &AssetRecord, yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    let [hx, hy, _] = a.half_extents;
    [c.abs() * hx + s.abs() * hy, s.abs() * hx + c.abs() * hy]
}

// ---------------------------------------------------------------------------

fn placement_soundness() -> Verdict {
    let mut gen = seed::rng(1);
    let catalog: Vec<AssetRecord> = (0..12)
        .map(|i| {
            let h = [gen.gen_range(0.02..0.07), gen.gen_range(0.02..0.07), gen.gen_range(0.01..0.08)];
            record(&format!("item{i}"), &format!("item {i}"), h, false)
        })
        .collect();
    let ws = workspace(1.0, 0.8);
    let tol = 1e-12;
    let (mut overlaps, mut outside, mut failed) = (0, 0, 0);
    for s in 0..500u64 {
        let mut rng = seed::rng(1000 + s);
        let n = rng.gen_range(5..=12);
        let assets: Vec<AssetRecord> = catalog.choose_multiple(&mut rng, n).cloned().collect();
        let Ok(scene) = sample_initial_layout(&assets, ws, s, DEFAULT_MAX_ATTEMPTS) else {
            failed += 1;
            continue;
        };
        let boxes: Vec<([f64; 2], [f64; 2])> = scene
            .objects
            .iter()
            .zip(&assets)
            .map(|(o, a)| (o.position2(), footprint(a, o.yaw())))
            .collect();
        for (i, (c, h)) in boxes.iter().enumerate() {
            if (0..2).any(|k| c[k] - h[k] < ws.min[k] - tol || c[k] + h[k] > ws.max[k] + tol) {
                outside += 1;
            }
            for (d, g) in &boxes[i + 1..] {
                if (0..2).all(|k| (c[k] - d[k]).abs() < h[k] + g[k] - tol) {
                    overlaps += 1;
                }
            }
        }
    }
    verdict(
        overlaps == 0 && outside == 0 && failed == 0,
        format!("500 scenes: {overlaps} overlaps, {outside} out of workspace, {failed} placement failures"),
    )
}

// ---------------------------------------------------------------------------

fn colliding_problem(s: u64) -> (SceneConfiguration, AssetCatalog, Vec<[f64; 2]>) {
    let mut rng = seed::rng(2000 + s);
    let n = rng.gen_range(3..7);
    let assets: Vec<AssetRecord> = (0..n)
        .map(|i| record(&format!("o{i}"), &format!("object {i}"), [rng.gen_range(0.03..0.08), rng.gen_range(0.03..0.08), 0.05], false))
        .collect();
    let ws = workspace(1.0, 1.0);
    let mut scene = SceneConfiguration::empty(ws, s);
    for a in &assets {
        scene.objects.push(ObjectInstance::new(a, Pose::from_xyz_yaw([0.5, 0.5, 0.05], 0.0)));
    }
    // Targets packed into a small square so that they overlap.
    let targets = (0..n).map(|_| [rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6)]).collect();
    (scene, AssetCatalog::new(assets).unwrap(), targets)
}

fn analytic_gradient(p: &LayoutProblem, x: &[f64], cfg: &OptimizerConfig) -> Vec<f64> {
    let n = p.half_footprints.len();
    let mut g = vec![0.0; 2 * n];
    for i in 0..n {
        for j in i + 1..n {
            let (hi, hj) = (p.half_footprints[i], p.half_footprints[j]);
            let d = [x[2 * i] - x[2 * j], x[2 * i + 1] - x[2 * j + 1]];
            let o = [hi[0] + hj[0] + cfg.margin - d[0].abs(), hi[1] + hj[1] + cfg.margin - d[1].abs()];
            if o[0] <= 0.0 || o[1] <= 0.0 {
                continue;
            }
            for a in 0..2 {
                let other = o[1 - a];
                let s = d[a].signum();
                g[2 * i + a] -= cfg.lambda_c * s * other;
                g[2 * j + a] += cfg.lambda_c * s * other;
            }
        }
    }
    for k in 0..n {
        for a in 0..2 {
            let v = x[2 * k + a];
            g[2 * k + a] += 2.0 * cfg.lambda_d * p.areas[k] * (v - p.targets[2 * k + a]);
            let h = p.half_footprints[k][a];
            let over = v + h - p.workspace.max[a];
            let under = p.workspace.min[a] - (v - h);
            if over > 0.0 {
                g[2 * k + a] += 2.0 * cfg.lambda_b * over;
            }
            if under > 0.0 {
                g[2 * k + a] -= 2.0 * cfg.lambda_b * under;
            }
        }
    }
    g
}

/// Distance from `x` to the nearest kink of the piecewise-smooth cost.
fn kink_distance(p: &LayoutProblem, x: &[f64], margin: f64) -> f64 {
    let n = p.half_footprints.len();
    let mut m = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            for a in 0..2 {
                let d = x[2 * i + a] - x[2 * j + a];
                m = m.min(d.abs());
                m = m.min((p.half_footprints[i][a] + p.half_footprints[j][a] + margin - d.abs()).abs());
            }
        }
        for a in 0..2 {
            let h = p.half_footprints[i][a];
            m = m.min((x[2 * i + a] + h - p.workspace.max[a]).abs());
            m = m.min((p.workspace.min[a] - (x[2 * i + a] - h)).abs());
        }
    }
    m
}

fn layout_optimizer() -> Verdict {
    let cfg = OptimizerConfig { restarts: 8, seed: 7, ..OptimizerConfig::default() };
    let scaled = OptimizerConfig {
        lambda_c: cfg.lambda_c * 10.0,
        lambda_d: cfg.lambda_d * 10.0,
        lambda_b: cfg.lambda_b * 10.0,
        ..cfg.clone()
    };
    let (mut feasible, mut max_shift) = (0, 0.0f64);
    let mut invariance_failures = 0;
    for s in 0..50 {
        let (scene, catalog, targets) = colliding_problem(s);
        let a = optimize_layout(&scene, &catalog, &targets, &cfg);
        let b = optimize_layout(&scene, &catalog, &targets, &scaled);
        match (&a, &b) {
            (Ok(a), Ok(b)) => {
                if a.cost.coll == 0.0 && a.cost.bnd == 0.0 {
                    feasible += 1;
                }
                for (oa, ob) in a.scene.objects.iter().zip(&b.scene.objects) {
                    let (pa, pb) = (oa.position2(), ob.position2());
                    max_shift = max_shift.max((pa[0] - pb[0]).abs()).max((pa[1] - pb[1]).abs());
                }
            }
            (Err(LayoutError::InfeasibleLayout { .. }), Err(LayoutError::InfeasibleLayout { .. })) => {}
            _ => invariance_failures += 1,
        }
    }

    let mut gen = seed::rng(3);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 100 {
        let n = gen.gen_range(2..6);
        let p = LayoutProblem {
            x: (0..2 * n).map(|_| gen.gen_range(-0.1..1.1)).collect(),
            targets: (0..2 * n).map(|_| gen.gen_range(0.0..1.0)).collect(),
            half_footprints: (0..n).map(|_| [gen.gen_range(0.03..0.2), gen.gen_range(0.03..0.2)]).collect(),
            areas: (0..n).map(|_| gen.gen_range(0.005..0.1)).collect(),
            exempt_pairs: BTreeSet::new(),
            workspace: workspace(1.0, 1.0),
        };
        if kink_distance(&p, &p.x, cfg.margin) < 1e-3 {
            continue;
        }
        let f = |x: &[f64]| p.cost_at(x, &cfg).total;
        let numeric = fd_gradient(&f, &p.x, cfg.grad_step);
        let exact = analytic_gradient(&p, &p.x, &cfg);
        let scale = exact.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let err = numeric.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
        checked += 1;
    }
    verdict(
        feasible >= 48 && max_shift < 1e-6 && invariance_failures == 0 && worst <= 1e-4,
        format!(
            "{feasible}/50 collision- and boundary-free; argmin shift under 10x weights {max_shift:.2e}; \
             worst gradient relative error {worst:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn distinct_color_catalog(count: usize) -> Vec<AssetRecord> {
    const NOUNS: [&str; 12] =
        ["mug", "lemon", "stapler", "brush", "tray", "candle", "wallet", "remote", "teapot", "glove", "jar", "sponge"];
    let mut gen = seed::rng(4);
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for k in 0.. {
        if out.len() == count {
            break;
        }
        let id = format!("asset{k}");
        if !used.insert(asset_color(&id)) {
            continue;
        }
        let half = [gen.gen_range(0.05..0.1), gen.gen_range(0.03..0.065), 0.03];
        out.push(record(&id, NOUNS[out.len()], half, false));
    }
    out
}

fn correspondence_closed_loop() -> Verdict {
    let catalog_assets = distinct_color_catalog(10);
    let colors: BTreeSet<[u8; 3]> = catalog_assets.iter().map(|a| asset_color(&a.id)).collect();
    assert_eq!(colors.len(), catalog_assets.len(), "test catalog colors must be distinct");
    let catalog = Arc::new(AssetCatalog::new(catalog_assets.clone()).unwrap());
    let ws = workspace(1.2, 0.9);
    let m = PixelMapping::new(ws, 240, 180).unwrap();
    let cell = m.cell_size();
    let (mut recovered, mut total) = (0usize, 0usize);
    for s in 0..100u64 {
        let mut rng = seed::rng(5000 + s);
        let n = rng.gen_range(4..=8);
        let assets: Vec<AssetRecord> = catalog_assets.choose_multiple(&mut rng, n).cloned().collect();
        let scene = sample_initial_layout(&assets, ws, s, DEFAULT_MAX_ATTEMPTS).unwrap();

        // Target: each object moves to its own 0.3 m grid cell and turns by a multiple of 90 degrees.
        let mut cells: Vec<usize> = (0..12).collect();
        cells.shuffle(&mut rng);
        let goal: Vec<[f64; 2]> = cells[..n]
            .iter()
            .map(|&c| [0.15 + 0.3 * (c % 4) as f64 + rng.gen_range(-0.02..0.02), 0.15 + 0.3 * (c / 4) as f64 + rng.gen_range(-0.02..0.02)])
            .collect();
        let turns: Vec<f64> = (0..n).map(|_| 90.0 * rng.gen_range(0..4) as f64).collect();
        let anchor = scene.objects[0].position2();
        let mut plan = LayoutPlan::default();
        for i in (1..n).chain([0]) {
            let (reference, base) = if i == 0 { (1, goal[1]) } else { (0, anchor) };
            let mut d = Directive::new(&assets[i].id, Relation::On, &assets[reference].id);
            d.offset = Some([goal[i][0] - base[0], goal[i][1] - base[1]]);
            d.rotate_deg = Some(turns[i]);
            plan.directives.push(d);
        }
        let inpainter = SyntheticInpainter::new(catalog.clone(), scene.clone(), m);
        let src = render_topview(&scene, &catalog, &m).unwrap();
        let tgt = inpainter.inpaint(&src, &plan).unwrap();
        let depicted = inpainter.target_scene(&plan).unwrap();
        let detector =
            GroundTruthDetector { catalog: catalog.clone(), scene: depicted.clone(), mapping: m, jitter_px: 1.0, seed: s };
        let features = HistogramFeatures::default();
        let providers = VisionProviders { detector: &detector, features: &features };
        let matched = match_scene(&scene, &catalog, &src, &tgt, &providers, &m, &MatchConfig::default()).unwrap();
        for c in &matched.correspondences {
            total += 1;
            let truth = depicted.objects[c.source_index].position2();
            let Some(p) = c.world_position else { continue };
            let near = (p[0] - truth[0]).abs() <= 2.0 * cell[0] && (p[1] - truth[1]).abs() <= 2.0 * cell[1];
            let want = turns[c.source_index].rem_euclid(360.0);
            let turned = c.rotation_deg.is_some_and(|r| (r.rem_euclid(360.0) - want).abs() < 1e-9);
            if near && turned {
                recovered += 1;
            }
        }
    }
    let rate = recovered as f64 / total as f64;

    let mut gen = seed::rng(6);
    let tau = MatchConfig::default().tau;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = gen.gen_range(1..=6);
        let diag: Vec<f64> = (0..n).map(|_| gen.gen_range(tau + 0.05..1.0)).collect();
        let sim: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { gen.gen_range(0.0..diag[i].min(diag[j]) - 0.01) }).collect())
            .collect();
        let greedy: Vec<Option<usize>> = greedy_match_matrix(&sim, tau).iter().map(|c| c.detection_index).collect();
        if greedy != brute_force_assignment(&sim, tau) {
            mismatches += 1;
        }
    }
    verdict(
        rate >= 0.95 && mismatches == 0,
        format!("{recovered}/{total} objects recovered ({:.1}%); greedy vs brute force: {mismatches} mismatches in 1000", 100.0 * rate),
    )
}

/// Maximum-total-similarity assignment by enumeration; pairs below `tau` stay unmatched.
fn brute_force_assignment(sim: &[Vec<f64>], tau: f64) -> Vec<Option<usize>> {
    fn go(i: usize, sim: &[Vec<f64>], tau: f64, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, best: &mut (f64, Vec<Option<usize>>)) {
        if i == sim.len() {
            let score: f64 = cur.iter().enumerate().filter_map(|(r, c)| c.map(|c| sim[r][c])).sum();
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        cur.push(None);
        go(i + 1, sim, tau, used, cur, best);
        cur.pop();
        for j in 0..sim[i].len() {
            if !used[j] && sim[i][j] >= tau {
                used[j] = true;
                cur.push(Some(j));
                go(i + 1, sim, tau, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    go(0, sim, tau, &mut vec![false; sim.first().map_or(0, Vec::len)], &mut Vec::new(), &mut best);
    best.1
}

// ---------------------------------------------------------------------------

fn tabletop_catalog() -> Vec<AssetRecord> {
    vec![
        record("plate", "plate", [0.09, 0.09, 0.01], true),
        record("bowl", "bowl", [0.07, 0.07, 0.035], true),
        record("apple", "apple", [0.035, 0.035, 0.035], false),
        record("cup", "cup", [0.04, 0.04, 0.05], false),
        record("block", "block", [0.03, 0.03, 0.03], false),
        record("sponge", "sponge", [0.05, 0.035, 0.02], false),
    ]
}

fn campaign_stats(p: f64, k: usize, n: usize, critic: &dyn Critic) -> CampaignStats {
    let assets = tabletop_catalog();
    let catalog = Arc::new(AssetCatalog::new(assets.clone()).unwrap());
    let ws = workspace(0.8, 0.6);
    let scene = sample_initial_layout(&assets, ws, 11, DEFAULT_MAX_ATTEMPTS).unwrap();
    let pool = enumerate_pick_place(&scene, &catalog, &ReceptacleRule).unwrap();
    assert!(!pool.is_empty());
    let executor = BernoulliExecutor { p, catalog: catalog.clone(), mapping: PixelMapping::new(ws, 16, 16).unwrap() };
    let template = EpisodeTemplate { pool, horizon: k };
    let cfg = CampaignConfig { n_target_accepted: n, max_episodes: n, seed: seed::derive(99, (p * 1000.0) as u64, k as u64), keep_observations: false };
    match run_campaign(&template, &scene, &executor, critic, &cfg) {
        Ok(r) => r.stats,
        Err(VerifyError::BudgetExhausted { partial, .. }) => partial.stats,
        Err(e) => panic!("campaign failed: {e}"),
    }
}

fn verification_statistics() -> Verdict {
    let n = 10_000;
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [0.5, 0.8, 0.95] {
        for k in [1, 3, 6] {
            let st = campaign_stats(p, k, n, &OracleCritic);
            let expect = p.powi(k as i32);
            let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
            let z = (st.acceptance_rate - expect) / sigma;
            let good = st.episodes_run == n && st.errored == 0 && z.abs() <= 3.0 && st.purity == 1.0;
            ok &= good;
            if !good {
                lines.push(format!("p={p} k={k}: rate {:.4} vs {expect:.4} (z {z:.2}), purity {}", st.acceptance_rate, st.purity));
            }
        }
    }
    let open = campaign_stats(0.9, 4, n, &OpenLoop);
    ok &= open.purity < 0.9;
    let detail = format!(
        "9 (p,k) rates within 3 sigma with oracle purity 1.0: {}; open-loop purity at p=0.9 k=4: {:.4}{}",
        if lines.is_empty() { "yes" } else { "no" },
        open.purity,
        if lines.is_empty() { String::new() } else { format!(" [{}]", lines.join("; ")) }
    );
    verdict(ok, detail)
}

// ---------------------------------------------------------------------------

fn keyframe_extraction() -> Verdict {
    // Actions are end-effector positions: a slow drift plus four abrupt jumps.
    let jumps = [(9, 0.05), (22, 0.07), (37, 0.06), (55, 0.08)];
    let mut pos = [0.0f64; 3];
    let mut actions = Vec::new();
    for t in 0..64 {
        pos[0] += 0.001;
        if let Some(&(_, h)) = jumps.iter().find(|(at, _)| *at == t) {
            pos[1] += h;
        }
        actions.push(pos.to_vec());
    }
    // Gripper closes over frames 15..=17 and opens over 45..=46.
    let gripper: Vec<f64> = (0..64)
        .map(|t| match t {
            0..=14 => 0.0,
            15 => 0.3,
            16 => 0.6,
            17..=44 => 1.0,
            45 => 0.5,
            _ => 0.0,
        })
        .collect();
    let traj = TrajectoryRecord::new(actions, gripper).unwrap();
    let keys = extract_keyframes(&traj, 4);
    let expected = vec![0, 9, 16, 22, 37, 45, 55, 63];
    let fixture_ok = keys == expected;

    let mut gen = seed::rng(7);
    let mut bad = 0;
    for _ in 0..200 {
        let t_len = gen.gen_range(2..120);
        let dim = gen.gen_range(1..8);
        let actions: Vec<Vec<f64>> = (0..t_len).map(|_| (0..dim).map(|_| gen.gen_range(-1.0..1.0)).collect()).collect();
        let gripper: Vec<f64> = (0..t_len).map(|_| if gen.gen_bool(0.1) { 1.0 } else { 0.0 }).collect();
        let traj = TrajectoryRecord::new(actions, gripper).unwrap();
        let k = extract_keyframes(&traj, gen.gen_range(0..8));
        let sorted_unique = k.windows(2).all(|w| w[0] < w[1]);
        if !(sorted_unique && k.first() == Some(&0) && k.last() == Some(&(t_len - 1)) && k.iter().all(|&i| i < t_len)) {
            bad += 1;
        }
    }
    verdict(fixture_ok && bad == 0, format!("fixture keyframes {keys:?} ({} frames); fuzz failures {bad}/200", keys.len()))
}

// ---------------------------------------------------------------------------

fn linear_scan(frames: &[TopViewRaster], codec: &CodecSpec, metric: &MetricSpec, threshold: f64, range: [u32; 2]) -> Option<u32> {
    (range[0]..=range[1])
        .filter(|&c| frames.iter().map(|f| roundtrip_eval(f, c, codec, metric).unwrap()).fold(f64::NEG_INFINITY, f64::max) < threshold)
        .max()
}

fn crf_search() -> Verdict {
    let mut gen = seed::rng(8);
    let frame = |gen: &mut rand_chacha::ChaCha8Rng| {
        let px: Vec<u8> = (0..16 * 16 * 3).map(|_| gen.gen()).collect();
        TopViewRaster::from_pixels(16, 16, px).unwrap()
    };
    let mut mismatches = 0;
    for _ in 0..200 {
        let slope = gen.gen_range(0.001..0.05);
        let threshold = gen.gen_range(0.01..0.5);
        let lo = gen.gen_range(0..20);
        let hi = gen.gen_range(lo..=51);
        let frames: Vec<TopViewRaster> = (0..gen.gen_range(1..4)).map(|_| frame(&mut gen)).collect();
        let codec = CodecSpec::Synthetic { loss_slope: slope };
        let metric = MetricSpec::Synthetic { loss_slope: slope };
        let got = match search_crf(&frames, &codec, &metric, threshold, [lo, hi]) {
            Ok(r) => Some(r.crf),
            Err(CompressionError::NoFeasibleCrf { .. }) => None,
            Err(e) => panic!("{e}"),
        };
        if got != linear_scan(&frames, &codec, &metric, threshold, [lo, hi]) {
            mismatches += 1;
        }
    }
    let codec = CodecSpec::Synthetic { loss_slope: 0.005 };
    let metric = MetricSpec::Synthetic { loss_slope: 0.005 };
    let worked = search_crf(&[frame(&mut gen)], &codec, &metric, 0.1, [0, 51]).map(|r| r.crf).ok();
    verdict(
        mismatches == 0 && worked == Some(19),
        format!("{mismatches}/200 mismatches against the linear scan; worked example CRF {worked:?}"),
    )
}

// ---------------------------------------------------------------------------

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn demo_config(overrides: impl FnOnce(&mut Value)) -> Value {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(demo_dir().join("config.json")).unwrap()).unwrap();
    cfg["catalog"] = json!(demo_dir().join("catalog.json").canonicalize().unwrap());
    overrides(&mut cfg);
    cfg
}

fn subtask_feasibility() -> Verdict {
    let catalog_assets = tabletop_catalog();
    let catalog = Arc::new(AssetCatalog::new(catalog_assets.clone()).unwrap());
    let (mut random_sum, mut refined_sum, mut infeasible) = (0.0, 0.0, 0);
    let mut rows = Vec::new();
    for s in 0..50u64 {
        let mut rng = seed::rng(9000 + s);
        let n = rng.gen_range(4..=6);
        let mut assets = vec![catalog_assets[rng.gen_range(0..2)].clone()];
        assets.extend(catalog_assets[2..].choose_multiple(&mut rng, n - 1).cloned());
        let cfg: PipelineConfig = serde_json::from_value(demo_config(|c| {
            c["seed"] = json!(s);
            c["workspace"] = json!({"min": [0.0, 0.0], "max": [0.6, 0.45], "table_height": 0.0});
        }))
        .unwrap();
        let random = sample_random_layout(&assets, cfg.workspace, s).unwrap();
        let initial = sample_initial_layout(&assets, cfg.workspace, s, DEFAULT_MAX_ATTEMPTS).unwrap();
        let refined = match refine_scene(&cfg, &catalog, &initial).unwrap().optimized {
            Ok(outcome) => stack_contents(&outcome, &catalog).unwrap(),
            Err(LayoutError::InfeasibleLayout { scene, .. }) => {
                infeasible += 1;
                *scene
            }
            Err(e) => panic!("{e}"),
        };
        let ratio = |sc: &SceneConfiguration| valid_task_ratio(sc, enumerate_pick_place(sc, &catalog, &ReceptacleRule).unwrap().len());
        let (r, f) = (ratio(&random), ratio(&refined));
        random_sum += r;
        refined_sum += f;
        rows.push(json!({"seed": s, "objects": n, "random": r, "refined": f}));
    }
    let (random_mean, refined_mean) = (random_sum / 50.0, refined_sum / 50.0);
    let report = json!({
        "scenes": 50,
        "mean_valid_task_ratio": {"random": random_mean, "refined": refined_mean},
        "infeasible_refinements": infeasible,
        "per_scene": rows,
    });
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("subtask_feasibility.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    verdict(
        refined_mean >= random_mean,
        format!(
            "mean valid-task ratio refined {refined_mean:.3} vs random {random_mean:.3} ({infeasible} infeasible refinements); report {}",
            path.display()
        ),
    )
}

// ---------------------------------------------------------------------------

fn tool_available(cmd: &str) -> bool {
    Command::new(cmd).arg("-version").output().is_ok_and(|o| o.status.success())
}

fn run_vcage(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vcage"));
    c.args(args).env_remove("VCAGE_ENCODER");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn external_compression() -> Verdict {
    let Ok(metric) = std::env::var("VCAGE_METRIC") else {
        return Verdict::Skip("no external metric configured (set VCAGE_METRIC to a command template)".into());
    };
    if !tool_available("ffmpeg") {
        return Verdict::Skip("ffmpeg not found".into());
    }
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = demo_config(|c| {
        c["campaign"]["p"] = json!(1.0);
        c["campaign"]["horizon"] = json!(2);
        c["campaign"]["n_target_accepted"] = json!(1);
        c["campaign"]["frames_per_step"] = json!(30);
        c["compression"] = json!({
            "codec": {"kind": "external", "command_template": vcage_core::compression::DEFAULT_ENCODE_TEMPLATE},
            "metric": {"kind": "external", "command_template": metric},
        });
    });
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = run_vcage(&["pipeline", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    if o.status.code() != Some(0) {
        return Verdict::Fail(format!("pipeline exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(out.join("episodes/ep_00000/plan.json")).unwrap_or_default())
        .unwrap_or(Value::Null);
    let ratio = plan["reduction_ratio"].as_f64().unwrap_or(0.0);
    let losses_ok = plan["per_keyframe_jod_loss"].as_array().is_some_and(|l| l.iter().all(|v| v.as_f64().is_some_and(|x| x < 0.1)));
    verdict(ratio >= 0.9 && losses_ok, format!("reduction ratio {ratio:.3}, keyframe losses below 0.1: {losses_ok}"))
}

// ---------------------------------------------------------------------------

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            let mut bytes = std::fs::read(&p).unwrap();
            if rel == Path::new("run_report.json") {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("timings_ms");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            files.insert(rel, bytes);
        }
    }
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, demo_config(|_| {}).to_string()).unwrap();
    let mut snaps = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = run_vcage(&["pipeline", "--config", cfg_path.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()], &[]);
        if o.status.code() != Some(0) {
            return Verdict::Fail(format!("pipeline exited {:?}", o.status.code()));
        }
        snaps.push(snapshot(&out));
    }
    let differing: Vec<String> = snaps[0]
        .keys()
        .chain(snaps[1].keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| snaps[0].get(*k) != snaps[1].get(*k))
        .map(|k| k.display().to_string())
        .collect();
    verdict(differing.is_empty(), format!("{} artifacts compared, {} differ {differing:?}", snaps[0].len(), differing.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, &str, Duration, Check); 9] = [
        ("1", "placement soundness", Duration::from_secs(10), placement_soundness),
        ("2", "layout optimizer", Duration::from_secs(60), layout_optimizer),
        ("3", "correspondence closed loop", Duration::from_secs(60), correspondence_closed_loop),
        ("4", "verification statistics", Duration::from_secs(120), verification_statistics),
        ("5", "keyframe extraction", Duration::from_secs(5), keyframe_extraction),
        ("6", "CRF search", Duration::from_secs(5), crf_search),
        ("7", "sub-task feasibility", Duration::from_secs(60), subtask_feasibility),
        ("8", "external compression", Duration::from_secs(300), external_compression),
        ("9", "determinism", Duration::from_secs(120), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let t0 = Instant::now();
        let v = check();
        let dt = t0.elapsed();
        let (tag, detail) = match v {
            Verdict::Pass(d) if dt <= budget => ("PASS", d),
            Verdict::Pass(d) => ("FAIL", format!("{d}; over time budget {budget:?}")),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} [{id}] {name}: {detail} ({:.2}s)", dt.as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
