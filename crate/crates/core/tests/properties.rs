//! Cross-module properties exercised through the public API only.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use vcage_core::assets::{AssetCatalog, AssetRecord};
use vcage_core::compression::{search_crf, CodecSpec, MetricSpec};
use vcage_core::correspondence::{greedy_match, MatchConfig};
use vcage_core::layout_opt::{optimize_layout, LayoutError, OptimizerConfig};
use vcage_core::providers::FeatureVector;
use vcage_core::scene::{sample_initial_layout, violations, Workspace, DEFAULT_MAX_ATTEMPTS};
use vcage_core::subtask::{enumerate_pick_place, ReceptacleRule};
use vcage_core::topview::{render_topview, world_to_pixel, PixelMapping, TopViewRaster};
use vcage_core::verification::{run_campaign, BernoulliExecutor, CampaignConfig, EpisodeTemplate, NoisyCritic, VerifyError};

fn rec(id: &str, h: [f64; 3], receptacle: bool) -> AssetRecord {
    AssetRecord {
        id: id.into(),
        name: id.into(),
        category: String::new(),
        half_extents: h,
        contact_points: vec![[0.0, 0.0, h[2]]],
        functional_points: vec![[0.0, 0.0, h[2]]],
        receptacle,
    }
}

fn ws() -> Workspace {
    Workspace::new([0.0, 0.0], [1.0, 0.8], 0.0).unwrap()
}

fn kitchen() -> Vec<AssetRecord> {
    vec![
        rec("plate", [0.09, 0.09, 0.01], true),
        rec("bowl", [0.07, 0.07, 0.035], true),
        rec("apple", [0.035, 0.035, 0.035], false),
        rec("cup", [0.04, 0.04, 0.05], false),
        rec("block", [0.03, 0.03, 0.03], false),
    ]
}

fn features(n: usize, dim: usize) -> impl Strategy<Value = Vec<FeatureVector>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, dim), n)
        .prop_map(|vs| vs.into_iter().map(FeatureVector::normalized).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_is_a_pure_function_of_its_seed(seed in any::<u64>()) {
        let a = sample_initial_layout(&kitchen(), ws(), seed, DEFAULT_MAX_ATTEMPTS).unwrap();
        let b = sample_initial_layout(&kitchen(), ws(), seed, DEFAULT_MAX_ATTEMPTS).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert!(violations(&a, &BTreeSet::new(), 0.0).is_empty());
    }

    #[test]
    fn rendering_is_deterministic(seed in any::<u64>()) {
        let cat = AssetCatalog::new(kitchen()).unwrap();
        let s = sample_initial_layout(&kitchen(), ws(), seed, DEFAULT_MAX_ATTEMPTS).unwrap();
        let m = PixelMapping::new(ws(), 64, 48).unwrap();
        prop_assert_eq!(render_topview(&s, &cat, &m).unwrap(), render_topview(&s, &cat, &m).unwrap());
    }

    #[test]
    fn world_to_pixel_is_affine(a in prop::array::uniform2(-1.0f64..2.0), b in prop::array::uniform2(-1.0f64..2.0), t in 0.0f64..1.0) {
        let m = PixelMapping::new(ws(), 100, 80).unwrap();
        let mix = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
        let (pa, pb, pm) = (world_to_pixel(&m, a), world_to_pixel(&m, b), world_to_pixel(&m, mix));
        for k in 0..2 {
            prop_assert!((pm[k] - (t * pa[k] + (1.0 - t) * pb[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_matching_is_injective_and_monotone_in_tau(
        src in features(5, 4), tgt in features(6, 4), lo in 0.0f64..0.9, step in 0.0f64..0.1,
    ) {
        let low = greedy_match(&src, &tgt, &MatchConfig { tau: lo, ..MatchConfig::default() }).unwrap();
        let high = greedy_match(&src, &tgt, &MatchConfig { tau: lo + step, ..MatchConfig::default() }).unwrap();
        let used: Vec<usize> = low.iter().filter_map(|c| c.detection_index).collect();
        prop_assert_eq!(used.len(), used.iter().collect::<BTreeSet<_>>().len());
        let count = |v: &[vcage_core::correspondence::Correspondence]| v.iter().filter(|c| c.detection_index.is_some()).count();
        prop_assert!(count(&high) <= count(&low));
    }

    #[test]
    fn refined_layouts_keep_margin_and_bounds(seed in 0u64..1000) {
        let assets = kitchen();
        let cat = AssetCatalog::new(assets.clone()).unwrap();
        let s = sample_initial_layout(&assets, ws(), seed, DEFAULT_MAX_ATTEMPTS).unwrap();
        let targets: Vec<[f64; 2]> = s.objects.iter().map(|_| [0.5, 0.4]).collect();
        let cfg = OptimizerConfig { restarts: 4, seed, ..OptimizerConfig::default() };
        let out = match optimize_layout(&s, &cat, &targets, &cfg) {
            Ok(out) => out,
            Err(LayoutError::InfeasibleLayout { best, .. }) => {
                prop_assert!(!best.hard_feasible());
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let exempt = out.forest.exempt_pairs();
        for (i, a) in out.scene.objects.iter().enumerate() {
            prop_assert!(s.workspace.contains_footprint(a.aabb(), 1e-6));
            for (j, b) in out.scene.objects.iter().enumerate().skip(i + 1) {
                if exempt.contains(&(i, j)) {
                    continue;
                }
                let gap = (0..2)
                    .map(|k| (a.aabb().min[k] - b.aabb().max[k]).max(b.aabb().min[k] - a.aabb().max[k]))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(gap >= cfg.margin - 1e-6, "pair ({i},{j}) gap {gap}");
            }
        }
    }

    #[test]
    fn extra_keyframes_never_raise_crf(slope in 0.001f64..0.05, threshold in 0.02f64..0.4, extra in 1usize..4) {
        let frame = TopViewRaster::filled(16, 16, [10, 200, 30]);
        let codec = CodecSpec::Synthetic { loss_slope: slope };
        let metric = MetricSpec::Synthetic { loss_slope: slope };
        let one = search_crf(std::slice::from_ref(&frame), &codec, &metric, threshold, [0, 51]);
        let more = search_crf(&vec![frame; 1 + extra], &codec, &metric, threshold, [0, 51]);
        if let (Ok(a), Ok(b)) = (one, more) {
            prop_assert!(b.crf <= a.crf);
        }
    }
}

#[test]
fn noisy_critic_purity_degrades_with_false_positive_rate() {
    let assets = kitchen();
    let catalog = Arc::new(AssetCatalog::new(assets.clone()).unwrap());
    let scene = sample_initial_layout(&assets, ws(), 3, DEFAULT_MAX_ATTEMPTS).unwrap();
    let pool = enumerate_pick_place(&scene, &catalog, &ReceptacleRule).unwrap();
    let executor = BernoulliExecutor { p: 0.7, catalog: catalog.clone(), mapping: PixelMapping::new(ws(), 16, 16).unwrap() };
    let template = EpisodeTemplate { pool, horizon: 3 };
    let purity = |f: f64| {
        let critic = NoisyCritic { false_positive_rate: f, seed: 5 };
        let cfg = CampaignConfig { n_target_accepted: 4000, max_episodes: 4000, seed: 1, keep_observations: false };
        match run_campaign(&template, &scene, &executor, &critic, &cfg) {
            Ok(r) => r.stats.purity,
            Err(VerifyError::BudgetExhausted { partial, .. }) => partial.stats.purity,
            Err(e) => panic!("{e}"),
        }
    };
    let (p0, p1, p3) = (purity(0.0), purity(0.1), purity(0.3));
    assert_eq!(p0, 1.0);
    assert!(p1 < 1.0 && p3 < p1, "purity {p0} {p1} {p3}");
}
