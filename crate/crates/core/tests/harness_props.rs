use pisa_core::assignment::Label;
use pisa_core::config::{ExperimentConfig, Strategy};
use pisa_core::harness::boost::{simulate_boost, BoostSelection, BUDGET_TOLERANCE};
use pisa_core::harness::experiments::run_one;
use pisa_core::harness::report::{distribution_report, scene_report, Category, Polarity, ReportConfig};
use pisa_core::harness::train::{forward_batch, per_sample_ce, prepare, PreparedScene};
use pisa_core::harness::{gen_scenes, Split};
use pisa_core::hlr::{iou_hlr, nms_cluster, score_hlr, HlrResult};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_images = 12;
    cfg.data.eval_images = 8;
    cfg.train.epochs = 3;
    cfg
}

#[test]
fn runs_are_byte_identical_per_seed() {
    let cfg = small();
    let a = serde_json::to_vec(&run_one(&cfg, 3).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_one(&cfg, 3).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_vec(&run_one(&cfg, 4).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn flat_reweighting_reproduces_random_sampling() {
    let base = small().with_strategies(Strategy::R, Strategy::R);
    let mut flat = small().with_strategies(Strategy::P, Strategy::P);
    flat.carl.enable = false;
    flat.isr.gamma_pos = 0.0;
    flat.isr.gamma_neg = 0.0;
    for seed in 0..2 {
        let a = run_one(&base, seed).unwrap();
        let b = run_one(&flat, seed).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.head, b.head);
        assert_eq!(a.eval, b.eval);
    }
}

fn trained() -> (ExperimentConfig, pisa_core::harness::DetectorHead, Vec<pisa_core::harness::SyntheticScene>) {
    let cfg = small();
    let rec = run_one(&cfg, 1).unwrap();
    let scenes = gen_scenes(&cfg.data, cfg.data.eval_images, 1, Split::Eval).unwrap();
    (cfg, rec.head, scenes)
}

#[test]
fn zero_budget_changes_nothing() {
    let (cfg, head, scenes) = trained();
    for sel in [BoostSelection::TopHlr, BoostSelection::Random { seed: 5 }] {
        let out = simulate_boost(&head, &scenes, &cfg, 5, 0.0, sel).unwrap();
        assert_eq!(out.boost, 0.0);
        assert_eq!(out.baseline_map, out.boosted_map);
        assert!(out.rows.iter().all(|r| r.delta_ap == 0.0));
    }
}

#[test]
fn reachable_budgets_hit_tolerance() {
    let (cfg, head, scenes) = trained();
    for sel in [BoostSelection::TopHlr, BoostSelection::Random { seed: 5 }] {
        for budget in [0.02, 0.1] {
            let out = simulate_boost(&head, &scenes, &cfg, 1000, budget, sel).unwrap();
            assert!(out.reachable, "{sel:?} {budget}");
            let err = (out.achieved_reduction - out.requested_reduction).abs();
            assert!(err <= BUDGET_TOLERANCE * out.requested_reduction, "{err}");
            assert!(out.boost > 0.0);
        }
    }
    assert!(simulate_boost(&head, &scenes, &cfg, 5, 1.0, BoostSelection::TopHlr).is_err());
}

#[test]
fn unreachable_budget_reports_ceiling() {
    let (cfg, head, scenes) = trained();
    let out = simulate_boost(&head, &scenes, &cfg, 1, 0.99, BoostSelection::TopHlr).unwrap();
    assert!(!out.reachable);
    assert!(out.achieved_reduction < out.requested_reduction);
    assert!(out.num_selected <= scenes.len());
}

fn first_batch(cfg: &ExperimentConfig) -> (pisa_core::assignment::SampleBatch, HlrResult, HlrResult) {
    let (_, head, scenes) = trained();
    let prepared = prepare(&scenes[..3], cfg).unwrap();
    let refs: Vec<&PreparedScene> = prepared.iter().collect();
    let (batch, _) = forward_batch(&head, &refs, cfg.model.delta_std).unwrap();
    let pos = iou_hlr(&batch).unwrap();
    let neg = score_hlr(&batch, &nms_cluster(&batch, 0.7).unwrap()).unwrap();
    (batch, pos, neg)
}

#[test]
fn report_rows_partition_by_image_and_category() {
    let cfg = small();
    let (batch, pos, neg) = first_batch(&cfg);
    let losses = per_sample_ce(&batch);
    let rc = ReportConfig::default();
    let report = distribution_report(&batch, &losses, &pos, &neg, &rc).unwrap();
    for img in 0..3 {
        for (polarity, label) in [(Polarity::Positive, Label::Positive), (Polarity::Negative, Label::Negative)] {
            let members: Vec<usize> = (0..batch.len()).filter(|&i| batch.image_id[i] == img && batch.assignment.label(i) == label).collect();
            let take = rc.per_image.min(members.len());
            for cat in [Category::Random, Category::Hard, Category::Prime] {
                let rows: Vec<_> = report.scatter.iter().filter(|r| r.image_id == img && r.polarity == polarity && r.category == cat).collect();
                assert_eq!(rows.len(), take);
                assert!(rows.iter().all(|r| members.contains(&r.sample)));
            }
            let hard_min = report
                .scatter
                .iter()
                .filter(|r| r.image_id == img && r.polarity == polarity && r.category == Category::Hard)
                .map(|r| r.loss)
                .fold(f64::INFINITY, f64::min);
            let left_out = members.iter().filter(|&&i| {
                !report.scatter.iter().any(|r| r.sample == i && r.category == Category::Hard)
            });
            for &i in left_out {
                assert!(losses[i] <= hard_min);
            }
        }
    }
}

#[test]
fn bucket_means_match_direct_average() {
    let cfg = small();
    let (batch, pos, neg) = first_batch(&cfg);
    let rc = ReportConfig { hlr_bucket: 4, ..ReportConfig::default() };
    let report = distribution_report(&batch, &per_sample_ce(&batch), &pos, &neg, &rc).unwrap();
    for b in &report.hlr_buckets {
        let ranking = if b.polarity == Polarity::Positive { &pos } else { &neg };
        let scores: Vec<f64> = ranking
            .entries
            .iter()
            .filter(|e| (e.hlr as f64) >= b.lo && (e.hlr as f64) < b.hi)
            .map(|e| {
                let s = &batch.class_scores[e.sample];
                if b.polarity == Polarity::Positive {
                    s[batch.assignment.matches[e.sample].target_class]
                } else {
                    s[..s.len() - 1].iter().copied().fold(0.0, f64::max)
                }
            })
            .collect();
        assert_eq!(scores.len(), b.count);
        assert!((scores.iter().sum::<f64>() / scores.len() as f64 - b.mean_score).abs() < 1e-9);
    }
    let total: usize = report.hlr_buckets.iter().map(|b| b.count).sum();
    assert_eq!(total, pos.len() + neg.len());
    let in_iou: usize = report.iou_buckets.iter().map(|b| b.count).sum();
    let want = batch
        .assignment
        .positives()
        .filter(|&i| (0.5..=1.0).contains(&batch.regressed_iou(i)))
        .count();
    assert_eq!(in_iou, want);
}

#[test]
fn batches_without_positives_give_empty_positive_tables() {
    let cfg = small();
    let (batch, _, _) = first_batch(&cfg);
    let negatives: Vec<usize> = batch.assignment.negatives().collect();
    let only_neg = batch.subset(&negatives);
    let pos = iou_hlr(&only_neg).unwrap();
    assert!(pos.is_empty());
    let neg = score_hlr(&only_neg, &nms_cluster(&only_neg, 0.7).unwrap()).unwrap();
    let report = distribution_report(&only_neg, &per_sample_ce(&only_neg), &pos, &neg, &ReportConfig::default()).unwrap();
    assert!(report.iou_buckets.is_empty());
    assert!(report.scatter.iter().all(|r| r.polarity == Polarity::Negative));
    assert!(report.hlr_buckets.iter().all(|b| b.polarity == Polarity::Negative));
    assert!(!report.hlr_buckets.is_empty());
}

#[test]
fn scene_report_covers_every_scene() {
    let (cfg, head, scenes) = trained();
    let report = scene_report(&head, &scenes, &cfg, &ReportConfig::default()).unwrap();
    let mut images: Vec<usize> = report.scatter.iter().map(|r| r.image_id).collect();
    images.sort_unstable();
    images.dedup();
    assert_eq!(images, (0..scenes.len()).collect::<Vec<_>>());
    assert!(report.hlr_buckets.windows(2).all(|w| (w[0].polarity, w[0].lo) < (w[1].polarity, w[1].lo)));
}
