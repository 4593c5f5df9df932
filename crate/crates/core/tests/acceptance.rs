//! Acceptance criteria 1–7. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. `ACCEPTANCE_ONLY=1,4` runs a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use mbdcnn::cam::cam_from_features;
use mbdcnn::checkpoint::{Checkpoint, CheckpointMeta, NetKind};
use mbdcnn::config::LossKind;
use mbdcnn::losses::*;
use mbdcnn::metrics::*;
use mbdcnn::networks::{build_coarse_sn, build_enhanced_sn, build_mask_cn, perturb, BackboneSpec};
use mbdcnn::pipeline::*;
use mbdcnn::report;
use mbdcnn::tensor::{Grid, Tensor};
use rand::Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;
/// Inputs are resampled until every selection boundary and hinge argument
/// is at least this far from a kink.
const KINK_CLEARANCE: f64 = 1e-3;

fn clear_of_kinks(pred: &ProbMask, gt: &GroundTruthMask, k: usize, margin: f64) -> bool {
    let mut errs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (p, y) in pred.values().iter().zip(gt.values()) {
        errs[*y as usize].push((p - *y as f64).abs());
    }
    for e in &mut errs {
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if e.len() > k && e[k - 1] - e[k] < KINK_CLEARANCE {
            return false;
        }
    }
    let hard = select_hard_pixels(pred, gt, k).unwrap();
    hard.background
        .iter()
        .all(|b| hard.lesion.iter().all(|l| (b.value - l.value + margin).abs() > KINK_CLEARANCE))
}

fn criterion_1() -> Verdict {
    let mut r = rng(1);
    let params = HybridLossParams::default();
    let weights = ClassWeights {
        lesion: 2.5,
        background: 0.7,
    };
    let mut worst: [f64; 5] = [0.0; 5];
    let mut active_pairs = 0usize;
    for _ in 0..20 {
        let (pred, gt) = loop {
            let p = prob_mask(&mut r, 8, 8, 0.05, 0.95);
            let g = gt_mask_both(&mut r, 8, 8);
            if clear_of_kinks(&p, &g, params.k_hard, params.margin) {
                break (p, g);
            }
        };
        let hard = select_hard_pixels(&pred, &gt, params.k_hard).unwrap();
        active_pairs += hard
            .background
            .iter()
            .flat_map(|b| hard.lesion.iter().map(move |l| b.value - l.value + params.margin))
            .filter(|&a| a > 0.0)
            .count();
        let cases: [(Box<dyn Fn(&ProbMask) -> f64>, Vec<f64>); 5] = [
            (
                Box::new(|p: &ProbMask| dice_loss(p, &gt, params.epsilon).unwrap()),
                dice_loss_grad(&pred, &gt, params.epsilon).unwrap().grad,
            ),
            (
                Box::new(|p: &ProbMask| weighted_cross_entropy_loss(p, &gt, weights).unwrap()),
                weighted_cross_entropy_grad(&pred, &gt, weights).unwrap().grad,
            ),
            (
                Box::new(|p: &ProbMask| focal_loss(p, &gt, 2.0, 0.25).unwrap()),
                focal_loss_grad(&pred, &gt, 2.0, 0.25).unwrap().grad,
            ),
            (
                Box::new(|p: &ProbMask| hybrid_loss(p, &gt, &params).unwrap()),
                hybrid_loss_grad(&pred, &gt, &params).unwrap().grad,
            ),
            (
                Box::new(|p: &ProbMask| rank_loss(p, &gt, params.k_hard, params.margin).unwrap()),
                rank_loss_grad(&pred, &gt, params.k_hard, params.margin).unwrap().grad,
            ),
        ];
        for (i, (f, analytic)) in cases.iter().enumerate() {
            let numeric = numeric_grad(&pred, FD_STEP, f);
            worst[i] = worst[i].max(max_relative_error(analytic, &numeric, REL_FLOOR));
        }
    }
    let names = ["dice", "wce", "focal", "hybrid", "rank"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(active_pairs > 0, || "no active hinge pairs were exercised".into())?;
    check(worst.iter().all(|&e| e < 1e-4), || format!("max relative error too large: {detail}"))?;
    Ok(format!("max relative error {detail}; {active_pairs} active hinge pairs"))
}

fn criterion_2() -> Verdict {
    let mut r = rng(2);
    for case in 0..1000 {
        // Mostly 16x16, with some small and ragged shapes.
        let (h, w) = if case % 4 == 0 { (r.gen_range(1..=12), r.gen_range(1..=12)) } else { (16, 16) };
        let levels = r.gen_range(2..=10);
        let pred = quantized_prob_mask(&mut r, h, w, levels);
        let rate = r.gen_range(0.0..1.0);
        let gt = gt_mask(&mut r, h, w, rate);
        let k = r.gen_range(1..=h * w + 3);
        let got = select_hard_pixels(&pred, &gt, k).map_err(e2s)?;
        check(got == hard_pixel_oracle(&pred, &gt, k), || format!("hard-pixel case {case} differs"))?;
    }
    let mut cam_err: f64 = 0.0;
    for case in 0..100 {
        let (k, h, w, c) = (r.gen_range(1..=16), r.gen_range(1..=9), r.gen_range(1..=9), r.gen_range(2..=4));
        let feats: Vec<f32> = (0..k * h * w).map(|_| r.gen_range(0.0..3.0)).collect();
        let weights: Vec<f32> = (0..k * c).map(|_| r.gen_range(-1.0..1.0)).collect();
        let class = r.gen_range(0..c);
        let t = Tensor::from_vec([1, k, h, w], feats.clone()).unwrap();
        let g = Grid::new(k, c, weights.clone()).unwrap();
        let cam = cam_from_features(&t, &g, class).map_err(e2s)?;
        let column: Vec<f32> = (0..k).map(|i| weights[i * c + class]).collect();
        let oracle = cam_oracle(&feats, k, h * w, &column);
        let err = cam.values.values().iter().zip(&oracle).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        check(err <= 1e-6, || format!("CAM case {case} error {err:e}"))?;
        cam_err = cam_err.max(err);
    }
    for case in 0..1000 {
        let (h, w) = (r.gen_range(1..=10), r.gen_range(1..=10));
        let pred = quantized_prob_mask(&mut r, h, w, 8);
        let rate = r.gen_range(0.0..1.0);
        let gt = gt_mask(&mut r, h, w, rate);
        let t = [0.0, 0.25, 0.5, 0.75, 1.0, 1.1][r.gen_range(0..6)];
        let c = confusion_counts(&pred, &gt, t).map_err(e2s)?;
        check(c == counts_oracle(&pred, &gt, t), || format!("count case {case} differs"))?;
        let got = [jaccard(&c), dice_coef(&c), pixel_accuracy(&c), sensitivity(&c), specificity(&c)];
        check(got == metric_oracle(&c), || format!("metric case {case}: {got:?} vs {:?}", metric_oracle(&c)))?;
    }
    let mut auc_err: f64 = 0.0;
    for case in 0..100 {
        let n = r.gen_range(2..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.4) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0..20) as f64) / 20.0).collect();
        let err = (roc_auc(&scores, &labels).map_err(e2s)? - mann_whitney(&scores, &labels)).abs();
        check(err <= 1e-9, || format!("AUC case {case} error {err:e}"))?;
        auc_err = auc_err.max(err);
    }
    Ok(format!(
        "1000 hard-pixel, 1000 metric cases exact; CAM max error {cam_err:.1e}; AUC max error {auc_err:.1e}"
    ))
}

fn criterion_3() -> Verdict {
    let mut r = rng(3);
    let mut di_err: f64 = 0.0;
    for _ in 0..1000 {
        let (h, w) = (r.gen_range(1..=16), r.gen_range(1..=16));
        let c = confusion_counts(&prob_mask(&mut r, h, w, 0.0, 1.0), &gt_mask(&mut r, h, w, 0.5), 0.5).map_err(e2s)?;
        if c.tp + c.fp + c.fn_ == 0 {
            continue;
        }
        let ja = jaccard(&c);
        di_err = di_err.max((dice_coef(&c) - 2.0 * ja / (1.0 + ja)).abs());
    }
    // Both sides are a few correctly rounded operations on the same integers.
    check(di_err <= 4.0 * f64::EPSILON, || format!("DI/JA identity off by {di_err:e}"))?;
    for _ in 0..200 {
        let pred = prob_mask(&mut r, 6, 7, 0.0, 1.0);
        let gt = gt_mask(&mut r, 6, 7, 0.4);
        let params = HybridLossParams {
            lambda_weight: 0.0,
            ..HybridLossParams::default()
        };
        let hy = hybrid_loss_grad(&pred, &gt, &params).map_err(e2s)?;
        let di = dice_loss_grad(&pred, &gt, params.epsilon).map_err(e2s)?;
        check(hy == di, || "hybrid with lambda 0 differs from dice".into())?;
        let fo = focal_loss(&pred, &gt, 0.0, 1.0).map_err(e2s)?;
        let ce = cross_entropy_loss(&pred, &gt).map_err(e2s)?;
        check(fo == ce, || format!("focal(0, 1) {fo} != cross-entropy {ce}"))?;
    }
    for _ in 0..200 {
        // Lesion pixels above 0.8, background below 0.2, margin 0.3 → satisfied.
        let gt = gt_mask_both(&mut r, 5, 5);
        let v = gt
            .values()
            .iter()
            .map(|&y| if y == 1 { r.gen_range(0.8..=1.0) } else { r.gen_range(0.0..0.2) })
            .collect();
        let pred = ProbMask::new(5, 5, v).unwrap();
        let out = rank_loss_grad(&pred, &gt, 10, 0.3).map_err(e2s)?;
        check(out.value == 0.0 && out.grad.iter().all(|&g| g == 0.0), || "rank loss nonzero under satisfied margin".into())?;
    }
    let spec = BackboneSpec {
        input_channels: 4,
        depth: 2,
        base_width: 4,
        ..BackboneSpec::default()
    };
    let mut net = build_mask_cn(&spec, 3, 11).map_err(e2s)?;
    perturb(&mut net, &mut r, 0.5);
    net.init_fourth_channel().map_err(e2s)?;
    let w = &net.encoder.stem().weight;
    let [out_c, in_c, kh, kw] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3]];
    check(in_c == 4, || "stem does not take four channels".into())?;
    let plane = kh * kw;
    for o in 0..out_c {
        for p in 0..plane {
            let at = |c: usize| w.value[(o * in_c + c) * plane + p];
            let mean = (at(0) + at(1) + at(2)) / 3.0;
            check(at(3) == mean, || format!("fourth-channel weight {} != RGB mean {mean}", at(3)))?;
        }
    }
    Ok(format!("DI/JA max deviation {di_err:e}; other identities bit-exact"))
}

fn criterion_4() -> Verdict {
    let mut r = rng(4);
    let spec = BackboneSpec {
        depth: 3,
        base_width: 8,
        ..BackboneSpec::default()
    };
    let mut coarse = build_coarse_sn(&spec, 5).map_err(e2s)?;
    perturb(&mut coarse, &mut r, 0.05);
    // A few training-mode passes give the batch norms non-trivial statistics.
    for _ in 0..3 {
        let x = Tensor::from_vec([4, 3, 32, 32], (0..4 * 3 * 32 * 32).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        coarse.forward(&x, true).map_err(e2s)?;
    }
    let ckpt = Checkpoint::capture(&mut coarse, CheckpointMeta::new(NetKind::Coarse, spec, 5));
    let mut enhanced = build_enhanced_sn(&ckpt, 1, 5).map_err(e2s)?;
    enhanced.neutralize_e_layer();
    let mut worst: f32 = 0.0;
    for _ in 0..10 {
        let x = Tensor::from_vec([1, 3, 32, 32], (0..3 * 32 * 32).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let m = Tensor::from_vec([1, 1, 32, 32], (0..32 * 32).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let a = coarse.forward(&x, false).map_err(e2s)?;
        let b = enhanced.forward(&x, &m, false).map_err(e2s)?;
        let d = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
        worst = worst.max(d);
    }
    check(worst <= 1e-5, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation over 10 inputs {worst:.1e}"))
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut rows = Vec::new();
    let (mut coarse_test, mut coarse_val, mut enh_val, mut enh_test) = (vec![], vec![], vec![], vec![]);
    let (mut acc_mask, mut acc_plain, mut ja_dice) = (vec![], vec![], vec![]);
    for seed in 0..3 {
        let config = desk(seed);
        let data = Datasets::load_for_run(&config).map_err(e2s)?;
        check(
            (data.seg_train.len(), data.seg_val.len(), data.seg_test.len()) == (200, 50, 50)
                && data.seg_train[0].image.height() == 64,
            || "synthetic split is not 200/50/50 at 64x64".into(),
        )?;
        let run = run_in_memory(&config, &data).map_err(e2s)?;
        let reports = run.final_reports(&config, &data).map_err(e2s)?;
        let mut plain = config.clone();
        plain.stages.no_mask = true;
        let no_mask = train_classifier(
            &data.cls_train,
            &data.cls_val,
            None,
            &plain,
            ClassifierInit::Fresh {
                coarse: Some(&run.coarse.checkpoint),
            },
            &StageSettings::classification(&plain, Stage::TrainClassifier.name()),
        )
        .map_err(e2s)?;
        let losses = compare_losses(&config, &data, &[LossKind::Dice]).map_err(e2s)?;
        let dice = losses.rows[0].scores.ok_or_else(|| format!("dice run failed: {:?}", losses.rows[0].error))?;
        coarse_test.push(reports.coarse.mean.ja);
        enh_test.push(reports.enhanced.mean.ja);
        coarse_val.push(run.coarse.best_metric());
        enh_val.push(run.enhanced.best_metric());
        acc_mask.push(run.classifier.best_metric());
        acc_plain.push(no_mask.best_metric());
        ja_dice.push(dice.ja);
        rows.push(format!(
            "seed {seed}: coarse val/test {:.4}/{:.4}, enhanced val/test {:.4}/{:.4}, cls acc mask/plain {:.3}/{:.3}, dice test {:.4}",
            coarse_val[seed as usize],
            coarse_test[seed as usize],
            enh_val[seed as usize],
            enh_test[seed as usize],
            acc_mask[seed as usize],
            acc_plain[seed as usize],
            ja_dice[seed as usize]
        ));
        println!("    {}", rows.last().unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let min_coarse = coarse_test.iter().cloned().fold(f64::INFINITY, f64::min);
    let parts = [
        ("a", min_coarse > 0.70, format!("min coarse test JA {min_coarse:.4} > 0.70")),
        (
            "b",
            median(&enh_val) >= median(&coarse_val),
            format!("median val JA enhanced {:.4} >= coarse {:.4}", median(&enh_val), median(&coarse_val)),
        ),
        (
            "c",
            median(&acc_mask) >= median(&acc_plain),
            format!("median val accuracy mask {:.4} >= plain {:.4}", median(&acc_mask), median(&acc_plain)),
        ),
        (
            "d",
            median(&coarse_test) >= median(&ja_dice),
            format!("median test JA hybrid {:.4} >= dice {:.4}", median(&coarse_test), median(&ja_dice)),
        ),
        ("time", secs < 45.0 * 60.0, format!("{:.1} min < 45", secs / 60.0)),
    ];
    let summary = parts
        .iter()
        .map(|(n, ok, d)| format!("({n}) {} {d}", if *ok { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join("; ");
    check(parts.iter().all(|p| p.1), || summary.clone())?;
    Ok(summary)
}

fn emit(p: &Pipeline) -> Result<(), String> {
    let reports = p.final_reports().map_err(e2s)?;
    let overlays = p.overlay_panels(p.config.eval.overlay_samples).map_err(e2s)?;
    report::emit_run_report(&p.dir.join("reports"), &reports, &p.data.class_names, &p.curves().map_err(e2s)?, &overlays)
        .map_err(e2s)?;
    Ok(())
}

fn criterion_6() -> Verdict {
    let config = tiny(6);
    let root = tempfile::tempdir().map_err(e2s)?;
    let dirs: Vec<_> = ["a", "b", "resumed"].iter().map(|n| root.path().join(n)).collect();
    for d in &dirs[..2] {
        let mut p = Pipeline::open(config.clone(), d).map_err(e2s)?;
        p.run(None).map_err(e2s)?;
        emit(&p)?;
    }
    {
        let mut p = Pipeline::open(config.clone(), &dirs[2]).map_err(e2s)?;
        p.run(Some(Stage::GenerateMasks)).map_err(e2s)?;
        check(!p.state.is_complete(Stage::TrainClassifier), || "stop-after did not stop".into())?;
    }
    let mut p = Pipeline::open(config, &dirs[2]).map_err(e2s)?;
    check(p.state.is_complete(Stage::GenerateMasks), || "resumed state lost completed stages".into())?;
    p.run(None).map_err(e2s)?;
    emit(&p)?;
    check(p.state.all_complete(), || "state does not list all five stages complete".into())?;
    let twice = tree_diff(&dirs[0], &dirs[1]);
    check(twice.is_empty(), || format!("repeated runs differ in {twice:?}"))?;
    let resumed = tree_diff(&dirs[0], &dirs[2]);
    check(resumed.is_empty(), || format!("resumed run differs in {resumed:?}"))?;
    let files = tree(&dirs[0]).len();
    Ok(format!("{files} files identical across two runs and a resume after generate_masks"))
}

fn criterion_7() -> Verdict {
    let config = tiny(7);
    let root = tempfile::tempdir().map_err(e2s)?;
    let dir = root.path().join("run");
    let mut p = Pipeline::open(config.clone(), &dir).map_err(e2s)?;
    p.run(None).map_err(e2s)?;
    emit(&p)?;
    let mem = run_in_memory(&config, &p.data).map_err(e2s)?;
    let mut checked = 0;
    for (stage, outcome) in [
        (Stage::TrainCoarse, &mem.coarse),
        (Stage::TrainClassifier, &mem.classifier),
        (Stage::TrainEnhanced, &mem.enhanced),
    ] {
        let loaded = p.checkpoint(stage).map_err(e2s)?;
        check(loaded == outcome.checkpoint, || format!("{stage} checkpoint differs after reload"))?;
        let again = root.path().join(format!("again_{stage}"));
        loaded.save(&again).map_err(e2s)?;
        check(Checkpoint::load(&again).map_err(e2s)? == loaded, || format!("{stage} second round trip differs"))?;
        check(tree_diff(&dir.join(stage.artifact_dir()), &again).is_empty(), || format!("{stage} files differ"))?;
        check(p.curve(stage).map_err(e2s)? == outcome.curve, || format!("{stage} curve differs after reload"))?;
        checked += 1;
    }
    for (stage, maps) in [(Stage::GenerateMasks, &mem.masks), (Stage::GenerateCams, &mem.cams)] {
        let loaded = p.maps(stage).map_err(e2s)?;
        check(&loaded == maps, || format!("{stage} maps differ after reload"))?;
        checked += 1;
    }
    let final_mem = mem.final_reports(&config, &p.data).map_err(e2s)?;
    let rdir = dir.join("reports");
    check(report::read_final_reports(&rdir).map_err(e2s)? == final_mem, || "final reports differ after reload".into())?;
    check(
        report::read_seg_report(&rdir.join("coarse_per_image.csv")).map_err(e2s)? == final_mem.coarse,
        || "coarse per-image table differs after reload".into(),
    )?;
    check(
        report::read_seg_report(&rdir.join("enhanced_per_image.csv")).map_err(e2s)? == final_mem.enhanced,
        || "enhanced per-image table differs after reload".into(),
    )?;
    let coarse = p.checkpoint(Stage::TrainCoarse).map_err(e2s)?;
    let again = evaluate_coarse(&coarse, &p.data.seg_val, &config).map_err(e2s)?.mean.ja;
    check((again - coarse.meta.metric).abs() <= 1e-6, || {
        format!("re-evaluated validation JA {again} vs recorded {}", coarse.meta.metric)
    })?;
    Ok(format!("{checked} artifacts and 3 report files reload bit-exactly; recorded metric reproduced"))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("loss gradients vs finite differences", criterion_1),
        ("oracle equivalence", criterion_2),
        ("algebraic identities", criterion_3),
        ("neutral fusion block", criterion_4),
        ("synthetic end-to-end regression", criterion_5),
        ("determinism and resume", criterion_6),
        ("persistence round trip", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("criterion {n} PASS [{name}] {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} FAIL [{name}] {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
