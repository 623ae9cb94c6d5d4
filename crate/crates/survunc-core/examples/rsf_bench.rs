// Timing/direction probe for the evaluation pipeline at benchmark scale.
// Not part of the test suite; run with --release.
use rayon::prelude::*;
use survunc_core::baselines::{ensemble_fit, Aggregation};
use survunc_core::data::split;
use survunc_core::harness::{
    misprediction_report, ood_report, selective_prediction, Quantifier,
    UncertaintyScorer,
};
use survunc_core::meta::{build_meta_dataset, fit_meta, sample_anchors, MetaModelKind};
use survunc_core::metrics::event_quantile_grid;
use survunc_core::models::cox::cox_fit;
use survunc_core::models::deepsurv::{deepsurv_fit, DeepSurvConfig};
use survunc_core::models::rsf::{rsf_fit, RsfConfig};
use survunc_core::models::{AnyModel, SurvivalModel};
use survunc_core::seed;
use survunc_core::synth::{default_ood_shift, generate, generate_ood, HazardMixtureSpec};

fn main() {
    let seeds: Vec<u64> = std::env::args()
        .nth(1)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1]);

    for &s in &seeds {
        let t0 = std::time::Instant::now();
        let spec = HazardMixtureSpec::new(8, 0.37, 1000 + s).unwrap();
        let (data, _) = generate(&spec, 20_000).unwrap();
        let sa = split(data.n(), (0.6, 0.2, 0.2), s).unwrap();
        let train = data.subset(&sa.train);
        let test = data.subset(&sa.test);
        let models = vec![
            ("cox", AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap())),
            (
                "rsf",
                AnyModel::Rsf(
                    rsf_fit(&train, &RsfConfig::with_seed(seed::derive(1000 + s, "rsf", 0)))
                        .unwrap(),
                ),
            ),
        ];
        for (mname, model) in &models {
            let anchors = sample_anchors(&train, 50, 1000 + s, false).unwrap();
            let meta_ds = build_meta_dataset(&train, &anchors, model).unwrap();
            for (kname, kind) in [
                ("survunc-rf", MetaModelKind::Rf),
                ("survunc-mlp", MetaModelKind::Mlp),
            ] {
                let meta = fit_meta(&meta_ds, kind, 1000 + s).unwrap();
                let q = Quantifier::Meta { meta };
                let pts =
                    selective_prediction(model, &q, &test, &[0.0, 0.5], 32, 1000 + s).unwrap();
                let rep = misprediction_report(model, &q, &test).unwrap();
                println!(
                    "seed {s} {mname}+{kname}: ctd {:.4} -> {:.4} (d {:+.4}), ibs {:.4} -> {:.4} (d {:+.4}), rho {:.3}",
                    pts[0].c_td.as_ref().unwrap().mean,
                    pts[1].c_td.as_ref().unwrap().mean,
                    pts[1].c_td.as_ref().unwrap().mean - pts[0].c_td.as_ref().unwrap().mean,
                    pts[0].ibs.as_ref().unwrap().mean,
                    pts[1].ibs.as_ref().unwrap().mean,
                    pts[1].ibs.as_ref().unwrap().mean - pts[0].ibs.as_ref().unwrap().mean,
                    rep.rho_ibs.unwrap(),
                );
            }
        }
        println!("  [45] seed {s}: {:.1?}", t0.elapsed());

        // criterion 6/8 style world
        let t0 = std::time::Instant::now();
        let spec = HazardMixtureSpec::new(8, 0.37, 2000 + s).unwrap();
        let (data, oracle) = generate(&spec, 10_000).unwrap();
        let sa = split(data.n(), (0.6, 0.2, 0.2), s).unwrap();
        let train = data.subset(&sa.train);
        let val = data.subset(&sa.val);
        let test = data.subset(&sa.test);
        let net = AnyModel::DeepSurv(
            deepsurv_fit(
                &train,
                &val,
                &DeepSurvConfig::with_seed(seed::derive(2000 + s, "net", 0)),
            )
            .unwrap(),
        );
        let anchors = sample_anchors(&train, 50, 2000 + s, false).unwrap();
        let meta_ds = build_meta_dataset(&train, &anchors, &net).unwrap();
        let meta = fit_meta(&meta_ds, MetaModelKind::Rf, 2000 + s).unwrap();
        let q_meta = Quantifier::Meta { meta };
        let grid_train = event_quantile_grid(&train.times(), &train.events(), 64).unwrap();
        let ens = ensemble_fit(&train, Some(&val), &net, 10, 2000 + s).unwrap();
        let q_ens = Quantifier::Ensemble {
            ensemble: ens,
            grid: grid_train,
            aggregation: Aggregation::MaxStd,
        };
        let ood = generate_ood(&spec, 2000, &default_ood_shift(8)).unwrap();
        let r_meta = ood_report(&q_meta, &test, &ood, 30).unwrap();
        let r_ens = ood_report(&q_ens, &test, &ood, 30).unwrap();
        let rho_ens = misprediction_report(&net, &q_ens, &test)
            .unwrap()
            .rho_ibs;

        // curve gaps, 3 lowest vs 3 highest uncertainty
        let covs: Vec<Vec<f64>> = test.records().iter().map(|r| r.covariates.clone()).collect();
        let scores = q_meta.score_batch(&covs).unwrap();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let grid_test = event_quantile_grid(&test.times(), &test.events(), 64).unwrap();
        let gap = |i: usize| -> f64 {
            let x = &test.record(i).covariates;
            let p = net.predict_survival(x, &grid_test).unwrap();
            let o = oracle.ground_truth_curve(x, &grid_test).unwrap();
            p.probabilities()
                .iter()
                .zip(o.probabilities())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let gap_low: f64 = order[..3].iter().map(|&i| gap(i)).sum::<f64>() / 3.0;
        let gap_high: f64 = order[scores.len() - 3..].iter().map(|&i| gap(i)).sum::<f64>() / 3.0;
        println!(
            "seed {s} ood: survunc auroc {:.4}, ensemble auroc {:.4}; rho_ens {:?}; gaps low {:.4} high {:.4}",
            r_meta.auroc.value, r_ens.auroc.value, rho_ens, gap_low, gap_high
        );
        println!("  [68] seed {s}: {:.1?}", t0.elapsed());
    }

    // criterion 7 probe: anchor-count stability on seed 0, cox base
    let t0 = std::time::Instant::now();
    let spec = HazardMixtureSpec::new(8, 0.37, 1000).unwrap();
    let (data, _) = generate(&spec, 20_000).unwrap();
    let sa = split(data.n(), (0.6, 0.2, 0.2), 0).unwrap();
    let train = data.subset(&sa.train);
    let test = data.subset(&sa.test);
    let model = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
    let pcts = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let mut curves = Vec::new();
    for k in [10usize, 200] {
        let anchors = sample_anchors(&train, k, 1000, false).unwrap();
        let meta_ds = build_meta_dataset(&train, &anchors, &model).unwrap();
        let meta = fit_meta(&meta_ds, MetaModelKind::Rf, 1000).unwrap();
        let q = Quantifier::Meta { meta };
        let pts = selective_prediction(&model, &q, &test, &pcts, 32, 7).unwrap();
        let c: Vec<f64> = pts.iter().map(|p| p.c_td.as_ref().unwrap().mean).collect();
        println!("K={k}: {c:?}");
        curves.push(c);
    }
    let max_gap = curves[0]
        .iter()
        .zip(&curves[1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("[7] max |ctd(K=10)-ctd(K=200)| = {max_gap:.4}  ({:.1?})", t0.elapsed());
    let _ = curves
        .par_iter()
        .map(|c| c.len())
        .sum::<usize>();
}
