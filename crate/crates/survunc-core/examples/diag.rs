// Mechanism diagnosis: which scorers make selective prediction improve C^td?
// Not part of the test suite; run with --release.
use std::collections::HashMap;

use survunc_core::data::split;
use survunc_core::estimators::censoring_kaplan_meier;
use survunc_core::harness::{selective_prediction, Quantifier, UncertaintyScorer};
use survunc_core::meta::{build_meta_dataset, compute_meta_label, fit_meta, sample_anchors, MetaModelKind};
use survunc_core::metrics::{event_quantile_grid, pearson, per_sample_ibs};
use survunc_core::models::cox::cox_fit;
use survunc_core::models::{AnyModel, SurvivalModel};
use survunc_core::synth::{generate, HazardMixtureSpec};

fn key(x: &[f64]) -> u64 {
    x.iter()
        .map(|f| f.to_bits())
        .fold(0u64, |a, b| a ^ b.rotate_left(17))
}

struct Table(HashMap<u64, f64>);
impl UncertaintyScorer for Table {
    fn score_one(&self, x: &[f64]) -> survunc_core::error::Result<f64> {
        Ok(*self.0.get(&key(x)).expect("known sample"))
    }
}

fn main() {
    let spec = HazardMixtureSpec::new(8, 0.37, 1000).unwrap();
    let (data, oracle) = generate(&spec, 20_000).unwrap();
    let sa = split(data.n(), (0.6, 0.2, 0.2), 0).unwrap();
    let train = data.subset(&sa.train);
    let test = data.subset(&sa.test);
    let model = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());

    let unc = test.event_indices();
    let times = test.times();
    let events = test.events();
    let grid = event_quantile_grid(&times, &events, 64).unwrap();
    let censor = censoring_kaplan_meier(&times, &events).unwrap();

    // per-sample quantities over the uncensored test samples
    let curves: Vec<_> = unc
        .iter()
        .map(|&i| model.predict_survival(&test.record(i).covariates, &grid).unwrap())
        .collect();
    let t_unc: Vec<f64> = unc.iter().map(|&i| times[i]).collect();
    let m = unc.len();

    // true pairwise discordance fraction of each sample within the test set
    let sv: Vec<Vec<f64>> = (0..m)
        .map(|i| curves.iter().map(|c| c.eval(t_unc[i])).collect())
        .collect();
    let mut disc = vec![0.0f64; m];
    let mut cnt = vec![0usize; m];
    for i in 0..m {
        for j in 0..m {
            if t_unc[i] < t_unc[j] {
                let bad = sv[i][i] >= sv[i][j];
                if bad {
                    disc[i] += 1.0;
                    disc[j] += 1.0;
                }
                cnt[i] += 1;
                cnt[j] += 1;
            }
        }
    }
    for i in 0..m {
        disc[i] /= cnt[i].max(1) as f64;
    }

    let psibs: Vec<f64> = (0..m)
        .map(|i| per_sample_ibs(&curves[i], t_unc[i], true, &grid, &censor).unwrap())
        .collect();

    // fresh meta labels on the test samples themselves (train anchors)
    let anchors = sample_anchors(&train, 50, 1000, false).unwrap();
    let labels: Vec<Option<f64>> = (0..m)
        .map(|i| {
            compute_meta_label(&test.record(unc[i]).covariates, t_unc[i], &anchors, &model).unwrap()
        })
        .collect();
    let defined = labels.iter().flatten().count();

    // fitted survunc-rf scores
    let meta_ds = build_meta_dataset(&train, &anchors, &model).unwrap();
    let meta = fit_meta(&meta_ds, MetaModelKind::Rf, 1000).unwrap();
    let q = Quantifier::Meta { meta };
    let rf_scores: Vec<f64> = (0..m)
        .map(|i| q.score_one(&test.record(unc[i]).covariates).unwrap())
        .collect();

    // oracle ground-truth sup-norm gap
    let gaps: Vec<f64> = (0..m)
        .map(|i| {
            let x = &test.record(unc[i]).covariates;
            let o = oracle.ground_truth_curve(x, &grid).unwrap();
            curves[i]
                .probabilities()
                .iter()
                .zip(o.probabilities())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();

    let lab_or_half: Vec<f64> = labels.iter().map(|l| l.unwrap_or(0.5)).collect();
    let oracle_curves: Vec<_> = unc
        .iter()
        .map(|&i| oracle.ground_truth_curve(&test.record(i).covariates, &grid).unwrap())
        .collect();
    let t_all = vec![true; m];
    let oracle_ctd = survunc_core::metrics::c_td(&oracle_curves, &t_unc, &t_all).unwrap().value;
    println!("m={m} labels defined={defined} oracle_ctd={oracle_ctd:.4}");
    println!("corr(rf_score, disc)   = {:+.3}", pearson(&rf_scores, &disc).unwrap());
    println!("corr(rf_score, psibs)  = {:+.3}", pearson(&rf_scores, &psibs).unwrap());
    println!("corr(rf_score, t)      = {:+.3}", pearson(&rf_scores, &t_unc).unwrap());
    println!("corr(rf_score, gap)    = {:+.3}", pearson(&rf_scores, &gaps).unwrap());
    println!("corr(label,    disc)   = {:+.3}", pearson(&lab_or_half, &disc).unwrap());
    println!("corr(disc,     t)      = {:+.3}", pearson(&disc, &t_unc).unwrap());
    println!("corr(psibs,    t)      = {:+.3}", pearson(&psibs, &t_unc).unwrap());

    let scorers: Vec<(&str, Vec<f64>)> = vec![
        ("survunc-rf", rf_scores),
        ("fresh-label", lab_or_half),
        ("true-discordance", disc),
        ("per-sample-ibs", psibs),
        ("oracle-gap", gaps),
    ];
    for (name, vals) in scorers {
        let table = Table(
            (0..m)
                .map(|i| (key(&test.record(unc[i]).covariates), vals[i]))
                .collect(),
        );
        let pts = selective_prediction(&model, &table, &test, &[0.0, 0.25, 0.5], 32, 7).unwrap();
        let c: Vec<f64> = pts.iter().map(|p| p.c_td.as_ref().unwrap().mean).collect();
        let b: Vec<f64> = pts.iter().map(|p| p.ibs.as_ref().unwrap().mean).collect();
        println!(
            "{name:>18}: ctd {:.4} -> {:.4} -> {:.4} | ibs {:.4} -> {:.4} -> {:.4}",
            c[0], c[1], c[2], b[0], b[1], b[2]
        );
    }
}
