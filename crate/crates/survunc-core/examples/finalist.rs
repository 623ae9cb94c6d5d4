// Full-size validation of finalist mixing structures across all the
// quantities the acceptance fixtures will measure. Dev probe, not a test.
//
// Usage: finalist <data_seeds> <struct_seeds> [n]
use survunc_core::baselines::{ensemble_fit, Aggregation, EnsembleUq};
use survunc_core::data::{split, SurvivalCurve, SurvivalDataset, TimeGrid};
use survunc_core::estimators::censoring_kaplan_meier;
use survunc_core::harness::{Quantifier, UncertaintyScorer};
use survunc_core::meta::{build_meta_dataset, fit_meta, sample_anchors, MetaModelKind};
use survunc_core::metrics::{auroc, c_td, event_quantile_grid, ibs, pearson, per_sample_ibs};
use survunc_core::models::cox::cox_fit;
use survunc_core::models::deepsurv::{deepsurv_fit, DeepSurvConfig};
use survunc_core::models::rsf::{rsf_fit, RsfConfig};
use survunc_core::models::{AnyModel, SurvivalModel};
use survunc_core::seed;
use survunc_core::synth::{
    default_ood_shift, generate, generate_ood, HazardComponent, HazardMixtureSpec, SynthOracle,
};

fn retained(
    curves: &[SurvivalCurve],
    times: &[f64],
    events: &[bool],
    grid: &TimeGrid,
    censor: &SurvivalCurve,
    keep: &[usize],
) -> (f64, f64) {
    let c: Vec<_> = keep.iter().map(|&i| curves[i].clone()).collect();
    let t: Vec<f64> = keep.iter().map(|&i| times[i]).collect();
    let e: Vec<bool> = keep.iter().map(|&i| events[i]).collect();
    (
        c_td(&c, &t, &e).unwrap().value,
        ibs(&c, &t, &e, grid, censor).unwrap().value,
    )
}

fn keep_low_half(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut k: Vec<usize> = order[scores.len() / 2..].to_vec();
    k.sort_unstable();
    k
}

struct BaseEval {
    dm_rf: f64,
    dm_mlp: f64,
    dibs_rf: f64,
    rho_rf: f64,
    rho_mlp: f64,
}

#[allow(clippy::too_many_arguments)]
fn eval_base(
    model: &AnyModel,
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    grid: &TimeGrid,
    censor: &SurvivalCurve,
    s: u64,
) -> BaseEval {
    let times = test.times();
    let events = test.events();
    let curves: Vec<_> = (0..test.n())
        .map(|i| model.predict_survival(&test.record(i).covariates, grid).unwrap())
        .collect();
    let anchors = sample_anchors(train, 50, 1000 + s, false).unwrap();
    let meta_ds = build_meta_dataset(train, &anchors, model).unwrap();
    let mut scores = Vec::new();
    for kind in [MetaModelKind::Rf, MetaModelKind::Mlp] {
        let meta = fit_meta(&meta_ds, kind, 1000 + s).unwrap();
        let q = Quantifier::Meta { meta };
        scores.push(
            (0..test.n())
                .map(|i| q.score_one(&test.record(i).covariates).unwrap())
                .collect::<Vec<f64>>(),
        );
    }
    let all: Vec<usize> = (0..test.n()).collect();
    let (ctd0, ibs0) = retained(&curves, &times, &events, grid, censor, &all);
    let (ctd_rf, ibs_rf) =
        retained(&curves, &times, &events, grid, censor, &keep_low_half(&scores[0]));
    let (ctd_mlp, _) =
        retained(&curves, &times, &events, grid, censor, &keep_low_half(&scores[1]));

    let unc = test.event_indices();
    let psibs: Vec<f64> = unc
        .iter()
        .map(|&i| per_sample_ibs(&curves[i], times[i], true, grid, censor).unwrap())
        .collect();
    let rf_unc: Vec<f64> = unc.iter().map(|&i| scores[0][i]).collect();
    let mlp_unc: Vec<f64> = unc.iter().map(|&i| scores[1][i]).collect();
    BaseEval {
        dm_rf: ctd_rf - ctd0,
        dm_mlp: ctd_mlp - ctd0,
        dibs_rf: ibs_rf - ibs0,
        rho_rf: pearson(&rf_unc, &psibs).unwrap(),
        rho_mlp: pearson(&mlp_unc, &psibs).unwrap(),
    }
}

fn ood_auroc(q: &dyn UncertaintyScorer, test: &SurvivalDataset, ood: &SurvivalDataset) -> f64 {
    let ind: Vec<f64> = (0..2000.min(test.n()))
        .map(|i| q.score_one(&test.record(i).covariates).unwrap())
        .collect();
    let out: Vec<f64> = (0..ood.n())
        .map(|i| q.score_one(&ood.record(i).covariates).unwrap())
        .collect();
    auroc(&ind, &out).unwrap().value
}

fn gap_ordering(
    scores: &[f64],
    test: &SurvivalDataset,
    model: &AnyModel,
    oracle: &SynthOracle,
    grid: &TimeGrid,
) -> (f64, f64) {
    let mut order: Vec<usize> = (0..test.n()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let gap = |i: usize| -> f64 {
        let x = &test.record(i).covariates;
        let m = model.predict_survival(x, grid).unwrap();
        let o = oracle.ground_truth_curve(x, grid).unwrap();
        m.probabilities()
            .iter()
            .zip(o.probabilities())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let low: f64 = order[..3].iter().map(|&i| gap(i)).sum::<f64>() / 3.0;
    let high: f64 = order[test.n() - 3..].iter().map(|&i| gap(i)).sum::<f64>() / 3.0;
    (low, high)
}

fn parse_list(arg: Option<String>, default: &[u64]) -> Vec<u64> {
    arg.map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| default.to_vec())
}

fn main() {
    let data_seeds = parse_list(std::env::args().nth(1), &[0]);
    let struct_seeds = parse_list(std::env::args().nth(2), &[3]);
    let n: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(20_000);

    let components = [
        HazardComponent::Constant { rate: 0.10 },
        HazardComponent::Weibull { shape: 3.5, scale: 9.0 },
        HazardComponent::Weibull { shape: 0.55, scale: 0.5 },
    ];

    for &g in &struct_seeds {
        for &s in &data_seeds {
            let mut spec = HazardMixtureSpec::new(8, 0.37, s)
                .unwrap()
                .with_components(components)
                .unwrap();
            let scale = 3.0 / (spec.d as f64).sqrt();
            spec.mixing_coefficients = (0..3)
                .map(|c| {
                    let mut rng = seed::rng(g, "mixing-structure", c as u64);
                    (0..spec.d).map(|_| seed::standard_normal(&mut rng) * scale).collect()
                })
                .collect();
            spec.recalibrate_censoring().unwrap();

            let (data, oracle) = generate(&spec, n).unwrap();
            let sa = split(data.n(), (0.6, 0.2, 0.2), s).unwrap();
            let train = data.subset(&sa.train);
            let val = data.subset(&sa.val);
            let test = data.subset(&sa.test);
            let times = test.times();
            let events = test.events();
            let grid = event_quantile_grid(&times, &events, 64).unwrap();
            let censor = censoring_kaplan_meier(&times, &events).unwrap();

            let cox = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
            let ce = eval_base(&cox, &train, &test, &grid, &censor, s);
            println!(
                "struct {g} seed {s} cox: dM rf {:+.4} mlp {:+.4} dIBS {:+.4} rho rf {:+.3} mlp {:+.3}",
                ce.dm_rf, ce.dm_mlp, ce.dibs_rf, ce.rho_rf, ce.rho_mlp
            );

            let rsf = AnyModel::Rsf(rsf_fit(&train, &RsfConfig::with_seed(7 + s)).unwrap());
            let re = eval_base(&rsf, &train, &test, &grid, &censor, s);
            println!(
                "struct {g} seed {s} rsf: dM rf {:+.4} mlp {:+.4} dIBS {:+.4} rho rf {:+.3} mlp {:+.3}",
                re.dm_rf, re.dm_mlp, re.dibs_rf, re.rho_rf, re.rho_mlp
            );

            // OOD + gap ordering on the hazard-network base
            let ds_cfg = DeepSurvConfig::with_seed(11 + s);
            let ds = AnyModel::DeepSurv(deepsurv_fit(&train, &val, &ds_cfg).unwrap());
            let anchors = sample_anchors(&train, 50, 1000 + s, false).unwrap();
            let meta_ds = build_meta_dataset(&train, &anchors, &ds).unwrap();
            let ood = generate_ood(&spec, 2000, &default_ood_shift(8)).unwrap();

            let meta_rf = fit_meta(&meta_ds, MetaModelKind::Rf, 1000 + s).unwrap();
            let q_rf = Quantifier::Meta { meta: meta_rf };
            let scores_rf: Vec<f64> = (0..test.n())
                .map(|i| q_rf.score_one(&test.record(i).covariates).unwrap())
                .collect();
            let auc_rf = ood_auroc(&q_rf, &test, &ood);

            let meta_mlp = fit_meta(&meta_ds, MetaModelKind::Mlp, 1000 + s).unwrap();
            let q_mlp = Quantifier::Meta { meta: meta_mlp };
            let auc_mlp = ood_auroc(&q_mlp, &test, &ood);

            let ens: EnsembleUq = ensemble_fit(&train, Some(&val), &ds, 10, 2000 + s).unwrap();
            let q_ens = Quantifier::Ensemble {
                ensemble: ens,
                grid: grid.clone(),
                aggregation: Aggregation::MaxStd,
            };
            let auc_ens = ood_auroc(&q_ens, &test, &ood);

            let (gap_low, gap_high) = gap_ordering(&scores_rf, &test, &ds, &oracle, &grid);
            println!(
                "struct {g} seed {s} ds : ood rf {auc_rf:.3} mlp {auc_mlp:.3} ens {auc_ens:.3} | gaps low {gap_low:.4} high {gap_high:.4} ({})",
                if gap_low < gap_high { "ordered" } else { "INVERTED" }
            );
        }
    }
}
