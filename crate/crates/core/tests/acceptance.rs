//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dfo_attack::campaign::{export_results, run_campaign, tile_sweep, CampaignConfig, CampaignStats};
use dfo_attack::dfo::bench::BenchFunction;
use dfo_attack::dfo::{minimize, MinimizeOptions, OptimizerKind};
use dfo_attack::models::{
    synthetic_blob_dataset, train_toy_mlp, CountingOracle, LabeledImage, LinearModel, MlpModel, ModelOracle,
    TrainConfig,
};
use dfo_attack::objectives::{
    continuous_delta, discrete_delta, sample_corner, AttackMode, AttackObjective, AttackSpec, DiscreteForm,
    DiscreteParams, ProblemForm, QueryCounter,
};
use dfo_attack::tiling::TileGrid;
use dfo_attack::{ImageTensor, LossKind, Shape};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

const BLOB_SHAPE: Shape = Shape { channels: 3, height: 16, width: 16 };
const BLOB_CLASSES: usize = 4;
const BLOB_PER_CLASS: usize = 50;
const BLOB_SEPARATION: f64 = 0.06;

fn blob_problem(seed: u64) -> (Vec<LabeledImage>, MlpModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = synthetic_blob_dataset(BLOB_PER_CLASS, BLOB_SHAPE, BLOB_CLASSES, BLOB_SEPARATION, &mut rng).unwrap();
    let model = train_toy_mlp(&data, &TrainConfig::default(), &mut rng).unwrap();
    (data, model)
}

fn campaign_config(optimizer: OptimizerKind) -> CampaignConfig {
    CampaignConfig {
        optimizer,
        form: ProblemForm::Continuous,
        epsilon: 0.1,
        n_tiles: 8,
        query_limit: 2000,
        seed: 2024,
        ..CampaignConfig::default()
    }
}

/// Campaign with oracle calls counted at the model boundary.
fn counted_campaign(config: &CampaignConfig, data: &[LabeledImage], model: &MlpModel) -> (CampaignStats, u64) {
    let counting = CountingOracle::new(model);
    let stats = run_campaign(config, data, &counting).unwrap();
    (stats, counting.calls())
}

fn accounting_holds(stats: &CampaignStats, calls: u64) -> bool {
    let clean_checks = stats.results.len() as u64;
    calls == stats.total_queries() + clean_checks
}

fn one_fifth_rule() -> Verdict {
    let up = 2.0f64;
    let down = 2.0f64.powf(-0.25);
    let mut runner = TestRunner::new(ProptestConfig { cases: 100_000, failure_persistence: None, ..ProptestConfig::default() });
    let strategy = (any::<u64>(), 1usize..6, prop::collection::vec(-10.0f64..10.0, 1..4), any::<bool>());
    let result = runner.run(&strategy, |(seed, dim, values, cauchy)| {
        let kind = if cauchy { OptimizerKind::OnePlusOneCauchy } else { OptimizerKind::OnePlusOneGaussian };
        let mut opt = kind.build(vec![0.0; dim], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::INFINITY;
        for v in values {
            let before = opt.sigma();
            let batch = opt.ask(&mut rng);
            prop_assert_eq!(batch.len(), 1);
            opt.tell(&batch, &[v]).unwrap();
            let after = opt.sigma();
            if v <= best {
                best = v;
                prop_assert_eq!(after, before * up);
            } else {
                prop_assert_eq!(after, before * down);
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => verdict(true, "100000 random tell sequences, every step x2 or x2^(-1/4)"),
        Err(e) => verdict(false, format!("{e}")),
    }
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ellipsoid(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    x.iter().enumerate().map(|(i, v)| 100f64.powf(i as f64 / (d - 1.0)) * v * v).sum()
}

fn cma_convergence() -> Verdict {
    let mut worst_sphere = 0.0f64;
    let mut worst_ellipsoid = 0.0f64;
    let mut ok = 0;
    for seed in 0..10u64 {
        let run = |kind, f: BenchFunction, budget| {
            let options = MinimizeOptions { initial_mean: Some(f.start(10)), ..MinimizeOptions::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            minimize(|x: &[f64]| Ok::<_, ()>(f.evaluate(x)), kind, 10, budget, |_| false, &mut rng, &options).unwrap()
        };
        let s = run(OptimizerKind::CmaFull, BenchFunction::Sphere, 3000);
        let e = run(OptimizerKind::CmaDiagonal, BenchFunction::Ellipsoid, 6000);
        let fs = sphere(&s.best_point);
        let fe = ellipsoid(&e.best_point);
        worst_sphere = worst_sphere.max(fs);
        worst_ellipsoid = worst_ellipsoid.max(fe);
        if fs <= 1e-9 && s.evaluations <= 3000 && fe <= 1e-6 && e.evaluations <= 6000 {
            ok += 1;
        }
    }
    verdict(
        ok == 10,
        format!("{ok}/10 seeds; worst sphere {worst_sphere:.2e} (<=1e-9), worst diagonal ellipsoid {worst_ellipsoid:.2e} (<=1e-6)"),
    )
}

fn linf_feasibility() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::new(3, 12, 12);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let eps = rng.random_range(1e-4..0.5);
        let n_tiles = rng.random_range(1..=12);
        let grid = TileGrid::new(shape, n_tiles).unwrap();
        let image = ImageTensor::filled(shape, 0.5).unwrap();
        let spec = AttackSpec::new(image, 0, AttackMode::Untargeted, eps, LossKind::CrossEntropy, grid.clone()).unwrap();
        let d = grid.search_dimension();
        let scale = 10f64.powi(rng.random_range(-3..7));
        let point: Vec<f64> = (0..2 * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let delta = if i % 2 == 0 {
            continuous_delta(&spec, &point[..d]).unwrap()
        } else {
            let params = DiscreteParams::from_search_point(&point, DiscreteForm::TwoVariable).unwrap();
            let corner = sample_corner(&params, &mut rng);
            let delta = discrete_delta(&spec, &corner).unwrap();
            if delta.iter().any(|v| v.abs() != eps) {
                violations += 1;
            }
            delta
        };
        let m = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(m / eps);
        if m > eps {
            violations += 1;
        }
    }
    verdict(violations == 0, format!("10000 points, {violations} violations, max |delta|/eps = {worst}"))
}

/// Tile-constant perturbation built directly from the 2×2 per-channel layout.
fn corner_image(x: &[f64], shape: Shape, corner: &[f64], eps: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for c in 0..shape.channels {
        for r in 0..shape.height {
            for col in 0..shape.width {
                let tile = c * 4 + (2 * r / shape.height) * 2 + 2 * col / shape.width;
                let i = (c * shape.height + r) * shape.width + col;
                out[i] = (out[i] + eps * corner[tile]).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn log_sum_exp_ce(w: &[f64], bias: &[f64], x: &[f64], label: usize) -> f64 {
    let logits: Vec<f64> = bias
        .iter()
        .enumerate()
        .map(|(k, b)| b + w[k * x.len()..(k + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    logits.iter().map(|l| l.exp()).sum::<f64>().ln() - logits[label]
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn brute_force_corner() -> Verdict {
    let shape = Shape::new(3, 6, 6);
    let eps = 0.05;
    let mut hits = 0;
    let mut gaps = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = shape.len();
        let classes = 3;
        let weights: Vec<f64> = (0..classes * n).map(|_| 0.3 * gauss(&mut rng)).collect();
        let bias: Vec<f64> = (0..classes).map(|_| 0.1 * gauss(&mut rng)).collect();
        let model = LinearModel::new(shape, classes, weights.clone(), bias.clone()).unwrap();
        let pixels: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
        let image = ImageTensor::new(shape, pixels.clone()).unwrap();
        let label = model.predict(&image).unwrap();

        let mut l_star = f64::NEG_INFINITY;
        for bits in 0u32..4096 {
            let corner: Vec<f64> = (0..12).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let x = corner_image(&pixels, shape, &corner, eps);
            l_star = l_star.max(log_sum_exp_ce(&weights, &bias, &x, label));
        }

        let grid = TileGrid::new(shape, 2).unwrap();
        let spec = AttackSpec::new(image, label, AttackMode::Untargeted, eps, LossKind::CrossEntropy, grid).unwrap();
        let mut objective = AttackObjective::new(
            &spec,
            &model,
            QueryCounter::new(2000).unwrap(),
            ProblemForm::Discrete,
            DiscreteForm::TwoVariable,
            Box::new(ChaCha8Rng::seed_from_u64(seed)),
        );
        let dim = objective.search_dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        minimize(
            |x: &[f64]| objective.evaluate(x),
            OptimizerKind::CmaDiagonal,
            dim,
            2000,
            |_| false,
            &mut rng,
            &MinimizeOptions::default(),
        )
        .unwrap();
        let found = objective.best_loss().unwrap();
        let gap = l_star - found;
        gaps.push(gap);
        if gap.abs() <= 1e-9 && objective.queries_used() <= 2000 {
            hits += 1;
        }
    }
    let worst = gaps.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    verdict(hits >= 9, format!("{hits}/10 seeds reached the enumerated optimum (need 9); worst gap {worst:.3e}"))
}

struct CampaignRuns {
    cma: CampaignStats,
    random: CampaignStats,
    accuracy: f64,
    accounting: Vec<(String, bool)>,
    deterministic: bool,
    csv_detail: String,
}

fn campaign_runs() -> CampaignRuns {
    let (data, model) = blob_problem(7);
    let accuracy = model.accuracy(&data).unwrap();
    let mut accounting = Vec::new();

    let (cma, calls) = counted_campaign(&campaign_config(OptimizerKind::CmaFull), &data, &model);
    accounting.push(("cma".to_string(), accounting_holds(&cma, calls)));
    let (random, calls) = counted_campaign(&campaign_config(OptimizerKind::RandomSearch), &data, &model);
    accounting.push(("random".to_string(), accounting_holds(&random, calls)));
    let (again, calls) = counted_campaign(&campaign_config(OptimizerKind::CmaFull), &data, &model);
    accounting.push(("cma repeat".to_string(), accounting_holds(&again, calls)));

    let dir = tempfile::tempdir().unwrap();
    let a = export_results(&cma, dir.path().join("a")).unwrap();
    let b = export_results(&again, dir.path().join("b")).unwrap();
    let mut identical = true;
    let mut bytes = 0;
    for (x, y) in [(&a.results, &b.results), (&a.curve, &b.curve), (&a.summary, &b.summary)] {
        let (x, y) = (fs::read(x).unwrap(), fs::read(y).unwrap());
        bytes += x.len();
        identical &= x == y;
    }
    CampaignRuns {
        cma,
        random,
        accuracy,
        accounting,
        deterministic: identical,
        csv_detail: format!("results, curve and summary CSVs ({bytes} bytes) compared"),
    }
}

fn show(median: Option<f64>) -> String {
    median.map_or_else(|| "n/a".into(), |m| format!("{m}"))
}

fn end_to_end(runs: &CampaignRuns) -> Verdict {
    let rate = runs.cma.success_rate.unwrap_or(0.0);
    let (cma_med, rnd_med) = (runs.cma.median_queries, runs.random.median_queries);
    let below = match (cma_med, rnd_med) {
        (Some(c), Some(r)) => c < r,
        (Some(_), None) => true,
        _ => false,
    };
    verdict(
        runs.accuracy >= 0.9 && rate >= 0.9 && below,
        format!(
            "MLP accuracy {:.3}; CMA success {:.1}% median {}; random success {:.1}% median {}",
            runs.accuracy,
            100.0 * rate,
            show(cma_med),
            100.0 * runs.random.success_rate.unwrap_or(0.0),
            show(rnd_med)
        ),
    )
}

fn tile_sweep_peak() -> Verdict {
    let tiles = [1, 2, 4, 8, 16];
    let mut interior = 0;
    let mut argmaxes = Vec::new();
    for seed in 0..10u64 {
        let (data, model) = blob_problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tile_sweep(&model, &data, &[0.1], &tiles, &mut rng).unwrap();
        let row = &m.rates[0];
        let inner = row[1..row.len() - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ends = row[0].max(row[row.len() - 1]);
        let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
        argmaxes.push(tiles[best]);
        if inner > ends {
            interior += 1;
        }
    }
    verdict(interior >= 8, format!("interior maximum in {interior}/10 dataset seeds (need 8); argmax tiles {argmaxes:?}"))
}

fn query_accounting(runs: &CampaignRuns) -> Verdict {
    let (data, model) = blob_problem(3);
    let mut checks = runs.accounting.clone();
    let mut config = campaign_config(OptimizerKind::OnePlusOneCauchy);
    config.form = ProblemForm::Discrete;
    config.query_limit = 300;
    config.workers = 4;
    let (stats, calls) = counted_campaign(&config, &data, &model);
    checks.push(("opo-cauchy discrete, 4 workers".into(), accounting_holds(&stats, calls)));
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    verdict(failed.is_empty(), format!("{} campaigns checked, mismatches: {failed:?}", checks.len()))
}

fn determinism(runs: &CampaignRuns) -> Verdict {
    verdict(runs.deterministic, runs.csv_detail.clone())
}

fn mlp_gradient_check() -> Verdict {
    let shape = Shape::new(1, 1, 1);
    let mut model = MlpModel::init(shape, 2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let params = [0.7, -1.1, 0.15, 0.35, 0.8, -0.6, 1.2, 0.25, 0.05, -0.15];
    if model.param_count() != 10 {
        return verdict(false, format!("instance has {} parameters", model.param_count()));
    }
    model.set_params(&params).unwrap();
    let data: Vec<LabeledImage> = [(0.1, 0), (0.9, 1), (0.4, 1), (0.3, 0), (0.7, 0)]
        .iter()
        .map(|(v, l)| LabeledImage { image: ImageTensor::new(shape, vec![*v]).unwrap(), label: *l })
        .collect();
    let mean_ce = |m: &MlpModel| {
        data.iter()
            .map(|s| {
                let l = m.logits(&s.image).unwrap().into_values();
                l.iter().map(|v| v.exp()).sum::<f64>().ln() - l[s.label]
            })
            .sum::<f64>()
            / data.len() as f64
    };
    let (_, grad) = model.loss_and_gradient(&data).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut probe = model.clone();
        let mut p = params;
        p[i] += h;
        probe.set_params(&p).unwrap();
        let up = mean_ce(&probe);
        p[i] -= 2.0 * h;
        probe.set_params(&p).unwrap();
        let down = mean_ce(&probe);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} over 10 parameters"))
}

fn report(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = v.pass && in_time;
    let timing = match limit {
        Some(l) => format!("{:.2}s, limit {}s", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.2}s", elapsed.as_secs_f64()),
    };
    println!("{} {name}: {} [{timing}]", if pass { "PASS" } else { "FAIL" }, v.detail);
    pass
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let mut all = true;
    all &= report("one-fifth rule exactness", secs(5), one_fifth_rule);
    all &= report("CMA convergence", secs(30), cma_convergence);
    all &= report("l-inf feasibility", secs(10), linf_feasibility);
    all &= report("brute-force corner oracle", secs(20), brute_force_corner);

    let mut runs = None;
    all &= report("end-to-end campaign", secs(300), || end_to_end(runs.insert(campaign_runs())));
    let runs = runs.expect("campaigns ran");
    all &= report("tile sweep interior peak", secs(120), tile_sweep_peak);
    all &= report("query accounting", None, || query_accounting(&runs));
    all &= report("determinism", None, || determinism(&runs));
    all &= report("MLP gradient check", None, mlp_gradient_check);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
