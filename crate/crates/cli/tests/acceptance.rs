//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use itr_core::bench::bench_explainers;
use itr_core::classifier::{
    loss_and_gradient, softmax, ClassDistribution, ClassifierError, LinearModel,
    ProbabilisticClassifier, SgdConfig,
};
use itr_core::corpus::{Dataset, FeatureMatrix, FeatureVector, Featurizer, FeaturizerConfig};
use itr_core::explain::{covar_importances, lime_explain, LimeConfig, Method};
use itr_core::metrics::{
    analyze, chi_square_independence, chi_square_sf, kruskal_wallis, mutual_information,
    AnalyzeOptions, JointCounts, MetricsReport,
};
use itr_core::simarm::{expected_joint, simulate_study, AnnotatorModel, Oracle, Scenario};
use itr_core::study::{
    build_items, parse_log, AnnotationRecord, Condition, ExplanationSet, LogRecord, ManualClock,
    MemorySink, Study, StudyConfig, StudyItem,
};
use itr_core::synth::{generate, SynthConfig};
use itr_service::{Registry, TaskResponse};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bundled(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

// ---------------------------------------------------------------- 1, 2

/// Mutual information summed cell by cell straight from the definition.
#[allow(clippy::needless_range_loop)]
fn brute_force_mi(table: &[Vec<u64>]) -> f64 {
    let n: u64 = table.iter().flatten().sum();
    let n = n as f64;
    let rows = table.len();
    let cols = table[0].len();
    let mut mi = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let nij = table[i][j] as f64;
            if nij == 0.0 {
                continue;
            }
            let mut ni = 0.0;
            for jj in 0..cols {
                ni += table[i][jj] as f64;
            }
            let mut nj = 0.0;
            for ii in 0..rows {
                nj += table[ii][j] as f64;
            }
            let pij = nij / n;
            mi += pij * (pij / ((ni / n) * (nj / n))).log2();
        }
    }
    mi.max(0.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r = rng.random_range(1..=6);
        let c = rng.random_range(1..=6);
        let mut table: Vec<Vec<u64>> = (0..r)
            .map(|_| {
                (0..c)
                    .map(|_| {
                        if rng.random_bool(0.3) {
                            0
                        } else {
                            rng.random_range(0..=12)
                        }
                    })
                    .collect()
            })
            .collect();
        if table.iter().flatten().all(|&v| v == 0) {
            table[0][0] = 1;
        }
        let got = mutual_information(&JointCounts::from_rows(&table).unwrap()).unwrap();
        worst = worst.max((got - brute_force_mi(&table)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 5.0,
        format!(
            "1000 random tables, max |diff| = {worst:.2e} (tol 1e-12), {secs:.2} s (limit 5 s)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mi =
        |rows: &[Vec<u64>]| mutual_information(&JointCounts::from_rows(rows).unwrap()).unwrap();
    let diagonal = mi(&[vec![5, 0], vec![0, 5]]);
    let factor = mi(&[vec![2, 2], vec![3, 3]]);
    let mixed = mi(&[vec![3, 1], vec![1, 3]]);
    // 1 - H(1/4) for the symmetric channel with crossover 1/4
    let h = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
    let oracle = 1.0 - h;
    let pass = diagonal == 1.0
        && factor.abs() <= 1e-15
        && (mixed - 0.18872).abs() <= 1e-5
        && (mixed - oracle).abs() <= 1e-12
        && (brute_force_mi(&[vec![3, 1], vec![1, 3]]) - oracle).abs() <= 1e-12;
    outcome(
        pass,
        format!("diag = {diagonal}, factorizable = {factor:.1e}, [[3,1],[1,3]] = {mixed:.6} (oracle {oracle:.6})"),
    )
}

// ---------------------------------------------------------------- study helpers

fn clean_model() -> LinearModel {
    let train = generate(&SynthConfig {
        n_docs: 400,
        seed: 100,
        id_prefix: "train".into(),
        ..SynthConfig::default()
    });
    LinearModel::train(
        &train,
        FeaturizerConfig::default(),
        &SgdConfig {
            seed: 7,
            ..SgdConfig::default()
        },
    )
    .unwrap()
    .0
}

fn study_items(model: &LinearModel, dataset: &Dataset, config: &StudyConfig) -> Vec<StudyItem> {
    let methods: Vec<Method> = config
        .conditions
        .iter()
        .filter_map(|c| c.method())
        .collect();
    let mut set = ExplanationSet::default();
    set.fill_missing(
        &methods,
        dataset,
        dataset,
        model,
        config.seed,
        config.lime_samples,
    )
    .unwrap();
    let (items, report) = build_items(dataset, config, &set);
    assert_eq!(report.n_items, dataset.docs.len());
    items
}

fn oracle_for(model: &LinearModel, dataset: &Dataset) -> Oracle {
    Oracle {
        predictions: dataset
            .docs
            .iter()
            .map(|d| (d.id.clone(), model.predict_label(&d.text)))
            .collect(),
        truths: dataset
            .docs
            .iter()
            .map(|d| (d.id.clone(), d.label.unwrap()))
            .collect(),
    }
}

fn simulate(
    config: &StudyConfig,
    label_names: &[String],
    items: Vec<StudyItem>,
    scenario: &Scenario,
    oracle: &Oracle,
) -> Vec<AnnotationRecord> {
    let clock = Arc::new(ManualClock::new(0));
    let study = Study::create(
        "acceptance",
        config.clone(),
        label_names.to_vec(),
        items,
        Box::new(MemorySink),
        clock.clone(),
    )
    .unwrap();
    let summary = simulate_study(&study, &clock, scenario, oracle).unwrap();
    assert!(summary.complete);
    study.annotations()
}

fn report_of(
    records: &[AnnotationRecord],
    oracle: &Oracle,
    label_names: &[String],
) -> MetricsReport {
    analyze(
        records,
        &oracle.predictions,
        &oracle.truths,
        label_names,
        &AnalyzeOptions::default(),
    )
    .unwrap()
}

fn annotator(p_follow_model: f64, p_correct_own: f64, mean_log_s: f64) -> AnnotatorModel {
    AnnotatorModel {
        p_follow_model,
        p_correct_own,
        time_mu: mean_log_s,
        time_sigma: 0.4,
    }
}

fn scenario(seed: u64, by_condition: &[(Condition, AnnotatorModel)]) -> Scenario {
    Scenario {
        seed,
        n_workers: 30,
        conditions: by_condition.iter().copied().collect(),
    }
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let model = clean_model();
    let dataset = generate(&SynthConfig {
        n_docs: 60,
        seed: 300,
        label_noise: 0.3,
        id_prefix: "item".into(),
        ..SynthConfig::default()
    });
    let mut config = StudyConfig::new("-", "-", Condition::ALL.to_vec());
    config.seed = 3;
    config.lime_samples = 300;
    let items = study_items(&model, &dataset, &config);
    let mut oracle = oracle_for(&model, &dataset);
    // the model is taken to be right everywhere
    oracle.predictions = oracle.truths.clone();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (seed, follow, own) in [(1, 0.9, 0.6), (2, 0.0, 0.9), (3, 0.5, 0.5)] {
        let s = scenario(
            seed,
            &Condition::ALL.map(|c| (c, annotator(follow, own, (2.0 + c as u8 as f64 * 0.2).ln()))),
        );
        let records = simulate(&config, model.label_names(), items.clone(), &s, &oracle);
        let report = report_of(&records, &oracle, model.label_names());
        for c in Condition::ALL {
            let t = report.trust_of(c).unwrap_or(f64::NAN);
            worst = worst.max((t - 1.0).abs());
            n += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{n} (scenario, condition) pairs with model = truth, max |trust - 1| = {worst:.2e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let model = clean_model();
    let dataset = generate(&SynthConfig {
        n_docs: 500,
        seed: 400,
        label_noise: 0.3,
        id_prefix: "item".into(),
        ..SynthConfig::default()
    });
    let accuracy = model.evaluate(&dataset).unwrap().accuracy;
    let oracle = oracle_for(&model, &dataset);
    let conditions = [Condition::NoHighlights, Condition::Covar];
    let mut config = StudyConfig::new("-", "-", conditions.to_vec());
    config.annotations_per_item = 9;
    let items = study_items(&model, &dataset, &config);
    let trusting: Vec<_> = conditions
        .iter()
        .map(|&c| (c, annotator(0.9, 0.7, 2.0f64.ln())))
        .collect();
    let independent: Vec<_> = conditions
        .iter()
        .map(|&c| (c, annotator(0.0, 0.9, 2.0f64.ln())))
        .collect();
    let mut above = 0;
    let mut below = 0;
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for seed in 0..20u64 {
        config.seed = seed;
        for (k, behaviour) in [&trusting, &independent].into_iter().enumerate() {
            let s = scenario(1000 + seed, behaviour);
            let records = simulate(&config, model.label_names(), items.clone(), &s, &oracle);
            assert_eq!(records.len(), 4500);
            let report = report_of(&records, &oracle, model.label_names());
            let trusts: Vec<f64> = conditions
                .iter()
                .map(|&c| report.trust_of(c).unwrap_or(f64::NAN))
                .collect();
            for &t in &trusts {
                ranges[k].0 = ranges[k].0.min(t);
                ranges[k].1 = ranges[k].1.max(t);
            }
            if k == 0 && trusts.iter().all(|&t| t > 1.0) {
                above += 1;
            }
            if k == 1 && trusts.iter().all(|&t| t < 1.0) {
                below += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        above >= 19 && below >= 19 && secs < 60.0 && (0.65..=0.75).contains(&accuracy),
        format!(
            "model accuracy {accuracy:.3}; p_follow 0.9: trust > 1 in {above}/20 (range {:.3}..{:.3}); \
             independent: trust < 1 in {below}/20 (range {:.3}..{:.3}); {secs:.1} s (limit 60 s)",
            ranges[0].0, ranges[0].1, ranges[1].0, ranges[1].1
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let model = clean_model();
    let dataset = generate(&SynthConfig {
        n_docs: 2000,
        seed: 500,
        label_noise: 0.25,
        id_prefix: "item".into(),
        ..SynthConfig::default()
    });
    let oracle = oracle_for(&model, &dataset);
    let mut truth_vs_model = vec![vec![0.0; 2]; 2];
    for d in &dataset.docs {
        truth_vs_model[oracle.truths[&d.id]][oracle.predictions[&d.id]] +=
            1.0 / dataset.docs.len() as f64;
    }
    let plain = annotator(0.2, 0.7, 3.0f64.ln());
    let covar = annotator(0.2, 0.85, 2.0f64.ln());
    let conditions = [Condition::NoHighlights, Condition::Covar];
    let mut config = StudyConfig::new("-", "-", conditions.to_vec());
    let items = study_items(&model, &dataset, &config);
    let expected = |a: &AnnotatorModel| {
        let j = expected_joint(a, &truth_vs_model);
        (
            j.mi_vs_model() / a.expected_time_s(),
            j.mi_vs_truth() / a.expected_time_s(),
        )
    };
    let exp = [expected(&plain), expected(&covar)];
    let mut worst: f64 = 0.0;
    let mut uplift = 0;
    let seeds = 5;
    for seed in 0..seeds {
        config.seed = seed;
        let s = scenario(
            50 + seed,
            &[(Condition::NoHighlights, plain), (Condition::Covar, covar)],
        );
        let records = simulate(&config, model.label_names(), items.clone(), &s, &oracle);
        let report = report_of(&records, &oracle, model.label_names());
        let p = report.condition(Condition::NoHighlights).unwrap();
        let c = report.condition(Condition::Covar).unwrap();
        if c.itr_vs_truth > p.itr_vs_truth {
            uplift += 1;
        }
        for (stats, (em, et)) in [(p, exp[0]), (c, exp[1])] {
            worst = worst
                .max((stats.itr_vs_model - em).abs())
                .max((stats.itr_vs_truth - et).abs());
        }
    }
    outcome(
        uplift == seeds && worst < 0.02,
        format!(
            "expected ITR vs truth: no_highlights {:.4}, covar {:.4} bit/s; covar higher in {uplift}/{seeds} runs; \
             max |measured - expected| = {worst:.4} bit/s (tol 0.02)",
            exp[0].1, exp[1].1
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=20);
        let rows: Vec<FeatureVector> = (0..n)
            .map(|_| {
                let pairs: Vec<(usize, f64)> = (0..d)
                    .filter(|_| rng.random_bool(0.6))
                    .collect::<Vec<usize>>()
                    .into_iter()
                    .map(|j| (j, rng.random_range(-1.0..1.0)))
                    .collect();
                FeatureVector::from_pairs(pairs)
            })
            .collect();
        let x = FeatureMatrix::new(rows, d).unwrap();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let w: Vec<f64> = (0..d * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = rng.random_range(0.0..0.1);
        let (_, grad) = loss_and_gradient(&x, &y, k, &w, lambda);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..w.len())
            .map(|i| {
                let mut up = w.clone();
                up[i] += h;
                let mut down = w.clone();
                down[i] -= h;
                (loss_and_gradient(&x, &y, k, &up, lambda).0
                    - loss_and_gradient(&x, &y, k, &down, lambda).0)
                    / (2.0 * h)
            })
            .collect();
        let diff = grad
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { diff } else { diff / scale };
        worst_rel = worst_rel.max(rel);
    }

    let train = Dataset::read_tsv(bundled("train.tsv")).unwrap();
    let (model, _) = LinearModel::train(
        &train,
        FeaturizerConfig::default(),
        &SgdConfig {
            seed: 7,
            ..SgdConfig::default()
        },
    )
    .unwrap();
    let train_acc = model.evaluate(&train).unwrap().accuracy;

    let mut worst_sum: f64 = 0.0;
    for _ in 0..2000 {
        let k = rng.random_range(2..=8);
        let scale = [1.0, 50.0, 800.0][rng.random_range(0..3)];
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();
        worst_sum = worst_sum.max((softmax(&z).iter().sum::<f64>() - 1.0).abs());
    }
    for d in &train.docs {
        worst_sum =
            worst_sum.max((model.predict_text(&d.text).probs.iter().sum::<f64>() - 1.0).abs());
    }
    outcome(
        worst_rel < 1e-4 && train_acc >= 0.99 && worst_sum <= 1e-9,
        format!(
            "gradient max rel err {worst_rel:.2e} over 50 instances (tol 1e-4); bundled training accuracy \
             {train_acc:.4} (min 0.99); max |sum p - 1| = {worst_sum:.1e} (tol 1e-9)"
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Predicts class 1 exactly when the keyword's feature is non-zero.
struct KeywordModel {
    position: usize,
}

impl ProbabilisticClassifier for KeywordModel {
    fn n_classes(&self) -> usize {
        2
    }

    fn predict_proba(&self, x: &FeatureVector) -> Result<ClassDistribution, ClassifierError> {
        let p1 = if x.get(self.position) != 0.0 {
            1.0
        } else {
            0.0
        };
        Ok(ClassDistribution {
            probs: vec![1.0 - p1, p1],
        })
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let words = [
        "plot", "actor", "scene", "camera", "script", "music", "ending", "budget", "studio",
        "sequel", "villain", "hero", "dialogue", "costume",
    ];
    let mut corpus: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    corpus.push("excellent".into());
    let featurizer = Featurizer::fit(
        corpus.iter().map(String::as_str),
        FeaturizerConfig::default(),
    )
    .unwrap();
    let model = KeywordModel {
        position: featurizer.vocab().position("excellent").unwrap(),
    };
    let config = LimeConfig::default();
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doc: Vec<&str> = words.to_vec();
        // nine filler words and the keyword at a seed-dependent place
        for i in (1..doc.len()).rev() {
            doc.swap(i, rng.random_range(0..=i));
        }
        doc.truncate(9);
        doc.insert(rng.random_range(0..=9), "excellent");
        let text = doc.join(" ");
        let e = lime_explain("doc", &text, &featurizer, &model, &config, &mut rng).unwrap();
        if e.highlights[0].token == "excellent" {
            hits += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        hits >= 95 && secs < 120.0,
        format!("keyword ranked first in {hits}/100 seeds (min 95), 2500 samples each, {secs:.1} s (limit 120 s)"),
    )
}

// ---------------------------------------------------------------- 8

#[allow(clippy::needless_range_loop)]
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=12);
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            rng.random_range(0.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let yk: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = FeatureMatrix::new(
            dense
                .iter()
                .map(|r| {
                    FeatureVector::from_pairs(
                        r.iter().copied().enumerate().filter(|(_, v)| *v != 0.0),
                    )
                })
                .collect(),
            d,
        )
        .unwrap();
        let got = covar_importances(&x, &yk, 0).unwrap();
        for j in 0..d {
            let mut want = 0.0;
            for i in 0..n {
                want += dense[i][j] * yk[i];
            }
            worst = worst.max((got.scores[j] - want).abs());
        }
    }
    let mut identity_exact = true;
    for n in [3usize, 7, 20] {
        let x = FeatureMatrix::new(
            (0..n)
                .map(|i| FeatureVector::from_pairs([(i, 1.0)]))
                .collect(),
            n,
        )
        .unwrap();
        let yk: Vec<f64> = if n == 3 {
            vec![0.2, 0.5, 0.3]
        } else {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        };
        identity_exact &= covar_importances(&x, &yk, 1).unwrap().scores == yk;
    }
    outcome(
        worst <= 1e-12 && identity_exact,
        format!("500 random X, max |diff| vs double loop = {worst:.2e} (tol 1e-12); identity returns y_k verbatim: {identity_exact}"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let model = LinearModel::load(bundled("model.json")).unwrap();
    let test = Dataset::read_tsv_with_labels(bundled("test.tsv"), model.label_names()).unwrap();
    let docs: Vec<(String, String)> = test
        .docs
        .iter()
        .map(|d| (d.id.clone(), d.text.clone()))
        .collect();
    let heldout: Vec<&str> = test.texts().collect();
    let report = bench_explainers(
        &docs,
        &heldout,
        &model,
        &[Method::Covar, Method::Lime],
        64,
        &LimeConfig::default(),
        9,
    )
    .unwrap();
    let speedup = report.speedup().unwrap_or(0.0);
    let c = report.timing(Method::Covar).unwrap();
    let l = report.timing(Method::Lime).unwrap();
    outcome(
        speedup >= 10.0,
        format!(
            "per instance over 64 repetitions: LIME {:.3e} ± {:.1e} s, COVAR {:.3e} ± {:.1e} s; speedup {speedup:.0}x (min 10x)",
            l.mean_s, l.std_s, c.mean_s, c.std_s
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(concurrent_fuzz())
}

async fn concurrent_fuzz() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(0));
    let registry = Arc::new(Registry::open(dir.path(), clock.clone()).unwrap());
    let dataset = generate(&SynthConfig {
        n_docs: 120,
        seed: 1000,
        id_prefix: "item".into(),
        ..SynthConfig::default()
    });
    let model = clean_model();
    let mut config = StudyConfig::new(
        "-",
        "-",
        vec![Condition::NoHighlights, Condition::Covar, Condition::Random],
    );
    config.annotations_per_item = 9;
    config.assignment_ttl_ms = 2_000;
    let items = study_items(&model, &dataset, &config);
    let id = registry
        .create_with_items(config, model.label_names().to_vec(), items)
        .unwrap();

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(itr_service::serve(listener, Arc::clone(&registry), async {
        let _ = stopped.await;
    }));

    let client = reqwest::Client::new();
    let mut workers = Vec::new();
    for w in 0..50u64 {
        let client = client.clone();
        let base = base.clone();
        let id = id.clone();
        let clock = Arc::clone(&clock);
        workers.push(tokio::spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(w);
            let worker = format!("w{w:02}");
            let mut idle = 0;
            let mut submitted = 0u32;
            loop {
                let resp = client
                    .get(format!("{base}/studies/{id}/task"))
                    .query(&[("worker_id", worker.as_str())])
                    .send()
                    .await
                    .unwrap();
                match resp.status().as_u16() {
                    200 => {}
                    409 if idle < 10 => {
                        // wait for abandoned tasks of others to time out
                        idle += 1;
                        clock.advance(1_000);
                        tokio::time::sleep(Duration::from_millis(5)).await;
                        continue;
                    }
                    _ => return submitted,
                }
                let task: TaskResponse = resp.json().await.unwrap();
                clock.advance(rng.random_range(1..50));
                if rng.random_bool(0.05) {
                    continue;
                }
                let body = serde_json::json!({
                    "assignment_id": task.assignment_id,
                    "worker_id": worker,
                    "label_given": rng.random_range(1..=2),
                    "elapsed_ms": rng.random_range(500..5000),
                });
                let r = client
                    .post(format!("{base}/studies/{id}/annotations"))
                    .json(&body)
                    .send()
                    .await
                    .unwrap();
                if r.status().is_success() {
                    submitted += 1;
                }
            }
        }));
    }
    let mut submitted = 0;
    for w in workers {
        submitted += w.await.unwrap();
    }

    let study = registry.get(&id).unwrap();
    let before = study.snapshot();
    let log = study.export();
    let _ = stop.send(());
    server.await.unwrap().unwrap();
    drop(study);
    drop(registry);

    let (_, records) = parse_log(&log).unwrap();
    let mut issued_pairs = BTreeSet::new();
    let mut issued_dupes = 0;
    let mut annotated_pairs = BTreeSet::new();
    let mut annotation_dupes = 0;
    let mut per_doc: BTreeMap<String, usize> = BTreeMap::new();
    let mut expired = 0;
    for r in &records {
        match r {
            LogRecord::AssignmentIssued(a) => {
                if !issued_pairs.insert((a.worker_id.clone(), a.doc_id.clone())) {
                    issued_dupes += 1;
                }
            }
            LogRecord::Annotation(a) => {
                if !annotated_pairs.insert((a.worker_id.clone(), a.doc_id.clone())) {
                    annotation_dupes += 1;
                }
                *per_doc.entry(a.doc_id.clone()).or_default() += 1;
            }
            LogRecord::AssignmentExpired(_) => expired += 1,
            LogRecord::Header(_) => {}
        }
    }
    let max_per_doc = per_doc.values().copied().max().unwrap_or(0);
    let n_annotations = per_doc.values().sum::<usize>();

    let reopened = Registry::open(dir.path(), Arc::new(ManualClock::new(0))).unwrap();
    let restarted = reopened.get(&id).unwrap().snapshot();
    let folded = Study::replay(&log, Box::new(MemorySink), Arc::new(ManualClock::new(0)))
        .unwrap()
        .snapshot();
    let restart_ok = restarted == before && folded == before;
    outcome(
        annotation_dupes == 0 && issued_dupes == 0 && max_per_doc <= 9 && restart_ok && n_annotations == submitted as usize,
        format!(
            "50 HTTP workers: {n_annotations} annotations, {expired} expiries; duplicate (worker, doc) annotations \
             {annotation_dupes}, assignments {issued_dupes}; max annotations per doc {max_per_doc} (limit 9); \
             restart state == pre-crash state == fold over log: {restart_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let chi =
        chi_square_independence(&JointCounts::from_rows(&[vec![10, 20], vec![20, 10]]).unwrap())
            .unwrap();
    let closed_form =
        60.0 * (10.0f64 * 10.0 - 20.0 * 20.0).powi(2) / (30.0f64 * 30.0 * 30.0 * 30.0);
    let indep =
        chi_square_independence(&JointCounts::from_rows(&[vec![2, 4], vec![3, 6]]).unwrap())
            .unwrap();
    let kw1 = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    let kw2 = kruskal_wallis(&[vec![1.0], vec![2.0]]).unwrap();
    let p = chi_square_sf(3.841, 1);
    let pass = (chi.statistic - 6.667).abs() <= 1e-3
        && (chi.statistic - closed_form).abs() <= 1e-12
        && chi.dof == 1
        && indep.statistic.abs() <= 1e-12
        && (kw1.statistic - 3.857).abs() <= 1e-3
        && (kw2.statistic - 1.0).abs() <= 1e-3
        && (p - 0.05).abs() <= 5e-4;
    outcome(
        pass,
        format!(
            "chi2 [[10,20],[20,10]] = {:.4}, independent table = {:.1e}, KW = {:.4} and {:.4}, p(3.841, 1) = {p:.5}",
            chi.statistic, indep.statistic, kw1.statistic, kw2.statistic
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("MI oracle equivalence", criterion_1),
        ("MI anchor values", criterion_2),
        ("trust identity", criterion_3),
        ("trust direction", criterion_4),
        ("ITR uplift end-to-end", criterion_5),
        ("classifier checks", criterion_6),
        ("LIME keyword recovery", criterion_7),
        ("COVAR correctness", criterion_8),
        ("COVAR vs LIME speed", criterion_9),
        ("study engine safety", criterion_10),
        ("statistical tests", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name} ({:.1} s): {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
