use itr_core::bench::bench_explainers;
use itr_core::classifier::{LinearModel, SgdConfig};
use itr_core::corpus::FeaturizerConfig;
use itr_core::explain::{LimeConfig, Method};
use itr_core::synth::{generate, SynthConfig};

fn timings(
    samples: usize,
    model: &LinearModel,
    docs: &[(String, String)],
    heldout: &[&str],
) -> (f64, f64) {
    let lime = LimeConfig {
        n_samples: samples,
        ..LimeConfig::default()
    };
    let r = bench_explainers(
        docs,
        heldout,
        model,
        &[Method::Covar, Method::Lime],
        32,
        &lime,
        3,
    )
    .unwrap();
    (
        r.timing(Method::Covar).unwrap().mean_s,
        r.timing(Method::Lime).unwrap().mean_s,
    )
}

#[test]
fn lime_cost_is_linear_in_samples_and_covar_cost_is_flat() {
    let data = generate(&SynthConfig {
        n_docs: 200,
        seed: 12,
        ..SynthConfig::default()
    });
    let (model, _) =
        LinearModel::train(&data, FeaturizerConfig::default(), &SgdConfig::default()).unwrap();
    let docs: Vec<(String, String)> = data
        .docs
        .iter()
        .map(|d| (d.id.clone(), d.text.clone()))
        .collect();
    let heldout: Vec<&str> = data.texts().collect();

    let (covar_small, lime_small) = timings(250, &model, &docs, &heldout);
    let (covar_large, lime_large) = timings(2500, &model, &docs, &heldout);
    let ratio = lime_large / lime_small;
    assert!(
        (7.0..=13.0).contains(&ratio),
        "LIME 2500/250 time ratio {ratio:.2}"
    );
    // COVAR never perturbs; its cost must not follow the sample count
    assert!(
        covar_large < 3.0 * covar_small.max(1e-6),
        "{covar_small} vs {covar_large}"
    );
    assert!(covar_large * 10.0 < lime_large);
}
