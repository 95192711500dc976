//! Wallclock comparison of the explainers on single instances.

use std::time::Instant;

use serde::Serialize;

use crate::classifier::LinearModel;
use crate::explain::{
    doc_rng, lime_explain, random_explain, CovarExplainer, ExplainError, LimeConfig, Method,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTiming {
    pub method: Method,
    pub mean_s: f64,
    pub std_s: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub lime_samples: usize,
    /// One-off cost of the COVAR importances over the held-out set.
    pub covar_fit_s: f64,
    pub methods: Vec<MethodTiming>,
}

impl BenchReport {
    pub fn timing(&self, m: Method) -> Option<&MethodTiming> {
        self.methods.iter().find(|t| t.method == m)
    }

    /// Mean LIME time over mean COVAR time.
    pub fn speedup(&self) -> Option<f64> {
        Some(self.timing(Method::Lime)?.mean_s / self.timing(Method::Covar)?.mean_s)
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "per-instance explanation time ({} LIME samples)",
            self.lime_samples
        )?;
        writeln!(
            f,
            "{:<8} {:>6} {:>14} {:>14}",
            "method", "reps", "mean_s", "std_s"
        )?;
        for t in &self.methods {
            writeln!(
                f,
                "{:<8} {:>6} {:>14.6} {:>14.6}",
                t.method.as_str(),
                t.repetitions,
                t.mean_s,
                t.std_s
            )?;
        }
        writeln!(f, "covar importances (one-off): {:.6} s", self.covar_fit_s)?;
        if let Some(s) = self.speedup() {
            writeln!(f, "lime / covar: {s:.1}x")?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `repetitions` single-instance explanations per method, cycling
/// through `docs`. One untimed run per method warms caches first. Runs on the
/// calling thread.
pub fn bench_explainers(
    docs: &[(String, String)],
    heldout: &[&str],
    model: &LinearModel,
    methods: &[Method],
    repetitions: usize,
    lime: &LimeConfig,
    seed: u64,
) -> Result<BenchReport, ExplainError> {
    let start = Instant::now();
    let covar = CovarExplainer::fit(model, heldout.iter().copied())?;
    let covar_fit_s = start.elapsed().as_secs_f64();
    let run = |method: Method, i: usize| -> Result<(), ExplainError> {
        let (id, text) = &docs[i % docs.len()];
        let mut rng = doc_rng(seed, i as u64);
        let e = match method {
            Method::Covar => covar.explain(id, text, model),
            Method::Lime => lime_explain(id, text, model.featurizer(), model, lime, &mut rng),
            Method::Random => random_explain(id, text, model.predict_label(text), &mut rng),
        }?;
        std::hint::black_box(e);
        Ok(())
    };
    let mut timings = Vec::new();
    for &method in methods {
        run(method, 0)?;
        let mut secs = Vec::with_capacity(repetitions);
        for i in 0..repetitions {
            let t = Instant::now();
            run(method, i)?;
            secs.push(t.elapsed().as_secs_f64());
        }
        let (mean_s, std_s) = mean_std(&secs);
        timings.push(MethodTiming {
            method,
            mean_s,
            std_s,
            repetitions,
        });
    }
    Ok(BenchReport {
        lime_samples: lime.n_samples,
        covar_fit_s,
        methods: timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
