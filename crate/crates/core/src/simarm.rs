//! Parametric simulated annotators.
//!
//! A simulated worker copies the model prediction with probability
//! `p_follow_model`; otherwise it uses its own judgment, which is the true
//! label with probability `p_correct_own` and a uniformly chosen wrong label
//! otherwise. Response times are log-normal in seconds. Because the answer law
//! is a known mixture, the joint distributions of (annotator, model) and
//! (annotator, truth) labels have closed forms, which [`expected_joint`]
//! computes for use as an oracle.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::study::{Condition, ManualClock, Study, StudyError, Submission};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub p_follow_model: f64,
    pub p_correct_own: f64,
    /// Mean of log-time (log seconds).
    pub time_mu: f64,
    /// Standard deviation of log-time.
    pub time_sigma: f64,
}

impl AnnotatorModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_follow_model", self.p_follow_model),
            ("p_correct_own", self.p_correct_own),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.time_sigma >= 0.0 && self.time_sigma.is_finite() && self.time_mu.is_finite()) {
            return Err("time_mu must be finite and time_sigma >= 0".into());
        }
        Ok(())
    }

    /// `E[t] = exp(μ + σ²/2)` seconds.
    pub fn expected_time_s(&self) -> f64 {
        (self.time_mu + 0.5 * self.time_sigma * self.time_sigma).exp()
    }

    /// Draws an answer (0-based) for a document with model prediction
    /// `predicted` and true label `truth`.
    pub fn answer(
        &self,
        predicted: usize,
        truth: usize,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> usize {
        if rng.random_bool(self.p_follow_model) {
            return predicted;
        }
        if n_classes < 2 || rng.random_bool(self.p_correct_own) {
            return truth;
        }
        let wrong = rng.random_range(0..n_classes - 1);
        if wrong >= truth {
            wrong + 1
        } else {
            wrong
        }
    }

    /// Response time in whole milliseconds, at least 1.
    pub fn sample_elapsed_ms(&self, rng: &mut impl Rng) -> u64 {
        let law = LogNormal::new(self.time_mu, self.time_sigma).expect("validated parameters");
        let secs: f64 = law.sample(rng);
        ((secs * 1000.0).round() as u64).max(1)
    }
}

/// Annotator behaviour per condition plus the worker pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub n_workers: usize,
    pub conditions: BTreeMap<Condition, AnnotatorModel>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_workers == 0 {
            return Err("n_workers must be >= 1".into());
        }
        for (c, m) in &self.conditions {
            m.validate().map_err(|e| format!("{c}: {e}"))?;
        }
        Ok(())
    }

    fn model_for(&self, c: Condition) -> Result<&AnnotatorModel, StudyError> {
        self.conditions.get(&c).ok_or_else(|| {
            StudyError::InvalidConfig(format!("scenario has no annotator model for {c}"))
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimSummary {
    pub issued: u64,
    pub annotations: u64,
    pub expired: u64,
    pub complete: bool,
}

/// Labels the simulation needs per document (0-based).
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub predictions: HashMap<String, usize>,
    pub truths: HashMap<String, usize>,
}

/// Drives `study` to completion with `scenario.n_workers` synthetic workers
/// taking turns. Each answer advances `clock` by its simulated response time,
/// so the resulting log is a deterministic function of the inputs.
pub fn simulate_study(
    study: &Study,
    clock: &ManualClock,
    scenario: &Scenario,
    oracle: &Oracle,
) -> Result<SimSummary, StudyError> {
    scenario.validate().map_err(StudyError::InvalidConfig)?;
    let k = study.label_names().len();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let workers: Vec<String> = (0..scenario.n_workers)
        .map(|i| format!("sim-{i:04}"))
        .collect();
    let mut active = vec![true; workers.len()];
    let mut summary = SimSummary::default();
    'rounds: while active.iter().any(|&a| a) {
        for (w, worker) in workers.iter().enumerate() {
            if !active[w] {
                continue;
            }
            let a = match study.next_assignment(worker) {
                Ok(a) => a,
                Err(StudyError::StudyComplete) => {
                    summary.complete = true;
                    break 'rounds;
                }
                Err(StudyError::NoEligibleItems) => {
                    active[w] = false;
                    continue;
                }
                Err(e) => return Err(e),
            };
            summary.issued += 1;
            let model = scenario.model_for(a.condition)?;
            let (predicted, truth) = labels_of(oracle, &a.doc_id)?;
            let label = model.answer(predicted, truth, k, &mut rng);
            let elapsed_ms = model.sample_elapsed_ms(&mut rng);
            clock.advance(elapsed_ms);
            match study.submit(&Submission {
                assignment_id: a.assignment_id,
                worker_id: worker.clone(),
                label_given: label as u32 + 1,
                elapsed_ms,
            }) {
                Ok(_) => summary.annotations += 1,
                Err(StudyError::ExpiredAssignment(_)) => summary.expired += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(summary)
}

fn labels_of(oracle: &Oracle, doc_id: &str) -> Result<(usize, usize), StudyError> {
    let missing = || StudyError::Materials(format!("no labels for document {doc_id:?}"));
    Ok((
        *oracle.predictions.get(doc_id).ok_or_else(missing)?,
        *oracle.truths.get(doc_id).ok_or_else(missing)?,
    ))
}

/// Stress mode: `n_workers` threads hammer the study at once, each answering
/// until it runs out of work. Not deterministic.
pub fn simulate_concurrent(
    study: Arc<Study>,
    scenario: &Scenario,
    oracle: Arc<Oracle>,
) -> Result<SimSummary, StudyError> {
    scenario.validate().map_err(StudyError::InvalidConfig)?;
    let k = study.label_names().len();
    let handles: Vec<_> = (0..scenario.n_workers)
        .map(|w| {
            let study = Arc::clone(&study);
            let oracle = Arc::clone(&oracle);
            let scenario = scenario.clone();
            std::thread::spawn(move || -> Result<SimSummary, StudyError> {
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                rng.set_stream(w as u64);
                let worker = format!("sim-{w:04}");
                let mut s = SimSummary::default();
                loop {
                    let a = match study.next_assignment(&worker) {
                        Ok(a) => a,
                        Err(StudyError::StudyComplete) => {
                            s.complete = true;
                            return Ok(s);
                        }
                        Err(StudyError::NoEligibleItems) => return Ok(s),
                        Err(e) => return Err(e),
                    };
                    s.issued += 1;
                    let model = scenario.model_for(a.condition)?;
                    let (predicted, truth) = labels_of(&oracle, &a.doc_id)?;
                    let label = model.answer(predicted, truth, k, &mut rng);
                    match study.submit(&Submission {
                        assignment_id: a.assignment_id,
                        worker_id: worker.clone(),
                        label_given: label as u32 + 1,
                        elapsed_ms: model.sample_elapsed_ms(&mut rng),
                    }) {
                        Ok(_) => s.annotations += 1,
                        Err(StudyError::ExpiredAssignment(_)) => s.expired += 1,
                        Err(e) => return Err(e),
                    }
                }
            })
        })
        .collect();
    let mut total = SimSummary::default();
    for h in handles {
        let s = h.join().expect("worker thread panicked")?;
        total.issued += s.issued;
        total.annotations += s.annotations;
        total.expired += s.expired;
        total.complete |= s.complete;
    }
    Ok(total)
}

/// Exact joint distributions implied by an annotator model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedJoint {
    /// `P(ŷ_H = i, ŷ_ML = j)`.
    pub vs_model: Vec<Vec<f64>>,
    /// `P(ŷ_H = i, y = j)`.
    pub vs_truth: Vec<Vec<f64>>,
}

impl ExpectedJoint {
    pub fn mi_vs_model(&self) -> f64 {
        mutual_information_of(&self.vs_model)
    }

    pub fn mi_vs_truth(&self) -> f64 {
        mutual_information_of(&self.vs_truth)
    }
}

/// Joint of the annotator's label with the model prediction and with the
/// truth, given `truth_vs_model[y][m] = P(y, ŷ_ML = m)` (entries sum to 1).
pub fn expected_joint(annotator: &AnnotatorModel, truth_vs_model: &[Vec<f64>]) -> ExpectedJoint {
    let k = truth_vs_model.len();
    let mut vs_model = vec![vec![0.0; k]; k];
    let mut vs_truth = vec![vec![0.0; k]; k];
    let f = annotator.p_follow_model;
    let c = annotator.p_correct_own;
    for y in 0..k {
        for m in 0..k {
            let p = truth_vs_model[y][m];
            if p == 0.0 {
                continue;
            }
            for h in 0..k {
                let own = if h == y {
                    if k == 1 {
                        1.0
                    } else {
                        c
                    }
                } else {
                    (1.0 - c) / (k - 1) as f64
                };
                let ph = f * f64::from(u8::from(h == m)) + (1.0 - f) * own;
                vs_model[h][m] += p * ph;
                vs_truth[h][y] += p * ph;
            }
        }
    }
    ExpectedJoint { vs_model, vs_truth }
}

/// `P(y, ŷ_ML)` from a confusion matrix of row-conditional rates
/// `P(ŷ_ML = m | y)` and a class prior.
pub fn joint_from_confusion(prior: &[f64], confusion: &[Vec<f64>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .zip(prior)
        .map(|(row, p)| row.iter().map(|r| r * p).collect())
        .collect()
}

/// Mutual information (bits) of a joint probability table.
pub fn mutual_information_of(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let n_cols = joint.first().map_or(0, Vec::len);
    let rows: Vec<f64> = joint
        .iter()
        .map(|r| r.iter().sum::<f64>() / total)
        .collect();
    let cols: Vec<f64> = (0..n_cols)
        .map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / total)
        .collect();
    let mut mi = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            let p = v / total;
            if p > 0.0 {
                mi += p * (p / (rows[i] * cols[j])).log2();
            }
        }
    }
    mi.max(0.0)
}
