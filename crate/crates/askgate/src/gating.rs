//! Ask-for-help gates over the weak agent's action distribution.
//!
//! Five uncertainty metrics are computed from the policy's logits at every
//! timestep: max probability, max logit, sampled probability, sampled logit
//! (ask when the value falls *below* a threshold), and entropy (ask when it
//! rises *above* one). Thresholds come from nearest-rank percentiles of the
//! metric values collected by running the weak agent on train-mode levels.
//!
//! The percentile knob means the same thing for every gate: at percentile
//! `p`, roughly `p`% of calibration timesteps would have asked. For the four
//! ask-below metrics that is the `p`th percentile directly; for entropy the
//! query maps through the upper tail, i.e. the `(100 - p)`th percentile.
//! Comparisons are strict, so ties never ask.
//!
//! A random baseline gate asks with fixed probability `q` from an explicit
//! per-episode stream, and [`GateSpec`] also names the SVDD and skyline gate
//! variants whose machinery lives in their own modules.

use rand::Rng;
use thiserror::Error;

use crate::env::{generate_level, Env, GenConfig, Mode};
use crate::neural::PolicySnapshot;
use crate::rng::{stream, ROLE_WEAK};
use crate::svdd::SvddInputKind;

/// Uncertainty statistic of an action distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    MaxProb,
    MaxLogit,
    SampledProb,
    SampledLogit,
    Entropy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::MaxProb,
        Metric::MaxLogit,
        Metric::SampledProb,
        Metric::SampledLogit,
        Metric::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MaxProb => "max_prob",
            Metric::MaxLogit => "max_logit",
            Metric::SampledProb => "sampled_prob",
            Metric::SampledLogit => "sampled_logit",
            Metric::Entropy => "entropy",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).unwrap()
    }

    /// True when the gate asks below its threshold; entropy asks above.
    pub fn ask_below(self) -> bool {
        !matches!(self, Metric::Entropy)
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Computes one metric from raw logits. `sampled_action` is required only
/// for the sampled_* metrics.
pub fn metric_value(metric: Metric, logits: &[f64], sampled_action: Option<usize>) -> f64 {
    match metric {
        Metric::MaxProb => max_by_value(&crate::neural::softmax(logits)),
        Metric::MaxLogit => max_by_value(logits),
        Metric::SampledProb => {
            crate::neural::softmax(logits)[sampled_action.expect("sampled_prob needs an action")]
        }
        Metric::SampledLogit => logits[sampled_action.expect("sampled_logit needs an action")],
        Metric::Entropy => entropy(&crate::neural::softmax(logits)),
    }
}

fn max_by_value(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Natural-log entropy of a probability vector.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Where a calibration table came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub policy_id: String,
    pub n_runs: usize,
    pub seed_start: u64,
    pub episodes: usize,
}

/// Sorted calibration samples for all five metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    samples: [Vec<f64>; 5],
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum GatingError {
    #[error("empty calibration table")]
    EmptyTable,
    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),
    #[error("gate variant `{0}` is not decided here")]
    UnsupportedVariant(&'static str),
    #[error("missing required input for gate: {0}")]
    MissingInput(&'static str),
    #[error("malformed threshold table CSV: {0}")]
    BadCsv(String),
}

impl ThresholdTable {
    pub fn samples(&self, metric: Metric) -> &[f64] {
        &self.samples[metric.index()]
    }

    /// CSV dump for one metric: provenance comment, header, then
    /// `metric,rank,value` rows in ascending rank order.
    pub fn to_csv(&self, metric: Metric) -> String {
        let p = &self.provenance;
        let mut out = format!(
            "# policy={} n_runs={} seed_start={} episodes={} samples={}\n",
            p.policy_id,
            p.n_runs,
            p.seed_start,
            p.episodes,
            self.samples(metric).len()
        );
        out.push_str("metric,rank,value\n");
        for (i, v) in self.samples(metric).iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", metric.name(), i + 1, v));
        }
        out
    }

    /// Parses a single-metric CSV produced by [`ThresholdTable::to_csv`]
    /// back into a sorted sample vector.
    pub fn samples_from_csv(text: &str) -> Result<Vec<f64>, GatingError> {
        let mut samples = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("metric,") || line.is_empty() {
                continue;
            }
            let value = line
                .rsplit(',')
                .next()
                .ok_or_else(|| GatingError::BadCsv(line.into()))?;
            samples.push(
                value
                    .parse::<f64>()
                    .map_err(|e| GatingError::BadCsv(format!("{line}: {e}")))?,
            );
        }
        if samples.is_empty() {
            return Err(GatingError::EmptyTable);
        }
        Ok(samples)
    }

    /// Rebuilds a table from per-metric sample vectors (already sorted).
    pub fn from_samples(samples: [Vec<f64>; 5], provenance: Provenance) -> ThresholdTable {
        ThresholdTable {
            samples,
            provenance,
        }
    }
}

/// Runs the weak policy on train-mode levels and pools every timestep's
/// metric values into sorted tables. Seeds `seed_start..seed_start + n_runs`;
/// generator-rejected seeds are skipped.
pub fn calibrate(
    weak: &PolicySnapshot,
    env_config: &GenConfig,
    n_runs: usize,
    seed_start: u64,
) -> ThresholdTable {
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| seed_start + i).collect();
    let per_episode = crate::exec::ordered_map(&seeds, |&seed| {
        let Ok(level) = generate_level(seed, Mode::Train, env_config) else {
            return None;
        };
        let (mut env, mut obs) = Env::reset(level, env_config);
        let mut rng = stream(seed, ROLE_WEAK);
        let mut rows: Vec<[f64; 5]> = Vec::new();
        loop {
            let (action, _, out) = weak.act(&obs.data, &mut rng).expect("obs dim fixed");
            let mut row = [0.0; 5];
            for m in Metric::ALL {
                row[m.index()] = metric_value(m, &out.logits, Some(action));
            }
            rows.push(row);
            let step = env.step(crate::env::ActionId::from_index(action)).unwrap();
            obs = step.obs;
            if step.done {
                break;
            }
        }
        Some(rows)
    });

    let mut samples: [Vec<f64>; 5] = Default::default();
    let mut episodes = 0;
    for rows in per_episode.into_iter().flatten() {
        episodes += 1;
        for row in rows {
            for m in Metric::ALL {
                samples[m.index()].push(row[m.index()]);
            }
        }
    }
    for s in &mut samples {
        s.sort_by(f64::total_cmp);
    }
    ThresholdTable {
        samples,
        provenance: Provenance {
            policy_id: weak.id.clone(),
            n_runs,
            seed_start,
            episodes,
        },
    }
}

/// Nearest-rank percentile: the element at 1-based rank
/// `ceil(p/100 * N)`, clamped into `[1, N]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64, GatingError> {
    if sorted.is_empty() {
        return Err(GatingError::EmptyTable);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(GatingError::BadPercentile(p));
    }
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Threshold such that percentile `p` means "ask on ~p% of calibration
/// timesteps" for every metric: the `p`th percentile for ask-below metrics
/// and the `(100 - p)`th for entropy.
pub fn threshold_for_percentile(
    table: &ThresholdTable,
    metric: Metric,
    p: f64,
) -> Result<f64, GatingError> {
    let q = if metric.ask_below() { p } else { 100.0 - p };
    nearest_rank(table.samples(metric), q)
}

/// One gate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub ask: bool,
    pub metric_value: f64,
    pub threshold: f64,
}

/// Gate family member with its resolved threshold where applicable.
#[derive(Debug, Clone, PartialEq)]
pub enum GateSpec {
    ActionMetric {
        metric: Metric,
        percentile: f64,
        threshold: f64,
    },
    Random {
        q: f64,
    },
    Svdd {
        input_kind: SvddInputKind,
        percentile: f64,
        threshold: f64,
    },
    Skyline {
        snapshot_id: String,
    },
}

impl GateSpec {
    /// Short family label used in CSV output.
    pub fn family(&self) -> String {
        match self {
            GateSpec::ActionMetric { metric, .. } => metric.name().to_string(),
            GateSpec::Random { .. } => "random".to_string(),
            GateSpec::Svdd { input_kind, .. } => format!("svdd_{}", input_kind.name()),
            GateSpec::Skyline { snapshot_id } => format!("skyline_{snapshot_id}"),
        }
    }

    /// The swept setting (percentile or q) of this gate instance.
    pub fn setting(&self) -> f64 {
        match self {
            GateSpec::ActionMetric { percentile, .. } | GateSpec::Svdd { percentile, .. } => {
                *percentile
            }
            GateSpec::Random { q } => *q,
            GateSpec::Skyline { .. } => 0.0,
        }
    }
}

/// Evaluates an action-metric, random, or SVDD gate. Skyline gates are
/// policies, not threshold rules, and are evaluated by the harness.
///
/// All comparisons are strict: a metric equal to its threshold does not ask.
pub fn decide<R: Rng>(
    spec: &GateSpec,
    logits: &[f64],
    sampled_action: Option<usize>,
    anomaly_score: Option<f64>,
    rng: &mut R,
) -> Result<GateDecision, GatingError> {
    match spec {
        GateSpec::ActionMetric { metric, threshold, .. } => {
            if matches!(metric, Metric::SampledProb | Metric::SampledLogit)
                && sampled_action.is_none()
            {
                return Err(GatingError::MissingInput("sampled action"));
            }
            let value = metric_value(*metric, logits, sampled_action);
            let ask = if metric.ask_below() {
                value < *threshold
            } else {
                value > *threshold
            };
            Ok(GateDecision {
                ask,
                metric_value: value,
                threshold: *threshold,
            })
        }
        GateSpec::Random { q } => {
            let u: f64 = rng.gen();
            Ok(GateDecision {
                ask: u < *q,
                metric_value: u,
                threshold: *q,
            })
        }
        GateSpec::Svdd { threshold, .. } => {
            let score = anomaly_score.ok_or(GatingError::MissingInput("anomaly score"))?;
            Ok(GateDecision {
                ask: score > *threshold,
                metric_value: score,
                threshold: *threshold,
            })
        }
        GateSpec::Skyline { .. } => Err(GatingError::UnsupportedVariant("skyline")),
    }
}
