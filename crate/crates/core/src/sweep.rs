//! Seeded random instances and per-trial checks.
//!
//! Each trial draws its instance from `seeded_rng(seed)` alone, so a trial is
//! reproducible from `(suite, seed)` and independent of scheduling.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{random_channel, KrausChannel, RandomChannel};
use crate::error::{Error, Result};
use crate::feedback::{jsu_check, jsu_error_check, ErrorModel, FeedbackProtocol, Measurement};
use crate::fluctuation::{crooks_check, heat_exchange_check, jarzynski_check, work_statistics, INEQUALITY_SLACK};
use crate::linalg::{ComplexMatrix, HermitianOperator, C64};
use crate::random::{haar_unitary, random_density, random_hermitian, seeded_rng, simplex_weights, SeededRng};
use crate::twopoint::{conditional_probs, gibbs_with_spectrum, sample_joint, JointDistribution};

/// Default tolerance of the randomized suites.
pub const SUITE_TOL: f64 = 1e-9;

/// Bin-by-bin tolerance of the maximally mixed Crooks symmetry.
pub const MIXED_CROOKS_TOL: f64 = 1e-10;

/// Reduction tolerance between error-free and identity-error runs.
pub const REDUCTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Jarzynski,
    Crooks,
    Heat,
    Feedback,
    FeedbackNoisy,
    Structural,
    Sampling,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Jarzynski,
        Suite::Crooks,
        Suite::Heat,
        Suite::Feedback,
        Suite::FeedbackNoisy,
        Suite::Structural,
        Suite::Sampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Jarzynski => "jarzynski",
            Suite::Crooks => "crooks",
            Suite::Heat => "heat",
            Suite::Feedback => "feedback",
            Suite::FeedbackNoisy => "feedback_noisy",
            Suite::Structural => "structural",
            Suite::Sampling => "sampling",
        }
    }
}

/// Outcome of one check. `lhs`, `rhs` and `gap` carry the headline relation;
/// secondary quantities go to `details`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub kind: String,
    #[serde(with = "non_finite_as_null")]
    pub lhs: f64,
    #[serde(with = "non_finite_as_null")]
    pub rhs: f64,
    #[serde(with = "non_finite_as_null")]
    pub gap: f64,
    pub holds: bool,
    pub tp_defect: f64,
    pub unital_defect: f64,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// JSON has no NaN: non-finite values are written as `null` and read back as NaN.
mod non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl TrialRecord {
    pub fn new(kind: &str, lhs: f64, rhs: f64, gap: f64, holds: bool) -> Self {
        Self {
            trial: 0,
            seed: 0,
            kind: kind.to_string(),
            lhs,
            rhs,
            gap,
            holds,
            tp_defect: 0.0,
            unital_defect: 0.0,
            details: BTreeMap::new(),
            error: None,
        }
    }

    /// A trial whose check raised an error; it never holds.
    pub fn failed(kind: &str, err: &Error) -> Self {
        let mut r = Self::new(kind, f64::NAN, f64::NAN, f64::NAN, false);
        r.error = Some(err.to_string());
        r
    }

    pub fn with_channel(mut self, channel: &KrausChannel) -> Self {
        let rep = channel.report();
        self.tp_defect = rep.tp_defect;
        self.unital_defect = rep.unital_defect;
        self
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Haar unitary or a mixture of two to four Haar unitaries.
pub fn random_bistochastic(dim: usize, rng: &mut SeededRng) -> KrausChannel {
    let kind = if rng.random_bool(0.5) {
        RandomChannel::HaarUnitary(dim)
    } else {
        RandomChannel::MixtureOfUnitaries { dim, count: rng.random_range(2..=4) }
    };
    random_channel(kind, rng).expect("positive dimensions")
}

/// Generic trace-preserving channel on `dim`, neither unital nor unitary.
pub fn random_tp(dim: usize, rng: &mut SeededRng) -> KrausChannel {
    let env = rng.random_range(2..=3);
    random_channel(RandomChannel::Stinespring { dim_in: dim, dim_out: dim, env }, rng).expect("positive dimensions")
}

#[derive(Clone, Debug)]
pub struct JarzynskiInstance {
    pub channel: KrausChannel,
    pub a: HermitianOperator,
    pub b: HermitianOperator,
    pub alpha: f64,
    pub beta: f64,
}

impl JarzynskiInstance {
    pub fn equal_parameters(&self) -> bool {
        self.alpha == self.beta
    }
}

/// Bistochastic channel on `d ∈ {2, 3, 4}`, random `A`, `B` and `α, β ∈ [−2, 2]`.
/// Half of the instances take `β = α`.
pub fn jarzynski_instance(seed: u64) -> JarzynskiInstance {
    let mut rng = seeded_rng(seed);
    let d = rng.random_range(2..=4);
    let channel = random_bistochastic(d, &mut rng);
    let a = random_hermitian(d, &mut rng);
    let b = random_hermitian(d, &mut rng);
    let alpha = uniform(&mut rng, -2.0, 2.0);
    let beta = if rng.random_bool(0.5) { alpha } else { uniform(&mut rng, -2.0, 2.0) };
    JarzynskiInstance { channel, a, b, alpha, beta }
}

pub fn jarzynski_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let inst = jarzynski_instance(seed);
    let r = jarzynski_check(&inst.channel, &inst.a, &inst.b, inst.alpha, inst.beta, tol)?;
    let mut holds = r.holds;
    let mut rec = TrialRecord::new("jarzynski", r.lhs, r.rhs, r.relative_gap, r.holds)
        .detail("alpha", inst.alpha)
        .detail("beta", inst.beta)
        .detail("dim", inst.a.dim() as f64);
    if inst.equal_parameters() && inst.alpha != 0.0 {
        let w = work_statistics(&inst.channel, &inst.a, &inst.b, inst.beta)?;
        holds &= w.second_law_holds(INEQUALITY_SLACK) && w.jensen_holds(INEQUALITY_SLACK);
        rec = rec.detail("second_law_gap", w.second_law_gap).detail("mean_work", w.mean_work);
    }
    rec.holds = holds;
    Ok(rec.with_channel(&inst.channel))
}

pub fn crooks_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let inst = jarzynski_instance(seed);
    let r = crooks_check(&inst.channel, &inst.a, &inst.b, inst.alpha, tol)?;
    let mixed = crooks_check(&inst.channel, &inst.a, &inst.b, 0.0, tol)?;
    let mixed_gap = mixed.bins.iter().map(|b| (b.forward - b.backward).abs()).fold(0.0, f64::max);
    let holds = r.holds && mixed_gap <= MIXED_CROOKS_TOL;
    Ok(TrialRecord::new("crooks", r.max_residual, 0.0, r.max_residual, holds)
        .detail("alpha", inst.alpha)
        .detail("bins", r.bins.len() as f64)
        .detail("unmatched_mass", r.unmatched_mass)
        .detail("mixed_state_gap", mixed_gap)
        .with_channel(&inst.channel))
}

#[derive(Clone, Debug)]
pub struct HeatInstance {
    pub channel: KrausChannel,
    pub a: HermitianOperator,
    pub b: HermitianOperator,
    pub alpha: f64,
    pub beta: f64,
}

/// Unital channel on two qubits with independent Gibbs inputs at
/// `α, β ∈ [−2, 2]`.
pub fn heat_instance(seed: u64) -> HeatInstance {
    let mut rng = seeded_rng(seed);
    let channel = random_bistochastic(4, &mut rng);
    let a = random_hermitian(2, &mut rng);
    let b = random_hermitian(2, &mut rng);
    HeatInstance { channel, a, b, alpha: uniform(&mut rng, -2.0, 2.0), beta: uniform(&mut rng, -2.0, 2.0) }
}

pub fn heat_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let inst = heat_instance(seed);
    let r = heat_exchange_check(&inst.channel, &inst.a, &inst.b, inst.alpha, inst.beta, tol)?;
    let gap = (r.identity_average - 1.0).abs();
    let holds = r.identity_holds == Some(true) && r.delta_s >= -INEQUALITY_SLACK;
    Ok(TrialRecord::new("heat", r.identity_average, 1.0, gap, holds)
        .detail("alpha", inst.alpha)
        .detail("beta", inst.beta)
        .detail("delta_s", r.delta_s)
        .with_channel(&inst.channel))
}

/// Blocks of a Haar isometry `C^d → C^M ⊗ C^d`: complete, generically
/// without `Σ N N† = I`.
pub fn random_measurement(dim: usize, outcomes: usize, rng: &mut SeededRng) -> Measurement {
    let u = haar_unitary(dim * outcomes, rng);
    let v = u.as_matrix();
    let ops = (0..outcomes)
        .map(|mu| {
            ComplexMatrix::new(nalgebra::DMatrix::from_fn(dim, dim, |r, c| v[(mu * dim + r, c)])).expect("finite")
        })
        .collect();
    Measurement::new(ops).expect("isometry blocks are complete")
}

/// `{√w_k U_k}` with Haar `U_k`: satisfies both completeness relations.
pub fn random_unital_measurement(dim: usize, outcomes: usize, rng: &mut SeededRng) -> Measurement {
    let w = simplex_weights(outcomes, rng);
    let ops = w.iter().map(|&x| haar_unitary(dim, rng).scale(C64::new(x.sqrt(), 0.0))).collect();
    Measurement::new(ops).expect("weighted unitaries are complete")
}

/// Row-stochastic matrix with strictly positive entries.
pub fn random_error_model(outcomes: usize, rng: &mut SeededRng) -> ErrorModel {
    ErrorModel::new((0..outcomes).map(|_| fix_row(simplex_weights(outcomes, rng))).collect())
        .expect("simplex rows are stochastic")
}

fn fix_row(mut row: Vec<f64>) -> Vec<f64> {
    let tail: f64 = row[1..].iter().sum();
    row[0] = 1.0 - tail;
    row
}

/// Unital `Φ` on `d ∈ {2, 3}`, two to four outcomes. With `all_unital` the
/// measurement is a weighted set of unitaries and every `Ψ_ν` is bistochastic;
/// otherwise the measurement and the `Ψ_ν` are generic.
pub fn feedback_instance(rng: &mut SeededRng, all_unital: bool, noisy: bool) -> FeedbackProtocol {
    let d = rng.random_range(2..=3);
    let m = rng.random_range(2..=4);
    let first_channel = random_bistochastic(d, rng);
    let measurement = if all_unital { random_unital_measurement(d, m, rng) } else { random_measurement(d, m, rng) };
    let channels = (0..m).map(|_| if all_unital { random_bistochastic(d, rng) } else { random_tp(d, rng) }).collect();
    let observables = (0..m).map(|_| random_hermitian(d, rng)).collect();
    let input = random_hermitian(d, rng);
    let alpha = uniform(rng, -2.0, 2.0);
    let error_model = noisy.then(|| random_error_model(m, rng));
    FeedbackProtocol { first_channel, measurement, channels, observables, input, alpha, error_model }
}

pub fn feedback_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let p = feedback_instance(&mut seeded_rng(seed), false, false);
    let r = jsu_check(&p, tol)?;
    Ok(TrialRecord::new("feedback", r.generalized_average, r.gamma, r.efficacy_gap(), r.efficacy_holds == Some(true))
        .detail("outcomes", p.measurement.outcomes() as f64)
        .detail("normalization", r.normalization)
        .with_channel(&p.first_channel))
}

/// Noisy protocol; even seeds draw the all-unital variant. The error-free
/// twin with an identity error model must agree to [`REDUCTION_TOL`].
pub fn feedback_noisy_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let all_unital = seed % 2 == 0;
    let p = feedback_instance(&mut seeded_rng(seed), all_unital, true);
    let r = jsu_error_check(&p, tol)?;

    let free = FeedbackProtocol { error_model: None, ..p.clone() };
    let with_identity = FeedbackProtocol { error_model: Some(ErrorModel::identity(p.measurement.outcomes())), ..free.clone() };
    let (a, b) = (jsu_error_check(&free, tol)?, jsu_error_check(&with_identity, tol)?);
    let reduction_gap = (a.generalized_average - b.generalized_average)
        .abs()
        .max((a.gamma - b.gamma_tilde).abs());

    let mut holds = r.efficacy_holds == Some(true) && reduction_gap <= REDUCTION_TOL;
    let mut rec = TrialRecord::new("feedback_noisy", r.generalized_average, r.gamma_tilde, r.efficacy_gap(), false)
        .detail("outcomes", p.measurement.outcomes() as f64)
        .detail("mutual_information", r.mutual_information.average)
        .detail("reduction_gap", reduction_gap);
    if let Some(mi) = r.mi_equality_holds {
        holds &= mi;
        rec = rec.detail("mi_equality_value", r.mi_equality_value).detail("mi_gap", r.mi_gap());
    }
    rec.holds = holds;
    Ok(rec.with_channel(&p.first_channel))
}

/// Adjoint of a bistochastic channel, composition of two unital channels, and
/// a rectangular trace-preserving channel on 50 random inputs.
pub fn structural_trial(seed: u64, tol: f64) -> Result<TrialRecord> {
    let mut rng = seeded_rng(seed);
    let d = rng.random_range(2..=4);
    let phi = random_bistochastic(d, &mut rng);
    let adj = phi.adjoint().validate(tol)?;
    let composed = KrausChannel::compose(&random_bistochastic(d, &mut rng), &phi)?.validate(tol)?;

    let (din, dout): (usize, usize) = (rng.random_range(2..=4), rng.random_range(2..=4));
    let env = rng.random_range(din.div_ceil(dout).max(1)..=3);
    let tp = random_channel(RandomChannel::Stinespring { dim_in: din, dim_out: dout, env }, &mut rng)?;
    let (mut trace_err, mut min_eig) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let rho = random_density(din, &mut rng);
        let out = tp.apply_operator(rho.matrix())?;
        trace_err = trace_err.max((out.trace() - C64::new(1.0, 0.0)).norm());
        let herm = HermitianOperator::new(out)?;
        min_eig = min_eig.min(herm.spectrum()?.min());
    }
    let worst = adj.tp_defect.max(adj.unital_defect).max(composed.unital_defect).max(trace_err).max((-min_eig).max(0.0));
    let holds = adj.is_tp && adj.is_unital && composed.is_unital && trace_err <= tol && min_eig >= -tol;
    Ok(TrialRecord::new("structural", worst, 0.0, worst, holds)
        .detail("adjoint_tp_defect", adj.tp_defect)
        .detail("adjoint_unital_defect", adj.unital_defect)
        .detail("composition_unital_defect", composed.unital_defect)
        .detail("trace_error", trace_err)
        .detail("min_output_eigenvalue", min_eig)
        .with_channel(&phi))
}

/// Samples drawn per Monte-Carlo trial.
pub const SAMPLES: usize = 100_000;

/// Share of cells inside four binomial standard errors, as `lhs`; the trial
/// holds when it reaches 99%.
pub fn sampling_trial(seed: u64, _tol: f64) -> Result<TrialRecord> {
    let inst = jarzynski_instance(seed);
    let mut rng = seeded_rng(seed ^ 0x5A5A_5A5A);
    let (sa, sb) = (inst.a.spectrum()?, inst.b.spectrum()?);
    let input = gibbs_with_spectrum(&inst.a, sa.clone(), inst.alpha)?;
    let joint = JointDistribution::from_input(input.density(), &sa, conditional_probs(&inst.channel, &sa, &sb)?)?;
    let emp = sample_joint(&joint, SAMPLES, &mut rng)?;
    let (da, db) = (sa.dim(), sb.dim());
    let n = SAMPLES as f64;
    let mut inside = 0usize;
    let mut worst = 0.0f64;
    for i in 0..da {
        for j in 0..db {
            let p = joint.probability(i, j);
            let se = (p * (1.0 - p) / n).sqrt();
            let dev = (emp.probability(i, j) - p).abs();
            if dev <= 4.0 * se {
                inside += 1;
            }
            if se > 0.0 {
                worst = worst.max(dev / se);
            }
        }
    }
    let share = inside as f64 / (da * db) as f64;
    Ok(TrialRecord::new("sampling", share, 0.99, worst, share >= 0.99)
        .detail("cells", (da * db) as f64)
        .detail("cells_inside", inside as f64)
        .with_channel(&inst.channel))
}

/// Runs one trial of `suite`; errors are recorded, not propagated.
pub fn run_trial(suite: Suite, trial: u64, seed: u64, tol: f64) -> TrialRecord {
    let out = match suite {
        Suite::Jarzynski => jarzynski_trial(seed, tol),
        Suite::Crooks => crooks_trial(seed, tol),
        Suite::Heat => heat_trial(seed, tol),
        Suite::Feedback => feedback_trial(seed, tol),
        Suite::FeedbackNoisy => feedback_noisy_trial(seed, tol),
        Suite::Structural => structural_trial(seed, tol),
        Suite::Sampling => sampling_trial(seed, tol),
    };
    let mut rec = out.unwrap_or_else(|e| TrialRecord::failed(suite.name(), &e));
    rec.trial = trial;
    rec.seed = seed;
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_a_few_seeds() {
        for suite in Suite::ALL {
            for seed in 0..4 {
                let r = run_trial(suite, seed, seed + 100, SUITE_TOL);
                assert!(r.holds, "{suite:?} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let a = run_trial(Suite::FeedbackNoisy, 3, 77, SUITE_TOL);
        let b = run_trial(Suite::FeedbackNoisy, 3, 77, SUITE_TOL);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn random_error_rows_are_exact() {
        let r = random_error_model(4, &mut seeded_rng(1));
        assert!(r.has_full_support());
        for row in r.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        }
    }
}
