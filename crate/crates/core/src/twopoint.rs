//! Two-point measurement statistics.
//!
//! The input is read out in an eigenbasis `{|a_i⟩}` of `A`, evolved through a
//! channel, and read out again in an eigenbasis `{|b_j⟩}` of `B`. The
//! conditional probabilities `p(b_j|a_i) = ⟨b_j|Φ(|a_i⟩⟨a_i|)|b_j⟩` and the
//! joint `p(a_i, b_j) = p(a_i) p(b_j|a_i)` are indexed by eigenvector labels;
//! repeated eigenvalues get one label per eigenvector.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::KrausChannel;
use crate::error::{Error, Result};
use crate::format_sig17;
use crate::linalg::{DensityMatrix, HermitianOperator, Spectrum, C64};
use crate::random::seeded_rng;

/// Off-diagonal slack when checking that an input state is diagonal in the
/// input eigenbasis.
pub const COMMUTE_TOL: f64 = 1e-10;

/// Default absolute clustering width for eigenvalue differences.
pub const CLUSTER_TOL: f64 = 1e-8;

/// The exponential-family state `e^{-αA} / Tr e^{-αA}`.
#[derive(Clone, Debug)]
pub struct GibbsState {
    generator: HermitianOperator,
    spectrum: Spectrum,
    param: f64,
    log_partition: f64,
    partition_function: f64,
    free_energy: Option<f64>,
    probabilities: Vec<f64>,
    density: DensityMatrix,
}

impl GibbsState {
    pub fn generator(&self) -> &HermitianOperator {
        &self.generator
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn param(&self) -> f64 {
        self.param
    }

    pub fn partition_function(&self) -> f64 {
        self.partition_function
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// `-ln Z / param`; absent when `param == 0`.
    pub fn free_energy(&self) -> Option<f64> {
        self.free_energy
    }

    /// Occupation of each eigenvector label of the generator.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn density(&self) -> &DensityMatrix {
        &self.density
    }
}

impl AsRef<DensityMatrix> for GibbsState {
    fn as_ref(&self) -> &DensityMatrix {
        &self.density
    }
}

pub fn gibbs(a: &HermitianOperator, param: f64) -> Result<GibbsState> {
    gibbs_with_spectrum(a, a.spectrum()?, param)
}

/// Log-partition function `ln Σ_i e^{-param·λ_i}` evaluated with the
/// dominant exponent factored out.
pub fn log_partition(eigenvalues: &[f64], param: f64) -> f64 {
    let pivot = dominant(eigenvalues, param);
    let sum: f64 = eigenvalues.iter().map(|&x| (-param * (x - pivot)).exp()).sum();
    sum.ln() - param * pivot
}

/// The eigenvalue minimizing `param·λ`, used as the exponent shift.
pub(crate) fn dominant(eigenvalues: &[f64], param: f64) -> f64 {
    if param >= 0.0 {
        eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn gibbs_with_spectrum(a: &HermitianOperator, spectrum: Spectrum, param: f64) -> Result<GibbsState> {
    if !param.is_finite() {
        return Err(Error::Domain(format!("Gibbs parameter must be finite, got {param}")));
    }
    let d = spectrum.dim();
    let values = spectrum.eigenvalues();

    let (probabilities, density) = if param == 0.0 {
        (vec![1.0 / d as f64; d], DensityMatrix::maximally_mixed(d))
    } else {
        let pivot = dominant(values, param);
        let weights: Vec<f64> = values.iter().map(|&x| (-param * (x - pivot)).exp()).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let v = spectrum.eigenvectors().as_matrix();
        let diag = nalgebra::DVector::from_iterator(d, probs.iter().map(|&p| C64::new(p, 0.0)));
        let m = v * DMatrix::from_diagonal(&diag) * v.adjoint();
        (probs, DensityMatrix::new_unchecked((&m + m.adjoint()).scale(0.5)))
    };

    let log_z = log_partition(values, param);
    let z = log_z.exp();
    if !z.is_finite() || z == 0.0 {
        return Err(Error::Range(format!(
            "partition function e^{log_z} is not representable; shift the generator by c·I \
             (this rescales Z by e^(-param·c) and leaves the state unchanged)"
        )));
    }
    Ok(GibbsState {
        generator: a.clone(),
        spectrum,
        param,
        log_partition: log_z,
        partition_function: z,
        free_energy: (param != 0.0).then(|| -log_z / param),
        probabilities,
        density,
    })
}

/// Matrix `p(b_j|a_i)` with rows `j` (output labels) and columns `i` (input labels).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMatrix {
    entries: DMatrix<f64>,
    input_eigenvalues: Vec<f64>,
    output_eigenvalues: Vec<f64>,
}

impl ConditionalMatrix {
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[(j, i)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn input_eigenvalues(&self) -> &[f64] {
        &self.input_eigenvalues
    }

    pub fn output_eigenvalues(&self) -> &[f64] {
        &self.output_eigenvalues
    }

    pub fn input_dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `Σ_j p(b_j|a_i)` per input label; each is 1 for a trace-preserving channel.
    pub fn column_sums(&self) -> Vec<f64> {
        self.entries.column_iter().map(|c| c.sum()).collect()
    }

    /// `Σ_i p(b_j|a_i)` per output label; each is `d_A/d_B` for a unital channel.
    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }
}

/// `|⟨w_j|K|v_i⟩|²` summed over Kraus operators, for the columns `v_i` of
/// `inputs` and `w_j` of `outputs`. No trace-preservation requirement.
pub(crate) fn transition_in_bases(
    channel: &KrausChannel,
    inputs: &DMatrix<C64>,
    outputs: &DMatrix<C64>,
) -> DMatrix<f64> {
    let mut t = DMatrix::<f64>::zeros(outputs.ncols(), inputs.ncols());
    let w_adj = outputs.adjoint();
    for k in channel.kraus_ops() {
        let m = &w_adj * k.as_matrix() * inputs;
        for (dst, z) in t.iter_mut().zip(m.iter()) {
            *dst += z.norm_sqr();
        }
    }
    t
}

fn check_dims(channel: &KrausChannel, in_spec: &Spectrum, out_spec: &Spectrum) -> Result<()> {
    if in_spec.dim() != channel.dim_in() || out_spec.dim() != channel.dim_out() {
        return Err(Error::Shape(format!(
            "channel maps {} -> {}, spectra have dimensions {} and {}",
            channel.dim_in(),
            channel.dim_out(),
            in_spec.dim(),
            out_spec.dim()
        )));
    }
    Ok(())
}

/// `⟨b_j|Φ(|a_i⟩⟨a_i|)|b_j⟩` for any completely positive map, trace preserving
/// or not. Rows are output labels.
pub fn transition_matrix(channel: &KrausChannel, in_spec: &Spectrum, out_spec: &Spectrum) -> Result<DMatrix<f64>> {
    check_dims(channel, in_spec, out_spec)?;
    Ok(transition_in_bases(channel, in_spec.eigenvectors().as_matrix(), out_spec.eigenvectors().as_matrix()))
}

pub fn conditional_probs(channel: &KrausChannel, in_spec: &Spectrum, out_spec: &Spectrum) -> Result<ConditionalMatrix> {
    let report = channel.report();
    if !report.is_tp {
        return Err(Error::Contract(format!(
            "conditional probabilities need a trace-preserving channel (defect {:e})",
            report.tp_defect
        )));
    }
    Ok(ConditionalMatrix {
        entries: transition_matrix(channel, in_spec, out_spec)?,
        input_eigenvalues: in_spec.eigenvalues().to_vec(),
        output_eigenvalues: out_spec.eigenvalues().to_vec(),
    })
}

/// Joint distribution `p(a_i, b_j)` over input and output eigenlabels.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    input_probs: Vec<f64>,
    conditional: ConditionalMatrix,
    joint: DMatrix<f64>,
}

impl JointDistribution {
    /// Reads `p(a_i) = ⟨a_i|ρ|a_i⟩` from a state that must be diagonal in the
    /// input eigenbasis.
    pub fn from_input(input: &DensityMatrix, in_spec: &Spectrum, conditional: ConditionalMatrix) -> Result<Self> {
        if input.dim() != in_spec.dim() {
            return Err(Error::Shape(format!(
                "input state has dimension {}, input basis {}",
                input.dim(),
                in_spec.dim()
            )));
        }
        let v = in_spec.eigenvectors().as_matrix();
        let rotated = v.adjoint() * input.matrix().as_matrix() * v;
        let d = in_spec.dim();
        let mut off = 0.0f64;
        for c in 0..d {
            for r in 0..d {
                if r != c {
                    off = off.max(rotated[(r, c)].norm());
                }
            }
        }
        if off > COMMUTE_TOL {
            return Err(Error::Contract(format!(
                "input state does not commute with the input eigenprojectors \
                 (off-diagonal {off:e}); the two-point scheme needs ρ = Σ p(a_i)|a_i⟩⟨a_i|"
            )));
        }
        let probs = (0..d).map(|i| rotated[(i, i)].re).collect();
        Self::from_probabilities(probs, conditional)
    }

    pub fn from_probabilities(input_probs: Vec<f64>, conditional: ConditionalMatrix) -> Result<Self> {
        if input_probs.len() != conditional.input_dim() {
            return Err(Error::Shape(format!(
                "{} input probabilities for {} input labels",
                input_probs.len(),
                conditional.input_dim()
            )));
        }
        let joint = DMatrix::from_fn(conditional.input_dim(), conditional.output_dim(), |i, j| {
            input_probs[i] * conditional.get(j, i)
        });
        Ok(Self { input_probs, conditional, joint })
    }

    pub fn input_probs(&self) -> &[f64] {
        &self.input_probs
    }

    pub fn conditional(&self) -> &ConditionalMatrix {
        &self.conditional
    }

    /// `p(a_i, b_j)`.
    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.joint[(i, j)]
    }

    pub fn input_eigenvalues(&self) -> &[f64] {
        self.conditional.input_eigenvalues()
    }

    pub fn output_eigenvalues(&self) -> &[f64] {
        self.conditional.output_eigenvalues()
    }

    pub fn total_mass(&self) -> f64 {
        self.joint.sum()
    }

    /// `Σ_ij p(a_i, b_j) f(a_i, b_j)`.
    pub fn average(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let (a, b) = (self.input_eigenvalues(), self.output_eigenvalues());
        let mut acc = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                acc += self.joint[(i, j)] * f(ai, bj);
            }
        }
        acc
    }

    /// CSV with header `i,j,a_i,b_j,p`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,a_i,b_j,p\n");
        for (i, &a) in self.input_eigenvalues().iter().enumerate() {
            for (j, &b) in self.output_eigenvalues().iter().enumerate() {
                out.push_str(&format!(
                    "{i},{j},{},{},{}\n",
                    format_sig17(a),
                    format_sig17(b),
                    format_sig17(self.joint[(i, j)])
                ));
            }
        }
        out
    }
}

/// Builds the joint distribution and returns `⟨f(a, b)⟩` alongside it.
pub fn joint_average(
    input: &DensityMatrix,
    in_spec: &Spectrum,
    conditional: ConditionalMatrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(f64, JointDistribution)> {
    let joint = JointDistribution::from_input(input, in_spec, conditional)?;
    Ok((joint.average(f), joint))
}

/// Which eigenvalue difference to histogram, in terms of the joint's own
/// input (`a`) and output (`b`) labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaSign {
    #[serde(rename = "b_minus_a")]
    OutputMinusInput,
    #[serde(rename = "a_minus_b")]
    InputMinusOutput,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaBin {
    /// Mass-weighted mean of the clustered differences.
    pub delta: f64,
    pub probability: f64,
    /// Smallest and largest raw difference in the cluster.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    pub bins: Vec<DeltaBin>,
    pub cluster_tolerance: f64,
}

impl DeltaHistogram {
    pub fn total_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.probability).sum()
    }

    /// The bin whose cluster range contains `delta` up to the cluster tolerance.
    pub fn find(&self, delta: f64) -> Option<&DeltaBin> {
        let tol = self.cluster_tolerance;
        self.bins.iter().find(|b| delta >= b.lo - tol && delta <= b.hi + tol)
    }

    /// CSV with header `delta,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,probability\n");
        for b in &self.bins {
            out.push_str(&format!("{},{}\n", format_sig17(b.delta), format_sig17(b.probability)));
        }
        out
    }
}

pub fn delta_histogram(joint: &JointDistribution, sign: DeltaSign) -> DeltaHistogram {
    delta_histogram_with_tolerance(joint, sign, CLUSTER_TOL)
}

/// Histogram of all `d_A·d_B` label differences. Sorted differences closer
/// than `tol` to their neighbour share a bin.
pub fn delta_histogram_with_tolerance(joint: &JointDistribution, sign: DeltaSign, tol: f64) -> DeltaHistogram {
    let (a, b) = (joint.input_eigenvalues(), joint.output_eigenvalues());
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let delta = match sign {
                DeltaSign::OutputMinusInput => bj - ai,
                DeltaSign::InputMinusOutput => ai - bj,
            };
            points.push((delta, joint.probability(i, j)));
        }
    }
    points.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut bins = Vec::new();
    let mut start = 0;
    for k in 1..=points.len() {
        if k == points.len() || points[k].0 - points[k - 1].0 > tol {
            bins.push(cluster(&points[start..k]));
            start = k;
        }
    }
    DeltaHistogram { bins, cluster_tolerance: tol }
}

fn cluster(points: &[(f64, f64)]) -> DeltaBin {
    let mass: f64 = points.iter().map(|p| p.1).sum();
    let delta = if mass > 0.0 {
        points.iter().map(|p| p.0 * p.1).sum::<f64>() / mass
    } else {
        points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64
    };
    let (lo, hi) = (points[0].0, points[points.len() - 1].0);
    DeltaBin { delta: delta.clamp(lo, hi), probability: mass, lo, hi }
}

/// Monte-Carlo counts of two-point outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalJoint {
    samples: usize,
    counts: DMatrix<u64>,
    input_eigenvalues: Vec<f64>,
    output_eigenvalues: Vec<f64>,
}

impl EmpiricalJoint {
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[(i, j)]
    }

    /// Empirical frequency of `(a_i, b_j)`.
    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.counts[(i, j)] as f64 / self.samples as f64
    }

    pub fn input_eigenvalues(&self) -> &[f64] {
        &self.input_eigenvalues
    }

    pub fn output_eigenvalues(&self) -> &[f64] {
        &self.output_eigenvalues
    }
}

/// Draws `n` trajectories: `a_i` from the input probabilities, then `b_j`
/// from `p(·|a_i)`.
pub fn sample_joint<R: Rng + ?Sized>(joint: &JointDistribution, n: usize, rng: &mut R) -> Result<EmpiricalJoint> {
    if n == 0 {
        return Err(Error::Domain("trajectory count must be at least 1".into()));
    }
    let clamp = |x: f64| x.max(0.0);
    let first = WeightedIndex::new(joint.input_probs().iter().map(|&p| clamp(p)))
        .map_err(|e| Error::Domain(format!("input probabilities: {e}")))?;
    let cond = joint.conditional();
    let rows: Vec<Option<WeightedIndex<f64>>> = (0..cond.input_dim())
        .map(|i| WeightedIndex::new((0..cond.output_dim()).map(|j| clamp(cond.get(j, i)))).ok())
        .collect();

    let mut counts = DMatrix::<u64>::zeros(cond.input_dim(), cond.output_dim());
    for _ in 0..n {
        let i = first.sample(rng);
        let j = rows[i]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("conditional column {i} has no mass")))?
            .sample(rng);
        counts[(i, j)] += 1;
    }
    Ok(EmpiricalJoint {
        samples: n,
        counts,
        input_eigenvalues: joint.input_eigenvalues().to_vec(),
        output_eigenvalues: joint.output_eigenvalues().to_vec(),
    })
}

pub fn sample_trajectories(
    input: &DensityMatrix,
    channel: &KrausChannel,
    in_spec: &Spectrum,
    out_spec: &Spectrum,
    n: usize,
    seed: u64,
) -> Result<EmpiricalJoint> {
    let cond = conditional_probs(channel, in_spec, out_spec)?;
    let joint = JointDistribution::from_input(input, in_spec, cond)?;
    sample_joint(&joint, n, &mut seeded_rng(seed))
}
