//! Measurement and feedback: a four-stage protocol in which a channel `Φ`
//! acts on a Gibbs input, a generalized measurement `{N_μ}` follows, and the
//! agent applies `Ψ_ν` and reads out `B_ν` according to the registered
//! outcome `ν`.
//!
//! Registration errors are classical: the actual outcome `μ` is recorded as
//! `ν` with probability `r(ν|μ)`. The error-free protocol is the special case
//! `r(ν|μ) = δ_{νμ}` and runs through the same enumeration.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelFile, KrausChannel, CHANNEL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{identity_defect, ComplexMatrix, HermitianOperator, Spectrum, C64};
use crate::twopoint::{gibbs_with_spectrum, GibbsState};

/// Tolerance on the completeness relations of a measurement.
pub const MEASUREMENT_TOL: f64 = 1e-9;

/// Tolerance on the row sums of an error model.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tolerance on the normalization of a joint table.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Measurement operators `{N_μ}` on a single space, with `Σ N†N = I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ComplexMatrix>", into = "Vec<ComplexMatrix>")]
pub struct Measurement {
    dim: usize,
    operators: Vec<ComplexMatrix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFlags {
    pub complete: bool,
    /// `Σ N N† = I`.
    pub pclr_satisfied: bool,
    pub completeness_defect: f64,
    pub pclr_defect: f64,
}

fn operator_sums(ops: &[ComplexMatrix], dim: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let mut dagger_first = DMatrix::<C64>::zeros(dim, dim);
    let mut dagger_last = DMatrix::<C64>::zeros(dim, dim);
    for n in ops {
        let n = n.as_matrix();
        dagger_first += n.adjoint() * n;
        dagger_last += n * n.adjoint();
    }
    (dagger_first, dagger_last)
}

impl Measurement {
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let Some(first) = operators.first() else {
            return Err(Error::Structure("a measurement needs at least one operator".into()));
        };
        let dim = first.rows();
        for (mu, n) in operators.iter().enumerate() {
            if n.rows() != dim || n.cols() != dim {
                return Err(Error::Structure(format!(
                    "measurement operator {mu} is {}x{}, expected {dim}x{dim}",
                    n.rows(),
                    n.cols()
                )));
            }
        }
        let m = Self { dim, operators };
        let flags = validate_measurement(&m, MEASUREMENT_TOL)?;
        if !flags.complete {
            return Err(Error::Contract(format!(
                "measurement is incomplete: max |Σ N†N − I| = {:e}",
                flags.completeness_defect
            )));
        }
        Ok(m)
    }

    /// Projectors onto the columns of a unitary.
    pub fn projective(basis: &ComplexMatrix) -> Result<Self> {
        let d = basis.rows();
        let ops = (0..basis.cols())
            .map(|k| {
                let v = basis.as_matrix().column(k);
                ComplexMatrix::new(&v * v.adjoint())
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Self::new(ops)?;
        debug_assert_eq!(m.dim, d);
        Ok(m)
    }

    /// Projectors onto the eigenvectors of a spectrum.
    pub fn from_spectrum(spectrum: &Spectrum) -> Result<Self> {
        Self::projective(spectrum.eigenvectors())
    }

    /// The single-outcome measurement `{I}`.
    pub fn trivial(dim: usize) -> Self {
        Self { dim, operators: vec![ComplexMatrix::identity(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> usize {
        self.operators.len()
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    /// Post-measurement operator `N_μ X N_μ†`.
    fn conjugate(&self, mu: usize, x: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.operators[mu].as_matrix();
        n * x * n.adjoint()
    }
}

impl TryFrom<Vec<ComplexMatrix>> for Measurement {
    type Error = Error;

    fn try_from(ops: Vec<ComplexMatrix>) -> Result<Self> {
        Self::new(ops)
    }
}

impl From<Measurement> for Vec<ComplexMatrix> {
    fn from(m: Measurement) -> Self {
        m.operators
    }
}

pub fn validate_measurement(m: &Measurement, tol: f64) -> Result<MeasurementFlags> {
    if tol <= 0.0 {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (first, last) = operator_sums(&m.operators, m.dim);
    let completeness_defect = identity_defect(&first, 1.0);
    let pclr_defect = identity_defect(&last, 1.0);
    Ok(MeasurementFlags {
        complete: completeness_defect <= tol,
        pclr_satisfied: pclr_defect <= tol,
        completeness_defect,
        pclr_defect,
    })
}

/// Row-stochastic matrix whose row `μ` holds `r(·|μ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ErrorModel {
    rows: Vec<Vec<f64>>,
}

impl ErrorModel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Structure("error model has no rows".into()));
        }
        for (mu, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Structure(format!("error model row {mu} has {} entries, expected {n}", row.len())));
            }
            if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Domain(format!("error model row {mu} has entry {x} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("error model row {mu} sums to {sum}, expected 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: (0..n).map(|mu| (0..n).map(|nu| if mu == nu { 1.0 } else { 0.0 }).collect()).collect() }
    }

    pub fn outcomes(&self) -> usize {
        self.rows.len()
    }

    /// `r(ν|μ)`.
    pub fn get(&self, nu: usize, mu: usize) -> f64 {
        self.rows[mu][nu]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Every registration `ν` is possible from every actual outcome `μ`.
    pub fn has_full_support(&self) -> bool {
        self.rows.iter().flatten().all(|&x| x > 0.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for ErrorModel {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ErrorModel> for Vec<Vec<f64>> {
    fn from(r: ErrorModel) -> Self {
        r.rows
    }
}

#[derive(Clone, Debug)]
pub struct FeedbackProtocol {
    pub first_channel: KrausChannel,
    pub measurement: Measurement,
    /// `Ψ_ν`, indexed by registered outcome.
    pub channels: Vec<KrausChannel>,
    /// `B_ν`, indexed by registered outcome.
    pub observables: Vec<HermitianOperator>,
    pub input: HermitianOperator,
    pub alpha: f64,
    pub error_model: Option<ErrorModel>,
}

impl FeedbackProtocol {
    /// Checks lengths and dimensions; every stage must act on one space.
    pub fn validate(&self) -> Result<()> {
        let d = self.input.dim();
        let m = self.measurement.outcomes();
        let ch = &self.first_channel;
        if ch.dim_in() != d || ch.dim_out() != d {
            return Err(Error::Structure(format!(
                "first channel maps {} -> {}, protocol dimension is {d}",
                ch.dim_in(),
                ch.dim_out()
            )));
        }
        if self.measurement.dim() != d {
            return Err(Error::Structure(format!(
                "measurement acts on dimension {}, protocol dimension is {d}",
                self.measurement.dim()
            )));
        }
        if self.channels.len() != m || self.observables.len() != m {
            return Err(Error::Structure(format!(
                "{m} outcomes but {} channels and {} observables",
                self.channels.len(),
                self.observables.len()
            )));
        }
        for (nu, (psi, b)) in self.channels.iter().zip(&self.observables).enumerate() {
            if psi.dim_in() != d || psi.dim_out() != d || b.dim() != d {
                return Err(Error::Structure(format!(
                    "outcome {nu}: channel maps {} -> {}, observable has dimension {}, protocol dimension is {d}",
                    psi.dim_in(),
                    psi.dim_out(),
                    b.dim()
                )));
            }
        }
        if let Some(r) = &self.error_model {
            if r.outcomes() != m {
                return Err(Error::Structure(format!("error model covers {} outcomes, measurement has {m}", r.outcomes())));
            }
        }
        for (name, c) in std::iter::once(("first channel".to_string(), ch))
            .chain(self.channels.iter().enumerate().map(|(nu, c)| (format!("channel {nu}"), c)))
        {
            let rep = c.report();
            if !rep.is_tp {
                return Err(Error::Contract(format!("{name} is not trace preserving (defect {:e})", rep.tp_defect)));
            }
        }
        if !self.alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be finite, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One cell `p(a_i, μ, b_j^{(ν)})` of the joint table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCell {
    pub i: usize,
    pub mu: usize,
    pub nu: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub phi_unital: bool,
    pub psi_all_unital: bool,
    pub pclr_satisfied: bool,
    pub error_free: bool,
    pub full_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    /// `I` indexed `[μ][ν]`; `None` where `p(μ, ν) = 0`.
    pub pointwise: Vec<Vec<Option<f64>>>,
    pub average: f64,
}

/// `I = ln(p(μ,ν) / (p(μ) p(ν)))` from a joint over rows `μ` and columns `ν`.
pub fn mutual_information(joint: &DMatrix<f64>) -> MutualInformation {
    let p_mu: Vec<f64> = joint.row_iter().map(|r| r.sum()).collect();
    let p_nu: Vec<f64> = joint.column_iter().map(|c| c.sum()).collect();
    let mut average = 0.0;
    let pointwise = (0..joint.nrows())
        .map(|mu| {
            (0..joint.ncols())
                .map(|nu| {
                    let p = joint[(mu, nu)];
                    (p > 0.0).then(|| {
                        let i = (p / (p_mu[mu] * p_nu[nu])).ln();
                        average += p * i;
                        i
                    })
                })
                .collect()
        })
        .collect();
    MutualInformation { pointwise, average }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    /// Cells in `(i, μ, ν, j)` order.
    pub joint: Vec<FeedbackCell>,
    pub normalization: f64,
    /// `⟨(Z_A/Z_ν) exp(α a_i − α b_j^{(ν)})⟩` over the joint table.
    pub generalized_average: f64,
    /// `Σ_μ Tr(ρ_μ Ψ_μ(N_μ N_μ†))`.
    pub gamma: f64,
    /// `Σ_{μν} r(ν|μ) Tr(ρ_ν Ψ_ν(N_μ N_μ†))`.
    pub gamma_tilde: f64,
    /// `p(μ) = Tr(N_μ†N_μ Φ(ρ_A))`.
    pub outcome_probs: Vec<f64>,
    /// `p(ν) = Σ_μ r(ν|μ) p(μ)`.
    pub registered_probs: Vec<f64>,
    pub mutual_information: MutualInformation,
    /// The generalized average with the extra factor `exp(−I)`.
    pub mi_equality_value: f64,
    pub hypotheses: Hypotheses,
    pub tolerance: Option<f64>,
    /// `generalized_average = gamma_tilde`, present when `Φ` is unital.
    pub efficacy_holds: Option<bool>,
    /// `mi_equality_value = 1`, present under the full set of hypotheses.
    pub mi_equality_holds: Option<bool>,
}

impl ProtocolResult {
    pub fn efficacy_gap(&self) -> f64 {
        (self.generalized_average - self.gamma_tilde).abs()
    }

    pub fn mi_gap(&self) -> f64 {
        (self.mi_equality_value - 1.0).abs()
    }
}

struct Prepared {
    input: GibbsState,
    finals: Vec<GibbsState>,
    a_spec: Spectrum,
    b_specs: Vec<Spectrum>,
}

fn prepare(p: &FeedbackProtocol, alpha: f64) -> Result<Prepared> {
    let a_spec = p.input.spectrum()?;
    let input = gibbs_with_spectrum(&p.input, a_spec.clone(), alpha)?;
    let mut finals = Vec::with_capacity(p.observables.len());
    let mut b_specs = Vec::with_capacity(p.observables.len());
    for b in &p.observables {
        let s = b.spectrum()?;
        finals.push(gibbs_with_spectrum(b, s.clone(), alpha)?);
        b_specs.push(s);
    }
    Ok(Prepared { input, finals, a_spec, b_specs })
}

fn diagonal_in(x: &DMatrix<C64>, basis: &Spectrum, j: usize) -> f64 {
    let v = basis.vector(j);
    (v.adjoint() * x * v)[(0, 0)].re
}

fn joint_table(p: &FeedbackProtocol, prep: &Prepared, r: &ErrorModel) -> Vec<FeedbackCell> {
    let d = p.input.dim();
    let m = p.measurement.outcomes();
    let a = prep.a_spec.eigenvalues();
    let mut cells = Vec::with_capacity(d * m * m * d);
    for i in 0..d {
        let p_a = prep.input.probabilities()[i];
        let evolved = p.first_channel.apply_matrix(&prep.a_spec.projector(i));
        for mu in 0..m {
            let post = p.measurement.conjugate(mu, &evolved);
            for nu in 0..m {
                let weight = p_a * r.get(nu, mu);
                let out = p.channels[nu].apply_matrix(&post);
                let spec = &prep.b_specs[nu];
                for (j, &b) in spec.eigenvalues().iter().enumerate() {
                    let probability = weight * diagonal_in(&out, spec, j);
                    cells.push(FeedbackCell { i, mu, nu, j, a: a[i], b, probability });
                }
            }
        }
    }
    cells
}

fn evaluate(p: &FeedbackProtocol, r: &ErrorModel, error_free: bool) -> Result<ProtocolResult> {
    p.validate()?;
    let prep = prepare(p, p.alpha)?;
    let alpha = p.alpha;
    let m = p.measurement.outcomes();
    let d = p.input.dim();

    let joint = joint_table(p, &prep, r);
    let normalization: f64 = joint.iter().map(|c| c.probability).sum();
    if (normalization - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Contract(format!("joint table sums to {normalization}, expected 1")));
    }

    let ln_za = prep.input.log_partition();
    let weight = |c: &FeedbackCell| (ln_za - prep.finals[c.nu].log_partition() + alpha * (c.a - c.b)).exp();
    let generalized_average: f64 = joint.iter().map(|c| c.probability * weight(c)).sum();

    let rho_a = prep.input.density().matrix().as_matrix();
    let evolved = p.first_channel.apply_matrix(rho_a);
    let outcome_probs: Vec<f64> = p
        .measurement
        .operators()
        .iter()
        .map(|n| {
            let n = n.as_matrix();
            (n.adjoint() * n * &evolved).trace().re
        })
        .collect();
    let registered_probs: Vec<f64> =
        (0..m).map(|nu| (0..m).map(|mu| r.get(nu, mu) * outcome_probs[mu]).sum()).collect();
    let pair_joint = DMatrix::from_fn(m, m, |mu, nu| outcome_probs[mu] * r.get(nu, mu));
    let mi = mutual_information(&pair_joint);

    let mi_equality_value: f64 = joint
        .iter()
        .filter(|c| pair_joint[(c.mu, c.nu)] > 0.0)
        .map(|c| c.probability * weight(c) * registered_probs[c.nu] / r.get(c.nu, c.mu))
        .sum();

    let mut gamma = 0.0;
    let mut gamma_tilde = 0.0;
    for mu in 0..m {
        let n = p.measurement.operators()[mu].as_matrix();
        let nn = n * n.adjoint();
        for nu in 0..m {
            let out = p.channels[nu].apply_matrix(&nn);
            let t = (prep.finals[nu].density().matrix().as_matrix() * out).trace().re;
            gamma_tilde += r.get(nu, mu) * t;
            if mu == nu {
                gamma += t;
            }
        }
    }

    let flags = validate_measurement(&p.measurement, MEASUREMENT_TOL)?;
    let hypotheses = Hypotheses {
        phi_unital: p.first_channel.validate(CHANNEL_TOL)?.is_unital,
        psi_all_unital: p.channels.iter().all(|c| c.report().is_unital),
        pclr_satisfied: flags.pclr_satisfied,
        error_free,
        full_support: r.has_full_support(),
    };
    debug_assert_eq!(joint.len(), d * m * m * d);
    Ok(ProtocolResult {
        joint,
        normalization,
        generalized_average,
        gamma,
        gamma_tilde,
        outcome_probs,
        registered_probs,
        mutual_information: mi,
        mi_equality_value,
        hypotheses,
        tolerance: None,
        efficacy_holds: None,
        mi_equality_holds: None,
    })
}

fn error_model_of(p: &FeedbackProtocol) -> (ErrorModel, bool) {
    match &p.error_model {
        Some(r) => (r.clone(), false),
        None => (ErrorModel::identity(p.measurement.outcomes()), true),
    }
}

/// Exact joint table and all derived quantities, with no relation asserted.
pub fn run_protocol(p: &FeedbackProtocol) -> Result<ProtocolResult> {
    let (r, error_free) = error_model_of(p);
    evaluate(p, &r, error_free)
}

fn assert_flags(mut res: ProtocolResult, tol: f64) -> ProtocolResult {
    let h = res.hypotheses;
    res.tolerance = Some(tol);
    res.efficacy_holds = h.phi_unital.then(|| res.efficacy_gap() <= tol);
    res.mi_equality_holds =
        (h.phi_unital && h.psi_all_unital && h.pclr_satisfied && h.full_support).then(|| res.mi_gap() <= tol);
    res
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tolerance must be positive, got {tol}")))
    }
}

/// Error-free relation against `γ`. Requires a unital first channel.
pub fn jsu_check(p: &FeedbackProtocol, tol: f64) -> Result<ProtocolResult> {
    check_tol(tol)?;
    if p.error_model.is_some() {
        return Err(Error::Contract("jsu_check takes a protocol without an error model".into()));
    }
    let rep = p.first_channel.report();
    if !rep.is_unital {
        return Err(Error::Contract(format!("first channel is not unital (defect {:e})", rep.unital_defect)));
    }
    run_protocol(p).map(|r| assert_flags(r, tol))
}

/// Relation against `γ̃` and the mutual-information equality. A flag is left
/// absent when its hypotheses do not hold.
pub fn jsu_error_check(p: &FeedbackProtocol, tol: f64) -> Result<ProtocolResult> {
    check_tol(tol)?;
    run_protocol(p).map(|r| assert_flags(r, tol))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkFormReport {
    pub beta: f64,
    /// `F_0`.
    pub initial_free_energy: f64,
    /// `F_ν` per registered outcome.
    pub final_free_energies: Vec<f64>,
    /// `⟨exp(−βw + β(F_ν − F_0))⟩` with `w = ε^{(ν)} − ε^{(0)}`.
    pub average: f64,
    /// `γ` without an error model, `γ̃` with one.
    pub efficacy: f64,
    /// `⟨exp(−βw + β(F_ν − F_0) − I)⟩`.
    pub mi_average: f64,
    pub mi_equality_applies: bool,
}

/// Thermodynamic reading with `A = H_0`, `B_ν = H_ν` and `α = β`.
pub fn work_form_feedback(p: &FeedbackProtocol, beta: f64) -> Result<WorkFormReport> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!("free energies need a finite non-zero beta, got {beta}")));
    }
    let p = FeedbackProtocol { alpha: beta, ..p.clone() };
    let (r, error_free) = error_model_of(&p);
    let res = evaluate(&p, &r, error_free)?;
    let prep = prepare(&p, beta)?;
    let f0 = prep.input.free_energy().expect("beta != 0");
    let fs: Vec<f64> = prep.finals.iter().map(|g| g.free_energy().expect("beta != 0")).collect();

    let term = |c: &FeedbackCell| (-beta * (c.b - c.a) + beta * (fs[c.nu] - f0)).exp();
    let average = res.joint.iter().map(|c| c.probability * term(c)).sum();
    let mi_average = res
        .joint
        .iter()
        .filter_map(|c| {
            let i = res.mutual_information.pointwise[c.mu][c.nu]?;
            Some(c.probability * (beta * (fs[c.nu] - f0) - beta * (c.b - c.a) - i).exp())
        })
        .sum();
    let h = res.hypotheses;
    Ok(WorkFormReport {
        beta,
        initial_free_energy: f0,
        final_free_energies: fs,
        average,
        efficacy: res.gamma_tilde,
        mi_average,
        mi_equality_applies: h.phi_unital && h.psi_all_unital && h.pclr_satisfied && h.full_support,
    })
}

/// JSON description of a protocol. Channels use the channel file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub first_channel: ChannelFile,
    pub measurement: Vec<ComplexMatrix>,
    pub channels: Vec<ChannelFile>,
    pub observables: Vec<HermitianOperator>,
    pub input: HermitianOperator,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_model: Option<ErrorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProtocolFile {
    pub fn into_protocol(self) -> Result<FeedbackProtocol> {
        let p = FeedbackProtocol {
            first_channel: self.first_channel.into_channel()?.0,
            measurement: Measurement::new(self.measurement)?,
            channels: self.channels.into_iter().map(|c| c.into_channel().map(|x| x.0)).collect::<Result<_>>()?,
            observables: self.observables,
            input: self.input,
            alpha: self.alpha,
            error_model: self.error_model,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_protocol(p: &FeedbackProtocol) -> Self {
        Self {
            first_channel: p.first_channel.to_file(),
            measurement: p.measurement.operators().to_vec(),
            channels: p.channels.iter().map(KrausChannel::to_file).collect(),
            observables: p.observables.clone(),
            input: p.input.clone(),
            alpha: p.alpha,
            error_model: p.error_model.clone(),
            seed: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeedbackProtocol> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<ProtocolFile>(&text)?.into_protocol()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{random_channel, standard_channel, RandomChannel, StandardChannel};
    use crate::random::{haar_unitary, random_hermitian, seeded_rng};

    fn diag(v: &[f64]) -> HermitianOperator {
        HermitianOperator::from_real_diagonal(v).unwrap()
    }

    fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    fn qubit_protocol(seed: u64) -> FeedbackProtocol {
        let mut rng = seeded_rng(seed);
        FeedbackProtocol {
            first_channel: standard_channel(&StandardChannel::PhaseDamping(0.5)).unwrap(),
            measurement: Measurement::projective(&ComplexMatrix::identity(2)).unwrap(),
            channels: vec![KrausChannel::identity(2), standard_channel(&StandardChannel::Unitary(sigma_x())).unwrap()],
            observables: vec![random_hermitian(2, &mut rng), random_hermitian(2, &mut rng)],
            input: random_hermitian(2, &mut rng),
            alpha: 0.7,
            error_model: None,
        }
    }

    /// Independent evaluation: explicit loops over Kraus operators of every
    /// stage, no shared helpers with the module.
    fn oracle(p: &FeedbackProtocol, r: &[Vec<f64>]) -> (f64, f64, f64) {
        let d = p.input.dim();
        let m = p.measurement.outcomes();
        let sa = p.input.spectrum().unwrap();
        let za: f64 = sa.eigenvalues().iter().map(|x| (-p.alpha * x).exp()).sum();
        let apply = |ch: &KrausChannel, x: &DMatrix<C64>| {
            let mut out = DMatrix::<C64>::zeros(d, d);
            for k in ch.kraus_ops() {
                out += k.as_matrix() * x * k.as_matrix().adjoint();
            }
            out
        };
        let mut lhs = 0.0;
        let mut total = 0.0;
        for i in 0..d {
            let ai = sa.eigenvalues()[i];
            let v = sa.vector(i);
            let phi = apply(&p.first_channel, &(&v * v.adjoint()));
            for mu in 0..m {
                let n = p.measurement.operators()[mu].as_matrix();
                let post = n * &phi * n.adjoint();
                for nu in 0..m {
                    let out = apply(&p.channels[nu], &post);
                    let sb = p.observables[nu].spectrum().unwrap();
                    let zb: f64 = sb.eigenvalues().iter().map(|x| (-p.alpha * x).exp()).sum();
                    for j in 0..d {
                        let w = sb.vector(j);
                        let cell = (-p.alpha * ai).exp() / za * r[mu][nu] * (w.adjoint() * &out * &w)[(0, 0)].re;
                        total += cell;
                        lhs += cell * za / zb * (p.alpha * ai - p.alpha * sb.eigenvalues()[j]).exp();
                    }
                }
            }
        }
        let mut gt = 0.0;
        for mu in 0..m {
            let n = p.measurement.operators()[mu].as_matrix();
            for nu in 0..m {
                let sb = p.observables[nu].spectrum().unwrap();
                let zb: f64 = sb.eigenvalues().iter().map(|x| (-p.alpha * x).exp()).sum();
                let out = apply(&p.channels[nu], &(n * n.adjoint()));
                let mut t = 0.0;
                for j in 0..d {
                    let w = sb.vector(j);
                    t += (-p.alpha * sb.eigenvalues()[j]).exp() / zb * (w.adjoint() * &out * &w)[(0, 0)].re;
                }
                gt += r[mu][nu] * t;
            }
        }
        (total, lhs, gt)
    }

    #[test]
    fn measurement_flags() {
        let u = haar_unitary(3, &mut seeded_rng(1));
        let f = validate_measurement(&Measurement::projective(&u).unwrap(), 1e-9).unwrap();
        assert!(f.complete && f.pclr_satisfied);

        let s = 1.0 / 3f64.sqrt();
        let mut rng = seeded_rng(2);
        let scaled: Vec<_> = (0..3).map(|_| haar_unitary(2, &mut rng).scale(C64::new(s, 0.0))).collect();
        let m = Measurement::new(scaled).unwrap();
        assert_eq!(m.outcomes(), 3);
        assert!(validate_measurement(&m, 1e-9).unwrap().pclr_satisfied);

        // Amplitude-damping Kraus pair: complete but Σ NN† ≠ I.
        let ad = standard_channel(&StandardChannel::AmplitudeDamping(0.3)).unwrap();
        let m = Measurement::new(ad.kraus_ops().to_vec()).unwrap();
        let f = validate_measurement(&m, 1e-9).unwrap();
        assert!(f.complete && !f.pclr_satisfied);

        let half = ComplexMatrix::identity(2).scale(C64::new(0.5, 0.0));
        assert!(matches!(Measurement::new(vec![half]), Err(Error::Contract(_))));
    }

    #[test]
    fn error_model_rows() {
        assert!(ErrorModel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).is_ok());
        let err = ErrorModel::new(vec![vec![0.9, 0.1], vec![0.2, 0.7]]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(ErrorModel::new(vec![vec![1.1, -0.1], vec![0.0, 1.0]]).is_err());
        assert!(ErrorModel::new(vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn trivial_measurement_reduces_to_jarzynski() {
        let mut rng = seeded_rng(3);
        let a = random_hermitian(3, &mut rng);
        let p = FeedbackProtocol {
            first_channel: random_channel(RandomChannel::MixtureOfUnitaries { dim: 3, count: 2 }, &mut rng).unwrap(),
            measurement: Measurement::trivial(3),
            channels: vec![KrausChannel::identity(3)],
            observables: vec![a.clone()],
            input: a,
            alpha: 1.1,
            error_model: None,
        };
        let r = jsu_check(&p, 1e-9).unwrap();
        assert!((r.generalized_average - 1.0).abs() < 1e-10);
        assert!((r.gamma - 1.0).abs() < 1e-12);
        assert_eq!(r.efficacy_holds, Some(true));
        let w = work_form_feedback(&p, 1.1).unwrap();
        assert!((w.average - 1.0).abs() < 1e-10);
    }

    #[test]
    fn error_free_qubit_instance() {
        let p = qubit_protocol(5);
        let r = jsu_check(&p, 1e-9).unwrap();
        assert!((r.normalization - 1.0).abs() <= 1e-10);
        assert!((r.generalized_average - r.gamma).abs() <= 1e-10);
        let (total, lhs, gt) = oracle(&p, ErrorModel::identity(2).rows());
        assert!((total - 1.0).abs() < 1e-12);
        assert!((lhs - r.generalized_average).abs() < 1e-12);
        assert!((gt - r.gamma).abs() < 1e-12);
        assert!(r.hypotheses.psi_all_unital && r.hypotheses.pclr_satisfied);
        // The identity registration has zeros, so the MI equality is not asserted.
        assert_eq!(r.mi_equality_holds, None);
    }

    #[test]
    fn noisy_qubit_instance() {
        let mut p = qubit_protocol(6);
        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        p.error_model = Some(ErrorModel::new(rows.clone()).unwrap());
        let r = jsu_error_check(&p, 1e-9).unwrap();
        let (total, lhs, gt) = oracle(&p, &rows);
        assert!((r.normalization - 1.0).abs() <= 1e-10 && (total - 1.0).abs() <= 1e-10);
        assert!((lhs - r.generalized_average).abs() < 1e-12);
        assert!((gt - r.gamma_tilde).abs() < 1e-12);
        assert_eq!(r.efficacy_holds, Some(true));
        assert_eq!(r.mi_equality_holds, Some(true));
        assert!(r.mi_gap() <= 1e-9);

        let w = work_form_feedback(&p, p.alpha).unwrap();
        assert!((w.average - r.generalized_average).abs() <= 1e-12);
        assert!(w.mi_equality_applies && (w.mi_average - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn amplitude_damping_third_stage() {
        let mut p = qubit_protocol(7);
        p.channels[1] = standard_channel(&StandardChannel::AmplitudeDamping(0.6)).unwrap();
        let r = jsu_check(&p, 1e-9).unwrap();
        assert_eq!(r.efficacy_holds, Some(true));
        assert!(!r.hypotheses.psi_all_unital);
        let (_, lhs, gt) = oracle(&p, ErrorModel::identity(2).rows());
        assert!((lhs - gt).abs() <= 1e-9);
    }

    #[test]
    fn identity_error_model_is_bit_identical() {
        let p = qubit_protocol(8);
        let free = jsu_check(&p, 1e-9).unwrap();
        let mut q = p.clone();
        q.error_model = Some(ErrorModel::identity(2));
        let noisy = jsu_error_check(&q, 1e-9).unwrap();
        assert_eq!(free.joint, noisy.joint);
        assert_eq!(free.generalized_average.to_bits(), noisy.generalized_average.to_bits());
        assert_eq!(free.gamma_tilde.to_bits(), noisy.gamma_tilde.to_bits());
        assert_eq!(noisy.gamma_tilde, noisy.gamma);
    }

    #[test]
    fn non_unital_first_channel() {
        let mut p = qubit_protocol(9);
        p.first_channel = standard_channel(&StandardChannel::AmplitudeDamping(0.5)).unwrap();
        assert!(matches!(jsu_check(&p, 1e-9), Err(Error::Contract(_))));
        p.error_model = Some(ErrorModel::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        let r = jsu_error_check(&p, 1e-9).unwrap();
        assert_eq!(r.efficacy_holds, None);
        assert_eq!(r.mi_equality_holds, None);
    }

    #[test]
    fn no_feedback_special_case() {
        let mut rng = seeded_rng(10);
        let psi = random_channel(RandomChannel::MixtureOfUnitaries { dim: 3, count: 3 }, &mut rng).unwrap();
        let b = random_hermitian(3, &mut rng);
        let p = FeedbackProtocol {
            first_channel: random_channel(RandomChannel::HaarUnitary(3), &mut rng).unwrap(),
            measurement: Measurement::projective(&haar_unitary(3, &mut rng)).unwrap(),
            channels: vec![psi; 3],
            observables: vec![b; 3],
            input: random_hermitian(3, &mut rng),
            alpha: -0.6,
            error_model: None,
        };
        let r = jsu_check(&p, 1e-9).unwrap();
        assert!((r.gamma - 1.0).abs() <= 1e-10);
        assert!((r.generalized_average - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn mutual_information_cases() {
        let prod = DMatrix::from_fn(2, 3, |i, j| [0.3, 0.7][i] * [0.2, 0.5, 0.3][j]);
        let mi = mutual_information(&prod);
        assert!(mi.average.abs() < 1e-12);
        assert!(mi.pointwise.iter().flatten().all(|x| x.unwrap().abs() < 1e-12));

        let n = 4;
        let diag = DMatrix::from_fn(n, n, |i, j| if i == j { 0.25 } else { 0.0 });
        let mi = mutual_information(&diag);
        assert!((mi.average - 4f64.ln()).abs() < 1e-12);
        assert_eq!(mi.pointwise[0][1], None);

        let r = [[0.9, 0.1], [0.2, 0.8]];
        let joint = DMatrix::from_fn(2, 2, |mu, nu| 0.5 * r[mu][nu]);
        let p_nu = [0.55, 0.45];
        let mut direct = 0.0;
        for mu in 0..2 {
            for nu in 0..2 {
                let pj: f64 = 0.5 * r[mu][nu];
                direct += pj * (pj / (0.5 * p_nu[nu])).ln();
            }
        }
        assert!((mutual_information(&joint).average - direct).abs() < 1e-12);
    }

    #[test]
    fn structural_errors() {
        let mut p = qubit_protocol(11);
        p.observables.pop();
        assert!(matches!(run_protocol(&p), Err(Error::Structure(_))));
        let mut p = qubit_protocol(11);
        p.input = diag(&[0.0, 1.0, 2.0]);
        assert!(matches!(run_protocol(&p), Err(Error::Structure(_))));
        assert!(matches!(work_form_feedback(&qubit_protocol(11), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn protocol_file_roundtrip() {
        let mut p = qubit_protocol(12);
        p.error_model = Some(ErrorModel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap());
        let json = serde_json::to_string(&ProtocolFile::from_protocol(&p)).unwrap();
        let q = serde_json::from_str::<ProtocolFile>(&json).unwrap().into_protocol().unwrap();
        let (a, b) = (run_protocol(&p).unwrap(), run_protocol(&q).unwrap());
        assert_eq!(a, b);
    }
}
