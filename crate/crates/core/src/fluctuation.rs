//! Exact fluctuation relations for channels without feedback.
//!
//! Every average is a finite double sum over eigenlabel pairs; nothing here
//! samples. Exponentials are evaluated after shifting each spectrum by its
//! dominant eigenvalue, with the compensating factor applied to both sides of
//! the identity so relative gaps are unaffected.

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelReport, KrausChannel};
use crate::error::{Error, Result};
use crate::linalg::{tensor_product, HermitianOperator};
use crate::twopoint::{
    conditional_probs, delta_histogram, dominant, gibbs, gibbs_with_spectrum, transition_in_bases, DeltaHistogram,
    DeltaSign, JointDistribution,
};

/// Default tolerance for the exact identities.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Slack for inequalities that follow from Jensen's inequality.
pub const INEQUALITY_SLACK: f64 = 1e-9;

/// Probability below which a histogram bin counts as empty.
pub const EMPTY_BIN: f64 = 1e-12;

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tolerance must be positive, got {tol}")))
    }
}

fn require_tp(channel: &KrausChannel) -> Result<ChannelReport> {
    let r = channel.report();
    if r.is_tp {
        Ok(r)
    } else {
        Err(Error::Contract(format!("channel is not trace preserving (defect {:e})", r.tp_defect)))
    }
}

fn require_square(channel: &KrausChannel) -> Result<()> {
    if channel.is_square() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "relation needs equal input and output dimensions, channel maps {} -> {}",
            channel.dim_in(),
            channel.dim_out()
        )))
    }
}

fn check_observables(channel: &KrausChannel, a: &HermitianOperator, b: &HermitianOperator) -> Result<()> {
    if a.dim() != channel.dim_in() || b.dim() != channel.dim_out() {
        return Err(Error::Shape(format!(
            "channel maps {} -> {}, observables have dimensions {} and {}",
            channel.dim_in(),
            channel.dim_out(),
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `⟨exp(αa − βb)⟩` against `(d_A/d_B) Tr e^{−βB} / Tr e^{−αA}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JarzynskiReport {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_gap: f64,
    pub holds: bool,
    pub tolerance: f64,
    pub alpha: f64,
    pub beta: f64,
    pub channel: ChannelReport,
}

struct ShiftedSides {
    lhs: f64,
    rhs: f64,
    /// `exp(α a_* − β b_*)`, the factor removed from both sides.
    factor: f64,
}

fn shifted_sides(joint: &JointDistribution, alpha: f64, beta: f64, dim_ratio: f64) -> ShiftedSides {
    let (a, b) = (joint.input_eigenvalues(), joint.output_eigenvalues());
    let a0 = dominant(a, alpha);
    let b0 = dominant(b, beta);
    let lhs = joint.average(|x, y| (alpha * (x - a0) - beta * (y - b0)).exp());
    let zb: f64 = b.iter().map(|&y| (-beta * (y - b0)).exp()).sum();
    let za: f64 = a.iter().map(|&x| (-alpha * (x - a0)).exp()).sum();
    ShiftedSides { lhs, rhs: dim_ratio * zb / za, factor: (alpha * a0 - beta * b0).exp() }
}

/// Input Gibbs state of `A` at `α`, two-point readout in the eigenbases of
/// `A` and `B`.
pub fn jarzynski_check(
    channel: &KrausChannel,
    a: &HermitianOperator,
    b: &HermitianOperator,
    alpha: f64,
    beta: f64,
    tol: f64,
) -> Result<JarzynskiReport> {
    check_tol(tol)?;
    let report = require_tp(channel)?;
    check_observables(channel, a, b)?;
    if !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be finite, got {beta}")));
    }
    let (sa, sb) = (a.spectrum()?, b.spectrum()?);
    let input = gibbs_with_spectrum(a, sa.clone(), alpha)?;
    let cond = conditional_probs(channel, &sa, &sb)?;
    let joint = JointDistribution::from_input(input.density(), &sa, cond)?;

    let ratio = channel.dim_in() as f64 / channel.dim_out() as f64;
    let s = shifted_sides(&joint, alpha, beta, ratio);
    if !s.lhs.is_finite() {
        return Err(Error::Range(format!(
            "exp(αa − βb) overflows even after shifting (α = {alpha}, β = {beta})"
        )));
    }
    let relative_gap = (s.lhs - s.rhs).abs() / s.rhs.abs().max(1e-300);
    Ok(JarzynskiReport {
        lhs: s.lhs * s.factor,
        rhs: s.rhs * s.factor,
        relative_gap,
        holds: relative_gap <= tol,
        tolerance: tol,
        alpha,
        beta,
        channel: report,
    })
}

/// Two-temperature form: initial Hamiltonian `H0` at `β0`, final `H1` at `β1`,
/// right-hand side `Z_1(β1) / Z_0(β0)`.
pub fn tasaki_two_temperature(
    channel: &KrausChannel,
    h0: &HermitianOperator,
    h1: &HermitianOperator,
    beta0: f64,
    beta1: f64,
    tol: f64,
) -> Result<JarzynskiReport> {
    require_square(channel)?;
    jarzynski_check(channel, h0, h1, beta0, beta1, tol)
}

/// Work statistics at a single inverse temperature, with `w = ε⁽¹⁾ − ε⁽⁰⁾`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkStatistics {
    pub beta: f64,
    pub mean_work: f64,
    /// `F_1 − F_0`.
    pub delta_f: f64,
    /// `⟨e^{−βw}⟩`.
    pub jarzynski_average: f64,
    /// `e^{−βΔF}`.
    pub free_energy_factor: f64,
    /// `⟨w⟩ − ΔF`.
    pub second_law_gap: f64,
    pub unital: bool,
}

impl WorkStatistics {
    /// `⟨w⟩ ≥ ΔF` for `β > 0` (the inequality reverses for `β < 0`).
    pub fn second_law_holds(&self, slack: f64) -> bool {
        if self.beta > 0.0 {
            self.second_law_gap >= -slack
        } else {
            self.second_law_gap <= slack
        }
    }

    /// `exp(−β(⟨w⟩ − ΔF)) ≤ 1`, valid for either sign of `β`.
    pub fn jensen_holds(&self, slack: f64) -> bool {
        (-self.beta * self.second_law_gap).exp() <= 1.0 + slack
    }
}

pub fn work_statistics(
    channel: &KrausChannel,
    h0: &HermitianOperator,
    h1: &HermitianOperator,
    beta: f64,
) -> Result<WorkStatistics> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!("free energies need a finite non-zero beta, got {beta}")));
    }
    require_square(channel)?;
    let report = require_tp(channel)?;
    check_observables(channel, h0, h1)?;
    let (s0, s1) = (h0.spectrum()?, h1.spectrum()?);
    let g0 = gibbs_with_spectrum(h0, s0.clone(), beta)?;
    let g1 = gibbs_with_spectrum(h1, s1.clone(), beta)?;
    let joint = JointDistribution::from_input(g0.density(), &s0, conditional_probs(channel, &s0, &s1)?)?;

    let mean_work = joint.average(|e0, e1| e1 - e0);
    let delta_f = g1.free_energy().expect("beta != 0") - g0.free_energy().expect("beta != 0");
    let s = shifted_sides(&joint, beta, beta, 1.0);
    Ok(WorkStatistics {
        beta,
        mean_work,
        delta_f,
        jarzynski_average: s.lhs * s.factor,
        free_energy_factor: (-beta * delta_f).exp(),
        second_law_gap: mean_work - delta_f,
        unital: report.is_unital,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksBin {
    /// Forward difference `b − a`.
    pub delta: f64,
    /// `P(b − a = Δ | Φ, ρ_A)`.
    pub forward: f64,
    /// `P(a − b = −Δ | Φ†, ρ_B)`.
    pub backward: f64,
    /// `|e^{−αΔ} Tr(e^{−αA}) P_fwd − Tr(e^{−αB}) P_bwd|`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksReport {
    pub alpha: f64,
    pub forward: DeltaHistogram,
    pub backward: DeltaHistogram,
    pub bins: Vec<CrooksBin>,
    pub per_bin_residuals: Vec<f64>,
    pub max_residual: f64,
    /// Total probability in bins present on only one side.
    pub unmatched_mass: f64,
    pub tolerance: f64,
    pub holds: bool,
    pub channel: ChannelReport,
}

fn require_bistochastic(channel: &KrausChannel) -> Result<ChannelReport> {
    require_square(channel)?;
    let r = channel.report();
    if !r.is_bistochastic() {
        return Err(Error::Contract(format!(
            "the adjoint process needs a bistochastic channel (tp defect {:e}, unital defect {:e})",
            r.tp_defect, r.unital_defect
        )));
    }
    Ok(r)
}

/// Forward process `Φ` from `ρ_A(α)` against the adjoint process `Φ†` from `ρ_B(α)`.
pub fn crooks_check(
    channel: &KrausChannel,
    a: &HermitianOperator,
    b: &HermitianOperator,
    alpha: f64,
    tol: f64,
) -> Result<CrooksReport> {
    check_tol(tol)?;
    let report = require_bistochastic(channel)?;
    check_observables(channel, a, b)?;
    let (sa, sb) = (a.spectrum()?, b.spectrum()?);
    let ga = gibbs_with_spectrum(a, sa.clone(), alpha)?;
    let gb = gibbs_with_spectrum(b, sb.clone(), alpha)?;

    let fwd_joint = JointDistribution::from_input(ga.density(), &sa, conditional_probs(channel, &sa, &sb)?)?;
    let adjoint = channel.adjoint();
    let bwd_joint = JointDistribution::from_input(gb.density(), &sb, conditional_probs(&adjoint, &sb, &sa)?)?;
    // Backward joint: inputs are b-labels, outputs a-labels, so output − input = a − b.
    let forward = delta_histogram(&fwd_joint, DeltaSign::OutputMinusInput);
    let backward = delta_histogram(&bwd_joint, DeltaSign::OutputMinusInput);

    let (ln_za, ln_zb) = (ga.log_partition(), gb.log_partition());
    let side_f = |delta: f64, p: f64| (-alpha * delta + ln_za).exp() * p;
    let side_b = |p: f64| ln_zb.exp() * p;

    let tol_c = forward.cluster_tolerance;
    let mut used = vec![false; backward.bins.len()];
    let mut bins = Vec::with_capacity(forward.bins.len());
    let mut unmatched_mass = 0.0;
    for f in &forward.bins {
        let partner = backward.bins.iter().enumerate().position(|(k, g)| {
            !used[k] && -g.hi <= f.hi + tol_c && -g.lo >= f.lo - tol_c
        });
        let backward_p = match partner {
            Some(k) => {
                used[k] = true;
                backward.bins[k].probability
            }
            None => {
                unmatched_mass += f.probability;
                0.0
            }
        };
        bins.push(CrooksBin {
            delta: f.delta,
            forward: f.probability,
            backward: backward_p,
            residual: (side_f(f.delta, f.probability) - side_b(backward_p)).abs(),
        });
    }
    for (g, _) in backward.bins.iter().zip(&used).filter(|(_, &u)| !u) {
        unmatched_mass += g.probability;
        bins.push(CrooksBin { delta: -g.delta, forward: 0.0, backward: g.probability, residual: side_b(g.probability) });
    }
    bins.sort_by(|x, y| x.delta.total_cmp(&y.delta));

    let per_bin_residuals: Vec<f64> = bins.iter().map(|b| b.residual).collect();
    let max_residual = per_bin_residuals.iter().copied().fold(0.0, f64::max);
    Ok(CrooksReport {
        alpha,
        forward,
        backward,
        bins,
        per_bin_residuals,
        max_residual,
        unmatched_mass,
        tolerance: tol,
        holds: max_residual <= tol,
        channel: report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksWorkRow {
    pub work: f64,
    pub forward: f64,
    pub backward: f64,
    /// `P_fwd(w) / P_bwd(−w)`.
    pub ratio: f64,
    /// `e^{β(w − ΔF)}`.
    pub expected: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksWorkTable {
    pub beta: f64,
    pub delta_f: f64,
    pub rows: Vec<CrooksWorkRow>,
    /// Bins skipped because one side has probability at most [`EMPTY_BIN`].
    pub excluded: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Ratio form of the forward/backward relation at inverse temperature `β`.
pub fn crooks_work_form(
    channel: &KrausChannel,
    h0: &HermitianOperator,
    h1: &HermitianOperator,
    beta: f64,
    tol: f64,
) -> Result<CrooksWorkTable> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::Domain(format!("free energies need a finite non-zero beta, got {beta}")));
    }
    let crooks = crooks_check(channel, h0, h1, beta, tol)?;
    let f0 = gibbs(h0, beta)?.free_energy().expect("beta != 0");
    let f1 = gibbs(h1, beta)?.free_energy().expect("beta != 0");
    let delta_f = f1 - f0;

    let mut rows = Vec::new();
    let mut excluded = 0;
    for bin in &crooks.bins {
        if bin.forward <= EMPTY_BIN || bin.backward <= EMPTY_BIN {
            excluded += 1;
            continue;
        }
        let ratio = bin.forward / bin.backward;
        let expected = (beta * (bin.delta - delta_f)).exp();
        rows.push(CrooksWorkRow {
            work: bin.delta,
            forward: bin.forward,
            backward: bin.backward,
            ratio,
            expected,
            relative_error: (ratio - expected).abs() / expected,
        });
    }
    let max_relative_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(CrooksWorkTable { beta, delta_f, rows, excluded, max_relative_error, tolerance: tol, holds: max_relative_error <= tol })
}

/// Exchange between two systems prepared at parameters `α` and `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatExchangeReport {
    pub alpha: f64,
    pub beta: f64,
    /// `⟨exp(α(a − a′) + β(b − b′))⟩`.
    pub identity_average: f64,
    /// `⟨α(a′ − a) + β(b′ − b)⟩`.
    pub delta_s: f64,
    /// `⟨a′ − a⟩`.
    pub mean_change_a: f64,
    /// `⟨b′ − b⟩`.
    pub mean_change_b: f64,
    /// Present only for unital `Ψ`, where the identity is asserted.
    pub identity_holds: Option<bool>,
    pub tolerance: f64,
    pub channel: ChannelReport,
}

/// Input `ρ_A(α) ⊗ ρ_B(β)`, readout in the product eigenbasis `|a_i b_j⟩` of
/// `αA ⊗ I + I ⊗ βB` before and after `Ψ`.
pub fn heat_exchange_check(
    psi: &KrausChannel,
    a: &HermitianOperator,
    b: &HermitianOperator,
    alpha: f64,
    beta: f64,
    tol: f64,
) -> Result<HeatExchangeReport> {
    check_tol(tol)?;
    let (da, db) = (a.dim(), b.dim());
    if psi.dim_in() != da * db || psi.dim_out() != da * db {
        return Err(Error::Shape(format!(
            "composite channel must act on dimension {}, maps {} -> {}",
            da * db,
            psi.dim_in(),
            psi.dim_out()
        )));
    }
    let report = require_tp(psi)?;
    let (sa, sb) = (a.spectrum()?, b.spectrum()?);
    let ga = gibbs_with_spectrum(a, sa.clone(), alpha)?;
    let gb = gibbs_with_spectrum(b, sb.clone(), beta)?;

    let basis = tensor_product(sa.eigenvectors(), sb.eigenvectors())?;
    let t = transition_in_bases(psi, basis.as_matrix(), basis.as_matrix());
    let (ea, eb) = (sa.eigenvalues(), sb.eigenvalues());

    let mut identity_average = 0.0;
    let mut change_a = 0.0;
    let mut change_b = 0.0;
    for i in 0..da {
        for j in 0..db {
            let p_in = ga.probabilities()[i] * gb.probabilities()[j];
            for k in 0..da {
                for l in 0..db {
                    let p = p_in * t[(k * db + l, i * db + j)];
                    let (dx, dy) = (ea[k] - ea[i], eb[l] - eb[j]);
                    identity_average += p * (-(alpha * dx) - beta * dy).exp();
                    change_a += p * dx;
                    change_b += p * dy;
                }
            }
        }
    }
    let delta_s = alpha * change_a + beta * change_b;
    Ok(HeatExchangeReport {
        alpha,
        beta,
        identity_average,
        delta_s,
        mean_change_a: change_a,
        mean_change_b: change_b,
        identity_holds: report.is_unital.then(|| (identity_average - 1.0).abs() <= tol),
        tolerance: tol,
        channel: report,
    })
}

/// `ΔS` from a heat-exchange report. For a unital `Ψ`, Jensen's inequality
/// on the exchange identity gives `e^{−ΔS} ≤ 1`.
pub fn entropy_production(report: &HeatExchangeReport) -> f64 {
    debug_assert!(
        !report.channel.is_unital || (-report.delta_s).exp() <= 1.0 + INEQUALITY_SLACK,
        "entropy production {} is negative for a unital channel",
        report.delta_s
    );
    report.delta_s
}

/// General composite relation: `Ψ` maps `H_A ⊗ H_B` to a space carrying the
/// observable `C`, input `ρ_A(α) ⊗ ρ_B(β)`. Evaluated as the single-system
/// check with generator `αA ⊗ I + I ⊗ βB` at parameter 1 and `C` at parameter 1.
pub fn composite_jarzynski_check(
    psi: &KrausChannel,
    a: &HermitianOperator,
    b: &HermitianOperator,
    alpha: f64,
    beta: f64,
    c: &HermitianOperator,
    tol: f64,
) -> Result<JarzynskiReport> {
    let generator = a.scaled(alpha).kron_sum(&b.scaled(beta))?;
    jarzynski_check(psi, &generator, c, 1.0, 1.0, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{random_channel, random_channel_seeded, standard_channel, RandomChannel, StandardChannel};
    use crate::linalg::C64;
    use crate::random::{random_hermitian, seeded_rng};

    fn diag(v: &[f64]) -> HermitianOperator {
        HermitianOperator::from_real_diagonal(v).unwrap()
    }

    /// Brute-force `Σ_ij p(a_i) ⟨b_j|Φ(|a_i⟩⟨a_i|)|b_j⟩ e^{αa_i − βb_j}` with
    /// explicit loops over Kraus entries.
    fn oracle_lhs(ch: &KrausChannel, a: &HermitianOperator, b: &HermitianOperator, alpha: f64, beta: f64) -> f64 {
        let (sa, sb) = (a.spectrum().unwrap(), b.spectrum().unwrap());
        let za: f64 = sa.eigenvalues().iter().map(|x| (-alpha * x).exp()).sum();
        let mut total = 0.0;
        for (i, &ai) in sa.eigenvalues().iter().enumerate() {
            let va = sa.vector(i);
            for (j, &bj) in sb.eigenvalues().iter().enumerate() {
                let vb = sb.vector(j);
                let mut p = 0.0;
                for k in ch.kraus_ops() {
                    let mut amp = C64::new(0.0, 0.0);
                    for r in 0..k.rows() {
                        for c in 0..k.cols() {
                            amp += vb[r].conj() * k.get(r, c) * va[c];
                        }
                    }
                    p += amp.norm_sqr();
                }
                total += (-alpha * ai).exp() / za * p * (alpha * ai - beta * bj).exp();
            }
        }
        total
    }

    #[test]
    fn identity_channel_equal_parameters() {
        let a = random_hermitian(3, &mut seeded_rng(1));
        let r = jarzynski_check(&KrausChannel::identity(3), &a, &a, 0.9, 0.9, 1e-9).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn phase_damping_against_oracle() {
        let ch = standard_channel(&StandardChannel::PhaseDamping(0.3)).unwrap();
        let mut rng = seeded_rng(17);
        let a = random_hermitian(2, &mut rng);
        let b = random_hermitian(2, &mut rng);
        let r = jarzynski_check(&ch, &a, &b, 0.9, 0.4, 1e-9).unwrap();
        assert!(r.relative_gap <= 1e-9, "{r:?}");
        let oracle = oracle_lhs(&ch, &a, &b, 0.9, 0.4);
        assert!((r.lhs - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn amplitude_damping_counterexample() {
        // Input probabilities (3/4, 1/4); every transition lands on label 0.
        let ch = standard_channel(&StandardChannel::AmplitudeDamping(1.0)).unwrap();
        let eps = 2.0;
        let beta = 3.0f64.ln() / eps;
        let h = diag(&[0.0, eps]);
        let r = jarzynski_check(&ch, &h, &h, beta, beta, 1e-9).unwrap();
        assert!((r.lhs - 1.5).abs() < 1e-12, "{}", r.lhs);
        assert!((r.rhs - 1.0).abs() < 1e-12);
        assert!(!r.holds);

        let w = work_statistics(&ch, &h, &h, beta).unwrap();
        assert!((w.mean_work + eps / 4.0).abs() < 1e-12);
        assert_eq!(w.delta_f, 0.0);
        assert!(w.second_law_gap < 0.0 && !w.unital);
    }

    #[test]
    fn mub_isometry_satisfies_rectangular_identity() {
        let ch = standard_channel(&StandardChannel::MubIsometry { dim_in: 2, dim_out: 4 }).unwrap();
        let a = diag(&[0.0, 0.7]);
        let b = diag(&[-0.2, 0.1, 0.5, 1.3]);
        let r = jarzynski_check(&ch, &a, &b, 1.2, -0.8, 1e-9).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(!r.channel.is_unital);
    }

    #[test]
    fn tasaki_and_work_form() {
        let ch = random_channel_seeded(RandomChannel::MixtureOfUnitaries { dim: 3, count: 3 }, 4).unwrap();
        let mut rng = seeded_rng(5);
        let (h0, h1) = (random_hermitian(3, &mut rng), random_hermitian(3, &mut rng));
        let r = tasaki_two_temperature(&ch, &h0, &h1, 1.0, 2.0, 1e-9).unwrap();
        assert!(r.holds);
        assert!((r.lhs - oracle_lhs(&ch, &h0, &h1, 1.0, 2.0)).abs() < 1e-12 * r.lhs);

        let beta = 0.8;
        let same = tasaki_two_temperature(&ch, &h0, &h1, beta, beta, 1e-9).unwrap();
        let w = work_statistics(&ch, &h0, &h1, beta).unwrap();
        assert!((same.rhs - w.free_energy_factor).abs() < 1e-12 * same.rhs);
        assert!((w.jarzynski_average - w.free_energy_factor).abs() < 1e-9 * w.free_energy_factor);
        assert!(w.second_law_holds(INEQUALITY_SLACK) && w.jensen_holds(INEQUALITY_SLACK));

        let rect = standard_channel(&StandardChannel::MubIsometry { dim_in: 2, dim_out: 3 }).unwrap();
        assert!(matches!(
            tasaki_two_temperature(&rect, &diag(&[0.0, 1.0]), &diag(&[0.0, 1.0, 2.0]), 1.0, 1.0, 1e-9),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn work_statistics_cases() {
        let h = random_hermitian(3, &mut seeded_rng(6));
        let w = work_statistics(&KrausChannel::identity(3), &h, &h, 1.3).unwrap();
        assert!(w.mean_work.abs() < 1e-15 && w.delta_f.abs() < 1e-15);
        assert!((w.jarzynski_average - 1.0).abs() < 1e-15);

        let u = random_channel_seeded(RandomChannel::HaarUnitary(3), 2).unwrap();
        let c = 0.45;
        let beta = 0.9;
        let w = work_statistics(&u, &h, &h.shifted(c), beta).unwrap();
        assert!((w.delta_f - c).abs() < 1e-9);
        assert!((w.jarzynski_average - (-beta * c).exp()).abs() < 1e-9);
        assert!(matches!(work_statistics(&u, &h, &h, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn jarzynski_errors() {
        let half = KrausChannel::from_operator(crate::linalg::ComplexMatrix::identity(2).scale(C64::new(0.5, 0.0))).unwrap();
        let h = diag(&[0.0, 1.0]);
        assert!(matches!(jarzynski_check(&half, &h, &h, 1.0, 1.0, 1e-9), Err(Error::Contract(_))));
        assert!(matches!(
            jarzynski_check(&KrausChannel::identity(3), &h, &h, 1.0, 1.0, 1e-9),
            Err(Error::Shape(_))
        ));
        assert!(jarzynski_check(&KrausChannel::identity(2), &h, &h, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn crooks_random_unitary() {
        let u = random_channel_seeded(RandomChannel::HaarUnitary(3), 21).unwrap();
        let mut rng = seeded_rng(22);
        let (a, b) = (random_hermitian(3, &mut rng), random_hermitian(3, &mut rng));
        let r = crooks_check(&u, &a, &b, 0.8, 1e-9).unwrap();
        assert!(r.holds && r.max_residual <= 1e-9, "{}", r.max_residual);
        assert_eq!(r.bins.len(), 9);
        assert!(r.unmatched_mass == 0.0);

        // Oracle: enumerate every (i, j) pair for both processes.
        let (sa, sb) = (a.spectrum().unwrap(), b.spectrum().unwrap());
        let k = &u.kraus_ops()[0];
        let za: f64 = sa.eigenvalues().iter().map(|x| (-0.8 * x).exp()).sum();
        let zb: f64 = sb.eigenvalues().iter().map(|x| (-0.8 * x).exp()).sum();
        for (i, &ai) in sa.eigenvalues().iter().enumerate() {
            for (j, &bj) in sb.eigenvalues().iter().enumerate() {
                let amp = (sb.vector(j).adjoint() * k.as_matrix() * sa.vector(i))[(0, 0)].norm_sqr();
                let fwd = (-0.8 * ai).exp() / za * amp;
                let bwd = (-0.8 * bj).exp() / zb * amp;
                let bin = r.bins.iter().find(|x| (x.delta - (bj - ai)).abs() < 1e-8).unwrap();
                assert!((bin.forward - fwd).abs() < 1e-12 && (bin.backward - bwd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crooks_mixed_state_symmetry() {
        let ch = random_channel_seeded(RandomChannel::MixtureOfUnitaries { dim: 2, count: 3 }, 3).unwrap();
        let mut rng = seeded_rng(4);
        let (a, b) = (random_hermitian(2, &mut rng), random_hermitian(2, &mut rng));
        let r = crooks_check(&ch, &a, &b, 0.0, 1e-9).unwrap();
        for bin in &r.bins {
            assert!((bin.forward - bin.backward).abs() <= 1e-10);
        }
    }

    #[test]
    fn crooks_rejects_non_unital() {
        let ch = standard_channel(&StandardChannel::AmplitudeDamping(0.4)).unwrap();
        let h = diag(&[0.0, 1.0]);
        assert!(matches!(crooks_check(&ch, &h, &h, 1.0, 1e-9), Err(Error::Contract(_))));
    }

    #[test]
    fn crooks_work_ratio() {
        let ch = random_channel_seeded(RandomChannel::MixtureOfUnitaries { dim: 2, count: 2 }, 31).unwrap();
        let mut rng = seeded_rng(32);
        let (h0, h1) = (random_hermitian(2, &mut rng), random_hermitian(2, &mut rng));
        let t = crooks_work_form(&ch, &h0, &h1, 1.1, 1e-8).unwrap();
        assert!(t.holds, "{t:?}");
        assert_eq!(t.rows.len() + t.excluded, 4);

        // A commuting unitary keeps labels fixed: one populated bin at w = 0.
        let h = diag(&[0.0, 1.0]);
        let phase = crate::linalg::ComplexMatrix::new(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            vec![C64::new(1.0, 0.0), C64::from_polar(1.0, 0.7)],
        )))
        .unwrap();
        let u = standard_channel(&StandardChannel::Unitary(phase)).unwrap();
        let t = crooks_work_form(&u, &h, &h, 1.0, 1e-12).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].work, 0.0);
        assert!((t.rows[0].ratio - 1.0).abs() < 1e-15 && t.rows[0].expected == 1.0);
        assert_eq!(t.excluded, 2);
    }

    #[test]
    fn heat_exchange_identity_and_swap() {
        let h = diag(&[0.0, 1.0]);
        let id = heat_exchange_check(&KrausChannel::identity(4), &h, &h, 1.5, 0.5, 1e-9).unwrap();
        assert_eq!(id.identity_average, 1.0);
        assert_eq!(id.delta_s, 0.0);
        assert_eq!(entropy_production(&id), 0.0);

        let swap = standard_channel(&StandardChannel::Swap(2)).unwrap();
        let eq = heat_exchange_check(&swap, &h, &h, 1.0, 1.0, 1e-9).unwrap();
        assert!((eq.identity_average - 1.0).abs() < 1e-10 && eq.delta_s.abs() < 1e-10);

        // (α − β)(⟨ε⟩_β − ⟨ε⟩_α) for a two-level system, evaluated at 30 digits.
        let r = heat_exchange_check(&swap, &h, &h, 2.0, 1.0, 1e-9).unwrap();
        assert!((r.identity_average - 1.0).abs() < 1e-9);
        assert!((r.delta_s - 0.149_738_499_347_877_56).abs() < 1e-14, "{}", r.delta_s);
        assert!(entropy_production(&r) > 0.0);
        assert_eq!(r.identity_holds, Some(true));
        assert!((r.mean_change_a + r.mean_change_b).abs() < 1e-15);
    }

    #[test]
    fn heat_exchange_shapes_and_non_unital() {
        let h = diag(&[0.0, 1.0]);
        assert!(matches!(
            heat_exchange_check(&KrausChannel::identity(3), &h, &h, 1.0, 1.0, 1e-9),
            Err(Error::Shape(_))
        ));
        let ad = standard_channel(&StandardChannel::AmplitudeDamping(0.7)).unwrap();
        let psi = KrausChannel::tensor(&ad, &KrausChannel::identity(2)).unwrap();
        let r = heat_exchange_check(&psi, &h, &h, 1.0, 1.0, 1e-9).unwrap();
        assert_eq!(r.identity_holds, None);
    }

    #[test]
    fn composite_form_matches_product_input() {
        let mut rng = seeded_rng(40);
        let psi = random_channel(RandomChannel::MixtureOfUnitaries { dim: 4, count: 3 }, &mut rng).unwrap();
        let (a, b) = (random_hermitian(2, &mut rng), random_hermitian(2, &mut rng));
        let generator = a.scaled(0.7).kron_sum(&b.scaled(1.4)).unwrap();
        let r = composite_jarzynski_check(&psi, &a, &b, 0.7, 1.4, &generator, 1e-9).unwrap();
        assert!(r.holds && (r.lhs - 1.0).abs() < 1e-9);
        let h = heat_exchange_check(&psi, &a, &b, 0.7, 1.4, 1e-9).unwrap();
        assert!((h.identity_average - r.lhs).abs() < 1e-9);

        let c = random_hermitian(4, &mut rng);
        let r = composite_jarzynski_check(&psi, &a, &b, 0.7, 1.4, &c, 1e-9).unwrap();
        assert!(r.holds);
    }
}
