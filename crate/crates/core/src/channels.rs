//! Channels in operator-sum form.
//!
//! A [`KrausChannel`] is completely positive by construction. Trace
//! preservation and unitality are properties checked by [`KrausChannel::validate`].
//! Unitality uses the generalized condition `Φ(I_A) = (d_A/d_B) I_B`, which
//! covers rectangular channels.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    identity_defect, tensor_product, ComplexMatrix, DensityMatrix, C64, DEFAULT_MAX_COMPOSITE_DIM,
};
use crate::random::{haar_unitary, seeded_rng, simplex_weights};

/// Default tolerance for trace-preservation and unitality checks.
pub const CHANNEL_TOL: f64 = 1e-9;

/// Loader tolerance: files whose trace defect exceeds this are rejected.
pub const INGEST_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    dim_in: usize,
    dim_out: usize,
    kraus: Vec<ComplexMatrix>,
}

/// Defects of `Σ K†K` from `I_A` and of `Σ KK†` from `(d_A/d_B) I_B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub tp_defect: f64,
    pub unital_defect: f64,
    pub is_tp: bool,
    pub is_unital: bool,
    pub tolerance: f64,
}

impl ChannelReport {
    pub fn is_bistochastic(&self) -> bool {
        self.is_tp && self.is_unital
    }
}

impl KrausChannel {
    pub fn new(dim_in: usize, dim_out: usize, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::Structure("channel dimensions must be positive".into()));
        }
        if kraus.is_empty() {
            return Err(Error::Structure("channel needs at least one Kraus operator".into()));
        }
        for (k, op) in kraus.iter().enumerate() {
            if op.rows() != dim_out || op.cols() != dim_in {
                return Err(Error::Structure(format!(
                    "Kraus operator {k} is {}x{}, expected {dim_out}x{dim_in}",
                    op.rows(),
                    op.cols()
                )));
            }
        }
        Ok(Self { dim_in, dim_out, kraus })
    }

    /// Channel with the single Kraus operator `op` (a unitary or isometry).
    pub fn from_operator(op: ComplexMatrix) -> Result<Self> {
        Self::new(op.cols(), op.rows(), vec![op])
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim_in: dim, dim_out: dim, kraus: vec![ComplexMatrix::identity(dim)] }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_square(&self) -> bool {
        self.dim_in == self.dim_out
    }

    pub fn kraus_ops(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn validate(&self, tol: f64) -> Result<ChannelReport> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
        }
        let mut tp = DMatrix::<C64>::zeros(self.dim_in, self.dim_in);
        let mut un = DMatrix::<C64>::zeros(self.dim_out, self.dim_out);
        for k in &self.kraus {
            let m = k.as_matrix();
            tp += m.adjoint() * m;
            un += m * m.adjoint();
        }
        let tp_defect = identity_defect(&tp, 1.0);
        let unital_defect = identity_defect(&un, self.dim_in as f64 / self.dim_out as f64);
        Ok(ChannelReport {
            tp_defect,
            unital_defect,
            is_tp: tp_defect <= tol,
            is_unital: unital_defect <= tol,
            tolerance: tol,
        })
    }

    /// Validation at [`CHANNEL_TOL`].
    pub fn report(&self) -> ChannelReport {
        self.validate(CHANNEL_TOL).expect("default tolerance is positive")
    }

    /// The Hilbert–Schmidt dual, with Kraus operators `K†`.
    pub fn adjoint(&self) -> Self {
        Self {
            dim_in: self.dim_out,
            dim_out: self.dim_in,
            kraus: self.kraus.iter().map(ComplexMatrix::adjoint).collect(),
        }
    }

    /// `Σ K X K†` for an arbitrary operator on the input space.
    pub fn apply_operator(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        if x.rows() != self.dim_in || x.cols() != self.dim_in {
            return Err(Error::Shape(format!(
                "channel input is {0}x{0}, operator is {1}x{2}",
                self.dim_in,
                x.rows(),
                x.cols()
            )));
        }
        Ok(ComplexMatrix::from_matrix_unchecked(self.apply_matrix(x.as_matrix())))
    }

    pub(crate) fn apply_matrix(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::<C64>::zeros(self.dim_out, self.dim_out);
        for k in &self.kraus {
            let m = k.as_matrix();
            out += m * x * m.adjoint();
        }
        out
    }

    /// Maps a state through the channel; the channel must be trace preserving.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let report = self.report();
        if !report.is_tp {
            return Err(Error::Contract(format!(
                "channel is not trace preserving (defect {:e})",
                report.tp_defect
            )));
        }
        if rho.dim() != self.dim_in {
            return Err(Error::Shape(format!(
                "state has dimension {}, channel expects {}",
                rho.dim(),
                self.dim_in
            )));
        }
        DensityMatrix::new(self.apply_operator(rho.matrix())?)
    }

    /// `outer ∘ inner`, with Kraus operators `L_ν K_μ`.
    pub fn compose(outer: &KrausChannel, inner: &KrausChannel) -> Result<Self> {
        if inner.dim_out != outer.dim_in {
            return Err(Error::Shape(format!(
                "inner channel outputs dimension {}, outer expects {}",
                inner.dim_out, outer.dim_in
            )));
        }
        let kraus = outer
            .kraus
            .iter()
            .flat_map(|l| inner.kraus.iter().map(move |k| l * k))
            .collect();
        Ok(Self { dim_in: inner.dim_in, dim_out: outer.dim_out, kraus })
    }

    /// Parallel action on the tensor-product space, Kraus operators `K_μ ⊗ L_ν`.
    pub fn tensor(first: &KrausChannel, second: &KrausChannel) -> Result<Self> {
        let dim_in = first.dim_in * second.dim_in;
        let dim_out = first.dim_out * second.dim_out;
        let dim = dim_in.max(dim_out);
        if dim > DEFAULT_MAX_COMPOSITE_DIM {
            return Err(Error::Size { dim, max: DEFAULT_MAX_COMPOSITE_DIM });
        }
        let mut kraus = Vec::with_capacity(first.kraus.len() * second.kraus.len());
        for k in &first.kraus {
            for l in &second.kraus {
                kraus.push(tensor_product(k, l)?);
            }
        }
        Ok(Self { dim_in, dim_out, kraus })
    }

    pub fn to_file(&self) -> ChannelFile {
        ChannelFile {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            kraus: self.kraus.iter().map(ComplexMatrix::to_rows).collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("channel file serializes")
    }

    pub fn from_json_str(json: &str) -> Result<(Self, ChannelReport)> {
        let file: ChannelFile = serde_json::from_str(json)?;
        file.into_channel()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ChannelReport)> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// On-disk channel: `{ "dim_in", "dim_out", "kraus": [operator, ...] }`, each
/// operator a list of rows of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub dim_in: usize,
    pub dim_out: usize,
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

impl ChannelFile {
    /// Builds and re-validates the channel. Files with a trace defect above
    /// [`INGEST_TOL`] are rejected; the returned report uses [`CHANNEL_TOL`].
    pub fn into_channel(self) -> Result<(KrausChannel, ChannelReport)> {
        let ops = self
            .kraus
            .into_iter()
            .enumerate()
            .map(|(k, rows)| {
                ComplexMatrix::try_from(rows)
                    .map_err(|e| Error::Structure(format!("Kraus operator {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let channel = KrausChannel::new(self.dim_in, self.dim_out, ops)?;
        let report = channel.report();
        if report.tp_defect > INGEST_TOL {
            return Err(Error::Contract(format!(
                "channel file is not trace preserving (defect {:e} > {INGEST_TOL:e})",
                report.tp_defect
            )));
        }
        Ok((channel, report))
    }
}

/// Named channels with known TP and unitality classification.
#[derive(Clone, Debug, PartialEq)]
pub enum StandardChannel {
    Identity(usize),
    Unitary(ComplexMatrix),
    /// Qubit `ρ ↦ p I/2 + (1-p) ρ`.
    Depolarizing(f64),
    PhaseDamping(f64),
    AmplitudeDamping(f64),
    /// Exchange of the two factors of `C^d ⊗ C^d`.
    Swap(usize),
    /// First `dim_in` columns of the `dim_out`-point Fourier matrix: an isometry
    /// whose image of the standard basis is unbiased with the standard basis.
    MubIsometry { dim_in: usize, dim_out: usize },
}

fn unit_interval(name: &str, x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

fn real(rows: &[&[f64]]) -> ComplexMatrix {
    ComplexMatrix::from_real_rows(rows).expect("literal matrix")
}

pub fn standard_channel(kind: &StandardChannel) -> Result<KrausChannel> {
    match kind {
        StandardChannel::Identity(d) => {
            if *d == 0 {
                return Err(Error::Domain("dimension must be positive".into()));
            }
            Ok(KrausChannel::identity(*d))
        }
        StandardChannel::Unitary(u) => {
            if !u.is_square() {
                return Err(Error::Domain("unitary must be square".into()));
            }
            let defect = u.adjoint().matmul(u)?.max_abs_diff(&ComplexMatrix::identity(u.rows()));
            if defect > CHANNEL_TOL {
                return Err(Error::Domain(format!("matrix is not unitary (defect {defect:e})")));
            }
            KrausChannel::from_operator(u.clone())
        }
        StandardChannel::Depolarizing(p) => {
            let p = unit_interval("depolarizing p", *p)?;
            let i = C64::new(0.0, 1.0);
            let y = ComplexMatrix::from_rows(&[vec![C64::new(0.0, 0.0), -i], vec![i, C64::new(0.0, 0.0)]])?;
            let s0 = C64::new((1.0 - 0.75 * p).sqrt(), 0.0);
            let s = C64::new((p / 4.0).sqrt(), 0.0);
            KrausChannel::new(
                2,
                2,
                vec![
                    ComplexMatrix::identity(2).scale(s0),
                    real(&[&[0.0, 1.0], &[1.0, 0.0]]).scale(s),
                    y.scale(s),
                    real(&[&[1.0, 0.0], &[0.0, -1.0]]).scale(s),
                ],
            )
        }
        StandardChannel::PhaseDamping(lambda) => {
            let l = unit_interval("phase damping lambda", *lambda)?;
            KrausChannel::new(
                2,
                2,
                vec![real(&[&[1.0, 0.0], &[0.0, (1.0 - l).sqrt()]]), real(&[&[0.0, 0.0], &[0.0, l.sqrt()]])],
            )
        }
        StandardChannel::AmplitudeDamping(gamma) => {
            let g = unit_interval("amplitude damping gamma", *gamma)?;
            KrausChannel::new(
                2,
                2,
                vec![real(&[&[1.0, 0.0], &[0.0, (1.0 - g).sqrt()]]), real(&[&[0.0, g.sqrt()], &[0.0, 0.0]])],
            )
        }
        StandardChannel::Swap(d) => {
            if *d == 0 {
                return Err(Error::Domain("dimension must be positive".into()));
            }
            let n = d * d;
            if n > DEFAULT_MAX_COMPOSITE_DIM {
                return Err(Error::Size { dim: n, max: DEFAULT_MAX_COMPOSITE_DIM });
            }
            let mut m = DMatrix::<C64>::zeros(n, n);
            for a in 0..*d {
                for b in 0..*d {
                    m[(b * d + a, a * d + b)] = C64::new(1.0, 0.0);
                }
            }
            KrausChannel::from_operator(ComplexMatrix::from_matrix_unchecked(m))
        }
        StandardChannel::MubIsometry { dim_in, dim_out } => {
            if *dim_in == 0 || dim_in > dim_out {
                return Err(Error::Domain(format!(
                    "MUB isometry needs 0 < dim_in <= dim_out, got {dim_in} and {dim_out}"
                )));
            }
            let n = *dim_out as f64;
            let v = DMatrix::from_fn(*dim_out, *dim_in, |j, k| {
                C64::from_polar(1.0 / n.sqrt(), 2.0 * std::f64::consts::PI * (j * k) as f64 / n)
            });
            KrausChannel::from_operator(ComplexMatrix::from_matrix_unchecked(v))
        }
    }
}

/// Families of random test channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomChannel {
    /// One Haar unitary.
    HaarUnitary(usize),
    /// `Σ_k w_k U_k · U_k†` with Haar `U_k` and uniform simplex weights.
    MixtureOfUnitaries { dim: usize, count: usize },
    /// Environment trace-out of a Haar isometry `C^{d_in} → C^{d_out} ⊗ C^{env}`.
    Stinespring { dim_in: usize, dim_out: usize, env: usize },
}

pub fn random_channel<R: Rng + ?Sized>(kind: RandomChannel, rng: &mut R) -> Result<KrausChannel> {
    match kind {
        RandomChannel::HaarUnitary(d) => {
            if d == 0 {
                return Err(Error::Domain("dimension must be positive".into()));
            }
            KrausChannel::from_operator(haar_unitary(d, rng))
        }
        RandomChannel::MixtureOfUnitaries { dim, count } => {
            if dim == 0 || count == 0 {
                return Err(Error::Domain("dimension and mixture size must be positive".into()));
            }
            let weights = simplex_weights(count, rng);
            let kraus = weights
                .iter()
                .map(|&w| haar_unitary(dim, rng).scale(C64::new(w.sqrt(), 0.0)))
                .collect();
            KrausChannel::new(dim, dim, kraus)
        }
        RandomChannel::Stinespring { dim_in, dim_out, env } => {
            if dim_in == 0 || dim_out == 0 || env == 0 {
                return Err(Error::Domain("dimensions must be positive".into()));
            }
            let total = dim_out * env;
            if total < dim_in {
                return Err(Error::Domain(format!(
                    "no isometry from dimension {dim_in} into {dim_out}x{env}"
                )));
            }
            let u = haar_unitary(total, rng);
            let v = u.as_matrix();
            let kraus = (0..env)
                .map(|k| {
                    ComplexMatrix::from_matrix_unchecked(DMatrix::from_fn(dim_out, dim_in, |r, c| v[(r * env + k, c)]))
                })
                .collect();
            KrausChannel::new(dim_in, dim_out, kraus)
        }
    }
}

pub fn random_channel_seeded(kind: RandomChannel, seed: u64) -> Result<KrausChannel> {
    random_channel(kind, &mut seeded_rng(seed))
}
