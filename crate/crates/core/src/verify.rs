//! Self-contained verification suites: analytic spectrum, projection bound,
//! finite-difference gradients and the mixing-tensor loop oracle.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::make_heat_dataset;
use crate::field::{DomainId, Field};
use crate::mesh::{cotangent_stiffness, lumped_mass, unit_square_grid};
use crate::operator::{build_model, Activation, LLayerParams, ModelSpec};
use crate::spectral::{lbo_basis_for_mesh, projection_bound_check, BasisKind, SpectralBasis, BOUND_SLACK};
use crate::training::gradcheck;
use crate::{NormError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Spectrum,
    Bound,
    Gradcheck,
    TensorOracle,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["spectrum", "bound", "gradcheck", "tensor-oracle", "all"];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Spectrum => "spectrum",
            Suite::Bound => "bound",
            Suite::Gradcheck => "gradcheck",
            Suite::TensorOracle => "tensor-oracle",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = NormError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrum" => Ok(Suite::Spectrum),
            "bound" => Ok(Suite::Bound),
            "gradcheck" => Ok(Suite::Gradcheck),
            "tensor-oracle" => Ok(Suite::TensorOracle),
            "all" => Ok(Suite::All),
            _ => Err(NormError::InvalidConfig(format!(
                "unknown suite {s:?}, expected one of {}",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

/// One measured quantity compared with its tolerance (`value <= tolerance`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check { suite: suite.name().into(), name: name.into(), value, tolerance, pass: value <= tolerance }
    }

    /// `tolerance - value`; negative when the check fails.
    pub fn margin(&self) -> f64 {
        self.tolerance - self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().min_by(|a, b| (a.margin() / a.tolerance).total_cmp(&(b.margin() / b.tolerance)))
    }
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match suite {
        Suite::Spectrum => spectrum_checks(64)?,
        Suite::Bound => bound_checks(32, 20, 0)?,
        Suite::Gradcheck => gradcheck_checks(0)?,
        Suite::TensorOracle => tensor_oracle_checks(50, 0)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Spectrum, Suite::Bound, Suite::Gradcheck, Suite::TensorOracle] {
                all.extend(run_suite(s)?.checks);
            }
            all
        }
    };
    Ok(SuiteReport { checks, seconds: start.elapsed().as_secs_f64() })
}

/// The `count` smallest nonzero Neumann eigenvalues `π²(m² + n²)` of the
/// unit square, with multiplicity.
pub fn neumann_square_eigenvalues(count: usize) -> Vec<f64> {
    let top = (count as f64).sqrt().ceil() as usize + 2;
    let mut v: Vec<f64> = (0..=top)
        .flat_map(|m| (0..=top).map(move |n| (m * m + n * n) as f64))
        .filter(|&k| k > 0.0)
        .collect();
    v.sort_by(f64::total_cmp);
    v.truncate(count);
    v.into_iter().map(|k| PI * PI * k).collect()
}

/// Relative errors of the first ten nonzero LBO eigenvalues of the
/// `n x n` unit-square grid against the analytic Neumann spectrum (2%).
pub fn spectrum_checks(n: usize) -> Result<Vec<Check>> {
    let mesh = unit_square_grid(n)?;
    let basis = lbo_basis_for_mesh(&mesh, 11)?;
    let exact = neumann_square_eigenvalues(10);
    Ok(basis.values()[1..]
        .iter()
        .zip(&exact)
        .enumerate()
        .map(|(i, (got, want))| {
            Check::new(Suite::Spectrum, format!("lambda_{} (n={n})", i + 2), (got - want).abs() / want, 0.02)
        })
        .collect())
}

/// Random combination of the analytic Neumann modes `cos(mπx) cos(nπy)`
/// with `m + n <= band`.
pub fn band_limited_field(mesh: &crate::Mesh, band: usize, rng: &mut impl Rng) -> Field {
    let mut terms = Vec::new();
    for m in 0..=band {
        for n in 0..=band - m {
            let c: f64 = StandardNormal.sample(rng);
            terms.push((m as f64, n as f64, c / (1.0 + (m * m + n * n) as f64)));
        }
    }
    let values = mesh
        .vertices()
        .iter()
        .map(|p| terms.iter().map(|&(m, n, c)| c * (m * PI * p[0]).cos() * (n * PI * p[1]).cos()).sum())
        .collect();
    Field::scalar(values, mesh.domain_id())
}

/// Ratios `residual / (‖∇f‖² / λ_{n+1})` at `n ∈ {8, 32, 64}` for seeded
/// band-limited fields (pass at `1 + slack`), and `|ratio - 1|` on
/// `f = φ_{n+1}` (pass at 1e-6).
pub fn bound_checks(grid: usize, fields: usize, seed: u64) -> Result<Vec<Check>> {
    let mesh = unit_square_grid(grid)?;
    let s = cotangent_stiffness(&mesh)?;
    let m = lumped_mass(&mesh)?;
    let basis = lbo_basis_for_mesh(&mesh, 65)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Field> = (0..fields).map(|_| band_limited_field(&mesh, 10, &mut rng)).collect();
    let mut checks = Vec::new();
    for n in [8, 32, 64] {
        let mut worst: f64 = 0.0;
        for f in &samples {
            worst = worst.max(projection_bound_check(&basis, &s, &m, f, n)?.ratio());
        }
        checks.push(Check::new(Suite::Bound, format!("max ratio over {fields} fields, n={n}"), worst, 1.0 + BOUND_SLACK));
        let phi = Field::scalar(basis.mode(n).to_vec(), mesh.domain_id());
        let tight = projection_bound_check(&basis, &s, &m, &phi, n)?.ratio();
        checks.push(Check::new(Suite::Bound, format!("|ratio - 1| on phi_{}, n={n}", n + 1), (tight - 1.0).abs(), 1e-6));
    }
    Ok(checks)
}

/// Finite-difference gradient checks: a two-layer GELU model with
/// `d_m = 8`, `d_v = 4` (1e-5) and its all-linear counterpart (1e-9), each on
/// 30 sampled parameters with step 1e-6.
pub fn gradcheck_checks(seed: u64) -> Result<Vec<Check>> {
    let mesh = unit_square_grid(8)?;
    let data = make_heat_dataset(&mesh, 2, 0.01, seed)?;
    let basis = Arc::new(lbo_basis_for_mesh(&mesh, 8)?);
    let mut checks = Vec::new();
    for (label, activation, q_hidden, tol) in [
        ("GELU model", Activation::Gelu, Some(128), 1e-5),
        ("linear model", Activation::Identity, None, 1e-9),
    ] {
        let mut spec = ModelSpec::new(1, 1);
        spec.width = 4;
        spec.layers = 2;
        spec.activation = activation;
        spec.q_hidden = q_hidden;
        spec.seed = seed;
        let model = build_model(&spec, basis.clone(), basis.clone())?;
        let rep = gradcheck(&model, &data.inputs[0], &data.outputs[0], 30, 1e-6, seed)?;
        checks.push(Check::new(Suite::Gradcheck, format!("{label}, 30 parameters"), rep.max_rel_error, tol));
    }
    Ok(checks)
}

/// `Φ_out · mix(Φ_in† V)` evaluated with explicit index loops.
pub fn spectral_block_loops(layer: &LLayerParams, v: &Field) -> Vec<f64> {
    let (bi, bo) = (&layer.basis_in, &layer.basis_out);
    let (d_m, w) = (bi.d_m(), layer.width());
    let pinv = bi.pinv();
    let modes = bo.modes();
    let mut coeff = vec![0.0; d_m * w];
    for k in 0..d_m {
        for j in 0..w {
            for i in 0..bi.n_x() {
                coeff[k * w + j] += pinv[(k, i)] * v.get(i, j);
            }
        }
    }
    let mut mixed = vec![0.0; d_m * w];
    for k in 0..d_m {
        for l in 0..w {
            for j in 0..w {
                mixed[k * w + l] += layer.r[(k * w + l) * w + j] * coeff[k * w + j];
            }
        }
    }
    let mut out = vec![0.0; bo.n_x() * w];
    for i in 0..bo.n_x() {
        for l in 0..w {
            for k in 0..d_m {
                out[i * w + l] += modes[(i, k)] * mixed[k * w + l];
            }
        }
    }
    out
}

fn random_basis(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Arc<SpectralBasis>> {
    let tag: u64 = rng.random();
    let modes = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let id = DomainId::hash_bytes(&[b"oracle", &tag.to_le_bytes()]);
    Ok(Arc::new(SpectralBasis::from_modes(BasisKind::Lbo, modes.as_ref(), (0..d).map(|k| k as f64).collect(), id)?))
}

/// Largest deviation of the batched spectral block from the loop reference
/// over `cases` random shapes with `d_m, d_v <= 5`, `n_x <= 8` (1e-13).
pub fn tensor_oracle_checks(cases: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d_m = rng.random_range(1..=5);
        let w = rng.random_range(1..=5);
        let n_in = rng.random_range(d_m..=8);
        let n_out = rng.random_range(d_m..=8);
        let bi = random_basis(n_in, d_m, &mut rng)?;
        let bo = if rng.random_bool(0.5) { random_basis(n_out, d_m, &mut rng)? } else { bi.clone() };
        let mut layer = LLayerParams::zeros(bi.clone(), bo, w)?;
        layer.r.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        let v = Field::from_fn(bi.n_x(), w, bi.source_id(), |_, _| rng.random_range(-1.0..1.0));
        let got = layer.spectral_block(&v)?;
        for (a, b) in got.values().iter().zip(spectral_block_loops(&layer, &v)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(vec![Check::new(Suite::TensorOracle, format!("max deviation over {cases} shapes"), worst, 1e-13)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("spectra".parse::<Suite>().is_err());
    }

    #[test]
    fn neumann_list_starts_with_degenerate_pair() {
        let v = neumann_square_eigenvalues(5);
        let k: Vec<f64> = v.iter().map(|x| (x / (PI * PI)).round()).collect();
        assert_eq!(k, vec![1.0, 1.0, 2.0, 4.0, 4.0]);
    }

    #[test]
    fn small_suites_pass() {
        for c in tensor_oracle_checks(50, 3).unwrap().into_iter().chain(gradcheck_checks(1).unwrap()) {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn coarse_bound_suite_passes() {
        for c in bound_checks(16, 5, 2).unwrap() {
            assert!(c.pass, "{c:?}");
        }
    }
}
