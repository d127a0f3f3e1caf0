//! Vector-field algebra on spectral fields: Leray projection, divergence,
//! the projected transport term and the initial-data constructors.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::SpectralField;
use crate::grid::GridSpec;
use crate::rng;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Frequency-wise `I − ξξᵀ/|ξ|²`. The mean mode stays zero.
pub fn leray_project(u: &SpectralField) -> SpectralField {
    let grid = *u.grid();
    let d = grid.dimension;
    assert_eq!(u.num_components(), d, "Leray projection needs a d-vector field");
    let t = grid.tables();
    let mut comps = u.components().to_vec();
    for idx in 0..grid.len() {
        let x2 = t.xi2[idx];
        if x2 == 0.0 {
            for c in comps.iter_mut() {
                c[idx] = Complex64::new(0.0, 0.0);
            }
            continue;
        }
        let xi = &t.xi[idx];
        let mut dot = Complex64::new(0.0, 0.0);
        for a in 0..d {
            dot += comps[a][idx] * xi[a];
        }
        let dot = dot / x2;
        for a in 0..d {
            comps[a][idx] -= dot * xi[a];
        }
    }
    SpectralField::from_parts_unchecked(grid, comps)
}

/// `∇·u` as a one-component field.
pub fn divergence(u: &SpectralField) -> SpectralField {
    let grid = *u.grid();
    let t = grid.tables();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, c) in u.components().iter().enumerate().take(grid.dimension) {
        for (idx, (o, v)) in out.iter_mut().zip(c).enumerate() {
            *o += I * t.xi[idx][a] * v;
        }
    }
    SpectralField::from_parts_unchecked(grid, vec![out])
}

/// `∇ψ` of a one-component field.
pub fn gradient(psi: &SpectralField) -> SpectralField {
    let grid = *psi.grid();
    let t = grid.tables();
    let comps = (0..grid.dimension)
        .map(|a| {
            psi.component(0)
                .iter()
                .enumerate()
                .map(|(idx, v)| I * t.xi[idx][a] * v)
                .collect()
        })
        .collect();
    SpectralField::from_parts_unchecked(grid, comps)
}

/// Physical samples of `u` after 2/3 truncation.
pub(crate) fn dealiased_physical(u: &SpectralField) -> Vec<Vec<f64>> {
    u.clone().dealiased().to_physical()
}

/// `P div(u ⊗ v)` from dealiased physical samples; component `b` is
/// `Σ_a ∂_a (u_a v_b)`.
pub(crate) fn nonlinear_from_physical(
    grid: GridSpec,
    u: &[Vec<f64>],
    v: &[Vec<f64>],
    symmetric: bool,
) -> SpectralField {
    let d = grid.dimension;
    let t = grid.tables();
    let len = grid.len();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); len]; d];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for a in 0..d {
        for b in 0..d {
            if symmetric && b < a {
                continue;
            }
            for (i, x) in buf.iter_mut().enumerate() {
                *x = Complex64::new(u[a][i] * v[b][i], 0.0);
            }
            fft::forward(&grid, &mut buf);
            for (idx, x) in buf.iter().enumerate() {
                if !t.dealias[idx] {
                    continue;
                }
                // ∂_a (u_a v_b) feeds component b.
                out[b][idx] += I * t.xi[idx][a] * x;
                if symmetric && a != b {
                    // u_b u_a = u_a u_b, differentiated along b, feeds component a.
                    out[a][idx] += I * t.xi[idx][b] * x;
                }
            }
        }
    }
    let mut f = SpectralField::from_parts_unchecked(grid, out);
    f.clear_unrepresented_modes();
    leray_project(&f)
}

/// `P div(u ⊗ v)` with 2/3-rule dealiasing of the inputs and the product.
pub fn nonlinear_term(u: &SpectralField, v: &SpectralField) -> SpectralField {
    let grid = *u.grid();
    let symmetric = std::ptr::eq(u, v) || u == v;
    let up = dealiased_physical(u);
    if symmetric {
        nonlinear_from_physical(grid, &up, &up, true)
    } else {
        let vp = dealiased_physical(v);
        nonlinear_from_physical(grid, &up, &vp, false)
    }
}

/// Taylor-Green vortex `(sin kx cos ky, −cos kx sin ky)` (times `cos kz`, zero
/// third component, in 3D).
pub fn taylor_green(grid: GridSpec, amplitude: f64, k: f64) -> SpectralField {
    let len = grid.len();
    let mut comps = vec![vec![0.0; len]; grid.dimension];
    for idx in 0..len {
        let m = grid.unravel(idx);
        let x = grid.coordinate(m[0]) * k;
        let y = grid.coordinate(m[1]) * k;
        let z = if grid.dimension == 3 {
            (grid.coordinate(m[2]) * k).cos()
        } else {
            1.0
        };
        comps[0][idx] = amplitude * x.sin() * y.cos() * z;
        comps[1][idx] = -amplitude * x.cos() * y.sin() * z;
    }
    SpectralField::from_physical(grid, &comps).expect("sizes match grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDataKind {
    GaussianDivfree,
    Oscillating,
    File,
}

/// Recipe for `u₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataSpec {
    pub kind: InitialDataKind,
    /// RMS velocity for `gaussian_divfree`; prefactor multiplier for `oscillating`.
    pub amplitude: f64,
    /// Oscillation scale `ε ∈ (0, 1)`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Integrability exponent setting the `ε^{3/p − 1}` prefactor.
    #[serde(default = "default_p_exponent")]
    pub p_exponent: f64,
    /// Envelope width (oscillating) or correlation length (gaussian_divfree).
    #[serde(default = "default_profile_width")]
    pub profile_width: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sidecar JSON of a stored field, for `kind = file`.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

fn default_epsilon() -> f64 {
    0.25
}
fn default_p_exponent() -> f64 {
    6.0
}
fn default_profile_width() -> f64 {
    0.5
}

impl InitialDataSpec {
    pub fn gaussian(amplitude: f64, profile_width: f64, seed: u64) -> Self {
        InitialDataSpec {
            kind: InitialDataKind::GaussianDivfree,
            amplitude,
            epsilon: default_epsilon(),
            p_exponent: default_p_exponent(),
            profile_width,
            seed,
            file: None,
        }
    }

    pub fn oscillating(amplitude: f64, epsilon: f64, p_exponent: f64, profile_width: f64) -> Self {
        InitialDataSpec {
            kind: InitialDataKind::Oscillating,
            amplitude,
            epsilon,
            p_exponent,
            profile_width,
            seed: 0,
            file: None,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !self.amplitude.is_finite() || !(self.profile_width > 0.0) {
            return Err(Error::InvalidParameter(
                "amplitude must be finite and profile_width positive".into(),
            ));
        }
        if self.kind == InitialDataKind::Oscillating && grid.dimension != 3 {
            return Err(Error::InvalidParameter(
                "oscillating data is defined in three dimensions".into(),
            ));
        }
        if self.kind == InitialDataKind::File && self.file.is_none() {
            return Err(Error::InvalidParameter("kind = file needs a `file` path".into()));
        }
        Ok(())
    }
}

/// Metadata recorded alongside generated initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDataMeta {
    pub kind: InitialDataKind,
    /// Integer grid frequency that `1/ε` was snapped to (oscillating only).
    pub snapped_frequency: Option<i64>,
    /// The `ε` actually realized after snapping.
    pub effective_epsilon: Option<f64>,
    /// The amplitude prefactor `amplitude · ε^{3/p − 1}` (oscillating only).
    pub prefactor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub field: SpectralField,
    pub meta: InitialDataMeta,
}

/// Builds a real, divergence-free `u₀` on `grid`.
pub fn make_initial_data(spec: &InitialDataSpec, grid: &GridSpec) -> Result<InitialData> {
    grid.validate()?;
    spec.validate(grid)?;
    match spec.kind {
        InitialDataKind::GaussianDivfree => {
            let mut rng = rng::stream(spec.seed, &[rng::tag::INITIAL_DATA]);
            let field = gaussian_divfree(*grid, spec.amplitude, spec.profile_width, &mut rng);
            Ok(InitialData {
                field,
                meta: InitialDataMeta {
                    kind: spec.kind,
                    snapped_frequency: None,
                    effective_epsilon: None,
                    prefactor: None,
                },
            })
        }
        InitialDataKind::Oscillating => oscillating(spec, grid),
        InitialDataKind::File => {
            let path = spec.file.as_ref().expect("validated");
            let field = read_field(path)?;
            if !field.grid().same_as(grid) {
                return Err(Error::GridMismatch(format!(
                    "{} was stored on a different grid",
                    path.display()
                )));
            }
            Ok(InitialData {
                field,
                meta: InitialDataMeta {
                    kind: spec.kind,
                    snapped_frequency: None,
                    effective_epsilon: None,
                    prefactor: None,
                },
            })
        }
    }
}

/// Random divergence-free field with spectrum `exp(−ℓ²|ξ|²/2)` and RMS
/// velocity `amplitude`.
pub fn gaussian_divfree(
    grid: GridSpec,
    amplitude: f64,
    correlation_length: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> SpectralField {
    let t = grid.tables();
    let mut u = rng::white_field(grid, grid.dimension, rng);
    let l2 = correlation_length * correlation_length;
    u.apply_multiplier(|idx| (-0.5 * l2 * t.xi2[idx]).exp());
    let mut u = leray_project(&u).dealiased();
    let rms = u.l2_norm() / grid.volume().sqrt();
    if rms > 0.0 {
        u.scale(amplitude / rms);
    }
    u
}

fn periodized_gaussian(grid: &GridSpec, width: f64) -> Vec<f64> {
    let l = grid.box_length;
    let centre = 0.5 * l;
    let images: i32 = if width > 0.25 * l { 3 } else { 1 };
    let axis = |x: f64| -> f64 {
        (-images..=images)
            .map(|m| {
                let dx = x - centre - m as f64 * l;
                (-dx * dx / (2.0 * width * width)).exp()
            })
            .sum()
    };
    let n = grid.points_per_axis;
    let profile: Vec<f64> = (0..n).map(|i| axis(grid.coordinate(i))).collect();
    (0..grid.len())
        .map(|idx| {
            let m = grid.unravel(idx);
            (0..grid.dimension).map(|a| profile[m[a]]).product()
        })
        .collect()
}

fn oscillating(spec: &InitialDataSpec, grid: &GridSpec) -> Result<InitialData> {
    let base = grid.base_frequency();
    let snapped = ((1.0 / spec.epsilon) / base).round().max(1.0) as i64;
    let limit = grid.dealias_limit();
    if snapped > limit {
        return Err(Error::OscillationUnresolvable {
            frequency: snapped,
            limit,
        });
    }
    let frequency = snapped as f64 * base;
    let eps = 1.0 / frequency;
    let prefactor = spec.amplitude * eps.powf(3.0 / spec.p_exponent - 1.0);

    let phi = SpectralField::from_physical(*grid, &[periodized_gaussian(grid, spec.profile_width)])?;
    let grad = gradient(&phi).to_physical();
    let len = grid.len();
    let mut comps = vec![vec![0.0; len]; 3];
    for idx in 0..len {
        let m = grid.unravel(idx);
        let s = prefactor * (frequency * grid.coordinate(m[0])).sin();
        comps[1][idx] = -s * grad[2][idx];
        comps[2][idx] = s * grad[1][idx];
    }
    let field = SpectralField::from_physical(*grid, &comps)?.dealiased();
    Ok(InitialData {
        field,
        meta: InitialDataMeta {
            kind: InitialDataKind::Oscillating,
            snapped_frequency: Some(snapped),
            effective_epsilon: Some(eps),
            prefactor: Some(prefactor),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Complex64,
    Complex128,
}

/// JSON sidecar describing a raw coefficient dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub format: String,
    pub version: u32,
    pub dimension: usize,
    pub points_per_axis: usize,
    pub box_length: f64,
    pub components: usize,
    pub component_order: Vec<String>,
    pub precision: Precision,
    pub byte_order: String,
    pub layout: String,
    pub normalization: String,
    pub data_file: String,
}

pub const SIDECAR_FORMAT: &str = "sns-spectral-field";

/// Writes `<stem>.bin` (little-endian interleaved re/im, components in
/// order, each row-major with axis 0 slowest) and `<stem>.json`.
pub fn write_field(stem: &Path, field: &SpectralField, precision: Precision) -> Result<PathBuf> {
    let grid = field.grid();
    let bin_path = stem.with_extension("bin");
    let json_path = stem.with_extension("json");
    let mut bytes = Vec::new();
    for c in field.components() {
        for v in c {
            match precision {
                Precision::Complex128 => {
                    bytes.extend_from_slice(&v.re.to_le_bytes());
                    bytes.extend_from_slice(&v.im.to_le_bytes());
                }
                Precision::Complex64 => {
                    bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
                    bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
                }
            }
        }
    }
    let mut f = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&bin_path, e))?;
    let names = ["u1", "u2", "u3"];
    let sidecar = FieldSidecar {
        format: SIDECAR_FORMAT.into(),
        version: 1,
        dimension: grid.dimension,
        points_per_axis: grid.points_per_axis,
        box_length: grid.box_length,
        components: field.num_components(),
        component_order: (0..field.num_components())
            .map(|a| names.get(a).map_or_else(|| format!("c{a}"), |s| s.to_string()))
            .collect(),
        precision,
        byte_order: "little".into(),
        layout: "row-major, axis 0 slowest, interleaved re/im".into(),
        normalization: "fourier-series coefficients (forward sum divided by n^d)".into(),
        data_file: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// Reads a field written by [`write_field`], given its sidecar path.
pub fn read_field(sidecar_path: &Path) -> Result<SpectralField> {
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: FieldSidecar = serde_json::from_str(&text)?;
    if sidecar.format != SIDECAR_FORMAT || sidecar.byte_order != "little" {
        return Err(Error::InvalidParameter(format!(
            "{} is not a little-endian {SIDECAR_FORMAT} sidecar",
            sidecar_path.display()
        )));
    }
    let grid = GridSpec::new(sidecar.dimension, sidecar.points_per_axis, sidecar.box_length)?;
    let bin_path = sidecar_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.data_file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let width = match sidecar.precision {
        Precision::Complex128 => 16,
        Precision::Complex64 => 8,
    };
    let expected = width * grid.len() * sidecar.components;
    if bytes.len() != expected {
        return Err(Error::GridMismatch(format!(
            "{} holds {} bytes, sidecar implies {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let values: Vec<Complex64> = bytes
        .chunks_exact(width)
        .map(|ch| match sidecar.precision {
            Precision::Complex128 => Complex64::new(
                f64::from_le_bytes(ch[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(ch[8..].try_into().expect("8 bytes")),
            ),
            Precision::Complex64 => Complex64::new(
                f32::from_le_bytes(ch[..4].try_into().expect("4 bytes")) as f64,
                f32::from_le_bytes(ch[4..].try_into().expect("4 bytes")) as f64,
            ),
        })
        .collect();
    let comps = values.chunks(grid.len()).map(|c| c.to_vec()).collect();
    SpectralField::from_coefficients(grid, comps)
}

/// Period of `sin(ξ x₁)` in grid points, used to judge oscillation resolution.
pub fn points_per_oscillation(grid: &GridSpec, frequency: f64) -> f64 {
    2.0 * PI / frequency / (grid.box_length / grid.points_per_axis as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn random_field(grid: GridSpec, seed: u64) -> SpectralField {
        let mut r = stream(seed, &[99]);
        let t = grid.tables();
        let mut u = rng::white_field(grid, grid.dimension, &mut r);
        u.apply_multiplier(|idx| (-0.02 * t.xi2[idx]).exp());
        u
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
    }

    #[test]
    fn projector_kills_gradients() {
        let g = GridSpec::periodic(2, 32).unwrap();
        let mut r = stream(3, &[]);
        let psi = rng::white_field(g, 1, &mut r);
        let grad = gradient(&psi);
        assert!(leray_project(&grad).l2_norm() <= 1e-10 * grad.l2_norm());
    }

    #[test]
    fn projector_is_identity_on_divergence_free_and_idempotent() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let u = random_field(g, 5);
        let pu = leray_project(&u);
        assert!(rel(&leray_project(&pu), &pu) <= 1e-12);
        assert!(divergence(&pu).l2_norm() <= 1e-10 * u.l2_norm());
        assert!(pu.l2_norm() <= u.l2_norm() + 1e-12);
    }

    #[test]
    fn divergence_of_simple_fields() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let n = g.len();
        let mut shear = vec![vec![0.0; n]; 2];
        let mut wave = vec![vec![0.0; n]; 2];
        let mut expected = vec![0.0; n];
        for idx in 0..n {
            let m = g.unravel(idx);
            shear[0][idx] = g.coordinate(m[1]).sin();
            wave[0][idx] = g.coordinate(m[0]).sin();
            expected[idx] = g.coordinate(m[0]).cos();
        }
        let shear = SpectralField::from_physical(g, &shear).unwrap();
        assert!(divergence(&shear).l2_norm() < 1e-14);
        let wave = SpectralField::from_physical(g, &wave).unwrap();
        let div = divergence(&wave).to_physical();
        for (a, b) in div[0].iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    /// Direct pointwise evaluation of `div(u ⊗ v)` followed by projection,
    /// with no symmetric shortcut.
    fn nonlinear_oracle(u: &SpectralField, v: &SpectralField) -> SpectralField {
        let g = *u.grid();
        let t = g.tables();
        let up = u.clone().dealiased().to_physical();
        let vp = v.clone().dealiased().to_physical();
        let d = g.dimension;
        let mut comps = vec![vec![Complex64::new(0.0, 0.0); g.len()]; d];
        for b in 0..d {
            for a in 0..d {
                let prod: Vec<f64> = (0..g.len()).map(|i| up[a][i] * vp[b][i]).collect();
                let c = fft::forward_real(&g, &prod);
                for idx in 0..g.len() {
                    if t.dealias[idx] {
                        comps[b][idx] += I * t.xi[idx][a] * c[idx];
                    }
                }
            }
        }
        leray_project(&SpectralField::from_coefficients(g, comps).unwrap())
    }

    #[test]
    fn nonlinear_term_matches_pointwise_oracle() {
        let g = GridSpec::periodic(2, 32).unwrap();
        let tg = taylor_green(g, 1.0, 1.0);
        let got = nonlinear_term(&tg, &tg);
        let want = nonlinear_oracle(&tg, &tg);
        assert!(got.sub(&want).l2_norm() <= 1e-10 * tg.l2_norm().powi(2));
        // The Taylor-Green transport term is a pure gradient.
        assert!(got.l2_norm() < 1e-12);

        let u = leray_project(&random_field(g, 1));
        let v = leray_project(&random_field(g, 2));
        let got = nonlinear_term(&u, &v);
        let want = nonlinear_oracle(&u, &v);
        assert!(rel(&got, &want) <= 1e-10);
        let swapped = nonlinear_term(&v, &u);
        assert!(rel(&got, &swapped) > 1e-6);
        let sym = nonlinear_term(&u, &u.clone());
        assert!(rel(&sym, &nonlinear_oracle(&u, &u)) <= 1e-10);
    }

    #[test]
    fn nonlinear_term_zero_and_homogeneous() {
        let g = GridSpec::periodic(2, 32).unwrap();
        let u = leray_project(&random_field(g, 4));
        let zero = SpectralField::zero_vector(g);
        assert_eq!(nonlinear_term(&u, &zero).l2_norm(), 0.0);
        let a = nonlinear_term(&u.clone().scaled(2.5), &leray_project(&random_field(g, 8)));
        let b = nonlinear_term(&u, &leray_project(&random_field(g, 8))).scaled(2.5);
        assert!(rel(&a, &b) <= 1e-12);
    }

    #[test]
    fn oscillating_requires_three_dimensions_and_resolution() {
        let g2 = GridSpec::periodic(2, 32).unwrap();
        let spec = InitialDataSpec::oscillating(1.0, 0.25, 6.0, 1.2);
        assert!(make_initial_data(&spec, &g2).is_err());
        let g3 = GridSpec::periodic(3, 16).unwrap();
        let fine = InitialDataSpec::oscillating(1.0, 1.0 / 12.0, 6.0, 1.2);
        let err = make_initial_data(&fine, &g3).unwrap_err();
        assert!(err.to_string().contains("oscillation unresolvable"));
    }

    #[test]
    fn oscillating_data_is_divergence_free() {
        let g = GridSpec::periodic(3, 32).unwrap();
        let spec = InitialDataSpec::oscillating(1.0, 0.125, 6.0, 1.2);
        let data = make_initial_data(&spec, &g).unwrap();
        assert_eq!(data.meta.snapped_frequency, Some(8));
        let u = data.field;
        assert!(divergence(&u).l2_norm() <= 1e-10 * u.l2_norm());
        assert!(u.conjugate_symmetry_defect() < 1e-14);
    }

    #[test]
    fn gaussian_data_is_deterministic() {
        let g = GridSpec::periodic(2, 32).unwrap();
        let spec = InitialDataSpec::gaussian(0.3, 0.5, 42);
        let a = make_initial_data(&spec, &g).unwrap().field;
        let b = make_initial_data(&spec, &g).unwrap().field;
        assert_eq!(a, b);
        assert!(divergence(&a).l2_norm() <= 1e-12 * a.l2_norm());
        let rms = a.l2_norm() / g.volume().sqrt();
        assert!((rms - 0.3).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::periodic(2, 16).unwrap();
        let u = leray_project(&random_field(g, 11));
        let side = write_field(&dir.path().join("u0"), &u, Precision::Complex128).unwrap();
        assert_eq!(read_field(&side).unwrap(), u);
        let side32 = write_field(&dir.path().join("u0f"), &u, Precision::Complex64).unwrap();
        let back = read_field(&side32).unwrap();
        assert!(rel(&back, &u) < 1e-6);
        let spec = InitialDataSpec {
            kind: InitialDataKind::File,
            file: Some(side),
            ..InitialDataSpec::gaussian(1.0, 0.5, 0)
        };
        assert_eq!(make_initial_data(&spec, &g).unwrap().field, u);
    }
}
