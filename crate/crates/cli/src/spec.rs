//! Problem files.
//!
//! A problem is a JSON document with `"schema": "hopflayer/1"`. Unknown
//! fields are rejected. Optional fields are filled by [`ProblemSpec::resolve`]
//! and the resolved document is what every command echoes and digests.

use std::fmt;
use std::path::Path;

use hopflayer::{
    Axis, ConvexPolynomial, GridBox, InitialData, Layer, LayerKind, LayeredHamiltonian, MomentumProfile,
    PiecewiseLinear, Polynomial, PolynomialForm, Profile, SampledFunction, SeparableTerm, TieTolerance,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "hopflayer/1";

/// Input rejected before any computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ValidationError> {
    Err(ValidationError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub schema: String,
    pub dimension: usize,
    pub horizon: f64,
    pub sigma: SigmaSpec,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub grids: GridsSpec,
    #[serde(default)]
    pub tolerances: TolerancesSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characteristics: Option<CharacteristicsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular: Option<SingularSpec>,
}

/// Initial data. `pwl` and `polynomial` are one-dimensional; `separable`
/// sums one profile per axis; `samples` lists values in row-major order
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Pwl {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        #[serde(default)]
        value_at_first: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        smoothing: Option<f64>,
    },
    Polynomial {
        coeffs: Vec<f64>,
        domain: [f64; 2],
        #[serde(default)]
        samples: Option<usize>,
    },
    Separable {
        profiles: Vec<SigmaSpec>,
    },
    Samples {
        #[serde(rename = "box")]
        bounds: Vec<[f64; 2]>,
        counts: Vec<usize>,
        values: Vec<f64>,
    },
}

/// `product`: `g(t) h(p) + k(t)` with layers cut at the sign changes of `g`.
/// `layers`: explicit layers, each ending at `t_end`. Momentum polynomials
/// `h` apply to every axis and are summed. Coefficients are in ascending
/// degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    Product {
        g: Vec<f64>,
        h: Vec<f64>,
        #[serde(default)]
        k: Vec<f64>,
    },
    Layers {
        layers: Vec<LayerSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKindSpec,
    pub t_end: f64,
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub k: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKindSpec {
    Convex,
    Concave,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    #[serde(rename = "box", default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsSpec {
    #[serde(default)]
    pub dual: BoxSpec,
    #[serde(default)]
    pub space: BoxSpec,
    #[serde(default)]
    pub time_count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSpec {
    /// Relative tie tolerance for maximizer sets.
    #[serde(default)]
    pub tie_tol: Option<f64>,
    /// Maximizer-set diameter above which a point is singular.
    #[serde(default)]
    pub diam_threshold: Option<f64>,
    /// Finite-difference step of the PDE residual.
    #[serde(default)]
    pub fd_step: Option<f64>,
    /// Residual exclusion radius around singular points, in space-grid
    /// spacings.
    #[serde(default)]
    pub exclusion_spacings: Option<f64>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    /// Allowed `max(u_H - u)`.
    #[serde(default)]
    pub domination_tol: Option<f64>,
    #[serde(default)]
    pub gluing_tol: Option<f64>,
    #[serde(default)]
    pub semiconvexity_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicsSpec {
    /// Starting points of forward strips.
    #[serde(default)]
    pub y: Vec<f64>,
    /// `[t, x]` targets for the backward search.
    #[serde(default)]
    pub targets: Vec<[f64; 2]>,
    #[serde(default)]
    pub search: Option<[f64; 2]>,
    #[serde(default)]
    pub scan_points: Option<usize>,
    #[serde(default)]
    pub backward_tol: Option<f64>,
    #[serde(default)]
    pub momentum_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularSpec {
    /// `[t, x]` anchors for gradient sets and arc tracing. Empty means the
    /// gradient sets of every detected point, without arcs.
    #[serde(default)]
    pub anchors: Vec<[f64; 2]>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

const DEFAULT_DUAL_COUNT_1D: usize = 2001;
const DEFAULT_DUAL_COUNT_2D: usize = 101;
const DEFAULT_SPACE_COUNT_1D: usize = 201;
const DEFAULT_SPACE_COUNT_2D: usize = 41;
const DEFAULT_TIME_COUNT: usize = 21;
const DEFAULT_POLY_SAMPLES: usize = 2001;
const DEFAULT_TIE_TOL: f64 = 1e-9;
const DEFAULT_DIAM_SPACINGS: f64 = 3.0;
const DEFAULT_FD_STEP: f64 = 1e-3;
const DEFAULT_EXCLUSION_SPACINGS: f64 = 3.0;
const DEFAULT_RESIDUAL_TOL: f64 = 1e-2;
const DEFAULT_DOMINATION_TOL: f64 = 1e-9;
const DEFAULT_GLUING_TOL: f64 = 1e-8;
const DEFAULT_SEMICONVEXITY_SAMPLES: usize = 10_000;
const DEFAULT_SEED: u64 = 0;
const DEFAULT_SCAN_POINTS: usize = hopflayer::characteristics::DEFAULT_SCAN_POINTS;
const DEFAULT_BACKWARD_TOL: f64 = 1e-10;
const DEFAULT_MAX_STEPS: usize = 1000;

/// Everything a command needs, built from a resolved spec.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub sigma: InitialData,
    pub ham: LayeredHamiltonian,
    pub dual: GridBox,
    pub space: GridBox,
    pub time: Axis,
    pub tie: TieTolerance,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        serde_json::from_str(text).map_err(|e| ValidationError(format!("cannot parse problem: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the compact JSON form, in hex.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks the spec, fills every default and builds the problem.
    pub fn resolve(&self) -> Result<Problem, ValidationError> {
        if self.schema != SCHEMA {
            return invalid(format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema));
        }
        let d = self.dimension;
        if d != 1 && d != 2 {
            return invalid(format!("dimension must be 1 or 2, got {d}"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid(format!("horizon must be positive and finite, got {}", self.horizon));
        }
        let mut spec = self.clone();
        let sigma = build_sigma(&mut spec.sigma, d)?;
        let ham = build_ham(&spec.hamiltonian, d, spec.horizon)?;

        let dual_counts = counts_or(
            &spec.grids.dual.counts,
            d,
            if d == 1 {
                DEFAULT_DUAL_COUNT_1D
            } else {
                DEFAULT_DUAL_COUNT_2D
            },
            "grids.dual",
        )?;
        let dual_bounds = match &spec.grids.dual.bounds {
            Some(b) => check_bounds(b, d, "grids.dual")?,
            None => {
                let l = sigma.lipschitz();
                if !l.is_finite() {
                    return invalid("sigma is not Lipschitz; give grids.dual.box explicitly");
                }
                let l = if l > 0.0 { l } else { 1.0 };
                vec![[-l, l]; d]
            }
        };
        let dual = grid_box(&dual_bounds, &dual_counts, "grids.dual")?;
        spec.grids.dual = BoxSpec {
            bounds: Some(dual_bounds),
            counts: Some(dual_counts),
        };

        let space_counts = counts_or(
            &spec.grids.space.counts,
            d,
            if d == 1 {
                DEFAULT_SPACE_COUNT_1D
            } else {
                DEFAULT_SPACE_COUNT_2D
            },
            "grids.space",
        )?;
        let space_bounds = match &spec.grids.space.bounds {
            Some(b) => check_bounds(b, d, "grids.space")?,
            None => vec![[-1.0, 1.0]; d],
        };
        let space = grid_box(&space_bounds, &space_counts, "grids.space")?;
        spec.grids.space = BoxSpec {
            bounds: Some(space_bounds),
            counts: Some(space_counts),
        };

        let time_count = spec.grids.time_count.unwrap_or(DEFAULT_TIME_COUNT);
        if time_count < 2 {
            return invalid(format!("grids.time_count must be at least 2, got {time_count}"));
        }
        spec.grids.time_count = Some(time_count);
        let time = Axis::new(0.0, spec.horizon, time_count).map_err(|e| ValidationError(format!("time grid: {e}")))?;

        ham.validate_on(&dual)
            .map_err(|e| ValidationError(format!("hamiltonian: {e}")))?;

        let t = &mut spec.tolerances;
        let tie_tol = positive(t.tie_tol.get_or_insert(DEFAULT_TIE_TOL), "tolerances.tie_tol")?;
        positive(
            t.diam_threshold
                .get_or_insert(DEFAULT_DIAM_SPACINGS * dual.max_spacing()),
            "tolerances.diam_threshold",
        )?;
        positive(t.fd_step.get_or_insert(DEFAULT_FD_STEP), "tolerances.fd_step")?;
        nonnegative(
            t.exclusion_spacings.get_or_insert(DEFAULT_EXCLUSION_SPACINGS),
            "tolerances.exclusion_spacings",
        )?;
        positive(
            t.residual_tol.get_or_insert(DEFAULT_RESIDUAL_TOL),
            "tolerances.residual_tol",
        )?;
        nonnegative(
            t.domination_tol.get_or_insert(DEFAULT_DOMINATION_TOL),
            "tolerances.domination_tol",
        )?;
        nonnegative(t.gluing_tol.get_or_insert(DEFAULT_GLUING_TOL), "tolerances.gluing_tol")?;
        t.semiconvexity_samples.get_or_insert(DEFAULT_SEMICONVEXITY_SAMPLES);
        spec.seed.get_or_insert(DEFAULT_SEED);

        if let Some(c) = &mut spec.characteristics {
            if d != 1 {
                return invalid("characteristics are supported in dimension 1 only");
            }
            let [lo, hi] = *c.search.get_or_insert([space.axis(0).lo - 2.0, space.axis(0).hi + 2.0]);
            if lo >= hi {
                return invalid("characteristics.search must satisfy lo < hi");
            }
            if *c.scan_points.get_or_insert(DEFAULT_SCAN_POINTS) < 2 {
                return invalid("characteristics.scan_points must be at least 2");
            }
            positive(
                c.backward_tol.get_or_insert(DEFAULT_BACKWARD_TOL),
                "characteristics.backward_tol",
            )?;
            positive(
                c.momentum_tol.get_or_insert(dual.max_spacing()),
                "characteristics.momentum_tol",
            )?;
        }
        if let Some(s) = &mut spec.singular {
            if d != 1 && !s.anchors.is_empty() {
                return invalid("singular.anchors are supported in dimension 1 only");
            }
            let step = spec.horizon / (time_count - 1) as f64;
            positive(s.dt.get_or_insert(0.5 * step), "singular.dt")?;
            s.max_steps.get_or_insert(DEFAULT_MAX_STEPS);
        }

        Ok(Problem {
            spec,
            sigma,
            ham,
            dual,
            space,
            time,
            tie: TieTolerance::Relative(tie_tol),
        })
    }
}

impl Problem {
    pub fn tol(&self) -> &TolerancesSpec {
        &self.spec.tolerances
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed.expect("resolved")
    }
}

fn positive(v: &f64, name: &str) -> Result<f64, ValidationError> {
    if *v > 0.0 && v.is_finite() {
        Ok(*v)
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

fn nonnegative(v: &f64, name: &str) -> Result<f64, ValidationError> {
    if *v >= 0.0 && v.is_finite() {
        Ok(*v)
    } else {
        invalid(format!("{name} must be nonnegative and finite, got {v}"))
    }
}

fn counts_or(counts: &Option<Vec<usize>>, d: usize, default: usize, name: &str) -> Result<Vec<usize>, ValidationError> {
    let counts = counts.clone().unwrap_or_else(|| vec![default; d]);
    if counts.len() != d {
        return invalid(format!("{name}.counts needs {d} entries, got {}", counts.len()));
    }
    if let Some(&c) = counts.iter().find(|&&c| c < 2) {
        return invalid(format!("{name}.counts must be at least 2, got {c}"));
    }
    Ok(counts)
}

fn check_bounds(b: &[[f64; 2]], d: usize, name: &str) -> Result<Vec<[f64; 2]>, ValidationError> {
    if b.len() != d {
        return invalid(format!("{name}.box needs {d} intervals, got {}", b.len()));
    }
    if let Some([lo, hi]) = b.iter().find(|[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
        return invalid(format!("{name}.box interval [{lo}, {hi}] must be finite with lo < hi"));
    }
    Ok(b.to_vec())
}

fn grid_box(bounds: &[[f64; 2]], counts: &[usize], name: &str) -> Result<GridBox, ValidationError> {
    let axes = bounds
        .iter()
        .zip(counts)
        .map(|([lo, hi], &n)| Axis::new(*lo, *hi, n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ValidationError(format!("{name}: {e}")))?;
    GridBox::new(axes).map_err(|e| ValidationError(format!("{name}: {e}")))
}

fn sigma_err(e: impl fmt::Display) -> ValidationError {
    ValidationError(e.to_string())
}

fn build_profile(p: &mut SigmaSpec) -> Result<Profile, ValidationError> {
    match p {
        SigmaSpec::Pwl {
            breakpoints,
            slopes,
            value_at_first,
            smoothing,
        } => {
            let mut f =
                PiecewiseLinear::new(breakpoints.clone(), slopes.clone(), *value_at_first).map_err(sigma_err)?;
            if let Some(r) = *smoothing {
                f = f.smoothed(r).map_err(sigma_err)?;
            }
            Ok(Profile::Pwl(f))
        }
        SigmaSpec::Polynomial {
            coeffs,
            domain,
            samples,
        } => {
            let n = *samples.get_or_insert(DEFAULT_POLY_SAMPLES);
            let axis = Axis::new(domain[0], domain[1], n).map_err(|e| ValidationError(format!("sigma.domain: {e}")))?;
            Ok(Profile::Poly(
                ConvexPolynomial::new(Polynomial::new(coeffs.clone()), axis).map_err(sigma_err)?,
            ))
        }
        _ => invalid("sigma profiles must be pwl or polynomial"),
    }
}

fn build_sigma(s: &mut SigmaSpec, d: usize) -> Result<InitialData, ValidationError> {
    match s {
        SigmaSpec::Pwl { .. } | SigmaSpec::Polynomial { .. } => {
            if d != 1 {
                return invalid("pwl and polynomial sigma are one-dimensional; use separable or samples");
            }
            Ok(InitialData::Separable(vec![build_profile(s)?]))
        }
        SigmaSpec::Separable { profiles } => {
            if profiles.len() != d {
                return invalid(format!("sigma.profiles needs {d} entries, got {}", profiles.len()));
            }
            let ps = profiles.iter_mut().map(build_profile).collect::<Result<Vec<_>, _>>()?;
            Ok(InitialData::Separable(ps))
        }
        SigmaSpec::Samples { bounds, counts, values } => {
            let bounds = check_bounds(bounds, d, "sigma")?;
            let counts = counts_or(&Some(counts.clone()), d, 0, "sigma")?;
            let grid = grid_box(&bounds, &counts, "sigma")?;
            if values.len() != grid.len() {
                return invalid(format!(
                    "sigma.values needs {} entries, got {}",
                    grid.len(),
                    values.len()
                ));
            }
            let f = SampledFunction::new(grid, values.clone(), false).map_err(sigma_err)?;
            InitialData::samples(f).map_err(sigma_err)
        }
    }
}

fn build_ham(h: &HamiltonianSpec, d: usize, horizon: f64) -> Result<LayeredHamiltonian, ValidationError> {
    let ham_err = |e: hopflayer::HamError| ValidationError(format!("hamiltonian: {e}"));
    match h {
        HamiltonianSpec::Product { g, h, k } => {
            let term = SeparableTerm::new(
                Polynomial::new(g.clone()),
                MomentumProfile::uniform(Polynomial::new(h.clone()), d),
            );
            LayeredHamiltonian::from_separable(d, horizon, term, Polynomial::new(k.clone())).map_err(ham_err)
        }
        HamiltonianSpec::Layers { layers } => {
            if layers.is_empty() {
                return invalid("hamiltonian.layers is empty");
            }
            let last = layers.last().unwrap().t_end;
            if last != horizon {
                return invalid(format!("last layer ends at {last}, horizon is {horizon}"));
            }
            let mut breakpoints = vec![0.0];
            breakpoints.extend(layers.iter().map(|l| l.t_end));
            let built = layers
                .iter()
                .map(|l| {
                    let terms = l
                        .terms
                        .iter()
                        .map(|t| {
                            SeparableTerm::new(
                                Polynomial::new(t.g.clone()),
                                MomentumProfile::uniform(Polynomial::new(t.h.clone()), d),
                            )
                        })
                        .collect();
                    let kind = match l.kind {
                        LayerKindSpec::Convex => LayerKind::ConvexInP,
                        LayerKindSpec::Concave => LayerKind::ConcaveInP,
                        LayerKindSpec::Separable => LayerKind::Separable,
                    };
                    Layer::polynomial(kind, PolynomialForm::new(terms, Polynomial::new(l.k.clone())))
                })
                .collect();
            LayeredHamiltonian::new(d, breakpoints, built).map_err(ham_err)
        }
    }
}
