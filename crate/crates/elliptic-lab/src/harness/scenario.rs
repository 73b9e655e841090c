//! Scenario specifications and the coefficient/source/boundary registry.
//!
//! Hessian-degenerate points are manufactured by symmetry: an odd
//! boundary datum with even coefficients and zero source forces the
//! discrete solution to be odd, so its Hessian vanishes exactly at the
//! cube center. The solve path antisymmetrizes the converged iterate so
//! the cancellation is exact in floating point, not just to tolerance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::flatness::RegularityBudget;
use crate::grid::{sample, Cube, SymMatrix, UniformGrid};
use crate::operators::{
    check_ellipticity, EllipticOperator, EllipticityPair, EllipticityReport, MatrixField,
};
use crate::solver::{solve_linear, DirichletProblem, ScalarField, SolveReport, SolverParams};

use super::HarnessError;

pub type Modulus = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Spec(msg.into())
}

/// Coefficient field selector. Unused parameters for the chosen id are
/// rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl CoefficientSpec {
    pub fn named(id: &str) -> Self {
        CoefficientSpec {
            id: id.to_string(),
            scale: None,
            c: None,
            eps_bar: None,
            anis: None,
            p: None,
        }
    }

    fn no_extras(&self, used: &[&str]) -> Result<(), HarnessError> {
        let fields: [(&str, bool); 5] = [
            ("scale", self.scale.is_some()),
            ("c", self.c.is_some()),
            ("eps_bar", self.eps_bar.is_some()),
            ("anis", self.anis.is_some()),
            ("p", self.p.is_some()),
        ];
        for (name, present) in fields {
            if present && !used.contains(&name) {
                return Err(err(format!(
                    "coefficient id {:?} does not take parameter {name:?}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn need(v: Option<f64>, name: &str, id: &str) -> Result<f64, HarnessError> {
        v.ok_or_else(|| err(format!("coefficient id {id:?} requires parameter {name:?}")))
    }

    pub fn build(&self, dim: usize) -> Result<CoefficientField, HarnessError> {
        let corner = (dim as f64).sqrt();
        match self.id.as_str() {
            "const_iso" => {
                self.no_extras(&["scale"])?;
                let s = self.scale.unwrap_or(1.0);
                if !(s > 0.0) {
                    return Err(err("const_iso scale must be positive"));
                }
                let field: MatrixField = Arc::new(move |x: &[f64]| {
                    SymMatrix::scaled_identity(x.len(), s)
                });
                Ok(CoefficientField {
                    field,
                    ellipticity: EllipticityPair::new(s, s).map_err(HarnessError::Operator)?,
                    modulus: None,
                    even: true,
                })
            }
            "holder_iso" => {
                self.no_extras(&["c", "eps_bar"])?;
                let c = Self::need(self.c, "c", &self.id)?;
                let e = Self::need(self.eps_bar, "eps_bar", &self.id)?;
                if !(c >= 0.0 && e > 0.0 && e < 1.0) {
                    return Err(err("holder_iso needs c >= 0 and eps_bar in (0, 1)"));
                }
                let field: MatrixField = Arc::new(move |x: &[f64]| {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    SymMatrix::scaled_identity(x.len(), 1.0 + c * r.powf(e))
                });
                let lam_big = 1.0 + c * corner.powf(e);
                Ok(CoefficientField {
                    field,
                    ellipticity: EllipticityPair::new(1.0, lam_big)
                        .map_err(HarnessError::Operator)?,
                    modulus: Some(Arc::new(move |t: f64| c * t.powf(e))),
                    even: true,
                })
            }
            "holder_even" => {
                self.no_extras(&["c", "eps_bar", "anis"])?;
                let c = Self::need(self.c, "c", &self.id)?;
                let e = Self::need(self.eps_bar, "eps_bar", &self.id)?;
                let anis = self.anis.unwrap_or(0.002);
                if !(c >= 0.0 && e > 0.0 && e < 1.0 && (0.0..1.0).contains(&anis)) {
                    return Err(err(
                        "holder_even needs c >= 0, eps_bar in (0, 1), anis in [0, 1)",
                    ));
                }
                // diagonal, even in X: E_ii = 1 + anis cos(pi x_i)
                let field: MatrixField = Arc::new(move |x: &[f64]| {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let amp = c * r.powf(e);
                    let diag: Vec<f64> = x
                        .iter()
                        .map(|&xi| 1.0 + amp * (1.0 + anis * (std::f64::consts::PI * xi).cos()))
                        .collect();
                    SymMatrix::from_diag(&diag)
                });
                let lam_big = 1.0 + c * corner.powf(e) * (1.0 + anis);
                Ok(CoefficientField {
                    field,
                    ellipticity: EllipticityPair::new(1.0, lam_big)
                        .map_err(HarnessError::Operator)?,
                    modulus: Some(Arc::new(move |t: f64| c * (1.0 + anis) * t.powf(e))),
                    even: true,
                })
            }
            "dini_log" => {
                self.no_extras(&["c", "p"])?;
                let c = Self::need(self.c, "c", &self.id)?;
                let p = Self::need(self.p, "p", &self.id)?;
                if !(c >= 0.0 && p > 0.0) {
                    return Err(err("dini_log needs c >= 0 and p > 0"));
                }
                let omega = move |t: f64| {
                    if t <= 0.0 {
                        0.0
                    } else {
                        c / (std::f64::consts::E / t).ln().powf(p)
                    }
                };
                let field: MatrixField = Arc::new(move |x: &[f64]| {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    SymMatrix::scaled_identity(x.len(), 1.0 + omega(r))
                });
                let lam_big = 1.0 + omega(corner);
                Ok(CoefficientField {
                    field,
                    ellipticity: EllipticityPair::new(1.0, lam_big)
                        .map_err(HarnessError::Operator)?,
                    modulus: Some(Arc::new(omega)),
                    even: true,
                })
            }
            _ => Err(HarnessError::RegistryMiss {
                kind: "coefficient",
                id: self.id.clone(),
            }),
        }
    }
}

pub struct CoefficientField {
    pub field: MatrixField,
    pub ellipticity: EllipticityPair,
    /// Declared coefficient modulus of continuity at the origin.
    pub modulus: Option<Modulus>,
    pub even: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl SourceSpec {
    pub fn zero() -> Self {
        SourceSpec {
            id: "zero".to_string(),
            value: None,
            amp: None,
            gamma: None,
        }
    }

    pub fn build(&self) -> Result<SourceField, HarnessError> {
        match self.id.as_str() {
            "zero" => {
                if self.value.is_some() || self.amp.is_some() || self.gamma.is_some() {
                    return Err(err("source id \"zero\" takes no parameters"));
                }
                Ok(SourceField {
                    field: Arc::new(|_: &[f64]| 0.0),
                    is_zero: true,
                })
            }
            "constant" => {
                if self.amp.is_some() || self.gamma.is_some() {
                    return Err(err("source id \"constant\" takes only \"value\""));
                }
                let v = self
                    .value
                    .ok_or_else(|| err("source id \"constant\" requires \"value\""))?;
                Ok(SourceField {
                    field: Arc::new(move |_: &[f64]| v),
                    is_zero: v == 0.0,
                })
            }
            "radial_pow" => {
                if self.value.is_some() {
                    return Err(err("source id \"radial_pow\" takes \"amp\" and \"gamma\""));
                }
                let amp = self
                    .amp
                    .ok_or_else(|| err("source id \"radial_pow\" requires \"amp\""))?;
                let gamma = self
                    .gamma
                    .ok_or_else(|| err("source id \"radial_pow\" requires \"gamma\""))?;
                if !(gamma > 0.0) {
                    return Err(err("radial_pow gamma must be positive"));
                }
                Ok(SourceField {
                    field: Arc::new(move |x: &[f64]| {
                        amp * x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma)
                    }),
                    is_zero: amp == 0.0,
                })
            }
            _ => Err(HarnessError::RegistryMiss {
                kind: "source",
                id: self.id.clone(),
            }),
        }
    }
}

pub struct SourceField {
    pub field: ScalarField,
    pub is_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl BoundarySpec {
    pub fn named(id: &str) -> Self {
        BoundarySpec {
            id: id.to_string(),
            value: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<BoundaryField, HarnessError> {
        let planar = |id: &str| -> Result<(), HarnessError> {
            if dim < 2 {
                Err(err(format!("boundary id {id:?} needs dimension >= 2")))
            } else {
                Ok(())
            }
        };
        if self.value.is_some() && self.id != "constant" {
            return Err(err(format!(
                "boundary id {:?} does not take \"value\"",
                self.id
            )));
        }
        match self.id.as_str() {
            "zero" => Ok(BoundaryField {
                field: Arc::new(|_: &[f64]| 0.0),
                odd: true,
            }),
            "constant" => {
                let v = self
                    .value
                    .ok_or_else(|| err("boundary id \"constant\" requires \"value\""))?;
                Ok(BoundaryField {
                    field: Arc::new(move |_: &[f64]| v),
                    odd: v == 0.0,
                })
            }
            "odd_cubic" => {
                planar("odd_cubic")?;
                Ok(BoundaryField {
                    field: Arc::new(|x: &[f64]| x[0].powi(3) - 3.0 * x[0] * x[1] * x[1]),
                    odd: true,
                })
            }
            "generic_quad" => {
                planar("generic_quad")?;
                Ok(BoundaryField {
                    field: Arc::new(|x: &[f64]| x[0] * x[0] - x[1] * x[1] + 0.3 * x[0]),
                    odd: false,
                })
            }
            "harmonic_quad" => {
                planar("harmonic_quad")?;
                Ok(BoundaryField {
                    field: Arc::new(|x: &[f64]| x[0] * x[0] - x[1] * x[1]),
                    odd: false,
                })
            }
            "bilinear" => {
                planar("bilinear")?;
                Ok(BoundaryField {
                    field: Arc::new(|x: &[f64]| x[0] * x[1]),
                    odd: false,
                })
            }
            _ => Err(HarnessError::RegistryMiss {
                kind: "boundary",
                id: self.id.clone(),
            }),
        }
    }
}

pub struct BoundaryField {
    pub field: ScalarField,
    /// g(-X) = -g(X); with even coefficients and zero source this forces
    /// an odd solution and an exactly vanishing center Hessian.
    pub odd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessConfig {
    /// Contraction ratio of measure-mode radii.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Requested number of flatness steps.
    #[serde(default = "default_depth")]
    pub depth: u32,
}

fn default_theta() -> f64 {
    0.5
}

fn default_depth() -> u32 {
    6
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        FlatnessConfig {
            theta: default_theta(),
            depth: default_depth(),
        }
    }
}

/// One experiment, fully specified. Unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub dimension: usize,
    pub coefficients: CoefficientSpec,
    pub source: SourceSpec,
    pub boundary: BoundarySpec,
    pub grid_m: usize,
    #[serde(default)]
    pub budget: RegularityBudget,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub flatness: FlatnessConfig,
    /// Coordinates of measurement points; empty means the cube center.
    #[serde(default)]
    pub marked_points: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization")
    }
}

pub struct BuiltScenario {
    pub spec: ScenarioSpec,
    pub problem: DirichletProblem,
    pub modulus: Option<Modulus>,
    /// Odd boundary + even coefficients + zero source.
    pub odd: bool,
    pub ellipticity: EllipticityReport,
    pub declared: EllipticityPair,
    pub marked_nodes: Vec<Vec<usize>>,
}

/// Materializes the operator, source, boundary and grid, validating the
/// registry ids, the marked points and empirical ellipticity.
pub fn build_scenario(spec: &ScenarioSpec) -> Result<BuiltScenario, HarnessError> {
    if spec.dimension == 0 {
        return Err(err("dimension must be at least 1"));
    }
    spec.budget.validate()?;
    let coeff = spec.coefficients.build(spec.dimension)?;
    let source = spec.source.build()?;
    let boundary = spec.boundary.build(spec.dimension)?;

    let operator = EllipticOperator::linear(coeff.field, coeff.ellipticity, spec.dimension);
    let ellipticity = check_ellipticity(&operator, 200, spec.seed.wrapping_add(1))?;
    if !ellipticity.holds {
        return Err(err(format!(
            "coefficient field violates the declared ellipticity: observed [{:.6}, {:.6}]",
            ellipticity.lambda_star, ellipticity.lambda_big_star
        )));
    }

    let cube = Cube::unit(spec.dimension);
    let grid = UniformGrid::new(cube.clone(), spec.grid_m)?;
    let source_grid = sample(|x| (source.field)(x), &cube, spec.grid_m)?;

    let marked: Vec<Vec<f64>> = if spec.marked_points.is_empty() {
        vec![vec![0.0; spec.dimension]]
    } else {
        spec.marked_points.clone()
    };
    let h = grid.spacing();
    let half = (spec.grid_m - 1) / 2;
    let mut marked_nodes = Vec::new();
    for p in &marked {
        if p.len() != spec.dimension {
            return Err(err(format!("marked point {p:?} has the wrong dimension")));
        }
        let mut idx = Vec::with_capacity(p.len());
        for (pi, ci) in p.iter().zip(&cube.center) {
            let steps = (pi - ci) / h;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(err(format!("marked point {p:?} is not a grid node")));
            }
            let j = steps.round() as i64 + half as i64;
            if j < 1 || j as usize >= spec.grid_m - 1 {
                return Err(err(format!("marked point {p:?} is not interior")));
            }
            idx.push(j as usize);
        }
        marked_nodes.push(idx);
    }

    let odd = boundary.odd && source.is_zero && coeff.even;
    Ok(BuiltScenario {
        spec: spec.clone(),
        problem: DirichletProblem {
            operator,
            source: source_grid,
            boundary: boundary.field,
        },
        modulus: coeff.modulus,
        odd,
        ellipticity,
        declared: coeff.ellipticity,
        marked_nodes,
    })
}

/// Solves the scenario; odd scenarios are antisymmetrized so the center
/// Hessian vanishes exactly rather than to solver tolerance.
pub fn solve_built(built: &BuiltScenario, params: &SolverParams) -> Result<SolveReport, HarnessError> {
    let mut report = solve_linear(&built.problem, params)?;
    if !report.converged {
        return Err(HarnessError::NonConverged {
            residual: report.final_residual,
        });
    }
    if built.odd {
        let grid = report.solution.grid.clone();
        let old = report.solution.values.clone();
        for flat in 0..grid.num_nodes() {
            let mirror = grid.flatten(&grid.mirror(&grid.unflatten(flat)));
            report.solution.values[flat] = 0.5 * (old[flat] - old[mirror]);
        }
    }
    Ok(report)
}
