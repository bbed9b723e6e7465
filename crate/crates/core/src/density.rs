//! Periodic incompressible stored-energy densities.
//!
//! A density is a two-phase coefficient field `mu(y)` (periodic on the unit
//! cell) combined with one of two isotropic models. On volume-preserving
//! matrices the model formula is the energy `W(y, F)`; off that set we use the
//! same formula (floored by the lower growth bound) as the finite extension
//! `W̃`, and the truncations
//!
//! ```text
//! W_n(y, F) = min{ W̃(y, F), n(|F|^p + 1) } + n |det F − 1|
//! ```
//!
//! are what the penalty cell solver minimizes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{perp, Mat, Vec2, DIM};

/// Default smoothing of `|det F − 1|` used inside optimizers.
pub const DEFAULT_SMOOTHING: f64 = 1e-8;

/// Geometry of the two-phase coefficient on the unit cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseKind {
    Constant,
    /// Layers normal to coordinate axis `axis` (1 or 2); the stiff phase
    /// occupies `frac(y_axis) < theta`.
    Laminate { axis: usize, theta: f64 },
    /// Alternating half-cells.
    Checkerboard,
    /// Stiff disc of radius `radius` centred in the cell.
    Inclusion { radius: f64 },
}

/// Piecewise-constant, unit-periodic shear modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhase", into = "RawPhase")]
pub struct PhaseField {
    pub kind: PhaseKind,
    pub mu_low: f64,
    pub mu_high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    mu_low: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_high: Option<f64>,
}

impl TryFrom<RawPhase> for PhaseField {
    type Error = Error;

    fn try_from(raw: RawPhase) -> Result<Self> {
        let mu_high = raw.mu_high.unwrap_or(raw.mu_low);
        let kind = match raw.kind.as_str() {
            "constant" => PhaseKind::Constant,
            "laminate" => PhaseKind::Laminate {
                axis: raw.axis.unwrap_or(1),
                theta: raw
                    .theta
                    .ok_or_else(|| Error::invalid("phase.theta", "laminate needs a volume fraction"))?,
            },
            "checkerboard" => PhaseKind::Checkerboard,
            "inclusion" | "circular-inclusion" => PhaseKind::Inclusion {
                radius: raw
                    .radius
                    .ok_or_else(|| Error::invalid("phase.radius", "inclusion needs a radius"))?,
            },
            other => {
                return Err(Error::invalid(
                    "phase.kind",
                    format!("unknown phase kind `{other}`"),
                ))
            }
        };
        let field = PhaseField {
            kind,
            mu_low: raw.mu_low,
            mu_high,
        };
        field.validate()?;
        Ok(field)
    }
}

impl From<PhaseField> for RawPhase {
    fn from(p: PhaseField) -> Self {
        let mut raw = RawPhase {
            kind: String::new(),
            axis: None,
            theta: None,
            radius: None,
            mu_low: p.mu_low,
            mu_high: Some(p.mu_high),
        };
        match p.kind {
            PhaseKind::Constant => raw.kind = "constant".into(),
            PhaseKind::Laminate { axis, theta } => {
                raw.kind = "laminate".into();
                raw.axis = Some(axis);
                raw.theta = Some(theta);
            }
            PhaseKind::Checkerboard => raw.kind = "checkerboard".into(),
            PhaseKind::Inclusion { radius } => {
                raw.kind = "inclusion".into();
                raw.radius = Some(radius);
            }
        }
        raw
    }
}

impl PhaseField {
    pub fn constant(mu: f64) -> Self {
        PhaseField {
            kind: PhaseKind::Constant,
            mu_low: mu,
            mu_high: mu,
        }
    }

    pub fn laminate(axis: usize, theta: f64, mu_low: f64, mu_high: f64) -> Self {
        PhaseField {
            kind: PhaseKind::Laminate { axis, theta },
            mu_low,
            mu_high,
        }
    }

    pub fn checkerboard(mu_low: f64, mu_high: f64) -> Self {
        PhaseField {
            kind: PhaseKind::Checkerboard,
            mu_low,
            mu_high,
        }
    }

    pub fn inclusion(radius: f64, mu_low: f64, mu_high: f64) -> Self {
        PhaseField {
            kind: PhaseKind::Inclusion { radius },
            mu_low,
            mu_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.mu_low) {
            return Err(Error::invalid("phase.mu_low", "must be finite and > 0"));
        }
        if !positive(self.mu_high) {
            return Err(Error::invalid("phase.mu_high", "must be finite and > 0"));
        }
        match self.kind {
            PhaseKind::Laminate { axis, theta } => {
                if axis != 1 && axis != 2 {
                    return Err(Error::invalid("phase.axis", "must be 1 or 2"));
                }
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::invalid("phase.theta", "must lie in (0, 1)"));
                }
            }
            PhaseKind::Inclusion { radius } => {
                if !(radius > 0.0 && radius < 0.5) {
                    return Err(Error::invalid("phase.radius", "must lie in (0, 0.5)"));
                }
            }
            PhaseKind::Constant | PhaseKind::Checkerboard => {}
        }
        Ok(())
    }

    /// Coefficient at the periodic wrap of `y`.
    pub fn mu_at(&self, y: Vec2) -> f64 {
        let frac = |v: f64| v - v.floor();
        let high = match self.kind {
            PhaseKind::Constant => false,
            PhaseKind::Laminate { axis, theta } => frac(y[axis - 1]) < theta,
            PhaseKind::Checkerboard => {
                let a = (2.0 * frac(y[0])).floor() as i64;
                let b = (2.0 * frac(y[1])).floor() as i64;
                (a + b) % 2 == 0
            }
            PhaseKind::Inclusion { radius } => {
                let dx = y[0] - y[0].round();
                let dy = y[1] - y[1].round();
                dx * dx + dy * dy < radius * radius
            }
        };
        if high {
            self.mu_high
        } else {
            self.mu_low
        }
    }

    pub fn mu_max(&self) -> f64 {
        match self.kind {
            PhaseKind::Constant => self.mu_low,
            _ => self.mu_low.max(self.mu_high),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.kind, PhaseKind::Constant) || self.mu_low == self.mu_high
    }
}

/// Constitutive model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// `mu/2 (|F|² − d)`.
    #[serde(alias = "neo-hookean-incompressible")]
    NeoHookean,
    /// `mu (|F|^p + |adj F|^q − d^{p/2} − d^{q/2})`.
    AdjugateAugmented,
}

/// A periodic stored-energy density with its growth data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub model: Model,
    pub phase: PhaseField,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_p() -> f64 {
    2.0
}

fn default_q() -> f64 {
    2.0
}

fn default_c() -> f64 {
    10.0
}

/// Truncation parameter `n` of `W_n`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(n: f64) -> Result<Self> {
        if n.is_finite() && n > 0.0 {
            Ok(TruncationLevel(n))
        } else {
            Err(Error::invalid("n", "truncation level must be finite and > 0"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Energy value together with its derivative in `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub grad: Mat,
}

impl EnergySpec {
    pub fn neo_hookean(phase: PhaseField) -> Self {
        EnergySpec {
            model: Model::NeoHookean,
            phase,
            p: 2.0,
            q: 2.0,
            c: default_c(),
        }
    }

    pub fn adjugate_augmented(phase: PhaseField, p: f64, q: f64) -> Self {
        EnergySpec {
            model: Model::AdjugateAugmented,
            phase,
            p,
            q,
            c: default_c(),
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.phase.validate()?;
        if !(self.p.is_finite() && self.p >= DIM as f64) {
            return Err(Error::invalid("p", "growth exponent must satisfy p >= d"));
        }
        if self.model == Model::NeoHookean && self.p != 2.0 {
            return Err(Error::invalid("p", "neo-hookean model has p = 2"));
        }
        if !(self.q.is_finite() && self.q >= 1.0) {
            return Err(Error::invalid("q", "adjugate exponent must satisfy q >= 1"));
        }
        if !(self.c.is_finite() && self.c >= 1.0) {
            return Err(Error::invalid("c", "growth constant must satisfy c >= 1"));
        }
        Ok(())
    }

    pub fn mu_at(&self, y: Vec2) -> f64 {
        self.phase.mu_at(y)
    }

    /// The model formula with coefficient `mu`, without any floor. On
    /// volume-preserving `F` this is `W(y, F)`.
    pub fn model_energy(&self, mu: f64, f: &Mat) -> Eval {
        let d = DIM as f64;
        match self.model {
            Model::NeoHookean => Eval {
                value: 0.5 * mu * (f.norm_sq() - d),
                grad: f.scale(mu),
            },
            Model::AdjugateAugmented => {
                let nf = f.norm();
                let adj = f.adjugate();
                let na = adj.norm();
                let value = mu
                    * (nf.powf(self.p) + na.powf(self.q)
                        - d.powf(self.p / 2.0)
                        - d.powf(self.q / 2.0));
                // d|adj F|^q / dF: in 2D, |adj F|² = |F|² so the derivative of
                // |adj F|² is 2F.
                let grad = f.scale(mu * (self.p * pow_m2(nf, self.p) + self.q * pow_m2(na, self.q)));
                Eval { value, grad }
            }
        }
    }

    fn growth_floor(&self, f: &Mat) -> Eval {
        let nf = f.norm();
        Eval {
            value: nf.powf(self.p) / self.c - self.c,
            grad: f.scale(self.p * pow_m2(nf, self.p) / self.c),
        }
    }

    /// `W̃` with coefficient `mu`: `max{model, 0, c⁻¹|F|^p − c}`. The zero
    /// floor only acts off `Σ` (the model formula is non-negative on `Σ`) and
    /// keeps the extension non-negative while preserving polyconvexity.
    pub fn w_tilde_mu(&self, mu: f64, f: &Mat) -> Eval {
        let mut out = self.model_energy(mu, f);
        if out.value < 0.0 {
            out = Eval {
                value: 0.0,
                grad: Mat::ZERO,
            };
        }
        let floor = self.growth_floor(f);
        if floor.value > out.value {
            floor
        } else {
            out
        }
    }

    /// `W_n` with coefficient `mu`. `smoothing > 0` replaces `|det F − 1|` by
    /// `sqrt((det F − 1)² + δ²) − δ`.
    pub fn w_n_mu(&self, mu: f64, n: TruncationLevel, f: &Mat, smoothing: f64) -> Eval {
        let mut out = self.w_n_elastic_mu(mu, n, f);
        let n = n.value();
        let (pen, dpen) = det_penalty(f.det() - 1.0, smoothing);
        out.value += n * pen;
        out.grad += f.cofactor().scale(n * dpen);
        out
    }

    /// The truncated part `min{W̃, n(|F|^p + 1)}` of `W_n`, without the
    /// determinant penalty.
    pub fn w_n_elastic_mu(&self, mu: f64, n: TruncationLevel, f: &Mat) -> Eval {
        let n = n.value();
        let tilde = self.w_tilde_mu(mu, f);
        let nf = f.norm();
        let cap = n * (nf.powf(self.p) + 1.0);
        if cap < tilde.value {
            Eval {
                value: cap,
                grad: f.scale(n * self.p * pow_m2(nf, self.p)),
            }
        } else {
            tilde
        }
    }

    /// `W̃(y, F)` and its gradient.
    pub fn eval_w_tilde(&self, y: Vec2, f: &Mat) -> Eval {
        self.w_tilde_mu(self.mu_at(y), f)
    }

    /// `W_n(y, F)` and its gradient.
    pub fn eval_w_n(&self, n: TruncationLevel, y: Vec2, f: &Mat, smoothing: f64) -> Eval {
        self.w_n_mu(self.mu_at(y), n, f, smoothing)
    }

    /// `W(y, F)` on volume-preserving matrices (the raw model formula).
    pub fn eval_w(&self, y: Vec2, f: &Mat) -> f64 {
        self.model_energy(self.mu_at(y), f).value
    }
}

/// `x^(p−2)` with the convention `0^(p−2) = 0` for `p < 2`.
fn pow_m2(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if x == 0.0 {
        0.0
    } else {
        x.powf(p - 2.0)
    }
}

/// Value and derivative of the (optionally smoothed) absolute value.
pub fn det_penalty(r: f64, smoothing: f64) -> (f64, f64) {
    if smoothing > 0.0 {
        let s = (r * r + smoothing * smoothing).sqrt();
        (s - smoothing, r / s)
    } else {
        let d = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        (r.abs(), d)
    }
}

/// Random volume-preserving matrix: a product of one to four shears
/// `I + γ a⊗a⊥` and stretches `diag(λ, 1/λ)`.
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R) -> Mat {
    let factors = rng.gen_range(1..=4);
    let mut f = Mat::IDENTITY;
    for _ in 0..factors {
        let factor = if rng.gen_bool(0.5) {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let a = [angle.cos(), angle.sin()];
            let gamma = rng.gen_range(-1.0..1.0);
            Mat::IDENTITY + Mat::outer(a, perp(a)).scale(gamma)
        } else {
            let lambda: f64 = rng.gen_range(0.5..2.0);
            Mat::diag(lambda, 1.0 / lambda)
        };
        f = f * factor;
    }
    f
}

/// Random point of the unit cell `[0, 1)²`.
pub fn sample_point<R: Rng + ?Sized>(rng: &mut R) -> Vec2 {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

/// Which structural inequality a sample violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionKind {
    Submultiplicative,
    GrowthLower,
    GrowthUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionViolation {
    pub kind: AssumptionKind,
    pub y: Vec2,
    pub f: Mat,
    pub g: Mat,
}

/// Outcome of [`check_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub declared_c: f64,
    /// Smallest `c` for `W(y, FG) ≤ c (1 + W(y, F))(1 + W(y, G))` on the sample.
    pub submultiplicative_c: f64,
    /// Smallest `c ≥ 1` for `c⁻¹|F|^p − c ≤ W(y, F) ≤ c(|F|^p + 1)` on the sample.
    pub growth_c: f64,
    pub violations: Vec<AssumptionViolation>,
}

impl AssumptionReport {
    pub fn required_c(&self) -> f64 {
        self.submultiplicative_c.max(self.growth_c).max(1.0)
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples `(y, F, G)` with `F, G` volume preserving and measures the
/// submultiplicativity and two-sided growth constants.
pub fn check_assumptions(spec: &EnergySpec, sample_count: usize, seed: u64) -> Result<AssumptionReport> {
    use rand::SeedableRng;
    if sample_count == 0 {
        return Err(Error::invalid("sample_count", "must be at least 1"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c = spec.c;
    let p = spec.p;
    let mut report = AssumptionReport {
        samples: sample_count,
        declared_c: c,
        submultiplicative_c: 0.0,
        growth_c: 1.0,
        violations: Vec::new(),
    };
    for _ in 0..sample_count {
        let y = sample_point(&mut rng);
        let f = sample_sigma(&mut rng);
        let g = sample_sigma(&mut rng);
        let wf = spec.eval_w(y, &f);
        let wg = spec.eval_w(y, &g);
        let wfg = spec.eval_w(y, &(f * g));

        let ratio = wfg / ((1.0 + wf) * (1.0 + wg));
        report.submultiplicative_c = report.submultiplicative_c.max(ratio);
        let mut push = |kind| {
            report.violations.push(AssumptionViolation { kind, y, f, g });
        };
        if wfg > c * (1.0 + wf) * (1.0 + wg) {
            push(AssumptionKind::Submultiplicative);
        }

        let fp = f.norm().powf(p);
        if fp / c - c > wf {
            push(AssumptionKind::GrowthLower);
        }
        if wf > c * (fp + 1.0) {
            push(AssumptionKind::GrowthUpper);
        }
        // Lower bound: smallest c with c² + W c − |F|^p ≥ 0.
        let lower_c = 0.5 * (-wf + (wf * wf + 4.0 * fp).sqrt());
        let upper_c = wf / (fp + 1.0);
        report.growth_c = report.growth_c.max(lower_c).max(upper_c);
    }
    Ok(report)
}
