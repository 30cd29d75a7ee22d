//! Model specifications: the symbol function, per-particle speeds and memory
//! lengths, the weight parameter and contour radii, with validation of the
//! analyticity requirements every kernel downstream relies on.

use crate::contour;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The symbol `φ` attached to each model family. Speeds live in `ModelSpec`;
/// only PushASEP carries parameters of its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymbolFunction {
    ContinuousTasep,
    RightBernoulli {
        #[serde(skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    LeftBernoulliPush {
        #[serde(skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    LeftGeometricPush {
        #[serde(skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
    },
    RightGeometricBlock {
        #[serde(skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
    },
    PushAsep {
        r: f64,
        l: f64,
    },
}

impl SymbolFunction {
    pub fn eval(&self, w: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            SymbolFunction::ContinuousTasep => w.exp(),
            SymbolFunction::RightBernoulli { .. } => one + w,
            SymbolFunction::LeftBernoulliPush { .. } => one + one / w,
            SymbolFunction::LeftGeometricPush { .. } => one / (one - one / w),
            SymbolFunction::RightGeometricBlock { .. } => one / (one - w),
            SymbolFunction::PushAsep { r, l } => (*r * w + *l / w).exp(),
        }
    }

    /// `φ(w)^t`. Integer exponents are valid for every kind; real exponents
    /// only for the continuous-time kinds, where the power has a closed form.
    pub fn pow_t(&self, w: Complex64, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        if t.fract() == 0.0 && t.abs() < 2_147_483_000.0 {
            return self.eval(w).powi(t as i32);
        }
        match self {
            SymbolFunction::ContinuousTasep => (t * w).exp(),
            SymbolFunction::PushAsep { r, l } => (t * (*r * w + *l / w)).exp(),
            _ => panic!("non-integer time for a discrete-time symbol"),
        }
    }

    pub fn continuous_time(&self) -> bool {
        matches!(
            self,
            SymbolFunction::ContinuousTasep | SymbolFunction::PushAsep { .. }
        )
    }

    /// Radii of the nonzero-radius zeros of φ.
    pub fn zero_radii(&self) -> Vec<f64> {
        match self {
            SymbolFunction::RightBernoulli { .. } | SymbolFunction::LeftBernoulliPush { .. } => {
                vec![1.0]
            }
            _ => vec![],
        }
    }

    /// Radii of the nonzero-radius poles of φ.
    pub fn pole_radii(&self) -> Vec<f64> {
        match self {
            SymbolFunction::LeftGeometricPush { .. }
            | SymbolFunction::RightGeometricBlock { .. } => vec![1.0],
            _ => vec![],
        }
    }

    /// Locations of the nonzero zeros/poles of φ (all on the real axis for
    /// the in-scope symbols).
    pub fn singular_points(&self) -> Vec<f64> {
        match self {
            SymbolFunction::RightBernoulli { .. } | SymbolFunction::LeftBernoulliPush { .. } => {
                vec![-1.0]
            }
            SymbolFunction::LeftGeometricPush { .. }
            | SymbolFunction::RightGeometricBlock { .. } => vec![1.0],
            _ => vec![],
        }
    }

    /// Winding number of φ around a circle of radius `rho` predicted from the
    /// known zero/pole structure (zeros minus poles strictly inside).
    fn expected_winding(&self, rho: f64) -> i64 {
        let at_origin: i64 = match self {
            SymbolFunction::LeftBernoulliPush { .. } => -1,
            SymbolFunction::LeftGeometricPush { .. } => 1,
            _ => 0,
        };
        let zeros: i64 = self.zero_radii().iter().filter(|&&s| s < rho).count() as i64;
        let poles: i64 = self.pole_radii().iter().filter(|&&s| s < rho).count() as i64;
        at_origin + zeros - poles
    }

    pub fn name(&self) -> &'static str {
        match self {
            SymbolFunction::ContinuousTasep => "continuous_tasep",
            SymbolFunction::RightBernoulli { .. } => "right_bernoulli",
            SymbolFunction::LeftBernoulliPush { .. } => "left_bernoulli_push",
            SymbolFunction::LeftGeometricPush { .. } => "left_geometric_push",
            SymbolFunction::RightGeometricBlock { .. } => "right_geometric_block",
            SymbolFunction::PushAsep { .. } => "push_asep",
        }
    }
}

/// Fully parameterized model: symbol, speeds, lengths, weight θ and the two
/// contour radii. `kappa_i = L_i - 1` is the memory length of particle `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub phi: SymbolFunction,
    pub speeds: Vec<f64>,
    pub lengths: Vec<u32>,
    pub theta: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("radius ordering violated: {0}")]
    RadiusOrder(String),
    #[error("zero or pole of the symbol obstructs the annulus: {0}")]
    ZeroOnAnnulus(String),
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("memory-weight series does not terminate: {0}")]
    LaurentCutoff(String),
    #[error("no annulus satisfies the radius constraints: {0}")]
    NoValidAnnulus(String),
    #[error("initial condition spacing violated at gap {0}")]
    SpacingViolation(usize),
    #[error("invalid observation request: {0}")]
    BadRequest(String),
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        self.speeds.len()
    }

    /// Memory length `κ_ℓ` with the convention `κ_0 = 0`.
    pub fn kappa(&self, l: usize) -> i64 {
        if l == 0 {
            0
        } else {
            self.lengths[l - 1] as i64 - 1
        }
    }

    /// Speed `v_ℓ`, 1-based.
    pub fn speed(&self, l: usize) -> f64 {
        self.speeds[l - 1]
    }

    /// Memory weight `a_ℓ(w) = (φ(w)/φ(v_ℓ))^{κ_ℓ}` with `a_0 ≡ 1`. The
    /// normalization by `φ(v_ℓ)` makes the induced step measure identically
    /// one beyond the memory depth; it only rescales the weight by a constant
    /// and cancels from every kernel.
    pub fn a_fn(&self, l: usize, w: Complex64) -> Complex64 {
        let k = self.kappa(l);
        if k == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            let pv = self.phi.eval(Complex64::new(self.speed(l), 0.0)).re;
            (self.phi.eval(w) / pv).powi(k as i32)
        }
    }

    pub fn min_speed(&self) -> f64 {
        self.speeds.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().cloned().fold(0.0, f64::max)
    }
}

fn winding_number(phi: &SymbolFunction, rho: f64, nodes: usize) -> Option<i64> {
    let mut total = 0.0f64;
    let mut prev = phi.eval(Complex64::from_polar(rho, 0.0));
    if prev.norm() == 0.0 {
        return None;
    }
    for k in 1..=nodes {
        let ang = std::f64::consts::TAU * k as f64 / nodes as f64;
        let cur = phi.eval(Complex64::from_polar(rho, ang));
        if cur.norm() == 0.0 {
            return None;
        }
        total += (cur / prev).arg();
        prev = cur;
    }
    let turns = total / std::f64::consts::TAU;
    if (turns - turns.round()).abs() > 0.25 {
        return None;
    }
    Some(turns.round() as i64)
}

/// Checks every invariant of a model spec. On failure returns the full list of
/// violated conditions.
pub fn validate_spec(spec: &ModelSpec) -> Result<ModelSpec, Vec<ModelError>> {
    let mut errs = Vec::new();
    let n = spec.speeds.len();
    if n == 0 || spec.lengths.len() != n {
        errs.push(ModelError::ParameterRange(format!(
            "speeds ({}) and lengths ({}) must be nonempty and of equal size",
            n,
            spec.lengths.len()
        )));
        return Err(errs);
    }
    match &spec.phi {
        SymbolFunction::RightBernoulli { p: Some(p) }
        | SymbolFunction::LeftBernoulliPush { p: Some(p) } => {
            if !(*p > 0.0 && *p < 1.0) {
                errs.push(ModelError::ParameterRange(format!(
                    "jump probability p={p} outside (0,1)"
                )));
            }
        }
        SymbolFunction::LeftGeometricPush { q: Some(q) }
        | SymbolFunction::RightGeometricBlock { q: Some(q) } => {
            if !(*q > 0.0 && *q < 1.0) {
                errs.push(ModelError::ParameterRange(format!(
                    "geometric parameter q={q} outside (0,1)"
                )));
            }
        }
        SymbolFunction::PushAsep { r, l } => {
            if *r < 0.0 || *l < 0.0 || (*r == 0.0 && *l == 0.0) {
                errs.push(ModelError::ParameterRange(format!(
                    "push-asep rates r={r}, l={l} must be nonnegative and not both zero"
                )));
            }
        }
        _ => {}
    }
    if spec.speeds.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        errs.push(ModelError::ParameterRange(
            "speeds must be positive and finite".into(),
        ));
    }
    if spec.lengths.iter().any(|l| *l < 1) {
        errs.push(ModelError::ParameterRange(
            "lengths must be at least 1".into(),
        ));
    }
    if !errs.is_empty() {
        return Err(errs);
    }

    let (th, ri, ro) = (spec.theta, spec.r_inner, spec.r_outer);
    let vmin = spec.min_speed();
    let vmax = spec.max_speed();
    if !(ri > 0.0 && ri < th && th < vmin) {
        errs.push(ModelError::RadiusOrder(format!(
            "need 0 < r_inner ({ri}) < theta ({th}) < min speed ({vmin})"
        )));
    }
    if !(ro > vmax) {
        errs.push(ModelError::RadiusOrder(format!(
            "need r_outer ({ro}) > max speed ({vmax})"
        )));
    }
    if !errs.is_empty() {
        return Err(errs);
    }

    // Poles of φ may not sit anywhere in [r_inner, r_outer]; zeros of φ are
    // tolerated above θ (they obstruct nothing that the kernels integrate
    // over) but not in [r_inner, θ] or on either circle.
    for s in spec.phi.pole_radii() {
        if s >= ri * (1.0 - 1e-12) && s <= ro * (1.0 + 1e-12) {
            errs.push(ModelError::ZeroOnAnnulus(format!(
                "pole of the symbol at radius {s} inside [{ri}, {ro}]"
            )));
        }
    }
    let has_memory = (1..n).any(|l| spec.kappa(l) > 0);
    for s in spec.phi.zero_radii() {
        if s >= ri * (1.0 - 1e-12) && s <= th * (1.0 + 1e-12) {
            errs.push(ModelError::ZeroOnAnnulus(format!(
                "zero of the symbol at radius {s} inside [{ri}, theta={th}]"
            )));
        }
        // with memory the biorthogonal pairings decay at rate θ/s against
        // growth v/θ, so a zero strictly between θ and the speeds is fatal
        if has_memory && s > th * (1.0 + 1e-12) && s < vmax * (1.0 - 1e-9) {
            errs.push(ModelError::ZeroOnAnnulus(format!(
                "zero of the symbol at radius {s} between theta={th} and max speed {vmax}"
            )));
        }
        for circ in [ri, ro] {
            if (s - circ).abs() < 1e-9 * s.max(1.0) {
                errs.push(ModelError::ZeroOnAnnulus(format!(
                    "zero of the symbol at radius {s} sits on a contour circle"
                )));
            }
        }
    }
    // Argument-principle confirmation of the analytic zero/pole bookkeeping.
    for rho in [ri, ro] {
        match winding_number(&spec.phi, rho, 512) {
            Some(wind) => {
                let expected = spec.phi.expected_winding(rho);
                if wind != expected {
                    errs.push(ModelError::ZeroOnAnnulus(format!(
                        "winding count {wind} on |w|={rho} differs from expected {expected}"
                    )));
                }
            }
            None => errs.push(ModelError::ZeroOnAnnulus(format!(
                "symbol vanishes on or too close to |w|={rho}"
            ))),
        }
    }

    // φ(θ) must be real and positive so every normalization weight is positive.
    let pt = spec.phi.eval(Complex64::new(th, 0.0));
    if !(pt.re > 0.0) || pt.im.abs() > 1e-12 * (1.0 + pt.re.abs()) {
        errs.push(ModelError::ParameterRange(format!(
            "symbol at theta must be real positive, got {pt}"
        )));
    }

    // The memory weights a_ℓ must have no Laurent mass above index κ_ℓ; this
    // is what makes the walk's normalization sums finite.
    for l in 1..n {
        let k = spec.kappa(l);
        if k == 0 {
            continue;
        }
        let mid = (th * ro).sqrt();
        let scale = spec.a_fn(l, Complex64::new(th, 0.0)).norm().max(1.0);
        for idx in (k + 1)..=(k + 4) {
            match contour::laurent_coeff(|w| spec.a_fn(l, w), idx, mid, 1e-10, 16384) {
                Ok(c) => {
                    if c.norm() > 1e-8 * scale {
                        errs.push(ModelError::LaurentCutoff(format!(
                            "a_{l} has Laurent coefficient {:.3e} at index {idx} > kappa={k}",
                            c.norm()
                        )));
                        break;
                    }
                }
                Err(_) => {
                    errs.push(ModelError::LaurentCutoff(format!(
                        "Laurent coefficients of a_{l} did not converge at index {idx}"
                    )));
                    break;
                }
            }
        }
    }

    if errs.is_empty() {
        Ok(spec.clone())
    } else {
        Err(errs)
    }
}

/// Default contour radii: the inner radius at the geometric midpoint between θ
/// and the nearest inner zero/pole (θ/2 when there is none), the outer at
/// `min(2·max v, 0.9·nearest pole radius)`, nudged off any zero of φ.
pub fn default_radii(
    phi: &SymbolFunction,
    speeds: &[f64],
    theta: f64,
) -> Result<(f64, f64), ModelError> {
    let vmin = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = speeds.iter().cloned().fold(0.0f64, f64::max);
    if !(theta > 0.0 && theta < vmin) {
        return Err(ModelError::NoValidAnnulus(format!(
            "theta={theta} not inside (0, min speed={vmin})"
        )));
    }
    let mut all: Vec<f64> = phi.zero_radii();
    all.extend(phi.pole_radii());
    let inner_obstacle = all
        .iter()
        .cloned()
        .filter(|s| *s < theta * (1.0 - 1e-9))
        .fold(0.0f64, f64::max);
    let mut r_inner = if inner_obstacle > 0.0 {
        (inner_obstacle * theta).sqrt()
    } else {
        theta / 2.0
    };
    let outer_pole = phi
        .pole_radii()
        .iter()
        .cloned()
        .filter(|s| *s > theta)
        .fold(f64::INFINITY, f64::min);
    let mut r_outer = if outer_pole.is_finite() {
        (2.0 * vmax).min(0.9 * outer_pole)
    } else {
        2.0 * vmax
    };
    // keep the circles clear of any zero/pole radius
    for s in &all {
        while (r_outer - s).abs() < 0.02 * s.max(1.0) {
            r_outer *= 0.97;
        }
        while (r_inner - s).abs() < 0.02 * s.max(1.0) && r_inner > 1e-6 {
            r_inner *= 0.96;
        }
    }
    if r_outer <= vmax * (1.0 + 1e-12) {
        return Err(ModelError::NoValidAnnulus(format!(
            "outer radius forced down to {r_outer} <= max speed {vmax}"
        )));
    }
    if !(r_inner > 0.0 && r_inner < theta) {
        return Err(ModelError::NoValidAnnulus(format!(
            "inner radius {r_inner} not inside (0, theta={theta})"
        )));
    }
    Ok((r_inner, r_outer))
}

/// An initial configuration: strictly decreasing with per-gap spacing at
/// least `max(L_i - 1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub y: Vec<i64>,
}

pub fn validate_initial(y: &[i64], spec: &ModelSpec) -> Result<InitialCondition, ModelError> {
    if y.len() != spec.n() {
        return Err(ModelError::BadRequest(format!(
            "initial condition has {} entries for {} particles",
            y.len(),
            spec.n()
        )));
    }
    for i in 0..y.len().saturating_sub(1) {
        let need = (spec.lengths[i] as i64 - 1).max(1);
        if y[i] - y[i + 1] < need {
            return Err(ModelError::SpacingViolation(i + 1));
        }
    }
    Ok(InitialCondition { y: y.to_vec() })
}

/// Which particles to observe, at which thresholds, at one common time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRequest {
    pub t: f64,
    /// 1-based particle indices, strictly increasing.
    pub indices: Vec<usize>,
    pub thresholds: Vec<f64>,
}

pub fn validate_request(spec: &ModelSpec, req: &ObservationRequest) -> Result<(), ModelError> {
    if req.indices.is_empty() || req.indices.len() != req.thresholds.len() {
        return Err(ModelError::BadRequest(
            "need equally many indices and thresholds, at least one".into(),
        ));
    }
    if !req.indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(ModelError::BadRequest(
            "indices must be strictly increasing".into(),
        ));
    }
    if *req.indices.last().unwrap() > spec.n() || req.indices[0] < 1 {
        return Err(ModelError::BadRequest(format!(
            "indices must lie in [1, {}]",
            spec.n()
        )));
    }
    if req.t < 0.0 || !req.t.is_finite() {
        return Err(ModelError::BadRequest("time must be nonnegative".into()));
    }
    if !spec.phi.continuous_time() && req.t.fract() != 0.0 {
        return Err(ModelError::BadRequest(
            "discrete-time models need integer time".into(),
        ));
    }
    Ok(())
}

/// JSON model-config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub phi: SymbolFunction,
    pub speeds: Vec<f64>,
    pub lengths: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<RadiiConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadiiConfig {
    pub inner: f64,
    pub outer: f64,
}

impl ModelConfig {
    /// Builds the validated spec, filling in θ = (min speed)/2 and default
    /// radii when absent.
    pub fn into_spec(self) -> Result<ModelSpec, Vec<ModelError>> {
        let vmin = self.speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        let theta = self.theta.unwrap_or(vmin / 2.0);
        let (r_inner, r_outer) = match self.radii {
            Some(r) => (r.inner, r.outer),
            None => default_radii(&self.phi, &self.speeds, theta).map_err(|e| vec![e])?,
        };
        let spec = ModelSpec {
            phi: self.phi,
            speeds: self.speeds,
            lengths: self.lengths,
            theta,
            r_inner,
            r_outer,
        };
        validate_spec(&spec)
    }
}
