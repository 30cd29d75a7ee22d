//! Scaling-limit machinery: the parameter set of the 1:2:3 rescaling for
//! mixed sequential/parallel systems, Airy-type continuum kernels, a
//! Brownian first-passage kernel, and diagnostics comparing rescaled discrete
//! kernel factors with their continuum limits.

use crate::kernels::Engine;
use crate::model::{validate_spec, ModelSpec, SymbolFunction};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("invalid scaling parameters: {0}")]
    BadParams(String),
    #[error("kernel evaluation failed: {0}")]
    Kernel(String),
}

/// Parameters of the 1:2:3 rescaling at particle density 1/2: the fraction of
/// parallel particles ρ fixes θ, and (α, β, γ, σ) are pinned by the
/// cancellation of the sub-cubic terms in the rescaled symbol exponent.
#[derive(Debug, Clone, Copy)]
pub struct ScalingParams {
    pub p: f64,
    pub rho: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// drift coefficients of the exponent expansion
    pub a_coef: f64,
    pub b_coef: f64,
}

impl ScalingParams {
    /// The five combinations that must vanish (or equal their pinned values)
    /// for the cubic-exponent limit to emerge. All should be ~1e-12.
    pub fn residuals(&self) -> [f64; 5] {
        let (a, b) = (self.a_coef, self.b_coef);
        let (al, be, rho) = (self.alpha, self.beta, self.rho);
        [
            a + rho * b - 1.0,
            -al * (1.0 + a + rho * b) - be + b,
            al * (1.0 - a * a + rho * b * b) + be - b * b,
            1.0 + a * a - rho * b * b - 2.0 * self.gamma * self.gamma,
            al + be + al * a.powi(3) - (1.0 - rho * al) * b.powi(3)
                - (self.gamma * self.sigma).powi(3),
        ]
    }
}

/// Parameters for blocks of `a_block` sequential particles followed by
/// `b_block` parallel ones.
pub fn mixed_params(p: f64, a_block: f64, b_block: f64) -> Result<ScalingParams, ScalingError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ScalingError::BadParams(format!("p={p} outside (0,1)")));
    }
    if a_block < 0.0 || b_block < 0.0 || a_block + b_block <= 0.0 {
        return Err(ScalingError::BadParams(
            "block lengths must be nonnegative, not both zero".into(),
        ));
    }
    let q = 1.0 - p;
    let rho = b_block / (a_block + b_block);
    let theta = ((p * p * (1.0 - rho) * (1.0 - rho) + 4.0 * q).sqrt() + p * (1.0 - rho)
        - 2.0 * q)
        / (2.0 * q * (2.0 - rho));
    let denom = p * q * (1.0 + theta).powi(2) + rho * (p - q * theta).powi(2);
    let alpha = (p - q * theta).powi(2) / denom;
    let beta = p * (q * (1.0 + theta).powi(2) - 1.0) / denom;
    let gamma = (p * q * theta / (2.0 * (p - q * theta).powi(2))
        + theta * rho / (2.0 * (1.0 + theta).powi(2)))
    .sqrt();
    let a_coef = q * theta / (p - q * theta);
    let b_coef = theta / (1.0 + theta);
    // σ is pinned by the cubic coefficient identity
    let s_cubed = alpha + beta + alpha * a_coef.powi(3) - (1.0 - rho * alpha) * b_coef.powi(3);
    let sigma = s_cubed.cbrt() / gamma;
    Ok(ScalingParams {
        p,
        rho,
        theta,
        alpha,
        beta,
        gamma,
        sigma,
        a_coef,
        b_coef,
    })
}

/// Sequential parameters plus the lattice shift per unit macroscopic length
/// of a single long caterpillar placed at the right of the system.
pub fn long_caterpillar_params(p: f64) -> Result<(ScalingParams, f64), ScalingError> {
    let params = mixed_params(p, 1.0, 0.0)?;
    // b_coef/σ = 2^{-2/3} p^{2/3} q^{-1/3}
    let shift_per_b = params.b_coef / params.sigma;
    Ok((params, shift_per_b))
}

/// Airy function by quadrature along the two rays at angles ±π/3: reduces to
/// `(1/π)∫_0^L e^{-s³/3 - zs/2} sin(π/3 - (√3/2) z s) ds`.
pub fn airy_ai(z: f64) -> f64 {
    let cut = 8.0 + 1.6 * (-z).max(0.0).sqrt();
    airy_ai_with(z, cut, 4000)
}

/// Same with explicit ray truncation and node count (independent-truncation
/// oracle hook).
pub fn airy_ai_with(z: f64, cut: f64, nodes: usize) -> f64 {
    let n = nodes + nodes % 2;
    let h = cut / n as f64;
    let f = |s: f64| -> f64 {
        (-s * s * s / 3.0 - z * s / 2.0).exp()
            * (std::f64::consts::FRAC_PI_3 - 3f64.sqrt() / 2.0 * z * s).sin()
    };
    // composite Simpson
    let mut acc = f(0.0) + f(cut);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0 / std::f64::consts::PI
}

/// The Airy-type continuum kernel
/// `t^{-1/3} e^{2x³/(3t²) - (u-v)x/t} Ai(t^{-1/3}(v-u) + t^{-4/3}x²)`.
pub fn airy_s_kernel(t: f64, x: f64, u: f64, v: f64) -> f64 {
    assert!(t != 0.0, "the kernel needs a nonzero time");
    let c = t.cbrt();
    let arg = (v - u) / c + x * x / (t * c);
    (1.0 / c) * (2.0 * x.powi(3) / (3.0 * t * t) - (u - v) * x / t).exp() * airy_ai(arg)
}

/// Heat kernel with diffusivity 2 (`e^{y∂²}` for y > 0).
pub fn heat_kernel(y: f64, u: f64, v: f64) -> f64 {
    assert!(y > 0.0);
    (-((u - v) * (u - v)) / (4.0 * y)).exp() / (4.0 * std::f64::consts::PI * y).sqrt()
}

/// One-sided piecewise-linear barrier: finite on `s >= 0`, evaluated by
/// interpolation between knots and extended by the last slope.
#[derive(Debug, Clone)]
pub struct Barrier {
    /// strictly increasing in the first coordinate, starting at s = 0
    pub knots: Vec<(f64, f64)>,
}

impl Barrier {
    pub fn flat(level: f64) -> Self {
        Barrier {
            knots: vec![(0.0, level), (1.0, level)],
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let k = &self.knots;
        if s <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if s <= w[1].0 {
                let f = (s - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1);
            }
        }
        let last = k[k.len() - 1];
        let prev = k[k.len() - 2];
        let slope = (last.1 - prev.1) / (last.0 - prev.0);
        last.1 + slope * (s - last.0)
    }

    pub fn shifted(&self, dz: f64) -> Self {
        Barrier {
            knots: self.knots.iter().map(|(s, z)| (*s, z + dz)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BrownianOpts {
    pub dt: f64,
    pub horizon: f64,
    /// lower edge of the spatial grid relative to min(start, barrier)
    pub depth: f64,
}

impl Default for BrownianOpts {
    fn default() -> Self {
        BrownianOpts {
            dt: 1e-3,
            horizon: 3.0,
            depth: 10.0,
        }
    }
}

/// First-passage mass of a diffusivity-2 Brownian motion into the epigraph of
/// the barrier, discretized with time step `dt` and spatial step `sqrt(dt)`:
/// returns `(s_k, z_j, mass)` triples plus the surviving mass.
pub fn brownian_epi_passage(
    barrier: &Barrier,
    start: f64,
    opts: &BrownianOpts,
) -> (Vec<(f64, f64, f64)>, f64) {
    let dz = opts.dt.sqrt();
    if start >= barrier.eval(0.0) {
        return (vec![(0.0, start, 1.0)], 0.0);
    }
    let bar_min = (0..=((opts.horizon / opts.dt) as usize))
        .map(|k| barrier.eval(k as f64 * opts.dt))
        .fold(f64::INFINITY, f64::min);
    let lo = start.min(bar_min) - opts.depth;
    let hi = (0..=((opts.horizon / opts.dt) as usize))
        .map(|k| barrier.eval(k as f64 * opts.dt))
        .fold(start, f64::max)
        + 3.0 * dz;
    let n = ((hi - lo) / dz).ceil() as usize + 1;
    let grid = |j: usize| lo + j as f64 * dz;
    // Gaussian step weights, variance 2 dt
    let sd = (2.0 * opts.dt).sqrt();
    let reach = (6.0 * sd / dz).ceil() as i64;
    let weights: Vec<f64> = (-reach..=reach)
        .map(|k| (-((k as f64 * dz) * (k as f64 * dz)) / (2.0 * sd * sd)).exp())
        .collect();
    let wsum: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / wsum).collect();

    let mut density = vec![0.0f64; n];
    let j0 = ((start - lo) / dz).round() as usize;
    density[j0.min(n - 1)] = 1.0;
    let mut hits: Vec<(f64, f64, f64)> = Vec::new();
    let steps = (opts.horizon / opts.dt).round() as usize;
    let mut fresh = vec![0.0f64; n];
    // discrete-monitoring continuity correction: a barrier checked only on
    // the time grid is crossed less often; shifting it down by
    // ζ(1/2)/√(2π)·σ_step removes the O(√dt) bias
    let correction = 0.5826 * sd;
    for k in 1..=steps {
        let s = k as f64 * opts.dt;
        let bar = barrier.eval(s) - correction;
        fresh.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let m = density[j];
            if m == 0.0 {
                continue;
            }
            for (o, w) in weights.iter().enumerate() {
                let tgt = j as i64 + o as i64 - reach;
                if tgt >= 0 && (tgt as usize) < n {
                    fresh[tgt as usize] += m * w;
                }
            }
        }
        for j in 0..n {
            if grid(j) >= bar && fresh[j] > 0.0 {
                hits.push((s, grid(j), fresh[j]));
                fresh[j] = 0.0;
            }
        }
        std::mem::swap(&mut density, &mut fresh);
    }
    let survive: f64 = density.iter().sum();
    (hits, survive)
}

/// `E[ S_{t, x-τ}(B(τ), u) 1{τ<∞} ]` for the epigraph passage time τ of a
/// diffusivity-2 Brownian motion, truncated at the horizon.
pub fn brownian_hitting_kernel(
    t: f64,
    x: f64,
    barrier: &Barrier,
    v: f64,
    u: f64,
    opts: &BrownianOpts,
) -> f64 {
    let (hits, _) = brownian_epi_passage(barrier, v, opts);
    hits.iter()
        .map(|(s, z, m)| m * airy_s_kernel(t, x - s, *z, u))
        .sum()
}

/// Grid comparison of a rescaled discrete kernel factor against its
/// continuum limit.
#[derive(Debug, Clone)]
pub struct LimitKernelGrid {
    pub points: Vec<(f64, f64)>,
    pub discrete: Vec<f64>,
    pub continuum: Vec<f64>,
    pub sup_diff: f64,
}

/// Mixed sequential/parallel model spec at density 1/2 with `n` particles.
fn mixed_spec(p: f64, a_block: usize, b_block: usize, n: usize, theta: f64) -> ModelSpec {
    let v = p / (1.0 - p);
    let period = a_block + b_block;
    let lengths: Vec<u32> = (0..n)
        .map(|i| if period == 0 || i % period < a_block { 1 } else { 2 })
        .collect();
    let r_outer = if v < 1.0 { (1.0 + v) / 2.0 } else { 2.0 * v + 1.0 };
    validate_spec(&ModelSpec {
        phi: SymbolFunction::RightBernoulli { p: Some(p) },
        speeds: vec![v; n],
        lengths,
        theta,
        r_inner: theta / 2.0,
        r_outer,
    })
    .expect("mixed scaling spec must validate")
}

fn round_i(x: f64) -> i64 {
    x.round() as i64
}

/// Heat-kernel factor: `γσ ε^{-1/2} Q_{(n_i, n_j]}` at the scaled lattice
/// points against the diffusivity-2 heat kernel over `x_i - x_j`.
pub fn heat_factor_grid(
    p: f64,
    a_block: f64,
    b_block: f64,
    t_macro: f64,
    x_i: f64,
    x_j: f64,
    us: &[f64],
    epsilon: f64,
) -> Result<LimitKernelGrid, ScalingError> {
    assert!(x_i > x_j, "need x_i > x_j for a forward heat factor");
    let pr = mixed_params(p, a_block, b_block)?;
    let (th, gamma, sigma) = (pr.theta, pr.gamma, pr.sigma);
    let e32 = epsilon.powf(-1.5);
    let e1 = 1.0 / epsilon;
    let e12 = epsilon.powf(-0.5);
    let t = round_i(e32 * t_macro) as f64;
    let t_eff = t / e32;
    let ni = round_i(pr.alpha * e32 * t_eff - sigma * sigma * e1 * x_i);
    let nj = round_i(pr.alpha * e32 * t_eff - sigma * sigma * e1 * x_j);
    if ni < 1 || nj <= ni {
        return Err(ScalingError::BadParams(format!(
            "epsilon too large: indices {ni}, {nj}"
        )));
    }
    // effective macroscopic positions after rounding
    let xi_eff = (pr.alpha * e32 * t_eff - ni as f64) / (sigma * sigma * e1);
    let xj_eff = (pr.alpha * e32 * t_eff - nj as f64) / (sigma * sigma * e1);
    let spec = mixed_spec(p, a_block.round() as usize, b_block.round() as usize, nj as usize, th);
    let engine = Engine::new(&spec, t).map_err(|e| ScalingError::Kernel(e.to_string()))?;
    let kernel = engine.q_block(ni as usize, nj as usize);
    let lattice = |xm: f64, u: f64| -> i64 {
        round_i(pr.beta * e32 * t_eff + 2.0 * sigma * sigma * e1 * xm + gamma * sigma * e12 * u)
    };
    let u_eff = |xm: f64, z: i64| -> f64 {
        (z as f64 - pr.beta * e32 * t_eff - 2.0 * sigma * sigma * e1 * xm) / (gamma * sigma * e12)
    };
    let mut points = Vec::new();
    let mut discrete = Vec::new();
    let mut continuum = Vec::new();
    let mut sup = 0.0f64;
    for ui in us {
        for uj in us {
            let zi = lattice(x_i, *ui);
            let zj = lattice(x_j, *uj);
            let d = gamma * sigma * e12
                * kernel
                    .eval(zi, zj)
                    .map_err(|e| ScalingError::Kernel(e.to_string()))?;
            let c = heat_kernel(xi_eff - xj_eff, u_eff(x_i, zi), u_eff(x_j, zj));
            sup = sup.max((d - c).abs());
            points.push((*ui, *uj));
            discrete.push(d);
            continuum.push(c);
        }
    }
    Ok(LimitKernelGrid {
        points,
        discrete,
        continuum,
        sup_diff: sup,
    })
}

/// Time-reversal factor: `θγσ ε^{-1/2} (1+θ)^{-t} S_{-n_i}(y, x_i)` against
/// the Airy-type kernel `S_{-t, x_i}(u_i, u)`; for a long leading caterpillar
/// (`cat_len_b > 0`) the continuum argument acquires the lattice shift.
pub fn time_reversal_factor_grid(
    p: f64,
    a_block: f64,
    b_block: f64,
    cat_len_b: f64,
    t_macro: f64,
    x_i: f64,
    us: &[f64],
    epsilon: f64,
) -> Result<LimitKernelGrid, ScalingError> {
    let pr = if cat_len_b > 0.0 {
        mixed_params(p, 1.0, 0.0)?
    } else {
        mixed_params(p, a_block, b_block)?
    };
    let (th, gamma, sigma) = (pr.theta, pr.gamma, pr.sigma);
    let e32 = epsilon.powf(-1.5);
    let e1 = 1.0 / epsilon;
    let e12 = epsilon.powf(-0.5);
    let t = round_i(e32 * t_macro) as f64;
    // effective macroscopic parameters after lattice rounding
    let t_eff = t / e32;
    let ni = round_i(pr.alpha * e32 * t_eff - sigma * sigma * e1 * x_i);
    if ni < 2 {
        return Err(ScalingError::BadParams("epsilon too large".into()));
    }
    let xi_eff = (pr.alpha * e32 * t_eff - ni as f64) / (sigma * sigma * e1);
    let (spec, shift) = if cat_len_b > 0.0 {
        let m_len = round_i(cat_len_b * e12).max(2) as u32;
        let v = p / (1.0 - p);
        let mut lengths = vec![1u32; ni as usize];
        lengths[0] = m_len;
        let r_outer = if v < 1.0 { (1.0 + v) / 2.0 } else { 2.0 * v + 1.0 };
        let spec = validate_spec(&ModelSpec {
            phi: SymbolFunction::RightBernoulli { p: Some(p) },
            speeds: vec![v; ni as usize],
            lengths,
            theta: th,
            r_inner: th / 2.0,
            r_outer,
        })
        .expect("long-caterpillar spec must validate");
        // lattice shift per unit macroscopic caterpillar length, with the
        // rounded length fed back for a fair comparison
        let b_eff = (m_len as f64) * epsilon.sqrt();
        (spec, pr.b_coef / sigma * b_eff)
    } else {
        (
            mixed_spec(p, a_block.round() as usize, b_block.round() as usize, ni as usize, th),
            0.0,
        )
    };
    let engine = Engine::new(&spec, t).map_err(|e| ScalingError::Kernel(e.to_string()))?;
    let kernel = engine.s_minus(ni as usize);
    // normalization from completing the constants at the saddle w = θ(1+s):
    // γσ ε^{-1/2} (1+θ)^{-t} / a_{n_i}(θ)
    let a_n_theta = spec
        .a_fn(ni as usize, num_complex::Complex64::new(th, 0.0))
        .re;
    let norm = gamma * sigma * e12 * (1.0 + th).powf(-t) / a_n_theta;
    let lattice_x = |u: f64| -> i64 {
        round_i(pr.beta * e32 * t_eff + 2.0 * sigma * sigma * e1 * x_i + gamma * sigma * e12 * u)
    };
    let lattice_y = |u: f64| -> i64 { round_i(gamma * sigma * e12 * u) };
    let mut points = Vec::new();
    let mut discrete = Vec::new();
    let mut continuum = Vec::new();
    let mut sup = 0.0f64;
    for ui in us {
        for u in us {
            let xi = lattice_x(*ui);
            let yy = lattice_y(*u);
            let ui_eff = (xi as f64
                - pr.beta * e32 * t_eff
                - 2.0 * sigma * sigma * e1 * x_i)
                / (gamma * sigma * e12);
            let u_eff = yy as f64 / (gamma * sigma * e12);
            let d = norm
                * kernel
                    .eval(yy, xi)
                    .map_err(|e| ScalingError::Kernel(e.to_string()))?;
            // completing the cube in the rescaled symbol exponent gives the
            // positive-time kernel with the outgoing argument first
            let c = airy_s_kernel(t_eff, xi_eff, ui_eff + shift, u_eff);
            sup = sup.max((d - c).abs());
            points.push((*ui, *u));
            discrete.push(d);
            continuum.push(c);
        }
    }
    Ok(LimitKernelGrid {
        points,
        discrete,
        continuum,
        sup_diff: sup,
    })
}

/// Exact exponent of the rescaled time-reversal symbol at the substituted
/// contour point, minus its cubic limit. The sub-cubic coefficients cancel by
/// the parameter choices, so the residual is O(ε^{1/2}) — evaluating this at
/// tiny ε is a direct numerical probe of those cancellations.
pub fn exponent_expansion_residual(
    pr: &ScalingParams,
    t_macro: f64,
    x_macro: f64,
    u_i: f64,
    u: f64,
    v: f64,
    epsilon: f64,
) -> f64 {
    let gs = pr.gamma * pr.sigma;
    let e32 = epsilon.powf(-1.5);
    let e1 = 1.0 / epsilon;
    let e12 = epsilon.powf(-0.5);
    let t = e32 * t_macro;
    let n_i = pr.alpha * e32 * t_macro - pr.sigma * pr.sigma * e1 * x_macro;
    let x_minus_y = pr.beta * e32 * t_macro
        + 2.0 * pr.sigma * pr.sigma * e1 * x_macro
        + gs * e12 * (u_i - u);
    let s = epsilon.sqrt() * v / gs;
    let exact = -(x_minus_y + n_i + 1.0) * (1.0 + s).ln() + n_i * (1.0 - pr.a_coef * s).ln()
        + (t - pr.rho * n_i) * (1.0 + pr.b_coef * s).ln();
    let limit = -t_macro * v.powi(3) / 3.0 + x_macro * v * v - (u_i - u) * v;
    exact - limit
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sequential_closed_forms() {
        let p = 0.5;
        let q = 0.5;
        let pr = mixed_params(p, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(pr.theta, p / (2.0 * q), epsilon = 1e-14);
        assert_abs_diff_eq!(pr.alpha, p * q / (1.0 + q).powi(2), epsilon = 1e-14);
        assert_abs_diff_eq!(pr.beta, p * p / (1.0 + q).powi(2), epsilon = 1e-14);
        assert_abs_diff_eq!(pr.gamma, 1.0, epsilon = 1e-14);
        let sigma_want = 2f64.powf(2.0 / 3.0) * (p * q).powf(1.0 / 3.0) / (1.0 + q);
        assert_abs_diff_eq!(pr.sigma, sigma_want, epsilon = 1e-13);
        // numeric example: alpha = beta = 1/9 at p = 1/2
        assert_abs_diff_eq!(pr.alpha, 1.0 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pr.beta, 1.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn parallel_closed_forms() {
        let p = 0.36;
        let q = 1.0 - p;
        let pr = mixed_params(p, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(pr.theta, (1.0 - q.sqrt()) / q.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(pr.alpha, (1.0 - q.sqrt()) / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(pr.beta, 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(pr.gamma, q.powf(0.25), epsilon = 1e-13);
        let sigma_want = 2f64.powf(-1.0 / 3.0) * p.powf(1.0 / 3.0) * q.powf(-1.0 / 12.0);
        assert_abs_diff_eq!(pr.sigma, sigma_want, epsilon = 1e-13);
    }

    #[test]
    fn random_parameter_residuals_vanish() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let p = rng.gen_range(0.05..0.95);
            let a = rng.gen_range(0.0..4.0);
            let b = rng.gen_range(0.0..4.0);
            if a + b < 0.1 {
                continue;
            }
            let pr = mixed_params(p, a, b).unwrap();
            for r in pr.residuals() {
                assert!(r.abs() < 1e-12, "residual {r} at p={p} a={a} b={b}");
            }
        }
    }

    #[test]
    fn long_caterpillar_shift_constant() {
        let p = 0.5;
        let (pr, shift) = long_caterpillar_params(p).unwrap();
        assert_abs_diff_eq!(shift, 0.5, epsilon = 1e-13);
        // same constant through the alternative expression θ/((1+θ)σ)
        let alt = pr.theta / ((1.0 + pr.theta) * pr.sigma);
        assert_abs_diff_eq!(shift, alt, epsilon = 1e-13);
        // drift coefficient below one means the shift contracts
        assert!(pr.b_coef < 1.0);
        let seq = mixed_params(p, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(pr.theta, seq.theta, epsilon = 1e-15);
    }

    #[test]
    fn airy_reference_values() {
        // Ai(0) = 3^{-2/3} / Γ(2/3)
        assert_abs_diff_eq!(airy_ai(0.0), 0.3550280538878172, epsilon = 1e-10);
        assert_abs_diff_eq!(airy_ai(1.0), 0.1352924163128814, epsilon = 1e-10);
        assert_abs_diff_eq!(airy_ai(-1.0), 0.5355608832923521, epsilon = 1e-10);
        // independent truncation
        let a = airy_ai_with(0.5, 9.0, 3000);
        let b = airy_ai_with(0.5, 12.5, 5000);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        // monotone decay on the positive axis
        let mut prev = airy_ai(1.0);
        for k in 2..8 {
            let cur = airy_ai(k as f64);
            assert!(cur < prev && cur > 0.0);
            prev = cur;
        }
    }

    #[test]
    fn airy_kernel_at_zero_offset() {
        let (t, u, v) = (1.7, 0.3, -0.2);
        let got = airy_s_kernel(t, 0.0, u, v);
        let want = t.cbrt().recip() * airy_ai((v - u) / t.cbrt());
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn exponent_cancellations_at_tiny_epsilon() {
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (2.0, 3.0)] {
            let pr = mixed_params(0.5, a, b).unwrap();
            // fit the residual over widely spaced ε to a basis including the
            // singular powers; those coefficients must come out at noise level
            let eps = [1e-6, 1e-5, 1e-4, 4e-4, 1.6e-3];
            let h: Vec<f64> = eps
                .iter()
                .map(|e| exponent_expansion_residual(&pr, 1.0, 0.3, 0.4, -0.2, 1.0, *e))
                .collect();
            let basis = crate::linalg::Mat::from_fn(5, 5, |i, j| match j {
                0 => 1.0 / eps[i],
                1 => eps[i].powf(-0.5),
                2 => eps[i].sqrt(),
                3 => eps[i],
                _ => eps[i].powf(1.5),
            });
            let (coef, _) = crate::linalg::lstsq(&basis, &h);
            assert!(
                coef[0].abs() < 1e-9,
                "rho {}: epsilon^-1 coefficient {}",
                pr.rho,
                coef[0]
            );
            assert!(
                coef[1].abs() < 1e-8,
                "rho {}: epsilon^-1/2 coefficient {}",
                pr.rho,
                coef[1]
            );
        }
    }

    #[test]
    fn brownian_passage_mass_matches_reflection_principle() {
        let opts = BrownianOpts {
            dt: 1e-3,
            horizon: 1.0,
            depth: 8.0,
        };
        let start = -1.0;
        let (hits, _) = brownian_epi_passage(&Barrier::flat(0.0), start, &opts);
        let mass: f64 = hits.iter().map(|(_, _, m)| m).sum();
        // P(max B <= |start|) over [0,1] with diffusivity 2
        let zz = (-start) / (2.0 * opts.horizon).sqrt() / 2f64.sqrt();
        let want = 1.0 - erf_approx(zz);
        assert!(
            (mass - want).abs() < 5e-3,
            "passage mass {mass} vs reflection value {want}"
        );
    }

    fn erf_approx(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        if x >= 0.0 {
            y
        } else {
            -y
        }
    }

    #[test]
    fn immediate_passage_above_barrier() {
        let opts = BrownianOpts::default();
        let v = 0.7;
        let got = brownian_hitting_kernel(-1.2, 0.4, &Barrier::flat(0.0), v, -0.3, &opts);
        let want = airy_s_kernel(-1.2, 0.4, v, -0.3);
        assert_abs_diff_eq!(got, want, epsilon = 1e-14);
    }

    #[test]
    fn deep_start_is_dominated_by_crossing_probability() {
        let opts = BrownianOpts {
            dt: 2e-3,
            horizon: 1.5,
            depth: 6.0,
        };
        let v = -6.0;
        let (hits, _) = brownian_epi_passage(&Barrier::flat(0.0), v, &opts);
        let mass: f64 = hits.iter().map(|(_, _, m)| m).sum();
        let bound = (-v * v / (4.0 * opts.horizon)).exp();
        assert!(mass <= 2.0 * bound + 1e-6, "mass {mass} vs scale {bound}");
        let val = brownian_hitting_kernel(-1.0, 0.2, &Barrier::flat(0.0), v, 0.0, &opts);
        assert!(val.abs() <= 2.0 * bound);
    }

    #[test]
    fn refinement_is_stable() {
        let coarse = BrownianOpts {
            dt: 2e-3,
            horizon: 1.2,
            depth: 8.0,
        };
        let fine = BrownianOpts {
            dt: 1e-3,
            ..coarse
        };
        let barrier = Barrier {
            knots: vec![(0.0, 0.3), (0.5, 0.1), (1.2, 0.4)],
        };
        let a = brownian_hitting_kernel(-1.5, 0.3, &barrier, -0.8, 0.1, &coarse);
        let b = brownian_hitting_kernel(-1.5, 0.3, &barrier, -0.8, 0.1, &fine);
        assert!((a - b).abs() < 1e-3, "refinement moved {a} -> {b}");
    }

    #[test]
    fn shift_conjugation_cancels_in_brownian_product() {
        // the shifted-barrier kernel with shifted arguments equals the
        // unshifted one when the grids are aligned with the shift
        let opts = BrownianOpts {
            dt: 1e-3,
            horizon: 1.0,
            depth: 8.0,
        };
        let dz = opts.dt.sqrt();
        let shift = 32.0 * dz;
        let barrier = Barrier {
            knots: vec![(0.0, 0.2), (0.6, 0.5), (1.0, 0.1)],
        };
        let (t, x, v, u) = (-1.3, 0.25, -0.6, 0.15);
        let base = brownian_hitting_kernel(t, x, &barrier, v, u, &opts);
        let conj = brownian_hitting_kernel(t, x, &barrier.shifted(shift), v + shift, u + shift, &opts);
        assert_abs_diff_eq!(base, conj, epsilon = 1e-12 * (1.0 + base.abs()));
    }
}
