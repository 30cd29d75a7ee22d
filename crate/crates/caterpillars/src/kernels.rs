//! The lattice kernels: one-step and composed transition kernels, their
//! inverses, the extended variants over the speed-enclosing contour, the time
//! factor, and the Schütz-type determinant entries.
//!
//! Every kernel here is a convolution kernel `K(x,y) = F(x-y)` with
//! `F(d) = (1/2πi) ∮ θ^d w^{-d-1} g(w) dw`, so evaluation reduces to Laurent
//! coefficient extraction of the symbol `g` on a suitable circle. Values on a
//! displacement range share quadrature nodes.

use crate::contour::{self, Circle, ContourError};
use crate::linalg::Mat;
use crate::model::{validate_request, ModelError, ModelSpec, ObservationRequest, SymbolFunction};
use num_complex::Complex64;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] ContourError),
    #[error("kernel values are not real: residual imaginary part {0:.3e}")]
    NotReal(f64),
    #[error("window too small: {0}")]
    WindowTooSmall(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("no valid contour around the speeds: {0}")]
    NoSpeedContour(String),
}

type Sym = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;

#[derive(Clone)]
enum ContourChoice {
    /// Circles centered at the origin with radius anywhere in (lo, hi);
    /// negative displacements are best evaluated near `lo`, positive ones
    /// near `hi`, where the respective Laurent tails are smallest.
    Annulus { lo: f64, hi: f64 },
    /// Positively oriented circles enclosing a block of speeds; the family
    /// spans tight to loose so the per-displacement best value can win.
    Fixed(Vec<Circle>),
}

/// A convolution kernel on the lattice. `reversed` swaps the roles of the two
/// arguments: `eval(x, y) = F(y - x)`.
#[derive(Clone)]
pub struct LatticeKernel {
    symbol: Sym,
    contour: ContourChoice,
    theta: f64,
    reversed: bool,
    tol: f64,
    max_nodes: usize,
    /// Geometric tail rates (left tail as x-y -> -inf, right tail as
    /// x-y -> +inf); advisory, used to size truncation windows.
    pub decay_hint: (f64, f64),
    /// `eval(x, y) = 0` whenever `y > x + s`, when such an `s` exists.
    pub support_shift: Option<i64>,
}

impl LatticeKernel {
    /// Kernel values on a displacement range `d = x - y` (or `y - x` if
    /// reversed). Imaginary parts must cancel to rounding; they are checked
    /// and discarded.
    pub fn values(&self, d_lo: i64, d_hi: i64) -> Result<Vec<f64>, KernelError> {
        let mut circles: Vec<Circle> = match &self.contour {
            ContourChoice::Fixed(family) => family.clone(),
            ContourChoice::Annulus { lo, hi } => self
                .candidate_radii(*lo, *hi)
                .into_iter()
                .map(Circle::origin)
                .collect(),
        };
        // drop circles on which θ^d w^{-d} overflows for the requested range
        let span = d_lo.unsigned_abs().max(d_hi.unsigned_abs()) as f64;
        circles.retain(|c| {
            let lo_ratio = (self.theta / (c.center.norm() + c.radius)).ln().abs();
            let hi_ratio = (self.theta / c.min_abs().max(1e-12)).ln().abs();
            span * lo_ratio.max(hi_ratio) < 640.0
        });
        if circles.is_empty() {
            return Err(KernelError::Quadrature(ContourError::NotConverged {
                value: Complex64::new(0.0, 0.0),
                est_error: f64::INFINITY,
            }));
        }
        let count = (d_hi - d_lo + 1) as usize;
        let mut best: Vec<(Complex64, f64)> =
            vec![(Complex64::new(0.0, 0.0), f64::INFINITY); count];
        for c in &circles {
            let (v, ests) = contour::displacement_values(
                |w| (self.symbol)(w),
                c,
                self.theta,
                d_lo,
                d_hi,
                self.tol,
                self.max_nodes,
            );
            for (slot, (val, est)) in best.iter_mut().zip(v.iter().zip(ests.iter())) {
                if *est < slot.1 {
                    *slot = (*val, *est);
                }
            }
        }
        // accept per-displacement relative convergence somewhat above the
        // target tolerance: deep windows on fixed contours bottom out at the
        // cancellation floor of the growing entries
        let accept = (100.0 * self.tol).max(3e-10);
        if let Some((_, bad)) = best.iter().find(|(_, e)| *e > accept) {
            return Err(KernelError::Quadrature(ContourError::NotConverged {
                value: Complex64::new(0.0, 0.0),
                est_error: *bad,
            }));
        }
        let mut out = Vec::with_capacity(count);
        for (v, _) in best {
            if v.im.abs() > 1e-9 * (1.0 + v.re.abs()) {
                return Err(KernelError::NotReal(v.im.abs()));
            }
            out.push(v.re);
        }
        Ok(out)
    }

    fn candidate_radii(&self, lo: f64, hi: f64) -> Vec<f64> {
        let th = self.theta;
        let hi_eff = if hi.is_finite() { hi } else { 4.0 * th };
        let mut radii = Vec::new();
        for f in [0.05, 0.2, 0.5, 0.8, 0.95] {
            radii.push(lo + f * (th - lo));
        }
        // the decaying tail is best resolved close under the first
        // singularity, where the Laurent remainder is smallest
        for f in [0.3, 0.6, 0.9, 0.97, 0.995] {
            radii.push(th + f * (hi_eff - th));
        }
        if !hi.is_finite() {
            radii.push(8.0 * th);
        }
        radii.retain(|r| *r > lo && (*r < hi || !hi.is_finite()) && *r > 0.0);
        radii
    }

    pub fn eval(&self, x: i64, y: i64) -> Result<f64, KernelError> {
        let d = if self.reversed { y - x } else { x - y };
        Ok(self.values(d, d)?[0])
    }

    /// Dense window of entries `(x, y)` for `x` in `rows`, `y` in `cols`
    /// (both ranges inclusive).
    pub fn window_matrix(&self, rows: (i64, i64), cols: (i64, i64)) -> Result<Mat, KernelError> {
        let (rlo, rhi) = rows;
        let (clo, chi) = cols;
        assert!(rlo <= rhi && clo <= chi);
        let (d_lo, d_hi) = if self.reversed {
            (clo - rhi, chi - rlo)
        } else {
            (rlo - chi, rhi - clo)
        };
        let vals = self.values(d_lo, d_hi)?;
        let nr = (rhi - rlo + 1) as usize;
        let nc = (chi - clo + 1) as usize;
        Ok(Mat::from_fn(nr, nc, |i, j| {
            let x = rlo + i as i64;
            let y = clo + j as i64;
            let d = if self.reversed { y - x } else { x - y };
            vals[(d - d_lo) as usize]
        }))
    }

    /// Override the evaluation tolerance.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Evaluation context for one validated model at one time `t`: precomputed
/// normalization weights, the contour around the speeds, and tolerances.
pub struct Engine {
    pub spec: Arc<ModelSpec>,
    pub t: f64,
    pub tol: f64,
    pub max_nodes: usize,
    /// `α_ℓ = (v_ℓ-θ)/(a_{ℓ-1}(θ)·θ)`, 1-based.
    alpha: Vec<f64>,
    /// `α⁺_ℓ = (v_ℓ-θ)/(a_ℓ(θ)·θ)`, 1-based.
    alpha_plus: Vec<f64>,
    pub gamma_v: Circle,
}

impl Engine {
    pub fn new(spec: &ModelSpec, t: f64) -> Result<Engine, KernelError> {
        if !spec.phi.continuous_time() && t.fract() != 0.0 {
            return Err(KernelError::Model(ModelError::BadRequest(
                "discrete-time models need integer time".into(),
            )));
        }
        if t < 0.0 {
            return Err(KernelError::Model(ModelError::BadRequest(
                "time must be nonnegative".into(),
            )));
        }
        let n = spec.n();
        let th = spec.theta;
        let theta_c = Complex64::new(th, 0.0);
        let mut alpha = vec![0.0; n + 1];
        let mut alpha_plus = vec![0.0; n + 1];
        for l in 1..=n {
            let a_prev = spec.a_fn(l - 1, theta_c).re;
            let a_cur = spec.a_fn(l, theta_c).re;
            alpha[l] = (spec.speed(l) - th) / (a_prev * th);
            alpha_plus[l] = (spec.speed(l) - th) / (a_cur * th);
        }
        let gamma_v = speeds_contour(spec, &spec.speeds)?[1];
        Ok(Engine {
            spec: Arc::new(spec.clone()),
            t,
            tol: contour::DEFAULT_TOL,
            max_nodes: contour::DEFAULT_MAX_NODES,
            alpha,
            alpha_plus,
            gamma_v,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn alpha(&self, l: usize) -> f64 {
        self.alpha[l]
    }

    pub fn alpha_plus(&self, l: usize) -> f64 {
        self.alpha_plus[l]
    }

    pub fn alpha_prod(&self, lo: usize, hi: usize) -> f64 {
        (lo..=hi).map(|l| self.alpha[l]).product()
    }

    pub fn alpha_plus_prod(&self, lo: usize, hi: usize) -> f64 {
        (lo..=hi).map(|l| self.alpha_plus[l]).product()
    }

    /// Contour family around the speeds of particles `lo+1 ..= hi`.
    fn gamma_family(&self, lo: usize, hi: usize) -> Vec<Circle> {
        let speeds: Vec<f64> = (lo + 1..=hi).map(|i| self.spec.speed(i)).collect();
        speeds_contour(&self.spec, &speeds).expect("validated spec must admit a speed contour")
    }

    /// Radii of the zeros/poles of φ adjacent to θ: everything built from
    /// `1/a_ℓ`, `ψ` or `1/ψ` must keep its contour between these.
    fn branch_bounds(&self) -> (f64, f64) {
        let th = self.spec.theta;
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        for s in self
            .spec
            .phi
            .zero_radii()
            .into_iter()
            .chain(self.spec.phi.pole_radii())
        {
            if s < th {
                lo = lo.max(s);
            } else {
                hi = hi.min(s);
            }
        }
        (lo, hi)
    }

    fn annulus(&self, needs_branch: bool, pole_speeds: &[usize]) -> ContourChoice {
        let th = self.spec.theta;
        let (blo, bhi) = if needs_branch {
            self.branch_bounds()
        } else {
            (0.0, f64::INFINITY)
        };
        let lo = blo.max(th / 50.0);
        let mut hi = bhi;
        for l in pole_speeds {
            hi = hi.min(self.spec.speed(*l));
        }
        ContourChoice::Annulus { lo, hi }
    }

    fn mindeg_a(&self, l: usize) -> Option<i64> {
        let k = self.spec.kappa(l);
        if k == 0 {
            return Some(0);
        }
        let per = match self.spec.phi {
            SymbolFunction::RightBernoulli { .. } => Some(0i64),
            SymbolFunction::RightGeometricBlock { .. } => Some(0),
            SymbolFunction::LeftBernoulliPush { .. } => Some(-1),
            _ => None,
        };
        per.map(|p| p * k)
    }

    fn make(
        &self,
        symbol: Sym,
        contour: ContourChoice,
        reversed: bool,
        support_shift: Option<i64>,
    ) -> LatticeKernel {
        let th = self.spec.theta;
        let decay_hint = match &contour {
            ContourChoice::Annulus { lo, hi } => {
                let hi_eff = if hi.is_finite() { *hi } else { 8.0 * th };
                (
                    (lo / th).clamp(1e-6, 1.0 - 1e-9),
                    (th / hi_eff).clamp(1e-6, 1.0 - 1e-9),
                )
            }
            ContourChoice::Fixed(family) => {
                let widest = family
                    .iter()
                    .map(|c| c.min_abs())
                    .fold(0.0f64, f64::max)
                    .max(th * 1.0001);
                (1.0 - 1e-9, (th / widest).clamp(1e-6, 1.0 - 1e-9))
            }
        };
        LatticeKernel {
            symbol,
            contour,
            theta: th,
            reversed,
            tol: self.tol,
            max_nodes: self.max_nodes,
            decay_hint,
            support_shift,
        }
    }

    /// One-step transition kernel of particle `l` (the memory of the particle
    /// to its right enters through `a_{l-1}`).
    pub fn q_step(&self, l: usize) -> LatticeKernel {
        let spec = self.spec.clone();
        let a = self.alpha[l];
        let v = spec.speed(l);
        let sym: Sym =
            Arc::new(move |w| a * w * spec.a_fn(l - 1, w) / (Complex64::new(v, 0.0) - w));
        let shift = self.mindeg_a(l - 1).map(|m| -1 - m);
        let needs = self.spec.kappa(l - 1) > 0;
        self.make(sym, self.annulus(needs, &[l]), false, shift)
    }

    pub fn q_step_inv(&self, l: usize) -> LatticeKernel {
        let spec = self.spec.clone();
        let a = self.alpha[l];
        let v = spec.speed(l);
        let sym: Sym =
            Arc::new(move |w| (Complex64::new(v, 0.0) - w) / (a * w * spec.a_fn(l - 1, w)));
        let needs = self.spec.kappa(l - 1) > 0;
        self.make(sym, self.annulus(needs, &[]), false, None)
    }

    /// Composed transition kernel over particles `lo+1 ..= hi` (identity when
    /// `lo == hi`).
    pub fn q_block(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo <= hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_prod(lo + 1, hi);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(alphas, 0.0);
            for i in lo + 1..=hi {
                g *= w * spec.a_fn(i - 1, w) / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            g
        });
        let poles: Vec<usize> = (lo + 1..=hi).collect();
        let needs = (lo..hi).any(|i| self.spec.kappa(i) > 0);
        self.make(sym, self.annulus(needs, &poles), false, None)
    }

    pub fn q_block_inv(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo <= hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_prod(lo + 1, hi);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(1.0 / alphas, 0.0);
            for i in lo + 1..=hi {
                g *= (Complex64::new(spec.speed(i), 0.0) - w) / (w * spec.a_fn(i - 1, w));
            }
            g
        });
        let needs = (lo..hi).any(|i| self.spec.kappa(i) > 0);
        self.make(sym, self.annulus(needs, &[]), false, None)
    }

    /// Memoryless step kernel (the plain geometric walk of particle `l`).
    pub fn q_ring(&self, l: usize) -> LatticeKernel {
        let th = self.spec.theta;
        let v = self.spec.speed(l);
        let sym: Sym = Arc::new(move |w| w * (v - th) / (th * (Complex64::new(v, 0.0) - w)));
        self.make(sym, self.annulus(false, &[l]), false, Some(-1))
    }

    /// Memory-weight convolution `A_ℓ` and its inverse.
    pub fn a_op(&self, l: usize) -> LatticeKernel {
        let spec = self.spec.clone();
        let at = spec.a_fn(l, Complex64::new(spec.theta, 0.0)).re;
        let sym: Sym = Arc::new(move |w| spec.a_fn(l, w) / at);
        let shift = self.mindeg_a(l).map(|m| -m);
        let needs = self.spec.kappa(l) > 0;
        self.make(sym, self.annulus(needs, &[]), false, shift)
    }

    pub fn a_op_inv(&self, l: usize) -> LatticeKernel {
        let spec = self.spec.clone();
        let at = spec.a_fn(l, Complex64::new(spec.theta, 0.0)).re;
        let sym: Sym = Arc::new(move |w| at / spec.a_fn(l, w));
        let needs = self.spec.kappa(l) > 0;
        self.make(sym, self.annulus(needs, &[]), false, None)
    }

    /// Time-factor convolution (symbol `φ^t`) and its inverse.
    pub fn r_op(&self) -> LatticeKernel {
        let spec = self.spec.clone();
        let t = self.t;
        let sym: Sym = Arc::new(move |w| spec.phi.pow_t(w, t));
        self.make(sym, self.annulus(true, &[]), false, None)
    }

    pub fn r_op_inv(&self) -> LatticeKernel {
        let spec = self.spec.clone();
        let t = self.t;
        let sym: Sym = Arc::new(move |w| 1.0 / spec.phi.pow_t(w, t));
        self.make(sym, self.annulus(true, &[]), false, None)
    }

    /// Walk step kernel `Q⁺_ℓ` (the particle's own memory enters).
    pub fn q_plus(&self, l: usize) -> LatticeKernel {
        let spec = self.spec.clone();
        let a = self.alpha_plus[l];
        let v = spec.speed(l);
        let sym: Sym = Arc::new(move |w| a * w * spec.a_fn(l, w) / (Complex64::new(v, 0.0) - w));
        let shift = self.mindeg_a(l).map(|m| -1 - m);
        let needs = self.spec.kappa(l) > 0;
        self.make(sym, self.annulus(needs, &[l]), false, shift)
    }

    pub fn q_plus_block(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo <= hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_plus_prod(lo + 1, hi);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(alphas, 0.0);
            for i in lo + 1..=hi {
                g *= w * spec.a_fn(i, w) / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            g
        });
        let poles: Vec<usize> = (lo + 1..=hi).collect();
        let needs = (lo + 1..=hi).any(|i| self.spec.kappa(i) > 0);
        self.make(sym, self.annulus(needs, &poles), false, None)
    }

    pub fn q_plus_block_inv(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo <= hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_plus_prod(lo + 1, hi);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(1.0 / alphas, 0.0);
            for i in lo + 1..=hi {
                g *= (Complex64::new(spec.speed(i), 0.0) - w) / (w * spec.a_fn(i, w));
            }
            g
        });
        let needs = (lo + 1..=hi).any(|i| self.spec.kappa(i) > 0);
        self.make(sym, self.annulus(needs, &[]), false, None)
    }

    /// Extension of `Q⁺_{(lo,hi]}` over the contour enclosing the speeds; as
    /// a function of its second argument it lies in the span of the
    /// exponentials attached to the speeds.
    pub fn q_bar_plus_block(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo < hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_plus_prod(lo + 1, hi);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(-alphas, 0.0);
            for i in lo + 1..=hi {
                g *= w * spec.a_fn(i, w) / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            g
        });
        self.make(sym, ContourChoice::Fixed(self.gamma_family(lo, hi)), false, None)
    }

    /// `Q̄⁺_{(lo,hi]} A_hi^{-1}`: extended walk kernel with the last memory
    /// weight removed (the building block of the boundary-value functions).
    pub fn q_bar_a(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo < hi);
        let spec = self.spec.clone();
        let alphas: f64 = self.alpha_plus_prod(lo + 1, hi);
        let at = spec.a_fn(hi, Complex64::new(spec.theta, 0.0)).re;
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(-alphas * at, 0.0);
            for i in lo + 1..=hi {
                g *= w * spec.a_fn(i, w) / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            g / spec.a_fn(hi, w)
        });
        self.make(sym, ContourChoice::Fixed(self.gamma_family(lo, hi)), false, None)
    }

    /// `Q̄⁺_{(lo,hi]} A_hi^{-1} R^{-1}`: as `q_bar_a` with the inverse time
    /// factor attached (the kernel summed against hitting probabilities in
    /// the biorthogonal functions).
    pub fn q_bar_a_r(&self, lo: usize, hi: usize) -> LatticeKernel {
        assert!(lo < hi);
        let spec = self.spec.clone();
        let t = self.t;
        let alphas: f64 = self.alpha_plus_prod(lo + 1, hi);
        let at = spec.a_fn(hi, Complex64::new(spec.theta, 0.0)).re;
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(-alphas * at, 0.0);
            for i in lo + 1..=hi {
                g *= w * spec.a_fn(i, w) / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            g / spec.a_fn(hi, w) / spec.phi.pow_t(w, t)
        });
        self.make(sym, ContourChoice::Fixed(self.gamma_family(lo, hi)), false, None)
    }

    /// `S_{-n}(z1, z2)`: reversed-argument kernel carrying the time factor;
    /// composes with the epigraph kernel to give the one-point kernel.
    pub fn s_minus(&self, n: usize) -> LatticeKernel {
        self.s_minus_scaled(n, self.alpha_plus_prod(1, n))
    }

    /// `(R Q^{-1}_{[1,n]})^* = S_{-n}/a_n(θ)`: the weight-free normalization
    /// used when assembling multi-index kernels, where the `a_n(θ)` factors
    /// of the two composition halves must cancel blockwise.
    pub fn s_minus_assembly(&self, n: usize) -> LatticeKernel {
        self.s_minus_scaled(n, self.alpha_prod(1, n))
    }

    fn s_minus_scaled(&self, n: usize, alphas: f64) -> LatticeKernel {
        let spec = self.spec.clone();
        let t = self.t;
        let sym: Sym = Arc::new(move |w| {
            let mut g = spec.phi.pow_t(w, t) / alphas;
            for i in 1..=n {
                g *= (Complex64::new(spec.speed(i), 0.0) - w) / w;
            }
            for i in 1..n {
                g /= spec.a_fn(i, w);
            }
            g
        });
        self.make(sym, self.annulus(true, &[]), true, None)
    }

    /// `S̄_{(m,n]}(z1, z2)` over the speed contour.
    pub fn s_bar(&self, m: usize, n: usize) -> LatticeKernel {
        assert!(m < n);
        let spec = self.spec.clone();
        let t = self.t;
        let alphas: f64 = self.alpha_plus_prod(m + 1, n);
        let sym: Sym = Arc::new(move |w| {
            let mut g = Complex64::new(-alphas, 0.0) / spec.phi.pow_t(w, t);
            for i in m + 1..=n {
                g *= w / (Complex64::new(spec.speed(i), 0.0) - w);
            }
            for i in m + 1..n {
                g *= spec.a_fn(i, w);
            }
            g
        });
        self.make(sym, ContourChoice::Fixed(self.gamma_family(m, n)), false, None)
    }

    /// `Ψ^n_{n-k}` as a lattice function of `x`, anchored at `y_k`. Both the
    /// `k <= n` and the extension `k > n` branch are provided.
    pub fn psi_fn(&self, n: usize, k: usize, y: &[i64]) -> PointFunction {
        assert!(k >= 1);
        let spec = self.spec.clone();
        let t = self.t;
        let kernel = if k <= n {
            let alphas: f64 = self.alpha_prod(k + 1, n);
            let sym: Sym = Arc::new(move |w| {
                let mut g = spec.phi.pow_t(w, t) / alphas;
                for i in k + 1..=n {
                    g *= (Complex64::new(spec.speed(i), 0.0) - w) / (w * spec.a_fn(i - 1, w));
                }
                g
            });
            self.make(sym, self.annulus(true, &[]), false, None)
        } else {
            let alphas: f64 = self.alpha_prod(n + 1, k);
            let poles: Vec<usize> = (n + 1..=k).collect();
            let sym: Sym = Arc::new(move |w| {
                let mut g = spec.phi.pow_t(w, t) * alphas;
                for i in n + 1..=k {
                    g *= w * spec.a_fn(i - 1, w) / (Complex64::new(spec.speed(i), 0.0) - w);
                }
                g
            });
            self.make(sym, self.annulus(true, &poles), false, None)
        };
        PointFunction {
            kernel,
            anchor: y[k - 1],
        }
    }

    /// Schütz-type determinant entry over the outer circle.
    pub fn f_entry(&self, k: usize, l: usize, x1: i64, x2: i64, t: f64) -> Result<f64, KernelError> {
        let spec = &self.spec;
        let circle = Circle::origin(spec.r_outer);
        let vk = spec.speed(k);
        let vl = spec.speed(l);
        let exponent = (x1 - x2) as i32 + k as i32 - l as i32 - 1;
        let r = contour::integrate(
            |w| {
                let mut g = w.powi(exponent) * spec.phi.pow_t(w, t);
                for i in 1..=l {
                    g *= w - Complex64::new(spec.speed(i), 0.0);
                }
                for i in 1..=k {
                    g /= w - Complex64::new(spec.speed(i), 0.0);
                }
                g
            },
            &circle,
            self.tol,
            self.max_nodes,
        )?;
        let v = r.value * vk.powi(-(x1 as i32)) * vl.powi(x2 as i32);
        if v.im.abs() > 1e-9 * (1.0 + v.re.abs()) {
            return Err(KernelError::NotReal(v.im.abs()));
        }
        Ok(v.re)
    }
}

/// A lattice function `x -> F(x - anchor)` built from a convolution kernel.
pub struct PointFunction {
    pub kernel: LatticeKernel,
    pub anchor: i64,
}

impl PointFunction {
    pub fn eval_range(&self, lo: i64, hi: i64) -> Result<Vec<f64>, KernelError> {
        self.kernel.values(lo - self.anchor, hi - self.anchor)
    }
}

/// Schütz-type transition weight between full configurations over time `t`:
/// the prefactor `Π φ(v_i)^{-t}` times the determinant of `f_entry` values.
pub fn transition_weight(
    engine: &Engine,
    y: &[i64],
    x: &[i64],
    t: f64,
) -> Result<f64, KernelError> {
    let n = y.len();
    assert_eq!(x.len(), n);
    let mut entries = Mat::zeros(n, n);
    for k in 1..=n {
        for l in 1..=n {
            entries.set(k - 1, l - 1, engine.f_entry(k, l, y[k - 1], x[l - 1], t)?);
        }
    }
    let mut pre = 1.0;
    for i in 1..=n {
        let phiv = engine
            .spec
            .phi
            .eval(Complex64::new(engine.spec.speed(i), 0.0));
        pre *= phiv.re.powf(-t);
    }
    Ok(pre * plain_det(&entries))
}

fn plain_det(m: &Mat) -> f64 {
    assert_eq!(m.nr, m.nc);
    let n = m.nr;
    let mut a = m.a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            if a[r * n + col].abs() > best {
                best = a[r * n + col].abs();
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    det
}

/// Positively oriented circles enclosing the given speeds while excluding the
/// origin, the disk `|w| <= θ` and every nonzero zero/pole of the symbol.
/// Three radii are produced, tight to loose: the relative accuracy of entries
/// at displacement `-d` degrades like `((c+r)/vmax)^d`, so tight contours win
/// on deep windows while looser ones resolve the poles with fewer nodes.
fn speeds_contour(spec: &ModelSpec, speeds: &[f64]) -> Result<Vec<Circle>, KernelError> {
    let vmin = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = speeds.iter().cloned().fold(0.0f64, f64::max);
    let c = (vmin + vmax) / 2.0;
    let need = (vmax - vmin) / 2.0;
    let mut r_max = c - 1.02 * spec.theta;
    for point in spec.phi.singular_points() {
        let d = (c - point).abs();
        if d > need {
            r_max = r_max.min(0.98 * d);
        } else {
            return Err(KernelError::NoSpeedContour(format!(
                "singular point at {point} lies among the speeds"
            )));
        }
    }
    if r_max <= need {
        return Err(KernelError::NoSpeedContour(format!(
            "cannot enclose speeds in [{vmin}, {vmax}] while excluding |w| <= {}",
            spec.theta
        )));
    }
    Ok([0.015, 0.06, 0.25, 0.6]
        .iter()
        .map(|f| Circle::around(c, need + f * (r_max - need)))
        .collect())
}

/// Builds an engine after re-validating the request against the spec.
pub fn engine_for_request(
    spec: &ModelSpec,
    req: &ObservationRequest,
) -> Result<Engine, KernelError> {
    validate_request(spec, req)?;
    Engine::new(spec, req.t)
}


/// `Φ^n_j` (the family biorthogonal to `Ψ^n_j`) on a window of `x` values,
/// evaluated from its explicit first-passage representation: a boundary sum
/// of the extended walk kernel minus, for `j > 0`, the expectation of the
/// same kernel at the walk's first passage above the curve.
pub fn phi_fn(
    engine: &Engine,
    n: usize,
    j: usize,
    y: &[i64],
    xwin: (i64, i64),
) -> Result<Vec<f64>, KernelError> {
    use crate::hitting::{composition_window, epigraph_hitting, Window};
    assert!(j < n && n <= y.len());
    let k = n - j;
    let cols = Window::new(xwin.0, xwin.1);
    let wwin = composition_window(engine, y, n, &[cols]);
    let first_kernel = engine.q_bar_a_r(k - 1, n).window_matrix(wwin.tuple(), cols.tuple())?;
    let mut out = vec![0.0f64; cols.len()];
    for i in 0..wwin.len() {
        if wwin.at(i) > y[k - 1] {
            for (x, slot) in out.iter_mut().enumerate() {
                *slot += first_kernel.get(i, x);
            }
        }
    }
    if k < n {
        let table = epigraph_hitting(engine, y, k, n, wwin)?;
        let mut expect = Mat::zeros(wwin.len(), cols.len());
        for (off, layer) in table.layers.iter().enumerate() {
            let m = k + off;
            let target = engine.q_bar_a_r(m, n).window_matrix(wwin.tuple(), cols.tuple())?;
            expect = expect.add(&layer.mul(&target));
        }
        let qk = engine.q_plus(k).window_matrix(wwin.tuple(), wwin.tuple())?;
        // u(η') = Σ_{η > y_k} Q⁺_k(η, η')
        let mut u = vec![0.0f64; wwin.len()];
        for i in 0..wwin.len() {
            if wwin.at(i) > y[k - 1] {
                for (jj, slot) in u.iter_mut().enumerate() {
                    *slot += qk.get(i, jj);
                }
            }
        }
        for (x, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ui) in u.iter().enumerate() {
                acc += ui * expect.get(i, x);
            }
            *slot -= acc;
        }
    }
    Ok(out)
}

/// Boundary-value function `h^n_k(l, z)` on a window of `z` values.
pub fn h_fn(
    engine: &Engine,
    n: usize,
    k: usize,
    l: usize,
    y: &[i64],
    zwin: (i64, i64),
) -> Result<Vec<f64>, KernelError> {
    use crate::hitting::{composition_window, epigraph_hitting, Window};
    assert!(l <= k && k < n && n <= y.len());
    let cols = Window::new(zwin.0, zwin.1);
    let wwin = composition_window(engine, y, n, &[cols]);
    let anchor = y[n - k - 1];
    let first_kernel = engine
        .q_bar_a(n - k - 1, n - l)
        .window_matrix(wwin.tuple(), cols.tuple())?;
    let mut out = vec![0.0f64; cols.len()];
    for i in 0..wwin.len() {
        if wwin.at(i) > anchor {
            for (x, slot) in out.iter_mut().enumerate() {
                *slot += first_kernel.get(i, x);
            }
        }
    }
    if l < k {
        let table = epigraph_hitting(engine, y, n - k, n - l, wwin)?;
        let mut expect = Mat::zeros(wwin.len(), cols.len());
        for (off, layer) in table.layers.iter().enumerate() {
            let m = n - k + off;
            let target = engine
                .q_bar_a(m, n - l)
                .window_matrix(wwin.tuple(), cols.tuple())?;
            expect = expect.add(&layer.mul(&target));
        }
        let qk = engine
            .q_plus(n - k)
            .window_matrix(wwin.tuple(), wwin.tuple())?;
        let mut u = vec![0.0f64; wwin.len()];
        for i in 0..wwin.len() {
            if wwin.at(i) > anchor {
                for (jj, slot) in u.iter_mut().enumerate() {
                    *slot += qk.get(i, jj);
                }
            }
        }
        for (x, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ui) in u.iter().enumerate() {
                acc += ui * expect.get(i, x);
            }
            *slot -= acc;
        }
    }
    Ok(out)
}

/// Both biorthogonal families for one `n`, tabulated on a common window
/// (memoized per `(n, j)` by construction).
pub struct BiorthPair {
    pub n: usize,
    pub window: (i64, i64),
    /// `psis[j]` is `Ψ^n_j` on the window, j = 0..n-1.
    pub psis: Vec<Vec<f64>>,
    /// `phis[j]` is `Φ^n_j` on the window.
    pub phis: Vec<Vec<f64>>,
}

pub fn biorth_pair(
    engine: &Engine,
    n: usize,
    y: &[i64],
    window: (i64, i64),
) -> Result<BiorthPair, KernelError> {
    let mut psis = Vec::with_capacity(n);
    let mut phis = Vec::with_capacity(n);
    for j in 0..n {
        let k = n - j;
        psis.push(engine.psi_fn(n, k, y).eval_range(window.0, window.1)?);
        phis.push(phi_fn(engine, n, j, y, window)?);
    }
    Ok(BiorthPair {
        n,
        window,
        psis,
        phis,
    })
}
