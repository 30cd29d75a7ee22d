//! Closed-form kernels for two blocks of particles with different speeds and
//! 2-periodic initial data `y_i = 2(M-i)`: first-passage laws of the
//! associated walk and the one-point kernel as iterated circle quadratures,
//! cross-validated against the general first-passage assembly.

use crate::contour::Circle;
use crate::kernels::Engine;
use crate::linalg::Mat;
use crate::model::{validate_spec, ModelSpec, SymbolFunction};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiKind {
    /// ψ(w) = e^{t w} (continuous time)
    ExpT,
    /// ψ(w) = (1+w)^t (discrete time, integer t)
    BernoulliT,
}

#[derive(Debug, Clone, Copy)]
pub struct TwoSpeedSpec {
    /// Speed of the leading block `i <= M`.
    pub alpha: f64,
    /// Speed of the trailing block `i > M`.
    pub beta: f64,
    pub m_block: usize,
    /// Memory parameter, 0 (sequential-type) or 1 (parallel-type).
    pub kappa: u8,
    pub psi: PsiKind,
    pub t: f64,
    pub theta: f64,
}

#[derive(Debug, Error)]
pub enum TwoSpeedError {
    #[error("invalid two-speed parameters: {0}")]
    BadSpec(String),
    #[error("quadrature did not stabilize (delta {0:.3e})")]
    NotConverged(f64),
}

impl TwoSpeedSpec {
    pub fn validate(&self) -> Result<(), TwoSpeedError> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(TwoSpeedError::BadSpec("speeds must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta < self.alpha.min(self.beta)) {
            return Err(TwoSpeedError::BadSpec(format!(
                "theta {} must lie in (0, min speed)",
                self.theta
            )));
        }
        if self.m_block < 1 {
            return Err(TwoSpeedError::BadSpec("need M >= 1".into()));
        }
        if self.kappa > 1 {
            return Err(TwoSpeedError::BadSpec("kappa must be 0 or 1".into()));
        }
        if self.t < 0.0 {
            return Err(TwoSpeedError::BadSpec("time must be nonnegative".into()));
        }
        if matches!(self.psi, PsiKind::BernoulliT) && self.t.fract() != 0.0 {
            return Err(TwoSpeedError::BadSpec(
                "discrete-time psi needs integer t".into(),
            ));
        }
        Ok(())
    }

    fn psi_eval(&self, w: Complex64) -> Complex64 {
        match self.psi {
            PsiKind::ExpT => (self.t * w).exp(),
            PsiKind::BernoulliT => (Complex64::new(1.0, 0.0) + w).powi(self.t as i32),
        }
    }

    /// 2-periodic initial condition `y_i = 2(M-i)` for `n` particles.
    pub fn initial_condition(&self, n: usize) -> Vec<i64> {
        (1..=n)
            .map(|i| 2 * (self.m_block as i64 - i as i64))
            .collect()
    }
}

struct Nodes {
    w: Vec<Complex64>,
    /// quadrature weights for `(1/2πi)∮`: `(w_k - center)/N`
    weight: Vec<Complex64>,
}

fn circle_nodes(c: &Circle, n: usize) -> Nodes {
    let mut w = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for k in 0..n {
        let ang = std::f64::consts::TAU * k as f64 / n as f64;
        let p = c.center + Complex64::from_polar(c.radius, ang);
        w.push(p);
        weight.push((p - c.center) / n as f64);
    }
    Nodes { w, weight }
}

fn real_part_checked(v: Complex64) -> Result<f64, TwoSpeedError> {
    if v.im.abs() > 1e-8 * (1.0 + v.re.abs()) {
        return Err(TwoSpeedError::NotConverged(v.im.abs()));
    }
    Ok(v.re)
}



/// `P(first passage at time k)` for `k < M`, starting from `z <= y_1`.
pub fn hitting_prob_block1(ts: &TwoSpeedSpec, z: i64, k: i64) -> Result<f64, TwoSpeedError> {
    ts.validate()?;
    let m = ts.m_block as i64;
    assert!(k < m, "first-block law needs k < M");
    assert!(z <= 2 * (m - 1), "start must sit at or below the curve");
    let (a, th) = (ts.alpha, ts.theta);
    let kap = ts.kappa as f64;
    if k < 0 {
        return Ok(0.0);
    }
    let kp = k as i32;
    let pre = th.powi((-2 * m + z + k + 1) as i32)
        * ((a - th) / (1.0 + th).powf(kap)).powi(kp);
    let f = |u: Complex64| -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        (one + kap * u).powi(kp - 1) * u.powi((2 * m - z - 1) as i32)
            / (u * (a - u)).powi(kp + 1)
            * (a - 2.0 * u - kap * u * u)
    };
    let mut prev = None;
    for n in [256usize, 512, 1024] {
        let c = Circle::origin(0.45 * ts.alpha.min(ts.beta).min(1.0 / (kap + 1e-9).max(1.0)));
        let nodes = circle_nodes(&c, n);
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, wt) in nodes.w.iter().zip(nodes.weight.iter()) {
            acc += f(*w) * wt;
        }
        let val = pre * real_part_checked(acc)?;
        if let Some(p) = prev {
            if (val - p as f64).abs() <= 1e-11 * (1.0f64).max(val.abs()) {
                return Ok(val);
            }
        }
        prev = Some(val);
    }
    Ok(prev.unwrap())
}

/// `P(first passage at time k)` for `k >= M`, starting from `z <= y_1`.
pub fn hitting_prob_block2(ts: &TwoSpeedSpec, z: i64, k: i64) -> Result<f64, TwoSpeedError> {
    ts.validate()?;
    let m = ts.m_block as i64;
    assert!(k >= m);
    assert!(z <= 2 * (m - 1));
    let (a, b, th) = (ts.alpha, ts.beta, ts.theta);
    let kap = ts.kappa as f64;
    let mi = ts.m_block as i32;
    let ki = k as i32;
    let pre = th.powi((-2 * m + z + k + 1) as i32)
        * ((a - th) / (1.0 + th).powf(kap)).powi(mi)
        * ((b - th) / (1.0 + th).powf(kap)).powi(ki - mi);
    let one = Complex64::new(1.0, 0.0);
    let mut prev: Option<f64> = None;
    for n in [128usize, 256, 512] {
        let r_u = 0.30 * a.min(b);
        let r_v = 1.3 * r_u;
        let un = circle_nodes(&Circle::origin(r_u), n);
        let vn = circle_nodes(&Circle::origin(r_v), n);
        let mut acc = Complex64::new(0.0, 0.0);
        for (u, wu) in un.w.iter().zip(un.weight.iter()) {
            let fu = (one + kap * u).powi(ki - mi) / (u * (b - u)).powi(ki - mi + 1)
                * (b - 2.0 * u - kap * u * u);
            let mut inner = Complex64::new(0.0, 0.0);
            for (v, wv) in vn.w.iter().zip(vn.weight.iter()) {
                let fv = (one + kap * v).powi(mi - 1) * v.powi((2 * m - z - 1) as i32)
                    / (v * (a - v)).powi(mi)
                    * (a - 2.0 * v - kap * v * v);
                inner += fv * wv / ((v - u) * (a - u - v - kap * u * v));
            }
            acc += fu * inner * wu;
        }
        let val = pre * real_part_checked(acc)?;
        if let Some(p) = prev {
            if (val - p).abs() <= 1e-11 * (1.0f64).max(val.abs()) {
                return Ok(val);
            }
        }
        prev = Some(val);
    }
    Ok(prev.unwrap())
}

/// Circle arrangement for the kernel quadratures. What matters for the value
/// is only which poles each contour encloses; radii are then chosen for
/// conditioning. For rows whose integrand has no pole at the origin the
/// first contribution vanishes and the remaining ones collapse to coupling
/// residues best captured on small circles.
struct KernelContours {
    /// small circle around the origin (fixed-power variables)
    u_small: Circle,
    /// small companion enclosing `u_small`
    v_small: Circle,
    /// large circle around the origin for variables carrying lattice powers
    big: Circle,
    /// circle enclosing both speeds, not the origin
    w_speeds: Circle,
}

fn kernel_contours(ts: &TwoSpeedSpec) -> KernelContours {
    let (a, b) = (ts.alpha, ts.beta);
    let kap = ts.kappa as f64;
    let c_sp = (a.min(b) + a.max(b)) / 2.0;
    let need = (a.max(b) - a.min(b)) / 2.0;
    // balance the inner clearance of the speed circle against the room the
    // resummation pole near the leading speed needs inside it
    let r_sp = need + 0.5 * (c_sp - need);
    let room = 0.85 * (r_sp - need);
    // |w*(u) - alpha| <= |u|(1+kappa*alpha)/(1-|u|) must stay under `room`,
    // and |u| must stay inside the speed circle's inner clearance
    let big_r = (room / (1.0 + kap * a + room))
        .min(0.85 * (c_sp - r_sp))
        .min(0.8 * a.min(b));
    let r_u = 0.35 * big_r;
    KernelContours {
        u_small: Circle::origin(r_u),
        v_small: Circle::origin(1.6 * r_u),
        big: Circle::origin(big_r),
        w_speeds: Circle::around(c_sp, r_sp),
    }
}

/// One-point kernel `K^(n)(x, x')` of the two-speed model with 2-periodic
/// initial data, for `n > M`, over a rectangular window. Three contributions:
/// a double integral (no passage before the observation range) and two triple
/// integrals for passages in the leading and trailing block.
pub fn kernel_two_speed(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    rows: (i64, i64),
    cols: (i64, i64),
) -> Result<Mat, TwoSpeedError> {
    ts.validate()?;
    let m = ts.m_block;
    assert!(n_idx > m, "the closed form needs n > M");
    let mut prev: Option<Mat> = None;
    for nodes in [256usize, 512, 1024] {
        let cur = kernel_two_speed_at(ts, n_idx, rows, cols, nodes)?;
        if let Some(p) = &prev {
            let worst = cur
                .a
                .iter()
                .zip(p.a.iter())
                .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
                .fold(0.0f64, f64::max);
            if worst <= 3e-9 {
                return Ok(cur);
            }
            if nodes == 1024 {
                return Err(TwoSpeedError::NotConverged(worst));
            }
        }
        prev = Some(cur);
    }
    Ok(prev.unwrap())
}

/// The three contributions separately (diagnostic surface).
pub fn kernel_two_speed_terms(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    rows: (i64, i64),
    cols: (i64, i64),
    nodes: usize,
) -> Result<(Mat, Mat, Mat), TwoSpeedError> {
    kernel_terms(ts, n_idx, rows, cols, nodes)
}

fn kernel_two_speed_at(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    rows: (i64, i64),
    cols: (i64, i64),
    nodes: usize,
) -> Result<Mat, TwoSpeedError> {
    let (t1, t2, t3) = kernel_terms(ts, n_idx, rows, cols, nodes)?;
    let mut out = Mat::zeros(t1.nr, t1.nc);
    for i in 0..t1.nr {
        for j in 0..t1.nc {
            out.set(i, j, t1.get(i, j) + t2.get(i, j) + t3.get(i, j));
        }
    }
    Ok(out)
}

fn kernel_terms(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    rows: (i64, i64),
    cols: (i64, i64),
    nodes: usize,
) -> Result<(Mat, Mat, Mat), TwoSpeedError> {
    let (a, b, th) = (ts.alpha, ts.beta, ts.theta);
    let kap = ts.kappa as f64;
    let one = Complex64::new(1.0, 0.0);
    let mi = ts.m_block as i32;
    let ni = n_idx as i32;
    let ct = kernel_contours(ts);
    let nr = (rows.1 - rows.0 + 1) as usize;
    let nc = (cols.1 - cols.0 + 1) as usize;
    // the variable carrying x has its origin pole only when e(x) > 0
    let e_of = |x: i64| -> i32 { (x as i32) - 2 * mi + ni + 2 };

    let un = circle_nodes(&ct.u_small, nodes);
    let vn = circle_nodes(&ct.v_small, nodes);
    let bign = circle_nodes(&ct.big, nodes);
    let wn = circle_nodes(&ct.w_speeds, nodes);

    let psi = |z: Complex64| ts.psi_eval(z);
    let lead = move |z: Complex64| -> Complex64 {
        (a - z).powi(mi) * (b - z).powi(ni - mi) * (one + kap * z).powi(1 - ni) * psi(z)
    };
    let xpow = |z: &Nodes, x: i64| -> Vec<Complex64> {
        // z^{-e(x)} per node
        z.w.iter().map(|w| w.powi(-e_of(x))).collect()
    };

    // w-side factors and lattice powers (columns)
    let bw_speeds: Vec<Complex64> = wn
        .w
        .iter()
        .map(|w| {
            (one + kap * w).powi(ni - 1)
                / ((a - w).powi(mi) * (b - w).powi(ni - mi) * psi(*w))
                * w.powi(ni + 1 - 2 * mi)
        })
        .collect();
    let bw_t2: Vec<Complex64> = wn
        .w
        .iter()
        .map(|w| {
            (one + kap * w).powi(ni - mi) / ((b - w).powi(ni - mi) * psi(*w)) * w.powi(ni - mi)
        })
        .collect();

    let colpow = |z: &Nodes| -> Vec<Vec<Complex64>> {
        z.w.iter()
            .map(|w| {
                let mut row = Vec::with_capacity(nc);
                let mut cur = w.powi(cols.0 as i32);
                for _ in 0..nc {
                    row.push(cur);
                    cur *= w;
                }
                row
            })
            .collect()
    };
    let wn_cols = colpow(&wn);

    let cu: Vec<Complex64> = un
        .w
        .iter()
        .map(|u| {
            (one + kap * u).powi(mi - 1) * u.powi(1 - mi) * (a - 2.0 * u - kap * u * u)
                / (a - u).powi(mi)
        })
        .collect();

    // T1 inner sums over w for each u on the big circle
    let mut t1_inner = vec![vec![Complex64::new(0.0, 0.0); nc]; nodes];
    for (ku, u) in bign.w.iter().enumerate() {
        for kw in 0..nodes {
            let f = bw_speeds[kw] * wn.weight[kw] / (u - wn.w[kw]);
            for j in 0..nc {
                t1_inner[ku][j] += f * wn_cols[kw][j];
            }
        }
    }
    // T2/T3 column sums per small-circle u
    let mut t2_cols = vec![vec![Complex64::new(0.0, 0.0); nc]; nodes];
    for (ku, u) in un.w.iter().enumerate() {
        for kw in 0..nodes {
            let w = wn.w[kw];
            let f = bw_t2[kw] * wn.weight[kw] / ((u - w) * (a - u - w - kap * u * w));
            for j in 0..nc {
                t2_cols[ku][j] += f * wn_cols[kw][j];
            }
        }
    }

    let mut out1 = Mat::zeros(nr, nc);
    let mut out2 = Mat::zeros(nr, nc);
    for i in 0..nr {
        let x = rows.0 + i as i64;
        let has_origin_pole = e_of(x) >= 1;
        let mut row1 = vec![Complex64::new(0.0, 0.0); nc];
        let mut row2 = vec![Complex64::new(0.0, 0.0); nc];
        if has_origin_pole {
            // T1 on the big circle
            let upow = xpow(&bign, x);
            for ku in 0..nodes {
                let base = lead(bign.w[ku]) * upow[ku] * bign.weight[ku];
                for j in 0..nc {
                    row1[j] += base * t1_inner[ku][j];
                }
            }
        }
        // T2 and T3: the x-carrying variable runs over the big circle when
        // the origin pole exists, otherwise over the small companion circle
        let (vnodes, vp) = if has_origin_pole {
            (&bign, xpow(&bign, x))
        } else {
            (&vn, xpow(&vn, x))
        };
        for (ku, u) in un.w.iter().enumerate() {
            let mut p2 = Complex64::new(0.0, 0.0);
            for kv in 0..vnodes.w.len() {
                let av = lead(vnodes.w[kv]) * vp[kv] * vnodes.weight[kv];
                p2 += av / (vnodes.w[kv] - u);
            }
            let base = cu[ku] * un.weight[ku];
            for j in 0..nc {
                row2[j] += base * p2 * t2_cols[ku][j];
            }
        }
        for j in 0..nc {
            let xp = cols.0 + j as i64;
            let pref = th.powi((x - xp) as i32);
            out1.set(i, j, pref * row1[j].re);
            out2.set(i, j, pref * row2[j].re);
        }
    }
    let out3 = trailing_block_term(ts, n_idx, rows, cols, nodes)?;
    Ok((out1, out2, out3))
}

/// Equivalent general model of the two-speed system (block speeds, constant
/// lengths κ+1) used for the kernels entering the trailing-block term.
pub fn equivalent_spec(ts: &TwoSpeedSpec, n: usize) -> ModelSpec {
    let speeds: Vec<f64> = (1..=n)
        .map(|i| if i <= ts.m_block { ts.alpha } else { ts.beta })
        .collect();
    let vmax = ts.alpha.max(ts.beta);
    let phi = match ts.psi {
        PsiKind::ExpT => SymbolFunction::ContinuousTasep,
        PsiKind::BernoulliT => SymbolFunction::RightBernoulli { p: None },
    };
    let r_outer = match phi {
        SymbolFunction::RightBernoulli { .. } if vmax < 1.0 => (1.0 + vmax) / 2.0,
        _ => 2.0 * vmax + 1.0,
    };
    validate_spec(&ModelSpec {
        phi,
        speeds,
        lengths: vec![ts.kappa as u32 + 1; n],
        theta: ts.theta,
        r_inner: ts.theta / 2.0,
        r_outer,
    })
    .expect("two-speed parameters define a valid block model")
}

/// Passages in the trailing block happen at finitely many times
/// `k = M..n-1`, each at the deterministic position `2(M-k)-1`, so this
/// contribution is a finite sum of separable products: the start-point sum of
/// the time-reversal kernel against the closed-form first-passage law, times
/// a row of the extended walk kernel.
fn trailing_block_term(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    rows: (i64, i64),
    cols: (i64, i64),
    nodes: usize,
) -> Result<Mat, TwoSpeedError> {
    let (a, b, th) = (ts.alpha, ts.beta, ts.theta);
    let kap = ts.kappa as f64;
    let one = Complex64::new(1.0, 0.0);
    let mi = ts.m_block as i32;
    let m = ts.m_block;
    let nr = (rows.1 - rows.0 + 1) as usize;
    let nc = (cols.1 - cols.0 + 1) as usize;
    let mut out = Mat::zeros(nr, nc);
    if n_idx <= m {
        return Ok(out);
    }
    let y1 = 2 * (mi as i64 - 1);
    let spec = equivalent_spec(ts, n_idx.max(m + 1));
    let engine = Engine::new(&spec, ts.t).expect("validated spec");

    // weight-free time-reversal symbol of the assembly normalization
    let alphas: f64 = (1..=n_idx)
        .map(|l| {
            let av = spec.a_fn(l - 1, Complex64::new(th, 0.0)).re;
            (spec.speed(l) - th) / (av * th)
        })
        .product();
    let s_tilde = |w: Complex64| -> Complex64 {
        let mut g = spec.phi.pow_t(w, ts.t) / alphas;
        for i in 1..=n_idx {
            g *= (Complex64::new(spec.speed(i), 0.0) - w) / w;
        }
        for i in 1..n_idx {
            g /= spec.a_fn(i, w);
        }
        g
    };

    let r_u = 0.22 * a.min(b);
    let r_v = 1.4 * r_u;
    let eta_small = Circle::origin(1.9 * r_u);
    // the time-reversal symbol is analytic below the speeds and, with memory,
    // below the symbol zero at radius one
    let eta_big_r = 0.9 * a.min(b).min(if ts.kappa > 0 { 1.0 } else { f64::INFINITY });
    let eta_big = Circle::origin(eta_big_r.min(0.9 * a.min(b)));
    let un = circle_nodes(&Circle::origin(r_u), nodes);
    let vn = circle_nodes(&Circle::origin(r_v), nodes);
    let d_alpha = (a - th) / (1.0 + th).powf(kap);
    let d_beta = (b - th) / (1.0 + th).powf(kap);

    for k in m..n_idx {
        let ki = k as i32;
        // inner u-sum per v node
        let mut uv = vec![Complex64::new(0.0, 0.0); nodes];
        for (kv, v) in vn.w.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (kuu, u) in un.w.iter().enumerate() {
                let uk = (one + kap * u).powi(ki - mi)
                    / (u * (b - u)).powi(ki - mi + 1)
                    * (b - 2.0 * u - kap * u * u);
                acc += uk * un.weight[kuu] / ((v - u) * (a - u - v - kap * u * v));
            }
            uv[kv] = acc;
        }
        // v-factor including the u-sum
        let vfac: Vec<Complex64> = vn
            .w
            .iter()
            .enumerate()
            .map(|(kv, v)| {
                (one + kap * v).powi(mi - 1) * v.powi(1 - mi)
                    * (a - 2.0 * v - kap * v * v)
                    / (a - v).powi(mi)
                    * uv[kv]
                    * vn.weight[kv]
            })
            .collect();
        // start-point resummation: per eta node, sum over v of vfac/(eta - v)
        let mut a_of_x = vec![0.0f64; nr];
        for (group, etac) in [(&eta_small, false), (&eta_big, true)] {
            let en = circle_nodes(group, nodes);
            let mut inner = vec![Complex64::new(0.0, 0.0); nodes];
            for (ke, e) in en.w.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for kv in 0..nodes {
                    acc += vfac[kv] / (e - vn.w[kv]);
                }
                inner[ke] = acc * s_tilde(*e) * en.weight[ke];
            }
            for i in 0..nr {
                let x = rows.0 + i as i64;
                // the eta integrand has its origin pole only for large x;
                // rows split between the small and large circle accordingly
                let use_big = x > y1 - n_idx as i64;
                if use_big != etac {
                    continue;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for (ke, e) in en.w.iter().enumerate() {
                    acc += inner[ke] * e.powi((y1 - x) as i32);
                }
                a_of_x[i] = acc.re;
            }
        }
        let pre = |x: i64| th.powi((x + ki as i64 + 1 - 2 * mi as i64) as i32)
            * d_alpha.powi(mi)
            * d_beta.powi(ki - mi);
        // the walk-kernel row at the passage position
        let zeta = 2 * (mi as i64 - ki as i64) - 1;
        let brow = engine
            .q_bar_a_r(k, n_idx)
            .values(zeta - cols.1, zeta - cols.0)
            .map_err(|e| TwoSpeedError::BadSpec(format!("walk kernel row failed: {e}")))?;
        for i in 0..nr {
            let x = rows.0 + i as i64;
            let coeff = pre(x) * a_of_x[i];
            for j in 0..nc {
                let xp = cols.0 + j as i64;
                // values are indexed by displacement zeta - xp
                let d_idx = (zeta - xp - (zeta - cols.1)) as usize;
                out.set(i, j, out.get(i, j) + coeff * brow[d_idx]);
            }
        }
    }
    Ok(out)
}

/// `P(X_t(n) > threshold)` from the two-speed one-point kernel.
pub fn one_point_probability(
    ts: &TwoSpeedSpec,
    n_idx: usize,
    threshold: f64,
    width: i64,
) -> Result<f64, TwoSpeedError> {
    let cap = threshold.floor() as i64;
    let win = (cap - width + 1, cap);
    let k = kernel_two_speed(ts, n_idx, win, win)?;
    Ok(k.det_i_minus())
}
