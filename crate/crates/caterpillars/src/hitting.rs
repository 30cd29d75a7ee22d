//! Exact dynamic programming for the inhomogeneous walk driven by the
//! `Q⁺` step kernels, its first passage into the strict epigraph of the
//! initial-condition curve, and the assembly of the extended kernel.

use crate::kernels::{Engine, KernelError};
use crate::linalg::Mat;
use num_complex::Complex64;

/// Closed integer interval of lattice positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi);
        Window { lo, hi }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn idx(&self, x: i64) -> usize {
        debug_assert!(x >= self.lo && x <= self.hi);
        (x - self.lo) as usize
    }

    pub fn at(&self, i: usize) -> i64 {
        self.lo + i as i64
    }

    pub fn tuple(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }
}

/// Truncated step matrices of the walk, with the per-row mass that fell
/// outside the window (tracked, never renormalized away).
pub struct WalkLattice {
    pub window: Window,
    /// `steps[m]` is the transition from time `m` to `m+1` (so `steps[0]`
    /// uses the first step kernel).
    pub steps: Vec<Mat>,
    pub tail_mass: Vec<Vec<f64>>,
}

pub fn build_walk(engine: &Engine, window: Window, n_steps: usize) -> Result<WalkLattice, KernelError> {
    let mut steps = Vec::with_capacity(n_steps);
    let mut tails = Vec::with_capacity(n_steps);
    for m in 1..=n_steps {
        let mat = engine.q_plus(m).window_matrix(window.tuple(), window.tuple())?;
        let tail: Vec<f64> = (0..mat.nr)
            .map(|i| {
                let row_sum: f64 = (0..mat.nc).map(|j| mat.get(i, j)).sum();
                1.0 - row_sum
            })
            .collect();
        steps.push(mat);
        tails.push(tail);
    }
    Ok(WalkLattice {
        window,
        steps,
        tail_mass: tails,
    })
}

/// First-passage table: `layers[k]` maps a start position at walk time `m0`
/// to the position at which the walk first exceeds the curve at time
/// `m0 + k`, restricted to the window.
pub struct HittingTable {
    pub window: Window,
    pub m0: usize,
    pub layers: Vec<Mat>,
    /// Mass still strictly below the curve after the last layer.
    pub survivors: Mat,
}

impl HittingTable {
    /// Total absorbed + surviving mass per start state; the deficit from one
    /// is the window leak.
    pub fn mass_balance(&self) -> Vec<f64> {
        let n = self.window.len();
        let mut total = vec![0.0; n];
        for layer in &self.layers {
            for i in 0..n {
                for j in 0..n {
                    total[i] += layer.get(i, j);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                total[i] += self.survivors.get(i, j);
            }
        }
        total
    }
}

/// Forward DP for the first passage of the walk started at time `m0` into the
/// strict epigraph of `z > y_{m+1}`; layers run while `m < horizon`.
pub fn epigraph_hitting(
    engine: &Engine,
    y: &[i64],
    m0: usize,
    horizon: usize,
    window: Window,
) -> Result<HittingTable, KernelError> {
    assert!(m0 < horizon && horizon <= y.len());
    let n = window.len();
    let above = |m: usize| -> Vec<bool> {
        let curve = y[m];
        (0..n).map(|i| window.at(i) > curve).collect()
    };
    // immediate absorption at time m0
    let mask0 = above(m0);
    let mut layers = Vec::new();
    let mut first = Mat::zeros(n, n);
    let mut alive = Mat::zeros(n, n);
    for i in 0..n {
        if mask0[i] {
            first.set(i, i, 1.0);
        } else {
            alive.set(i, i, 1.0);
        }
    }
    layers.push(first);
    for m in m0 + 1..horizon {
        let step = engine.q_plus(m).window_matrix(window.tuple(), window.tuple())?;
        let moved = alive.mul(&step);
        let mask = above(m);
        let mut hit = Mat::zeros(n, n);
        let mut stay = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = moved.get(i, j);
                if mask[j] {
                    hit.set(i, j, v);
                } else {
                    stay.set(i, j, v);
                }
            }
        }
        layers.push(hit);
        alive = stay;
    }
    Ok(HittingTable {
        window,
        m0,
        layers,
        survivors: alive,
    })
}

/// Distribution of the first-passage time for a single start position `z` at
/// walk time zero: pairs `(m, P(first passage at m))`.
pub fn hitting_time_distribution(
    engine: &Engine,
    y: &[i64],
    z: i64,
    horizon: usize,
    window: Window,
) -> Result<Vec<(usize, f64)>, KernelError> {
    let table = epigraph_hitting(engine, y, 0, horizon, window)?;
    let i = table.window.idx(z);
    Ok(table
        .layers
        .iter()
        .enumerate()
        .map(|(m, layer)| {
            let p: f64 = (0..layer.nc).map(|j| layer.get(i, j)).sum();
            (m, p)
        })
        .collect())
}

/// `S̄^epi(z, x)` over `rows × cols`: the expectation of `S̄_{(τ,n]}` at the
/// first-passage position, zero when the walk never exceeds the curve before
/// time `n`.
pub fn s_bar_epi(
    engine: &Engine,
    y: &[i64],
    n: usize,
    rows: Window,
    cols: Window,
) -> Result<Mat, KernelError> {
    epi_expectation(engine, y, n, rows, cols, false)
}

/// As `s_bar_epi` but with the target kernel `Q̄⁺_{(τ,n]} A_n^{-1} R^{-1}
/// = a_n(θ)·S̄_{(τ,n]}`, the normalization that pairs with
/// `s_minus_assembly` in multi-index blocks.
pub fn epi_assembly(
    engine: &Engine,
    y: &[i64],
    n: usize,
    rows: Window,
    cols: Window,
) -> Result<Mat, KernelError> {
    epi_expectation(engine, y, n, rows, cols, true)
}

fn epi_expectation(
    engine: &Engine,
    y: &[i64],
    n: usize,
    rows: Window,
    cols: Window,
    assembly: bool,
) -> Result<Mat, KernelError> {
    assert!(n >= 1 && n <= y.len());
    let table = epigraph_hitting(engine, y, 0, n, rows)?;
    let mut out = Mat::zeros(rows.len(), cols.len());
    for (m, layer) in table.layers.iter().enumerate() {
        let target = if assembly {
            engine.q_bar_a_r(m, n)
        } else {
            engine.s_bar(m, n)
        };
        let sbar = target.window_matrix(rows.tuple(), cols.tuple())?;
        let contrib = layer.mul(&sbar);
        out = out.add(&contrib);
    }
    Ok(out)
}

/// Block matrix of the extended kernel restricted to given windows.
pub struct KernelMatrix {
    pub indices: Vec<usize>,
    pub windows: Vec<Window>,
    /// Row-major `m x m` grid of dense blocks.
    pub blocks: Vec<Mat>,
    pub tail_bound: f64,
}

impl KernelMatrix {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn block(&self, i: usize, j: usize) -> &Mat {
        &self.blocks[i * self.m() + j]
    }

    /// One dense matrix over the disjoint union of the windows.
    pub fn flatten(&self) -> Mat {
        let sizes: Vec<usize> = self.windows.iter().map(|w| w.len()).collect();
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0usize, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut flat = Mat::zeros(total, total);
        for bi in 0..self.m() {
            for bj in 0..self.m() {
                let b = self.block(bi, bj);
                for i in 0..b.nr {
                    for j in 0..b.nc {
                        flat.set(offsets[bi] + i, offsets[bj] + j, b.get(i, j));
                    }
                }
            }
        }
        flat
    }
}

fn pad_from_rate(rate: f64, target: f64) -> i64 {
    let r = rate.clamp(1e-9, 1.0 - 1e-9);
    ((target.ln() / r.ln()).ceil() as i64).clamp(24, 700)
}

/// Window of summation positions wide enough that both composition tails are
/// below the working accuracy.
pub fn composition_window(engine: &Engine, y: &[i64], n_max: usize, windows: &[Window]) -> Window {
    let xmin = windows.iter().map(|w| w.lo).min().unwrap();
    let xmax = windows.iter().map(|w| w.hi).max().unwrap();
    let sm = engine.s_minus(n_max);
    let sb = engine.s_bar(0, n_max);
    let extra: i64 = std::env::var("CAT_EXTRA_PAD")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let pad_down = pad_from_rate(sm.decay_hint.1, 1e-16) + extra;
    let up_rate = sm.decay_hint.0.max(sb.decay_hint.1);
    let pad_up = pad_from_rate(up_rate, 1e-16) + extra;
    let top = y[0].max(xmax);
    let bottom = y[..n_max].iter().cloned().min().unwrap().min(xmin);
    Window::new(bottom - pad_down, top + pad_up)
}

/// The extended kernel on `{n_1..n_m} x Z` restricted to one window per
/// index: `block(i,j) = -Q_{(n_i,n_j]} 1{n_i<n_j} + (S_{-n_i})^* S̄^epi_{n_j}`.
pub fn extended_kernel(
    engine: &Engine,
    y: &[i64],
    indices: &[usize],
    windows: &[Window],
) -> Result<KernelMatrix, KernelError> {
    assert_eq!(indices.len(), windows.len());
    assert!(!indices.is_empty());
    let n_max = *indices.iter().max().unwrap();
    assert!(n_max <= y.len());
    let zwin = composition_window(engine, y, n_max, windows);

    let mut s_parts = Vec::with_capacity(indices.len());
    let mut epi_parts = Vec::with_capacity(indices.len());
    for (idx, win) in indices.iter().zip(windows.iter()) {
        // rows are the summation positions z, columns the kernel argument
        s_parts.push(
            engine
                .s_minus_assembly(*idx)
                .window_matrix(zwin.tuple(), win.tuple())?,
        );
        epi_parts.push(epi_assembly(engine, y, *idx, zwin, *win)?);
    }

    let m = indices.len();
    let mut blocks = Vec::with_capacity(m * m);
    let mut tail_bound = 0.0f64;
    for i in 0..m {
        let st = s_parts[i].transpose();
        for j in 0..m {
            let mut block = st.mul(&epi_parts[j]);
            if indices[i] < indices[j] {
                let q = engine
                    .q_block(indices[i], indices[j])
                    .window_matrix(windows[i].tuple(), windows[j].tuple())?;
                block = block.add(&q.scale(-1.0));
            }
            blocks.push(block);
        }
        // coarse edge estimate of the truncated summation tails
        let zn = zwin.len();
        let edge = (0..s_parts[i].nc)
            .map(|c| s_parts[i].get(0, c).abs().max(s_parts[i].get(zn - 1, c).abs()))
            .fold(0.0f64, f64::max);
        let epi_edge = (0..epi_parts[i].nc)
            .map(|c| {
                epi_parts[i]
                    .get(0, c)
                    .abs()
                    .max(epi_parts[i].get(zn - 1, c).abs())
            })
            .fold(0.0f64, f64::max);
        tail_bound = tail_bound.max(edge * epi_edge * 20.0);
    }
    Ok(KernelMatrix {
        indices: indices.to_vec(),
        windows: windows.to_vec(),
        blocks,
        tail_bound,
    })
}

/// Conjugation factor relating extended kernels computed at two admissible
/// weights θ and θ̂: `K_hat = factor * K` entrywise with
/// `factor = (θ̂/θ)^{x_i-x_j} Π_{l=n_i+1}^{n_j} α̂_l/α_l` (inverted products
/// for `n_i > n_j`). The Fredholm determinant is invariant without any
/// correction.
pub fn theta_conjugation_factor(
    engine: &Engine,
    engine_hat: &Engine,
    ni: usize,
    xi: i64,
    nj: usize,
    xj: i64,
) -> f64 {
    let ratio = engine_hat.spec.theta / engine.spec.theta;
    let mut f = ratio.powi((xi - xj) as i32);
    if ni < nj {
        for l in ni + 1..=nj {
            f *= engine_hat.alpha(l) / engine.alpha(l);
        }
    } else {
        for l in nj + 1..=ni {
            f *= engine.alpha(l) / engine_hat.alpha(l);
        }
    }
    f
}

/// Helper for cross-checks: the kernel block implied by the one-point kernel
/// at `n_j` transported to `(n_i, n_j)` through the transition kernels.
pub fn block_from_one_point(
    engine: &Engine,
    y: &[i64],
    ni: usize,
    nj: usize,
    win_i: Window,
    win_j: Window,
    mid: Window,
) -> Result<Mat, KernelError> {
    let k_one = extended_kernel(engine, y, &[nj], &[mid])?;
    let k_mat = &k_one.blocks[0];
    let transport = if ni < nj {
        engine.q_block(ni, nj).window_matrix(win_i.tuple(), mid.tuple())?
    } else if ni == nj {
        // identity on the window
        let mut m = Mat::zeros(win_i.len(), mid.len());
        for i in 0..win_i.len() {
            let x = win_i.at(i);
            if x >= mid.lo && x <= mid.hi {
                m.set(i, mid.idx(x), 1.0);
            }
        }
        m
    } else {
        engine
            .q_block_inv(nj, ni)
            .window_matrix(win_i.tuple(), mid.tuple())?
    };
    let mut block = transport.mul(k_mat);
    // restrict columns of the one-point window back to win_j
    let mut out = Mat::zeros(win_i.len(), win_j.len());
    for i in 0..win_i.len() {
        for j in 0..win_j.len() {
            let x = win_j.at(j);
            out.set(i, j, block.get(i, mid.idx(x)));
        }
    }
    if ni < nj {
        let q = engine
            .q_block(ni, nj)
            .window_matrix(win_i.tuple(), win_j.tuple())?;
        out = out.add(&q.scale(-1.0));
    }
    block = out;
    Ok(block)
}

/// Numerical sanity: the kernel must be real; complex residues upstream are
/// already rejected, this re-checks the assembled blocks.
pub fn assert_real(v: Complex64) -> f64 {
    debug_assert!(v.im.abs() <= 1e-9 * (1.0 + v.re.abs()));
    v.re
}
