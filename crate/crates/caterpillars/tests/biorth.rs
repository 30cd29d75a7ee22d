//! The biorthogonality relation, the span property of the dual family, and
//! the boundary-value characterization of the auxiliary functions.

use caterpillars::kernels::{biorth_pair, h_fn, Engine};
use caterpillars::linalg::{lstsq, Mat};
use caterpillars::model::{validate_spec, ModelSpec, SymbolFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random admissible spec of each symbol kind; memory lengths only where the
/// framework admits them.
fn random_spec(kind: usize, n: usize, rng: &mut ChaCha8Rng) -> ModelSpec {
    let with_memory = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(1..=3u32)).collect();
    let (phi, speeds, lengths): (SymbolFunction, Vec<f64>, Vec<u32>) = match kind {
        0 => (
            SymbolFunction::ContinuousTasep,
            (0..n).map(|_| rng.gen_range(0.6..1.8)).collect(),
            vec![1; n],
        ),
        1 => (
            SymbolFunction::RightBernoulli { p: None },
            (0..n).map(|_| rng.gen_range(0.35..0.62)).collect(),
            with_memory(rng),
        ),
        2 => (
            SymbolFunction::LeftBernoulliPush { p: None },
            (0..n).map(|_| rng.gen_range(0.35..0.62)).collect(),
            with_memory(rng),
        ),
        3 => (
            SymbolFunction::LeftGeometricPush { q: None },
            (0..n).map(|_| rng.gen_range(1.7..3.0)).collect(),
            with_memory(rng),
        ),
        4 => (
            SymbolFunction::RightGeometricBlock { q: None },
            (0..n).map(|_| rng.gen_range(0.35..0.62)).collect(),
            vec![1; n],
        ),
        _ => (
            SymbolFunction::PushAsep { r: 1.0, l: 0.5 },
            (0..n).map(|_| rng.gen_range(0.6..1.8)).collect(),
            vec![1; n],
        ),
    };
    let vmin = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = speeds.iter().cloned().fold(0.0f64, f64::max);
    let theta = match phi {
        // the pole of the symbol at radius one must stay inside the inner circle
        SymbolFunction::LeftGeometricPush { .. } => (1.0 + vmin) / 2.0,
        _ => vmin / 2.0,
    };
    let r_inner = match phi {
        SymbolFunction::LeftGeometricPush { .. } => (1.0 * theta).sqrt(),
        _ => theta / 2.0,
    };
    let r_outer = match phi {
        // keep the outer circle inside the symbol's zero/pole at radius one
        SymbolFunction::RightBernoulli { .. }
        | SymbolFunction::LeftBernoulliPush { .. }
        | SymbolFunction::RightGeometricBlock { .. } => (vmax + 1.0) / 2.0,
        _ => 2.0 * vmax,
    };
    validate_spec(&ModelSpec {
        phi,
        speeds,
        lengths,
        theta,
        r_inner,
        r_outer,
    })
    .unwrap()
}

fn admissible_initial(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let n = spec.n();
    let mut y = vec![0i64; n];
    for i in 1..n {
        let need = (spec.lengths[i - 1] as i64 - 1).max(1);
        y[i] = y[i - 1] - need - rng.gen_range(0..2);
    }
    y
}

fn window_for(spec: &ModelSpec, y: &[i64]) -> (i64, i64) {
    // when the symbol has a zero/pole just above θ, the pair sums decay only
    // at rate (max speed)/1 per site; otherwise the decay is superexponential
    let limited = spec
        .phi
        .zero_radii()
        .into_iter()
        .chain(spec.phi.pole_radii())
        .any(|s| s > spec.theta);
    let pad = if limited {
        let rate = (spec.max_speed()).min(0.92);
        ((1e-13f64).ln() / rate.ln()).ceil().max(50.0) as i64
    } else {
        45
    };
    (y[y.len() - 1] - pad, y[0] + pad + spec.n() as i64)
}

#[test]
fn biorthogonality_across_all_symbol_kinds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for kind in 0..6 {
        for n in [2usize, 4] {
            let spec = random_spec(kind, n.max(2), &mut rng);
            let y = admissible_initial(&spec, &mut rng);
            let t = if spec.phi.continuous_time() { 1.3 } else { 2.0 };
            let eng = Engine::new(&spec, t).unwrap();
            let win = window_for(&spec, &y);
            let pair = biorth_pair(&eng, n, &y, win).unwrap();
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = pair.psis[a]
                        .iter()
                        .zip(pair.phis[b].iter())
                        .map(|(p, q)| p * q)
                        .sum();
                    let want = (a == b) as u8 as f64;
                    assert!(
                        (dot - want).abs() < 1e-8,
                        "kind {kind} n {n} pair ({a},{b}): {dot} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn dual_family_spans_speed_exponentials() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for kind in [0usize, 1, 3] {
        let n = 3;
        let spec = random_spec(kind, n, &mut rng);
        let y = admissible_initial(&spec, &mut rng);
        let t = if spec.phi.continuous_time() { 0.7 } else { 3.0 };
        let eng = Engine::new(&spec, t).unwrap();
        // narrow window keeps the exponential basis well conditioned
        let win = (y[n - 1] - 12, y[0] + 12);
        let pair = biorth_pair(&eng, n, &y, win).unwrap();
        // distinct speeds with multiplicities
        let mut dedup: Vec<(f64, usize)> = Vec::new();
        for v in &spec.speeds[..n] {
            match dedup.iter_mut().find(|(u, _)| (*u - v).abs() < 1e-12) {
                Some((_, m)) => *m += 1,
                None => dedup.push((*v, 1)),
            }
        }
        let cols: Vec<(f64, usize)> = dedup
            .iter()
            .flat_map(|(u, m)| (0..*m).map(move |l| (*u, l)))
            .collect();
        let width = (win.1 - win.0 + 1) as usize;
        let basis = Mat::from_fn(width, cols.len(), |i, c| {
            let x = win.0 + i as i64;
            let (u, l) = cols[c];
            let mut fall = 1.0f64;
            for q in 0..l {
                fall *= (x - q as i64) as f64;
            }
            fall * (u / spec.theta).powi(x as i32)
        });
        for j in 0..n {
            let (_, rel) = lstsq(&basis, &pair.phis[j]);
            assert!(rel < 1e-8, "kind {kind} phi_{j} span residual {rel}");
        }
    }
}

#[test]
fn boundary_value_system_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for kind in [1usize, 2] {
        let n = 4;
        let spec = random_spec(kind, n, &mut rng);
        let y = admissible_initial(&spec, &mut rng);
        let eng = Engine::new(&spec, 2.0).unwrap();
        // keep the exponential growth of the functions moderate so the
        // 1e-9 entrywise comparison is not dominated by scale
        let zwin = (y[n - 1] - 25, y[0] + 15);
        for k in 0..n - 1 {
            // terminal condition: pure exponential anchored at y_{n-k}
            let hk = h_fn(&eng, n, k, k, &y, zwin).unwrap();
            let v = spec.speed(n - k);
            for (i, got) in hk.iter().enumerate() {
                let z = zwin.0 + i as i64;
                let want = (spec.theta / v).powi((y[n - k - 1] - z) as i32);
                assert!(
                    (got - want).abs() < 1e-9 * (1.0 + want.abs()),
                    "kind {kind} k {k} z {z}: {got} vs {want}"
                );
            }
            for l in 0..k {
                // boundary zero on the curve
                let hl = h_fn(&eng, n, k, l, &y, (y[n - l - 1], y[n - l - 1])).unwrap();
                assert!(hl[0].abs() < 1e-9, "kind {kind} k {k} l {l}: {}", hl[0]);
                // one inverse step up the time ladder; the summand decays
                // at rate max speed per site
                let vmax = spec.max_speed();
                let pad = ((1e-12f64).ln() / vmax.ln()).ceil().max(40.0) as i64;
                let wide = (zwin.0 - pad, zwin.1 + pad);
                let h_now = h_fn(&eng, n, k, l, &y, wide).unwrap();
                let h_next = h_fn(&eng, n, k, l + 1, &y, zwin).unwrap();
                let qinv = eng
                    .q_step_inv(n - l)
                    .window_matrix(wide, zwin)
                    .unwrap();
                for (jz, want) in h_next.iter().enumerate() {
                    let mut acc = 0.0;
                    let mut amplitude = 0.0;
                    for (ix, hv) in h_now.iter().enumerate() {
                        acc += hv * qinv.get(ix, jz);
                        amplitude += (hv * qinv.get(ix, jz)).abs();
                    }
                    // 1e-9 on the identity itself plus the unavoidable
                    // cancellation amplification of the summed terms
                    let tol = 1e-9 * (1.0 + want.abs()) + 1e-11 * amplitude;
                    assert!(
                        (acc - want).abs() < tol,
                        "kind {kind} k {k} l {l} z-idx {jz}: {acc} vs {want}"
                    );
                }
            }
        }
    }
}
