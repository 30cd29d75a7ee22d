//! Ground-truth generators: exact enumeration over the full state
//! distribution for small discrete systems, and Monte Carlo for every
//! simulable dynamics (right-Bernoulli caterpillars of arbitrary lengths,
//! continuous-time exclusion, push/block dynamics).

use crate::model::{ModelSpec, ObservationRequest, SymbolFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("state space too large for exact enumeration (N <= 4, t <= 6)")]
    TooLarge,
    #[error("model kind `{0}` has no simulator; verification is kernel-only")]
    NotSimulable(String),
    #[error("need a positive number of samples")]
    NoSamples,
    #[error("invalid request: {0}")]
    BadRequest(String),
}

/// Configuration of caterpillars: `sections[i][j]` is the position of section
/// `j` of caterpillar `i` (section 0 is the head, successive sections differ
/// by 0 or 1 and caterpillars do not overlap).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaterpillarState {
    pub sections: Vec<Vec<i64>>,
}

impl CaterpillarState {
    /// All sections of caterpillar `k` collapsed at `y_k`.
    pub fn packed(y: &[i64], lengths: &[u32]) -> Self {
        let sections = y
            .iter()
            .zip(lengths.iter())
            .map(|(pos, len)| vec![*pos; *len as usize])
            .collect();
        CaterpillarState { sections }
    }

    pub fn heads(&self) -> Vec<i64> {
        self.sections.iter().map(|s| s[0]).collect()
    }

    pub fn is_valid(&self) -> bool {
        for s in &self.sections {
            for j in 1..s.len() {
                let d = s[j - 1] - s[j];
                if d != 0 && d != 1 {
                    return false;
                }
            }
        }
        for i in 1..self.sections.len() {
            let tail_prev = *self.sections[i - 1].last().unwrap();
            if self.sections[i][0] >= tail_prev {
                return false;
            }
        }
        true
    }
}

/// One parallel-coin update of the caterpillar dynamics, right to left: each
/// head advances with its own probability unless the destination is occupied
/// by the already-updated caterpillar to its right; bodies shift one section.
pub fn step_bernoulli_caterpillars<R: Rng>(
    state: &mut CaterpillarState,
    jump_probs: &[f64],
    rng: &mut R,
) {
    let n = state.sections.len();
    for i in 0..n {
        let old = state.sections[i].clone();
        let dest = old[0] + 1;
        let blocked = i > 0 && state.sections[i - 1].contains(&dest);
        let head = if !blocked && rng.gen_bool(jump_probs[i]) {
            dest
        } else {
            old[0]
        };
        let len = old.len();
        let mut fresh = Vec::with_capacity(len);
        fresh.push(head);
        fresh.extend_from_slice(&old[..len - 1]);
        state.sections[i] = fresh;
    }
    debug_assert!(state.is_valid());
}

/// Event-driven continuous-time exclusion dynamics with per-particle rates,
/// run to the horizon. Blocked attempts are discarded.
pub fn run_continuous_tasep<R: Rng>(pos: &mut [i64], rates: &[f64], horizon: f64, rng: &mut R) {
    let total: f64 = rates.iter().sum();
    let mut clock = 0.0f64;
    loop {
        clock += -rng.gen::<f64>().ln() / total;
        if clock >= horizon {
            return;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut i = 0;
        while i + 1 < rates.len() && pick >= rates[i] {
            pick -= rates[i];
            i += 1;
        }
        let free = i == 0 || pos[i] + 1 < pos[i - 1];
        if free {
            pos[i] += 1;
        }
    }
}

/// Push/block dynamics: right jumps at rate `r·v_i` blocked by the right
/// neighbor, left jumps at rate `l/v_i` pushing any chain of neighbors.
pub fn run_pushasep<R: Rng>(
    pos: &mut [i64],
    speeds: &[f64],
    r: f64,
    l: f64,
    horizon: f64,
    rng: &mut R,
) {
    let n = pos.len();
    let right: Vec<f64> = speeds.iter().map(|v| r * v).collect();
    let left: Vec<f64> = speeds.iter().map(|v| l / v).collect();
    let total: f64 = right.iter().sum::<f64>() + left.iter().sum::<f64>();
    if total == 0.0 {
        return;
    }
    let mut clock = 0.0f64;
    loop {
        clock += -rng.gen::<f64>().ln() / total;
        if clock >= horizon {
            return;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut i = 0;
        let mut go_right = true;
        loop {
            if pick < right[i] {
                break;
            }
            pick -= right[i];
            if pick < left[i] {
                go_right = false;
                break;
            }
            pick -= left[i];
            i += 1;
            if i == n {
                // guard against roundoff falling off the end
                i = n - 1;
                go_right = false;
                break;
            }
        }
        if go_right {
            if i == 0 || pos[i] + 1 < pos[i - 1] {
                pos[i] += 1;
            }
        } else {
            pos[i] -= 1;
            let mut j = i + 1;
            while j < n && pos[j] == pos[j - 1] {
                pos[j] -= 1;
                j += 1;
            }
        }
    }
}

fn exceedance(heads: &[i64], req: &ObservationRequest) -> bool {
    req.indices
        .iter()
        .zip(req.thresholds.iter())
        .all(|(i, a)| (heads[i - 1] as f64) > *a)
}

/// Exact joint exceedance probability for right-Bernoulli caterpillars by
/// propagating the full distribution over configurations.
pub fn exact_enumerate(
    spec: &ModelSpec,
    y: &[i64],
    req: &ObservationRequest,
) -> Result<f64, SimulateError> {
    if !matches!(spec.phi, SymbolFunction::RightBernoulli { .. }) {
        return Err(SimulateError::NotSimulable(spec.phi.name().into()));
    }
    let n = spec.n();
    let t = req.t;
    if t.fract() != 0.0 || t < 0.0 {
        return Err(SimulateError::BadRequest("need integer time".into()));
    }
    let steps = t as u32;
    if n > 4 || steps > 6 {
        return Err(SimulateError::TooLarge);
    }
    let probs: Vec<f64> = spec.speeds.iter().map(|v| v / (1.0 + v)).collect();
    let start = CaterpillarState::packed(y, &spec.lengths);
    let mut dist: HashMap<CaterpillarState, f64> = HashMap::new();
    dist.insert(start, 1.0);
    for _ in 0..steps {
        let mut next: HashMap<CaterpillarState, f64> = HashMap::new();
        for (state, weight) in dist.into_iter() {
            // expand the 2^n coin outcomes, skipping coins of blocked heads
            let mut stack = vec![(state, weight, 0usize)];
            while let Some((mut cur, w, i)) = stack.pop() {
                if i == n {
                    debug_assert!(cur.is_valid());
                    *next.entry(cur).or_insert(0.0) += w;
                    continue;
                }
                let old = cur.sections[i].clone();
                let dest = old[0] + 1;
                let blocked = i > 0 && cur.sections[i - 1].contains(&dest);
                let shift =
                    |head: i64, old: &[i64]| -> Vec<i64> {
                        let mut s = Vec::with_capacity(old.len());
                        s.push(head);
                        s.extend_from_slice(&old[..old.len() - 1]);
                        s
                    };
                if blocked {
                    cur.sections[i] = shift(old[0], &old);
                    stack.push((cur, w, i + 1));
                } else {
                    let mut moved = cur.clone();
                    moved.sections[i] = shift(dest, &old);
                    stack.push((moved, w * probs[i], i + 1));
                    cur.sections[i] = shift(old[0], &old);
                    stack.push((cur, w * (1.0 - probs[i]), i + 1));
                }
            }
        }
        dist = next;
    }
    let mut p = 0.0;
    let mut total = 0.0;
    for (state, w) in dist.iter() {
        total += w;
        if exceedance(&state.heads(), req) {
            p += w;
        }
    }
    debug_assert!((total - 1.0).abs() < 1e-12);
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct EmpiricalResult {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

fn simulate_heads_once(
    spec: &ModelSpec,
    y: &[i64],
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<i64>, SimulateError> {
    match &spec.phi {
        SymbolFunction::RightBernoulli { .. } => {
            let probs: Vec<f64> = spec.speeds.iter().map(|v| v / (1.0 + v)).collect();
            let mut state = CaterpillarState::packed(y, &spec.lengths);
            for _ in 0..(t as u64) {
                step_bernoulli_caterpillars(&mut state, &probs, rng);
            }
            Ok(state.heads())
        }
        SymbolFunction::ContinuousTasep => {
            let mut pos = y.to_vec();
            run_continuous_tasep(&mut pos, &spec.speeds, t, rng);
            Ok(pos)
    }
        SymbolFunction::PushAsep { r, l } => {
            let mut pos = y.to_vec();
            run_pushasep(&mut pos, &spec.speeds, *r, *l, t, rng);
            Ok(pos)
        }
        other => Err(SimulateError::NotSimulable(other.name().into())),
    }
}

pub fn simulable(spec: &ModelSpec) -> bool {
    matches!(
        spec.phi,
        SymbolFunction::RightBernoulli { .. }
            | SymbolFunction::ContinuousTasep
            | SymbolFunction::PushAsep { .. }
    )
}

/// Monte Carlo estimate of the joint exceedance probability with independent
/// replicate streams keyed by `(seed, replicate)`; identical seeds give
/// identical results regardless of thread count.
pub fn empirical_cdf(
    spec: &ModelSpec,
    y: &[i64],
    req: &ObservationRequest,
    samples: u64,
    seed: u64,
) -> Result<EmpiricalResult, SimulateError> {
    if samples == 0 {
        return Err(SimulateError::NoSamples);
    }
    if !simulable(spec) {
        return Err(SimulateError::NotSimulable(spec.phi.name().into()));
    }
    if !spec.phi.continuous_time() && req.t.fract() != 0.0 {
        return Err(SimulateError::BadRequest("need integer time".into()));
    }
    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep);
            let heads = simulate_heads_once(spec, y, req.t, &mut rng).expect("checked simulable");
            exceedance(&heads, req) as u64
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(EmpiricalResult {
        estimate: p,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        seed,
    })
}

/// Monte Carlo estimate of the exceedance probability for the coupled
/// delayed-start sequential dynamics: particle `k` starts at `y_k` at time
/// `T_k = -Σ_{j<k}(L_j - 1)` and the head of caterpillar `k` at time `t` is
/// read off at lagged time `t + T_k`.
pub fn empirical_cdf_delayed_coupling(
    spec: &ModelSpec,
    y: &[i64],
    req: &ObservationRequest,
    samples: u64,
    seed: u64,
) -> Result<EmpiricalResult, SimulateError> {
    if samples == 0 {
        return Err(SimulateError::NoSamples);
    }
    if !matches!(spec.phi, SymbolFunction::RightBernoulli { .. }) {
        return Err(SimulateError::NotSimulable(spec.phi.name().into()));
    }
    let n = spec.n();
    let probs: Vec<f64> = spec.speeds.iter().map(|v| v / (1.0 + v)).collect();
    let t = req.t as i64;
    let start_times: Vec<i64> = (0..n)
        .map(|k| -spec.lengths[..k].iter().map(|l| *l as i64 - 1).sum::<i64>())
        .collect();
    let t_min = *start_times.iter().min().unwrap();
    let read_times: Vec<i64> = start_times.iter().map(|tk| t + tk).collect();

    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep.wrapping_add(0x9e37_79b9));
            let mut pos = y.to_vec();
            let mut heads = vec![i64::MIN; n];
            for (k, rt) in read_times.iter().enumerate() {
                if *rt == t_min {
                    heads[k] = pos[k];
                }
            }
            for s in t_min..(t + start_times[0]) {
                // sequential right-to-left update of the active particles
                for i in 0..n {
                    if s < start_times[i] {
                        continue;
                    }
                    let free = i == 0 || pos[i] + 1 < pos[i - 1];
                    if free && rng.gen_bool(probs[i]) {
                        pos[i] += 1;
                    }
                }
                for (k, rt) in read_times.iter().enumerate() {
                    if *rt == s + 1 {
                        heads[k] = pos[k];
                    }
                }
            }
            debug_assert!(heads.iter().all(|h| *h != i64::MIN));
            exceedance(&heads, req) as u64
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(EmpiricalResult {
        estimate: p,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_spec;

    fn bernoulli(p: f64, lengths: Vec<u32>) -> ModelSpec {
        let v = p / (1.0 - p);
        let n = lengths.len();
        validate_spec(&ModelSpec {
            phi: SymbolFunction::RightBernoulli { p: Some(p) },
            speeds: vec![v; n],
            lengths,
            theta: v / 2.0,
            r_inner: v / 4.0,
            r_outer: if v < 1.0 { (1.0 + v) / 2.0 } else { 2.0 * v },
        })
        .unwrap()
    }

    fn req(t: f64, indices: Vec<usize>, thresholds: Vec<f64>) -> ObservationRequest {
        ObservationRequest {
            t,
            indices,
            thresholds,
        }
    }

    #[test]
    fn two_particle_sequential_quarter() {
        let spec = bernoulli(0.5, vec![1, 1]);
        let p = exact_enumerate(&spec, &[0, -1], &req(1.0, vec![1, 2], vec![0.0, -1.0])).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn parallel_blocking_uses_old_position() {
        // with unit gap the left particle is blocked by the old position, so
        // only the right particle's coin matters
        let spec = bernoulli(0.5, vec![2, 2]);
        let p = exact_enumerate(&spec, &[0, -1], &req(1.0, vec![1], vec![0.0])).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        let p2 = exact_enumerate(&spec, &[0, -1], &req(1.0, vec![2], vec![-1.0])).unwrap();
        assert!(p2.abs() < 1e-15, "left particle must be blocked, got {p2}");
    }

    #[test]
    fn zero_time_event_is_deterministic() {
        let spec = bernoulli(0.5, vec![1, 1]);
        let p = exact_enumerate(&spec, &[0, -1], &req(0.0, vec![1], vec![-1.0])).unwrap();
        assert_eq!(p, 1.0);
        let p = exact_enumerate(&spec, &[0, -1], &req(0.0, vec![1], vec![0.0])).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn enumeration_partitions_threshold_events() {
        let spec = bernoulli(0.25, vec![2, 1]);
        let y = [0i64, -2];
        // P(X=a) = P(X>a-1) - P(X>a) over the reachable range sums to one
        let mut total = 0.0;
        for a in -1..=5 {
            let hi = exact_enumerate(&spec, &y, &req(3.0, vec![1], vec![a as f64])).unwrap();
            let lo = exact_enumerate(&spec, &y, &req(3.0, vec![1], vec![a as f64 - 1.0])).unwrap();
            total += lo - hi;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_rate_is_binomial() {
        let spec = bernoulli(0.5, vec![1]);
        let p = exact_enumerate(&spec, &[0], &req(3.0, vec![1], vec![1.0])).unwrap();
        // P(Binomial(3, 1/2) >= 2) = 1/2
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sequential_caterpillars_match_plain_sequential() {
        // all lengths one: the caterpillar stepper is plain sequential update
        let spec = bernoulli(0.5, vec![1, 1, 1]);
        let y = [0i64, -1, -2];
        let r = req(2.0, vec![1, 3], vec![0.0, -2.0]);
        let exact = exact_enumerate(&spec, &y, &r).unwrap();
        let mc = empirical_cdf(&spec, &y, &r, 200_000, 7).unwrap();
        assert!(
            (mc.estimate - exact).abs() <= 4.0 * mc.stderr.max(1e-4),
            "exact {exact} vs mc {}",
            mc.estimate
        );
    }

    #[test]
    fn seed_reproducibility() {
        let spec = bernoulli(0.5, vec![2, 1]);
        let y = [0i64, -2];
        let r = req(2.0, vec![1], vec![0.0]);
        let a = empirical_cdf(&spec, &y, &r, 20_000, 11).unwrap();
        let b = empirical_cdf(&spec, &y, &r, 20_000, 11).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert!(empirical_cdf(&spec, &y, &r, 0, 1).is_err());
    }

    #[test]
    fn poisson_law_for_single_continuous_particle() {
        let spec = validate_spec(&ModelSpec {
            phi: SymbolFunction::ContinuousTasep,
            speeds: vec![1.0],
            lengths: vec![1],
            theta: 0.5,
            r_inner: 0.25,
            r_outer: 2.0,
        })
        .unwrap();
        let t = 1.5;
        let samples = 200_000u64;
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for rep in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            rng.set_stream(rep);
            let mut pos = vec![0i64];
            run_continuous_tasep(&mut pos, &spec.speeds, t, &mut rng);
            mean += pos[0] as f64;
            mean_sq += (pos[0] * pos[0]) as f64;
        }
        mean /= samples as f64;
        mean_sq /= samples as f64;
        let var = mean_sq - mean * mean;
        let se_mean = (t / samples as f64).sqrt();
        assert!((mean - t).abs() < 4.0 * se_mean, "mean {mean} vs {t}");
        assert!((var - t).abs() < 0.06, "var {var} vs {t}");
    }

    #[test]
    fn pushasep_pure_left_pushes_chains() {
        // r=0: a left jump of the right particle pushes its neighbor
        let mut pos = vec![0i64, -1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        run_pushasep(&mut pos, &[1.0, 1.0], 0.0, 5.0, 4.0, &mut rng);
        assert!(pos[0] > pos[1]);
        assert!(pos[0] < 0);
    }

    #[test]
    fn pushasep_drift_matches_rate_difference() {
        let (r, l, v) = (1.0, 1.0, 2.0);
        let t = 2.0;
        let samples = 100_000u64;
        let mut mean = 0.0;
        for rep in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            rng.set_stream(rep);
            let mut pos = vec![0i64];
            run_pushasep(&mut pos, &[v], r, l, t, &mut rng);
            mean += pos[0] as f64;
        }
        mean /= samples as f64;
        let drift = (r * v - l / v) * t;
        let sd = ((r * v + l / v) * t / samples as f64).sqrt();
        assert!((mean - drift).abs() < 5.0 * sd, "mean {mean} vs {drift}");
    }

    #[test]
    fn caterpillars_couple_to_delayed_sequential() {
        let spec = bernoulli(0.4, vec![2, 2]);
        let y = [0i64, -2];
        let r = req(3.0, vec![1, 2], vec![1.0, -2.0]);
        let direct = empirical_cdf(&spec, &y, &r, 150_000, 21).unwrap();
        let coupled = empirical_cdf_delayed_coupling(&spec, &y, &r, 150_000, 22).unwrap();
        let tol = 4.0 * (direct.stderr + coupled.stderr).max(1e-4);
        assert!(
            (direct.estimate - coupled.estimate).abs() <= tol,
            "direct {} vs coupled {}",
            direct.estimate,
            coupled.estimate
        );
    }
}
