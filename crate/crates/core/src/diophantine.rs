//! Diophantine frequency sets and Monte Carlo estimates of their complements.
//!
//! `|k|` is the l1 norm throughout. `Omega0(gamma, tau)` holds `omega` with
//! `|k . omega| >= gamma |k|^{-tau}` for `0 < |k| <= K`; `Omega1` holds
//! `|omega . k + nu k0| >= gamma / (1 + |k|^tau)` for `0 < |k| + |k0|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub fn l1_norm(k: &[i64]) -> i64 {
    k.iter().map(|c| c.abs()).sum()
}

/// Default truncation of the mode search.
pub fn default_k_max(n: usize) -> i64 {
    if n <= 2 {
        200
    } else {
        50
    }
}

/// Checks that every component lies in `[1, 2]`.
pub fn validate_frequencies(omega: &[f64]) -> Result<()> {
    if omega.is_empty() || omega.iter().any(|w| !(1.0..=2.0).contains(w)) {
        return Err(Error::Contract(format!("frequencies {omega:?} must lie in [1, 2]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Mode (for `Omega1`, the last entry is `k0`) attaining the smallest scaled value.
    pub worst_mode: Vec<i64>,
    /// The unscaled small denominator at `worst_mode`.
    pub worst_value: f64,
    /// Smallest scaled denominator; membership iff it is at least `gamma`.
    pub scaled_min: f64,
}

fn scan(omega: &[f64], k_max: i64, f: &mut impl FnMut(&[i64], f64)) {
    if omega.len() == 1 {
        for k1 in 1..=k_max {
            f(&[k1], k1 as f64 * omega[0]);
        }
        return;
    }
    scan_near_resonances(omega, k_max, f);
}

/// Calls `f(k, k.omega)` for every `k` with `0 < |k| <= k_max` whose first
/// component is within one of the real minimiser of `|k . omega|` given the
/// others. Since `omega_1 >= 1`, any other choice of `k_1` has `|k . omega| >= 1`.
fn scan_near_resonances(omega: &[f64], k_max: i64, f: &mut impl FnMut(&[i64], f64)) {
    let n = omega.len();
    let mut rest = vec![-k_max; n - 1];
    let mut k = vec![0i64; n];
    loop {
        let used: i64 = l1_norm(&rest);
        if used <= k_max {
            let partial: f64 = rest.iter().zip(&omega[1..]).map(|(&c, &w)| c as f64 * w).sum();
            let centre = (-partial / omega[0]).round() as i64;
            for k1 in [centre - 1, centre, centre + 1] {
                if k1.abs() + used > k_max || (k1 == 0 && used == 0) {
                    continue;
                }
                k[0] = k1;
                k[1..].copy_from_slice(&rest);
                f(&k, k1 as f64 * omega[0] + partial);
            }
        }
        let mut i = 0;
        loop {
            if i == n - 1 {
                return;
            }
            if rest[i] < k_max {
                rest[i] += 1;
                break;
            }
            rest[i] = -k_max;
            i += 1;
        }
    }
}

/// Membership in `Omega0(gamma, tau)` truncated at `|k| <= k_max`.
///
/// The scan keeps only near-resonant modes, which is exact for `gamma <= 1`.
pub fn member_omega0(omega: &[f64], gamma: f64, tau: f64, k_max: i64) -> Result<Membership> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract(format!("gamma = {gamma} must lie in (0, 1]")));
    }
    if !(tau > omega.len() as f64 - 1.0) || k_max < 1 {
        return Err(Error::Contract(format!("need tau > n - 1 and K >= 1, got tau = {tau}, K = {k_max}")));
    }
    let mut best = (Vec::new(), f64::INFINITY, f64::INFINITY);
    scan(omega, k_max, &mut |k, s| {
        let scaled = s.abs() * (l1_norm(k) as f64).powf(tau);
        if scaled < best.2 {
            best = (k.to_vec(), s.abs(), scaled);
        }
    });
    Ok(Membership { member: best.2 >= gamma, worst_mode: best.0, worst_value: best.1, scaled_min: best.2 })
}

/// Membership in `Omega1(gamma, tau)` with orbital frequency `nu`.
pub fn member_omega1(
    omega: &[f64],
    nu: f64,
    gamma: f64,
    tau: f64,
    k_max: i64,
    k0_max: i64,
) -> Result<Membership> {
    if !(gamma > 0.0 && nu > 0.0) || k_max < 1 || k0_max < 1 {
        return Err(Error::Contract("need gamma > 0, nu > 0, K >= 1, K0 >= 1".into()));
    }
    let mut best = (Vec::new(), f64::INFINITY, f64::INFINITY);
    let mut consider = |k: &[i64], s: f64, k0: i64| {
        if k0.abs() > k0_max || (k0 == 0 && k.iter().all(|&c| c == 0)) {
            return;
        }
        let value = (s + nu * k0 as f64).abs();
        let scaled = value * (1.0 + (l1_norm(k) as f64).powf(tau));
        if scaled < best.2 {
            let mut mode = k.to_vec();
            mode.push(k0);
            best = (mode, value, scaled);
        }
    };
    // k = 0: the condition reads nu |k0| >= gamma
    consider(&vec![0; omega.len()], 0.0, 1);
    // all k with |k| <= k_max; for each, k0 next to the real minimiser
    let n = omega.len();
    let mut k = vec![-k_max; n];
    loop {
        if l1_norm(&k) <= k_max && k.iter().any(|&c| c != 0) {
            let s: f64 = k.iter().zip(omega).map(|(&c, &w)| c as f64 * w).sum();
            let c0 = (-s / nu).round() as i64;
            for k0 in [c0 - 1, c0, c0 + 1] {
                consider(&k, s, k0);
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return Ok(Membership {
                    member: best.2 >= gamma,
                    worst_mode: best.0,
                    worst_value: best.1,
                    scaled_min: best.2,
                });
            }
            if k[i] < k_max {
                k[i] += 1;
                break;
            }
            k[i] = -k_max;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Omega0,
    Omega1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub gamma: f64,
    pub samples: usize,
    pub excluded: usize,
    pub fraction: f64,
    /// Binomial standard error of `fraction`.
    pub stderr: f64,
}

/// Uniform samples of `[1, 2]^n` from a seeded generator.
pub fn sample_frequencies(n: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| (0..n).map(|_| rng.random_range(1.0..2.0)).collect())
        .collect()
}

/// Scaled smallest denominator of each sample; the set for `gamma` excludes
/// exactly the samples whose value is below `gamma`.
pub fn scaled_minima(points: &[Vec<f64>], tau: f64, kind: SetKind, k_max: i64) -> Result<Vec<f64>> {
    par::map_slice(points, |w| match kind {
        SetKind::Omega0 => member_omega0(w, 1.0, tau, k_max).map(|m| m.scaled_min),
        SetKind::Omega1 => member_omega1(w, 1.0, 1.0, tau, k_max, k_max).map(|m| m.scaled_min),
    })
    .into_iter()
    .collect()
}

fn estimate(gamma: f64, minima: &[f64]) -> MeasureEstimate {
    let excluded = minima.iter().filter(|&&m| m < gamma).count();
    let n = minima.len();
    let fraction = excluded as f64 / n as f64;
    MeasureEstimate {
        gamma,
        samples: n,
        excluded,
        fraction,
        stderr: (fraction * (1.0 - fraction) / n as f64).sqrt(),
    }
}

/// Monte Carlo fraction of `[1, 2]^n` outside the Diophantine set.
pub fn excluded_measure(
    n: usize,
    gamma: f64,
    tau: f64,
    kind: SetKind,
    samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    Ok(excluded_measure_sweep(n, &[gamma], tau, kind, samples, seed)?.remove(0))
}

/// [`excluded_measure`] for several `gamma` on one shared sample set.
pub fn excluded_measure_sweep(
    n: usize,
    gammas: &[f64],
    tau: f64,
    kind: SetKind,
    samples: usize,
    seed: u64,
) -> Result<Vec<MeasureEstimate>> {
    if samples < 10_000 {
        return Err(Error::Contract(format!("{samples} samples; at least 10^4 required")));
    }
    if n == 0 || gammas.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
        return Err(Error::Contract("need n >= 1 and gamma in [0, 1]".into()));
    }
    let points = sample_frequencies(n, samples, seed);
    let minima = scaled_minima(&points, tau, kind, default_k_max(n))?;
    Ok(gammas.iter().map(|&g| estimate(g, &minima)).collect())
}
